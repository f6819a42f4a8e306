"""Shared domain types and the PFT tensor file format.

Everything downstream (crop merging, boundary refinement, instance
delineation, metrics) passes data around as :class:`DenseMap`,
:class:`PanopticMap`, and :class:`LabelSpec` values. PFT files are the
bit-exact interchange format at every component boundary.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

PFT_MAGIC = b"PFT1"

# dtype code -> numpy dtype (little-endian on disk)
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<u2"), 2: np.dtype("<u1")}
_CODE_FOR_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.uint16): 1, np.dtype(np.uint8): 2}

# float64 is allowed in memory (multi-scale merging accumulates in double
# precision) but has no on-disk code; cast before writing.
_MEMORY_DTYPES = (np.float32, np.float64, np.uint16, np.uint8)

INSTANCE_BASE = 1000  # pan_id = class_id * INSTANCE_BASE + instance_index
MAX_INSTANCES = INSTANCE_BASE - 1


class TensorFormatError(Exception):
    """Base class for PFT load/store failures."""


class BadMagicError(TensorFormatError):
    pass


class UnsupportedDtypeError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class ValidationError(ValueError):
    """Raised when a domain object violates its invariants."""


@dataclass(frozen=True)
class ClassDef:
    id: int
    name: str
    is_thing: bool


@dataclass(frozen=True)
class LabelSpec:
    """Class catalog: ids, names, thing/stuff flags, and the ignore id.

    Class ids must be unique and contiguous from 0; ``ignore_id`` is a
    reserved value outside the class id range.
    """

    classes: tuple[ClassDef, ...]
    ignore_id: int = 255

    def __post_init__(self):
        if not self.classes:
            raise ValidationError("LabelSpec needs at least one class")
        ids = [c.id for c in self.classes]
        if sorted(ids) != list(range(len(ids))):
            raise ValidationError(f"class ids must be contiguous from 0, got {ids}")
        if self.ignore_id in ids:
            raise ValidationError(f"ignore_id {self.ignore_id} collides with a class id")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def thing_ids(self) -> tuple[int, ...]:
        return tuple(c.id for c in self.classes if c.is_thing)

    @property
    def stuff_ids(self) -> tuple[int, ...]:
        return tuple(c.id for c in self.classes if not c.is_thing)

    def is_thing(self, class_id: int) -> bool:
        return self.classes[class_id].is_thing

    def name_of(self, class_id: int) -> str:
        return self.classes[class_id].name

    def thing_mask(self) -> np.ndarray:
        """Boolean lookup table indexed by class id."""
        mask = np.zeros(self.n_classes, dtype=bool)
        mask[list(self.thing_ids)] = True
        return mask

    @classmethod
    def from_json(cls, path) -> "LabelSpec":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        classes = tuple(
            ClassDef(id=int(c["id"]), name=str(c["name"]), is_thing=bool(c["thing"]))
            for c in doc["classes"]
        )
        classes = tuple(sorted(classes, key=lambda c: c.id))
        return cls(classes=classes, ignore_id=int(doc.get("ignore_id", 255)))

    def to_json(self, path) -> None:
        doc = {
            "classes": [
                {"id": c.id, "name": c.name, "thing": c.is_thing} for c in self.classes
            ],
            "ignore_id": self.ignore_id,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")


@dataclass(frozen=True)
class DenseMap:
    """Row-major (h, w, c) array container used for all dense per-pixel data.

    2-D inputs are normalized to a single channel. Supported dtypes are
    float32/uint16/uint8 (plus float64 for in-memory accumulation results).
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValidationError(f"DenseMap must be 2-D or 3-D, got ndim={arr.ndim}")
        if arr.dtype not in [np.dtype(d) for d in _MEMORY_DTYPES]:
            raise ValidationError(f"unsupported DenseMap dtype {arr.dtype}")
        if min(arr.shape) < 1:
            raise ValidationError(f"zero-sized dimension in shape {arr.shape}")
        object.__setattr__(self, "data", np.ascontiguousarray(arr))

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def c(self) -> int:
        return self.data.shape[2]

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def plane(self) -> np.ndarray:
        """The (h, w) view of a single-channel map."""
        if self.c != 1:
            raise ValidationError(f"expected single channel, got c={self.c}")
        return self.data[:, :, 0]

    def validate_probabilities(self, atol: float = 1e-4) -> None:
        """Check the per-pixel distribution invariant of probability maps."""
        arr = self.data
        if arr.dtype not in (np.float32, np.float64):
            raise ValidationError("probability maps must be float")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("probabilities outside [0, 1]")
        sums = arr.sum(axis=2, dtype=np.float64)
        err = np.abs(sums - 1.0).max()
        if err > atol:
            raise ValidationError(f"per-pixel channel sums deviate from 1 by {err:.2e}")

    def validate_soft_boundary(self) -> None:
        if self.c != 1:
            raise ValidationError("soft boundary maps are single channel")
        arr = self.data
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("soft boundary values outside [0, 1]")


def encode_pan_id(class_id, instance_index):
    return class_id * INSTANCE_BASE + instance_index


def decode_pan_id(pan_id):
    return pan_id // INSTANCE_BASE, pan_id % INSTANCE_BASE


@dataclass(frozen=True)
class PanopticMap:
    """Per-pixel ``class_id * 1000 + instance_index`` labels (uint32).

    Stuff and ignore pixels carry instance index 0; thing instances are
    numbered contiguously from 1 within each class of one image.
    """

    pan: np.ndarray
    ignore_id: int = 255

    def __post_init__(self):
        arr = np.asarray(self.pan)
        if arr.ndim != 2:
            raise ValidationError(f"PanopticMap must be 2-D, got ndim={arr.ndim}")
        object.__setattr__(self, "pan", np.ascontiguousarray(arr, dtype=np.uint32))

    @property
    def h(self) -> int:
        return self.pan.shape[0]

    @property
    def w(self) -> int:
        return self.pan.shape[1]

    @property
    def ignore_pan_id(self) -> int:
        return encode_pan_id(self.ignore_id, 0)

    def class_map(self) -> np.ndarray:
        return (self.pan // INSTANCE_BASE).astype(np.uint16)

    def instance_map(self) -> np.ndarray:
        return (self.pan % INSTANCE_BASE).astype(np.uint16)

    def validate(self, labels: LabelSpec) -> None:
        cls = self.pan // INSTANCE_BASE
        inst = self.pan % INSTANCE_BASE
        valid = cls != labels.ignore_id
        bad = valid & (cls >= labels.n_classes)
        if bad.any():
            raise ValidationError(f"class id {int(cls[bad][0])} outside the label spec")
        if (inst[~valid] != 0).any():
            raise ValidationError("ignore pixels must carry instance index 0")
        thing = labels.thing_mask()
        stuff_inst = valid & (inst > 0) & ~thing[np.minimum(cls, labels.n_classes - 1)]
        if stuff_inst.any():
            raise ValidationError("instance index > 0 on a stuff pixel")
        for c in np.unique(cls[valid & (inst > 0)]):
            ids = np.unique(inst[(cls == c) & (inst > 0)])
            if ids[0] != 1 or ids[-1] != len(ids):
                raise ValidationError(
                    f"instance indices of class {int(c)} not contiguous from 1: {ids.tolist()}"
                )

    def to_dense(self) -> DenseMap:
        """Two-channel uint16 (class, instance) encoding for PFT export."""
        return DenseMap(np.stack([self.class_map(), self.instance_map()], axis=2))

    @classmethod
    def from_dense(cls, dm: DenseMap, ignore_id: int = 255) -> "PanopticMap":
        if dm.c != 2 or dm.dtype != np.uint16:
            raise ValidationError("panoptic PFT maps are 2-channel uint16")
        pan = dm.data[:, :, 0].astype(np.uint32) * INSTANCE_BASE + dm.data[:, :, 1]
        return cls(pan=pan, ignore_id=ignore_id)


@dataclass(frozen=True)
class FeatureVector:
    """A global image embedding paired with its image id."""

    values: np.ndarray
    image_id: str

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.values, dtype=np.float32))
        if arr.ndim != 1:
            raise ValidationError("feature vectors are 1-D")
        if not np.isfinite(arr).all():
            raise ValidationError(f"non-finite feature values for image {self.image_id!r}")
        object.__setattr__(self, "values", arr)


def read_tensor(path) -> DenseMap:
    """Load a PFT file.

    The header is ``PFT1`` + u8 dtype code + u8 ndim + ndim little-endian
    u32 dims, followed by the raw row-major payload.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PFT_MAGIC:
        raise BadMagicError(f"{path}: not a PFT file (magic {blob[:4]!r})")
    if len(blob) < 6:
        raise TruncatedPayloadError(f"{path}: header truncated")
    code, ndim = blob[4], blob[5]
    if code not in _DTYPE_CODES:
        raise UnsupportedDtypeError(f"{path}: unknown dtype code {code}")
    if ndim not in (2, 3):
        raise TensorFormatError(f"{path}: ndim must be 2 or 3, got {ndim}")
    header_end = 6 + 4 * ndim
    if len(blob) < header_end:
        raise TruncatedPayloadError(f"{path}: header truncated")
    dims = struct.unpack(f"<{ndim}I", blob[6:header_end])
    if min(dims) < 1:
        raise TensorFormatError(f"{path}: zero-sized dimension {dims}")
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims))
    payload = blob[header_end:]
    if len(payload) < count * dtype.itemsize:
        raise TruncatedPayloadError(
            f"{path}: payload holds {len(payload)} bytes, "
            f"expected {count * dtype.itemsize}"
        )
    arr = np.frombuffer(payload[: count * dtype.itemsize], dtype=dtype).reshape(dims)
    return DenseMap(arr.astype(dtype.newbyteorder("=")))


def write_tensor(dm: DenseMap, path) -> None:
    """Write a PFT file; ``read_tensor`` round-trips it bit-exactly."""
    dtype = np.dtype(dm.dtype)
    if dtype not in _CODE_FOR_DTYPE:
        raise UnsupportedDtypeError(
            f"dtype {dtype} has no PFT code (cast float64 results explicitly)"
        )
    code = _CODE_FOR_DTYPE[dtype]
    # Single-channel maps are stored 2-D; readers accept either form.
    dims = (dm.h, dm.w) if dm.c == 1 else (dm.h, dm.w, dm.c)
    header = PFT_MAGIC + struct.pack("<BB", code, len(dims)) + struct.pack(
        f"<{len(dims)}I", *dims
    )
    payload = np.ascontiguousarray(dm.data, dtype=dtype.newbyteorder("<")).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise TensorFormatError(f"cannot write {path}: {exc}") from exc


def argmax_semantics(probs: DenseMap, labels: LabelSpec | None = None) -> DenseMap:
    """Per-pixel most likely class; ties go to the lowest class id.

    ``np.argmax`` already returns the first maximal channel, which is the
    lowest class id under the catalog ordering.
    """
    if labels is not None and probs.c != labels.n_classes:
        raise ValidationError(
            f"probability map has {probs.c} channels, label spec has {labels.n_classes}"
        )
    out = np.argmax(probs.data, axis=2).astype(np.uint16)
    return DenseMap(out)
