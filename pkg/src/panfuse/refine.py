"""Segment-level fusion: connected components, majority voting, thing/stuff
filters, hole filling, and the full pipeline turning a probability map plus a
soft boundary map into a panoptic map.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels, ncut
from .boundary import (
    BoundaryConfig,
    denoise_boundary,
    stuff_thing_boundaries,
    threshold_boundary,
)
from .core import (
    INSTANCE_BASE,
    MAX_INSTANCES,
    DenseMap,
    LabelSpec,
    PanopticMap,
    ValidationError,
    argmax_semantics,
    encode_pan_id,
)
from .ncut import NCutConfig

REFERENCE_PIXELS = 1024 * 2048  # thresholds are stated at this resolution


class FuseError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


@dataclass(frozen=True)
class RefineConfig:
    min_thing_size: int = 200
    min_stuff_size: int = 2048
    connectivity: int = 4
    scale_min_sizes: bool = True  # rescale size thresholds by image area

    def __post_init__(self):
        if self.min_thing_size < 0 or self.min_stuff_size < 0:
            raise ValidationError("size thresholds must be >= 0")
        if self.connectivity not in (4, 8):
            raise ValidationError(f"connectivity must be 4 or 8, got {self.connectivity}")

    def scaled_for(self, h: int, w: int) -> "RefineConfig":
        if not self.scale_min_sizes:
            return self
        factor = (h * w) / REFERENCE_PIXELS
        return RefineConfig(
            min_thing_size=int(round(self.min_thing_size * factor)),
            min_stuff_size=int(round(self.min_stuff_size * factor)),
            connectivity=self.connectivity,
            scale_min_sizes=False,
        )


@dataclass(frozen=True)
class Segment:
    id: int
    area: int
    bbox: tuple[int, int, int, int]  # y0, x0, y1, x1 (exclusive)
    class_id: int


@dataclass(frozen=True)
class SegmentTable:
    labels: np.ndarray  # int32, 0 = unassigned
    segments: tuple[Segment, ...]

    def __len__(self) -> int:
        return len(self.segments)


def _build_table(comp: np.ndarray, n: int, class_map: np.ndarray | None) -> SegmentTable:
    if n == 0:
        return SegmentTable(labels=comp, segments=())
    areas = np.bincount(comp.ravel(), minlength=n + 1)
    slices = ndimage.find_objects(comp, max_label=n)
    flat = comp.ravel()
    _, first = np.unique(flat, return_index=True)
    first_of = dict(zip(flat[first].tolist(), first.tolist()))
    segments = []
    for sid in range(1, n + 1):
        sl = slices[sid - 1]
        bbox = (sl[0].start, sl[1].start, sl[0].stop, sl[1].stop)
        cls = -1
        if class_map is not None:
            cls = int(class_map.ravel()[first_of[sid]])
        segments.append(Segment(id=sid, area=int(areas[sid]), bbox=bbox, class_id=cls))
    return SegmentTable(labels=comp, segments=tuple(segments))


def connected_components(label_map: DenseMap, connectivity: int = 4) -> SegmentTable:
    """Maximal regions of equal label, ids assigned in raster order of each
    region's first pixel."""
    values = label_map.plane().astype(np.int64)
    comp, n = kernels.label_components(values, active=None, connectivity=connectivity)
    return _build_table(comp, n, values)


def enclosed_regions(binary_boundary: DenseMap) -> SegmentTable:
    """Connected areas of non-boundary pixels (4-connected, the dual of the
    8-connected boundary curves)."""
    b = binary_boundary.plane()
    active = b == 0
    comp, n = kernels.label_components(
        np.zeros_like(b, dtype=np.int64), active=active, connectivity=4
    )
    return _build_table(comp, n, None)


def majority_vote(semantic: DenseMap, regions: SegmentTable) -> DenseMap:
    """Give every pixel of each region the region's most frequent class; ties
    go to the lowest class id. Pixels outside all regions are untouched."""
    sem = semantic.plane().astype(np.int64)
    comp = regions.labels
    n_regions = len(regions)
    if n_regions == 0:
        return DenseMap(semantic.plane().copy())
    if min(s.area for s in regions.segments) == 0:
        raise ValidationError("empty region in segment table")
    n_vals = int(sem.max()) + 1
    assigned = comp > 0
    counts = np.bincount(
        (comp[assigned].astype(np.int64) - 1) * n_vals + sem[assigned],
        minlength=n_regions * n_vals,
    ).reshape(n_regions, n_vals)
    vote = np.argmax(counts, axis=1)  # first maximum = lowest class id
    out = sem.copy()
    out[assigned] = vote[comp[assigned] - 1]
    return DenseMap(out.astype(semantic.plane().dtype))


def _neighbor_class_sets(comp: np.ndarray, class_map: np.ndarray, n_segments: int):
    """For each segment, the distinct classes of outside 4-neighbours and
    whether the segment touches the image border."""
    pairs_seg = []
    pairs_cls = []
    for axis in (0, 1):
        if axis == 0:
            a = (slice(None, -1), slice(None))
            b = (slice(1, None), slice(None))
        else:
            a = (slice(None), slice(None, -1))
            b = (slice(None), slice(1, None))
        different = comp[a] != comp[b]
        for inside, outside in ((a, b), (b, a)):
            m = different & (comp[inside] > 0)
            pairs_seg.append(comp[inside][m].astype(np.int64))
            pairs_cls.append(class_map[outside][m].astype(np.int64))
    seg = np.concatenate(pairs_seg) if pairs_seg else np.empty(0, np.int64)
    cls = np.concatenate(pairs_cls) if pairs_cls else np.empty(0, np.int64)
    big = int(class_map.max()) + 2
    uniq = np.unique(seg * big + cls)
    neighbor_classes: dict[int, set[int]] = {}
    for key in uniq.tolist():
        neighbor_classes.setdefault(key // big, set()).add(key % big)

    touches = np.zeros(n_segments + 1, dtype=bool)
    for edge in (comp[0], comp[-1], comp[:, 0], comp[:, -1]):
        touches[np.unique(edge)] = True
    return neighbor_classes, touches


def _is_surrounded(
    seg_id: int,
    neighbor_classes: dict[int, set[int]],
    touches: np.ndarray,
    labels: LabelSpec,
) -> bool:
    """Fully surrounded by one single other thing class, per the conservative
    reading; image-border segments never count as surrounded."""
    if touches[seg_id]:
        return False
    classes = neighbor_classes.get(seg_id, set())
    if len(classes) != 1:
        return False
    cls = next(iter(classes))
    return cls != labels.ignore_id and cls < labels.n_classes and labels.is_thing(cls)


def filter_things(
    semantic: DenseMap,
    binary_boundary: DenseMap,
    regions: SegmentTable,
    labels: LabelSpec,
    cfg: RefineConfig,
) -> DenseMap:
    """Reset thing regions to ignore when they are too small, carry no
    boundary evidence, or sit fully inside another thing class.

    Filters run as ordered passes (size, boundary support, surroundedness),
    each seeing the map as updated by the previous pass.
    """
    sem = semantic.plane().copy()
    comp = regions.labels
    bnd = binary_boundary.plane()
    thing_segs = [s for s in regions.segments if labels.is_thing(s.class_id)]

    alive = {s.id for s in thing_segs}
    for s in thing_segs:
        if s.area < cfg.min_thing_size:
            sem[comp == s.id] = labels.ignore_id
            alive.discard(s.id)

    boundary_hits = np.bincount(comp.ravel(), weights=bnd.ravel(), minlength=len(regions) + 1)
    for s in thing_segs:
        if s.id in alive and boundary_hits[s.id] == 0:
            sem[comp == s.id] = labels.ignore_id
            alive.discard(s.id)

    neighbor_classes, touches = _neighbor_class_sets(comp, sem, len(regions))
    for s in thing_segs:
        if s.id in alive and _is_surrounded(s.id, neighbor_classes, touches, labels):
            sem[comp == s.id] = labels.ignore_id
    return DenseMap(sem)


def filter_stuff(
    semantic: DenseMap,
    regions: SegmentTable,
    labels: LabelSpec,
    cfg: RefineConfig,
) -> DenseMap:
    """The thing filters minus the boundary-support test, with the stuff
    size threshold."""
    sem = semantic.plane().copy()
    comp = regions.labels
    stuff_segs = [
        s
        for s in regions.segments
        if s.class_id != labels.ignore_id and not labels.is_thing(s.class_id)
    ]

    alive = {s.id for s in stuff_segs}
    for s in stuff_segs:
        if s.area < cfg.min_stuff_size:
            sem[comp == s.id] = labels.ignore_id
            alive.discard(s.id)

    neighbor_classes, touches = _neighbor_class_sets(comp, sem, len(regions))
    for s in stuff_segs:
        if s.id in alive and _is_surrounded(s.id, neighbor_classes, touches, labels):
            sem[comp == s.id] = labels.ignore_id
    return DenseMap(sem)


def fill_holes(
    panoptic: PanopticMap, labels: LabelSpec, keep: np.ndarray | None = None
) -> PanopticMap:
    """Give every ignore pixel the pan id of its nearest valid pixel
    (exact Euclidean distance, raster order on ties).

    Pixels selected by ``keep`` stay ignore (e.g. a static ego-vehicle
    mask) and do not seed propagation.
    """
    pan = panoptic.pan
    ignore_pan = encode_pan_id(labels.ignore_id, 0)
    seed = pan != ignore_pan
    if keep is not None:
        seed = seed & ~keep
    if not seed.any():
        raise ValidationError("cannot fill holes: no non-ignore pixel to propagate from")
    filled = kernels.nearest_seed_fill(pan, seed)
    if keep is not None:
        filled[keep] = ignore_pan
    return PanopticMap(pan=filled, ignore_id=labels.ignore_id)


def _renumber_instances(
    inst_raw: np.ndarray, sem: np.ndarray, labels: LabelSpec
) -> np.ndarray:
    """Turn per-pixel provisional instance keys into pan ids with per-class
    instance indices contiguous from 1 in raster order."""
    pan = sem.astype(np.uint32) * INSTANCE_BASE
    counters = {c: 0 for c in labels.thing_ids}
    flat_inst = inst_raw.ravel()
    flat_sem = sem.ravel()
    flat_pan = pan.ravel()
    seen: dict[int, int] = {}
    keys = flat_inst[flat_inst > 0]
    if keys.size:
        _, first = np.unique(keys, return_index=True)
        positions = np.flatnonzero(flat_inst > 0)
        for pos in np.sort(positions[first]).tolist():
            key = int(flat_inst[pos])
            cls = int(flat_sem[pos])
            counters[cls] += 1
            if counters[cls] > MAX_INSTANCES:
                raise ValidationError(
                    f"class {cls} exceeds {MAX_INSTANCES} instances in one image"
                )
            seen[key] = cls * INSTANCE_BASE + counters[cls]
        lut = np.zeros(int(flat_inst.max()) + 1, dtype=np.uint32)
        for key, pid in seen.items():
            lut[key] = pid
        assigned = flat_inst > 0
        flat_pan[assigned] = lut[flat_inst[assigned]]
    return flat_pan.reshape(sem.shape)


@dataclass
class FuseReport:
    panoptic: PanopticMap
    timings: dict[str, float] = field(default_factory=dict)
    instance_masks: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    depth_exceeded: bool = False


def fuse_detailed(
    semantic_probs: DenseMap,
    soft_boundary: DenseMap,
    labels: LabelSpec,
    boundary_cfg: BoundaryConfig,
    refine_cfg: RefineConfig,
    ncut_cfg: NCutConfig,
    mask: np.ndarray | None = None,
    collect_instances: bool = False,
) -> FuseReport:
    """Run the full fusion pipeline and keep per-stage timings.

    Stage order: threshold and denoise the boundary, add stuff/thing
    transitions, majority-vote enclosed areas, semantic components, thing and
    stuff filters, normalized-cut instance separation, hole filling.
    """
    report = FuseReport(panoptic=None)  # type: ignore[arg-type]
    clock = time.perf_counter
    stage_start = clock()

    def done(stage: str):
        nonlocal stage_start
        now = clock()
        report.timings[stage] = now - stage_start
        stage_start = now

    def run(stage: str, fn, *args, **kwargs):
        try:
            out = fn(*args, **kwargs)
        except Exception as exc:
            raise FuseError(f"stage '{stage}': {exc}") from exc
        done(stage)
        return out

    if (semantic_probs.h, semantic_probs.w) != (soft_boundary.h, soft_boundary.w):
        raise FuseError("stage 'inputs': probability and boundary shapes differ")
    semantic_probs.validate_probabilities()
    h, w = semantic_probs.h, semantic_probs.w
    rcfg = refine_cfg.scaled_for(h, w)
    done("validate")

    sem = run("argmax", lambda: argmax_semantics(semantic_probs, labels).plane().astype(np.int64))
    graph = run("affinity", ncut.build_affinity, soft_boundary, ncut_cfg)
    head_boundary = run(
        "boundary",
        lambda: denoise_boundary(threshold_boundary(soft_boundary, boundary_cfg), boundary_cfg),
    )
    augmented = run(
        "stuff_thing",
        lambda: DenseMap(
            head_boundary.plane() | stuff_thing_boundaries(DenseMap(sem.astype(np.uint16)), labels).plane()
        ),
    )
    regions_bg = run("enclosed_cca", enclosed_regions, augmented)
    sem = run(
        "majority_vote",
        lambda: majority_vote(DenseMap(sem.astype(np.uint16)), regions_bg).plane().astype(np.int64),
    )
    table = run(
        "semantic_cca",
        connected_components,
        DenseMap(sem.astype(np.uint16)),
        rcfg.connectivity,
    )
    sem_f = run(
        "filter_things",
        filter_things,
        DenseMap(sem.astype(np.uint16)),
        head_boundary,
        table,
        labels,
        rcfg,
    )
    sem_f = run("filter_stuff", filter_stuff, sem_f, table, labels, rcfg)

    def separate():
        sem_arr = sem_f.plane().astype(np.int64)
        comp = table.labels
        inst_raw = np.zeros((h, w), dtype=np.int64)
        next_key = 1
        hb, wb = graph.shape
        for seg in table.segments:
            if not labels.is_thing(seg.class_id):
                continue
            seg_mask = comp == seg.id
            if sem_arr[seg_mask][0] == labels.ignore_id:
                continue  # removed by the thing filters
            nodes = ncut.segment_to_nodes(seg_mask, (hb, wb))
            if nodes.size == 0:
                # segment thinner than a downsample cell: keep it whole
                inst_raw[seg_mask] = next_key
                next_key += 1
                continue
            delin = ncut.delineate(graph, nodes, ncut_cfg)
            report.depth_exceeded |= delin.depth_exceeded
            lab = ncut.upsample_instances(delin.instances, (hb, wb), (h, w), seg_mask)
            for k in range(len(delin.instances)):
                sel = lab == k
                if not sel.any():
                    continue
                inst_raw[sel] = next_key
                if collect_instances:
                    report.instance_masks[(seg.id, k)] = sel
                next_key += 1
            sem_arr[lab == -2] = labels.ignore_id
        # instance-free pixels of surviving thing segments also heal later
        leftover = (inst_raw == 0) & np.isin(
            sem_arr, np.asarray(labels.thing_ids, dtype=np.int64)
        )
        sem_arr[leftover] = labels.ignore_id
        return sem_arr, inst_raw

    sem_arr, inst_raw = run("instances", separate)
    keep = None
    if mask is not None:
        keep = mask.astype(bool)
        if keep.shape != (h, w):
            raise FuseError("stage 'mask': mask shape does not match the image")
        sem_arr[keep] = labels.ignore_id
        inst_raw[keep] = 0
    pan = run("renumber", _renumber_instances, inst_raw, sem_arr, labels)
    pan_map = PanopticMap(pan=pan, ignore_id=labels.ignore_id)
    pan_map = run("fill_holes", fill_holes, pan_map, labels, keep)
    report.panoptic = pan_map
    return report


def fuse(
    semantic_probs: DenseMap,
    soft_boundary: DenseMap,
    labels: LabelSpec,
    boundary_cfg: BoundaryConfig | None = None,
    refine_cfg: RefineConfig | None = None,
    ncut_cfg: NCutConfig | None = None,
    mask: np.ndarray | None = None,
) -> PanopticMap:
    """Full fusion pipeline; see :func:`fuse_detailed` for stage order."""
    return fuse_detailed(
        semantic_probs,
        soft_boundary,
        labels,
        boundary_cfg or BoundaryConfig(),
        refine_cfg or RefineConfig(),
        ncut_cfg or NCutConfig(),
        mask=mask,
    ).panoptic
