"""Pipeline configuration: TOML (or JSON) loading with strict key checking.

Every module's tuning knobs live in one file under the sections ``tiler``,
``boundary``, ``refine``, ``ncut``, ``sampler``, and ``loss``; unknown keys
are rejected at load time so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .boundary import BoundaryConfig
from .core import ValidationError
from .losses import LossConfig
from .ncut import NCutConfig
from .refine import RefineConfig
from .sampler import SamplerConfig


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class TilerConfig:
    scales: tuple[int, ...] = (1, 2)
    overlap: int = 2

    def __post_init__(self):
        if not self.scales or min(self.scales) < 1:
            raise ValidationError(f"scales must be positive, got {self.scales}")
        if self.overlap < 1:
            raise ValidationError(f"overlap must be >= 1, got {self.overlap}")


@dataclass(frozen=True)
class PipelineConfig:
    tiler: TilerConfig = TilerConfig()
    boundary: BoundaryConfig = BoundaryConfig()
    refine: RefineConfig = RefineConfig()
    ncut: NCutConfig = NCutConfig()
    sampler: SamplerConfig = SamplerConfig()
    loss: LossConfig = LossConfig()
    jobs: int = 1


# section -> (dataclass, {file key: (field, converter)})
_IDENT = lambda v: v  # noqa: E731
_SECTIONS = {
    "tiler": (
        TilerConfig,
        {
            "scales": ("scales", lambda v: tuple(int(s) for s in v)),
            "overlap": ("overlap", int),
        },
    ),
    "boundary": (
        BoundaryConfig,
        {
            "lambda_b": ("lambda_b", float),
            "min_size": ("min_boundary_size", int),
            "convention": ("boundary_convention", int),
        },
    ),
    "refine": (
        RefineConfig,
        {
            "min_thing_size": ("min_thing_size", int),
            "min_stuff_size": ("min_stuff_size", int),
            "connectivity": ("connectivity", int),
            "scale_min_sizes": ("scale_min_sizes", bool),
        },
    ),
    "ncut": (
        NCutConfig,
        {
            "downsample": ("downsample", lambda v: (int(v[0]), int(v[1]))),
            "radius": ("radius", int),
            "beta": ("beta", float),
            "cut_cost_threshold": ("cut_cost_threshold", float),
            "stability_ratio_threshold": ("stability_ratio_threshold", float),
            "histogram_bins": ("histogram_bins", int),
            "min_instance_size": ("min_instance_size", int),
            "max_recursion_depth": ("max_recursion_depth", int),
            "eig_tol": ("eig_tol", float),
            "exhaustive_split": ("exhaustive_split", bool),
        },
    ),
    "sampler": (
        SamplerConfig,
        {
            "n_neighbors": ("n_neighbors", int),
            "dedupe": ("dedupe", bool),
        },
    ),
    "loss": (
        LossConfig,
        {
            "t_k": ("t_k", float),
            "epsilon": ("epsilon", float),
        },
    ),
}


def default_config() -> PipelineConfig:
    return PipelineConfig()


def config_from_dict(doc: dict) -> PipelineConfig:
    kwargs = {}
    for section, payload in doc.items():
        if section == "jobs":
            kwargs["jobs"] = int(payload)
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        cls, mapping = _SECTIONS[section]
        if not isinstance(payload, dict):
            raise ConfigError(f"section {section!r} must be a table")
        fields = {}
        for key, value in payload.items():
            if key not in mapping:
                raise ConfigError(f"unknown key {section}.{key}")
            field_name, convert = mapping[key]
            fields[field_name] = convert(value)
        try:
            kwargs[section] = cls(**fields)
        except ValidationError as exc:
            raise ConfigError(f"invalid [{section}] config: {exc}") from exc
    return PipelineConfig(**kwargs)


def config_to_dict(cfg: PipelineConfig) -> dict:
    doc: dict = {}
    for section, (cls, mapping) in _SECTIONS.items():
        obj = getattr(cfg, section)
        table = {}
        for key, (field_name, _convert) in mapping.items():
            value = getattr(obj, field_name)
            if isinstance(value, tuple):
                value = list(value)
            table[key] = value
        doc[section] = table
    doc["jobs"] = cfg.jobs
    return doc


def load_config(path) -> PipelineConfig:
    """Read TOML or JSON (picked by suffix, falling back to content)."""
    text = open(path, "rb").read()
    suffix = str(path).lower()
    try:
        if suffix.endswith(".json"):
            doc = json.loads(text)
        elif suffix.endswith(".toml"):
            doc = tomllib.loads(text.decode("utf-8"))
        else:
            try:
                doc = tomllib.loads(text.decode("utf-8"))
            except tomllib.TOMLDecodeError:
                doc = json.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a table")
    return config_from_dict(doc)
