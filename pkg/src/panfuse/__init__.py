"""panfuse: panoptic fusion of semantic probability maps and soft object
boundaries, with normalized-cut instance delineation, evaluation metrics, and
feature-similarity image sampling."""

from .core import (
    DenseMap,
    FeatureVector,
    LabelSpec,
    PanopticMap,
    argmax_semantics,
    read_tensor,
    write_tensor,
)
from .refine import fuse, fuse_detailed

__version__ = "0.1.0"

__all__ = [
    "DenseMap",
    "FeatureVector",
    "LabelSpec",
    "PanopticMap",
    "argmax_semantics",
    "read_tensor",
    "write_tensor",
    "fuse",
    "fuse_detailed",
    "__version__",
]
