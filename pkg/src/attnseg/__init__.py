"""Zero-shot segmentation from diffusion self-attention tensors.

Pipeline: load a tensor-set manifest, aggregate the multi-resolution
attention tensors into one normalized tensor, iteratively merge its maps
into object proposals by symmetric KL distance, and argmax the upsampled
proposals into a label mask. Includes the evaluation metric suite and a
synthetic fixture generator for end-to-end verification.
"""

from .attention_core import (
    AggregatedTensor,
    WeightVector,
    aggregate,
    compute_weights,
    upsample_bilinear,
)
from .mask import (
    BinaryMask,
    LabelMask,
    nms_mask,
    render_overlay,
    select_region,
)
from .merging import MergeConfig, ProposalList, anchor_grid, iterative_merge, kl_distance
from .metrics import (
    ConfusionCounts,
    MetricsReport,
    confusion,
    dsc,
    evaluate_dataset,
    iou,
    match_regions,
    precision,
    recall,
)
from .synth import PlantedScene, generate_tensor_set, random_scene
from .tensor_io import (
    AttentionTensor,
    TensorSetManifest,
    load_tensor_set,
    read_tensor,
    write_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "AggregatedTensor",
    "AttentionTensor",
    "BinaryMask",
    "ConfusionCounts",
    "LabelMask",
    "MergeConfig",
    "MetricsReport",
    "PlantedScene",
    "ProposalList",
    "TensorSetManifest",
    "WeightVector",
    "aggregate",
    "anchor_grid",
    "compute_weights",
    "confusion",
    "dsc",
    "evaluate_dataset",
    "generate_tensor_set",
    "iou",
    "iterative_merge",
    "kl_distance",
    "load_tensor_set",
    "match_regions",
    "nms_mask",
    "precision",
    "random_scene",
    "read_tensor",
    "recall",
    "render_overlay",
    "select_region",
    "upsample_bilinear",
    "write_tensor",
]
