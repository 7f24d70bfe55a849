"""Export U-Net self-attention tensors to the attnseg interchange format."""

from .capture import AttentionRecorder, CapturedAttention
from .extract import ExtractionJob, ExtractionResult, expected_census, run_extraction
from .host import HostModel, StableDiffusionHost

__version__ = "0.1.0"

__all__ = [
    "AttentionRecorder",
    "CapturedAttention",
    "ExtractionJob",
    "ExtractionResult",
    "HostModel",
    "StableDiffusionHost",
    "expected_census",
    "run_extraction",
]
