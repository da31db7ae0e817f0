"""Image-side front end: backbone extraction and defect synthesis."""

from .etf import read_etf, write_etf
from .extract import ExtractionJob, extract_features, load_backbone
from .synthesize import SynthesisJob, derive_defect_mask, synthesize_defect

__version__ = "0.1.0"

__all__ = [
    "ExtractionJob",
    "SynthesisJob",
    "derive_defect_mask",
    "extract_features",
    "load_backbone",
    "read_etf",
    "synthesize_defect",
    "write_etf",
]
