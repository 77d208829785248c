"""Trace extraction from vision-language model forward passes."""

from .container import build_container, write_container
from .extract import (
    Capture,
    ExtractionError,
    ExtractionResult,
    ExtractionSpec,
    ModelError,
    SampleSpec,
    extract,
    load_adapter,
)
from .tinyvlm import TinyVlm

__all__ = [
    "Capture",
    "ExtractionError",
    "ExtractionResult",
    "ExtractionSpec",
    "ModelError",
    "SampleSpec",
    "TinyVlm",
    "build_container",
    "extract",
    "load_adapter",
    "write_container",
]
