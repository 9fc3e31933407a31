"""Adapter that turns a causal language model into the conformal
engine's logit-dataset and token-metadata files."""

from .extract import DEFAULT_TEMPLATE, ExtractionConfig, ExtractionResult, extract_logits
from .metadata import extract_token_metadata

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_TEMPLATE",
    "ExtractionConfig",
    "ExtractionResult",
    "extract_logits",
    "extract_token_metadata",
]
