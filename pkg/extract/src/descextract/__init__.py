"""Embedding extraction companion for the descriptor-evaluation toolkit:
encodes images and texts with pluggable encoders, samples paired corpora,
and writes EMB1 matrices plus JSON manifests."""

__version__ = "0.1.0"

from .emb1 import Emb1Writer, open_rows  # noqa: F401
from .encoders import DebugHashEncoder, resolve  # noqa: F401
from .errors import ExtractError, InputError, ModelLoadError, UsageError  # noqa: F401
from .pipeline import (  # noqa: F401
    ExtractionManifest,
    extract_image_embeddings,
    extract_text_embeddings,
    load_manifest,
    manifest_path,
    sample_corpus,
)
