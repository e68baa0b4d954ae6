"""Raw conversation assets to erfc-compatible corpus and feature files."""

from .backends import AudioEncoder, SpeakerEncoder, TextEncoder
from .manifest import CANONICAL_DIMS, ExtractError, ExtractorManifest, ModelSpec
from .pipeline import extract_all, extract_conversation

__all__ = [
    "AudioEncoder",
    "CANONICAL_DIMS",
    "ExtractError",
    "ExtractorManifest",
    "ModelSpec",
    "SpeakerEncoder",
    "TextEncoder",
    "extract_all",
    "extract_conversation",
]
