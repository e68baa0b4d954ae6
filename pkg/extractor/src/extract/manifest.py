"""Extraction manifest: asset layout, pinned backend ids, output paths.

The manifest is the reproducibility record for an extraction run.  It
names the backend that produced each modality and the exact output
locations, and it is validated in full before any audio is opened, so a
bad declaration can never leave half-written files behind.

Expected asset layout under ``assets_dir``::

    <conv_id>/
        audio.wav           mono or stereo PCM
        transcript.json     utterance segmentation, speakers and labels

Output dims are fixed by the downstream corpus contract: text 768,
audio 6373, speaker 512.  Reduction (PCA) happens downstream on the
training split only, never here.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

MODALITIES = ("text", "audio", "speaker")

# The corpus-side contract for raw (pre-PCA) feature widths.
CANONICAL_DIMS = {"text": 768, "audio": 6373, "speaker": 512}


class ExtractError(ValueError):
    """Manifest or extraction failure."""


@dataclass(frozen=True)
class ModelSpec:
    """Pinned backend identifier and its declared output width."""

    id: str
    dim: int


@dataclass(frozen=True)
class ExtractorManifest:
    assets_dir: Path
    models: Mapping[str, ModelSpec]
    out_corpus: Path
    out_features: Mapping[str, Path]

    @classmethod
    def load(cls, path: str | Path) -> "ExtractorManifest":
        """Parse a manifest JSON file; relative paths resolve against it."""
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ExtractError(f"manifest not found: {path}")
        except json.JSONDecodeError as exc:
            raise ExtractError(f"manifest is not valid JSON: {exc.msg}")
        for key in ("assets_dir", "models", "out"):
            if key not in obj:
                raise ExtractError(f"manifest missing field {key!r}")
        root = path.parent

        models = {}
        for m in MODALITIES:
            spec = obj["models"].get(m)
            if not isinstance(spec, dict) or "id" not in spec or "dim" not in spec:
                raise ExtractError(f"manifest models.{m} must carry 'id' and 'dim'")
            models[m] = ModelSpec(id=str(spec["id"]), dim=int(spec["dim"]))

        out = obj["out"]
        if "corpus" not in out or "features" not in out:
            raise ExtractError("manifest out must carry 'corpus' and 'features'")
        feats = {}
        for m in MODALITIES:
            if m not in out["features"]:
                raise ExtractError(f"manifest out.features missing {m!r}")
            feats[m] = root / out["features"][m]

        manifest = cls(
            assets_dir=root / obj["assets_dir"],
            models=models,
            out_corpus=root / out["corpus"],
            out_features=feats,
        )
        manifest.validate()
        return manifest

    def validate(self) -> None:
        """Check the declaration itself; runs before any extraction."""
        for m in MODALITIES:
            want = CANONICAL_DIMS[m]
            spec = self.models[m]
            if spec.dim != want:
                raise ExtractError(
                    f"declared {m} dim {spec.dim} does not match the corpus "
                    f"contract ({want})"
                )
            if not spec.id:
                raise ExtractError(f"{m} backend id must be non-empty")
        if not self.assets_dir.is_dir():
            raise ExtractError(f"assets dir not found: {self.assets_dir}")
        assets = self.assets_dir.resolve()
        for out in (self.out_corpus, *self.out_features.values()):
            if assets in out.resolve().parents:
                raise ExtractError(
                    f"output {out} lies inside the assets dir; inputs stay read-only"
                )

    def conversation_dirs(self) -> list[Path]:
        dirs = sorted(d for d in self.assets_dir.iterdir() if d.is_dir())
        if not dirs:
            raise ExtractError(f"no conversation directories under {self.assets_dir}")
        return dirs
