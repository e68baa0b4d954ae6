"""Label encoding, context windowing and flattened example construction.

Input vector layout, per speaker slot (slot 0 first, then slot 1):

* text block:    turns t-w_t .. t, oldest first, d_text values each
* audio block:   turns t-w_a .. t, oldest first, d_audio values each
* speaker block: turns t-w_s .. t, oldest first, d_spk values each
* emotion block: turns t-w_e .. t-1, oldest first; per turn one label
  code plus, when ``use_avd``, the AVD triple min-max scaled to [0, 1]

which gives dim(x) = 2*((w_t+1)*d_text + (w_a+1)*d_audio + (w_s+1)*d_spk
+ w_e*(1 + 3*use_avd)).  Turns before the start of the conversation are
padded with zero vectors and the reserved no-history label code (one past
the real classes), so every conversation of T turns yields exactly T
examples.  The emotion block never includes turn t; current and future
labels appear only in ``targets``.

Targets are a (2 speakers) x (k+1 horizons) integer matrix; -1 marks a
masked target (horizon past the end of the conversation, or an absent
side of a partial final turn).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import pandas as pd

from .corpus import FeatureStore, Scheme
from .pca import PcaModel, transform_pca
from .turns import Turn

MASKED = -1

MODALITIES = ("text", "audio", "speaker")


class BuildError(ValueError):
    """Dataset construction failure (missing bundle, AVD required but absent)."""


@dataclass(frozen=True)
class WindowConfig:
    """Context-window widths per modality, forecast horizon and scheme."""

    w_t: int
    w_a: int
    w_s: int
    w_e: int
    k: int
    use_avd: bool = True
    scheme: Scheme = Scheme.SIX

    def __post_init__(self):
        for name in ("w_t", "w_a", "w_s", "w_e", "k"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def uniform(cls, w: int, k: int, use_avd: bool = True, scheme: Scheme = Scheme.SIX):
        """Same context width for all modalities (the usual setting)."""
        return cls(w_t=w, w_a=w, w_s=w, w_e=w, k=k, use_avd=use_avd, scheme=scheme)

    @property
    def n_targets(self) -> int:
        return 2 * (self.k + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scheme"] = self.scheme.value
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "WindowConfig":
        d = dict(d)
        d["scheme"] = Scheme(d["scheme"])
        return cls(**d)


def merge_to_four(label: str) -> str:
    """Collapse the 6-class scheme onto 4 classes (Excited->Happy, Frustrated->Angry)."""
    return {"Excited": "Happy", "Frustrated": "Angry"}.get(label, label)


def encode_emotion(label: str, scheme: Scheme) -> int:
    """Integer code of a (six-class-named) label under the given scheme."""
    if scheme is Scheme.FOUR:
        label = merge_to_four(label)
    try:
        return scheme.classes.index(label)
    except ValueError:
        raise ValueError(f"label {label!r} not valid under scheme {scheme.value!r}")


def decode_emotion(code: int, scheme: Scheme) -> str:
    return scheme.classes[code]


def no_history_code(scheme: Scheme) -> int:
    """Reserved emotion-history code for padded turns (one past the classes)."""
    return scheme.n_classes


def scale_avd(value: float) -> float:
    """Map the 1..5 attribute scale onto [0, 1]."""
    return (value - 1.0) / 4.0


def example_dim(cfg: WindowConfig, d_text: int, d_audio: int, d_spk: int) -> int:
    per_speaker = (
        (cfg.w_t + 1) * d_text
        + (cfg.w_a + 1) * d_audio
        + (cfg.w_s + 1) * d_spk
        + cfg.w_e * (1 + 3 * int(cfg.use_avd))
    )
    return 2 * per_speaker


@dataclass
class Example:
    """One flattened context-window input with per-target labels."""

    conv_id: str
    t: int
    x: np.ndarray  # (dim,)
    targets: np.ndarray  # (2, k+1) int, MASKED where absent


def _check_avd_available(turns_by_conv: Mapping[str, list[Turn]]) -> None:
    for conv_id, turns in turns_by_conv.items():
        for turn in turns:
            for side in turn.sides:
                if side.present and side.avd is None:
                    raise BuildError(
                        f"AVD required but absent for {conv_id!r} turn {turn.turn_index} "
                        f"slot {side.slot} (first utt_id {side.utt_ids[0]!r})"
                    )


def _reduced_vectors(
    stores: Mapping[str, FeatureStore],
    pca_models: Optional[Mapping[str, PcaModel]],
) -> tuple[dict[str, dict], dict[str, int]]:
    """Apply per-modality PCA (when given) once, up front."""
    vectors: dict[str, dict] = {}
    dims: dict[str, int] = {}
    for modality in MODALITIES:
        store = stores[modality]
        model = (pca_models or {}).get(modality)
        keys = list(store.keys())
        if model is None:
            vectors[modality] = {k: store.get(*k) for k in keys}
            dims[modality] = store.dim
        else:
            Z = transform_pca(model, store.matrix(keys)) if keys else np.zeros((0, 0))
            vectors[modality] = dict(zip(keys, Z))
            dims[modality] = model.n_components
    return vectors, dims


def build_examples(
    turns_by_conv: Mapping[str, list[Turn]],
    stores: Mapping[str, FeatureStore],
    cfg: WindowConfig,
    pca_models: Optional[Mapping[str, PcaModel]] = None,
    history_labels: Optional[Mapping[tuple[str, int, int], int]] = None,
) -> list[Example]:
    """Build one example per turn for every conversation.

    ``history_labels`` overrides the encoded emotion-history codes (used by
    the autoregressive prediction path, which feeds the model's own past
    horizon-0 predictions); by default the ground-truth lifted labels are
    used (teacher-forced).  AVD history always comes from the corpus; the
    model does not predict attributes.
    """
    if cfg.use_avd:
        _check_avd_available(turns_by_conv)
    vectors, dims = _reduced_vectors(stores, pca_models)
    windows = (("text", cfg.w_t), ("audio", cfg.w_a), ("speaker", cfg.w_s))
    no_hist = float(no_history_code(cfg.scheme))
    emo_width = 1 + 3 * int(cfg.use_avd)

    examples: list[Example] = []
    for conv_id, turns in turns_by_conv.items():
        T = len(turns)
        for t in range(T):
            parts: list[np.ndarray] = []
            for slot in (0, 1):
                for modality, w in windows:
                    d = dims[modality]
                    for j in range(t - w, t + 1):
                        if j < 0 or not turns[j].sides[slot].present:
                            parts.append(np.zeros(d))
                            continue
                        key = (conv_id, j, slot)
                        if key not in vectors[modality]:
                            raise BuildError(
                                f"missing {modality} feature bundle for conv {conv_id!r} "
                                f"turn {j} slot {slot}"
                            )
                        parts.append(vectors[modality][key])
                emo = np.zeros(cfg.w_e * emo_width)
                for idx, j in enumerate(range(t - cfg.w_e, t)):
                    off = idx * emo_width
                    if j < 0:
                        emo[off] = no_hist
                        continue
                    side = turns[j].sides[slot]
                    if not side.present:
                        emo[off] = no_hist
                        continue
                    override = None
                    if history_labels is not None:
                        override = history_labels.get((conv_id, j, slot))
                    emo[off] = (
                        float(override)
                        if override is not None
                        else float(encode_emotion(side.label, cfg.scheme))
                    )
                    if cfg.use_avd and side.avd is not None:
                        emo[off + 1] = scale_avd(side.avd.activation)
                        emo[off + 2] = scale_avd(side.avd.valence)
                        emo[off + 3] = scale_avd(side.avd.dominance)
                parts.append(emo)

            targets = np.full((2, cfg.k + 1), MASKED, dtype=np.int64)
            for slot in (0, 1):
                for h in range(cfg.k + 1):
                    if t + h >= T:
                        continue
                    side = turns[t + h].sides[slot]
                    if side.present:
                        targets[slot, h] = encode_emotion(side.label, cfg.scheme)
            examples.append(
                Example(conv_id=conv_id, t=t, x=np.concatenate(parts), targets=targets)
            )
    return examples


def dataset_meta(cfg: WindowConfig, dims: Mapping[str, int], x_dim: int) -> dict:
    return {
        "window": cfg.to_dict(),
        "dims": dict(dims),
        "x_dim": int(x_dim),
        "scheme": cfg.scheme.value,
        "classes": list(cfg.scheme.classes),
        "no_history_code": no_history_code(cfg.scheme),
    }


def save_dataset(examples: list[Example], meta: dict, out_dir: str | Path) -> None:
    """Serialize a built dataset: examples.csv, targets.csv, meta.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")

    x_dim = meta["x_dim"]
    cols = {"conv_id": [e.conv_id for e in examples], "t": [e.t for e in examples]}
    X = (
        np.stack([e.x for e in examples])
        if examples
        else np.zeros((0, x_dim))
    )
    df = pd.concat(
        [pd.DataFrame(cols), pd.DataFrame(X, columns=[f"x{i}" for i in range(x_dim)])],
        axis=1,
    )
    df.to_csv(out / "examples.csv", index=False, lineterminator="\n")

    scheme = Scheme(meta["scheme"])
    rows = []
    for e in examples:
        for slot in (0, 1):
            for h in range(e.targets.shape[1]):
                code = int(e.targets[slot, h])
                rows.append(
                    {
                        "conv_id": e.conv_id,
                        "t": e.t,
                        "slot": slot,
                        "horizon": h,
                        "label": "MASK" if code == MASKED else decode_emotion(code, scheme),
                    }
                )
    pd.DataFrame(rows).to_csv(out / "targets.csv", index=False, lineterminator="\n")


def load_dataset(in_dir: str | Path) -> tuple[list[Example], WindowConfig, dict]:
    """Load a dataset directory written by :func:`save_dataset`."""
    in_dir = Path(in_dir)
    meta = json.loads((in_dir / "meta.json").read_text(encoding="utf-8"))
    cfg = WindowConfig.from_dict(meta["window"])
    scheme = cfg.scheme

    df = pd.read_csv(in_dir / "examples.csv")
    x_cols = [c for c in df.columns if c.startswith("x")]
    X = df[x_cols].to_numpy(dtype=np.float64)
    tg = pd.read_csv(in_dir / "targets.csv")
    targets_map: dict[tuple[str, int], np.ndarray] = {}
    for row in tg.itertuples(index=False):
        key = (str(row.conv_id), int(row.t))
        if key not in targets_map:
            targets_map[key] = np.full((2, cfg.k + 1), MASKED, dtype=np.int64)
        if row.label != "MASK":
            targets_map[key][int(row.slot), int(row.horizon)] = encode_emotion(
                str(row.label), scheme
            )
    examples = []
    for i in range(len(df)):
        conv_id, t = str(df.iloc[i]["conv_id"]), int(df.iloc[i]["t"])
        examples.append(
            Example(conv_id=conv_id, t=t, x=X[i], targets=targets_map[(conv_id, t)])
        )
    return examples, cfg, meta
