"""Data model, ingestion and validation for diarized dyadic conversations.

File formats owned by this module:

* Utterance file: JSONL, one object per utterance with keys
  ``conv_id, utt_id, speaker, t_start, t_end, text, emotion, avd``
  (``text`` may be null, ``avd`` is ``[a, v, d]`` or null).
* Feature file: CSV with header ``conv_id,turn,slot,f0,...,f{D-1}``,
  one vector per (conversation, turn index, speaker slot) key.

Everything returned by the loaders is read-only after load and safe to
share across parallel workers.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np
import pandas as pd

SIX_CLASSES = ("Happy", "Excited", "Sad", "Neutral", "Angry", "Frustrated")
FOUR_CLASSES = ("Happy", "Sad", "Neutral", "Angry")

_SESSION_RE = re.compile(r"^Ses(\d+)")


class Scheme(str, Enum):
    """Emotion label scheme: the full 6-class set or the merged 4-class set."""

    SIX = "six"
    FOUR = "four"

    @property
    def classes(self) -> tuple[str, ...]:
        return SIX_CLASSES if self is Scheme.SIX else FOUR_CLASSES

    @property
    def n_classes(self) -> int:
        return len(self.classes)


class CorpusError(ValueError):
    """Classified validation error raised by loaders.

    ``kind`` is a stable machine-checkable tag; the message carries the
    offending file location / key.
    """

    def __init__(self, kind: str, message: str, line: Optional[int] = None):
        self.kind = kind
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(f"[{kind}] {message}")


@dataclass(frozen=True)
class AvdTriple:
    """Activation / valence / dominance attributes on the 1..5 scale."""

    activation: float
    valence: float
    dominance: float

    def as_list(self) -> list[float]:
        return [self.activation, self.valence, self.dominance]

    @staticmethod
    def from_list(values, where: str = "", line: Optional[int] = None) -> "AvdTriple":
        if not isinstance(values, (list, tuple)) or len(values) != 3:
            raise CorpusError("avd-malformed", f"avd must be a 3-list {where}", line)
        vals = []
        for v in values:
            v = float(v)
            if not math.isfinite(v) or not (1.0 <= v <= 5.0):
                raise CorpusError(
                    "avd-range", f"avd component {v!r} outside [1, 5] {where}", line
                )
            vals.append(v)
        return AvdTriple(*vals)


@dataclass(frozen=True)
class UtteranceRecord:
    """One diarized utterance with its emotion label and optional attributes."""

    conv_id: str
    utt_id: str
    speaker: str
    t_start: float
    t_end: float
    text: Optional[str]
    emotion: str
    avd: Optional[AvdTriple]

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass
class Conversation:
    """Utterances of one dyadic conversation, sorted by start time."""

    conv_id: str
    utterances: list[UtteranceRecord] = field(default_factory=list)

    @property
    def speakers(self) -> list[str]:
        """The two speaker tags, ordered by first appearance."""
        seen: list[str] = []
        for u in self.utterances:
            if u.speaker not in seen:
                seen.append(u.speaker)
        return seen

    def __len__(self) -> int:
        return len(self.utterances)


_REQUIRED_KEYS = ("conv_id", "utt_id", "speaker", "t_start", "t_end", "emotion")


def _parse_line(obj: dict, line: int) -> UtteranceRecord:
    for key in _REQUIRED_KEYS:
        if key not in obj or obj[key] is None:
            raise CorpusError("malformed-line", f"missing field {key!r}", line)
    emotion = obj["emotion"]
    if emotion not in SIX_CLASSES:
        raise CorpusError(
            "unknown-label",
            f"emotion {emotion!r} not one of {list(SIX_CLASSES)}",
            line,
        )
    try:
        t_start = float(obj["t_start"])
        t_end = float(obj["t_end"])
    except (TypeError, ValueError):
        raise CorpusError("malformed-line", "t_start/t_end must be numbers", line)
    if not (math.isfinite(t_start) and math.isfinite(t_end)) or t_start >= t_end:
        raise CorpusError(
            "bad-times", f"need t_start < t_end, got [{t_start}, {t_end}]", line
        )
    text = obj.get("text")
    if text is not None and not isinstance(text, str):
        raise CorpusError("malformed-line", "text must be a string or null", line)
    avd = obj.get("avd")
    where = f"(utt_id={obj['utt_id']!r})"
    avd_t = None if avd is None else AvdTriple.from_list(avd, where, line)
    return UtteranceRecord(
        conv_id=str(obj["conv_id"]),
        utt_id=str(obj["utt_id"]),
        speaker=str(obj["speaker"]),
        t_start=t_start,
        t_end=t_end,
        text=text,
        emotion=emotion,
        avd=avd_t,
    )


def load_utterances(path: str | Path) -> list[Conversation]:
    """Load a JSONL utterance file into validated conversations.

    Records are grouped by ``conv_id`` (order of first appearance) and
    sorted by ``t_start`` within each conversation.  Raises
    :class:`CorpusError` on malformed lines, non-dyadic conversations,
    duplicate utterance ids or out-of-range AVD.
    """
    path = Path(path)
    by_conv: dict[str, Conversation] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusError("malformed-line", f"invalid JSON: {exc.msg}", line_no)
            if not isinstance(obj, dict):
                raise CorpusError("malformed-line", "expected a JSON object", line_no)
            rec = _parse_line(obj, line_no)
            by_conv.setdefault(rec.conv_id, Conversation(rec.conv_id)).utterances.append(rec)

    conversations = list(by_conv.values())
    for conv in conversations:
        conv.utterances.sort(key=lambda u: (u.t_start, u.utt_id))
        seen_ids = set()
        for u in conv.utterances:
            if u.utt_id in seen_ids:
                raise CorpusError(
                    "duplicate-utt-id",
                    f"utt_id {u.utt_id!r} repeated in conversation {conv.conv_id!r}",
                )
            seen_ids.add(u.utt_id)
        n_speakers = len(conv.speakers)
        if n_speakers != 2:
            raise CorpusError(
                "non-dyadic",
                f"conversation {conv.conv_id!r} has {n_speakers} speaker tags, need 2",
            )
    return conversations


def serialize_utterances(conversations: Iterable[Conversation], path: str | Path) -> None:
    """Write conversations back to canonical JSONL (inverse of load)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for conv in conversations:
            for u in conv.utterances:
                obj = {
                    "conv_id": u.conv_id,
                    "utt_id": u.utt_id,
                    "speaker": u.speaker,
                    "t_start": u.t_start,
                    "t_end": u.t_end,
                    "text": u.text,
                    "emotion": u.emotion,
                    "avd": None if u.avd is None else u.avd.as_list(),
                }
                fh.write(json.dumps(obj) + "\n")


def session_of(conv_id: str, overrides: Optional[Mapping[str, int]] = None) -> int:
    """Session number for a conversation id.

    Convention: ids start with ``SesNN_``; ``overrides`` maps ids that do
    not follow it to explicit session numbers.
    """
    if overrides and conv_id in overrides:
        return int(overrides[conv_id])
    m = _SESSION_RE.match(conv_id)
    if m is None:
        raise CorpusError(
            "unknown-session",
            f"conv_id {conv_id!r} has no SesNN_ prefix and no session override",
        )
    return int(m.group(1))


FeatureKey = tuple[str, int, int]  # (conv_id, turn_index, speaker_slot)


class FeatureStore:
    """Per-modality vectors keyed by (conv_id, turn_index, speaker_slot)."""

    def __init__(self, modality: str, dim: int):
        self.modality = modality
        self.dim = dim
        self._vectors: dict[FeatureKey, np.ndarray] = {}

    def add(self, key: FeatureKey, vec: np.ndarray) -> None:
        if key in self._vectors:
            raise CorpusError(
                "duplicate-feature-key", f"{self.modality} key {key} appears twice"
            )
        if vec.shape != (self.dim,):
            raise CorpusError(
                "feature-dim",
                f"{self.modality} key {key}: got {vec.shape[0]} values, expected {self.dim}",
            )
        if not np.all(np.isfinite(vec)):
            raise CorpusError(
                "feature-non-finite", f"{self.modality} key {key} has non-finite values"
            )
        self._vectors[key] = vec

    def get(self, conv_id: str, turn_index: int, slot: int) -> np.ndarray:
        return self._vectors[(conv_id, turn_index, slot)]

    def __contains__(self, key: FeatureKey) -> bool:
        return key in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def keys(self) -> Iterable[FeatureKey]:
        return self._vectors.keys()

    def matrix(self, keys: Iterable[FeatureKey]) -> np.ndarray:
        """Stack vectors for the given keys into an (N, dim) matrix."""
        return np.stack([self._vectors[k] for k in keys])

    def validate_keys(self, valid_keys: set[FeatureKey]) -> None:
        """Raise on any stored key that has no matching turn side."""
        for key in self._vectors:
            if key not in valid_keys:
                raise CorpusError(
                    "dangling-feature-key",
                    f"{self.modality} key {key} has no matching turn",
                )


def load_features(path: str | Path, modality: str) -> FeatureStore:
    """Load a feature CSV into a :class:`FeatureStore`.

    The header fixes the dimension; every row must carry exactly that many
    feature values.  Duplicate keys and non-finite values are errors.
    """
    path = Path(path)
    try:
        df = pd.read_csv(path)
    except pd.errors.ParserError as exc:
        raise CorpusError("feature-dim", f"{path.name}: ragged row ({exc})")
    expected_prefix = ["conv_id", "turn", "slot"]
    if list(df.columns[:3]) != expected_prefix:
        raise CorpusError(
            "feature-header",
            f"{path.name}: header must start with {expected_prefix}, got {list(df.columns[:3])}",
        )
    feat_cols = list(df.columns[3:])
    dim = len(feat_cols)
    if feat_cols != [f"f{i}" for i in range(dim)]:
        raise CorpusError("feature-header", f"{path.name}: feature columns must be f0..f{dim-1}")
    store = FeatureStore(modality, dim)
    values = df[feat_cols].to_numpy(dtype=np.float64)
    if np.isnan(values).any():
        bad = int(np.where(np.isnan(values).any(axis=1))[0][0])
        raise CorpusError(
            "feature-dim",
            f"{path.name}: row {bad + 2} is short or non-numeric (NaN after parse)",
        )
    for i in range(len(df)):
        key = (str(df.iloc[i, 0]), int(df.iloc[i, 1]), int(df.iloc[i, 2]))
        store.add(key, values[i])
    return store


def save_features(
    rows: Mapping[FeatureKey, np.ndarray], modality: str, path: str | Path
) -> None:
    """Write feature vectors in the canonical CSV format (sorted by key)."""
    keys = sorted(rows.keys())
    if not keys:
        raise ValueError(f"no {modality} feature rows to write")
    dim = len(rows[keys[0]])
    header = ["conv_id", "turn", "slot"] + [f"f{i}" for i in range(dim)]
    data = {
        "conv_id": [k[0] for k in keys],
        "turn": [k[1] for k in keys],
        "slot": [k[2] for k in keys],
    }
    mat = np.stack([np.asarray(rows[k], dtype=np.float64) for k in keys])
    df = pd.DataFrame(data)
    df = pd.concat([df, pd.DataFrame(mat, columns=header[3:])], axis=1)
    df.to_csv(path, index=False, lineterminator="\n")
