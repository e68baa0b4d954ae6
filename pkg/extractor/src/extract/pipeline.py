"""Assets to corpus files: transcripts and wavs in, JSONL and CSVs out.

The heavy lifting per conversation is a pure function of that
conversation's directory, so conversations can be processed in parallel
workers with no shared state; outputs are written by the parent in
sorted conversation order, making the files byte-identical for any
worker count.

Speaker-turn convention (must mirror the corpus consumer exactly): a
conversation splits into maximal same-speaker utterance runs; runs
2i and 2i+1 form turn i, slot 0 first.  A trailing unpaired run leaves
the second slot absent, and absent sides get no feature rows.  Each
present side's vectors are computed on the concatenation of its
utterance spans.
"""

import json
import wave
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Mapping

import numpy as np

from .backends import resolve_backend
from .manifest import MODALITIES, ExtractError, ExtractorManifest, ModelSpec

EMOTIONS = ("Happy", "Excited", "Sad", "Neutral", "Angry", "Frustrated")
_REQUIRED = ("utt_id", "speaker", "t_start", "t_end", "emotion")
_PCM_DTYPES = {1: np.uint8, 2: np.int16, 4: np.int32}


def read_wav(path: Path) -> tuple[np.ndarray, int]:
    """Load a PCM wav as mono float64 in [-1, 1]."""
    try:
        with wave.open(str(path), "rb") as fh:
            width = fh.getsampwidth()
            if width not in _PCM_DTYPES:
                raise ExtractError(f"unreadable audio {path}: {width * 8}-bit PCM unsupported")
            raw = fh.readframes(fh.getnframes())
            channels, rate = fh.getnchannels(), fh.getframerate()
    except (OSError, wave.Error, EOFError) as exc:
        raise ExtractError(f"unreadable audio {path}: {exc}")
    data = np.frombuffer(raw, dtype=_PCM_DTYPES[width]).astype(np.float64)
    if width == 1:
        data -= 128.0  # 8-bit PCM is unsigned
    data /= float(2 ** (8 * width - 1))
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    return data, rate


def load_transcript(path: Path) -> tuple[str, list[dict]]:
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ExtractError(f"transcript not found: {path}")
    except json.JSONDecodeError as exc:
        raise ExtractError(f"{path}: invalid JSON: {exc.msg}")
    conv_id = obj.get("conv_id")
    utts = obj.get("utterances")
    if not conv_id or not isinstance(utts, list) or not utts:
        raise ExtractError(f"{path}: need conv_id and a non-empty utterances list")
    last_start = -np.inf
    for u in utts:
        for key in _REQUIRED:
            if key not in u:
                raise ExtractError(f"{path}: utterance missing {key!r}")
        if u["emotion"] not in EMOTIONS:
            raise ExtractError(
                f"{path}: {u['utt_id']}: emotion {u['emotion']!r} not one of {list(EMOTIONS)}"
            )
        if not (float(u["t_start"]) < float(u["t_end"])):
            raise ExtractError(f"{path}: {u['utt_id']}: need t_start < t_end")
        if float(u["t_start"]) < last_start:
            raise ExtractError(f"{path}: utterances out of time order at {u['utt_id']}")
        last_start = float(u["t_start"])
    speakers = {u["speaker"] for u in utts}
    if len(speakers) != 2:
        raise ExtractError(f"{path}: found {len(speakers)} speaker tags, need 2")
    return str(conv_id), utts


def _span(samples: np.ndarray, rate: int, u: dict, conv_id: str) -> np.ndarray:
    t0, t1 = float(u["t_start"]), float(u["t_end"])
    duration = len(samples) / rate
    if t1 > duration + 1e-6:
        raise ExtractError(
            f"transcript/segment misalignment in {conv_id}: {u['utt_id']} ends at "
            f"{t1:.3f}s but the audio lasts {duration:.3f}s"
        )
    return samples[int(round(t0 * rate)) : int(round(t1 * rate))]


def _runs(utts: list[dict]) -> list[list[dict]]:
    runs: list[list[dict]] = []
    for u in utts:
        if runs and runs[-1][-1]["speaker"] == u["speaker"]:
            runs[-1].append(u)
        else:
            runs.append([u])
    return runs


def extract_conversation(
    conv_dir: str, models: Mapping[str, ModelSpec]
) -> tuple[str, list[dict], dict[str, dict[tuple[str, int, int], np.ndarray]]]:
    """Pure per-conversation worker: returns (conv_id, records, rows)."""
    conv_dir = Path(conv_dir)
    conv_id, utts = load_transcript(conv_dir / "transcript.json")
    samples, rate = read_wav(conv_dir / "audio.wav")
    encoders = {m: resolve_backend(m, models[m].id) for m in MODALITIES}

    records = []
    for u in utts:
        _span(samples, rate, u, conv_id)  # misalignment surfaces before any write
        avd = None
        if all(key in u for key in ("activation", "valence", "dominance")):
            avd = [float(u["activation"]), float(u["valence"]), float(u["dominance"])]
        records.append(
            {
                "conv_id": conv_id,
                "utt_id": u["utt_id"],
                "speaker": u["speaker"],
                "t_start": float(u["t_start"]),
                "t_end": float(u["t_end"]),
                "text": u.get("text"),
                "emotion": u["emotion"],
                "avd": avd,
            }
        )

    rows: dict[str, dict[tuple[str, int, int], np.ndarray]] = {m: {} for m in MODALITIES}
    runs = _runs(utts)
    for i in range(0, len(runs), 2):
        turn = i // 2
        for slot, run in enumerate(runs[i : i + 2]):
            where = f"{conv_id} turn {turn} slot {slot}"
            text = " ".join(u.get("text") or "" for u in run).strip()
            audio = np.concatenate([_span(samples, rate, u, conv_id) for u in run])
            key = (conv_id, turn, slot)
            rows["text"][key] = encoders["text"].encode(text)
            rows["audio"][key] = encoders["audio"].encode(audio, rate, where)
            rows["speaker"][key] = encoders["speaker"].encode(audio, rate, where)
    for m in MODALITIES:
        for key, vec in rows[m].items():
            if len(vec) != models[m].dim:
                raise ExtractError(
                    f"dim mismatch versus manifest: {m} backend produced "
                    f"{len(vec)} dims for {key}, declared {models[m].dim}"
                )
    return conv_id, records, rows


def _write_features_csv(path: Path, rows: dict, dim: int) -> None:
    keys = sorted(rows.keys())
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["conv_id", "turn", "slot"] + [f"f{i}" for i in range(dim)]))
        fh.write("\n")
        for conv_id, turn, slot in keys:
            vec = rows[(conv_id, turn, slot)]
            fh.write(f"{conv_id},{turn},{slot},")
            fh.write(",".join(repr(float(v)) for v in vec))
            fh.write("\n")


def extract_all(manifest: ExtractorManifest, jobs: int = 1) -> dict:
    """Extract every conversation and write the declared output files."""
    manifest.validate()
    for m in MODALITIES:
        resolve_backend(m, manifest.models[m].id)  # fail before touching audio
    conv_dirs = [str(d) for d in manifest.conversation_dirs()]

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            payloads = list(pool.map(extract_conversation, conv_dirs,
                                     [manifest.models] * len(conv_dirs)))
    else:
        payloads = [extract_conversation(d, manifest.models) for d in conv_dirs]

    seen = set()
    for conv_id, _, _ in payloads:
        if conv_id in seen:
            raise ExtractError(f"conversation id {conv_id!r} appears in two asset dirs")
        seen.add(conv_id)
    payloads.sort(key=lambda p: p[0])

    manifest.out_corpus.parent.mkdir(parents=True, exist_ok=True)
    with manifest.out_corpus.open("w", encoding="utf-8", newline="\n") as fh:
        for _, records, _ in payloads:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
    merged = {m: {} for m in MODALITIES}
    for _, _, rows in payloads:
        for m in MODALITIES:
            merged[m].update(rows[m])
    for m in MODALITIES:
        manifest.out_features[m].parent.mkdir(parents=True, exist_ok=True)
        _write_features_csv(manifest.out_features[m], merged[m], manifest.models[m].dim)

    return {
        "conversations": len(payloads),
        "utterances": sum(len(records) for _, records, _ in payloads),
        "rows": {m: len(merged[m]) for m in MODALITIES},
        "models": {m: manifest.models[m].id for m in MODALITIES},
    }
