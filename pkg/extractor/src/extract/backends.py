"""Deterministic local embedding backends.

These stand in for heavyweight pretrained extractors while keeping their
output contracts: 768-d text vectors, a 6373-d audio functional set
computed from 30 Hz frames over a 100 ms sliding window, and 512-d
speaker vectors.  Everything is a pure function of the input bytes (no
model downloads, no RNG at extraction time), so extraction is exactly
reproducible and the backend id pinned in the manifest fully describes
the output.  Swapping in real models later means registering a new id
here, nothing else.
"""

import hashlib
import logging
import math

import numpy as np

log = logging.getLogger(__name__)

FRAME_RATE = 30.0  # analysis frames per second
WINDOW_SEC = 0.100  # sliding analysis window length


def _seeded_matrix(tag: str, rows: int, cols: int) -> np.ndarray:
    """Fixed projection keyed to a backend id; same tag, same matrix."""
    seed = int.from_bytes(hashlib.sha256(tag.encode()).digest()[:4], "big")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((rows, cols)) / math.sqrt(cols)


class TextEncoder:
    """Hashed bag-of-words into a fixed 768-d space, L2 normalized."""

    id = "hash-projection-768-v1"
    dim = 768

    def encode(self, text: str | None) -> np.ndarray:
        vec = np.zeros(self.dim)
        for token in (text or "").lower().split():
            token = "".join(ch for ch in token if ch.isalnum())
            if not token:
                continue
            digest = hashlib.sha256(token.encode()).digest()
            idx = int.from_bytes(digest[:4], "big") % self.dim
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec  # empty text stays zero


def _frames(samples: np.ndarray, rate: int, where: str) -> np.ndarray:
    """Slice a span into (n_frames, window) rows at the fixed frame rate."""
    window = max(1, int(round(rate * WINDOW_SEC)))
    hop = max(1, int(round(rate / FRAME_RATE)))
    if len(samples) < window:
        log.warning(
            "%s: span of %d samples is shorter than one %d-sample analysis "
            "window; zero-padding",
            where,
            len(samples),
            window,
        )
        samples = np.pad(samples, (0, window - len(samples)))
    starts = range(0, len(samples) - window + 1, hop)
    return np.stack([samples[s : s + window] for s in starts])


def _band_edges(n_bands: int, n_bins: int) -> np.ndarray:
    # Log-spaced bin edges, coarse at the top like a mel layout.
    edges = np.unique(
        np.round(np.logspace(0, math.log10(n_bins - 1), n_bands + 1)).astype(int)
    )
    while len(edges) < n_bands + 1:  # tiny windows collapse edges; re-widen
        edges = np.append(edges, edges[-1] + 1)
    return edges[: n_bands + 1]


def _lld_matrix(frames: np.ndarray, rate: int) -> np.ndarray:
    """Per-frame low-level descriptors: energy, ZCR, spectral shape, bands."""
    n, window = frames.shape
    spectra = np.abs(np.fft.rfft(frames, axis=1))
    power = spectra**2
    freqs = np.fft.rfftfreq(window, d=1.0 / rate)
    total = power.sum(axis=1) + 1e-12

    rms = np.sqrt((frames**2).mean(axis=1))
    log_e = np.log(rms + 1e-12)
    zcr = (np.diff(np.signbit(frames), axis=1) != 0).mean(axis=1)
    centroid = (power * freqs).sum(axis=1) / total
    spread = np.sqrt((power * (freqs - centroid[:, None]) ** 2).sum(axis=1) / total)
    cum = np.cumsum(power, axis=1)
    rolloff = freqs[np.argmax(cum >= 0.85 * total[:, None], axis=1)]
    flatness = np.exp(np.log(power + 1e-12).mean(axis=1)) / (power.mean(axis=1) + 1e-12)
    flux = np.zeros(n)
    if n > 1:
        flux[1:] = np.linalg.norm(np.diff(spectra, axis=0), axis=1)

    edges = _band_edges(8, spectra.shape[1])
    bands = np.stack(
        [
            np.log(power[:, lo:hi].sum(axis=1) + 1e-12)
            for lo, hi in zip(edges[:-1], edges[1:])
        ],
        axis=1,
    )
    base = np.column_stack([rms, log_e, zcr, centroid, spread, rolloff, flatness, flux])
    return np.hstack([base, bands])  # 16 descriptors


def _functionals(col: np.ndarray) -> list[float]:
    q1, med, q3 = np.percentile(col, [25, 50, 75])
    n = len(col)
    t = np.arange(n)
    slope = 0.0 if n < 2 else float(np.polyfit(t, col, 1)[0])
    delta = np.abs(np.diff(col)).mean() if n > 1 else 0.0
    mean = col.mean()
    std = col.std()
    centered = col - mean
    skew = 0.0 if std < 1e-12 else float((centered**3).mean() / std**3)
    return [
        float(mean), float(std), float(col.min()), float(col.max()),
        float(col.max() - col.min()), float(med), float(q1), float(q3),
        float(q3 - q1), float(col[0]), float(col[-1]), slope, float(delta), skew,
    ]


class AudioEncoder:
    """Frame-level descriptors summarized by functionals, lifted to the
    canonical 6373-d width with a fixed seeded projection."""

    id = "frame-functionals-6373-v1"
    dim = 6373

    def __init__(self):
        self._lift = None  # built on first use; 16 LLDs * 14 functionals wide

    def encode(self, samples: np.ndarray, rate: int, where: str = "span") -> np.ndarray:
        llds = _lld_matrix(_frames(samples, rate, where), rate)
        base = np.array([v for col in llds.T for v in _functionals(col)])
        if self._lift is None:
            self._lift = _seeded_matrix(self.id, self.dim, len(base))
        return self._lift @ base


class SpeakerEncoder:
    """Log band-energy statistics projected to a 512-d voice vector."""

    id = "filterbank-stats-512-v1"
    dim = 512
    n_bands = 24

    def __init__(self):
        self._lift = None

    def encode(self, samples: np.ndarray, rate: int, where: str = "span") -> np.ndarray:
        frames = _frames(samples, rate, where)
        power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
        edges = _band_edges(self.n_bands, power.shape[1])
        bands = np.stack(
            [
                np.log(power[:, lo:hi].sum(axis=1) + 1e-12)
                for lo, hi in zip(edges[:-1], edges[1:])
            ],
            axis=1,
        )
        base = np.concatenate([bands.mean(axis=0), bands.std(axis=0), bands.max(axis=0)])
        if self._lift is None:
            self._lift = _seeded_matrix(self.id, self.dim, len(base))
        vec = self._lift @ base
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


BACKENDS = {
    "text": {TextEncoder.id: TextEncoder},
    "audio": {AudioEncoder.id: AudioEncoder},
    "speaker": {SpeakerEncoder.id: SpeakerEncoder},
}


def resolve_backend(modality: str, model_id: str):
    from .manifest import ExtractError

    known = BACKENDS[modality]
    if model_id not in known:
        raise ExtractError(
            f"unknown {modality} backend {model_id!r}; known: {', '.join(known)}"
        )
    return known[model_id]()
