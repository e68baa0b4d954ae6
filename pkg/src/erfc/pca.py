"""Principal component reduction for the audio and speaker modalities.

Fitting uses the SVD of the centered data matrix (equivalent to the
eigendecomposition of the sample covariance but stable for wide matrices
such as 6373-dim audio functionals).  Components carry a deterministic
sign convention: the largest-magnitude entry of each component is
positive.  Models record the conversation ids they were fit on so the
evaluator can assert train/test disjointness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class PcaModel:
    """Mean vector, orthonormal components (rows) and per-component variance."""

    mean: np.ndarray  # (D,)
    components: np.ndarray  # (n_components, D)
    explained_variance: np.ndarray  # (n_components,), non-increasing
    fit_conv_ids: tuple[str, ...] = field(default_factory=tuple)

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def input_dim(self) -> int:
        return self.components.shape[1]


def fit_pca(X: np.ndarray, n_components: int, seed: int = 0, fit_conv_ids=()) -> PcaModel:
    """Fit a PCA model on training rows X (N, D).

    ``seed`` is part of the contract for interchangeability with randomized
    solvers; the exact SVD used here is deterministic and ignores it.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    n, d = X.shape
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    if n < 2:
        raise ValueError(f"need at least 2 rows to fit PCA, got {n}")
    if not (1 <= n_components <= min(n - 1, d)):
        raise ValueError(
            f"n_components={n_components} out of range [1, {min(n - 1, d)}] for X {X.shape}"
        )
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    components = vt[:n_components]
    explained = (s[:n_components] ** 2) / (n - 1)
    # Sign convention: largest-magnitude entry of each component positive.
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(
        mean=mean,
        components=components,
        explained_variance=explained,
        fit_conv_ids=tuple(sorted(set(fit_conv_ids))),
    )


def transform_pca(model: PcaModel, x: np.ndarray) -> np.ndarray:
    """Project a vector (D,) or matrix (N, D) onto the fitted components."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ValueError(
            f"dimension mismatch: vector has {x.shape[-1]}, model expects {model.input_dim}"
        )
    return (x - model.mean) @ model.components.T


def reconstruct_pca(model: PcaModel, z: np.ndarray) -> np.ndarray:
    """Map reduced coordinates back to the original space (rank-n approx)."""
    return z @ model.components + model.mean


def save_pca(model: PcaModel, path: str | Path) -> None:
    np.savez(
        path,
        mean=model.mean,
        components=model.components,
        explained_variance=model.explained_variance,
        fit_conv_ids=json.dumps(list(model.fit_conv_ids)),
    )


def load_pca(path: str | Path) -> PcaModel:
    data = np.load(path, allow_pickle=False)
    return PcaModel(
        mean=data["mean"],
        components=data["components"],
        explained_variance=data["explained_variance"],
        fit_conv_ids=tuple(json.loads(str(data["fit_conv_ids"]))),
    )
