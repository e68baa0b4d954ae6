"""Two-level stacking forecaster with per-target heads.

Targets are indexed j = slot * (k+1) + horizon for slot in {0, 1} and
horizon in 0..k.  Level 1 trains one head per target on the raw example
vector; level 2 trains one head per target on the raw vector concatenated
with *out-of-fold* level-1 probability vectors for all targets, so either
speaker's level-1 beliefs can inform any target's final head.  Folds are
assigned per conversation by a salted hash of the conv_id, which makes
training invariant to example order.

All randomness derives from the root seed through a counter scheme:
``derive_seed(seed, level, target, fold)`` feeds ``numpy.SeedSequence``,
so per-head seeds are independent of execution order and a parallel
training schedule produces bit-identical results to a sequential one.

Model artifacts serialize to a single pickle file tagged ``erfc-model/1``.
"""

from __future__ import annotations

import hashlib
import pickle
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.ensemble import GradientBoostingClassifier, RandomForestClassifier
from sklearn.linear_model import LogisticRegression

from .features import MASKED, Example, WindowConfig

MODEL_FORMAT = "erfc-model/1"
DEFAULT_LEARNER_SPEC = "rf:100:12"
VALID_SPEC_FORMS = ("rf:<n_trees>:<max_depth>", "logreg:<l2>", "stump-boost:<rounds>")


def derive_seed(root: int, *fields: int) -> int:
    """Counter-based seed derivation; stable across platforms and order."""
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF, *[int(f) for f in fields]])
    return int(ss.generate_state(1)[0])


def fold_of_conv(conv_id: str, seed: int, n_folds: int) -> int:
    """Deterministic fold assignment by salted conv_id hash."""
    digest = hashlib.sha256(f"{seed}:{conv_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % n_folds


class BaseLearner:
    """Seeded classifier head producing full-width probability rows.

    ``fit`` handles the degenerate cases itself: zero training rows give a
    uniform head, a single observed class gives a constant head.  Rows of
    ``predict_proba`` cover all ``n_classes`` columns even when the
    training labels only touched a subset.
    """

    def __init__(self, identifier: str, factory, n_classes: int):
        self.identifier = identifier
        self._factory = factory
        self.n_classes = n_classes
        self._est = None
        self._const_class: int | None = None
        self._uniform = False

    def fit(self, X: np.ndarray, y: np.ndarray, seed: int) -> "BaseLearner":
        y = np.asarray(y, dtype=np.int64)
        classes = np.unique(y)
        if len(classes) == 0:
            self._uniform = True
        elif len(classes) == 1:
            self._const_class = int(classes[0])
        else:
            self._est = self._factory(seed)
            self._est.fit(X, y)
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n = X.shape[0]
        P = np.zeros((n, self.n_classes))
        if self._uniform:
            P[:] = 1.0 / self.n_classes
        elif self._const_class is not None:
            P[:, self._const_class] = 1.0
        else:
            P[:, self._est.classes_] = self._est.predict_proba(X)
        return P

    def __getstate__(self):
        # The factory is a fit-time closure; saved heads only predict.
        return {**self.__dict__, "_factory": None}


def default_learner(spec: str, seed: int, n_classes: int) -> BaseLearner:
    """Construct the named base learner (default ``rf:100:12``).

    ``seed`` is bound at fit time; the value passed here only names the
    head for reporting.
    """
    parts = spec.split(":")
    try:
        if parts[0] == "rf" and len(parts) == 3:
            n_trees, max_depth = int(parts[1]), int(parts[2])
            factory = lambda s: RandomForestClassifier(  # noqa: E731
                n_estimators=n_trees, max_depth=max_depth, random_state=s, n_jobs=1
            )
        elif parts[0] == "logreg" and len(parts) == 2:
            l2 = float(parts[1])
            if l2 <= 0:
                raise ValueError("l2 strength must be > 0")
            factory = lambda s: LogisticRegression(  # noqa: E731
                C=1.0 / l2, max_iter=1000, random_state=s
            )
        elif parts[0] == "stump-boost" and len(parts) == 2:
            rounds = int(parts[1])
            factory = lambda s: GradientBoostingClassifier(  # noqa: E731
                n_estimators=rounds, max_depth=1, random_state=s
            )
        else:
            raise ValueError
    except ValueError:
        raise ValueError(
            f"unknown learner spec {spec!r}; valid forms: {', '.join(VALID_SPEC_FORMS)}"
        )
    return BaseLearner(spec, factory, n_classes)


@dataclass
class Prediction:
    """Per-target distributions and argmax labels for one example."""

    probs: np.ndarray  # (2, k+1, C)
    labels: np.ndarray  # (2, k+1) int; argmax ties go to the lowest class


def _canonical_order(examples: Sequence[Example]) -> list[Example]:
    return sorted(examples, key=lambda e: (e.conv_id, e.t))


class StackedForecaster:
    """Trained two-level ensemble: level-1 heads, OOF-stacked level-2 heads."""

    def __init__(
        self,
        cfg: WindowConfig,
        learner_spec: str,
        seed: int,
        oof_folds: int,
        x_dim: int,
        level1: list[BaseLearner],
        level2: list[BaseLearner],
        fold_map: dict[str, int],
        fold_train_convs: dict[int, tuple[str, ...]],
        train_conv_ids: tuple[str, ...],
    ):
        self.cfg = cfg
        self.learner_spec = learner_spec
        self.seed = seed
        self.oof_folds = oof_folds
        self.x_dim = x_dim
        self.level1 = level1
        self.level2 = level2
        self.fold_map = fold_map
        self.fold_train_convs = fold_train_convs
        self.train_conv_ids = train_conv_ids

    @property
    def n_classes(self) -> int:
        return self.cfg.scheme.n_classes

    @property
    def n_targets(self) -> int:
        return self.cfg.n_targets

    @property
    def level2_input_dim(self) -> int:
        return self.x_dim + self.n_targets * self.n_classes

    def assert_oof_hygiene(self) -> None:
        """Every level-2 training row's stacked features came from level-1
        models that never saw its conversation."""
        for conv in self.train_conv_ids:
            fold = self.fold_map[conv]
            if conv in self.fold_train_convs[fold]:
                raise AssertionError(
                    f"OOF violation: {conv!r} fed level-1 models of its own fold {fold}"
                )

    def predict_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Probabilities (N, n_targets, C) and labels (N, n_targets) for rows X."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.x_dim:
            raise ValueError(
                f"dimension mismatch: x has {X.shape[1]} features, model expects {self.x_dim}"
            )
        n, C = X.shape[0], self.n_classes
        stacked = np.zeros((n, self.n_targets * C))
        for j, head in enumerate(self.level1):
            stacked[:, j * C : (j + 1) * C] = head.predict_proba(X)
        Z = np.hstack([X, stacked])
        probs = np.zeros((n, self.n_targets, C))
        for j, head in enumerate(self.level2):
            probs[:, j, :] = head.predict_proba(Z)
        labels = np.argmax(probs, axis=2)
        return probs, labels

    def predict(self, x: np.ndarray) -> Prediction:
        """Predict all 2*(k+1) targets for a single example vector."""
        probs, labels = self.predict_batch(np.asarray(x)[None, :])
        k1 = self.cfg.k + 1
        return Prediction(
            probs=probs[0].reshape(2, k1, self.n_classes),
            labels=labels[0].reshape(2, k1),
        )

    def save(self, path: str | Path) -> None:
        payload = {
            "format": MODEL_FORMAT,
            "window": self.cfg.to_dict(),
            "classes": list(self.cfg.scheme.classes),
            "learner_spec": self.learner_spec,
            "seed": self.seed,
            "oof_folds": self.oof_folds,
            "x_dim": self.x_dim,
            "fold_map": self.fold_map,
            "fold_train_convs": self.fold_train_convs,
            "train_conv_ids": self.train_conv_ids,
            "level1": self.level1,
            "level2": self.level2,
        }
        with Path(path).open("wb") as fh:
            pickle.dump(payload, fh)

    @classmethod
    def load(cls, path: str | Path) -> "StackedForecaster":
        with Path(path).open("rb") as fh:
            payload = pickle.load(fh)
        if payload.get("format") != MODEL_FORMAT:
            raise ValueError(
                f"not an {MODEL_FORMAT} artifact: format tag {payload.get('format')!r}"
            )
        return cls(
            cfg=WindowConfig.from_dict(payload["window"]),
            learner_spec=payload["learner_spec"],
            seed=payload["seed"],
            oof_folds=payload["oof_folds"],
            x_dim=payload["x_dim"],
            level1=payload["level1"],
            level2=payload["level2"],
            fold_map=payload["fold_map"],
            fold_train_convs=payload["fold_train_convs"],
            train_conv_ids=payload["train_conv_ids"],
        )


def _fit_head(spec: str, n_classes: int, X, y, mask, seed: int) -> BaseLearner:
    head = default_learner(spec, seed, n_classes)
    head.fit(X[mask], y[mask], seed)
    return head


def train(
    examples: Sequence[Example],
    cfg: WindowConfig,
    learner_spec: str = DEFAULT_LEARNER_SPEC,
    seed: int = 0,
    oof_folds: int = 5,
) -> StackedForecaster:
    """Train the stacking forecaster on built examples.

    Level-2 training features are the example vector concatenated with
    K-fold out-of-fold level-1 probabilities (folds split by conversation);
    masked targets are excluded from the affected head's training rows.
    """
    if not examples:
        raise ValueError("cannot train on an empty example list")
    default_learner(learner_spec, 0, cfg.scheme.n_classes)  # validate spec early
    examples = _canonical_order(examples)
    C = cfg.scheme.n_classes
    n_targets = cfg.n_targets
    X = np.stack([e.x for e in examples])
    # targets as a flat (N, n_targets) matrix, j = slot * (k+1) + horizon
    Y = np.stack([e.targets.reshape(-1) for e in examples])
    N = X.shape[0]

    for j in range(n_targets):
        observed = np.unique(Y[:, j][Y[:, j] != MASKED])
        if len(observed) < 2:
            warnings.warn(
                f"target {j} has {len(observed)} class(es) in training data; "
                "training a degenerate constant head",
                stacklevel=2,
            )

    conv_ids = sorted({e.conv_id for e in examples})
    fold_map = {c: fold_of_conv(c, seed, oof_folds) for c in conv_ids}
    row_fold = np.array([fold_map[e.conv_id] for e in examples])

    oof = np.zeros((N, n_targets * C))
    fold_train_convs: dict[int, tuple[str, ...]] = {}
    for f in range(oof_folds):
        holdout = row_fold == f
        fold_train_convs[f] = tuple(c for c in conv_ids if fold_map[c] != f)
        if not holdout.any():
            continue
        train_rows = ~holdout
        for j in range(n_targets):
            mask = train_rows & (Y[:, j] != MASKED)
            head = _fit_head(learner_spec, C, X, Y[:, j], mask, derive_seed(seed, 1, j, f))
            oof[holdout, j * C : (j + 1) * C] = head.predict_proba(X[holdout])

    Z = np.hstack([X, oof])
    level2 = []
    for j in range(n_targets):
        mask = Y[:, j] != MASKED
        level2.append(
            _fit_head(learner_spec, C, Z, Y[:, j], mask, derive_seed(seed, 2, j, 0))
        )

    # Full-data level-1 heads used at inference time.
    level1 = []
    for j in range(n_targets):
        mask = Y[:, j] != MASKED
        level1.append(
            _fit_head(
                learner_spec, C, X, Y[:, j], mask, derive_seed(seed, 1, j, oof_folds)
            )
        )

    return StackedForecaster(
        cfg=cfg,
        learner_spec=learner_spec,
        seed=seed,
        oof_folds=oof_folds,
        x_dim=X.shape[1],
        level1=level1,
        level2=level2,
        fold_map=fold_map,
        fold_train_convs=fold_train_convs,
        train_conv_ids=tuple(conv_ids),
    )
