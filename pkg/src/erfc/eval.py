"""Session splits, accuracy metrics, confusion matrices and the E1-E6 grid.

Accuracies are percentages pooled over both speakers.  ``acc_overall`` is
defined as ``(acc_current + k * acc_future_avg) / (k + 1)`` exactly, which
equals the unweighted mean of the per-horizon accuracies; display values
round half away from zero to one decimal.

The grid runner executes one full pipeline per experiment spec (build,
train, evaluate) and emits ``report.json`` and ``confusion.csv`` per spec
plus ``tables.md`` and ``horizons.csv`` for the whole run.  Specs may run
in parallel processes; every worker is internally seeded, and report
assembly sorts by spec id, so the emitted bytes do not depend on the
parallelism level.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .corpus import Conversation, FeatureStore, Scheme, load_features, load_utterances, session_of
from .features import (
    MASKED,
    MODALITIES,
    Example,
    WindowConfig,
    build_examples,
    dataset_meta,
    example_dim,
)
from .model import StackedForecaster, derive_seed, train
from .pca import PcaModel, fit_pca
from .turns import Turn, assemble_corpus

MODES = ("teacher-forced", "autoregressive")


class EvalError(ValueError):
    """Split or metric computation failure."""


@dataclass(frozen=True)
class ExperimentSpec:
    """One grid entry: label scheme, AVD usage, context width."""

    id: str
    scheme: Scheme
    use_avd: bool
    w: int

    def window(self, k: int) -> WindowConfig:
        return WindowConfig.uniform(self.w, k, use_avd=self.use_avd, scheme=self.scheme)


DEFAULT_GRID: dict[str, ExperimentSpec] = {
    "E1": ExperimentSpec("E1", Scheme.SIX, True, 0),
    "E2": ExperimentSpec("E2", Scheme.SIX, True, 1),
    "E3": ExperimentSpec("E3", Scheme.SIX, True, 2),
    "E4": ExperimentSpec("E4", Scheme.SIX, True, 3),
    "E5": ExperimentSpec("E5", Scheme.SIX, False, 3),
    "E6": ExperimentSpec("E6", Scheme.FOUR, True, 3),
}


def parse_spec_ids(text: str) -> list[ExperimentSpec]:
    specs = []
    for token in text.split(","):
        token = token.strip()
        if token not in DEFAULT_GRID:
            raise EvalError(
                f"unknown experiment spec {token!r}; known: {', '.join(DEFAULT_GRID)}"
            )
        specs.append(DEFAULT_GRID[token])
    return specs


# ---------------------------------------------------------------------------
# Splits


@dataclass(frozen=True)
class Split:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]


def split_sessions(
    conversations: Iterable[Conversation | str],
    seed: int = 0,
    holdout: float = 0.10,
    overrides: Optional[Mapping[str, int]] = None,
) -> Split:
    """Last session is the test set; a seeded conversation holdout of the
    remaining sessions is the validation set.  Membership depends only on
    (conv_id, seed), never on input order."""
    ids = sorted(c if isinstance(c, str) else c.conv_id for c in conversations)
    if not ids:
        raise EvalError("no conversations to split")
    sessions = {cid: session_of(cid, overrides) for cid in ids}
    test_session = max(sessions.values())
    test = tuple(c for c in ids if sessions[c] == test_session)
    pool = [c for c in ids if sessions[c] != test_session]
    if not pool:
        raise EvalError("no test session: all conversations share one session")
    n_val = math.ceil(holdout * len(pool))
    ranked = sorted(
        pool, key=lambda c: hashlib.sha256(f"val:{seed}:{c}".encode()).hexdigest()
    )
    validation = tuple(sorted(ranked[:n_val]))
    train_ids = tuple(sorted(ranked[n_val:]))
    return Split(train=train_ids, validation=validation, test=test)


# ---------------------------------------------------------------------------
# Metrics


def display_round(x: float) -> str:
    """One-decimal display value, ties rounded away from zero."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def _horizon_accuracy(preds: np.ndarray, targets: np.ndarray, h: int, slots, required=True):
    mask = targets[:, slots, h] != MASKED
    if not mask.any():
        if required:
            raise EvalError(f"empty horizon: no unmasked targets at horizon {h}")
        return None  # a single speaker may have nothing unmasked here
    hit = preds[:, slots, h][mask] == targets[:, slots, h][mask]
    return 100.0 * float(np.mean(hit))


def compute_metrics(preds: np.ndarray, targets: np.ndarray, k: int) -> dict:
    """Accuracy summary for aligned (N, 2, k+1) prediction/target arrays.

    Keys: acc_per_horizon, acc_current, acc_future_avg (None when k=0),
    acc_overall, per-speaker horizon curves, n_predictions.
    """
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if preds.shape != targets.shape or preds.ndim != 3 or preds.shape[1] != 2:
        raise EvalError(f"prediction/target shape mismatch: {preds.shape} vs {targets.shape}")
    if preds.shape[2] != k + 1:
        raise EvalError(f"expected {k + 1} horizons, got {preds.shape[2]}")
    per_h = [_horizon_accuracy(preds, targets, h, [0, 1]) for h in range(k + 1)]
    acc_current = per_h[0]
    if k > 0:
        acc_future_avg = float(np.sum(per_h[1:]) / k)
        acc_overall = (acc_current + k * acc_future_avg) / (k + 1)
    else:
        acc_future_avg = None
        acc_overall = acc_current
    per_slot = {}
    for slot in (0, 1):
        per_slot[f"slot{slot}"] = [
            _horizon_accuracy(preds, targets, h, [slot], required=False)
            for h in range(k + 1)
        ]
    return {
        "acc_per_horizon": per_h,
        "acc_current": acc_current,
        "acc_future_avg": acc_future_avg,
        "acc_overall": acc_overall,
        "acc_per_horizon_by_speaker": per_slot,
        "n_predictions": int(np.sum(targets != MASKED)),
    }


def confusion_matrix(preds: np.ndarray, targets: np.ndarray, n_classes: int) -> np.ndarray:
    """Row = true class, column = predicted; pooled over speakers and
    horizons, masked targets excluded."""
    preds = np.asarray(preds).reshape(-1)
    targets = np.asarray(targets).reshape(-1)
    keep = targets != MASKED
    M = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(M, (targets[keep], preds[keep]), 1)
    return M


def predict_labels(model: StackedForecaster, examples: Sequence[Example]) -> np.ndarray:
    """(N, 2, k+1) predicted label grid for built examples."""
    X = np.stack([e.x for e in examples])
    _, labels = model.predict_batch(X)
    return labels.reshape(len(examples), 2, model.cfg.k + 1)


def targets_of(examples: Sequence[Example]) -> np.ndarray:
    return np.stack([e.targets for e in examples])


def autoregressive_predictions(
    model: StackedForecaster,
    turns_by_conv: Mapping[str, list[Turn]],
    stores: Mapping[str, FeatureStore],
    pca_models: Optional[Mapping[str, PcaModel]],
) -> tuple[list[Example], np.ndarray]:
    """Predict each conversation turn by turn, feeding the model's own
    horizon-0 label predictions back in as emotion history.

    AVD history still comes from the corpus (attributes are not
    predicted).  Returns teacher-built examples (for ground-truth targets)
    aligned with the autoregressive predictions.
    """
    cfg = model.cfg
    all_examples: list[Example] = []
    all_preds: list[np.ndarray] = []
    for conv_id in sorted(turns_by_conv):
        turns = turns_by_conv[conv_id]
        overrides: dict[tuple[str, int, int], int] = {}
        preds = np.empty((len(turns), 2, cfg.k + 1), dtype=np.int64)
        for t in range(len(turns)):
            built = build_examples(
                {conv_id: turns[: t + 1]}, stores, cfg, pca_models, history_labels=overrides
            )
            pred = model.predict(built[-1].x)
            preds[t] = pred.labels
            for slot in (0, 1):
                overrides[(conv_id, t, slot)] = int(pred.labels[slot, 0])
        all_examples.extend(build_examples({conv_id: turns}, stores, cfg, pca_models))
        all_preds.append(preds)
    return all_examples, np.concatenate(all_preds)


def assert_no_leakage(
    model: StackedForecaster,
    pca_models: Optional[Mapping[str, PcaModel]],
    test_ids: Sequence[str],
) -> None:
    """Model and PCA fit id-sets must be disjoint from the test set."""
    test = set(test_ids)
    overlap = test & set(model.train_conv_ids)
    if overlap:
        raise AssertionError(f"model was trained on test conversations: {sorted(overlap)}")
    for modality, pca in (pca_models or {}).items():
        overlap = test & set(pca.fit_conv_ids)
        if overlap:
            raise AssertionError(
                f"{modality} PCA was fit on test conversations: {sorted(overlap)}"
            )


# ---------------------------------------------------------------------------
# Single-spec pipeline


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(
        json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _fit_pca_models(
    stores: Mapping[str, FeatureStore],
    components: Mapping[str, int],
    fit_ids: Sequence[str],
    seed: int,
) -> dict[str, PcaModel]:
    models = {}
    fit_set = set(fit_ids)
    for m_idx, modality in enumerate(MODALITIES):
        if modality not in components:
            continue
        store = stores[modality]
        keys = sorted(k for k in store.keys() if k[0] in fit_set)
        if not keys:
            raise EvalError(f"no {modality} rows from fit conversations to fit PCA on")
        X = store.matrix(keys)
        models[modality] = fit_pca(
            X,
            components[modality],
            seed=derive_seed(seed, 3, m_idx),
            fit_conv_ids=tuple(sorted(fit_set)),
        )
    return models


def load_corpus_bundle(
    corpus_path: str | Path, feature_paths: Mapping[str, str | Path]
) -> tuple[list[Conversation], dict[str, FeatureStore]]:
    conversations = load_utterances(corpus_path)
    stores = {m: load_features(feature_paths[m], m) for m in MODALITIES}
    return conversations, stores


def run_spec(
    spec: ExperimentSpec,
    corpus_path: str,
    feature_paths: Mapping[str, str],
    k: int,
    learner_spec: str,
    seed: int,
    out_dir: Optional[str] = None,
    pca_components: Optional[Mapping[str, int]] = None,
    holdout: float = 0.10,
    mode: str = "teacher-forced",
    session_overrides: Optional[Mapping[str, int]] = None,
) -> dict:
    """Run build/train/evaluate for one experiment spec and return the report."""
    if mode not in MODES:
        raise EvalError(f"unknown mode {mode!r}; expected one of {MODES}")
    try:
        conversations, stores = load_corpus_bundle(corpus_path, feature_paths)
        split = split_sessions(conversations, seed=seed, holdout=holdout, overrides=session_overrides)
        cfg = spec.window(k)
        pca_models = None
        if pca_components:
            pca_models = _fit_pca_models(
                stores, pca_components, split.train + split.validation, seed
            )

        turns_by_conv = assemble_corpus(conversations)
        subset = lambda ids: {c: turns_by_conv[c] for c in ids}  # noqa: E731
        train_ex = build_examples(subset(split.train), stores, cfg, pca_models)
        model = train(train_ex, cfg, learner_spec=learner_spec, seed=seed)
        model.assert_oof_hygiene()
        assert_no_leakage(model, pca_models, split.test)

        def predictions(ids: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray]:
            if mode == "autoregressive":
                ex, preds = autoregressive_predictions(model, subset(ids), stores, pca_models)
            else:
                ex = build_examples(subset(ids), stores, cfg, pca_models)
                preds = predict_labels(model, ex)
            return preds, targets_of(ex)

        val_metrics = compute_metrics(*predictions(split.validation), k)
        test_preds, test_targets = predictions(split.test)
        metrics = compute_metrics(test_preds, test_targets, k)
        metrics["acc_validation"] = val_metrics["acc_overall"]
        confusion = confusion_matrix(test_preds, test_targets, cfg.scheme.n_classes)
    except Exception as exc:
        raise EvalError(f"[{spec.id}] {exc}") from exc

    dims = {m: stores[m].dim for m in MODALITIES}
    if pca_models:
        dims.update({m: p.n_components for m, p in pca_models.items()})
    report = {
        "spec": {"id": spec.id, "scheme": spec.scheme.value, "use_avd": spec.use_avd, "w": spec.w},
        "k": k,
        "learner_spec": learner_spec,
        "seed": seed,
        "mode": mode,
        "split": {"train": split.train, "validation": split.validation, "test": split.test},
        "dataset": dataset_meta(cfg, dims, example_dim(cfg, dims["text"], dims["audio"], dims["speaker"])),
        "n_examples": {
            "train": len(train_ex),
            "validation": int(len(split.validation) and sum(len(turns_by_conv[c]) for c in split.validation)),
            "test": sum(len(turns_by_conv[c]) for c in split.test),
        },
        "metrics": metrics,
        "display": {
            key: (None if metrics[key] is None else display_round(metrics[key]))
            for key in ("acc_current", "acc_future_avg", "acc_overall", "acc_validation")
        },
        "confusion": {
            "classes": list(cfg.scheme.classes),
            "matrix": confusion.tolist(),
        },
    }
    if out_dir is not None:
        spec_dir = Path(out_dir) / spec.id
        spec_dir.mkdir(parents=True, exist_ok=True)
        write_json(spec_dir / "report.json", report)
        _write_confusion_csv(spec_dir / "confusion.csv", cfg.scheme, confusion)
    return report


def _write_confusion_csv(path: Path, scheme: Scheme, confusion: np.ndarray) -> None:
    lines = ["true," + ",".join(scheme.classes)]
    for name, row in zip(scheme.classes, confusion):
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Grid


def _run_spec_args(args: tuple) -> dict:
    return run_spec(*args)


def run_grid(
    specs: Sequence[ExperimentSpec],
    corpus_path: str,
    feature_paths: Mapping[str, str],
    k: int,
    learner_spec: str,
    seed: int,
    out_dir: str | Path,
    jobs: int = 1,
    pca_components: Optional[Mapping[str, int]] = None,
    holdout: float = 0.10,
    mode: str = "teacher-forced",
) -> dict[str, dict]:
    """Run every spec and emit the comparison files.

    Per-spec outputs land in ``out_dir/<spec_id>/``; the grid-level
    ``tables.md`` and ``horizons.csv`` are assembled in sorted spec order
    regardless of completion order, so outputs are byte-identical across
    ``jobs`` settings.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise EvalError(f"duplicate spec ids in grid: {ids}")
    arg_tuples = [
        (
            spec,
            str(corpus_path),
            {m: str(p) for m, p in feature_paths.items()},
            k,
            learner_spec,
            seed,
            str(out),
            dict(pca_components) if pca_components else None,
            holdout,
            mode,
        )
        for spec in specs
    ]
    if jobs > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_spec_args, arg_tuples))
    else:
        results = [_run_spec_args(a) for a in arg_tuples]
    reports = {r["spec"]["id"]: r for r in results}

    (out / "tables.md").write_text(build_tables(reports), encoding="utf-8")
    (out / "horizons.csv").write_text(build_horizons_csv(reports), encoding="utf-8")
    return reports


def _table_row(r: dict) -> str:
    d = r["display"]
    return (
        f"| {r['spec']['id']} | {len(r['confusion']['classes'])} "
        f"| {'yes' if r['spec']['use_avd'] else 'no'} | {r['spec']['w']} "
        f"| {d['acc_validation']} | {d['acc_current']} | {d['acc_future_avg']} "
        f"| {d['acc_overall']} |"
    )


def build_tables(reports: Mapping[str, dict]) -> str:
    """Markdown comparison tables: context windows, AVD ablation, schemes."""
    header = (
        "| Experiment | Classes | AVD | w | Validation | Current turn "
        "| Future turns avg | Overall |\n"
        "| --- | --- | --- | --- | --- | --- | --- | --- |"
    )
    ordered = [reports[i] for i in sorted(reports)]
    lines = ["# Experiment comparison", "", header]
    lines += [_table_row(r) for r in ordered]
    sections = [
        ("Emotion-attribute ablation", ("E4", "E5")),
        ("Label-scheme comparison", ("E4", "E6")),
    ]
    for title, pair in sections:
        if all(p in reports for p in pair):
            lines += ["", f"## {title}", "", header]
            lines += [_table_row(reports[p]) for p in pair]
    return "\n".join(lines) + "\n"


def build_horizons_csv(reports: Mapping[str, dict]) -> str:
    lines = ["spec,horizon,accuracy"]
    for spec_id in sorted(reports):
        per_h = reports[spec_id]["metrics"]["acc_per_horizon"]
        for h, acc in enumerate(per_h):
            lines.append(f"{spec_id},{h},{repr(float(acc))}")
    return "\n".join(lines) + "\n"
