"""Command-line entry point wiring the pipeline stages.

Every subcommand accepts ``--config FILE`` (JSON object keyed by flag
names with dashes as underscores); explicit flags win over config values.
Each output directory receives a ``resolved-config.json`` capturing the
final parameter set, sufficient to re-run the stage.  Exit codes: 0 on
success, 1 on validation errors in the input data, 2 on usage errors.
"""

from __future__ import annotations

import functools
import json
import os
from pathlib import Path

import click
import numpy as np

from . import synth as synthmod
from .corpus import Scheme
from .eval import (
    DEFAULT_GRID,
    autoregressive_predictions,
    load_corpus_bundle,
    parse_spec_ids,
    run_grid,
    run_spec,
    split_sessions,
    write_json,
)
from .features import MASKED, MODALITIES, build_examples, dataset_meta, example_dim, load_dataset, save_dataset, WindowConfig
from .model import DEFAULT_LEARNER_SPEC, StackedForecaster, default_learner, train
from .pca import load_pca, save_pca
from .turns import assemble_corpus

BENCHMARKS = {
    "default": synthmod.benchmark_default,
    "separable": synthmod.benchmark_separable,
    "influence": synthmod.benchmark_influence,
    "parity-avd": synthmod.benchmark_parity_avd,
    "confusable": synthmod.benchmark_confusable,
}


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"--config {path}: {exc}")
    if not isinstance(obj, dict):
        raise click.ClickException(f"--config {path}: expected a JSON object")
    return obj


def _resolve(config: dict, name: str, flag_value, default):
    """Flag beats config beats default."""
    if flag_value is not None:
        return flag_value
    if name in config:
        return config[name]
    return default


def _catch_validation(fn):
    """Input-data problems exit 1 with the offending file/flag named."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (ValueError, OSError, AssertionError, KeyError) as exc:
            raise click.ClickException(str(exc))

    return wrapper


def _write_resolved(out_dir: Path, stage: str, params: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "resolved-config.json", {"stage": stage, **params})


def _feature_paths(text: str, audio: str, speaker: str) -> dict[str, str]:
    return {"text": text, "audio": audio, "speaker": speaker}


def _load_pca_dir(pca_dir: str | None):
    if pca_dir is None:
        return None
    models = {}
    for modality in MODALITIES:
        path = Path(pca_dir) / f"pca_{modality}.npz"
        if path.exists():
            models[modality] = load_pca(path)
    if not models:
        raise click.ClickException(f"--pca-dir {pca_dir}: no pca_<modality>.npz files found")
    return models


def _parse_components(text: str) -> dict[str, int]:
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            modality, n = part.split("=")
            modality = modality.strip()
            if modality not in MODALITIES:
                raise ValueError
            out[modality] = int(n)
        except ValueError:
            raise click.UsageError(
                f"bad --components entry {part!r}; expected <modality>=<n> "
                f"with modality in {MODALITIES}"
            )
    if not out:
        raise click.UsageError("--components is empty")
    return out


@click.group()
@click.version_option(package_name="erfc")
def main():
    """Emotion recognition and forecasting for dyadic conversations."""


# ---------------------------------------------------------------------------


@main.command("synth")
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON parameter file.")
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@click.option("--benchmark", type=click.Choice(sorted(BENCHMARKS)), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--conversations", type=int, default=None)
@click.option("--t-mean", type=float, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--separation", type=float, default=None)
@_catch_validation
def synth_cmd(config_path, out, benchmark, seed, conversations, t_mean, alpha, separation):
    """Generate a synthetic corpus (utterances, features, truth)."""
    config = _load_config(config_path)
    if "p_self" in config:
        base = synthmod.SynthConfig.from_dict(config)
    else:
        name = _resolve(config, "benchmark", benchmark, "default")
        if name not in BENCHMARKS:
            raise click.UsageError(f"unknown --benchmark {name!r}")
        base = BENCHMARKS[name](seed=_resolve(config, "seed", seed, 0))
    d = base.to_dict()
    for key, val in (
        ("seed", seed),
        ("n_conversations", conversations),
        ("t_mean", t_mean),
        ("alpha", alpha),
        ("separation", separation),
    ):
        if val is not None:
            d[key] = val
    cfg = synthmod.SynthConfig.from_dict(d)
    out_dir = Path(out)
    synthmod.generate(cfg, out_dir)
    _write_resolved(out_dir, "synth", {"config": cfg.to_dict(), "out": str(out_dir)})
    click.echo(f"wrote synthetic corpus ({cfg.n_conversations} conversations) to {out_dir}")


# ---------------------------------------------------------------------------


_corpus_opts = [
    click.option("--corpus", required=True, type=click.Path(), help="Utterance JSONL."),
    click.option("--features-text", required=True, type=click.Path()),
    click.option("--features-audio", required=True, type=click.Path()),
    click.option("--features-speaker", required=True, type=click.Path()),
]


def _with_corpus_opts(fn):
    for opt in reversed(_corpus_opts):
        fn = opt(fn)
    return fn


@main.command("fit-pca")
@click.option("--config", "config_path", type=click.Path(), default=None)
@_with_corpus_opts
@click.option("--components", required=True, help='e.g. "audio=4,speaker=4".')
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--holdout", type=float, default=None)
@_catch_validation
def fit_pca_cmd(config_path, corpus, features_text, features_audio, features_speaker, components, out, seed, holdout):
    """Fit per-modality PCA models on train+validation conversations only."""
    from .eval import _fit_pca_models  # shared with the grid pipeline

    config = _load_config(config_path)
    seed = _resolve(config, "seed", seed, 0)
    holdout = _resolve(config, "holdout", holdout, 0.10)
    comps = _parse_components(_resolve(config, "components", components, None))
    conversations, stores = load_corpus_bundle(
        corpus, _feature_paths(features_text, features_audio, features_speaker)
    )
    split = split_sessions(conversations, seed=seed, holdout=holdout)
    models = _fit_pca_models(stores, comps, split.train + split.validation, seed)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for modality, model in models.items():
        save_pca(model, out_dir / f"pca_{modality}.npz")
    _write_resolved(
        out_dir,
        "fit-pca",
        {
            "corpus": corpus,
            "components": comps,
            "seed": seed,
            "holdout": holdout,
            "fit_conversations": sorted(split.train + split.validation),
        },
    )
    click.echo(f"fit PCA for {sorted(models)} on {len(split.train) + len(split.validation)} conversations")


# ---------------------------------------------------------------------------


@main.command("build")
@click.option("--config", "config_path", type=click.Path(), default=None)
@_with_corpus_opts
@click.option("--pca-dir", type=click.Path(), default=None)
@click.option("--out", required=True, type=click.Path())
@click.option("--w", type=int, default=None, help="Context width for all modalities.")
@click.option("--k", type=int, default=None, help="Forecast horizon count.")
@click.option("--scheme", type=click.Choice(["six", "four"]), default=None)
@click.option("--use-avd/--no-avd", "use_avd", default=None)
@_catch_validation
def build_cmd(config_path, corpus, features_text, features_audio, features_speaker, pca_dir, out, w, k, scheme, use_avd):
    """Build the flattened example dataset for every conversation."""
    config = _load_config(config_path)
    scheme_name = _resolve(config, "scheme", scheme, "six")
    if scheme_name not in ("six", "four"):
        raise click.UsageError(f"--scheme must be six or four, got {scheme_name!r}")
    cfg = WindowConfig.uniform(
        w=_resolve(config, "w", w, 3),
        k=_resolve(config, "k", k, 3),
        use_avd=_resolve(config, "use_avd", use_avd, True),
        scheme=Scheme(scheme_name),
    )
    conversations, stores = load_corpus_bundle(
        corpus, _feature_paths(features_text, features_audio, features_speaker)
    )
    pca_models = _load_pca_dir(_resolve(config, "pca_dir", pca_dir, None))
    turns_by_conv = assemble_corpus(conversations)
    examples = build_examples(turns_by_conv, stores, cfg, pca_models)
    dims = {m: (pca_models[m].n_components if pca_models and m in pca_models else stores[m].dim) for m in MODALITIES}
    meta = dataset_meta(cfg, dims, example_dim(cfg, dims["text"], dims["audio"], dims["speaker"]))
    out_dir = Path(out)
    save_dataset(examples, meta, out_dir)
    _write_resolved(
        out_dir,
        "build",
        {
            "corpus": corpus,
            "pca_dir": pca_dir,
            "window": cfg.to_dict(),
            "n_examples": len(examples),
        },
    )
    click.echo(f"built {len(examples)} examples ({meta['x_dim']} dims) in {out_dir}")


# ---------------------------------------------------------------------------


@main.command("train")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--dataset", required=True, type=click.Path(), help="Directory from `build`.")
@click.option("--out", required=True, type=click.Path(), help="Output directory for model.pkl.")
@click.option("--learner", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--holdout", type=float, default=None)
@_catch_validation
def train_cmd(config_path, dataset, out, learner, seed, holdout):
    """Train the stacking forecaster on the dataset's training split."""
    config = _load_config(config_path)
    learner = _resolve(config, "learner", learner, DEFAULT_LEARNER_SPEC)
    seed = _resolve(config, "seed", seed, 0)
    holdout = _resolve(config, "holdout", holdout, 0.10)
    try:
        default_learner(learner, 0, 2)
    except ValueError as exc:
        raise click.UsageError(f"--learner: {exc}")
    examples, cfg, _meta = load_dataset(dataset)
    split = split_sessions({e.conv_id for e in examples}, seed=seed, holdout=holdout)
    train_ex = [e for e in examples if e.conv_id in set(split.train)]
    model = train(train_ex, cfg, learner_spec=learner, seed=seed)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save(out_dir / "model.pkl")
    _write_resolved(
        out_dir,
        "train",
        {
            "dataset": dataset,
            "learner": learner,
            "seed": seed,
            "holdout": holdout,
            "split": {"train": split.train, "validation": split.validation, "test": split.test},
        },
    )
    click.echo(f"trained on {len(train_ex)} examples from {len(split.train)} conversations -> {out_dir / 'model.pkl'}")


# ---------------------------------------------------------------------------


@main.command("evaluate")
@click.option("--config", "config_path", type=click.Path(), default=None)
@_with_corpus_opts
@click.option("--pca-dir", type=click.Path(), default=None)
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["teacher-forced", "autoregressive"]), default=None)
@click.option("--holdout", type=float, default=None)
@_catch_validation
def evaluate_cmd(config_path, corpus, features_text, features_audio, features_speaker, pca_dir, model_path, out, mode, holdout):
    """Evaluate a trained model on the test session; write report files."""
    config = _load_config(config_path)
    mode = _resolve(config, "mode", mode, "teacher-forced")
    holdout = _resolve(config, "holdout", holdout, 0.10)
    mp = Path(model_path)
    if mp.is_dir():
        mp = mp / "model.pkl"
    model = StackedForecaster.load(mp)

    from .eval import (
        assert_no_leakage,
        compute_metrics,
        confusion_matrix,
        predict_labels,
        targets_of,
        _write_confusion_csv,
    )

    conversations, stores = load_corpus_bundle(
        corpus, _feature_paths(features_text, features_audio, features_speaker)
    )
    pca_models = _load_pca_dir(_resolve(config, "pca_dir", pca_dir, None))
    split = split_sessions(conversations, seed=model.seed, holdout=holdout)
    assert_no_leakage(model, pca_models, split.test)
    model.assert_oof_hygiene()
    turns_by_conv = assemble_corpus(conversations)
    cfg = model.cfg

    def predictions(ids):
        sub = {c: turns_by_conv[c] for c in ids}
        if mode == "autoregressive":
            ex, preds = autoregressive_predictions(model, sub, stores, pca_models)
        else:
            ex = build_examples(sub, stores, cfg, pca_models)
            preds = predict_labels(model, ex)
        return preds, targets_of(ex)

    val_metrics = compute_metrics(*predictions(split.validation), cfg.k)
    test_preds, test_targets = predictions(split.test)
    metrics = compute_metrics(test_preds, test_targets, cfg.k)
    metrics["acc_validation"] = val_metrics["acc_overall"]
    confusion = confusion_matrix(test_preds, test_targets, cfg.scheme.n_classes)

    from .eval import display_round

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "model": str(mp),
        "mode": mode,
        "k": cfg.k,
        "learner_spec": model.learner_spec,
        "seed": model.seed,
        "split": {"train": split.train, "validation": split.validation, "test": split.test},
        "metrics": metrics,
        "display": {
            key: (None if metrics[key] is None else display_round(metrics[key]))
            for key in ("acc_current", "acc_future_avg", "acc_overall", "acc_validation")
        },
        "confusion": {"classes": list(cfg.scheme.classes), "matrix": confusion.tolist()},
    }
    write_json(out_dir / "report.json", report)
    _write_confusion_csv(out_dir / "confusion.csv", cfg.scheme, confusion)
    _write_resolved(
        out_dir,
        "evaluate",
        {"corpus": corpus, "model": str(mp), "mode": mode, "holdout": holdout},
    )
    click.echo(
        f"evaluated {metrics['n_predictions']} predictions: "
        f"current {report['display']['acc_current']} overall {report['display']['acc_overall']}"
    )


# ---------------------------------------------------------------------------


@main.command("grid")
@click.option("--config", "config_path", type=click.Path(), default=None)
@_with_corpus_opts
@click.option("--out", required=True, type=click.Path())
@click.option("--specs", type=str, default=None, help='e.g. "E1,E2,E3,E4".')
@click.option("--k", type=int, default=None)
@click.option("--learner", type=str, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=None)
@click.option("--pca", "pca_text", type=str, default=None, help='e.g. "audio=4,speaker=4".')
@click.option("--mode", type=click.Choice(["teacher-forced", "autoregressive"]), default=None)
@click.option("--holdout", type=float, default=None)
@_catch_validation
def grid_cmd(config_path, corpus, features_text, features_audio, features_speaker, out, specs, k, learner, seed, jobs, pca_text, mode, holdout):
    """Run the experiment grid end-to-end and emit comparison tables."""
    config = _load_config(config_path)
    spec_text = _resolve(config, "specs", specs, ",".join(DEFAULT_GRID))
    try:
        spec_list = parse_spec_ids(spec_text)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    k = _resolve(config, "k", k, 3)
    learner = _resolve(config, "learner", learner, DEFAULT_LEARNER_SPEC)
    seed = _resolve(config, "seed", seed, 0)
    jobs = _resolve(config, "jobs", jobs, os.cpu_count() or 1)
    mode = _resolve(config, "mode", mode, "teacher-forced")
    holdout = _resolve(config, "holdout", holdout, 0.10)
    pca_spec = _resolve(config, "pca", pca_text, None)
    pca_components = _parse_components(pca_spec) if pca_spec else None
    try:
        default_learner(learner, 0, 2)
    except ValueError as exc:
        raise click.UsageError(f"--learner: {exc}")

    out_dir = Path(out)
    reports = run_grid(
        spec_list,
        corpus,
        _feature_paths(features_text, features_audio, features_speaker),
        k=k,
        learner_spec=learner,
        seed=seed,
        out_dir=out_dir,
        jobs=jobs,
        pca_components=pca_components,
        holdout=holdout,
        mode=mode,
    )
    _write_resolved(
        out_dir,
        "grid",
        {
            "corpus": corpus,
            "specs": [s.id for s in spec_list],
            "k": k,
            "learner": learner,
            "seed": seed,
            "pca": pca_components,
            "mode": mode,
            "holdout": holdout,
        },
    )
    for spec_id in sorted(reports):
        d = reports[spec_id]["display"]
        click.echo(f"{spec_id}: current {d['acc_current']} overall {d['acc_overall']}")


# ---------------------------------------------------------------------------


@main.command("predict")
@click.option("--config", "config_path", type=click.Path(), default=None)
@_with_corpus_opts
@click.option("--pca-dir", type=click.Path(), default=None)
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--conv", "conv_id", required=True, type=str)
@click.option("--out", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["teacher-forced", "autoregressive"]), default=None)
@_catch_validation
def predict_cmd(config_path, corpus, features_text, features_audio, features_speaker, pca_dir, model_path, conv_id, out, mode):
    """Write per-turn predictions for one conversation as CSV."""
    config = _load_config(config_path)
    mode = _resolve(config, "mode", mode, "teacher-forced")
    mp = Path(model_path)
    if mp.is_dir():
        mp = mp / "model.pkl"
    model = StackedForecaster.load(mp)
    conversations, stores = load_corpus_bundle(
        corpus, _feature_paths(features_text, features_audio, features_speaker)
    )
    pca_models = _load_pca_dir(_resolve(config, "pca_dir", pca_dir, None))
    turns_by_conv = assemble_corpus(conversations)
    if conv_id not in turns_by_conv:
        raise click.ClickException(f"--conv: conversation {conv_id!r} not in {corpus}")
    sub = {conv_id: turns_by_conv[conv_id]}
    cfg = model.cfg
    examples = build_examples(sub, stores, cfg, pca_models)
    if mode == "autoregressive":
        _, labels = autoregressive_predictions(model, sub, stores, pca_models)
        probs = None  # autoregressive path reports labels only
    else:
        X = np.stack([e.x for e in examples])
        p, flat = model.predict_batch(X)
        labels = flat.reshape(len(examples), 2, cfg.k + 1)
        probs = p.reshape(len(examples), 2, cfg.k + 1, model.n_classes)

    classes = cfg.scheme.classes
    lines = ["conv_id,t,slot,horizon,predicted" + "".join(f",p_{c}" for c in classes)]
    for i, e in enumerate(examples):
        for slot in (0, 1):
            for h in range(cfg.k + 1):
                if e.targets[slot, h] == MASKED:
                    continue
                row = f"{e.conv_id},{e.t},{slot},{h},{classes[labels[i, slot, h]]}"
                if probs is not None:
                    row += "".join(f",{repr(float(v))}" for v in probs[i, slot, h])
                else:
                    row += "," * len(classes)
                lines.append(row)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "predictions.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_resolved(
        out_dir,
        "predict",
        {"corpus": corpus, "model": str(mp), "conv": conv_id, "mode": mode},
    )
    click.echo(f"wrote {len(lines) - 1} predictions for {conv_id}")


if __name__ == "__main__":
    main()
