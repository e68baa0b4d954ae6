"""Stacking forecaster: learner specs, fold hygiene, determinism, accuracy."""

import pickle

import numpy as np
import pytest

from erfc.corpus import Scheme
from erfc.features import MASKED, Example, WindowConfig
from erfc.model import (
    VALID_SPEC_FORMS,
    BaseLearner,
    StackedForecaster,
    default_learner,
    derive_seed,
    fold_of_conv,
    train,
)


def nearest_centroid(X, centers):
    """Reference decision rule for isotropic Gaussian blobs: the Bayes
    classifier assigns each row to its closest center."""
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def blob_examples(rng, n_examples, centers, noise=0.3, prefix="Ses01_c", per_conv=6):
    """k=0 examples: x = [center[l0], center[l1]] + noise, targets [[l0],[l1]]."""
    C, d = centers.shape
    out = []
    for i in range(n_examples):
        l0, l1 = rng.integers(0, C, size=2)
        x = np.concatenate([centers[l0], centers[l1]]) + noise * rng.normal(size=2 * d)
        out.append(
            Example(
                conv_id=f"{prefix}{i // per_conv:03d}",
                t=i % per_conv,
                x=x,
                targets=np.array([[l0], [l1]], dtype=np.int64),
            )
        )
    return out


SIX_CFG = WindowConfig.uniform(0, 0)
CENTERS = 5.0 * np.eye(6)


class TestSeedsAndFolds:
    def test_derive_seed_deterministic(self):
        assert derive_seed(7, 1, 2, 3) == derive_seed(7, 1, 2, 3)

    def test_derive_seed_field_sensitive(self):
        seen = {derive_seed(7, a, b) for a in range(4) for b in range(4)}
        assert len(seen) == 16

    def test_derive_seed_masks_root(self):
        assert derive_seed(2**40 + 5, 1) == derive_seed(5, 1)

    def test_fold_range_and_determinism(self):
        for i in range(50):
            f = fold_of_conv(f"Ses01_c{i}", 3, 5)
            assert 0 <= f < 5
            assert f == fold_of_conv(f"Ses01_c{i}", 3, 5)

    def test_folds_roughly_balanced(self):
        counts = np.bincount(
            [fold_of_conv(f"Ses01_c{i:04d}", 0, 5) for i in range(2000)], minlength=5
        )
        assert counts.min() > 300

    def test_fold_depends_on_seed(self):
        a = [fold_of_conv(f"c{i}", 0, 5) for i in range(40)]
        b = [fold_of_conv(f"c{i}", 1, 5) for i in range(40)]
        assert a != b


class TestLearnerSpecs:
    @pytest.mark.parametrize("spec", ["rf:20:4", "logreg:1.0", "stump-boost:10"])
    def test_valid_specs_construct(self, spec):
        learner = default_learner(spec, seed=0, n_classes=4)
        assert learner.identifier == spec and learner.n_classes == 4

    @pytest.mark.parametrize(
        "spec",
        ["rf", "rf:10", "rf:a:b", "svm:3", "logreg:0", "logreg:-2", "stump-boost:x", ""],
    )
    def test_invalid_specs_rejected(self, spec):
        with pytest.raises(ValueError) as err:
            default_learner(spec, seed=0, n_classes=4)
        for form in VALID_SPEC_FORMS:
            assert form in str(err.value)

    def test_proba_covers_unseen_classes(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(40, 3))
        y = np.where(X[:, 0] > 0, 2, 5)  # only classes 2 and 5 observed
        learner = default_learner("logreg:1.0", 0, 6).fit(X, y, seed=1)
        P = learner.predict_proba(X)
        assert P.shape == (40, 6)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(P[:, [0, 1, 3, 4]], 0.0)

    def test_zero_rows_give_uniform(self):
        learner = default_learner("rf:5:3", 0, 4).fit(np.zeros((0, 3)), np.zeros(0), 0)
        np.testing.assert_allclose(learner.predict_proba(np.ones((2, 3))), 0.25)

    def test_single_class_gives_constant(self):
        X = np.zeros((5, 2))
        learner = default_learner("rf:5:3", 0, 4).fit(X, np.full(5, 3), 0)
        P = learner.predict_proba(X)
        np.testing.assert_allclose(P[:, 3], 1.0)
        np.testing.assert_allclose(P[:, :3], 0.0)


class TestTraining:
    def test_beats_noise_on_separable_blobs(self):
        """With well-separated clusters the forecaster should track the
        nearest-centroid rule, which is essentially perfect here."""
        rng = np.random.default_rng(3)
        examples = blob_examples(rng, 240, CENTERS)
        model = train(examples, SIX_CFG, learner_spec="logreg:1.0", seed=0)
        test = blob_examples(rng, 120, CENTERS, prefix="Ses02_c")
        X = np.stack([e.x for e in test])
        truth = np.stack([e.targets.reshape(-1) for e in test])
        _, labels = model.predict_batch(X)
        oracle0 = nearest_centroid(X[:, :6], CENTERS)
        acc = (labels == truth).mean()
        oracle_acc = (oracle0 == truth[:, 0]).mean()
        assert oracle_acc > 0.98  # sanity: blobs really are separable
        assert acc >= 0.9

    def test_empty_training_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train([], SIX_CFG)

    def test_bad_spec_rejected_before_fitting(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="valid forms"):
            train(blob_examples(rng, 12, CENTERS), SIX_CFG, learner_spec="nope:1")

    def test_single_class_target_warns(self):
        rng = np.random.default_rng(1)
        examples = blob_examples(rng, 30, CENTERS)
        for e in examples:
            e.targets[1, 0] = 2  # slot-1 target constant everywhere
        with pytest.warns(UserWarning, match="constant head"):
            model = train(examples, SIX_CFG, learner_spec="logreg:1.0", seed=0)
        P, labels = model.predict_batch(np.stack([e.x for e in examples[:4]]))
        np.testing.assert_allclose(P[:, 1, 2], 1.0)
        assert (labels[:, 1] == 2).all()

    def test_fully_masked_target_predicts_uniform(self):
        rng = np.random.default_rng(2)
        examples = blob_examples(rng, 30, CENTERS)
        for e in examples:
            e.targets[1, 0] = MASKED
        with pytest.warns(UserWarning, match="0 class"):
            model = train(examples, SIX_CFG, learner_spec="logreg:1.0", seed=0)
        P, labels = model.predict_batch(np.stack([e.x for e in examples[:4]]))
        np.testing.assert_allclose(P[:, 1, :], 1.0 / 6)
        assert (labels[:, 1] == 0).all()  # argmax tie resolves to class 0

    def test_masked_rows_excluded_not_fatal(self):
        rng = np.random.default_rng(4)
        examples = blob_examples(rng, 120, CENTERS)
        for e in examples[::3]:
            e.targets[0, 0] = MASKED
        model = train(examples, SIX_CFG, learner_spec="logreg:1.0", seed=0)
        X = np.stack([e.x for e in examples])
        _, labels = model.predict_batch(X)
        kept = np.array([e.targets[0, 0] != MASKED for e in examples])
        truth = np.stack([e.targets.reshape(-1) for e in examples])
        assert (labels[kept, 0] == truth[kept, 0]).mean() > 0.9


class TestDeterminism:
    def test_retrain_bitwise_identical(self):
        rng = np.random.default_rng(7)
        examples = blob_examples(rng, 90, CENTERS)
        X = np.stack([e.x for e in blob_examples(rng, 20, CENTERS, prefix="Ses02_c")])
        runs = []
        for _ in range(2):
            model = train(examples, SIX_CFG, learner_spec="rf:10:4", seed=7)
            runs.append(model.predict_batch(X)[0])
        np.testing.assert_array_equal(runs[0], runs[1])

    def test_example_order_invariance(self):
        rng = np.random.default_rng(8)
        examples = blob_examples(rng, 90, CENTERS)
        shuffled = list(examples)
        np.random.default_rng(0).shuffle(shuffled)
        X = np.stack([e.x for e in blob_examples(rng, 20, CENTERS, prefix="Ses02_c")])
        P1 = train(examples, SIX_CFG, learner_spec="rf:10:4", seed=7).predict_batch(X)[0]
        P2 = train(shuffled, SIX_CFG, learner_spec="rf:10:4", seed=7).predict_batch(X)[0]
        np.testing.assert_array_equal(P1, P2)


@pytest.fixture(scope="module")
def model():
    rng = np.random.default_rng(11)
    return train(
        blob_examples(rng, 90, CENTERS), SIX_CFG, learner_spec="logreg:1.0", seed=3
    )


class TestForecasterStructure:
    def test_level2_width(self, model):
        assert model.level2_input_dim == 12 + 2 * 6

    def test_oof_hygiene_passes(self, model):
        model.assert_oof_hygiene()

    def test_oof_hygiene_detects_violation(self, model):
        conv = model.train_conv_ids[0]
        fold = model.fold_map[conv]
        tampered = StackedForecaster(
            cfg=model.cfg,
            learner_spec=model.learner_spec,
            seed=model.seed,
            oof_folds=model.oof_folds,
            x_dim=model.x_dim,
            level1=model.level1,
            level2=model.level2,
            fold_map=model.fold_map,
            fold_train_convs={
                **model.fold_train_convs,
                fold: model.fold_train_convs[fold] + (conv,),
            },
            train_conv_ids=model.train_conv_ids,
        )
        with pytest.raises(AssertionError, match="OOF violation"):
            tampered.assert_oof_hygiene()

    def test_dim_mismatch_rejected(self, model):
        with pytest.raises(ValueError, match="dimension mismatch"):
            model.predict_batch(np.zeros((2, 5)))

    def test_predict_shapes_and_argmax(self, model):
        pred = model.predict(np.zeros(12))
        assert pred.probs.shape == (2, 1, 6)
        assert pred.labels.shape == (2, 1)
        np.testing.assert_array_equal(pred.labels, np.argmax(pred.probs, axis=2))

    def test_probability_rows_normalized(self, model):
        rng = np.random.default_rng(0)
        P, _ = model.predict_batch(rng.normal(size=(8, 12)))
        np.testing.assert_allclose(P.sum(axis=2), 1.0, atol=1e-9)

    def test_save_load_round_trip(self, model, tmp_path):
        path = tmp_path / "model.pkl"
        model.save(path)
        loaded = StackedForecaster.load(path)
        rng = np.random.default_rng(5)
        X = rng.normal(size=(6, 12))
        np.testing.assert_array_equal(
            model.predict_batch(X)[0], loaded.predict_batch(X)[0]
        )
        assert loaded.cfg == model.cfg
        assert loaded.fold_map == model.fold_map

    def test_foreign_pickle_rejected(self, tmp_path):
        path = tmp_path / "junk.pkl"
        with path.open("wb") as fh:
            pickle.dump({"format": "something-else"}, fh)
        with pytest.raises(ValueError, match="format tag"):
            StackedForecaster.load(path)
