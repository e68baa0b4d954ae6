"""Synthetic corpus generator and its Bayes oracles.

The oracle tests lean on cases with hand-derivable answers: a symmetric
two-class chain has the closed form acc(h) = (1 + (2p-1)^h) / 2, uniform
dynamics pin every horizon >= 1 at 1/C, and zero separation collapses the
feature-aware oracle onto the labels-only one.
"""

import numpy as np
import pytest

from erfc.corpus import load_features, load_utterances
from erfc.synth import (
    OracleEstimate,
    SynthConfig,
    SynthTruth,
    bayes_oracle,
    benchmark_confusable,
    benchmark_default,
    benchmark_influence,
    benchmark_parity_avd,
    benchmark_separable,
    generate,
    joint_transition,
    simulate_labels,
    step_distributions,
)
from erfc.turns import assemble_turns


def two_class_config(p=0.9, alpha=0.0, separation=0.0, **kw):
    P = np.array([[p, 1 - p], [1 - p, p]])
    base = dict(
        n_classes=2,
        t_mean=8,
        n_conversations=4,
        alpha=alpha,
        p_self=P,
        p_cross=P,
        separation=separation,
        avd_means=np.full((2, 3), 3.0),
        avd_noise=0.1,
        d_text=2,
        d_audio=2,
        d_speaker=2,
        seed=0,
    )
    base.update(kw)
    return SynthConfig(**base)


class TestConfigValidation:
    def test_round_trip_dict(self):
        for cfg in (benchmark_default(3), benchmark_confusable(5)):
            again = SynthConfig.from_dict(cfg.to_dict())
            assert again.to_dict() == cfg.to_dict()

    @pytest.mark.parametrize(
        "patch,needle",
        [
            ({"alpha": 1.5}, "alpha"),
            ({"alpha": -0.1}, "alpha"),
            ({"separation": -1.0}, "separation"),
            ({"avd_noise": -0.5}, "avd_noise"),
            ({"t_mean": 1.0}, "t_mean"),
            ({"n_conversations": 0}, "n_conversations"),
            ({"n_sessions": 0}, "n_sessions"),
            ({"d_text": 0}, "dims"),
        ],
    )
    def test_scalar_bounds(self, patch, needle):
        d = benchmark_default().to_dict()
        d.update(patch)
        with pytest.raises(ValueError, match=needle):
            SynthConfig.from_dict(d)

    def test_rows_must_be_stochastic(self):
        d = benchmark_default().to_dict()
        d["p_self"][0][0] += 0.01
        with pytest.raises(ValueError, match="sum to 1"):
            SynthConfig.from_dict(d)

    def test_rows_must_be_nonnegative(self):
        d = benchmark_default().to_dict()
        d["p_cross"][0][0] -= 1.0
        d["p_cross"][0][1] += 1.0
        with pytest.raises(ValueError, match="non-negative"):
            SynthConfig.from_dict(d)

    def test_transition_shape_checked(self):
        d = benchmark_default().to_dict()
        d["p_self"] = np.eye(4)
        with pytest.raises(ValueError, match="6x6"):
            SynthConfig.from_dict(d)

    def test_informative_emissions_need_room(self):
        with pytest.raises(ValueError, match="modality dim"):
            two_class_config(separation=5.0, d_text=1)

    def test_zero_separation_allows_narrow_dims(self):
        cfg = two_class_config(separation=0.0, d_text=1)
        assert cfg.d_text == 1

    @pytest.mark.parametrize("cm", [(0, 1), (0, 1, 2, 3, 4, 9), (0,) * 7])
    def test_center_map_validated(self, cm):
        d = benchmark_default().to_dict()
        d["center_map"] = list(cm)
        with pytest.raises(ValueError, match="center_map"):
            SynthConfig.from_dict(d)

    def test_min_two_classes(self):
        d = two_class_config().to_dict()
        d["n_classes"] = 1
        with pytest.raises(ValueError, match="n_classes"):
            SynthConfig.from_dict(d)


class TestDynamics:
    def test_step_is_convex_mixture(self):
        cfg = benchmark_default()
        rng = np.random.default_rng(0)
        for _ in range(5):
            a, b = rng.integers(0, 6, size=2)
            da, db = step_distributions(cfg, a, b)
            np.testing.assert_allclose(
                da, cfg.alpha * cfg.p_cross[b] + (1 - cfg.alpha) * cfg.p_self[a]
            )
            np.testing.assert_allclose(
                db, cfg.alpha * cfg.p_cross[a] + (1 - cfg.alpha) * cfg.p_self[b]
            )

    def test_deterministic_cross_cycle(self):
        """alpha=1 with a deterministic shift-by-one cross map forces
        a[t+1] = b[t] + 1 and b[t+1] = a[t] + 1 exactly."""
        C = 6
        p_cross = np.zeros((C, C))
        for c in range(C):
            p_cross[c, (c + 1) % C] = 1.0
        cfg = SynthConfig(
            n_classes=C,
            t_mean=8,
            n_conversations=1,
            alpha=1.0,
            p_self=np.full((C, C), 1 / C),
            p_cross=p_cross,
            separation=0.0,
            avd_means=np.full((C, 3), 3.0),
            avd_noise=0.1,
            d_text=2,
            d_audio=2,
            d_speaker=2,
            seed=0,
        )
        labels = simulate_labels(cfg, 50, np.random.default_rng(1))
        for t in range(49):
            assert labels[t + 1, 0] == (labels[t, 1] + 1) % C
            assert labels[t + 1, 1] == (labels[t, 0] + 1) % C

    def test_alpha_zero_speakers_uncorrelated(self):
        """With no coupling the two indicator series should be uncorrelated;
        tolerance covers the autocorrelation-inflated standard error."""
        cfg = two_class_config(p=0.8, alpha=0.0)
        labels = simulate_labels(cfg, 20_000, np.random.default_rng(0))
        u = (labels[:, 0] == 0).astype(float)
        v = (labels[:, 1] == 0).astype(float)
        corr = np.corrcoef(u, v)[0, 1]
        assert abs(corr) < 0.05

    def test_joint_transition_rows_stochastic(self):
        Q = joint_transition(benchmark_default())
        assert Q.shape == (36, 36)
        np.testing.assert_allclose(Q.sum(axis=1), 1.0, atol=1e-12)

    def test_joint_transition_factorizes(self):
        cfg = benchmark_default()
        Q = joint_transition(cfg)
        a, b = 2, 5
        da, db = step_distributions(cfg, a, b)
        np.testing.assert_allclose(Q[a * 6 + b].reshape(6, 6), np.outer(da, db))


class TestOracles:
    def test_two_class_closed_form(self):
        """Symmetric two-class chain: acc(h) = (1 + (2p-1)^h) / 2."""
        cfg = two_class_config(p=0.9)
        for h, want in ((1, 0.9), (2, 0.82), (3, 0.756)):
            est = bayes_oracle(cfg, h)
            assert est.se == 0.0
            assert abs(est.accuracy - want) < 1e-12

    def test_horizon_zero_labels_only_is_exact(self):
        est = bayes_oracle(benchmark_default(), 0)
        assert abs(est.accuracy - 1.0) < 1e-12 and est.se == 0.0

    def test_uniform_dynamics_pin_one_over_c(self):
        C = 6
        cfg = SynthConfig(
            n_classes=C,
            t_mean=10,
            n_conversations=4,
            alpha=0.5,
            p_self=np.full((C, C), 1 / C),
            p_cross=np.full((C, C), 1 / C),
            separation=0.0,
            avd_means=np.full((C, 3), 3.0),
            avd_noise=0.1,
            d_text=2,
            d_audio=2,
            d_speaker=2,
            seed=0,
        )
        for h in (1, 2, 3):
            assert abs(bayes_oracle(cfg, h).accuracy - 1 / C) < 1e-12

    def test_mixing_washes_out_to_uniform(self):
        est = bayes_oracle(benchmark_default(), 50)
        assert abs(est.accuracy - 1 / 6) < 1e-3

    def test_sticky_chain_decays_with_horizon(self):
        cfg = benchmark_default()
        accs = [bayes_oracle(cfg, h).accuracy for h in range(1, 5)]
        assert all(a > b for a, b in zip(accs, accs[1:]))

    def test_full_history_equals_labels_only_beyond_zero(self):
        cfg = benchmark_default()
        for h in (1, 3):
            assert (
                bayes_oracle(cfg, h, "full-history").accuracy
                == bayes_oracle(cfg, h).accuracy
            )

    def test_feature_oracle_saturates_when_separable(self):
        est = bayes_oracle(benchmark_separable(), 0, "full-history", n_trials=20_000)
        assert est.accuracy > 0.999

    def test_feature_oracle_collapses_without_separation(self):
        """Zero separation means the turn-t emissions carry nothing, so the
        feature-aware horizon-0 oracle must agree with the labels-only
        one-step value (prev labels are all that is left)."""
        cfg = two_class_config(p=0.85, alpha=0.0, separation=0.0)
        mc = bayes_oracle(cfg, 0, "full-history", n_trials=60_000)
        dp = bayes_oracle(cfg, 1)
        assert abs(mc.accuracy - dp.accuracy) < max(4 * mc.se, 1e-3) + 1e-3

    def test_bad_arguments(self):
        cfg = two_class_config()
        with pytest.raises(ValueError, match="horizon"):
            bayes_oracle(cfg, -1)
        with pytest.raises(ValueError, match="conditioning"):
            bayes_oracle(cfg, 1, "labels-and-vibes")

    def test_estimate_is_frozen(self):
        est = OracleEstimate(accuracy=0.5, se=0.0)
        with pytest.raises(AttributeError):
            est.accuracy = 0.9


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    cfg = benchmark_default(seed=5, n_conversations=30)
    truth = generate(cfg, out)
    return out, cfg, truth


class TestGenerate:
    def test_files_written(self, corpus):
        out, _, _ = corpus
        for name in (
            "utterances.jsonl",
            "features_text.csv",
            "features_audio.csv",
            "features_speaker.csv",
            "truth.json",
        ):
            assert (out / name).exists()

    def test_round_trips_through_loader(self, corpus):
        out, cfg, truth = corpus
        convs = load_utterances(out / "utterances.jsonl")
        assert len(convs) == cfg.n_conversations
        for conv in convs:
            turns = assemble_turns(conv)
            want = truth.labels[conv.conv_id]
            assert len(turns) == want.shape[0]
            for t, turn in enumerate(turns):
                for slot in (0, 1):
                    side = turn.sides[slot]
                    assert side.present
                    assert side.label == "Happy Excited Sad Neutral Angry Frustrated".split()[want[t, slot]]

    def test_speaker_slots_fixed(self, corpus):
        out, _, _ = corpus
        conv = load_utterances(out / "utterances.jsonl")[0]
        turns = assemble_turns(conv)
        assert all(t.sides[0].speaker == "A" and t.sides[1].speaker == "B" for t in turns)

    def test_feature_keys_cover_every_side(self, corpus):
        out, cfg, truth = corpus
        store = load_features(out / "features_audio.csv", "audio")
        want_keys = {
            (conv_id, t, slot)
            for conv_id, arr in truth.labels.items()
            for t in range(arr.shape[0])
            for slot in (0, 1)
        }
        assert set(store.keys()) == want_keys
        assert store.dim == cfg.d_audio

    def test_sessions_round_robin(self, corpus):
        _, cfg, truth = corpus
        sessions = sorted({c.split("_")[0] for c in truth.labels})
        assert sessions == [f"Ses{s:02d}" for s in range(1, 6)]

    def test_avd_in_legal_range(self, corpus):
        out, _, _ = corpus
        for conv in load_utterances(out / "utterances.jsonl"):
            for utt in conv.utterances:
                for v in (utt.avd.activation, utt.avd.valence, utt.avd.dominance):
                    assert 1.0 <= v <= 5.0

    def test_emission_geometry(self, corpus):
        """Class-conditional feature means sit near the planted centers and
        distinct centers are `separation` apart."""
        out, cfg, truth = corpus
        store = load_features(out / "features_text.csv", "text")
        by_class = {c: [] for c in range(6)}
        for conv_id, arr in truth.labels.items():
            for t in range(arr.shape[0]):
                for slot in (0, 1):
                    by_class[arr[t, slot]].append(store.get(conv_id, t, slot))
        means = np.stack([np.mean(by_class[c], axis=0) for c in range(6)])
        scale = cfg.separation / np.sqrt(2.0)
        for c in range(6):
            want = np.zeros(cfg.d_text)
            want[c] = scale
            np.testing.assert_allclose(means[c], want, atol=0.45)
        gap = np.linalg.norm(means[0] - means[1])
        assert abs(gap - cfg.separation) < 0.5

    def test_generation_deterministic(self, corpus, tmp_path):
        out, cfg, _ = corpus
        again = tmp_path / "again"
        generate(cfg, again)
        for name in ("utterances.jsonl", "features_text.csv", "truth.json"):
            assert (out / name).read_bytes() == (again / name).read_bytes()

    def test_truth_round_trip(self, corpus):
        out, cfg, truth = corpus
        loaded = SynthTruth.load(out / "truth.json")
        assert loaded.config.to_dict() == cfg.to_dict()
        assert set(loaded.labels) == set(truth.labels)
        for c in truth.labels:
            np.testing.assert_array_equal(loaded.labels[c], truth.labels[c])

    def test_truth_rejects_foreign_json(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text('{"format": "other"}', encoding="utf-8")
        with pytest.raises(ValueError, match="not a"):
            SynthTruth.load(p)

    def test_fixed_length_mode(self, tmp_path):
        cfg = benchmark_confusable(seed=1, n_conversations=6)
        truth = generate(cfg, tmp_path / "fixed")
        assert {arr.shape[0] for arr in truth.labels.values()} == {30}

    def test_zero_separation_allows_dims_below_n_classes(self, tmp_path):
        """Uninformative emissions don't need one axis per class."""
        cfg = two_class_config(
            n_classes=6,
            p_self=np.full((6, 6), 1 / 6),
            p_cross=np.full((6, 6), 1 / 6),
            avd_means=np.tile([[3.0, 3.0, 3.0]], (6, 1)),
            separation=0.0,
            d_text=2,
            d_audio=2,
            d_speaker=2,
            n_conversations=3,
        )
        generate(cfg, tmp_path / "flat")
        store = load_features(tmp_path / "flat" / "features_text.csv", "text")
        X = store.matrix(sorted(store.keys()))
        assert abs(X.mean()) < 0.5  # all classes share the zero center

    def test_shared_centers_for_twins(self, tmp_path):
        """Twin classes (Happy/Excited, Angry/Frustrated) must be
        emission-identical: same planted center, same AVD row."""
        cfg = benchmark_confusable()
        assert cfg.centers[0] == cfg.centers[1]
        assert cfg.centers[4] == cfg.centers[5]
        np.testing.assert_array_equal(cfg.avd_means[0], cfg.avd_means[1])
        np.testing.assert_array_equal(cfg.avd_means[4], cfg.avd_means[5])


class TestBenchmarkDesigns:
    def test_influence_gap_is_planted(self):
        """History-aware DP oracle beats the no-history floor (1/C) by a
        wide designed margin at horizon 1; features carry nothing."""
        cfg = benchmark_influence()
        assert cfg.separation == 0.0
        gap = bayes_oracle(cfg, 2).accuracy - 1.0 / 6.0
        assert gap > 0.40

    def test_parity_oracle_flat_at_one_third(self):
        cfg = benchmark_parity_avd()
        for h in (1, 2, 3):
            assert abs(bayes_oracle(cfg, h).accuracy - 1 / 3) < 1e-12

    def test_parity_avd_rows_linearly_separated(self):
        cfg = benchmark_parity_avd()
        even = cfg.avd_means[::2]
        odd = cfg.avd_means[1::2]
        assert even.max() + 4 * cfg.avd_noise < odd.min()

    def test_confusable_split_keyed_to_parity(self):
        """Pairs drive each other, singletons alternate, and the favored
        twin always matches the driver's parity."""
        cfg = benchmark_confusable()
        np.testing.assert_allclose(cfg.p_cross[2, [3]], [1.0])
        np.testing.assert_allclose(cfg.p_cross[3, [2]], [1.0])
        np.testing.assert_allclose(cfg.p_cross[0, [4, 5]], [0.62, 0.38])
        np.testing.assert_allclose(cfg.p_cross[1, [4, 5]], [0.38, 0.62])
        np.testing.assert_allclose(cfg.p_cross[4, [0, 1]], [0.62, 0.38])
        np.testing.assert_allclose(cfg.p_cross[5, [0, 1]], [0.38, 0.62])
