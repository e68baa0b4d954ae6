"""Ingestion and validation tests for the corpus data model."""

import json

import numpy as np
import pytest

from erfc.corpus import (
    AvdTriple,
    Conversation,
    CorpusError,
    FeatureStore,
    SIX_CLASSES,
    Scheme,
    UtteranceRecord,
    load_features,
    load_utterances,
    save_features,
    serialize_utterances,
    session_of,
)


def make_utt(conv="Ses01_a", utt="u0", spk="A", t0=0.0, t1=1.0, emo="Happy", avd=(3, 3, 3), text="hi"):
    return {
        "conv_id": conv,
        "utt_id": utt,
        "speaker": spk,
        "t_start": t0,
        "t_end": t1,
        "text": text,
        "emotion": emo,
        "avd": list(avd) if avd is not None else None,
    }


def write_jsonl(path, objs):
    path.write_text("\n".join(json.dumps(o) for o in objs) + "\n", encoding="utf-8")


def two_speaker_objs(n=4, conv="Ses01_a"):
    return [
        make_utt(conv=conv, utt=f"u{i}", spk="AB"[i % 2], t0=float(i), t1=float(i) + 0.5)
        for i in range(n)
    ]


class TestSchemes:
    def test_class_orders(self):
        assert Scheme.SIX.classes == ("Happy", "Excited", "Sad", "Neutral", "Angry", "Frustrated")
        assert Scheme.FOUR.classes == ("Happy", "Sad", "Neutral", "Angry")
        assert Scheme.SIX.n_classes == 6
        assert Scheme.FOUR.n_classes == 4


class TestLoadUtterances:
    def test_round_trip(self, tmp_path):
        objs = two_speaker_objs(6)
        src = tmp_path / "u.jsonl"
        write_jsonl(src, objs)
        convs = load_utterances(src)
        assert len(convs) == 1
        assert len(convs[0]) == 6
        assert convs[0].speakers == ["A", "B"]

        back = tmp_path / "back.jsonl"
        serialize_utterances(convs, back)
        again = load_utterances(back)
        assert [u.utt_id for u in again[0].utterances] == [f"u{i}" for i in range(6)]

    def test_sorted_by_start_time(self, tmp_path):
        objs = two_speaker_objs(4)
        objs.reverse()
        src = tmp_path / "u.jsonl"
        write_jsonl(src, objs)
        convs = load_utterances(src)
        starts = [u.t_start for u in convs[0].utterances]
        assert starts == sorted(starts)

    def test_blank_lines_skipped(self, tmp_path):
        src = tmp_path / "u.jsonl"
        lines = [json.dumps(o) for o in two_speaker_objs(2)]
        src.write_text(lines[0] + "\n\n" + lines[1] + "\n", encoding="utf-8")
        assert len(load_utterances(src)[0]) == 2

    @pytest.mark.parametrize(
        "mutate, kind",
        [
            (lambda os: os[1].pop("emotion"), "malformed-line"),
            (lambda os: os[1].update(emotion="Bored"), "unknown-label"),
            (lambda os: os[1].update(t_start=2.0, t_end=1.0), "bad-times"),
            (lambda os: os[1].update(avd=[3, 3]), "avd-malformed"),
            (lambda os: os[1].update(avd=[0.5, 3, 3]), "avd-range"),
            (lambda os: os[1].update(avd=[6, 3, 3]), "avd-range"),
            (lambda os: os[1].update(utt_id="u0"), "duplicate-utt-id"),
            (lambda os: os[1].update(speaker="C"), "non-dyadic"),
        ],
    )
    def test_error_kinds(self, tmp_path, mutate, kind):
        objs = two_speaker_objs(4)
        mutate(objs)
        src = tmp_path / "u.jsonl"
        write_jsonl(src, objs)
        with pytest.raises(CorpusError) as err:
            load_utterances(src)
        assert err.value.kind == kind

    def test_invalid_json_names_line(self, tmp_path):
        src = tmp_path / "u.jsonl"
        src.write_text(json.dumps(two_speaker_objs(2)[0]) + "\n{not json\n", encoding="utf-8")
        with pytest.raises(CorpusError) as err:
            load_utterances(src)
        assert err.value.kind == "malformed-line"
        assert "line 2" in str(err.value)

    def test_single_speaker_is_non_dyadic(self, tmp_path):
        objs = [make_utt(utt=f"u{i}", spk="A", t0=float(i), t1=i + 0.5) for i in range(3)]
        src = tmp_path / "u.jsonl"
        write_jsonl(src, objs)
        with pytest.raises(CorpusError) as err:
            load_utterances(src)
        assert err.value.kind == "non-dyadic"

    def test_all_six_labels_accepted(self, tmp_path):
        objs = [
            make_utt(utt=f"u{i}", spk="AB"[i % 2], t0=float(i), t1=i + 0.5, emo=emo)
            for i, emo in enumerate(SIX_CLASSES)
        ]
        src = tmp_path / "u.jsonl"
        write_jsonl(src, objs)
        labels = [u.emotion for u in load_utterances(src)[0].utterances]
        assert labels == list(SIX_CLASSES)


class TestAvdTriple:
    def test_boundaries_accepted(self):
        assert AvdTriple.from_list([1, 5, 3]).as_list() == [1.0, 5.0, 3.0]

    @pytest.mark.parametrize("bad", [[0.999, 3, 3], [3, 5.001, 3], [3, 3, float("nan")]])
    def test_out_of_range(self, bad):
        with pytest.raises(CorpusError) as err:
            AvdTriple.from_list(bad)
        assert err.value.kind == "avd-range"


class TestSessionOf:
    def test_prefix_parsing(self):
        assert session_of("Ses01_impro3") == 1
        assert session_of("Ses05_syn0003") == 5
        assert session_of("Ses12_x") == 12

    def test_override_wins(self):
        assert session_of("weird-id", overrides={"weird-id": 4}) == 4

    def test_unknown_session(self):
        with pytest.raises(CorpusError) as err:
            session_of("conversation-7")
        assert err.value.kind == "unknown-session"


class TestFeatureStore:
    def test_duplicate_key(self):
        store = FeatureStore("text", 3)
        store.add(("c", 0, 0), np.zeros(3))
        with pytest.raises(CorpusError) as err:
            store.add(("c", 0, 0), np.ones(3))
        assert err.value.kind == "duplicate-feature-key"

    def test_dim_mismatch(self):
        store = FeatureStore("text", 3)
        with pytest.raises(CorpusError) as err:
            store.add(("c", 0, 0), np.zeros(4))
        assert err.value.kind == "feature-dim"

    def test_non_finite(self):
        store = FeatureStore("text", 2)
        with pytest.raises(CorpusError) as err:
            store.add(("c", 0, 0), np.array([1.0, np.inf]))
        assert err.value.kind == "feature-non-finite"

    def test_dangling_key_detection(self):
        store = FeatureStore("text", 2)
        store.add(("c", 0, 0), np.zeros(2))
        store.add(("c", 9, 0), np.zeros(2))
        with pytest.raises(CorpusError) as err:
            store.validate_keys({("c", 0, 0), ("c", 0, 1)})
        assert err.value.kind == "dangling-feature-key"


class TestFeatureCsv:
    def _rows(self, dim=4):
        rng = np.random.default_rng(0)
        return {("Ses01_a", t, s): rng.normal(size=dim) for t in range(3) for s in (0, 1)}

    def test_round_trip(self, tmp_path):
        rows = self._rows()
        path = tmp_path / "f.csv"
        save_features(rows, "audio", path)
        store = load_features(path, "audio")
        assert store.dim == 4
        assert len(store) == 6
        np.testing.assert_allclose(store.get("Ses01_a", 2, 1), rows[("Ses01_a", 2, 1)])

    def test_header_is_canonical(self, tmp_path):
        path = tmp_path / "f.csv"
        save_features(self._rows(dim=2), "text", path)
        header = path.read_text().splitlines()[0]
        assert header == "conv_id,turn,slot,f0,f1"

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("conv_id,turn,slot,g0\nc,0,0,1.0\n", encoding="utf-8")
        with pytest.raises(CorpusError) as err:
            load_features(path, "text")
        assert err.value.kind == "feature-header"

    def test_short_row_rejected(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("conv_id,turn,slot,f0,f1\nc,0,0,1.0\n", encoding="utf-8")
        with pytest.raises(CorpusError):
            load_features(path, "text")

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text(
            "conv_id,turn,slot,f0\nc,0,0,1.0\nc,0,0,2.0\n", encoding="utf-8"
        )
        with pytest.raises(CorpusError) as err:
            load_features(path, "text")
        assert err.value.kind == "duplicate-feature-key"
