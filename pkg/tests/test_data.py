import json

import numpy as np
import pytest

from seqcoder import data as D
from seqcoder.errors import ConfigError, ContractError, DataError


class TestJsonl:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert D.load_jsonl(path) == []

    def test_missing_text_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "x", "labels": []}\n')
        with pytest.raises(DataError, match=":1"):
            D.load_jsonl(path)

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "a", "text": "ok"}\n{broken\n')
        with pytest.raises(DataError, match=":2"):
            D.load_jsonl(path)

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        path.write_text('{"id": "a", "text": "x"}\n{"id": "a", "text": "y"}\n')
        with pytest.raises(DataError, match="duplicate"):
            D.load_jsonl(path)

    def test_unknown_fields_ignored(self, tmp_path):
        path = tmp_path / "extra.jsonl"
        path.write_text('{"id": "a", "text": "x", "labels": ["l"], "species": "dog"}\n')
        recs = D.load_jsonl(path)
        assert recs[0].labels == {"l"}

    def test_roundtrip(self, tmp_path):
        records = [
            D.NoteRecord("a", "first note", {"x", "y"}),
            D.NoteRecord("b", "second note", set()),
        ]
        path = tmp_path / "round.jsonl"
        D.save_jsonl(records, path)
        loaded = D.load_jsonl(path)
        assert [(r.id, r.text, r.labels) for r in loaded] == \
            [(r.id, r.text, r.labels) for r in records]


class TestSplit:
    records = [D.NoteRecord(str(i), f"note {i}") for i in range(100)]

    def test_ninety_five_five(self):
        train, valid, test = D.split(self.records, seed=1)
        assert (len(train), len(valid), len(test)) == (90, 5, 5)

    def test_same_seed_same_split(self):
        s1 = D.split(self.records, seed=7)
        s2 = D.split(self.records, seed=7)
        assert [[r.id for r in part] for part in s1] == [[r.id for r in part] for part in s2]

    def test_partition_law(self):
        train, valid, test = D.split(self.records, seed=3)
        ids = [r.id for r in train] + [r.id for r in valid] + [r.id for r in test]
        assert sorted(ids) == sorted(r.id for r in self.records)
        assert len(set(ids)) == len(ids)

    def test_bad_fractions(self):
        with pytest.raises(ContractError):
            D.split(self.records, fractions=(0.5, 0.1, 0.1))


class TestSynthGenerate:
    def test_deterministic(self):
        cfg = D.SynthConfig(seed=5, n_notes_a=20, n_notes_b=10, n_unlabeled_b=10)
        a1, b1, u1 = D.synth_generate(cfg)
        a2, b2, u2 = D.synth_generate(cfg)
        assert [r.text for r in a1] == [r.text for r in a2]
        assert [r.text for r in b1] == [r.text for r in b2]
        assert [r.text for r in u1] == [r.text for r in u2]
        assert [sorted(r.labels) for r in a1] == [sorted(r.labels) for r in a2]

    def test_zero_shift_identical_distribution(self):
        cfg = D.SynthConfig(seed=9, n_notes_a=15, n_notes_b=15, n_unlabeled_b=5,
                            abbrev_rate=0.0, length_scale=1.0, swap_rate=0.0)
        a, b, _ = D.synth_generate(cfg)
        # same generator path: no hospital-B filler word or abbreviation appears
        b_text = " ".join(r.text for r in b)
        for abbr in cfg.abbreviations().values():
            assert f" {abbr} " not in f" {b_text} "

    def test_unlabeled_corpus_has_empty_labels(self):
        cfg = D.SynthConfig(seed=1, n_notes_a=5, n_notes_b=5, n_unlabeled_b=8)
        _, _, unlabeled = D.synth_generate(cfg)
        assert all(r.labels == set() for r in unlabeled)
        assert len(unlabeled) == 8

    def test_labeled_notes_contain_their_triggers_in_hospital_a(self):
        cfg = D.SynthConfig(seed=2, n_notes_a=30, n_notes_b=5, n_unlabeled_b=5)
        a, _, _ = D.synth_generate(cfg)
        triggers = cfg.triggers()
        for r in a:
            for lab in r.labels:
                assert triggers[lab] in r.text

    def test_hospital_b_shorter(self):
        cfg = D.SynthConfig(seed=3, n_notes_a=40, n_notes_b=40, n_unlabeled_b=5)
        a, b, _ = D.synth_generate(cfg)
        mean_a = np.mean([len(r.text.split()) for r in a])
        mean_b = np.mean([len(r.text.split()) for r in b])
        assert mean_b < mean_a

    def test_invalid_knobs(self):
        with pytest.raises(ConfigError):
            D.SynthConfig(abbrev_rate=1.5)

    def test_config_json_roundtrip(self):
        cfg = D.SynthConfig(seed=4, abbrev_rate=0.25)
        assert D.SynthConfig.from_json(cfg.to_json()) == cfg


class TestLabelMap:
    def test_alphabetical(self):
        records = [D.NoteRecord("1", "x", {"b", "c"}), D.NoteRecord("2", "y", {"a"})]
        assert D.label_map(records) == ["a", "b", "c"]


class TestBowBaseline:
    def test_separable_synthetic(self):
        cfg = D.SynthConfig(seed=6, n_notes_a=120, n_notes_b=5, n_unlabeled_b=5)
        a, _, _ = D.synth_generate(cfg)
        train, _, test = D.split(a, seed=0)
        dictionary = sorted(set(cfg.triggers().values()))
        report = D.bow_baseline(train, test, dictionary, seed=0)
        assert report.micro_f1 >= 0.95

    def test_useless_dictionary_near_chance(self):
        cfg = D.SynthConfig(seed=6, n_notes_a=60, n_notes_b=5, n_unlabeled_b=5)
        a, _, _ = D.synth_generate(cfg)
        train, _, test = D.split(a, seed=0)
        report = D.bow_baseline(train, test, ["zzz", "qqq"], seed=0)
        assert report.micro_f1 < 0.8  # all-zero features cannot separate labels

    def test_deterministic(self):
        cfg = D.SynthConfig(seed=8, n_notes_a=40, n_notes_b=5, n_unlabeled_b=5)
        a, _, _ = D.synth_generate(cfg)
        train, _, test = D.split(a, seed=0)
        dictionary = sorted(set(cfg.triggers().values()))
        r1 = D.bow_baseline(train, test, dictionary, seed=3)
        r2 = D.bow_baseline(train, test, dictionary, seed=3)
        assert r1.to_json() == r2.to_json()
