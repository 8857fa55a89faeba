import json

import pytest

from spoofkit.manifest import (Manifest, ManifestEntry, ManifestError,
                               load_manifest, sample_fixed, sample_proportioned,
                               save_manifest, split_by_subset)


def entry(i, label="real", subset=None, **kw):
    return ManifestEntry(id=f"u{i}", source=f"audio/u{i}.wav", label=label,
                         duration_s=1.0, subset=subset, **kw)


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestLoadManifest:
    def test_three_line_file(self, tmp_path):
        p = tmp_path / "m.jsonl"
        write_lines(p, [
            json.dumps({"id": "a", "source": "a.wav", "label": "real", "duration_s": 1.5}),
            json.dumps({"id": "b", "source": "b.wav", "label": "fake", "duration_s": 2.0,
                        "attack": "tts"}),
            json.dumps({"id": "c", "source": "c.wav", "label": "real", "duration_s": 0.5,
                        "subset": "test"}),
        ])
        m = load_manifest(p)
        assert len(m) == 3
        assert m.entries[1].attack == "tts"
        assert m.entries[2].subset == "test"

    def test_empty_file(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text("", encoding="utf-8")
        assert len(load_manifest(p)) == 0

    def test_duplicate_id_rejected(self, tmp_path):
        p = tmp_path / "m.jsonl"
        row = json.dumps({"id": "a", "source": "a.wav", "label": "real", "duration_s": 1.0})
        write_lines(p, [row, row])
        with pytest.raises(ManifestError, match="duplicate.*'a'"):
            load_manifest(p)

    def test_parse_error_reports_line(self, tmp_path):
        p = tmp_path / "m.jsonl"
        write_lines(p, [
            json.dumps({"id": "a", "source": "a.wav", "label": "real", "duration_s": 1.0}),
            "{not json",
        ])
        with pytest.raises(ManifestError, match="line 2"):
            load_manifest(p)

    def test_unknown_fields_ignored(self, tmp_path):
        p = tmp_path / "m.jsonl"
        write_lines(p, [json.dumps({"id": "a", "source": "a.wav", "label": "real",
                                    "duration_s": 1.0, "mystery": 42})])
        m = load_manifest(p)
        assert m.entries[0].id == "a"

    def test_bad_label_rejected(self, tmp_path):
        p = tmp_path / "m.jsonl"
        write_lines(p, [json.dumps({"id": "a", "source": "a.wav", "label": "spoofed",
                                    "duration_s": 1.0})])
        with pytest.raises(ManifestError, match="label"):
            load_manifest(p)


class TestSampleFixed:
    def test_full_sample_is_identity(self):
        m = Manifest([entry(i) for i in range(10)])
        assert sample_fixed(m, 10, seed=1).entries == m.entries

    def test_empty_sample(self):
        m = Manifest([entry(i) for i in range(10)])
        assert len(sample_fixed(m, 0, seed=1)) == 0

    def test_seed_determinism_and_variation(self):
        m = Manifest([entry(i) for i in range(10)])
        a = sample_fixed(m, 3, seed=7)
        b = sample_fixed(m, 3, seed=7)
        c = sample_fixed(m, 3, seed=8)
        assert [e.id for e in a] == [e.id for e in b]
        assert [e.id for e in a] != [e.id for e in c]

    def test_preserves_relative_order(self):
        m = Manifest([entry(i) for i in range(50)])
        ids = [e.id for e in sample_fixed(m, 20, seed=2)]
        original = [e.id for e in m.entries]
        assert ids == sorted(ids, key=original.index)

    def test_oversample_rejected(self):
        m = Manifest([entry(i) for i in range(3)])
        with pytest.raises(ManifestError, match="sample 4"):
            sample_fixed(m, 4, seed=0)

    def test_byte_identical_output(self, tmp_path):
        m = Manifest([entry(i) for i in range(30)])
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_manifest(sample_fixed(m, 11, seed=5), p1)
        save_manifest(sample_fixed(m, 11, seed=5), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestSampleProportioned:
    def _pool(self, n_real, n_fake):
        reals = [entry(i, "real") for i in range(n_real)]
        fakes = [ManifestEntry(id=f"f{i}", source=f"f{i}.wav", label="fake",
                               duration_s=1.0) for i in range(n_fake)]
        return Manifest(reals + fakes)

    def test_ninety_percent_fake(self):
        m = self._pool(50, 200)
        out = sample_proportioned(m, 100, 0.9, seed=1)
        counts = out.counts_by_label()
        assert counts == {"real": 10, "fake": 90}

    def test_all_real(self):
        m = self._pool(50, 50)
        out = sample_proportioned(m, 30, 0.0, seed=1)
        assert out.counts_by_label() == {"real": 30, "fake": 0}

    def test_balanced_15k(self):
        m = self._pool(8000, 8000)
        out = sample_proportioned(m, 15000, 0.5, seed=3)
        assert out.counts_by_label() == {"real": 7500, "fake": 7500}

    def test_insufficient_class_named(self):
        m = self._pool(5, 100)
        with pytest.raises(ManifestError, match="real"):
            sample_proportioned(m, 50, 0.5, seed=1)
        with pytest.raises(ManifestError, match="fake"):
            sample_proportioned(self._pool(100, 5), 50, 0.5, seed=1)

    def test_proportion_exactness(self):
        m = self._pool(300, 300)
        for n, frac in ((100, 0.37), (151, 0.5), (17, 0.9), (200, 1.0)):
            out = sample_proportioned(m, n, frac, seed=9)
            assert out.counts_by_label()["fake"] == int(n * frac + 0.5)


class TestSplitBySubset:
    def test_partition_sizes(self):
        m = Manifest([entry(0, subset="train"), entry(1, subset="train"),
                      entry(2, subset="val"), entry(3, subset="test")])
        train, val, test = split_by_subset(m)
        assert (len(train), len(val), len(test)) == (2, 1, 1)

    def test_all_train(self):
        m = Manifest([entry(i, subset="train") for i in range(4)])
        train, val, test = split_by_subset(m)
        assert (len(train), len(val), len(test)) == (4, 0, 0)

    def test_missing_tag_is_error(self):
        m = Manifest([entry(0, subset="train"), entry(1)])
        with pytest.raises(ManifestError, match="u1"):
            split_by_subset(m)

    def test_partition_is_disjoint_and_covering(self):
        subsets = ["train", "val", "test", "train", "test", "val", "train"]
        m = Manifest([entry(i, subset=s) for i, s in enumerate(subsets)])
        parts = split_by_subset(m)
        ids = [e.id for part in parts for e in part]
        assert sorted(ids) == sorted(e.id for e in m.entries)
        assert len(set(ids)) == len(ids)


def test_roundtrip_preserves_entries(tmp_path):
    m = Manifest([entry(0, subset="train", attack=None),
                  entry(1, "fake", subset="val", quality_sisdr_db=12.5)])
    p = tmp_path / "m.jsonl"
    save_manifest(m, p)
    loaded = load_manifest(p)
    for a, b in zip(m.entries, loaded.entries):
        assert (a.id, a.label, a.duration_s, a.quality_sisdr_db, a.subset) == \
               (b.id, b.label, b.duration_s, b.quality_sisdr_db, b.subset)


def test_save_rewrites_relative_sources(tmp_path):
    (tmp_path / "corpus").mkdir()
    e = ManifestEntry(id="a", source="audio/a.wav", label="real", duration_s=1.0,
                      root=str(tmp_path / "corpus"))
    out = tmp_path / "elsewhere" / "m.jsonl"
    save_manifest(Manifest([e]), out)
    reloaded = load_manifest(out)
    assert reloaded.entries[0].source == "../corpus/audio/a.wav"
