"""Tests for the binary blob container and model artifacts."""

import numpy as np
import pytest

from vrcmf.artifacts import (
    MODEL_MAGIC,
    ArtifactError,
    load_model,
    read_blob,
    save_model,
    write_blob,
)


class TestBlob:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "a": rng.normal(size=(3, 4)),
            "b": rng.integers(0, 9, size=7).astype(np.int64),
            "c": np.array([], dtype=np.float64),
        }
        meta = {"name": "x", "nested": {"k": [1, 2, 3]}}
        path = tmp_path / "t.blob"
        write_blob(path, "#test v1", meta, arrays)
        got_meta, got_arrays = read_blob(path, "#test v1")
        assert got_meta["name"] == "x"
        assert got_meta["nested"] == {"k": [1, 2, 3]}
        for name, arr in arrays.items():
            np.testing.assert_array_equal(got_arrays[name], arr)
            assert got_arrays[name].dtype == arr.dtype

    def test_meta_is_compact_and_sorted(self, tmp_path):
        path = tmp_path / "t.blob"
        write_blob(path, "#test v1", {"zz": 1, "aa": 2})
        line = path.read_bytes().split(b"\n")[1]
        assert line.index(b"aa") < line.index(b"zz")
        assert b": " not in line and b", " not in line

    def test_identical_content_identical_bytes(self, tmp_path):
        arr = {"x": np.arange(6, dtype=np.float64).reshape(2, 3)}
        p1, p2 = tmp_path / "a.blob", tmp_path / "b.blob"
        write_blob(p1, "#test v1", {"m": 1}, arr)
        write_blob(p2, "#test v1", {"m": 1}, arr)
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic_mismatch(self, tmp_path):
        path = tmp_path / "t.blob"
        write_blob(path, "#test v1", {})
        with pytest.raises(ArtifactError, match="expected header"):
            read_blob(path, "#other v1")

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.blob"
        write_blob(path, "#test v1", {}, {"x": np.zeros(10)})
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(ArtifactError, match="truncated"):
            read_blob(path, "#test v1")

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "t.blob"
        write_blob(path, "#test v1", {}, {"x": np.zeros(4)})
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(ArtifactError, match="trailing"):
            read_blob(path, "#test v1")

    def test_unreadable_meta(self, tmp_path):
        path = tmp_path / "t.blob"
        path.write_bytes(b"#test v1\nnot json\n")
        with pytest.raises(ArtifactError, match="metadata"):
            read_blob(path, "#test v1")


class TestModelArtifact:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        U = rng.normal(size=(4, 6))
        V = rng.normal(size=(4, 5))
        params = {"emb": rng.normal(size=(9, 3)), "fc1_b": rng.normal(size=2)}
        path = tmp_path / "model.blob"
        save_model(path, U=U, V=V,
                   user_ids=[f"u{i}" for i in range(6)],
                   item_ids=[f"t{j}" for j in range(5)],
                   config={"variant": "convmf", "latent_dim": 4},
                   params=params,
                   extra_meta={"best_iteration": 7})
        meta, gU, gV, gparams = load_model(path)
        np.testing.assert_array_equal(gU, U)
        np.testing.assert_array_equal(gV, V)
        assert meta["user_ids"] == [f"u{i}" for i in range(6)]
        assert meta["item_ids"] == [f"t{j}" for j in range(5)]
        assert meta["config"]["variant"] == "convmf"
        assert meta["best_iteration"] == 7
        assert set(gparams) == {"emb", "fc1_b"}
        np.testing.assert_array_equal(gparams["emb"], params["emb"])

    def test_missing_factors(self, tmp_path):
        path = tmp_path / "model.blob"
        write_blob(path, MODEL_MAGIC, {"config": {}},
                   {"U": np.zeros((2, 2))})
        with pytest.raises(ArtifactError, match="factor matrices"):
            load_model(path)
