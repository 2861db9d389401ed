"""End-to-end tests for the command-line interface (in process)."""

import io
import sys

import numpy as np
import pytest

from vrcmf import textprep
from vrcmf.artifacts import load_model
from vrcmf.cli import main
from vrcmf.engine import evaluate_rmse
from vrcmf.glove import load_embeddings
from vrcmf.visual import LEVEL_CHANNELS, write_feature_file


def write_ratings(path, sep="::"):
    """24 ratings over 8 users and 6 items, every id used repeatedly."""
    lines = []
    t = 0
    for u in range(8):
        for j in range(6):
            if (u + j) % 2 == 0:
                r = (u * 3 + j * 5) % 5 + 1
                lines.append(sep.join([f"u{u}", f"m{j}", str(r), str(t)]))
                t += 1
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_docs(path, num_items=6):
    rows = []
    for j in range(num_items):
        rows.append(f"m{j}\tshared words appear here plus item term{j} and term{(j + 1) % num_items}")
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


def write_visual(path, num_items=6, level=2, seed=0):
    generator = np.random.default_rng(seed)
    items = {f"m{j}": {level: generator.normal(size=LEVEL_CHANNELS[level])}
             for j in range(num_items)}
    write_feature_file(items, path)
    return path


@pytest.fixture
def ratings(tmp_path):
    return write_ratings(tmp_path / "ratings.dat")


class TestStats:
    def test_reports_counts_and_sparsity(self, tmp_path, capsys):
        path = tmp_path / "r.dat"
        path.write_text("a::1::5::0\na::2::4::1\nb::1::3::2\nb::3::2::3\nc::2::1::4\n",
                        encoding="utf-8")
        assert main(["stats", str(path)]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "users: 3"
        assert out[1] == "items: 3"
        assert out[2] == "ratings: 5"
        assert out[3] == "sparsity: 44.44%"  # 1 - 5/9, truncated

    def test_alternate_separators(self, tmp_path, capsys):
        tab = tmp_path / "r.tsv"
        tab.write_text("a\t1\t5\t0\nb\t1\t4\t1\nb\t2\t3\t2\n", encoding="utf-8")
        assert main(["stats", str(tab), "--format", "tab"]) == 0
        assert "ratings: 3" in capsys.readouterr().out
        comma = tmp_path / "r.csv"
        comma.write_text("a,1,5,0\nb,1,4,1\nb,2,3,2\n", encoding="utf-8")
        assert main(["stats", str(comma), "--format", "comma"]) == 0
        assert "ratings: 3" in capsys.readouterr().out

    def test_missing_file_is_a_clean_error(self, tmp_path, capsys):
        assert main(["stats", str(tmp_path / "absent.dat")]) == 1
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert err.count("\n") == 1

    def test_bad_data_reports_line(self, tmp_path, capsys):
        path = tmp_path / "r.dat"
        path.write_text("a::1::5::0\na::1::4::1\n", encoding="utf-8")
        assert main(["stats", str(path)]) == 1
        assert "line 2" in capsys.readouterr().err


class TestUsageErrors:
    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_missing_required_argument_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train"])
        assert exc.value.code == 2
        assert "model-out" in capsys.readouterr().err

    def test_unknown_command_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2


class TestPrepText:
    def test_builds_vocabulary(self, tmp_path, capsys):
        docs = write_docs(tmp_path / "docs.tsv")
        vocab_out = tmp_path / "vocab.blob"
        assert main(["prep-text", "--docs", str(docs),
                     "--vocab-out", str(vocab_out)]) == 0
        out = capsys.readouterr().out
        assert "documents: 6" in out
        assert "vocabulary:" in out
        vocab = textprep.load_vocabulary(vocab_out)
        assert vocab.size > 0
        assert len(vocab.encode("shared words")) == 2

    def test_stopwords_are_excluded(self, tmp_path):
        docs = write_docs(tmp_path / "docs.tsv")
        stop = tmp_path / "stop.txt"
        stop.write_text("shared\n", encoding="utf-8")
        vocab_out = tmp_path / "vocab.blob"
        assert main(["prep-text", "--docs", str(docs), "--stopwords", str(stop),
                     "--vocab-out", str(vocab_out)]) == 0
        vocab = textprep.load_vocabulary(vocab_out)
        assert "shared" not in vocab.words
        assert "words" in vocab.words

    def test_trains_embeddings(self, tmp_path, capsys):
        docs = write_docs(tmp_path / "docs.tsv")
        vocab_out = tmp_path / "vocab.blob"
        emb_out = tmp_path / "emb.blob"
        text_out = tmp_path / "emb.txt"
        assert main(["prep-text", "--docs", str(docs),
                     "--vocab-out", str(vocab_out), "--emb-out", str(emb_out),
                     "--text-out", str(text_out), "--dim", "4", "--epochs", "3",
                     "--window", "2", "--seed", "9"]) == 0
        assert "embeddings: dim 4" in capsys.readouterr().out
        table = load_embeddings(emb_out)
        assert table.dim == 4
        assert len(table.loss_history) == 4
        vocab = textprep.load_vocabulary(vocab_out)
        lines = text_out.read_text(encoding="utf-8").strip().split("\n")
        assert len(lines) == vocab.size

    def test_missing_docs_file_errors(self, tmp_path, capsys):
        assert main(["prep-text", "--docs", str(tmp_path / "nope.tsv"),
                     "--vocab-out", str(tmp_path / "v.blob")]) == 1
        assert capsys.readouterr().err.startswith("error:")


class TestTrain:
    def pmf_args(self, ratings, model, log=None, seed="5", extra=()):
        argv = ["train", str(ratings), "--variant", "pmf", "--latent-dim", "3",
                "--iterations", "4", "--seed", seed, "--model-out", str(model)]
        if log is not None:
            argv += ["--log-out", str(log)]
        return argv + list(extra)

    def test_plain_training_run(self, ratings, tmp_path, capsys):
        model = tmp_path / "m.blob"
        log = tmp_path / "log.csv"
        assert main(self.pmf_args(ratings, model, log)) == 0
        out = capsys.readouterr().out
        assert "test RMSE" in out
        assert "model ->" in out
        meta, U, V, params = load_model(model)
        assert meta["config"]["variant"] == "pmf"
        assert U.shape == (3, 8) and V.shape == (3, 6)
        assert params == {}
        assert meta["user_ids"][0] == "u0"
        rows = log.read_text(encoding="utf-8").strip().split("\n")
        assert rows[0] == "iter,loss,train_rmse,val_rmse"
        assert len(rows) == 5

    def test_repeat_runs_are_byte_identical(self, ratings, tmp_path):
        m1, m2 = tmp_path / "m1.blob", tmp_path / "m2.blob"
        l1, l2 = tmp_path / "l1.csv", tmp_path / "l2.csv"
        assert main(self.pmf_args(ratings, m1, l1)) == 0
        assert main(self.pmf_args(ratings, m2, l2)) == 0
        assert m1.read_bytes() == m2.read_bytes()
        assert l1.read_bytes() == l2.read_bytes()

    def test_seed_changes_the_model(self, ratings, tmp_path):
        m1, m2 = tmp_path / "m1.blob", tmp_path / "m2.blob"
        assert main(self.pmf_args(ratings, m1, seed="5")) == 0
        assert main(self.pmf_args(ratings, m2, seed="6")) == 0
        assert m1.read_bytes() != m2.read_bytes()

    def test_text_variant_trains_network(self, ratings, tmp_path, capsys):
        docs = write_docs(tmp_path / "docs.tsv")
        model = tmp_path / "m.blob"
        assert main(["train", str(ratings), "--variant", "convmf",
                     "--latent-dim", "2", "--iterations", "3", "--seed", "1",
                     "--emb-dim", "3", "--cnn-windows", "1,2", "--cnn-filters", "2",
                     "--proj-hidden", "3", "--dropout", "0.0", "--net-lr", "0.05",
                     "--docs", str(docs), "--model-out", str(model)]) == 0
        meta, U, V, params = load_model(model)
        assert "emb" in params
        assert "fc2_W" in params
        assert meta["config"]["cnn_windows"] == [1, 2]

    def test_variant_alias_is_normalized(self, ratings, tmp_path):
        docs = write_docs(tmp_path / "docs.tsv")
        model = tmp_path / "m.blob"
        assert main(["train", str(ratings), "--variant", "ConvMF+",
                     "--latent-dim", "2", "--iterations", "2", "--seed", "1",
                     "--emb-dim", "3", "--cnn-windows", "1", "--cnn-filters", "2",
                     "--proj-hidden", "3", "--docs", str(docs),
                     "--model-out", str(model)]) == 0
        meta, *_ = load_model(model)
        assert meta["config"]["variant"] == "convmf-plus"

    def test_fused_variant_uses_visual_features(self, ratings, tmp_path):
        docs = write_docs(tmp_path / "docs.tsv")
        feats = write_visual(tmp_path / "feats.tsv")
        model = tmp_path / "m.blob"
        assert main(["train", str(ratings), "--variant", "vconvmf",
                     "--latent-dim", "2", "--iterations", "2", "--seed", "2",
                     "--emb-dim", "3", "--cnn-windows", "1", "--cnn-filters", "2",
                     "--proj-hidden", "3", "--dropout", "0.0", "--net-lr", "0.01",
                     "--visual-levels", "2", "--docs", str(docs),
                     "--visual", str(feats), "--model-out", str(model)]) == 0
        meta, U, V, params = load_model(model)
        assert "head_W" in params and "head_b" in params
        assert params["head_W"].shape == (2, 2 + LEVEL_CHANNELS[2])

    def test_text_variant_without_docs_errors(self, ratings, tmp_path, capsys):
        assert main(["train", str(ratings), "--variant", "convmf",
                     "--model-out", str(tmp_path / "m.blob")]) == 1
        assert "requires --docs" in capsys.readouterr().err

    def test_visual_variant_without_features_errors(self, ratings, tmp_path, capsys):
        docs = write_docs(tmp_path / "docs.tsv")
        assert main(["train", str(ratings), "--variant", "vconvmf",
                     "--docs", str(docs),
                     "--model-out", str(tmp_path / "m.blob")]) == 1
        assert "requires --visual" in capsys.readouterr().err

    def test_config_file_with_flag_override(self, ratings, tmp_path):
        cfg = tmp_path / "train.cfg"
        cfg.write_text("variant = pmf\nlatent-dim = 2\niterations = 2\nseed = 3\n",
                       encoding="utf-8")
        model = tmp_path / "m.blob"
        assert main(["train", str(ratings), "--config", str(cfg),
                     "--iterations", "3", "--model-out", str(model)]) == 0
        meta, U, *_ = load_model(model)
        assert meta["config"]["latent_dim"] == 2
        assert meta["config"]["iterations"] == 3  # the flag wins
        assert meta["config"]["seed"] == 3
        assert U.shape[0] == 2

    def test_confidence_toggle(self, ratings, tmp_path):
        on, off = tmp_path / "on.blob", tmp_path / "off.blob"
        base = ["train", str(ratings), "--variant", "pmf", "--latent-dim", "2",
                "--iterations", "3", "--seed", "4", "--alpha", "0.0"]
        assert main(base + ["--confidence", "on", "--model-out", str(on)]) == 0
        assert main(base + ["--confidence", "off", "--model-out", str(off)]) == 0
        _, U_on, V_on, _ = load_model(on)
        _, U_off, V_off, _ = load_model(off)
        # alpha 0 makes every weight 1.0, so the two paths coincide
        np.testing.assert_array_equal(U_on, U_off)
        np.testing.assert_array_equal(V_on, V_off)

    def test_embedding_warm_start(self, ratings, tmp_path):
        docs = write_docs(tmp_path / "docs.tsv")
        vocab_out = tmp_path / "vocab.blob"
        emb_out = tmp_path / "emb.blob"
        assert main(["prep-text", "--docs", str(docs), "--vocab-out", str(vocab_out),
                     "--emb-out", str(emb_out), "--dim", "3", "--epochs", "2",
                     "--window", "2"]) == 0
        model = tmp_path / "m.blob"
        assert main(["train", str(ratings), "--variant", "convmf",
                     "--latent-dim", "2", "--iterations", "2", "--seed", "1",
                     "--emb-dim", "3", "--cnn-windows", "1", "--cnn-filters", "2",
                     "--proj-hidden", "3", "--docs", str(docs),
                     "--vocab", str(vocab_out), "--embeddings", str(emb_out),
                     "--model-out", str(model)]) == 0
        table = load_embeddings(emb_out)
        meta, _, _, params = load_model(model)
        assert params["emb"].shape[1] == 3
        # unused vocabulary rows keep their warm-started values
        vocab = textprep.load_vocabulary(vocab_out)
        seqs = [vocab.encode(text) for text in
                (line.split("\t", 1)[1] for line in
                 docs.read_text(encoding="utf-8").strip().split("\n"))]
        used = set(int(t) for seq in seqs for t in seq)
        untouched = [i for i in range(vocab.size) if i not in used]
        if untouched:
            np.testing.assert_array_equal(params["emb"][untouched[0]],
                                          table.vectors()[untouched[0]])

    def test_mismatched_embedding_dim_errors(self, ratings, tmp_path, capsys):
        docs = write_docs(tmp_path / "docs.tsv")
        vocab_out = tmp_path / "vocab.blob"
        emb_out = tmp_path / "emb.blob"
        main(["prep-text", "--docs", str(docs), "--vocab-out", str(vocab_out),
              "--emb-out", str(emb_out), "--dim", "4", "--epochs", "1",
              "--window", "2"])
        assert main(["train", str(ratings), "--variant", "convmf",
                     "--emb-dim", "3", "--docs", str(docs), "--vocab", str(vocab_out),
                     "--embeddings", str(emb_out),
                     "--model-out", str(tmp_path / "m.blob")]) == 1
        assert "dimension 4 != configured 3" in capsys.readouterr().err


@pytest.fixture
def trained_model(ratings, tmp_path):
    model = tmp_path / "model.blob"
    argv = ["train", str(ratings), "--variant", "pmf", "--latent-dim", "3",
            "--iterations", "4", "--seed", "5", "--model-out", str(model)]
    assert main(argv) == 0
    return model


class TestEvaluate:
    def test_rmse_matches_engine(self, ratings, trained_model, tmp_path, capsys):
        capsys.readouterr()
        assert main(["evaluate", "--model", str(trained_model), str(ratings)]) == 0
        out = capsys.readouterr().out
        assert out.startswith("RMSE ")
        printed = float(out.split()[1])
        from vrcmf.ratings import parse_ratings
        meta, U, V, _ = load_model(trained_model)
        matrix = parse_ratings(ratings)
        want = evaluate_rmse(U, V, matrix.user_idx, matrix.item_idx, matrix.rating)
        assert printed == pytest.approx(want, abs=5e-5)

    def test_clamp_flag_changes_large_predictions(self, ratings, trained_model, capsys):
        capsys.readouterr()
        assert main(["evaluate", "--model", str(trained_model), str(ratings)]) == 0
        plain = float(capsys.readouterr().out.split()[1])
        assert main(["evaluate", "--model", str(trained_model), str(ratings),
                     "--clamp"]) == 0
        clamped = float(capsys.readouterr().out.split()[1])
        assert clamped <= plain + 5e-5

    def test_comparison_table(self, ratings, trained_model, capsys):
        capsys.readouterr()
        assert main(["evaluate", "--model", str(trained_model), str(ratings),
                     "--name", "pmf", "--baseline", "global=1.2",
                     "--baseline", "user-cf=1.1"]) == 0
        out = capsys.readouterr().out
        assert "model" in out and "improved" in out
        lines = out.strip().split("\n")
        assert any(line.startswith("global") and "0.000%" in line for line in lines)
        assert any(line.startswith("pmf") for line in lines)

    def test_user_cf_baseline_row(self, ratings, trained_model, capsys):
        capsys.readouterr()
        assert main(["evaluate", "--model", str(trained_model), str(ratings),
                     "--user-cf-baseline", "5"]) == 0
        assert "user-cf in-sample RMSE" in capsys.readouterr().out

    def test_malformed_baseline_spec_errors(self, ratings, trained_model, capsys):
        assert main(["evaluate", "--model", str(trained_model), str(ratings),
                     "--baseline", "global"]) == 1
        assert "NAME=RMSE" in capsys.readouterr().err

    def test_unknown_user_errors(self, trained_model, tmp_path, capsys):
        other = tmp_path / "other.dat"
        other.write_text("stranger::m0::3::0\n", encoding="utf-8")
        assert main(["evaluate", "--model", str(trained_model), str(other)]) == 1
        assert "unknown user id 'stranger'" in capsys.readouterr().err


class TestPredict:
    def test_file_to_file(self, trained_model, tmp_path):
        pairs = tmp_path / "pairs.tsv"
        pairs.write_text("u0\tm0\nu1\tm3\n\nu7\tm5\n", encoding="utf-8")
        out_path = tmp_path / "preds.tsv"
        assert main(["predict", "--model", str(trained_model),
                     "--input", str(pairs), "--output", str(out_path)]) == 0
        lines = out_path.read_text(encoding="utf-8").strip().split("\n")
        assert len(lines) == 3  # the blank line is skipped
        meta, U, V, _ = load_model(trained_model)
        u_of = {u: i for i, u in enumerate(meta["user_ids"])}
        t_of = {t: j for j, t in enumerate(meta["item_ids"])}
        for line in lines:
            raw_u, raw_t, text = line.split("\t")
            want = float(U[:, u_of[raw_u]] @ V[:, t_of[raw_t]])
            assert float(text) == want

    def test_clamped_predictions_stay_on_scale(self, trained_model, tmp_path):
        pairs = tmp_path / "pairs.tsv"
        pairs.write_text("\n".join(f"u{u}\tm{j}" for u in range(8)
                                   for j in range(6)) + "\n", encoding="utf-8")
        out_path = tmp_path / "preds.tsv"
        assert main(["predict", "--model", str(trained_model), "--clamp",
                     "--input", str(pairs), "--output", str(out_path)]) == 0
        for line in out_path.read_text(encoding="utf-8").strip().split("\n"):
            value = float(line.split("\t")[2])
            assert 1.0 <= value <= 5.0

    def test_stdin_stdout(self, trained_model, capsys, monkeypatch):
        monkeypatch.setattr(sys, "stdin", io.StringIO("u0\tm0\nu2\tm2\n"))
        assert main(["predict", "--model", str(trained_model)]) == 0
        out = capsys.readouterr().out.strip().split("\n")
        assert len(out) == 2
        assert out[0].startswith("u0\tm0\t")

    def test_unknown_item_errors(self, trained_model, tmp_path, capsys):
        pairs = tmp_path / "pairs.tsv"
        pairs.write_text("u0\tmystery\n", encoding="utf-8")
        assert main(["predict", "--model", str(trained_model),
                     "--input", str(pairs), "--output", str(tmp_path / "o")]) == 1
        assert "unknown item id 'mystery'" in capsys.readouterr().err

    def test_malformed_pair_errors(self, trained_model, tmp_path, capsys):
        pairs = tmp_path / "pairs.tsv"
        pairs.write_text("just-one-field\n", encoding="utf-8")
        assert main(["predict", "--model", str(trained_model),
                     "--input", str(pairs), "--output", str(tmp_path / "o")]) == 1
        assert "line 1" in capsys.readouterr().err


class TestGridSearch:
    def test_sweep_with_surface_output(self, ratings, tmp_path, capsys):
        surface = tmp_path / "surface.csv"
        assert main(["grid-search", str(ratings), "--variant", "pmf",
                     "--latent-dim", "2", "--iterations", "2", "--seed", "0",
                     "--grid-u", "0.1 1.0", "--grid-v", "0.5",
                     "--surface-out", str(surface)]) == 0
        out = capsys.readouterr().out
        assert out.startswith("best lambda_u")
        rows = surface.read_text(encoding="utf-8").strip().split("\n")
        assert rows[0] == "lambda_u,lambda_v,val_rmse"
        assert len(rows) == 4  # two lambda_u runs plus one lambda_v run
        for row in rows[1:]:
            lu, lv, rmse = (float(v) for v in row.split(","))
            assert lu in (0.1, 1.0) and lv in (0.5, 1.0)
            assert np.isfinite(rmse)

    def test_best_point_is_minimum_of_second_sweep(self, ratings, tmp_path, capsys):
        surface = tmp_path / "surface.csv"
        assert main(["grid-search", str(ratings), "--variant", "pmf",
                     "--latent-dim", "2", "--iterations", "2", "--seed", "0",
                     "--grid-u", "0.1 1.0", "--grid-v", "0.5 2.0",
                     "--surface-out", str(surface)]) == 0
        rows = surface.read_text(encoding="utf-8").strip().split("\n")[1:]
        triples = [tuple(float(v) for v in row.split(",")) for row in rows]
        second = triples[2:]
        best_row = min(second, key=lambda t: t[2])
        out = capsys.readouterr().out
        assert f"lambda_v {best_row[1]!r}" in out
