import json

import numpy as np
import pytest

from mmjre import cli
from mmjre import pipeline as pl
from mmjre.config import CONFIG_ENV, PipelineConfig, load_config
from mmjre.corpus import load_corpus
from mmjre.errors import ConfigError, InputError, NumericalError
from mmjre.synthetic import planted_features, vocabulary, write_synthetic
from mmjre.tagging import PredictionHead, TagVocabulary, encode_quintuples
from mmjre.tsv import read_matrix

SMALL = dict(d_T=32, d_I=64, d_z=8, d_l=8, heads=4)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("syn")
    path, vocab = write_synthetic(d, 8, seed=0)
    dev, _ = write_synthetic(d, 4, seed=1, prefix="dev")
    return path, dev, vocab


@pytest.fixture(scope="module")
def records(corpus):
    return load_corpus(corpus[0])


def small(**kw):
    return PipelineConfig(**{**SMALL, **kw})


class TestConfig:
    def test_validation_names_field(self):
        for kw, field in [({"alpha": -0.1}, "alpha"), ({"lam": -1}, "lambda"),
                          ({"epsilon": 0}, "epsilon"), ({"d_T": 30, "heads": 4}, "heads"),
                          ({"sinkhorn_inner": 0}, "sinkhorn_inner")]:
            with pytest.raises(ConfigError, match=field):
                PipelineConfig(**kw)

    def test_layering(self, tmp_path, monkeypatch):
        f = tmp_path / "c.json"
        f.write_text(json.dumps({"alpha": 0.2, "lambda": 0.9}))
        monkeypatch.setenv(CONFIG_ENV, str(f))
        cfg = load_config(alpha=0.7)
        assert cfg.alpha == 0.7 and cfg.lam == 0.9 and cfg.d_T == 768
        with pytest.raises(ConfigError, match="unknown config field"):
            load_config(tmp_path / "c.json", bogus=1)

    def test_bad_file(self, tmp_path):
        (tmp_path / "c.json").write_text("{nope")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(tmp_path / "c.json")


def test_report_is_consistent(records):
    report = pl.run_pipeline(small(lam=0.6), records)
    assert len(report.records) == len(records)
    for r in report.records:
        assert r.joint == pytest.approx(r.l_main + 0.6 * r.loss_graph, rel=1e-15)
        assert r.loss_graph == pytest.approx(0.4 * r.wd_cost + 0.6 * r.gwd_cost, rel=1e-12)
    d = report.to_dict()
    assert set(d["metrics"]) == {"precision", "recall", "f1"}
    assert "timings" not in d


def test_run_is_deterministic(records):
    a = pl.run_pipeline(small(seed=3), records).to_json()
    b = pl.run_pipeline(small(seed=3), records).to_json()
    c = pl.run_pipeline(small(seed=4), records).to_json()
    assert a == b != c


def test_alpha_one_matches_node_sinkhorn(records):
    model = pl.build_model(small(alpha=1.0), records)
    feats = pl.compute_features(model, records[0], pl.pmi_for(records))
    a = feats.alignment
    from mmjre.ot import sinkhorn, uniform
    ref = sinkhorn(a.node_cost, uniform(a.node_cost.shape[0]), uniform(a.node_cost.shape[1]),
                   0.1, 20)
    assert np.array_equal(a.plan.values, ref.values)
    assert a.loss_graph == a.wd_cost


def test_sweep(records):
    rows = pl.sweep(small(), records[:3], [0.0, 0.5, 1.0], [0.0, 0.3, 1.0])
    assert len(rows) == 9
    for row in rows:
        if row["alpha"] == 0.0:
            assert row["loss_graph"] == row["gwd_cost"]
        if row["alpha"] == 1.0:
            assert row["loss_graph"] == row["wd_cost"]
        if row["lambda"] == 0.0:
            assert row["joint"] == row["l_main"]
    with pytest.raises(ConfigError, match="alpha"):
        pl.sweep(small(), records[:1], [2.0], [0.0])


def test_export(records, tmp_path):
    report = pl.run_pipeline(small(), records)
    rid = records[2].id
    rec = records[2]
    paths = pl.export_matrices(report, rid, tmp_path / "a")
    names = sorted(p.name for p in paths)
    assert {"plan.tsv", "node_cost.tsv", "fused_cost.tsv", "tags.tsv", "sd.tsv",
            "co.tsv"} <= set(names)
    plan, rows, cols = read_matrix(tmp_path / "a" / "plan.tsv")
    assert plan.shape == (rec.scene.k, rec.sentence.n)
    assert rows[0].endswith(rec.scene.object_labels[0]) and cols[0].endswith(rec.sentence.tokens[0])
    assert np.max(np.abs(plan.sum(axis=1) - 1 / rec.scene.k)) < 1e-6
    again = pl.export_matrices(pl.run_pipeline(small(), records), rid, tmp_path / "b")
    for p, q in zip(paths, again):
        assert p.read_bytes() == q.read_bytes()
    with pytest.raises(InputError, match="unknown record"):
        pl.export_matrices(report, "missing", tmp_path / "c")


def _planted_pairs(records, dim):
    tags = TagVocabulary.from_labels(vocabulary())
    feats = planted_features(records, dim, seed=0)
    return [(S, encode_quintuples(r.gold, r.sentence.n, tags)) for S, r in zip(feats, records)]


def test_fit_head_on_separable_grids(corpus):
    train, dev = load_corpus(corpus[0]), load_corpus(corpus[1])
    cfg = small(learning_rate=1e-3, max_epochs=30)
    tr, dv = _planted_pairs(train, 32), _planted_pairs(dev, 32)
    head = PredictionHead.init(32, len(vocabulary().tag_names), np.random.default_rng(0))
    fit = pl.fit_head(head, tr, dv, cfg)
    losses = [h["train_loss"] for h in fit.history]
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert pl.cell_accuracy(fit.head, tr) >= 0.99


def test_zero_learning_rate_leaves_head_unchanged(corpus):
    train = load_corpus(corpus[0])
    pairs = _planted_pairs(train, 32)
    head = PredictionHead.init(32, len(vocabulary().tag_names), np.random.default_rng(0))
    fit = pl.fit_head(head, pairs, pairs, small(learning_rate=0.0, max_epochs=3, patience=10))
    assert np.array_equal(fit.head.W_p, head.W_p) and np.array_equal(fit.head.b_p, head.b_p)


def test_patience_stops_after_dev_minimum(corpus):
    train = load_corpus(corpus[0])
    pairs = _planted_pairs(train, 32)
    # dev labels disagree with train labels, so dev loss bottoms out early
    dev = [(S, np.zeros_like(g.cells)) for S, g in pairs]
    head = PredictionHead.init(32, len(vocabulary().tag_names), np.random.default_rng(0))
    fit = pl.fit_head(head, pairs, dev, small(learning_rate=1e-2, patience=5))
    assert fit.stopped_epoch == fit.best_epoch + 5
    dev_losses = [h["dev_loss"] for h in fit.history]
    assert int(np.argmin(dev_losses)) == fit.best_epoch


def test_divergence_aborts(corpus):
    pairs = _planted_pairs(load_corpus(corpus[0]), 32)
    head = PredictionHead.init(32, len(vocabulary().tag_names), np.random.default_rng(0))
    with pytest.raises(NumericalError, match="diverged"):
        pl.fit_head(head, pairs, pairs, small(learning_rate=1e308))


def test_train_head_end_to_end(corpus):
    train, dev = load_corpus(corpus[0]), load_corpus(corpus[1])
    res = pl.train_head(small(max_epochs=3), train, dev)
    assert res.history[0]["epoch"] == 0 and len(res.history) <= 4
    assert res.head.W_p.shape == (len(res.model.tags), 64)


class TestCLI:
    def run(self, capsys, *argv):
        code = cli.main([str(a) for a in argv])
        out, err = capsys.readouterr()
        return code, out, err

    def flags(self):
        return [f"--d-T=32", "--d-I=64", "--d-z=8", "--d-l=8", "--heads=4"]

    def test_run_outputs_json(self, capsys, corpus):
        code, out, err = self.run(capsys, "run", corpus[0], "--vocab", corpus[2], *self.flags())
        assert code == 0
        report = json.loads(out)
        assert report["n_records"] == 8 and "f1" in report["metrics"]
        assert "precision" in err

    def test_run_is_byte_identical(self, capsys, corpus):
        a = self.run(capsys, "run", corpus[0], *self.flags())[1]
        b = self.run(capsys, "run", corpus[0], *self.flags())[1]
        assert a == b

    def test_exit_codes(self, capsys, corpus, tmp_path):
        assert self.run(capsys, "run", corpus[0], "--alpha", "3")[0] == 2
        assert self.run(capsys, "run", tmp_path / "missing.jsonl")[0] == 1
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": "x", "tokens": ["a"], "pos": ["X"], "heads": [4], '
                       '"dep_labels": ["d"], "scene_graph": {"objects": []}}\n')
        code, _, err = self.run(capsys, "ingest", bad)
        assert code == 1 and "bad.jsonl:1" in err

    def test_train_head_requires_seed(self, capsys, corpus):
        with pytest.raises(SystemExit) as exc:
            cli.main(["train-head", "--train", str(corpus[0])])
        assert exc.value.code == 2

    def test_train_head_then_run_with_checkpoint(self, capsys, corpus, tmp_path):
        ck = tmp_path / "head.npz"
        code, out, _ = self.run(capsys, "train-head", "--train", corpus[0], "--dev", corpus[1],
                                "--seed", 0, "--max-epochs", 2, "--out", ck, *self.flags())
        assert code == 0 and ck.exists()
        assert json.loads(out)["history"][0]["epoch"] == 0
        code, _, _ = self.run(capsys, "run", corpus[0], "--head", ck, *self.flags())
        assert code == 0
        code, _, err = self.run(capsys, "run", corpus[0], "--head", ck)
        assert code == 3 and "shape" in err

    def test_sweep_and_export(self, capsys, corpus, tmp_path):
        code, out, _ = self.run(capsys, "sweep", corpus[0], "--alphas", "0,1", "--lambdas", "0",
                                *self.flags())
        assert code == 0 and len(json.loads(out)["rows"]) == 2
        code, out, _ = self.run(capsys, "export", corpus[0], "--record", "syn-0001",
                                "--out", tmp_path / "x", *self.flags())
        assert code == 0 and (tmp_path / "x" / "plan.tsv").exists()
        assert self.run(capsys, "export", corpus[0], "--record", "zzz", "--out", tmp_path)[0] == 1

    def test_config_file_then_flags(self, capsys, corpus, tmp_path):
        f = tmp_path / "cfg.json"
        f.write_text(json.dumps({**SMALL, "alpha": 0.0}))
        code, out, _ = self.run(capsys, "run", corpus[0], "--config", f, "--lambda", "0")
        cfg = json.loads(out)["config"]
        assert code == 0 and cfg["alpha"] == 0.0 and cfg["lambda"] == 0.0 and cfg["d_T"] == 32

    def test_synth(self, capsys, tmp_path):
        code, out, _ = self.run(capsys, "synth", tmp_path, "--count", 5, "--seed", 2)
        assert code == 0 and len(load_corpus(json.loads(out)["corpus"])) == 5
