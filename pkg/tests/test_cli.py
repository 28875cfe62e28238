import json

import numpy as np
import pytest

from spotmag import io
from spotmag.cli import main
from spotmag.graph import Admg


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("suite")
    assert main(["simulate", "--d", "6..8", "--n", "300", "--count", "3", "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def model_path(tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "cascade.pkl"
    code = main(["train-posterior", "--count", "8", "--holdout", "2", "--d", "6..9", "--n", "300",
                 "--stages", "2", "--model", str(out)])
    assert code == 0
    return out


def test_simulate_outputs_and_determinism(suite, tmp_path):
    man = io.read_manifest(suite / "manifest.json")
    assert len(man["items"]) == 3 and man["config"]["seed"] == 7
    again = tmp_path / "again"
    main(["simulate", "--d", "6..8", "--n", "300", "--count", "3", "--seed", "7", "--out", str(again)])
    for it in man["items"]:
        assert (suite / it["data"]).read_bytes() == (again / it["data"]).read_bytes()


def test_simulate_count_zero(tmp_path):
    assert main(["simulate", "--count", "0", "--out", str(tmp_path)]) == 0
    assert io.read_manifest(tmp_path / "manifest.json")["items"] == []


def test_invalid_config_exit_2(tmp_path, capsys):
    assert main(["simulate", "--d", "0", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--indegree", "2,1", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "c.json"
    bad.write_text("[1]")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["learn", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"count": 2, "n": 50, "d": "4", "seed": 3}))
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--count", "1", "--out", str(out)]) == 0
    man = io.read_manifest(out / "manifest.json")
    assert len(man["items"]) == 1 and man["config"]["n"] == 50 and man["config"]["seed"] == 3


def test_train_report_and_posterior(model_path, suite, tmp_path):
    report = io.read_manifest(str(model_path) + ".report.json")["report"]
    assert {"auroc", "auprc", "kl"} <= set(report)
    data = suite / "data_000.csv"
    for extra, name in (([], "p.json"), (["--dynamic-adapt", "--replicas", "2"], "q.csv")):
        out = tmp_path / name
        assert main(["posterior", "--data", str(data), "--model", str(model_path), "--out", str(out)] + extra) == 0
        P = io.read_posterior(out).p
        assert np.array_equal(P, P.T)


def test_train_empty_corpus_rejected(tmp_path):
    assert main(["train-posterior", "--count", "0", "--holdout", "0", "--model", str(tmp_path / "m.pkl")]) == 2


def test_learn_methods_and_eval(suite, model_path, tmp_path):
    data = str(suite / "data_000.csv")
    fast = ["--alm-steps", "3", "--inner-steps", "2", "--inner-maxiter", "30"]
    for method in ("fci", "abic", "spot"):
        out = tmp_path / method
        args = ["learn", "--method", method, "--data", data, "--out", str(out), "--model", str(model_path)]
        assert main(args + fast) == 0
        for f in ("mag.json", "pag.json", "trace.jsonl", "manifest.json"):
            assert (out / f).exists()
    truth = str(suite / "mag_000.json")
    assert main(["eval", "--pred", truth, "--truth", truth, "--out", str(tmp_path / "ev")]) == 0
    summary = io.read_manifest(tmp_path / "ev" / "metrics.json")["summary"][0]
    assert summary["skeleton_f1_mean"] == summary["arrowhead_f1_mean"] == summary["tail_f1_mean"] == 1.0
    assert main(["eval", "--pred", str(tmp_path / "abic" / "pag.json"), "--truth", truth,
                 "--out", str(tmp_path / "ev2")]) == 0
    assert main(["eval", "--pred", truth, "--out", str(tmp_path / "ev3")]) == 2


def test_learn_spot_guide_variants(suite, model_path, tmp_path):
    base = ["learn", "--method", "spot", "--data", str(suite / "data_000.csv"), "--model", str(model_path),
            "--alm-steps", "2", "--inner-steps", "2", "--inner-maxiter", "20"]
    assert main(base + ["--shrink-test", "gradient", "--draw-scope", "inner_step",
                        "--out", str(tmp_path / "a")]) == 0
    assert (tmp_path / "a" / "mag.json").exists()
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"draw_scope": "nope"}')
    assert main(base + ["--config", str(cfg), "--out", str(tmp_path / "b")]) == 2


def test_learn_true_skeleton(suite, tmp_path):
    data = str(suite / "data_001.csv")
    truth = suite / "mag_001.json"
    out = tmp_path / "ts"
    assert main(["learn", "--data", data, "--true-skeleton", str(truth), "--out", str(out)]) == 0
    learned = io.read_graph(out / "mag.json")
    assert np.all(learned.adjacency() <= io.read_graph(truth).adjacency())


def test_learn_fci_recovers_collider(tmp_path):
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 2000))
    c = a + b + rng.standard_normal(2000)
    from spotmag.simulate import Dataset

    io.write_csv(Dataset(np.c_[a, b, c], ["a", "b", "c"]), tmp_path / "v.csv")
    assert main(["learn", "--method", "fci", "--data", str(tmp_path / "v.csv"), "--out", str(tmp_path / "o")]) == 0
    assert io.read_graph(tmp_path / "o" / "mag.json") == Admg.from_edges(3, [(0, 2), (1, 2)])


def test_spot_without_posterior_or_model(suite, tmp_path, monkeypatch):
    monkeypatch.setenv(io.MODEL_DIR_ENV, str(tmp_path / "none"))
    assert main(["learn", "--method", "spot", "--data", str(suite / "data_000.csv"), "--out", str(tmp_path)]) == 2


def test_learn_timeout_exit_4(suite, tmp_path):
    out = tmp_path / "to"
    assert main(["learn", "--data", str(suite / "data_000.csv"), "--timeout", "0", "--out", str(out)]) == 4
    assert (out / "mag.json").exists()
    assert io.read_manifest(out / "manifest.json")["status"] == "timeout"


def test_bench(suite, model_path, tmp_path):
    out = tmp_path / "bench"
    code = main(["bench", "--suite", str(suite), "--methods", "fci,abic", "--out", str(out),
                 "--alm-steps", "2", "--inner-steps", "2", "--inner-maxiter", "20", "--model", str(model_path)])
    assert code == 0
    for f in ("metrics.csv", "summary.csv", "summary_by_d.csv", "plot_data.json", "manifest.json"):
        assert (out / f).exists()
    plot = json.loads((out / "plot_data.json").read_text())
    assert set(plot) == {"fci", "abic"}
    assert main(["bench", "--suite", str(suite), "--methods", "xyz", "--out", str(out)]) == 2


def test_help_lists_flags(capsys):
    with pytest.raises(SystemExit):
        main(["learn", "--help"])
    text = capsys.readouterr().out
    for flag in ("--guide-c", "--no-sparsity-prior", "--posterior", "--timeout", "--true-skeleton"):
        assert flag in text
