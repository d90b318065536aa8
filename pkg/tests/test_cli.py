import json
import subprocess
import sys

import networkx as nx
import numpy as np
import pytest

from sbmcluster.cli import build_parser, main, parse_k_list


@pytest.fixture
def ratings(tmp_path):
    g = np.random.default_rng(0)
    pairs = g.choice(40 * 30, size=400, replace=False)
    lines = [f"{p // 30 + 1}\t{p % 30 + 1}\t{g.integers(1, 6)}\t0" for p in pairs]
    path = tmp_path / "r.tsv"
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def graph(tmp_path):
    h = nx.planted_partition_graph(3, 20, 0.4, 0.03, seed=2)
    path = tmp_path / "g.txt"
    path.write_text("% planted\n" + "".join(f"{u + 1} {v + 1}\n" for u, v in h.edges()))
    return path


def run(*args):
    return main([str(a) for a in args])


def test_fit_soft_outputs(ratings, tmp_path, capsys):
    out = tmp_path / "o"
    assert run("fit-soft", "--input", ratings, "--k", 3, "--l", 2, "--variant", "mc", "--s", 5,
               "--seed", 1, "--max-iterations", 5, "--out", out) == 0
    model = json.loads((out / "model.json").read_text())
    assert (model["k"], model["l"]) == (3, 2)
    assert np.array(model["theta"]).shape == (3, 2, 5)
    assert np.allclose(np.array(model["h_users"]).sum(1), 1)
    assert (out / "trace.csv").read_text().startswith("iteration,entropy,elapsed_seconds\n")
    assert "final entropy" in capsys.readouterr().out


def test_missing_file(tmp_path, capsys):
    assert run("fit-soft", "--input", tmp_path / "nope.tsv", "--out", tmp_path) == 1
    assert "nope.tsv" in capsys.readouterr().err


def test_parse_error_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("1\t1\t5\n1\n")
    assert run("fit-soft", "--input", bad, "--out", tmp_path) == 1
    assert ":2:" in capsys.readouterr().err


@pytest.mark.parametrize("argv,needle", [
    (["fit-soft", "--input", "x", "--s", "0"], "must be >= 1"),
    (["fit-hard", "--input", "x", "--alpha", "0"], "alpha must lie in (0, 1]"),
    (["recommend", "--input", "x", "--folds", "1"], "must be >= 2"),
    (["anonymize", "--input", "x", "--k-list", "0,3"], "every k must be >= 1"),
    (["fit-soft", "--input", "x", "--time-budget", "-3"], "must be > 0"),
])
def test_invalid_config_exit_2(argv, needle, capsys):
    with pytest.raises(SystemExit) as ei:
        main(argv)
    assert ei.value.code == 2
    assert needle in capsys.readouterr().err


def test_k_list():
    assert parse_k_list("25,50,100") == [25, 50, 100]


def test_fit_hard_graph_assignment_and_determinism(graph, tmp_path):
    outs = []
    for t in (1, 4):
        out = tmp_path / f"o{t}"
        assert run("fit-hard", "--input", graph, "--k", 3, "--seed", 7, "--threads", t, "--out", out) == 0
        outs.append((out / "assignment.txt").read_bytes())
    lines = outs[0].decode().splitlines()
    assert len(lines) == 60
    assert {ln.split()[0] for ln in lines} == {str(i) for i in range(1, 61)}
    assert outs[0] == outs[1]


def test_fit_hard_ratings(ratings, tmp_path):
    out = tmp_path / "o"
    assert run("fit-hard", "--kind", "ratings", "--input", ratings, "--k", 3, "--l", 2, "--out", out) == 0
    assert len((out / "assignment_users.txt").read_text().splitlines()) == 40
    assert {ln.split()[1] for ln in (out / "assignment_items.txt").read_text().splitlines()} <= {"0", "1"}


@pytest.mark.parametrize("method", ["hard", "mc", "mmsbm"])
def test_recommend(ratings, tmp_path, method):
    out = tmp_path / method
    assert run("recommend", "--input", ratings, "--method", method, "--k", 2, "--max-iterations", 4,
               "--out", out) == 0
    rows = (out / "rmse.csv").read_text().splitlines()
    assert rows[0] == "fold,rmse,entropy,iterations,cold_start" and len(rows) == 7
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["fold_rmse"]) == 5
    assert (out / "trace_fold4.csv").exists()


def test_anonymize_creates_outdir_and_is_reproducible(graph, tmp_path):
    blobs = []
    for t in (1, 3):
        out = tmp_path / "deep" / f"t{t}"
        assert run("anonymize", "--input", graph, "--k-list", "2,3", "--apl-sources", 20,
                   "--threads", t, "--out", out) == 0
        names = sorted(p.name for p in out.iterdir())
        assert "report_k2.json" in names and "report_k3.json" in names
        assert "regenerated_k3_g4.txt" in names
        blobs.append({n: (out / n).read_bytes() for n in names if not n.startswith("trace")})
    assert blobs[0] == blobs[1]
    rep = json.loads(blobs[0]["report_k3.json"])
    assert rep["k"] == 3 and len(rep["generations"]) == 5


def test_env_out_dir(graph, tmp_path, monkeypatch):
    monkeypatch.setenv("SBMCLUSTER_OUT", str(tmp_path / "envout"))
    assert run("stats", "--input", graph) == 0
    st = json.loads((tmp_path / "envout" / "stats.json").read_text())
    assert st["n"] == 60 and st["apl_exact"]


def test_help_documents_ranges():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        for act in p._actions:
            if act.dest in ("help",):
                continue
            assert act.help, (name, act.dest)
            if act.type is not None and act.dest not in ("input", "out"):
                assert any(c in act.help for c in (">=", "> 0", "in (0, 1]", "[0, 2^64)", "each >= 1")), \
                    (name, act.dest)


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "sbmcluster.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("fit-soft", "fit-hard", "recommend", "anonymize", "stats"):
        assert cmd in r.stdout
