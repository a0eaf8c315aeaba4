import json

import pytest

from crpevi.cli import build_parser, main
from crpevi.dataset import load_dataset
from crpevi.envs import LinearMDP, TabularMDP, load_mdp


@pytest.fixture
def mdp_path(tmp_path):
    path = str(tmp_path / "mdp.json")
    assert main(["gen-mdp", "--kind", "linear", "--d", "4", "--S", "4", "--A", "2", "--H", "2", "--out", path]) == 0
    return path


def test_global_flags_before_or_after_subcommand():
    parser = build_parser()
    before = parser.parse_args(["--seed", "5", "--out", "x", "plot", "--results", "r.csv"])
    after = parser.parse_args(["plot", "--results", "r.csv", "--seed", "5", "--out", "x"])
    assert (before.seed, before.out) == (after.seed, after.out) == (5, "x")
    assert parser.parse_args(["plot", "--results", "r.csv"]).seed == 0


def test_gen_mdp_kinds(tmp_path, mdp_path):
    assert isinstance(load_mdp(mdp_path), LinearMDP)
    tabular = str(tmp_path / "tab.json")
    assert main(["--seed", "3", "gen-mdp", "--kind", "tabular", "--S", "3", "--out", tabular]) == 0
    assert isinstance(load_mdp(tabular), TabularMDP)


def test_gen_mdp_lower_bound_writes_both_trees(tmp_path):
    out = str(tmp_path / "tree.json")
    assert main(["gen-mdp", "--kind", "lower-bound", "--A", "3", "--L", "2", "--H", "3", "--out", out]) == 0
    assert load_mdp(out).S == 4
    assert load_mdp(str(tmp_path / "tree.prime.json")).S == 4


def test_pipeline(tmp_path, mdp_path):
    data = str(tmp_path / "data")
    assert (
        main(
            ["collect", "--mdp", mdp_path, "--n", "40", "--attack-mode", "random_reward", "--c", "0.1"]
            + ["--eps", "0.5", "--timing", "on_the_fly", "--out", data]
        )
        == 0
    )
    ds, sidecar = load_dataset(data)
    assert ds.n == 40 and sidecar.corrupted.sum() == 8

    solution = str(tmp_path / "solution.json")
    assert main(["solve", "--mdp", mdp_path, "--data", data, "--algorithm", "pevi", "--out", solution]) == 0
    with open(solution, encoding="utf-8") as f:
        assert json.load(f)["algorithm"] == "pevi"

    report = str(tmp_path / "eval.json")
    assert (
        main(["eval", "--mdp", mdp_path, "--solution", solution, "--data", data, "--coverage", "--out", report]) == 0
    )
    with open(report, encoding="utf-8") as f:
        result = json.load(f)
    assert result["suboptimality"] >= 0
    assert result["corruption"]["num_corrupted"] == 8
    assert "cc_weighted" in result["coverage"]


def test_corrupt_saved_dataset(tmp_path, mdp_path):
    clean = str(tmp_path / "clean")
    dirty = str(tmp_path / "dirty")
    assert main(["collect", "--mdp", mdp_path, "--n", "30", "--out", clean]) == 0
    args = ["corrupt", "--mdp", mdp_path, "--data", clean, "--attack-mode", "adversarial_dynamics"]
    assert main(args + ["--c", "0.2", "--eps", "1", "--out", dirty]) == 0
    ds, sidecar = load_dataset(dirty)
    assert sidecar.corrupted.sum() == 12
    assert ds.meta["adversary"]["mode"] == "adversarial_dynamics"


def test_errors_exit_with_one(tmp_path, mdp_path):
    assert main(["solve", "--mdp", mdp_path, "--data", str(tmp_path / "missing")]) == 1
    assert main(["eval", "--mdp", mdp_path]) == 1
    assert main(["sweep"]) == 1
    assert main(["gen-mdp", "--kind", "linear", "--d", "20", "--out", str(tmp_path / "bad.json")]) == 1


def test_sweep_and_plot(tmp_path):
    config = tmp_path / "sweep.cfg"
    config.write_text("mdp.H = 2\ndata.n = 20, 40\nalgorithms = cr_pevi, pevi\n", encoding="utf-8")
    out = str(tmp_path / "out")
    assert main(["--config", str(config), "--out", out, "sweep"]) == 0
    assert main(["plot", "--results", out + "/results.csv", "--x", "n", "--out", out]) == 0
    assert (tmp_path / "out" / "suboptimality_vs_n.svg").exists()


def test_log_file(tmp_path, mdp_path):
    log = tmp_path / "crpevi.log"
    assert main(["--log-file", str(log), "collect", "--mdp", mdp_path, "--n", "5", "--out", str(tmp_path / "d")]) == 0
    assert "Collected 5 episodes" in log.read_text(encoding="utf-8")
