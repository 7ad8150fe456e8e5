import hashlib
import json

import pytest
from filelock import FileLock

from cfnav.cli import EXIT_FLAGS, EXIT_IO, EXIT_MISSING, build_parser, main
from cfnav.config import RunConfig


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def art(tmp_path_factory):
    """A tiny end-to-end pipeline run shared by the CLI tests."""
    d = tmp_path_factory.mktemp("cli")
    p = lambda n: str(d / n)
    assert main(["gen-data", "--scenarios", "40", "--seed", "7", "--out", p("sf.csv")]) == 0
    assert main(["train-predictor", "--data", p("sf.csv"), "--stride", "4", "--pred-epochs", "1",
                 "--out", p("pred.json")]) == 0
    common = ["--bootstrap-episodes", "6", "--epochs", "1", "--iters", "5"]
    assert main(["train-policy", "--mode", "social", "--predictor", p("pred.json"), *common,
                 "--out", p("social.json")]) == 0
    assert main(["train-policy", "--mode", "collect", *common, "--out", p("collect.json")]) == 0
    return d


def test_gen_data_rows_and_summary(art, capsys, tmp_path):
    assert main(["gen-data", "--scenarios", "3", "--seed", "1", "--out", str(tmp_path / "a.csv")]) == 0
    out = capsys.readouterr().out
    assert "scenarios=3" in out and "mean_min_distance_m=" in out
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 1 + 3 * 80 * 2


@pytest.mark.parametrize("argv", [
    ["gen-data", "--scenarios", "0"],
    ["gen-data", "--scenarios", "many"],
    ["gen-data", "--ps-variant", "median"],
    ["gen-data", "--lr", "-1"],
    ["nonsense"],
    [],
    ["eval", "--policy", "a.json", "--compare"],
])
def test_bad_flags_exit_3(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "a.json").write_text("{}")
    assert main(argv) == EXIT_FLAGS


def test_missing_prerequisites_exit_4(art, capsys, tmp_path):
    assert main(["train-policy", "--mode", "social", "--out", str(tmp_path / "p.json")]) == EXIT_MISSING
    assert "--predictor" in capsys.readouterr().err
    assert main(["eval", "--policy", str(tmp_path / "gone.json"), "--out", str(tmp_path / "r.json")]) == EXIT_MISSING
    assert "gone.json" in capsys.readouterr().err
    assert main(["train-predictor", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path / "x.json")]) \
        == EXIT_MISSING
    assert main(["collect", "--out", str(tmp_path / "c.csv")]) == EXIT_MISSING


def test_io_errors_exit_2(art, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"version": 1, "lay')
    assert main(["eval", "--policy", str(bad), "--out", str(tmp_path / "r.json")]) == EXIT_IO
    assert main(["gen-data", "--scenarios", "1", "--out", "/proc/forbidden/x.csv"]) == EXIT_IO


def test_locked_output_directory_exit_2(tmp_path):
    with FileLock(str(tmp_path / ".cfnav.lock")):
        assert main(["gen-data", "--scenarios", "1", "--out", str(tmp_path / "a.csv")]) == EXIT_IO
    assert main(["gen-data", "--scenarios", "1", "--out", str(tmp_path / "a.csv")]) == 0
    assert not (tmp_path / ".cfnav.lock").exists()


def test_help_lists_units_and_defaults(capsys):
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    assert set(sub) == {"gen-data", "train-predictor", "train-policy", "collect", "eval", "continual"}
    for name, p in sub.items():
        text = p.format_help()
        for action in p._actions:
            if action.dest == "help" or action.nargs == 0:  # --help and on/off switches
                continue
            h = action.help.lower()
            assert "default" in h or "required" in h or action.required, (name, action.dest)
            assert h.startswith("[") or action.choices, (name, action.dest)
        for f in vars(RunConfig()):
            assert "--" + f.replace("_", "-") in text
        assert "--config" in text and "--seed" in text and "--out" in text
    assert main(["eval", "--help"]) == 0


def test_config_file_and_flags(art, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("seed = 5\n")
    main(["gen-data", "--scenarios", "2", "--config", str(cfg), "--out", str(tmp_path / "a.csv")])
    main(["gen-data", "--scenarios", "2", "--seed", "5", "--out", str(tmp_path / "b.csv")])
    main(["gen-data", "--scenarios", "2", "--config", str(cfg), "--seed", "6", "--out", str(tmp_path / "c.csv")])
    assert sha(tmp_path / "a.csv") == sha(tmp_path / "b.csv") != sha(tmp_path / "c.csv")
    assert main(["gen-data", "--config", str(tmp_path / "missing.cfg")]) == EXIT_MISSING


def test_eval_pair_writes_comparison(art, tmp_path):
    out = tmp_path / "cmp.json"
    rc = main(["eval", "--policy", str(art / "social.json"), "--policy", str(art / "collect.json"),
               "--predictor", str(art / "pred.json"), "--episodes", "3", "--seed", "3", "--compare",
               "--out", str(out)])
    assert rc == 0
    rep = json.loads(out.read_text())
    assert set(rep["policies"]) == {"social", "collect"}
    for r in rep["policies"].values():
        assert r["n_episodes"] == 3
        assert set(r["aggregate"]) == {"gr", "spl", "stl", "cp", "co", "psv", "mean_cp_perturbation"}


def test_collect_then_train_on_corpus(art, tmp_path):
    c = tmp_path / "col.csv"
    assert main(["collect", "--policy", str(art / "collect.json"), "--episodes", "3", "--out", str(c)]) == 0
    assert json.loads((tmp_path / "col.csv.meta.json").read_text())["tag"] == "enriched"
    assert main(["train-policy", "--mode", "collect", "--data", str(c), "--epochs", "1", "--iters", "3",
                 "--out", str(tmp_path / "p.json")]) == 0
    assert main(["train-predictor", "--data", str(art / "sf.csv"), "--extra", str(c), "--stride", "8",
                 "--pred-epochs", "1", "--out", str(tmp_path / "pr.json")]) == 0


def test_continual_small_run(art, tmp_path):
    out = tmp_path / "cont"
    rc = main(["continual", "--policy", str(art / "collect.json"), "--days", "2", "--episodes-per-day", "2",
               "--finetune-epochs", "1", "--iters", "5", "--out", str(out)])
    assert rc == 0
    assert len((out / "curve.csv").read_text().splitlines()) == 3
    assert (out / "rescue_events.jsonl").exists() and (out / "policy_final.json").exists()
