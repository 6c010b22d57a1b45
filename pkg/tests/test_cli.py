"""CLI surface: exit codes, artifact layout, byte-stable outputs."""

import json
from pathlib import Path

from safeloco.cli import main
from safeloco.config import RunConfig, config_hash


def write_config(path: Path, doc: dict) -> Path:
    path.write_text(json.dumps(doc))
    return path


TINY = {
    "seed": 3,
    "env": {"lidar": {"n_azimuth": 8}},
    "train": {"n_envs": 2, "horizon": 16, "total_steps": 64, "epochs": 1,
              "minibatches": 1},
}


def test_train_writes_run_artifacts(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", TINY)
    out = tmp_path / "run"
    rc = main(["train", "--config", str(cfg), "--scenario", "narrow_passage",
               "--out", str(out)])
    assert rc == 0
    assert (out / "config.json").exists()
    assert (out / "metrics.csv").exists()
    assert (out / "ckpt_64.json").exists() and (out / "ckpt_64.bin").exists()
    # resolved config persisted verbatim: reload parses and hashes identically
    resolved = RunConfig.load(out / "config.json")
    manifest = json.loads((out / "ckpt_64.json").read_text())
    assert manifest["config_hash"] == config_hash(resolved)
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == "step,reward,J_C1,J_C2,J_C3,success_rate,level"


def test_unknown_config_key_exits_2(tmp_path, capsys):
    doc = dict(TINY)
    doc["env"] = {"weights": {"velocty_tracking": 2.0}}     # typo
    cfg = write_config(tmp_path / "bad.json", doc)
    rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")])
    assert rc == 2
    assert "velocty_tracking" in capsys.readouterr().err


def test_invalid_json_exits_2(tmp_path):
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "r")]) == 2


def test_missing_checkpoint_exits_4(tmp_path):
    rc = main(["eval", "--ckpt", str(tmp_path / "ghost"), "--scenario",
               "cluttered_static", "--trials", "1"])
    assert rc == 4


def test_missing_trajectory_exits_4(tmp_path):
    rc = main(["plot", "--traj", str(tmp_path / "none.csv"), "--scenario",
               "cluttered_static", "--out", str(tmp_path / "o.svg")])
    assert rc == 4


def test_unknown_scenario_exits_2(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", TINY)
    rc = main(["train", "--config", str(cfg), "--scenario", "wonderland",
               "--out", str(tmp_path / "r")])
    assert rc == 2


def test_metrics_byte_identical_across_same_seed_runs(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", TINY)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", str(cfg), "--scenario",
                     "cluttered_static", "--out", str(out)]) == 0
        outs.append((out / "metrics.csv").read_bytes())
    assert outs[0] == outs[1]


def test_replay_and_plot_roundtrip(micro_run, tmp_path):
    dump1 = tmp_path / "traj1.csv"
    dump2 = tmp_path / "traj2.csv"
    for dump in (dump1, dump2):
        rc = main(["replay", "--ckpt", str(micro_run), "--scenario",
                   "cluttered_static", "--seed", "5", "--dump", str(dump)])
        assert rc == 0
    assert dump1.read_bytes() == dump2.read_bytes()
    header = dump1.read_text().splitlines()[0]
    for col in ("px", "py", "yaw", "height", "reward", "c_safe", "c_limit",
                "c_d", "h_d", "d_obs", "term_velocity_tracking"):
        assert col in header

    svg = tmp_path / "plot.svg"
    rc = main(["plot", "--traj", str(dump1), "--scenario", "cluttered_static",
               "--out", str(svg)])
    assert rc == 0 and svg.exists()
    assert svg.read_text().startswith("<svg")


def test_eval_subcommand_writes_report(micro_run, tmp_path):
    rc = main(["eval", "--ckpt", str(micro_run), "--scenario",
               "cluttered_static", "--trials", "2", "--seed", "9",
               "--jobs", "1", "--out", str(tmp_path / "rep")])
    assert rc == 0
    files = list((tmp_path / "rep").glob("eval_*.csv"))
    assert len(files) == 1


def test_seed_env_var_fallback(tmp_path, monkeypatch):
    doc = {k: v for k, v in TINY.items() if k != "seed"}
    cfg = write_config(tmp_path / "cfg.json", doc)
    monkeypatch.setenv("SAFELOCO_SEED", "123")
    out = tmp_path / "seeded"
    assert main(["train", "--config", str(cfg), "--scenario",
                 "cluttered_static", "--out", str(out)]) == 0
    assert json.loads((out / "config.json").read_text())["seed"] == 123


def test_explicit_seed_beats_env_var(tmp_path, monkeypatch):
    doc = {k: v for k, v in TINY.items() if k != "seed"}
    cfg = write_config(tmp_path / "cfg.json", doc)
    monkeypatch.setenv("SAFELOCO_SEED", "123")
    out = tmp_path / "cli_seed"
    assert main(["train", "--config", str(cfg), "--scenario",
                 "cluttered_static", "--seed", "55", "--out", str(out)]) == 0
    assert json.loads((out / "config.json").read_text())["seed"] == 55
