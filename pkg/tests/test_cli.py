import subprocess
import sys

import pytest

from toponav.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from toponav.harness import ExperimentConfig
from toponav.world import OccupancyScene


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scenes")
    assert main(["gen-scenes", "--category", "open_space", "--count", "2", "--out", str(d)]) == EXIT_OK
    return d


def test_gen_scenes(scene_dir):
    files = sorted(scene_dir.glob("*.tnls"))
    assert [f.name for f in files] == ["open_space_00000.tnls", "open_space_00001.tnls"]
    assert OccupancyScene.load(files[0]).occupancy.shape == (48, 48)


def test_collect_train_map_navigate(scene_dir, tmp_path, capsys):
    shard, ck, m, trace = (tmp_path / n for n in ("d.tnd", "p.tnck", "m.tnmp", "t.csv"))
    assert main(["collect", "--scenes", str(scene_dir), "--out", str(shard), "--samples", "40"]) == EXIT_OK
    assert "wrote 40 triplets" in capsys.readouterr().out
    assert main(["train-bc", "--shards", str(shard), "--out", str(ck), "--epochs", "1"]) == EXIT_OK
    scene = str(scene_dir / "open_space_00000.tnls")
    from toponav.oracle import OracleConfig, sample_route
    import numpy as np
    from toponav.world import Embodiment
    s, g, _ = sample_route(OccupancyScene.load(scene), np.random.default_rng(0), OracleConfig(), Embodiment())
    assert main(["build-map", "--scene", scene, "--start", f"{s.x},{s.y}", "--goal", f"{g.x},{g.y}",
                 "--out", str(m)]) == EXIT_OK
    assert main(["navigate", "--scene", scene, "--map", str(m), "--policy", str(ck), "--start",
                 f"{s.x},{s.y},{s.theta}", "--max-steps", "5", "--trace", str(trace)]) == EXIT_OK
    assert capsys.readouterr().out.splitlines()[-1].startswith("outcome ")
    assert trace.read_text().startswith("step,x,y,theta")


def test_train_dagger(scene_dir, tmp_path, capsys):
    ck = tmp_path / "p.tnck"
    assert main(["train-dagger", "--scenes", str(scene_dir), "--out", str(ck), "--rounds", "1",
                 "--trajectories", "2", "--max-traj-steps", "5", "--epochs-per-round", "1"]) == EXIT_OK
    assert ck.exists() and "round_counts" in capsys.readouterr().out


def test_usage_errors(tmp_path, capsys):
    assert main(["gen-scenes", "--category", "lava", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["build-map", "--scene", str(tmp_path / "x.tnls"), "--start", "1,1", "--goal", "2,2",
                 "--out", str(tmp_path / "m")]) == EXIT_USAGE
    assert main(["eval", "--config", str(tmp_path / "absent.ini")]) == EXIT_USAGE
    assert main(["collect", "--scenes", str(tmp_path), "--out", str(tmp_path / "d")]) == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main(["navigate", "--start", "abc"])
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == EXIT_USAGE


def test_experiment_failure_exit_code(tmp_path):
    cfg = tmp_path / "c.ini"
    ExperimentConfig(seeds=(0,), eval_routes=1).save(cfg)
    assert main(["eval", "--config", str(cfg), "--workspace", str(tmp_path / "ws"), "--no-train"]) == EXIT_FAIL
    assert main(["report", "--config", str(cfg), "--workspace", str(tmp_path / "ws")]) == EXIT_USAGE


def test_eval_and_report_cli(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    ExperimentConfig(seeds=(0,), train_scenes_per_category=1, rounds=1, samples_per_round=16, epochs_per_round=1,
                     max_traj_steps=10, eval_routes=3, in_distribution_routes=3, max_steps=10).save(cfg)
    ws, out = tmp_path / "ws", tmp_path / "out"
    assert main(["eval", "--config", str(cfg), "--workspace", str(ws), "--out", str(out)]) == EXIT_OK
    first = (out / "summary.csv").read_bytes()
    assert main(["report", "--config", str(cfg), "--workspace", str(ws), "--out", str(out)]) == EXIT_OK
    assert (out / "summary.csv").read_bytes() == first


def test_console_script():
    r = subprocess.run([sys.executable, "-m", "toponav.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "navigate" in r.stdout
