from __future__ import annotations

import csv
import json
import math
import shutil

import pytest

from metanav.cli import build_parser, main, parse_seeds
from metanav.env import EpisodeLog
from metanav.world import OccupancyGrid

TINY = {"world": {"difficulty": "easy", "train_seeds": [0], "test_seeds": [50],
                  "width_m": 6.0, "height_m": 6.0},
        "trainer": {"N": 1, "K": 1, "L": 1, "td3": {"batch_size": 4}},
        "eval": {"episodes": 1}}


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


def write_log(path, poses, event):
    recs = [{"t": i, "pose": list(p), "action": [0.0] * 7, "reward": 0.0,
             "event": event if i == len(poses) - 1 else "none"} for i, p in enumerate(poses) if i]
    log = EpisodeLog({"init_pose": list(poses[0]), "episode": 0}, recs)
    with open(path, "a") as fp:
        log.write(fp)


def test_parse_seeds():
    assert parse_seeds("1-3,7") == (1, 2, 3, 7)
    with pytest.raises(ValueError):
        parse_seeds("3-1")


class TestGenMaps:
    def test_files_and_rerun(self, tmp_path):
        args = ["gen-maps", "--difficulty", "medium", "--count", "5", "--seed", "7"]
        assert main([*args, "--out", str(tmp_path / "a")]) == 0
        assert main([*args, "--out", str(tmp_path / "b")]) == 0
        names = sorted((p.name for p in (tmp_path / "a").glob("*.map")),
                       key=lambda n: int(n.split("_")[1].split(".")[0]))
        assert names == [f"medium_{s}.map" for s in range(7, 12)]
        for n in [*names, "manifest.json"]:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
        g = OccupancyGrid.load(tmp_path / "a" / "medium_9.map")
        assert g.seed == 9 and g.difficulty.value == "medium"
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert len(manifest["config_hash"]) == 16 and len(manifest["maps"]) == 5

    def test_invalid_difficulty(self, tmp_path, capsys):
        code = main(["gen-maps", "--difficulty", "nightmare", "--count", "1", "--out", str(tmp_path)])
        assert code != 0
        assert "difficulty" in capsys.readouterr().err


class TestTrain:
    def test_defaults(self):
        args = build_parser().parse_args(["train"])
        from metanav.cli import _resolve_run_config
        t = _resolve_run_config(args).trainer_config()
        assert (t.lam, t.eta_deg, t.rs_mode) == (0.4, 90.0, False)

    def test_flags(self):
        from metanav.cli import _resolve_run_config
        args = build_parser().parse_args(["train", "--lambda", "0", "--rs", "--no-filter",
                                          "--eta", "70", "--algo", "ppo", "--iterations", "3"])
        t = _resolve_run_config(args).trainer_config()
        assert (t.lam, t.rs_mode, t.filter_failures, t.eta_deg, t.algorithm, t.N) == \
            (0.0, True, False, 70.0, "ppo", 3)

    def test_run_and_rerun_identical(self, tmp_path, tiny_config):
        cmd = ["train", "--config", str(tiny_config), "--out", str(tmp_path / "a"),
               "--seed", "2", "--iterations", "2"]
        assert main(cmd) == 0
        shutil.copytree(tmp_path / "a", tmp_path / "b")
        shutil.rmtree(tmp_path / "a")
        assert main(cmd) == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert {str(f) for f in files} >= {"config.json", "report.csv", "state.ckpt",
                                           "checkpoints/iter_0001.ckpt", "checkpoints/iter_0002.ckpt",
                                           "logs/iter_0002.jsonl", "hr/iter_0002.jsonl"}
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        cfg = json.loads((tmp_path / "a" / "config.json").read_text())
        assert cfg["config_hash"]

    def test_bad_config(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"trainer": {"lam": 7}}')
        assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 1


class TestDiagnose:
    def test_straight_logs(self, tmp_path):
        log = tmp_path / "s.jsonl"
        write_log(log, [(0, 0, 0), (1, 0, 0), (2, 0, 0)], "goal")
        write_log(log, [(0, 1, 0), (1, 1, 0), (2, 1, 0)], "goal")
        assert main(["diagnose", "--logs", str(log), "--out", str(tmp_path / "o")]) == 0
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["count"] == 0 and (tmp_path / "o" / "hr.jsonl").read_text() == ""

    def test_uturn_log(self, tmp_path):
        log = tmp_path / "u.jsonl"
        write_log(log, [(0, 0, 0), (1, 0, 0), (0, 0, math.pi)], "goal")
        assert main(["diagnose", "--logs", str(log), "--out", str(tmp_path / "o")]) == 0
        pts = [json.loads(l) for l in (tmp_path / "o" / "hr.jsonl").read_text().splitlines()]
        assert len(pts) == 1 and (pts[0]["x"], pts[0]["y"]) == (0, 0)

    def test_eta_subset(self, tmp_path):
        log = tmp_path / "sweep.jsonl"
        # turns of 60, 100 and 150 degrees
        pts = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]
        heading = 0.0
        for turn in (60, 100, 150):
            heading += math.radians(turn)
            x, y, _ = pts[-1]
            pts.append((x + math.cos(heading), y + math.sin(heading), 0.0))
        write_log(log, pts, "goal")
        out = {}
        for eta in ("50", "130"):
            assert main(["diagnose", "--logs", str(log), "--eta", eta, "--out",
                         str(tmp_path / eta)]) == 0
            out[eta] = {(round(p["x"], 9), round(p["y"], 9)) for p in map(
                json.loads, (tmp_path / eta / "hr.jsonl").read_text().splitlines())}
        assert len(out["50"]) == 3 and len(out["130"]) == 1 and out["130"] <= out["50"]

    def test_collision_filtered_unless_asked(self, tmp_path):
        log = tmp_path / "c.jsonl"
        write_log(log, [(0, 0, 0), (1, 0, 0), (0, 0, 0)], "collision")
        main(["diagnose", "--logs", str(log), "--out", str(tmp_path / "f")])
        main(["diagnose", "--logs", str(log), "--no-filter", "--out", str(tmp_path / "n")])
        assert json.loads((tmp_path / "f" / "summary.json").read_text())["count"] == 0
        assert json.loads((tmp_path / "n" / "summary.json").read_text())["count"] == 1

    def test_malformed_log(self, tmp_path, capsys):
        log = tmp_path / "bad.jsonl"
        log.write_text("{not json\n")
        assert main(["diagnose", "--logs", str(log), "--out", str(tmp_path / "o")]) == 1
        assert "bad.jsonl:1" in capsys.readouterr().err


class TestEval:
    def test_cross_env_overlap(self, tmp_path, capsys):
        code = main(["eval", "--setup", "cross-env", "--baselines", "dwa", "--train-maps", "1-3",
                     "--maps", "3-5", "--out", str(tmp_path)])
        assert code == 1 and "overlap" in capsys.readouterr().err

    def test_checkpoint_cross_level(self, tmp_path, tiny_config):
        assert main(["train", "--config", str(tiny_config), "--out", str(tmp_path / "run")]) == 0
        ck = tmp_path / "run" / "checkpoints" / "iter_0001.ckpt"
        assert main(["eval", "--config", str(tiny_config), "--setup", "cross-level",
                     "--checkpoint", str(ck), "--out", str(tmp_path / "ev")]) == 0
        rows = list(csv.DictReader((tmp_path / "ev" / "report.csv").open()))
        assert len(rows) == 3
        assert sorted(r["difficulty"] for r in rows) == ["difficult", "easy", "medium"]
        assert len({r["config_hash"] for r in rows}) == 1

    def test_missing_checkpoint(self, tmp_path, capsys):
        assert main(["eval", "--checkpoint", str(tmp_path / "nope.ckpt"),
                     "--out", str(tmp_path)]) == 1
        assert "not found" in capsys.readouterr().err

    def test_nothing_to_evaluate(self, tmp_path):
        assert main(["eval", "--out", str(tmp_path)]) == 1


class TestAblateReport:
    def test_eta_grid(self, tmp_path, tiny_config):
        assert main(["ablate", "--config", str(tiny_config), "--param", "eta",
                     "--values", "50,70,90,110,130", "--out", str(tmp_path)]) == 0
        rows = list(csv.DictReader((tmp_path / "ablation_eta.csv").open()))
        assert [r["eta"] for r in rows] == ["50", "70", "90", "110", "130"]
        md = tmp_path / "table.md"
        assert main(["report", "--inputs", str(tmp_path / "ablation_eta.csv"), "--out", str(md)]) == 0
        assert md.read_text().count("\n") == 2 + 5

    def test_report_to_stdout(self, tmp_path, capsys):
        p = tmp_path / "r.csv"
        p.write_text("controller,NS,ATT,SR,CR,TR,episodes\ndwa,1,2,3,4,5,6\n")
        assert main(["report", "--inputs", str(p)]) == 0
        assert "| dwa | 1.00 |" in capsys.readouterr().out

    def test_no_command(self):
        assert main([]) != 0
