from __future__ import annotations

import csv
import io

import numpy as np
import pytest

from conftest import corridor
from metanav.dwa import PlannerConfig
from metanav.rollouts import StaticController
from metanav.suite import (
    ETA_GRID_DEG,
    LAMBDA_GRID,
    MapPool,
    SuiteError,
    ablation_sweep,
    cached_train,
    dwa_baseline,
    dwa_fast_baseline,
    held_out_starts,
    markdown_table,
    overlay_svg,
    parse_bool,
    run_suite,
    static_tuner,
    sweep_csv,
    write_suite,
)
from metanav.td3 import TD3Params
from metanav.trainer import TrainerConfig, TrainingSetup, run_hash
from metanav.world import generate_map

CTRL = {"dwa": StaticController(dwa_baseline(), "dwa")}
TINY = TrainerConfig(N=1, K=1, L=1, td3=TD3Params(batch_size=4))


def tiny_setup():
    return TrainingSetup((corridor(6.0, 6.0, 1.0, 5.0),))


def test_sweep_grids():
    assert LAMBDA_GRID == (0.2, 0.4, 0.6, 0.8)
    assert ETA_GRID_DEG == (50.0, 70.0, 90.0, 110.0, 130.0)


def test_baselines():
    assert dwa_baseline() == PlannerConfig()
    assert dwa_fast_baseline().max_vel_x == 2.0


def test_static_tuner_picks_best_of_trials():
    g = [corridor(6.0, 6.0, 1.0, 5.0)]
    cfg, ns = static_tuner(g, seed=0, trials=3)
    assert cfg.is_within_bounds() and 0 <= ns <= 50


class TestHeldOutStarts:
    def test_valid_and_distinct_from_default(self):
        g = generate_map("medium", 3)
        starts = held_out_starts(g, 6, seed=1)
        assert len(starts) == 6 and g.start_pose() not in starts
        assert starts == held_out_starts(g, 6, seed=1)
        for p in starts:
            assert 0.5 <= p.x <= 2.5 and 0.3 * g.height_m <= p.y <= 0.7 * g.height_m

    def test_impossible_request(self):
        cells = np.ones((120, 120), dtype=bool)
        cells[40:80, 80:115] = False
        from metanav.world import OccupancyGrid
        g = OccupancyGrid(cells, 0.05, "easy", 0, (60, 90), (60, 100))
        with pytest.raises(SuiteError):
            held_out_starts(g, 1, seed=0)


class TestRunSuite:
    def test_cross_env_partition(self):
        pool = MapPool("easy", tuple(range(1, 11)), tuple(range(11, 21)))
        res = run_suite("cross-env", CTRL, pool, episodes=10)
        seeds = {r.map_seed for _, r in res.records}
        assert seeds <= set(range(11, 21)) and not seeds & set(range(1, 11))

    def test_cross_env_overlap_refused(self):
        with pytest.raises(SuiteError, match="overlap"):
            run_suite("cross-env", CTRL, MapPool("easy", (1, 2), (2, 3)), episodes=2)

    def test_cross_level_counts(self):
        ctrls = {**CTRL, "fast": StaticController(dwa_fast_baseline(), "fast")}
        res = run_suite("cross-level", ctrls, MapPool("medium", (0,), (100,)), episodes=1)
        assert len(res.rows) == 6
        assert {(l["controller"], l["difficulty"]) for l, _ in res.rows} == {
            (c, d) for c in ctrls for d in ("easy", "medium", "difficult")}

    def test_same_env_uses_training_maps_and_held_out_starts(self):
        pool = MapPool("easy", (4, 5), (100,))
        res = run_suite("same-env", CTRL, pool, episodes=4)
        for _, r in res.records:
            assert r.map_seed in (4, 5)
            assert tuple(r.init_pose) != generate_map("easy", r.map_seed).start_pose().as_tuple()

    def test_deterministic_tables(self, tmp_path):
        pool = MapPool("easy", (0,), (100, 101))
        a = run_suite("cross-env", CTRL, pool, episodes=3)
        b = run_suite("cross-env", CTRL, pool, episodes=3)
        pa = write_suite(a, tmp_path / "a", "h")
        pb = write_suite(b, tmp_path / "b", "h")
        assert [p.read_bytes() for p in pa] == [p.read_bytes() for p in pb]
        assert [p.name for p in pa] == ["report.csv", "episodes.jsonl", "overlay.svg"]

    def test_unknown_setup(self):
        with pytest.raises(SuiteError):
            run_suite("same-level", CTRL, MapPool("easy", (0,), (1,)))


class TestAblation:
    def test_lambda_sweep_hashes(self):
        entries = ablation_sweep("lambda", LAMBDA_GRID, TINY, tiny_setup(), train_fn=cached_train())
        assert len(entries) == 4
        text = sweep_csv("lambda", entries, tiny_setup())
        rows = list(csv.DictReader(io.StringIO(text)))
        assert [r["lambda"] for r in rows] == ["0.2", "0.4", "0.6", "0.8"]
        assert len({r["config_hash"] for r in rows}) == 4
        for e in entries:
            assert e.config == TrainerConfig(**{**TINY.__dict__, "lam": e.value})

    def test_filter_sweep(self):
        entries = ablation_sweep("filter_failures", ["on", "off"], TINY, tiny_setup(),
                                 train_fn=cached_train())
        assert [e.config.filter_failures for e in entries] == [True, False]

    def test_cache_reuses_runs(self):
        cache = {}
        fn = cached_train(cache)
        a = fn(TINY, tiny_setup())
        assert fn(TINY, tiny_setup()) is a and list(cache) == [run_hash(TINY, tiny_setup())]

    def test_unknown_parameter(self):
        with pytest.raises(SuiteError):
            ablation_sweep("gamma", [0.9], TINY, tiny_setup())

    def test_parse_bool(self):
        assert parse_bool("Yes") and not parse_bool("0") and parse_bool(True)
        with pytest.raises(SuiteError):
            parse_bool("maybe")


def test_markdown_table():
    text = ("controller,setup,difficulty,NS,ATT,SR,CR,TR,episodes\n"
            "dwa,cross-level,easy,40.5,9.0,90,10,0,10\n"
            "dwa,cross-level,medium,30.25,,0,100,0,10\n")
    md = markdown_table(text)
    lines = md.splitlines()
    assert lines[0].startswith("| Method | cross-level / easy NS")
    assert lines[2].startswith("| dwa | 40.50 | 9.00 | 90.00")
    assert "| - |" in lines[2]
    with pytest.raises(SuiteError):
        markdown_table("NS,SR\n")


def test_overlay_svg():
    g = corridor(6.0, 3.0)
    svg = overlay_svg(g, [[(1.0, 1.5, 0.0), (2.0, 1.5, 0.0)]], config_hash="abc")
    assert svg.startswith("<svg") and "config_hash=abc" in svg and "<polyline" in svg
