from __future__ import annotations

import json

import pytest

from metanav.config import ConfigError, RunConfig, load_run_config


def test_defaults():
    cfg = load_run_config(None)
    t = cfg.trainer_config()
    assert (t.lam, t.eta_deg) == (0.4, 90.0)
    assert cfg.world.difficulty == "medium"


def test_load_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 3, "trainer": {"lam": 0.2, "N": 5, "td3": {"batch_size": 8}},
                             "world": {"train_seeds": [1, 2]}, "env": {"max_meta_steps": 50}}))
    cfg = load_run_config(p)
    assert cfg.seed == 3 and cfg.trainer.lam == 0.2 and cfg.trainer.td3.batch_size == 8
    assert cfg.world.train_seeds == (1, 2) and cfg.env.max_meta_steps == 50
    assert cfg.trainer.N == 5 and isinstance(cfg.trainer.N, int)


@pytest.mark.parametrize("data,msg", [
    ({"bogus": 1}, "unknown key"),
    ({"trainer": {"lamda": 0.3}}, "section 'trainer'"),
    ({"trainer": {"lam": 2.0}}, "lam"),
    ({"trainer": {"N": 2.5}}, "integer"),
    ({"trainer": {"rs_mode": 1}}, "wrong type"),
    ({"world": {"difficulty": "impossible"}}, "difficulty"),
    ({"world": {"train_seeds": 3}}, "list"),
    ({"diagnosis": {"eta_deg": 0}}, "eta_deg"),
    ({"eval": {"setup": "cross-planet"}}, "setup"),
    ({"env": {"control_dt_s": 0.3}}, "multiple"),
    ([1, 2], "JSON object"),
])
def test_rejections(data, msg):
    with pytest.raises(ConfigError, match=msg):
        load_run_config(data)


def test_hash_ignores_output_location():
    a = RunConfig(out_dir="x")
    b = RunConfig(out_dir="y")
    assert a.hash() == b.hash()
    assert a.hash() != a.with_overrides(trainer={"lam": 0.0}).hash()


def test_overrides_validate():
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(trainer={"lam": 3.0})
    cfg = RunConfig().with_overrides(seed=4, diagnosis={"eta_deg": 50.0})
    assert cfg.seed == 4 and cfg.trainer_config().eta_deg == 50.0


def test_json_roundtrip():
    cfg = load_run_config({"trainer": {"algorithm": "ppo"}, "seed": 7})
    again = load_run_config(json.loads(json.dumps(cfg.to_json())))
    assert again == cfg and again.hash() == cfg.hash()
