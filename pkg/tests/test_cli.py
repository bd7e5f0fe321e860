import json
import shutil
import subprocess

import pytest

from coevolve.cli import EXIT_BACKEND, EXIT_CONFIG, EXIT_INCOMPLETE, EXIT_OK, main
from coevolve.config import ConfigError, from_dict, load_config

TINY = {
    "env": {"name": "point-runner", "n_envs": 4},
    "ppo": {"hidden": [8], "rollout_steps": 8, "epochs_per_update": 1, "minibatches": 1, "eval_episodes": 2},
    "bo": {"initial_alphas": [0.0, 1.0], "J": 3, "T_BO": 1},
    "schedule": {"n_rounds": 2, "batch_size": 2, "first_round_probe_epochs": 2, "first_round_finish_epochs": 2,
                 "post_bo_epochs": 1, "finish_epochs": 1, "dynamic_population": False, "eureka_epochs": 2,
                 "uniform_alphas_count": 2, "uniform_probe_epochs": 1},
    "llm": {"backend": "mock"},
    "mode": "roska",
    "seed": 0,
}


@pytest.fixture
def cfg_file(tmp_path):
    doc = dict(TINY, out_dir=str(tmp_path / "runs"))
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def _run_dirs(tmp_path):
    return sorted((tmp_path / "runs").iterdir())


def test_run_then_report(cfg_file, tmp_path, capsys):
    assert main(["run", "--config", str(cfg_file)]) == EXIT_OK
    assert main(["run", "--config", str(cfg_file), "--mode", "eureka", "--seed", "1"]) == EXIT_OK
    dirs = _run_dirs(tmp_path)
    assert len(dirs) == 2
    for d in dirs:
        for rel in ("config.json", "events.jsonl", "report.csv", "plots/mts_best-point-runner.svg"):
            assert (d / rel).exists()
    out = tmp_path / "rep"
    capsys.readouterr()
    assert main(["report", "--runs", *map(str, dirs), "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert text.startswith("env,mode,n_runs")
    assert (out / "report.csv").exists() and (out / "plots").is_dir()


def test_report_incomplete_run(tmp_path):
    d = tmp_path / "broken"
    d.mkdir()
    (d / "config.json").write_text("{}")
    (d / "events.jsonl").write_text('{"event": "run_start"}\n')
    assert main(["report", "--runs", str(d), "--out", str(tmp_path / "o")]) == EXIT_INCOMPLETE


def test_tts_preset(capsys):
    assert main(["tts", "--preset", "default", "--mode", "roska"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "first round: 5500 epochs" in out
    assert "subsequent rounds: 4 x 18700 = 74800 epochs" in out
    assert "total: 80300 epochs" in out and "0.8922" in out


def test_tts_roska_u_note(capsys):
    assert main(["tts", "--preset", "default", "--mode", "roska-u"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "total: 210000" in out and "note:" in out and "2.2" in out


def test_tts_config(cfg_file, capsys):
    assert main(["tts", "--config", str(cfg_file), "--mode", "roska"]) == EXIT_OK
    # (2 x 2 + 2) + (2 x 3 x 1 + 2 x 1 + 1)
    assert "total: 15 epochs" in capsys.readouterr().out


def test_tts_bad_mode():
    assert main(["tts", "--preset", "default", "--mode", "sideways"]) == EXIT_CONFIG


def test_validate_dsl(tmp_path, capsys):
    good = tmp_path / "good.reward"
    good.write_text("component c { temp = 0.1 expr = abs(forward_vel) weight = 2 }")
    assert main(["validate-dsl", str(good)]) == EXIT_OK
    assert "transform = exp_neg_over_temp" in capsys.readouterr().out
    assert main(["validate-dsl", str(good), "--env", "rotator"]) == EXIT_CONFIG
    bad = tmp_path / "bad.reward"
    bad.write_text("component c { temp = 0.1 expr = (x + weight = 2 }")
    assert main(["validate-dsl", str(bad)]) == EXIT_CONFIG
    assert "bad.reward:1:" in capsys.readouterr().err


def test_gen_round_one(cfg_file, capsys):
    assert main(["gen", "--config", str(cfg_file)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("=== prompt ===\nYou are a reward engineer")
    assert "=== candidate 1 ===" in out


def test_gen_later_round_needs_run(cfg_file, tmp_path, capsys):
    assert main(["gen", "--config", str(cfg_file), "--round", "2"]) == EXIT_CONFIG
    assert main(["run", "--config", str(cfg_file)]) == EXIT_OK
    (run,) = _run_dirs(tmp_path)
    capsys.readouterr()
    assert main(["gen", "--config", str(cfg_file), "--round", "2", "--run", str(run)]) == EXIT_OK
    assert "Best-performed reward program" in capsys.readouterr().out
    assert main(["gen", "--config", str(cfg_file), "--round", "9", "--run", str(run)]) == EXIT_INCOMPLETE


def test_http_backend_unreachable(tmp_path):
    doc = dict(TINY, out_dir=str(tmp_path / "runs"),
               llm={"backend": "http", "endpoint_url": "http://127.0.0.1:9/v1/chat/completions",
                    "model_name": "m", "max_retries": 0, "timeout_s": 2, "fallback_to_mock": False})
    path = tmp_path / "http.json"
    path.write_text(json.dumps(doc))
    assert main(["gen", "--config", str(path)]) == EXIT_BACKEND


def test_config_errors(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    assert main(["run", "--config", str(path)]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    with pytest.raises(ConfigError):
        from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        from_dict({"env": {"name": "moon-lander"}})
    with pytest.raises(ConfigError):
        from_dict({"llm": {"backend": "http"}})
    with pytest.raises(ConfigError):
        from_dict({"schedule": {"preset": "nope"}})


def test_config_sections(cfg_file):
    cfg = load_config(cfg_file)
    assert cfg.ppo.n_envs == 4
    assert cfg.schedule.bo_J == 3 and cfg.schedule.initial_alphas == (0.0, 1.0)
    assert cfg.with_overrides(mode="fixed-alpha=0.5").mode.alpha == 0.5
    preset = from_dict({"schedule": {"preset": "roska-0.56"}})
    assert preset.schedule.bo_J == 9 and preset.schedule.finish_epochs == 800


@pytest.mark.skipif(shutil.which("coevolve") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["coevolve", "tts", "--preset", "roska-0.74", "--mode", "roska"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and "total: 66800 epochs" in res.stdout
