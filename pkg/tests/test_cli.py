import json
import os

import numpy as np
import pytest

from conegeo import cli, hcma
from conegeo.cli import bundled_config, canonical_json, main, parse_config, potential_from_config
from conegeo.errors import ConfigError


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def _fast_geodesic():
    cfg = bundled_config("geodesic_torus")
    cfg["grid"] = {"n_sigma": 16, "n_t": 9}
    cfg["solver"]["tau_min"] = 1e-3
    return cfg


def _run_dir(out):
    (d,) = [p for p in out.iterdir() if p.is_dir()]
    return d


def test_geodesic_run_and_report(tmp_path, capsys):
    cfg = _write(tmp_path, _fast_geodesic())
    out = tmp_path / "runs"
    assert main(["run", str(cfg), "--output", str(out)]) == 0
    d = _run_dir(out)
    for name in ("config.json", "summary.json", "monitors.csv"):
        assert (d / name).is_file()
    summary = json.loads((d / "summary.json").read_text())
    assert summary["status"] == "ok" and summary["exit_code"] == 0
    assert all(a["passed"] for a in summary["assertions"])
    capsys.readouterr()
    assert main(["report", str(d)]) == 0
    text = capsys.readouterr().out
    assert "status: OK" in text and "PASS" in text and "FAIL" not in text
    assert (d / "report.txt").read_text() == text
    assert (d / "tau_trace.csv").is_file()
    assert list((d / "figures").glob("*.png"))


def test_runs_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, _fast_geodesic())
    blobs = []
    for k in range(2):
        out = tmp_path / f"runs{k}"
        assert main(["run", str(cfg), "--output", str(out)]) == 0
        d = _run_dir(out)
        cli.report(d)
        blobs.append({p.relative_to(d).as_posix(): p.read_bytes() for p in d.rglob("*") if p.is_file()})
    assert blobs[0].keys() == blobs[1].keys()
    assert all(blobs[0][k] == blobs[1][k] for k in blobs[0])


def test_output_env_variable(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env-out"))
    cfg = bundled_config("geom_check_football")
    assert main(["run", str(_write(tmp_path, cfg))]) == 0
    assert (tmp_path / "env-out").is_dir()


def test_bad_beta_is_config_error(tmp_path, capsys):
    cfg = bundled_config("bad_beta")
    assert main(["run", str(_write(tmp_path, cfg)), "--output", str(tmp_path)]) == 2
    assert "0 < beta < 1" in capsys.readouterr().err


@pytest.mark.parametrize("mutate", [
    lambda c: c.update(unknown=1),
    lambda c: c["grid"].update(n_sigma=4),
    lambda c: c["geometry"].update(beta=0.5),
    lambda c: c["solver"].update(schedule=[1.0, 0.5, 0.7]),
    lambda c: c.update(task="solve-ke"),
])
def test_invalid_configs(tmp_path, mutate):
    cfg = _fast_geodesic()
    mutate(cfg)
    assert main(["run", str(_write(tmp_path, cfg)), "--output", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_missing_or_malformed_config(tmp_path):
    assert main(["run", str(tmp_path / "nope.json"), "--output", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", str(bad), "--output", str(tmp_path)]) == 2


def test_report_needs_run_directory(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 2
    assert "summary.json" in capsys.readouterr().err


def test_aborted_run_is_reported(tmp_path, monkeypatch, capsys):
    real = hcma.newton_solve

    def flaky(state, init, **kw):
        if state.tau < 0.1:
            raise hcma.LineSearchFail("forced stall")
        return real(state, init, **kw)

    monkeypatch.setattr(hcma, "newton_solve", flaky)
    out = tmp_path / "runs"
    assert main(["run", str(_write(tmp_path, _fast_geodesic())), "--output", str(out)]) == 1
    d = _run_dir(out)
    summary = json.loads((d / "summary.json").read_text())
    assert summary["status"] == "aborted"
    capsys.readouterr()
    main(["report", str(d), "--no-figures"])
    text = capsys.readouterr().out
    assert "ABORTED" in text and "forced stall" in text
    assert not (d / "figures").exists()


def test_failed_assertion_exit_code(tmp_path, capsys):
    # 16 radial nodes is too coarse for the 1e-3 oracle tolerance
    cfg = bundled_config("ke_football")
    cfg["grid"] = {"n_sigma": 16, "n_t": 8}
    out = tmp_path / "runs"
    assert main(["run", str(_write(tmp_path, cfg)), "--output", str(out)]) == 1
    summary = json.loads((_run_dir(out) / "summary.json").read_text())
    assert summary["status"] == "failed"
    assert "FAILED" in capsys.readouterr().err


@pytest.mark.parametrize("name", ["geom_check_football", "ke_football", "curvature_torus"])
def test_bundled_tasks_pass(tmp_path, name):
    out = tmp_path / "runs"
    assert main(["run", str(_write(tmp_path, bundled_config(name))), "--output", str(out)]) == 0
    assert main(["report", str(_run_dir(out)), "--no-figures"]) == 0


def test_canonical_json_is_stable():
    text = canonical_json({"b": np.float64(1.5), "a": [np.int64(2), float("nan")], "c": np.arange(2)})
    assert text == canonical_json(json.loads(text))
    assert json.loads(text) == {"a": [2, None], "b": 1.5, "c": [0, 1]}


def test_potential_descriptions():
    cfg = parse_config(_fast_geodesic())
    grid = cfg.grid
    assert np.all(potential_from_config({"type": "constant", "value": 0.3}, grid) == 0.3)
    rng = np.random.default_rng(0)
    with pytest.raises((ConfigError, KeyError, ValueError)):
        potential_from_config({"type": "nonsense"}, grid, rng)
