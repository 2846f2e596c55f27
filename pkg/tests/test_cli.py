import json
import math
import subprocess
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singletrack.cli import EXIT_CONFIG, EXIT_NO_CROSSING, EXIT_OK, compute_nmpe, main
from singletrack.config import ConfigError, ScenarioConfig, config_from_mapping, load_config


def _write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


def _run(tmp_path, command, text, *extra):
    cfg = _write(tmp_path, text)
    out = tmp_path / "out"
    return main([command, "--config", str(cfg), "--out", str(out), *extra]), out


# NMPE ---------------------------------------------------------------------


def test_nmpe_identical_is_zero():
    y = np.sin(np.linspace(0, 5, 50))
    assert compute_nmpe(y, y) == 0.0


def test_nmpe_offset_by_std_is_one():
    y = np.sin(np.linspace(0, 5, 50))
    assert compute_nmpe(y + y.std(), y) == pytest.approx(1.0, rel=1e-12)


def test_nmpe_averages_channels():
    ref = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
    sim = ref + np.array([ref[:, 0].std(), 0.0])
    assert compute_nmpe(sim, ref) == pytest.approx(0.5)


def test_nmpe_errors():
    with pytest.raises(ValueError, match="shapes"):
        compute_nmpe([1, 2, 3], [1, 2])
    with pytest.raises(ValueError, match="zero variance"):
        compute_nmpe([1, 2, 3], [1, 1, 1])


@settings(max_examples=50, deadline=None)
@given(scale=st.floats(0.1, 100), shift=st.floats(-100, 100))
def test_nmpe_is_scale_free(scale, shift):
    rng = np.random.default_rng(0)
    ref = rng.normal(size=40)
    sim = ref + rng.normal(scale=0.1, size=40)
    assert compute_nmpe(scale * sim + shift, scale * ref + shift) == pytest.approx(compute_nmpe(sim, ref), rel=1e-9)


# Config -------------------------------------------------------------------


def test_defaults_are_valid():
    cfg = config_from_mapping({})
    assert cfg.params().C_r == 130.805
    assert cfg.linearisation_config().p == 0.35


def test_unknown_key_rejected_with_path():
    with pytest.raises(ConfigError) as info:
        config_from_mapping({"vehicle": {"mass": 2.0}})
    assert info.value.key == "vehicle.mass"
    with pytest.raises(ConfigError) as info:
        config_from_mapping({"vehicel": {}})
    assert info.value.key == "vehicel"


def test_zero_offset_rejected():
    with pytest.raises(ConfigError) as info:
        config_from_mapping({"linearisation": {"p": 0.0}})
    assert info.value.key == "linearisation"
    assert "p must be > 0" in info.value.message


@pytest.mark.parametrize("data, key", [
    ({"integrator": {"dt": "fast"}}, "integrator.dt"),
    ({"integrator": {"dt": -0.01}}, "integrator.dt"),
    ({"linearisation": {"law": "magic"}}, "linearisation.law"),
    ({"experiment": "other"}, "experiment"),
    ({"sweep": {"dl_min": 0.1, "dl_max": 0.0}}, "sweep.dl_max"),
    ({"sweep": {"v_bar": []}}, "sweep.v_bar"),
    ({"hopf": {"bracket": [0.1, 0.1]}}, "hopf.bracket"),
    ({"open_loop": {"schedule": [[1.0, 0.5]]}}, "open_loop.schedule[0]"),
    ({"dropout": {"enabled": 1}}, "dropout.enabled"),
    ({"vehicle": {"m": -1.0}}, "vehicle"),
    ({"linearisation": {"dl": 0.1, "l_f_est": 0.2}}, "linearisation"),
])
def test_validation_errors(data, key):
    with pytest.raises(ConfigError) as info:
        config_from_mapping(data)
    assert info.value.key == key


def test_hash_stable_under_key_reordering(tmp_path):
    a = _write(tmp_path, """
        seed = 3
        [vehicle]
        m = 2.0
        l_f = 0.14
        [integrator]
        dt = 0.02
        """, "a.toml")
    b = _write(tmp_path, """
        seed = 3
        [integrator]
        dt = 0.02
        [vehicle]
        l_f = 0.14
        m = 2.0
        """, "b.toml")
    assert load_config(a).config_hash() == load_config(b).config_hash()
    assert load_config(a).config_hash() != ScenarioConfig().config_hash()


def test_dl_sets_front_estimate():
    cfg = config_from_mapping({"linearisation": {"dl": 0.01}})
    assert cfg.linearisation_config().l_f_est == pytest.approx(0.1468)


def test_invalid_toml(tmp_path):
    path = _write(tmp_path, "x = [")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(path)


# Commands -----------------------------------------------------------------


OPEN_LOOP = """
    experiment = "open_loop_steps"
    [open_loop]
    schedule = [[1.0, 0.5, 0.0], [1.0, 0.5, 0.3]]
    """


def test_simulate_outputs_and_manifest(tmp_path):
    code, out = _run(tmp_path, "simulate", OPEN_LOOP)
    assert code == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["files"]) == {"run_log.csv", "summary.json", "config.resolved.json"}
    for name in manifest["files"]:
        assert (out / name).exists()
    header = (out / "run_log.csv").read_text().splitlines()[0]
    assert header.startswith("t,x_G,y_G,psi,r,beta,delta,v_cmd,u_delta_or_delta_cmd,x_P,y_P,x_P_ref,y_P_ref")
    summary = json.loads((out / "summary.json").read_text())
    assert summary["max_point_deviation"] < 5e-3


def test_rerun_is_byte_identical(tmp_path):
    text = OPEN_LOOP + "\n    [dropout]\n    enabled = true\n    rate = 1.0\n"
    cfg = _write(tmp_path, text)
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / name), "--seed", "5"]) == 0
    assert (tmp_path / "a" / "run_log.csv").read_bytes() == (tmp_path / "b" / "run_log.csv").read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    ma.pop("timestamp")
    mb.pop("timestamp")
    assert ma == mb


def test_cli_overrides(tmp_path):
    code, out = _run(tmp_path, "simulate", OPEN_LOOP, "--dt", "0.02", "--horizon", "1.0")
    assert code == EXIT_OK
    rows = (out / "run_log.csv").read_text().splitlines()
    assert len(rows) == 1 + 51
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved["integrator"]["dt"] == 0.02


def test_config_error_is_structured(tmp_path, capsys):
    code, _ = _run(tmp_path, "simulate", "[linearisation]\np = 0.0\n")
    assert code == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config" and err["key"] == "linearisation"
    assert "p must be > 0" in err["message"]


def test_simulation_error_reports_time(tmp_path, capsys):
    text = OPEN_LOOP + "\n    [integrator]\n    steer_limit_deg = 0.5\n"
    code, _ = _run(tmp_path, "simulate", text)
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "simulation" and err["t"] > 0


def test_track_summary(tmp_path):
    code, out = _run(tmp_path, "track", """
        [integrator]
        horizon = 30.0
        [dropout]
        enabled = true
        episodes = [[10.0, 0.3], [20.0, 0.5]]
        """)
    assert code == EXIT_OK
    s = json.loads((out / "tracking_summary.json").read_text())
    # A hold inside the fit window perturbs the fitted amplitude slightly.
    assert s["amplitude_ratio_x"] == pytest.approx(1 / math.sqrt(1.25), rel=2e-2)
    assert s["convergence_time"] is not None
    assert s["dropout_intervals"] == [[10.0, 10.3], [20.0, 20.5]]
    assert 0.5 < s["error_inflation"] < 2.0


def test_sweep_outputs_and_deterministic_plot(tmp_path):
    text = """
        [linearisation]
        law = "velocity_direction"
        [sweep]
        v_bar = [0.1, 2.0]
        dl_min = -0.01
        dl_max = 0.01
        dl_step = 0.005
        """
    cfg = _write(tmp_path, text)
    for name in ("a", "b"):
        assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    for f in ("stability_map.csv", "hopf_points.csv", "stability_map.svg"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = (tmp_path / "a" / "stability_map.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 5
    assert "unstable" in "".join(rows)
    hopf = (tmp_path / "a" / "hopf_points.csv").read_text().splitlines()
    assert float(hopf[1].split(",")[1]) == pytest.approx(1.36e-4, rel=0.2)


def test_sweep_empty_grid(tmp_path):
    code, _ = _run(tmp_path, "sweep", "[sweep]\nv_bar_min = 1.0\nv_bar_max = 0.5\n")
    assert code == EXIT_CONFIG


def test_hopf_velocity_direction(tmp_path):
    code, out = _run(tmp_path, "hopf", """
        [linearisation]
        law = "velocity_direction"
        [hopf]
        v_bar = [0.1]
        """)
    assert code == EXIT_OK
    entry = json.loads((out / "hopf_report.json").read_text())["entries"][0]
    assert entry["status"] == "hopf"
    assert 1.09e-4 <= entry["dl_star"] <= 1.63e-4
    assert len(entry["eigenvalues"]) == 3


def test_hopf_front_axle_no_crossing_in_physical_range(tmp_path, capsys):
    code, out = _run(tmp_path, "hopf", """
        [hopf]
        v_bar = [1.0]
        bracket = [-0.1368, 0.1232]
        """)
    assert code == EXIT_NO_CROSSING
    entry = json.loads((out / "hopf_report.json").read_text())["entries"][0]
    assert entry["status"] == "no-crossing-found"
    assert "no-crossing-found" in capsys.readouterr().err


def test_hopf_degenerate_bracket(tmp_path):
    code, _ = _run(tmp_path, "hopf", "[hopf]\nbracket = [0.01, 0.01]\n")
    assert code == EXIT_CONFIG


def test_validate_config(tmp_path, capsys):
    cfg = _write(tmp_path, OPEN_LOOP)
    assert main(["validate-config", "--config", str(cfg)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["status"] == "ok" and len(report["config_hash"]) == 64


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, OPEN_LOOP)
    res = subprocess.run([sys.executable, "-m", "singletrack.cli", "validate-config", "--config", str(cfg)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr


def test_shipped_configs_validate():
    from pathlib import Path

    configs = sorted((Path(__file__).parent.parent / "configs").glob("*.toml"))
    assert configs
    for path in configs:
        load_config(path)
