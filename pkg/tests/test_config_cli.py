import csv
import json
import textwrap

import numpy as np
import pytest
from click.testing import CliRunner

from flocksteer import ConfigError, GainRule, PowerKernel, TrackingSteering
from flocksteer.cli import main
from flocksteer.config import load_config, parse_config, preset_text
from flocksteer.io import trajectory_header

from conftest import PRESET_V, PRESET_X

SMALL = textwrap.dedent("""\
    model:
      n_agents: 4
      dim: 2
      eps: 0.5
      kernel: {name: power, K: 1.0, a: 1.0, beta: 0.3}
      gain: {form: bounded, A: 10.0, offset: 0.1, power: 0.5}
      steering: {form: tracking, gamma1: 2.0, gamma2: 0.1}
    integrator:
      t_end: 2.0
      sample_interval: 0.05
    initial:
      random:
        seed: 3
        position_box: [[0, 5], [0, 5]]
        velocity_box: [[0, 2], [0, 2]]
    """)


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _invoke(args, env=None):
    return CliRunner().invoke(main, args, env=env, catch_exceptions=False)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- configuration ----------------------------------------------------------


def test_preset_initial_data(preset, preset_model, preset_initial):
    np.testing.assert_array_equal(preset_initial.x, PRESET_X)
    np.testing.assert_array_equal(preset_initial.v, PRESET_V)
    assert preset_model.n_agents == 7 and preset_model.dim == 2 and preset_model.eps == 0.1
    assert preset_model.influence.kernel == PowerKernel(1.0, 1.0, 0.3)
    assert preset_model.influence.masking is None and preset_model.influence.orientation is None
    assert preset_model.gain == GainRule(10.0, 0.1, 0.5)
    steer = preset_model.steering
    assert isinstance(steer, TrackingSteering)
    assert (steer.gamma1, steer.gamma2) == (2.0, 0.1)
    assert steer.target.position(0.0) == pytest.approx([100.0, 20.0])
    assert not preset_model.friction.active()
    icfg = preset.build_integrator()
    assert icfg.dt == pytest.approx(5e-3) and icfg.sample_every == 2 and icfg.t_end == 200.0


def test_random_initial_condition_is_seeded(tmp_path):
    cfg = load_config(_write(tmp_path, SMALL))
    a, b, c = cfg.build_initial(), cfg.build_initial(), cfg.build_initial(seed=4)
    np.testing.assert_array_equal(a.x, b.x)
    assert not np.array_equal(a.x, c.x)
    assert np.all((a.x >= 0) & (a.x <= 5)) and np.all((a.v >= 0) & (a.v <= 2))


def test_unknown_key_reports_line_and_field():
    text = SMALL.replace("  dim: 2\n", "  dim: 2\n  colour: red\n")
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == 4
    assert info.value.field == "model.colour"
    assert str(info.value).startswith("line 4, field 'model.colour'")


@pytest.mark.parametrize("old,new,field", [
    ("eps: 0.5", "eps: -1", "model.eps"),
    ("t_end: 2.0", "t_end: 0", "integrator.t_end"),
    ("name: power", "name: cubic", "model.kernel.name"),
])
def test_invalid_values_are_rejected(old, new, field):
    with pytest.raises(ConfigError) as info:
        parse_config(SMALL.replace(old, new))
    assert info.value.field == field
    assert info.value.line is not None


def test_unknown_preset():
    with pytest.raises(ConfigError):
        load_config("no-such-preset")
    with pytest.raises(ConfigError):
        preset_text("nope")


def test_shape_mismatch_in_explicit_initial_condition():
    text = SMALL.split("initial:")[0] + "initial:\n  positions: [[0, 0]]\n  velocities: [[0, 0]]\n"
    with pytest.raises(ConfigError):
        parse_config(text)


# -- run --------------------------------------------------------------------


def test_run_writes_trajectory_and_summary(tmp_path):
    res = _invoke(["run", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path / "o")])
    assert res.exit_code == 0, res.output
    rows = _read_csv(tmp_path / "o" / "trajectory.csv")
    assert rows[0] == trajectory_header(4, 2)
    assert len(rows) == 1 + 41
    assert float(rows[-1][0]) == 2.0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["final"]["t"] == 2.0
    assert summary["tracking"]["window"] == [1.5, 2.0]
    assert [c["t"] for c in summary["checkpoints"]] == [1.0, 2.0]


def test_golden_header():
    assert ",".join(trajectory_header(2, 2)) == (
        "t,x_0_0,x_0_1,x_1_0,x_1_1,v_0_0,v_0_1,v_1_0,v_1_1,"
        "d_X,d_V,d_beta,lambda_global,min_alpha,energy"
    )


def test_run_single_agent_has_zero_spread(tmp_path):
    text = SMALL.replace("n_agents: 4", "n_agents: 1")
    res = _invoke(["run", "--config", _write(tmp_path, text), "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    rows = _read_csv(tmp_path / "trajectory.csv")
    col = rows[0].index("d_V")
    assert all(float(r[col]) == 0.0 for r in rows[1:])


def test_run_is_byte_identical(tmp_path):
    cfg = _write(tmp_path, SMALL)
    for out in ("a", "b"):
        assert _invoke(["run", "--config", cfg, "--out", str(tmp_path / out)]).exit_code == 0
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()
    res = _invoke(["run", "--config", cfg, "--out", str(tmp_path / "c"), "--threads", "3"],
                  env={"FLOCK_THREADS": "2"})
    assert res.exit_code == 0
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == (tmp_path / "c" / "trajectory.csv").read_bytes()
    assert b"\r" not in (tmp_path / "a" / "trajectory.csv").read_bytes()


def test_run_config_error_exit_code(tmp_path):
    res = _invoke(["run", "--config", _write(tmp_path, SMALL.replace("dim: 2", "dim: 2\n  bogus: 1"))])
    assert res.exit_code == 2
    assert "line 4" in res.output and "model.bogus" in res.output
    res = _invoke(["run", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path)], env={"FLOCK_THREADS": "x"})
    assert res.exit_code == 2
    res = _invoke(["run", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path), "--eps", "0"])
    assert res.exit_code == 2


def test_run_blowup_exit_code(tmp_path):
    text = SMALL.replace("{form: tracking, gamma1: 2.0, gamma2: 0.1}",
                         "{form: constant, B: [[1e15, 0], [0, 0], [0, 0], [0, 0]]}")
    res = _invoke(["run", "--config", _write(tmp_path, text), "--out", str(tmp_path)])
    assert res.exit_code == 3
    assert "last valid t" in res.output


# -- certify ----------------------------------------------------------------


def _certify(tmp_path, text):
    res = _invoke(["certify", "--config", _write(tmp_path, text), "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    return json.loads((tmp_path / "certificate.json").read_text())


def test_certify_preset_kernel_without_steering(tmp_path):
    text = preset_text("paper-sec5").replace("form: tracking", "form: none")
    assert _certify(tmp_path, text)["verdict"] == "unconditional"


def test_certify_preset_with_feedback_is_inconclusive(tmp_path):
    res = _invoke(["certify", "--config", "paper-sec5", "--out", str(tmp_path)])
    assert res.exit_code == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["verdict"] == "inconclusive" and cert["notes"]


STEEP = textwrap.dedent("""\
    model:
      n_agents: {n}
      dim: 1
      kernel: {{name: power, K: 1.0, a: 1.0, beta: 2.0}}
    integrator: {{t_end: 1.0}}
    initial:
      positions: {x}
      velocities: {v}
    """)


def test_certify_steep_kernel(tmp_path):
    tight = STEEP.format(n=3, x="[[0.0], [0.1], [0.2]]", v="[[1.0], [1.0], [1.0]]")
    cert = _certify(tmp_path, tight)
    assert cert["verdict"] == "conditional-satisfied"
    assert cert["d_star"] == pytest.approx(0.2)
    wide = STEEP.format(n=2, x="[[0.0], [1000.0]]", v="[[0.0], [1000.0]]")
    assert _certify(tmp_path, wide)["verdict"] == "conditional-violated"


# -- compare and transient --------------------------------------------------


def test_compare_rejects_orientation(tmp_path):
    text = SMALL.replace("  gain:", "  orientation: {enabled: true}\n  gain:")
    res = _invoke(["compare", "--config", _write(tmp_path, text), "--out", str(tmp_path)])
    assert res.exit_code == 2
    assert "orientation" in res.output


def test_compare_single_unit_eps(tmp_path):
    res = _invoke(["compare", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path), "--eps", "1.0"])
    assert res.exit_code == 0, res.output
    rows = _read_csv(tmp_path / "comparison.csv")
    assert rows[0][:4] == ["eps", "t_skip", "vel_err", "pos_err"]
    assert len(rows) == 2 and rows[1][0] == "1.0" and rows[1][4] == ""


def test_compare_two_eps(tmp_path):
    res = _invoke(["compare", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path), "--eps", "0.05,0.005"])
    assert res.exit_code == 0, res.output
    rows = _read_csv(tmp_path / "comparison.csv")
    assert [r[0] for r in rows[1:]] == ["0.05", "0.005"]
    assert float(rows[2][4]) > 1


def test_transient_equal_velocities(tmp_path):
    text = SMALL.replace("velocity_box: [[0, 2], [0, 2]]", "velocity_box: [[1.5, 1.5], [-0.5, -0.5]]")
    res = _invoke(["transient", "--config", _write(tmp_path, text), "--out", str(tmp_path), "--tau-end", "5"])
    assert res.exit_code == 0, res.output
    out = json.loads((tmp_path / "transient.json").read_text())
    assert out["formula"] == pytest.approx([1.5, -0.5], abs=1e-14)
    assert out["simulated_limit"] == pytest.approx([1.5, -0.5], abs=1e-14)
    assert out["abs_difference"] < 1e-14
    assert _read_csv(tmp_path / "transient.csv")[0][:3] == ["tau", "v_0_0", "v_0_1"]


def test_transient_two_agent_uniform(tmp_path):
    text = textwrap.dedent("""\
        model:
          n_agents: 2
          dim: 1
          kernel: {name: power, beta: 0.0}
          gain: {form: constant, A: 2.0}
        integrator: {t_end: 1.0}
        initial:
          positions: [[0.0], [3.0]]
          velocities: [[1.0], [4.0]]
        """)
    res = _invoke(["transient", "--config", _write(tmp_path, text), "--out", str(tmp_path), "--tau-end", "20"])
    assert res.exit_code == 0, res.output
    out = json.loads((tmp_path / "transient.json").read_text())
    assert out["pi"] == pytest.approx([0.5, 0.5])
    assert out["formula"] == pytest.approx([2.5])
    assert out["simulated_limit"] == pytest.approx([2.5], abs=1e-10)
    assert out["max_spread"] < 1e-10


def test_transient_rejects_bad_horizon(tmp_path):
    res = _invoke(["transient", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path), "--tau-end", "-1"])
    assert res.exit_code == 2


def test_compare_window_must_be_nonempty(tmp_path):
    res = _invoke(["compare", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path), "--eps", "0.1"])
    assert res.exit_code == 2
    assert "t_skip" in res.output
