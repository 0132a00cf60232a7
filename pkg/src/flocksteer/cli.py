"""Command-line front end: ``flocksteer run|certify|compare|transient``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import functools
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from .config import load_config
from .diagnostics import DiagnosticsObserver, ThetaPolicy, flocking_certificate
from .errors import ConfigError, DomainError, IntegrationError
from .integrate import integrate
from .io import COMPARISON_HEADER, trajectory_header, trajectory_rows, write_csv, write_json
from .model import TrackingSteering
from .reduced import compare_full_reduced, initial_flock_velocity, simulate_transient, weights_for

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, DomainError) as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except IntegrationError as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)

    return wrapper


def _threads(cli_value):
    env = os.environ.get("FLOCK_THREADS")
    if env is None:
        return cli_value
    try:
        k = int(env)
    except ValueError:
        raise ConfigError(f"FLOCK_THREADS must be an integer, got {env!r}") from None
    if k < 1:
        raise ConfigError("FLOCK_THREADS must be >= 1")
    return k


def _parse_eps(text):
    try:
        vals = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--eps expects comma-separated numbers, got {text!r}") from None
    if not vals or any(not v > 0 for v in vals):
        raise ConfigError("--eps values must be positive")
    return vals


def _out_dir(out):
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _theta(spec):
    return ThetaPolicy(spec.policy, spec.value)


config_option = click.option(
    "--config", "config_ref", required=True, help="Config file path or bundled preset name (paper-sec5)."
)
out_option = click.option("--out", default=".", show_default=True, type=click.Path(file_okay=False),
                          help="Output directory.")
seed_option = click.option("--seed", type=int, default=None, help="Override the random initial-condition seed.")


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Steered flocking simulations, certificates and reduced models."""


@main.command()
@config_option
@out_option
@seed_option
@click.option("--eps", "eps_text", default=None, help="Override the timescale ratio eps.")
@click.option("--threads", type=int, default=1, show_default=True, help="Worker threads (FLOCK_THREADS wins).")
@_guard
def run(config_ref, out, seed, eps_text, threads):
    """Integrate the model and write a trajectory CSV and a summary JSON."""
    _threads(threads)
    exp = load_config(config_ref)
    eps = _parse_eps(eps_text)[0] if eps_text else None
    cfg = exp.build_model(eps)
    initial = exp.build_initial(seed)
    icfg = exp.build_integrator(cfg.eps)
    observer = DiagnosticsObserver(cfg, _theta(exp.analysis.theta))
    start = time.perf_counter()
    traj = integrate(initial, cfg, icfg, observer=observer)
    wall = time.perf_counter() - start
    out = _out_dir(out)
    write_csv(out / exp.outputs.trajectory, trajectory_header(cfg.n_agents, cfg.dim), trajectory_rows(traj))
    summary = _run_summary(exp, cfg, traj, initial)
    summary["wall_time_s"] = wall
    write_json(out / exp.outputs.summary, summary)
    fin = traj.records[-1]
    click.echo(f"t={traj.t[-1]:g} d_X={fin.d_X:.6g} d_V={fin.d_V:.6g} samples={len(traj)}")


def _run_summary(exp, cfg, traj, initial):
    recs = traj.records
    fin = recs[-1]
    t_end = traj.t[-1]
    checkpoints = exp.outputs.checkpoints or [t_end / 2, t_end]
    cps = []
    for tc in checkpoints:
        k = int(np.argmin(np.abs(traj.t - tc)))
        cps.append({"t": traj.t[k], "d_X": recs[k].d_X, "d_V": recs[k].d_V, "d_beta": recs[k].d_beta})
    summary = {
        "n_agents": cfg.n_agents,
        "dim": cfg.dim,
        "eps": cfg.eps,
        "samples": len(traj),
        "integrator": traj.stats,
        "final": {"t": t_end, "d_X": fin.d_X, "d_V": fin.d_V, "d_beta": fin.d_beta,
                  "lambda_global": fin.lambda_global, "energy": fin.energy},
        "checkpoints": cps,
    }
    if isinstance(cfg.steering, TrackingSteering):
        lo = 0.75 * t_end
        keep = traj.t >= lo
        target = np.array([cfg.steering.target.position(t) for t in traj.t[keep]])
        dist = np.linalg.norm(traj.x[keep].mean(axis=1) - target, axis=1)
        summary["tracking"] = {"window": [lo, t_end], "max_centroid_distance": float(dist.max()),
                               "final_centroid_distance": float(dist[-1])}
    if exp.analysis.certificate:
        summary["certificate"] = _certificate(exp, cfg, initial).as_dict()
    return summary


def _certificate(exp, cfg, initial):
    a = exp.analysis
    return flocking_certificate(initial, cfg, a.steering_integral, a.steering_decays)


@main.command()
@config_option
@out_option
@seed_option
@click.option("--eps", "eps_text", default=None, help="Override the timescale ratio eps.")
@_guard
def certify(config_ref, out, seed, eps_text):
    """Evaluate the initial-diameter flocking certificate."""
    exp = load_config(config_ref)
    eps = _parse_eps(eps_text)[0] if eps_text else None
    cfg = exp.build_model(eps)
    cert = _certificate(exp, cfg, exp.build_initial(seed))
    write_json(_out_dir(out) / exp.outputs.certificate, cert.as_dict())
    click.echo(f"verdict: {cert.verdict}")


@main.command()
@config_option
@out_option
@seed_option
@click.option("--eps", "eps_text", default=None, help="Comma-separated eps list (default: analysis.eps_sweep).")
@click.option("--threads", type=int, default=1, show_default=True, help="Worker threads (FLOCK_THREADS wins).")
@_guard
def compare(config_ref, out, seed, eps_text, threads):
    """Sweep eps and measure the full model against the reduced model."""
    threads = _threads(threads)
    exp = load_config(config_ref)
    if exp.model.orientation.enabled:
        raise ConfigError("the reduced model needs position-only influence; set orientation.enabled to false",
                          "model.orientation.enabled")
    eps_list = _parse_eps(eps_text) if eps_text else exp.analysis.eps_sweep
    cfg = exp.build_model()
    initial = exp.build_initial(seed)
    a = exp.analysis
    table = compare_full_reduced(
        initial, cfg, eps_list, t_end=exp.integrator.t_end, t_skip=a.t_skip, vf0_source=a.vf0_source,
        sample_interval=exp.sample_interval(min(eps_list)), method=a.compare_method, threads=threads,
        tau_end=a.tau_end,
    )
    ratios = [(None, None)] + table.ratios()
    rows = [[r.eps, r.t_skip, r.vel_err, r.pos_err, rv, rp, r.method, r.dt, r.steps]
            for r, (rv, rp) in zip(table.rows, ratios)]
    write_csv(_out_dir(out) / exp.outputs.comparison, COMPARISON_HEADER, rows)
    for row in rows:
        click.echo(f"eps={row[0]:g} vel_err={row[2]:.4g} pos_err={row[3]:.4g}")


@main.command()
@config_option
@out_option
@seed_option
@click.option("--tau-end", type=float, default=None, help="Stretched-time horizon (default: analysis.tau_end).")
@_guard
def transient(config_ref, out, seed, tau_end):
    """Resolve the initial layer and compare its limit with the weighted-average formula."""
    exp = load_config(config_ref)
    tau_end = exp.analysis.tau_end if tau_end is None else tau_end
    if not tau_end > 0:
        raise ConfigError("--tau-end must be positive")
    cfg = exp.build_model()
    initial = exp.build_initial(seed)
    pi = weights_for(initial.x, cfg)
    formula = initial_flock_velocity(initial.v, pi)
    traj = simulate_transient(initial, cfg, tau_end)
    V = traj.v[-1]
    limit = V.mean(axis=0)
    n, d = cfg.n_agents, cfg.dim
    out = _out_dir(out)
    header = ["tau"] + [f"v_{i}_{k}" for i in range(n) for k in range(d)]
    write_csv(out / exp.outputs.transient, header, ([t, *v.ravel()] for t, v in zip(traj.t, traj.v)))
    write_json(out / exp.outputs.transient_summary, {
        "tau_end": tau_end,
        "pi": pi.pi,
        "pi_residual": pi.residual,
        "formula": formula,
        "simulated_limit": limit,
        "abs_difference": float(np.max(np.abs(formula - limit))),
        "max_spread": float(np.max(np.linalg.norm(V - limit, axis=1))),
    })
    click.echo(f"formula={np.array2string(formula, precision=8)} limit={np.array2string(limit, precision=8)}")


if __name__ == "__main__":
    main()
