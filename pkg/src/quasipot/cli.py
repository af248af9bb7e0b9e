"""Command-line entry point.

    quasipot [--config FILE] [--threads N] COMMAND [key=value ...]
    quasipot preset NAME [key=value ...]

Outputs go to ``output.dir`` (overridden by ``$QUASIPOT_OUTPUT_DIR``, and by
an explicit ``output.dir=...`` on the command line).  Every file is written
to a temporary name and renamed into place.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile

import numpy as np

from .action import write_path_csv
from .config import COMMANDS, PRESETS, ExperimentConfig, parse_config, preset, serialize_config, set_key
from .dynamics import SimParams, simulate_sgd, write_trajectory_csv
from .errors import ConfigError, QuasipotError
from .escape import DomainSpec, exit_ensemble, exit_exponent
from .landscape import (diffusion_from_id, landscape_from_id, least_squares_finite_sum,
                        make_diag_diffusion, make_quadratic_bowl, make_two_well,
                        make_two_well_diffusion, minibatch_diffusion, two_well_labels)
from .metastable import (LABEL_NAMES, HistogramGrid, measure_transitions, occupation_fractions,
                         phi_histogram, plateau_sojourns, run_lengths, stationary_estimate,
                         transition_probabilities)
from .quasipotential import (MamOptions, example31_candidate, hj_residual, mam_minimize,
                             scaled_loss_candidate, twowell_candidate)

OUTPUT_ENV = "QUASIPOT_OUTPUT_DIR"


class Output:
    """Collects files for one run and writes each one atomically."""

    def __init__(self, directory: str):
        self.directory = directory
        try:
            os.makedirs(directory, exist_ok=True)
        except OSError as exc:
            raise ConfigError("output.dir", f"cannot create {directory!r}: {exc.strerror}") from None
        if not os.access(directory, os.W_OK):
            raise ConfigError("output.dir", f"{directory!r} is not writable")
        self.written = []

    def write(self, name: str, fill):
        """``fill(fh)`` writes the text content."""
        buf = io.StringIO()
        fill(buf)
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=self.directory)
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(buf.getvalue())
            os.replace(tmp, os.path.join(self.directory, name))
        except OSError as exc:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise ConfigError("output.dir", f"cannot write {name}: {exc.strerror}") from None
        self.written.append(name)

    def summary(self, scalars: dict):
        self.write("summary.txt", lambda fh: fh.writelines(f"{k} = {_fmt(v)}\n" for k, v in scalars.items()))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _params(cfg: ExperimentConfig) -> SimParams:
    s = cfg.sim
    return SimParams(s.eps, s.h, s.max_steps, s.seed)


def _domain(cfg: ExperimentConfig) -> DomainSpec:
    d = cfg.domain
    return DomainSpec(d.center, d.radius, d.gamma_radius, d.Gamma_radius)


def cmd_simulate(cfg, out: Output) -> dict:
    lc, df = landscape_from_id(cfg.landscape), diffusion_from_id(cfg.diffusion)
    path = simulate_sgd(lc, df, cfg.sim.x0, _params(cfg), cfg.sim.record_every, cfg.sim.safety_radius)
    out.write("trajectory.csv", lambda fh: write_trajectory_csv(path, fh, cfg.sim.h))
    final = path.points[-1]
    return {"steps": cfg.sim.max_steps, "final": tuple(float(v) for v in final),
            "final_loss": float(lc.loss(final))}


def _write_exits(records):
    def fill(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "seed", "exited", "exit_step", "exit_time", "exit_x1", "exit_x2"])
        for i, r in enumerate(records):
            w.writerow([i, r.seed, int(r.exited), r.exit_step, repr(float(r.exit_time)),
                        repr(float(r.exit_point[0])), repr(float(r.exit_point[1]))])
    return fill


def cmd_exit_time(cfg, out: Output) -> dict:
    lc, df = landscape_from_id(cfg.landscape), diffusion_from_id(cfg.diffusion)
    dom, e = _domain(cfg), cfg.ensemble
    s = exit_ensemble(lc, df, cfg.sim.x0, _params(cfg), dom, e.trials, e.threads,
                      cfg.sim.safety_radius)
    out.write("exits.csv", _write_exits(s.records))
    pts = s.exit_points()
    result = {"trials": len(s.records), "exited": s.n_exited,
              "exit_fraction": s.n_exited / len(s.records),
              "mean_time": s.mean_time, "median_time": s.median_time,
              "censored_fraction": s.censored_fraction,
              "exit_abs_x2_below_0.3": float(np.mean(np.abs(pts[:, 1] - dom.c[1]) < 0.3))
              if len(pts) else math.nan,
              "exponent": math.nan, "exponent_interval": (math.nan, math.nan)}
    if e.eps_list:
        fit = exit_exponent(lc, df, cfg.sim.x0, dom, e.eps_list, cfg.sim.h, cfg.sim.max_steps,
                            e.trials, cfg.sim.seed, e.censor_threshold, threads=e.threads)
        result["exponent"] = fit.slope
        result["exponent_interval"] = fit.slope_interval
        result["exponent_flagged_eps"] = tuple(fit.flagged)
    block = {k: (list(v) if isinstance(v, tuple) else v) for k, v in result.items()}
    out.write("exit_summary.json",
              lambda fh: fh.write(json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v)
                                              for k, v in block.items()}, indent=2) + "\n"))
    return result


def cmd_mam(cfg, out: Output) -> dict:
    lc, df = landscape_from_id(cfg.landscape), diffusion_from_id(cfg.diffusion)
    m = cfg.mam
    opts = MamOptions(max_iters=m.max_iters, step_size=m.step_size, tol=m.tol)
    res = mam_minimize(lc, df, cfg.sim.x0, m.target, m.n_points, opts)
    out.write("mam_path.csv", lambda fh: write_path_csv(res.path, fh))
    out.write("mam_summary.csv", lambda fh: fh.write(
        f"value,iterations,converged\n{res.value!r},{res.iterations},{int(res.converged)}\n"))
    return {"value": res.value, "iterations": res.iterations, "converged": res.converged}


def _hj_setup(cfg):
    """Candidate and the landscape/diffusion pair it claims to solve."""
    name, mu, tw = cfg.hj.candidate, cfg.hj.mu, cfg.two_well
    if name == "example31":
        return example31_candidate(mu), make_quadratic_bowl(), make_diag_diffusion(mu)
    if name in ("twowell1", "twowell2"):
        well = 1 if name == "twowell1" else 2
        return (twowell_candidate(well, tw.mu1 if well == 1 else tw.mu2), make_two_well(),
                make_two_well_diffusion(tw.mu1, tw.mu2))
    lc = landscape_from_id(cfg.landscape)
    return scaled_loss_candidate(lc), lc, diffusion_from_id(cfg.diffusion)


def cmd_hj_check(cfg, out: Output) -> dict:
    cand, lc, df = _hj_setup(cfg)
    anchor = cand.anchor if cand.anchor is not None else np.zeros(lc.dim)
    rng = np.random.default_rng(cfg.sim.seed)
    n = cfg.hj.samples
    # uniform in the open unit ball around the anchor
    u = rng.standard_normal((n, lc.dim))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    x = anchor + u * rng.uniform(0.0, 1.0, n)[:, None] ** (1.0 / lc.dim) * (1.0 - 1e-12)
    r = hj_residual(cand, lc, df, x)

    def fill(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(lc.dim)] + ["residual"])
        for xi, ri in zip(x, r):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(ri))])

    out.write("hj_residuals.csv", fill)
    return {"candidate": cfg.hj.candidate, "samples": n, "max_abs_residual": float(np.max(np.abs(r)))}


def cmd_two_well(cfg, out: Output) -> dict:
    tw, s = cfg.two_well, cfg.sim
    lc, df = make_two_well(), make_two_well_diffusion(tw.mu1, tw.mu2)
    p = _params(cfg)
    full = simulate_sgd(lc, df, s.x0, p, 1, s.safety_radius)
    labels = two_well_labels(full.points)
    keep = np.zeros(len(full), dtype=bool)
    keep[::s.record_every] = True
    keep[-1] = True
    thin = type(full)(full.points[keep], full.times[keep])
    out.write("trajectory.csv", lambda fh: write_trajectory_csv(thin, fh, s.h))

    def runs(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "start_step", "end_step"])
        for lab, a, b in run_lengths(labels):
            w.writerow([LABEL_NAMES[lab], a, b])

    out.write("labels.csv", runs)
    grid = HistogramGrid(tw.x_range, tw.y_range, tw.bins)
    phi = phi_histogram(full, grid, s.eps)

    def phis(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1_center", "x2_center", "count", "phi"])
        for i, xc in enumerate(phi.x_centers):
            for j, yc in enumerate(phi.y_centers):
                v = phi.phi[i, j]
                w.writerow([repr(float(xc)), repr(float(yc)), int(phi.counts[i, j]),
                            "nan" if math.isnan(v) else repr(float(v))])

    out.write("phi.csv", phis)
    f1, f2, fp = occupation_fractions(labels)
    soj = plateau_sojourns(labels, s.h)
    result = {"final_label": LABEL_NAMES[int(labels[-1])], "f1": f1, "f2": f2, "f_plateau": fp,
              "plateau_sojourns": len(soj),
              "plateau_mean_sojourn": float(soj.mean()) if len(soj) else math.nan,
              "histogram_coverage": phi.coverage}
    if tw.n_cycles > 0:
        d = cfg.domain
        stats = measure_transitions(tw.mu1, tw.mu2, s.eps, p, tw.n_cycles, tw.n_chains,
                                    d.gamma_radius, d.Gamma_radius, cfg.ensemble.threads)
        P12, P21 = transition_probabilities(stats)
        result.update(n12=stats.n12, n21=stats.n21, cycles1=stats.cycles1, cycles2=stats.cycles2,
                      P12=P12, P21=P21)
        if P12 + P21 > 0:
            result["rho1"], result["rho2"] = stationary_estimate(P12, P21)
    return result


def cmd_diffusion_estimate(cfg, out: Output) -> dict:
    b = cfg.minibatch
    rng = np.random.default_rng(b.data_seed)
    dim = len(b.x)
    fs = least_squares_finite_sum(rng.standard_normal((b.n, dim)), rng.standard_normal(b.n), b.m)
    D = minibatch_diffusion(fs, np.asarray(b.x, dtype=float))

    def fill(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(dim)])
        for row in D:
            w.writerow([repr(float(v)) for v in row])

    out.write("diffusion.csv", fill)
    return {"n": b.n, "m": b.m, "trace": float(np.trace(D))}


HANDLERS = {
    "simulate": cmd_simulate,
    "exit-time": cmd_exit_time,
    "mam": cmd_mam,
    "hj-check": cmd_hj_check,
    "two-well": cmd_two_well,
    "diffusion-estimate": cmd_diffusion_estimate,
}


def run(cfg: ExperimentConfig) -> dict:
    """Validate, dispatch and write outputs; returns the summary scalars."""
    cfg.validate()
    out = Output(cfg.output.dir)
    out.write("config.txt", lambda fh: fh.write(serialize_config(cfg)))
    result = HANDLERS[cfg.command](cfg, out)
    out.summary({"command": cfg.command, **result})
    return result


def build_config(args) -> ExperimentConfig:
    if args.command == "preset":
        if not args.overrides:
            raise ConfigError("preset", f"missing preset name; known: {', '.join(PRESETS)}")
        cfg = preset(args.overrides[0])
        overrides = args.overrides[1:]
    else:
        cfg = ExperimentConfig()
        overrides = args.overrides
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {args.config!r}: {exc.strerror}") from None
        parse_config(text, cfg)
    if args.command != "preset":
        cfg.command = args.command
    if os.environ.get(OUTPUT_ENV):
        cfg.output.dir = os.environ[OUTPUT_ENV]
    if args.threads is not None:
        cfg.ensemble.threads = args.threads
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "overrides take the form key=value")
        key, value = item.split("=", 1)
        set_key(cfg, key, value)
    return cfg


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quasipot", description=__doc__.split("\n\n")[0])
    ap.add_argument("--config", help="key = value configuration file")
    ap.add_argument("--threads", type=int, help="worker threads for ensembles")
    ap.add_argument("command", choices=COMMANDS + ("preset",))
    ap.add_argument("overrides", nargs="*", help="key=value overrides (preset: NAME first)")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        result = run(cfg)
    except QuasipotError as exc:
        print(f"quasipot: error: {exc}", file=sys.stderr)
        return exc.category
    line = " ".join(f"{k}={_fmt(v)}" for k, v in result.items())
    print(f"{cfg.command}: {line}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
