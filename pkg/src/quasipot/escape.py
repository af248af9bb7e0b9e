"""Monte Carlo first-exit times, exit positions and cycle-chain escape
probabilities from a ball around an attractor."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DEFAULT_SAFETY_RADIUS, BatchStepper, SimParams, run_chunked, trial_seeds
from .errors import ParameterError


def derive_seed(master: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class DomainSpec:
    """Open ball ``U`` plus the inner spheres used by the cycle chain."""

    center: tuple
    radius: float = 1.0
    gamma_radius: float | None = None
    Gamma_radius: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.gamma_radius is None:
            object.__setattr__(self, "gamma_radius", 0.1 * self.radius)
        if self.Gamma_radius is None:
            object.__setattr__(self, "Gamma_radius", 0.2 * self.radius)
        if not 0.0 < self.gamma_radius < self.Gamma_radius < self.radius:
            raise ParameterError("need 0 < gamma_radius < Gamma_radius < radius")

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)


@dataclass
class ExitRecord:
    exited: bool
    exit_step: int
    exit_time: float
    exit_point: np.ndarray
    seed: int


def crossing_fraction(p, q, center, radius) -> np.ndarray:
    """Fraction ``a`` in (0, 1] with ``|p + a (q - p) - center| = radius``.

    ``p`` is inside the sphere and ``q`` outside.
    """
    u = p - center
    v = q - p
    A = np.sum(v * v, axis=-1)
    B = 2.0 * np.sum(u * v, axis=-1)
    C = np.sum(u * u, axis=-1) - radius ** 2
    a = (-B + np.sqrt(np.maximum(B * B - 4.0 * A * C, 0.0))) / (2.0 * A)
    return np.clip(a, 0.0, 1.0)


def _exit_trials(lc, df, x0, p: SimParams, dom: DomainSpec, seeds, safety_radius):
    n = len(seeds)
    c, R = dom.c, dom.radius
    stepper = BatchStepper(lc, df, np.repeat(np.asarray(x0, float)[None], n, 0), seeds,
                           p.eps, p.h, safety_radius)
    records = [None] * n
    for k in range(1, p.max_steps + 1):
        prev = stepper.X
        X = stepper.advance()
        out = np.sum((X - c) ** 2, axis=-1) > R * R
        if np.any(out):
            a = crossing_fraction(prev[out], X[out], c, R)
            pts = prev[out] + a[:, None] * (X[out] - prev[out])
            # land exactly on the sphere; the solve above is accurate to roundoff
            pts = c + R * (pts - c) / np.linalg.norm(pts - c, axis=-1, keepdims=True)
            for j, i in enumerate(stepper.index[out]):
                records[i] = ExitRecord(True, k, (k - 1 + float(a[j])) * p.h, pts[j], int(seeds[i]))
            stepper.keep(~out)
            if len(stepper) == 0:
                break
    for j, i in enumerate(stepper.index):
        records[i] = ExitRecord(False, p.max_steps, p.max_steps * p.h, stepper.X[j].copy(),
                                int(seeds[i]))
    return records


def first_exit(lc, df, x0, p: SimParams, dom: DomainSpec,
               safety_radius: float = DEFAULT_SAFETY_RADIUS) -> ExitRecord:
    """First passage of one trajectory out of the closed ball; censored at ``p.max_steps``."""
    x0 = np.asarray(x0, dtype=float)
    if not np.sum((x0 - dom.c) ** 2) < dom.radius ** 2:
        raise ParameterError("x0 must lie strictly inside the domain")
    return _exit_trials(lc, df, x0, p, dom, np.array([p.seed], dtype=np.uint64), safety_radius)[0]


@dataclass
class ExitSummary:
    records: list
    mean_time: float
    median_time: float
    censored_fraction: float
    angles: np.ndarray
    exponent_available: bool

    @property
    def n_exited(self) -> int:
        return sum(r.exited for r in self.records)

    def exit_times(self) -> np.ndarray:
        return np.array([r.exit_time for r in self.records if r.exited])

    def exit_points(self) -> np.ndarray:
        pts = [r.exit_point for r in self.records if r.exited]
        return np.array(pts) if pts else np.zeros((0, 2))


def exit_ensemble(lc, df, x0, p: SimParams, dom: DomainSpec, trials: int, threads: int = 1,
                  safety_radius: float = DEFAULT_SAFETY_RADIUS) -> ExitSummary:
    """Independent exit trials with seeds derived from ``p.seed``."""
    if trials < 10:
        raise ParameterError(f"exit_ensemble needs trials >= 10, got {trials}")
    x0 = np.asarray(x0, dtype=float)
    if not np.sum((x0 - dom.c) ** 2) < dom.radius ** 2:
        raise ParameterError("x0 must lie strictly inside the domain")
    seeds = trial_seeds(p.seed, trials)
    records = run_chunked(
        lambda idx: _exit_trials(lc, df, x0, p, dom, seeds[idx], safety_radius), trials, threads)
    return summarize_exits(records, dom)


def summarize_exits(records, dom: DomainSpec) -> ExitSummary:
    times = np.array([r.exit_time for r in records if r.exited])
    censored = 1.0 - len(times) / len(records)
    if len(times):
        pts = np.array([r.exit_point for r in records if r.exited]) - dom.c
        angles = np.arctan2(pts[:, 1], pts[:, 0])
        return ExitSummary(records, float(times.mean()), float(np.median(times)), censored,
                           angles, True)
    return ExitSummary(records, math.nan, math.nan, censored, np.zeros(0), False)


@dataclass
class EpsEstimate:
    eps: float
    mean_time: float
    eps_log_mean: float
    censored_fraction: float
    n_exited: int
    included: bool
    times: np.ndarray = field(repr=False, default=None)


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    per_eps: list
    slope_interval: tuple
    flagged: list

    @property
    def available(self) -> bool:
        return not math.isnan(self.slope)


def _fit(inv_eps, log_t):
    slope, intercept = np.polyfit(inv_eps, log_t, 1)
    return float(slope), float(intercept)


def exit_exponent(lc, df, x0, dom: DomainSpec, eps_list, h: float, max_steps: int, trials: int,
                  seed: int = 0xC0FFEE, censor_threshold: float = 0.2, n_boot: int = 1000,
                  level: float = 0.8, threads: int = 1) -> ExponentFit:
    """Regress ``ln E tau`` on ``1/eps``; the slope estimates the minimal boundary quasi-potential.

    An eps whose censored fraction exceeds ``censor_threshold`` is left out of
    the fit and listed in ``flagged``.  ``slope_interval`` is a percentile
    bootstrap interval at ``level`` over trials resampled within each eps.
    """
    if len(eps_list) < 3:
        raise ParameterError("exit_exponent needs at least 3 eps values")
    per_eps, flagged = [], []
    for j, eps in enumerate(eps_list):
        p = SimParams(float(eps), h, max_steps, derive_seed(seed, j))
        s = exit_ensemble(lc, df, x0, p, dom, trials, threads)
        ok = s.exponent_available and s.censored_fraction <= censor_threshold
        if not ok:
            flagged.append(float(eps))
        per_eps.append(EpsEstimate(float(eps), s.mean_time,
                                   float(eps) * math.log(s.mean_time) if s.exponent_available else math.nan,
                                   s.censored_fraction, s.n_exited, ok, s.exit_times()))
    used = [e for e in per_eps if e.included]
    if len(used) < 2:
        return ExponentFit(math.nan, math.nan, per_eps, (math.nan, math.nan), flagged)
    inv = np.array([1.0 / e.eps for e in used])
    slope, intercept = _fit(inv, np.log([e.mean_time for e in used]))
    rng = np.random.default_rng(derive_seed(seed, 0xB007))
    boot = np.empty(n_boot)
    for b in range(n_boot):
        means = [rng.choice(e.times, size=len(e.times), replace=True).mean() for e in used]
        boot[b] = _fit(inv, np.log(means))[0]
    tail = 50.0 * (1.0 - level)
    lo, hi = np.percentile(boot, [tail, 100.0 - tail])
    return ExponentFit(slope, intercept, per_eps, (float(lo), float(hi)), flagged)


# cycle-chain phases
_SEEK_OUTER = 0      # waiting to hit the sphere Gamma
_SEEK_INNER = 1      # waiting to hit gamma or the domain boundary


@dataclass
class CycleChainRecord:
    n_cycles: int
    n_exits: int
    n_transitions: int
    steps: int
    partial: bool
    z_on_boundary: np.ndarray = field(repr=False)

    @property
    def p_hat(self) -> float:
        return self.n_exits / self.n_cycles if self.n_cycles else math.nan


def _chains(lc, df, x0, p, dom, seeds, cycles_per_chain, rival, safety_radius):
    n = len(seeds)
    c = dom.c
    r_in, r_mid, R = dom.gamma_radius, dom.Gamma_radius, dom.radius
    x0 = np.asarray(x0, dtype=float)
    stepper = BatchStepper(lc, df, np.repeat(x0[None], n, 0), seeds, p.eps, p.h, safety_radius)
    phase = np.full(n, _SEEK_OUTER)
    start_inside = np.full(n, np.sum((x0 - c) ** 2) < r_mid ** 2)
    cycles = np.zeros(n, dtype=int)
    exits = np.zeros(n, dtype=int)
    transitions = np.zeros(n, dtype=int)
    steps = np.zeros(n, dtype=int)
    z = [[] for _ in range(n)]
    if rival is not None:
        rival_c, rival_r = np.asarray(rival[0], dtype=float), float(rival[1])
    for k in range(1, p.max_steps + 1):
        X = stepper.advance()
        idx = stepper.index
        steps[idx] = k
        r2 = np.sum((X - c) ** 2, axis=-1)
        ph = phase[idx]
        inside = start_inside[idx]

        hit_outer = (ph == _SEEK_OUTER) & np.where(inside, r2 >= r_mid ** 2, r2 <= r_mid ** 2)
        to_gamma = (ph == _SEEK_INNER) & (r2 <= r_in ** 2)
        to_boundary = (ph == _SEEK_INNER) & (r2 > R * R)
        phase[idx[hit_outer]] = _SEEK_INNER
        for i, on_b in zip(idx[to_gamma | to_boundary], to_boundary[to_gamma | to_boundary]):
            z[i].append(bool(on_b))
        cycles[idx[to_gamma | to_boundary]] += 1
        exits[idx[to_boundary]] += 1
        phase[idx[to_gamma | to_boundary]] = _SEEK_OUTER
        start_inside[idx[to_gamma]] = True
        start_inside[idx[to_boundary]] = False

        if rival is not None:
            caught = (phase[idx] == _SEEK_OUTER) & ~start_inside[idx] & \
                (np.sum((X - rival_c) ** 2, axis=-1) <= rival_r ** 2)
            if np.any(caught):
                transitions[idx[caught]] += 1
                # restart the attempt from x0; the noise stream carries on
                stepper.X[caught] = x0
                start_inside[idx[caught]] = np.sum((x0 - c) ** 2) < r_mid ** 2

        done = cycles[idx] >= cycles_per_chain
        if np.any(done):
            stepper.keep(~done)
            if len(stepper) == 0:
                break
    return [CycleChainRecord(int(cycles[i]), int(exits[i]), int(transitions[i]), int(steps[i]),
                             bool(cycles[i] < cycles_per_chain), np.array(z[i], dtype=bool))
            for i in range(n)]


def merge_chains(records) -> CycleChainRecord:
    return CycleChainRecord(sum(r.n_cycles for r in records), sum(r.n_exits for r in records),
                            sum(r.n_transitions for r in records), sum(r.steps for r in records),
                            any(r.partial for r in records),
                            np.concatenate([r.z_on_boundary for r in records]))


def cycle_chain(lc, df, x0, p: SimParams, dom: DomainSpec, n_cycles: int, n_chains: int = 1,
                threads: int = 1, rival=None,
                safety_radius: float = DEFAULT_SAFETY_RADIUS) -> CycleChainRecord:
    """Alternate hits of Gamma and of (gamma or boundary) and count boundary endings.

    Work is split over ``n_chains`` independent trajectories, each running
    ``ceil(n_cycles / n_chains)`` cycles or until ``p.max_steps``.  With
    ``rival = (center, radius)`` a chain that leaves the domain and reaches
    the rival ball before re-entering Gamma scores a transition and restarts
    from ``x0``.
    """
    if n_cycles < 1 or n_chains < 1:
        raise ParameterError("n_cycles and n_chains must be positive")
    per_chain = -(-n_cycles // n_chains)
    seeds = trial_seeds(p.seed, n_chains)
    records = run_chunked(
        lambda idx: _chains(lc, df, x0, p, dom, seeds[idx], per_chain, rival, safety_radius),
        n_chains, threads)
    return merge_chains(records)
