"""Gradient flow and Euler-Maruyama integration of the SGD diffusion.

Noise is counter based: the standard normal used at step ``k`` of a trial
with seed ``s`` is row ``k % NOISE_BLOCK`` of a Philox block keyed by ``s``
with counter ``k // NOISE_BLOCK``.  A trial therefore produces the same path
whether it runs alone, inside a batch, or on another thread.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ParameterError
from .landscape import DiffusionField, LossLandscape

NOISE_BLOCK = 1024
DEFAULT_SAFETY_RADIUS = 1e6


@dataclass(frozen=True)
class SimParams:
    eps: float
    h: float
    max_steps: int
    seed: int = 0xC0FFEE

    def __post_init__(self):
        if not self.eps >= 0.0:
            raise ParameterError(f"eps must be >= 0, got {self.eps}")
        if not self.h > 0.0:
            raise ParameterError(f"h must be > 0, got {self.h}")
        if int(self.max_steps) < 1:
            raise ParameterError(f"max_steps must be >= 1, got {self.max_steps}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ParameterError("seed must be a 64-bit unsigned integer")

    def with_(self, **kw) -> "SimParams":
        return SimParams(**{**self.__dict__, **kw})


class DiscretePath:
    """Ordered states, optionally time-stamped.

    ``points`` has shape ``(n, d)``; ``times`` is ``None`` for geometric
    (arc-length) paths.
    """

    def __init__(self, points, times=None):
        points = np.array(points, dtype=float)
        if points.ndim != 2 or points.shape[0] < 2:
            raise ParameterError("a path needs at least 2 points of shape (n, d)")
        if not np.all(np.isfinite(points)):
            raise ParameterError("path points must be finite")
        if times is not None:
            times = np.array(times, dtype=float)
            if times.shape != (points.shape[0],):
                raise ParameterError("times and points must have the same length")
            if np.any(np.diff(times) <= 0):
                raise ParameterError("path times must be strictly increasing")
        self.points = points
        self.times = times

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __repr__(self):
        kind = "timed" if self.times is not None else "geometric"
        return f"DiscretePath({len(self)} points, {kind})"


def noise_block(seed: int, block: int, dim: int, rows: int = NOISE_BLOCK) -> np.ndarray:
    bitgen = np.random.Philox(key=int(seed), counter=[0, 0, 0, int(block)])
    return np.random.Generator(bitgen).standard_normal((rows, dim))


def step_noise(seed: int, step: int, dim: int) -> np.ndarray:
    """The normal draw used at ``step`` (0-based) of the trial keyed by ``seed``."""
    return noise_block(seed, step // NOISE_BLOCK, dim)[step % NOISE_BLOCK]


def trial_seeds(master_seed: int, n: int) -> np.ndarray:
    """Independent per-trial 64-bit seeds derived from a master seed."""
    return np.array([np.random.SeedSequence([int(master_seed), i]).generate_state(1, np.uint64)[0]
                     for i in range(n)], dtype=np.uint64)


def _advance(lc, df, X, h, scale, Z):
    # shared by the scalar and batched paths so both round identically
    S = df.factor(X)
    return X - h * lc.grad(X) + scale * np.sum(S * Z[..., None, :], axis=-1)


def em_step(lc: LossLandscape, df: DiffusionField, x, p: SimParams, noise) -> np.ndarray:
    """One Euler-Maruyama step with the diffusion factor taken at ``x``."""
    x = np.asarray(x, dtype=float)
    return _advance(lc, df, x, p.h, math.sqrt(p.eps * p.h), np.asarray(noise, dtype=float))


class BatchStepper:
    """Advances a set of independent trials in lockstep.

    Trials may be dropped with :meth:`keep`; the survivors keep consuming
    their own noise streams.
    """

    def __init__(self, lc, df, X0, seeds, eps, h, safety_radius=DEFAULT_SAFETY_RADIUS):
        self.lc, self.df = lc, df
        self.X = np.array(X0, dtype=float)
        self.seeds = np.asarray(seeds, dtype=np.uint64)
        self.index = np.arange(len(self.seeds))
        self.h = h
        self.scale = math.sqrt(eps * h)
        self.step = 0
        self.safety_radius = safety_radius
        self._noise = None

    def _fetch(self):
        block = self.step // NOISE_BLOCK
        d = self.X.shape[-1]
        self._noise = np.stack([noise_block(s, block, d) for s in self.seeds]) \
            if len(self.seeds) else np.zeros((0, NOISE_BLOCK, d))

    def advance(self) -> np.ndarray:
        if self.step % NOISE_BLOCK == 0 or self._noise is None:
            self._fetch()
        Z = self._noise[:, self.step % NOISE_BLOCK]
        self.X = _advance(self.lc, self.df, self.X, self.h, self.scale, Z)
        self.step += 1
        if self.X.size and np.max(np.abs(self.X)) > self.safety_radius:
            bad = self.index[np.max(np.abs(self.X), axis=-1) > self.safety_radius][0]
            raise DivergenceError(
                f"trial {bad} left the safety radius {self.safety_radius:g} at step {self.step}")
        return self.X

    def keep(self, mask):
        mask = np.asarray(mask, dtype=bool)
        self.X = self.X[mask]
        self.seeds = self.seeds[mask]
        self.index = self.index[mask]
        if self._noise is not None:
            self._noise = self._noise[mask]

    def __len__(self):
        return len(self.seeds)


def gd_flow(lc: LossLandscape, x0, h: float, T: float) -> DiscretePath:
    """Explicit Euler discretisation of ``dx/dt = -grad f(x)`` on ``[0, T]``."""
    if not h > 0 or not T >= h:
        raise ParameterError("gd_flow needs h > 0 and T >= h")
    n = int(round(T / h))
    X = np.empty((n + 1, lc.dim))
    X[0] = np.asarray(x0, dtype=float)
    for k in range(n):
        X[k + 1] = X[k] - h * lc.grad(X[k])
    return DiscretePath(X, h * np.arange(n + 1))


def simulate_sgd(lc, df, x0, p: SimParams, record_every: int = 1,
                 safety_radius: float = DEFAULT_SAFETY_RADIUS) -> DiscretePath:
    """Run ``p.max_steps`` Euler-Maruyama steps from ``x0``.

    Every ``record_every``-th state is kept, plus the final state.
    """
    paths = simulate_batch(lc, df, np.asarray(x0, dtype=float)[None], [p.seed], p,
                           record_every, safety_radius)
    return paths[0]


def simulate_batch(lc, df, X0, seeds, p: SimParams, record_every: int = 1,
                   safety_radius: float = DEFAULT_SAFETY_RADIUS) -> list[DiscretePath]:
    X0 = np.asarray(X0, dtype=float)
    if record_every < 1:
        raise ParameterError("record_every must be >= 1")
    steps = [k for k in range(0, p.max_steps + 1, record_every)]
    if steps[-1] != p.max_steps:
        steps.append(p.max_steps)
    out = np.empty((len(steps), len(seeds), lc.dim))
    out[0] = X0
    stepper = BatchStepper(lc, df, X0, seeds, p.eps, p.h, safety_radius)
    j = 1
    for k in range(1, p.max_steps + 1):
        X = stepper.advance()
        if j < len(steps) and steps[j] == k:
            out[j] = X
            j += 1
    times = p.h * np.asarray(steps, dtype=float)
    return [DiscretePath(out[:, i], times) for i in range(len(seeds))]


def run_chunked(fn, n_items: int, threads: int = 1):
    """Apply ``fn(index_array)`` to contiguous chunks and concatenate results in order."""
    threads = max(1, min(int(threads), n_items)) if n_items else 1
    chunks = [c for c in np.array_split(np.arange(n_items), threads) if len(c)]
    if threads == 1 or len(chunks) == 1:
        results = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(fn, chunks))
    merged = []
    for r in results:
        merged.extend(r)
    return merged


@dataclass
class ClosenessResult:
    eps: np.ndarray
    statistic: np.ndarray
    bound: np.ndarray
    constant_C: float


def closeness_constant(M: float, T: float, L: float) -> float:
    return 2.0 * M * T * math.exp(L * L * T * T)


def closeness_statistic(lc, df, x0, eps_list, T: float, h: float, trials: int,
                        seed: int = 0xC0FFEE, threads: int = 1) -> ClosenessResult:
    """Max over grid times of the mean squared SGD-to-GD deviation, per eps."""
    if trials < 100:
        raise ParameterError(f"closeness_statistic needs trials >= 100, got {trials}")
    if lc.lipschitz_L is None:
        raise ParameterError("landscape carries no Lipschitz constant")
    n = int(round(T / h))
    gd = gd_flow(lc, x0, h, n * h).points
    seeds = trial_seeds(seed, trials)
    stats = []
    for eps in eps_list:
        if eps == 0:
            stats.append(0.0)
            continue
        p = SimParams(float(eps), h, n, seed)

        def chunk(idx):
            st = BatchStepper(lc, df, np.repeat(gd[:1], len(idx), axis=0), seeds[idx], p.eps, h)
            sq = np.zeros((len(idx), n + 1))
            for k in range(1, n + 1):
                X = st.advance()
                sq[:, k] = np.sum((X - gd[k]) ** 2, axis=-1)
            return list(sq)

        # per-trial rows summed in trial order: independent of the thread split
        total = np.sum(np.array(run_chunked(chunk, trials, threads)), axis=0)
        stats.append(float(np.max(total / trials)))
    C = closeness_constant(df.trace_bound_M, n * h, lc.lipschitz_L)
    eps_arr = np.asarray(eps_list, dtype=float)
    return ClosenessResult(eps_arr, np.asarray(stats), C * eps_arr, C)


def write_trajectory_csv(path: DiscretePath, fh, h: float | None = None):
    """Write ``step,t,x1,...,xd`` rows; ``step`` is ``round(t / h)`` when ``h`` is given."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["step", "t"] + [f"x{i + 1}" for i in range(path.dim)])
    for i, x in enumerate(path.points):
        t = path.times[i] if path.times is not None else float(i)
        step = int(round(t / h)) if h else i
        w.writerow([step, repr(float(t))] + [repr(float(v)) for v in x])
