"""Two-well metastability: basin occupation, cycle-based transition
probabilities between the wells, the two-state stationary law and the
histogram potential ``-(eps/2) ln rho``."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import BatchStepper, DiscretePath, SimParams, simulate_sgd, trial_seeds
from .errors import ConfigError, ParameterError
from .escape import DomainSpec, cycle_chain
from .landscape import B1, B2, O1, O2, PLATEAU, make_two_well, make_two_well_diffusion, two_well_labels

LABEL_NAMES = {B1: "B1", B2: "B2", PLATEAU: "plateau"}


@dataclass
class TwoWellRun:
    path: DiscretePath
    labels: np.ndarray


def two_well_run(mu1: float, mu2: float, eps: float, x0, p: SimParams,
                 record_every: int = 1) -> TwoWellRun:
    """Simulate the two-well landscape and label every recorded state."""
    lc = make_two_well()
    df = make_two_well_diffusion(mu1, mu2)
    path = simulate_sgd(lc, df, x0, p.with_(eps=float(eps)), record_every)
    return TwoWellRun(path, two_well_labels(path.points))


def occupation_fractions(labels) -> tuple[float, float, float]:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ParameterError("empty label sequence")
    counts = np.bincount(labels.ravel(), minlength=3).astype(float)
    f1, f2 = counts[B1] / labels.size, counts[B2] / labels.size
    return f1, f2, 1.0 - f1 - f2


def run_lengths(labels, steps=None) -> list[tuple[int, int, int]]:
    """Maximal constant stretches as ``(label, start_step, end_step)``, ends inclusive."""
    labels = np.asarray(labels)
    steps = np.arange(len(labels)) if steps is None else np.asarray(steps)
    cut = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], cut])
    ends = np.concatenate([cut - 1, [len(labels) - 1]])
    return [(int(labels[s]), int(steps[s]), int(steps[e])) for s, e in zip(starts, ends)]


def plateau_sojourns(labels, h: float, record_every: int = 1) -> np.ndarray:
    """Durations of plateau stretches, kept apart from in-basin residence."""
    runs = run_lengths(labels)
    return np.array([(e - s + 1) * h * record_every for lab, s, e in runs if lab == PLATEAU])


@dataclass
class TransitionStats:
    n12: int
    n21: int
    cycles1: int
    cycles2: int
    occupation: tuple | None = None

    def __post_init__(self):
        if self.n12 > self.cycles1 or self.n21 > self.cycles2:
            raise ParameterError("transition counts exceed attempts")


def measure_transitions(mu1: float, mu2: float, eps: float, p: SimParams, n_cycles: int,
                        n_chains: int = 200, gamma_radius: float = 0.1, Gamma_radius: float = 0.2,
                        threads: int = 1) -> TransitionStats:
    """Count well-to-well transitions with one cycle chain per basin.

    An attempt is a cycle from Gamma around ``O_i`` back to ``gamma`` or the
    basin circle.  It becomes a transition when, after leaving the basin, the
    path reaches Gamma around the other well before Gamma around its own.
    """
    lc = make_two_well()
    df = make_two_well_diffusion(mu1, mu2)
    q = p.with_(eps=float(eps))
    out = []
    for k, (own, other) in enumerate(((O1, O2), (O2, O1))):
        dom = DomainSpec(tuple(own), 1.0, gamma_radius, Gamma_radius)
        rec = cycle_chain(lc, df, own, q.with_(seed=int(trial_seeds(p.seed, 2)[k])), dom,
                          n_cycles, n_chains, threads, rival=(other, Gamma_radius))
        out.append(rec)
    return TransitionStats(out[0].n_transitions, out[1].n_transitions,
                           out[0].n_cycles, out[1].n_cycles)


def transition_probabilities(stats: TransitionStats) -> tuple[float, float]:
    if stats.cycles1 <= 0 or stats.cycles2 <= 0:
        raise ParameterError("transition probability undefined without attempts")
    return stats.n12 / stats.cycles1, stats.n21 / stats.cycles2


def binomial_stderr(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n) if n else math.nan


def stationary_estimate(P12: float, P21: float) -> tuple[float, float]:
    """Stationary law of the two-state chain with jump probabilities ``P12``, ``P21``."""
    if not (P12 >= 0 and P21 >= 0) or P12 + P21 <= 0:
        raise ParameterError("need P12, P21 >= 0 with a positive sum")
    rho1 = P21 / (P12 + P21)
    return rho1, 1.0 - rho1


@dataclass(frozen=True)
class HistogramGrid:
    x_range: tuple = (-4.0, 4.0)
    y_range: tuple = (-2.0, 2.0)
    bins: tuple = (80, 40)

    def validate(self):
        nx, ny = self.bins
        if nx < 1 or ny < 1:
            raise ConfigError("two_well.bins", "bin counts must be positive")
        if not self.x_range[1] > self.x_range[0]:
            raise ConfigError("two_well.x_range", "empty range")
        if not self.y_range[1] > self.y_range[0]:
            raise ConfigError("two_well.y_range", "empty range")

    @property
    def edges(self):
        return (np.linspace(*self.x_range, self.bins[0] + 1),
                np.linspace(*self.y_range, self.bins[1] + 1))

    @property
    def bin_area(self) -> float:
        ex, ey = self.edges
        return (ex[1] - ex[0]) * (ey[1] - ey[0])


@dataclass
class PhiGrid:
    x_centers: np.ndarray
    y_centers: np.ndarray
    counts: np.ndarray
    phi: np.ndarray = field(repr=False)
    total: int

    @property
    def coverage(self) -> float:
        return float(np.mean(self.counts > 0))

    def centered(self) -> np.ndarray:
        """``phi`` shifted so its minimum over nonempty bins is zero."""
        return self.phi - np.nanmin(self.phi)


def histogram_counts(points, grid: HistogramGrid) -> np.ndarray:
    grid.validate()
    pts = np.asarray(points, dtype=float)
    counts, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=grid.edges)
    return counts.astype(np.int64)


def phi_from_counts(counts, total: int, grid: HistogramGrid, eps: float) -> PhiGrid:
    """Empty bins come back as NaN rather than an imputed value."""
    ex, ey = grid.edges
    counts = np.asarray(counts)
    with np.errstate(divide="ignore"):
        rho = counts / (total * grid.bin_area)
        phi = np.where(counts > 0, -0.5 * eps * np.log(rho), np.nan)
    return PhiGrid(0.5 * (ex[1:] + ex[:-1]), 0.5 * (ey[1:] + ey[:-1]), counts, phi, int(total))


def phi_histogram(path: DiscretePath, grid: HistogramGrid, eps: float) -> PhiGrid:
    """Per-bin ``-(eps/2) ln rho`` from the occupation density of a trajectory."""
    return phi_from_counts(histogram_counts(path.points, grid), len(path), grid, eps)


def accumulate_occupation(lc, df, X0, seeds, p: SimParams, grid: HistogramGrid | None = None,
                          burn_in: int = 0, labeler=two_well_labels, n_labels: int = 3):
    """Stream several trajectories; returns per-trajectory label counts and, with a
    grid, the pooled histogram.  Nothing is stored per step."""
    X0 = np.asarray(X0, dtype=float)
    st = BatchStepper(lc, df, X0, seeds, p.eps, p.h)
    n = len(seeds)
    offset = np.arange(n) * n_labels
    counts = np.zeros(n * n_labels, dtype=np.int64)
    hist = None
    if grid is not None:
        grid.validate()
        hist = np.zeros(grid.bins, dtype=np.int64)
    labs, pts = [], []

    def flush():
        nonlocal counts, hist
        if labs:
            counts += np.bincount(np.concatenate(labs), minlength=n * n_labels)
        if pts:
            hist += histogram_counts(np.concatenate(pts), grid)
        labs.clear()
        pts.clear()

    for k in range(1, p.max_steps + 1):
        X = st.advance()
        if k <= burn_in:
            continue
        labs.append(offset + labeler(X))
        if grid is not None:
            pts.append(X.copy())
        if len(labs) == 4096:
            flush()
    flush()
    return counts.reshape(n, n_labels), hist
