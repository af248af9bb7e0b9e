"""Local quasi-potentials: Hamilton-Jacobi residuals, closed forms and a
minimum action solver on the geometric action.

The solver is a string-method style descent: interior nodes move along the
normal component of the finite-difference gradient of the discrete
geometric action, then the string is resampled to uniform arc length.
Endpoints stay pinned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_continuous_lyapunov, solveh_banded

from .action import reparametrize_uniform, segment_geometric_action
from .dynamics import DiscretePath, run_chunked
from .errors import DegeneratePathError, ParameterError
from .landscape import O1, O2

FD_STEP_PHI = 1e-5


@dataclass
class CandidatePotential:
    phi: Callable[[np.ndarray], np.ndarray]
    grad_phi: Callable[[np.ndarray], np.ndarray] | None = None
    anchor: np.ndarray | None = None

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.grad_phi is not None:
            return self.grad_phi(x)
        g = np.empty_like(x)
        for k in range(x.shape[-1]):
            e = np.zeros(x.shape[-1])
            e[k] = FD_STEP_PHI
            g[..., k] = (self.phi(x + e) - self.phi(x - e)) / (2 * FD_STEP_PHI)
        return g


def hj_residual(c: CandidatePotential, lc, df, x) -> np.ndarray:
    """``1/2 grad(phi)^T D grad(phi) - grad f . grad(phi)``; zero for a quasi-potential."""
    x = np.asarray(x, dtype=float)
    p = c.gradient(x)
    Dp = np.sum(df.D(x) * p[..., None, :], axis=-1)
    return 0.5 * np.sum(p * Dp, axis=-1) - np.sum(lc.grad(x) * p, axis=-1)


def analytic_qp_example31(x, mu: float) -> np.ndarray:
    """``2 (x1^2 / mu + x2^2 / (2 - mu))`` for the bowl with ``D = diag(mu, 2 - mu)``."""
    if not 0.0 < mu < 2.0:
        raise ParameterError(f"mu must lie in (0, 2), got {mu}")
    x = np.asarray(x, dtype=float)
    return 2.0 * (x[..., 0] ** 2 / mu + x[..., 1] ** 2 / (2.0 - mu))


def analytic_qp_twowell(x, well: int, mu: float) -> np.ndarray:
    if well not in (1, 2):
        raise ParameterError(f"well must be 1 or 2, got {well}")
    if not 1.0 < mu < 2.0:
        raise ParameterError(f"mu must lie in (1, 2), got {mu}")
    centre = O1 if well == 1 else O2
    return analytic_qp_example31(np.asarray(x, dtype=float) - centre, mu)


def example31_candidate(mu: float) -> CandidatePotential:
    def grad_phi(x):
        return np.stack([4.0 * x[..., 0] / mu, 4.0 * x[..., 1] / (2.0 - mu)], axis=-1)
    return CandidatePotential(lambda x: analytic_qp_example31(x, mu), grad_phi, np.zeros(2))


def twowell_candidate(well: int, mu: float) -> CandidatePotential:
    centre = O1 if well == 1 else O2
    base = example31_candidate(mu)
    return CandidatePotential(lambda x: analytic_qp_twowell(x, well, mu),
                              lambda x: base.grad_phi(np.asarray(x) - centre), centre.copy())


def scaled_loss_candidate(lc, scale: float = 2.0) -> CandidatePotential:
    """``phi = scale * f``; with ``scale = 2`` this solves the equation when ``D = I``."""
    return CandidatePotential(lambda x: scale * lc.loss(x), lambda x: scale * lc.grad(x),
                              lc.minima[0] if lc.minima else None)


def lyapunov_candidate(H, D) -> CandidatePotential:
    """Quasi-potential ``x^T S^{-1} x`` of ``f = x^T H x`` with constant ``D``.

    ``S`` solves ``H S + S H = D``; it reduces to ``2 H D^{-1}`` when ``H``
    and ``D`` commute.
    """
    H = np.asarray(H, dtype=float)
    S = solve_continuous_lyapunov(H, np.asarray(D, dtype=float))
    P = np.linalg.inv(S)
    P = 0.5 * (P + P.T)
    return CandidatePotential(lambda x: np.einsum("...i,ij,...j->...", x, P, x),
                              lambda x: 2.0 * np.asarray(x) @ P, np.zeros(H.shape[0]))


@dataclass
class MamOptions:
    max_iters: int = 2000
    step_size: float = 1.0
    tol: float = 1e-8
    window: int = 10
    fd_rel_step: float = 1e-6
    critical_tol: float = 1e-8
    waive_anchor: bool = False


@dataclass
class QuasiPotentialResult:
    value: float
    path: DiscretePath
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def _path_gradient(P, lc, df, delta):
    """Central differences of the discrete action w.r.t. interior nodes.

    Moving node ``i`` only changes segments ``i-1`` and ``i``, so each
    difference is evaluated on those two segments alone.
    """
    left, node, right = P[:-2], P[1:-1], P[2:]
    G = np.zeros_like(node)
    for k in range(P.shape[1]):
        e = np.zeros(P.shape[1])
        e[k] = delta
        plus = (segment_geometric_action(left, node + e, lc, df)
                + segment_geometric_action(node + e, right, lc, df))
        minus = (segment_geometric_action(left, node - e, lc, df)
                 + segment_geometric_action(node - e, right, lc, df))
        G[:, k] = (plus - minus) / (2.0 * delta)
    return G


def _tension(P, lc, df):
    """Per-segment ``|t|_A |grad f|_A``: the stiffness of the string."""
    delta = np.diff(P, axis=0)
    t = delta / np.linalg.norm(delta, axis=-1, keepdims=True)
    mid = 0.5 * (P[:-1] + P[1:])
    g = lc.grad(mid)
    Y = np.linalg.solve(df.D(mid), np.stack([t, g], axis=-1))
    w = np.sqrt(np.maximum(np.sum(t * Y[..., 0], -1), 0) * np.maximum(np.sum(g * Y[..., 1], -1), 0))
    floor = 1e-3 * max(float(w.max()), 1e-12)
    return np.maximum(w, floor)


def _precondition(G, w, ds):
    """Solve ``(L_w / ds) X = G`` with ``L_w`` the tension-weighted Dirichlet Laplacian."""
    diag = (w[:-1] + w[1:]) / ds
    off = -w[1:-1] / ds
    ab = np.zeros((2, len(diag)))
    ab[0, 1:] = off
    ab[1] = diag
    return solveh_banded(ab, G)


def _action(P, lc, df):
    return float(np.sum(segment_geometric_action(P[:-1], P[1:], lc, df)))


def _resample(P, n):
    seg = np.linalg.norm(np.diff(P, axis=0), axis=-1)
    if np.sum(seg) == 0.0:
        raise DegeneratePathError("minimum action path collapsed to a point")
    return reparametrize_uniform(DiscretePath(P), n).points


def mam_minimize(lc, df, start, end, n_points: int = 100, opts: MamOptions | None = None,
                 init: DiscretePath | None = None) -> QuasiPotentialResult:
    """Minimise the geometric action over paths from ``start`` to ``end``."""
    opts = opts or MamOptions()
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    if n_points < 20:
        raise ParameterError(f"n_points must be >= 20, got {n_points}")
    if not opts.waive_anchor and np.linalg.norm(lc.grad(start)) >= opts.critical_tol:
        raise ParameterError("start is not a critical point of the landscape")
    if np.array_equal(start, end):
        return QuasiPotentialResult(0.0, DiscretePath(np.repeat(start[None], n_points, 0)), 0, True)

    if init is None:
        s = np.linspace(0.0, 1.0, n_points)[:, None]
        P = (1.0 - s) * start + s * end
        g = np.linalg.norm(lc.grad(P[1:-1]), axis=-1)
        if np.any(g == 0.0):
            # interior node on a critical point: nudge off it deterministically
            rng = np.random.default_rng(0)
            P[1:-1] += 1e-6 * rng.standard_normal(P[1:-1].shape)
    else:
        P = init.points.copy()
        P[0], P[-1] = start, end
    P = _resample(P, n_points)

    value = _action(P, lc, df)
    history = [value]
    alpha = opts.step_size
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        diameter = float(np.linalg.norm(P.max(axis=0) - P.min(axis=0)))
        ds = float(np.linalg.norm(P[1] - P[0]))
        G = _path_gradient(P, lc, df, opts.fd_rel_step * max(diameter, 1e-12))
        tangent = P[2:] - P[:-2]
        tangent /= np.linalg.norm(tangent, axis=-1, keepdims=True)
        G -= np.sum(G * tangent, axis=-1, keepdims=True) * tangent
        if not np.any(G):
            converged = True
            break
        step = _precondition(G, _tension(P, lc, df), ds)
        # cap the largest node move at one segment length
        step *= min(1.0, ds / max(float(np.max(np.linalg.norm(step, axis=-1))), 1e-300))
        accepted = False
        while alpha > 1e-12:
            trial = P.copy()
            trial[1:-1] -= alpha * step
            trial = _resample(trial, n_points)
            trial_value = _action(trial, lc, df)
            if trial_value <= value + 1e-12:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # no descent direction left at this resolution
            converged = True
            break
        P, value = trial, trial_value
        history.append(value)
        alpha = min(alpha * 2.0, 1.0)
        if len(history) > opts.window:
            old = history[-1 - opts.window]
            if old - value <= opts.tol * max(abs(value), 1e-300):
                converged = True
                break
    return QuasiPotentialResult(max(value, 0.0), DiscretePath(P), it, converged, history)


@dataclass
class BoundaryMinResult:
    min_value: float
    argmin: np.ndarray
    values: np.ndarray
    results: list
    all_converged: bool


def qp_boundary_min(lc, df, anchor, boundary, n_points: int = 100,
                    opts: MamOptions | None = None, threads: int = 1) -> BoundaryMinResult:
    """Smallest minimum-action value from ``anchor`` over sampled boundary points."""
    boundary = np.atleast_2d(np.asarray(boundary, dtype=float))
    if len(boundary) == 0:
        raise ParameterError("boundary sample is empty")
    results = run_chunked(
        lambda idx: [mam_minimize(lc, df, anchor, boundary[i], n_points, opts) for i in idx],
        len(boundary), threads)
    values = np.array([r.value for r in results])
    i = int(np.argmin(values))
    return BoundaryMinResult(float(values[i]), boundary[i].copy(), values, results,
                             all(r.converged for r in results))


def circle_points(n: int, center=(0.0, 0.0), radius: float = 1.0) -> np.ndarray:
    theta = 2.0 * math.pi * np.arange(n) / n
    return np.asarray(center, dtype=float) + radius * np.column_stack([np.cos(theta), np.sin(theta)])
