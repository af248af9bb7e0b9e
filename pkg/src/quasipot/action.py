"""Discrete action functionals for paths in a gradient landscape.

Both evaluators use the midpoint rule per segment and solve ``D y = v`` at
each midpoint rather than forming ``D^{-1}``; at ``mu = 1.9999`` the
condition number of ``D`` is about ``2e4``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dynamics import DiscretePath
from .errors import DegeneratePathError, ParameterError


@dataclass(frozen=True)
class ActionValue:
    value: float
    quadrature_points: int

    def __float__(self):
        return self.value


def _solve(D, V):
    """Solve ``D y = v`` pointwise; ``D`` is ``(n, d, d)``, ``V`` is ``(n, d, k)``."""
    try:
        return np.linalg.solve(D, V)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular diffusion matrix on the path: {exc}") from None


def action_functional(path: DiscretePath, lc, df) -> ActionValue:
    """``1/2 int (v + grad f)^T D^{-1} (v + grad f) dt`` for a time-stamped path."""
    if path.times is None:
        raise ParameterError("action_functional needs a time-stamped path")
    P = path.points
    dt = np.diff(path.times)
    v = np.diff(P, axis=0) / dt[:, None]
    mid = 0.5 * (P[:-1] + P[1:])
    w = v + lc.grad(mid)
    y = _solve(df.D(mid), w[..., None])[..., 0]
    integrand = 0.5 * np.sum(w * y, axis=-1)
    return ActionValue(float(np.sum(np.maximum(integrand, 0.0) * dt)), len(dt))


def segment_geometric_action(A, B, lc, df) -> np.ndarray:
    """Geometric action of each straight segment ``A[i] -> B[i]`` (midpoint rule)."""
    delta = B - A
    ds = np.sqrt(np.sum(delta * delta, axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        t = delta / ds[..., None]
    mid = 0.5 * (A + B)
    g = lc.grad(mid)
    Y = _solve(df.D(mid), np.stack([t, g], axis=-1))
    tAt = np.sum(t * Y[..., 0], axis=-1)
    gAg = np.sum(g * Y[..., 1], axis=-1)
    tAg = np.sum(t * Y[..., 1], axis=-1)
    integrand = np.sqrt(np.maximum(tAt, 0.0) * np.maximum(gAg, 0.0)) + tAg
    # Cauchy-Schwarz makes the integrand >= 0; clip roundoff on downhill segments
    return np.maximum(integrand, 0.0) * ds


def geometric_action(path: DiscretePath, lc, df) -> ActionValue:
    """Parametrisation-free action ``int (|psi'|_A |grad f|_A + <psi', grad f>_A) ds``, ``A = D^{-1}``."""
    P = path.points
    if len(P) < 3:
        raise ParameterError("geometric_action needs at least 3 points")
    ds = np.linalg.norm(np.diff(P, axis=0), axis=-1)
    if np.any(ds == 0.0):
        i = int(np.flatnonzero(ds == 0.0)[0])
        raise DegeneratePathError(f"points {i} and {i + 1} coincide")
    contrib = segment_geometric_action(P[:-1], P[1:], lc, df)
    return ActionValue(float(np.sum(contrib)), len(contrib))


def arc_length(points) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=-1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def reparametrize_uniform(path: DiscretePath, n_points: int) -> DiscretePath:
    """Resample the piecewise-linear image at ``n_points`` equally spaced arc lengths."""
    if n_points < 3:
        raise ParameterError("n_points must be >= 3")
    P = path.points
    s = arc_length(P)
    total = s[-1]
    if total == 0.0:
        raise DegeneratePathError("path has zero length")
    # drop zero-length segments so interp sees strictly increasing abscissae
    keep = np.concatenate([[True], np.diff(s) > 0])
    s, P = s[keep], P[keep]
    target = np.linspace(0.0, total, n_points)
    out = np.column_stack([np.interp(target, s, P[:, k]) for k in range(P.shape[1])])
    out[0], out[-1] = P[0], P[-1]
    return DiscretePath(out)


def read_path_csv(fh) -> DiscretePath:
    """Read ``x1,...,xd`` rows with an optional leading ``t`` column."""
    rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body if r])
    if header and header[0].strip() == "t":
        return DiscretePath(data[:, 1:], data[:, 0])
    return DiscretePath(data)


def write_path_csv(path: DiscretePath, fh):
    w = csv.writer(fh, lineterminator="\n")
    cols = [f"x{i + 1}" for i in range(path.dim)]
    if path.times is not None:
        w.writerow(["t"] + cols)
        for t, x in zip(path.times, path.points):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x])
    else:
        w.writerow(cols)
        for x in path.points:
            w.writerow([repr(float(v)) for v in x])
