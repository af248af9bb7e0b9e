"""Loss landscapes and diffusion fields.

Every callable here is vectorised over leading axes: a point is an array of
shape ``(..., d)``; losses come back as ``(...)``, gradients as ``(..., d)``
and diffusion matrices as ``(..., d, d)``.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import FactorizationError, ParameterError

__all__ = [
    "LossLandscape", "DiffusionField", "FiniteSumLoss",
    "make_quadratic", "make_quadratic_bowl", "make_two_well",
    "make_diag_diffusion", "make_constant_diffusion", "make_two_well_diffusion",
    "two_well_labels", "factorize", "minibatch_diffusion",
    "least_squares_finite_sum", "landscape_from_id", "diffusion_from_id",
    "PLATEAU", "B1", "B2", "O1", "O2",
]

PLATEAU, B1, B2 = 0, 1, 2
O1 = np.array([-2.0, 0.0])
O2 = np.array([2.0, 0.0])


@dataclass(frozen=True)
class LossLandscape:
    dim: int
    loss: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    lipschitz_L: float | None = None
    name: str = ""
    # distance to the set where grad jumps; None means grad is smooth everywhere
    kink_distance: Callable[[np.ndarray], np.ndarray] | None = None
    minima: tuple = ()


@dataclass(frozen=True, eq=False)
class DiffusionField:
    """Position-dependent SPD diffusion matrix ``D(x)``.

    ``factor`` returns the lower-triangular ``Sigma`` with
    ``Sigma @ Sigma.T == D``.  Piecewise-constant fields carry their pieces so
    that factors are computed once instead of per evaluation.
    """

    dim: int
    matrix_fn: Callable[[np.ndarray], np.ndarray]
    trace_bound_M: float
    name: str = ""
    pieces: tuple = ()
    selector: Callable[[np.ndarray], np.ndarray] | None = None
    _factors: np.ndarray | None = field(default=None, repr=False)

    def D(self, x) -> np.ndarray:
        return self.matrix_fn(np.asarray(x, dtype=float))

    def factor(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._factors is not None:
            if self.selector is None:
                return np.broadcast_to(self._factors[0], x.shape[:-1] + (self.dim, self.dim))
            return self._factors[self.selector(x)]
        D = self.D(x)
        try:
            return np.linalg.cholesky(D)
        except np.linalg.LinAlgError:
            # re-run the scalar routine to report the failing minor
            flat = D.reshape(-1, self.dim, self.dim)
            for M in flat:
                factorize(M)
            raise

    @property
    def is_constant(self) -> bool:
        return self._factors is not None and self.selector is None


def _piecewise_field(dim, pieces, selector, trace_bound, name):
    pieces = tuple(np.array(p, dtype=float) for p in pieces)
    factors = np.stack([factorize(p) for p in pieces])
    stacked = np.stack(pieces)
    if selector is None:
        def matrix_fn(x):
            return np.broadcast_to(pieces[0], x.shape[:-1] + (dim, dim)).copy()
    else:
        def matrix_fn(x):
            return stacked[selector(x)]
    return DiffusionField(dim, matrix_fn, trace_bound, name, pieces, selector, factors)


def make_quadratic(H, name=None) -> LossLandscape:
    """``f(x) = x^T H x`` for a symmetric positive semidefinite ``H``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.ndim == 2 and H.shape[0] == 1 and H.shape[1] > 1:
        H = np.diag(H[0])
    if H.shape[0] != H.shape[1] or not np.array_equal(H, H.T):
        raise ParameterError("quadratic coefficient matrix must be square and symmetric")
    eig = np.linalg.eigvalsh(H)
    if eig.min() < 0:
        raise ParameterError("quadratic coefficient matrix must be positive semidefinite")

    def loss(x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, H, x)

    def grad(x):
        x = np.asarray(x, dtype=float)
        return 2.0 * x @ H

    return LossLandscape(H.shape[0], loss, grad, lipschitz_L=2.0 * float(eig.max()),
                         name=name or "quadratic", minima=(np.zeros(H.shape[0]),))


def make_quadratic_bowl() -> LossLandscape:
    """``f(x) = x1^2 + x2^2``."""
    def loss(x):
        x = np.asarray(x, dtype=float)
        return np.sum(x * x, axis=-1)

    def grad(x):
        return 2.0 * np.asarray(x, dtype=float)

    return LossLandscape(2, loss, grad, lipschitz_L=2.0, name="quadratic_bowl",
                         minima=(np.zeros(2),))


def two_well_labels(x) -> np.ndarray:
    """Basin label per point: ``B1``, ``B2`` or ``PLATEAU`` (closed-disk test)."""
    x = np.asarray(x, dtype=float)
    x1, x2sq = x[..., 0], x[..., 1] ** 2
    in1 = (x1 + 2.0) ** 2 + x2sq <= 1.0
    in2 = (x1 - 2.0) ** 2 + x2sq <= 1.0
    # the disks are disjoint, so at most one flag is set
    return in1 * B1 + in2 * B2


# per-label centre and gradient scale: plateau, B1, B2
_WELL_CENTRES = np.array([[0.0, 0.0], [-2.0, 0.0], [2.0, 0.0]])
_WELL_SCALE = np.array([0.0, 2.0, 2.0])


def make_two_well() -> LossLandscape:
    """Two unit-disk quadratic wells at (-2, 0) and (2, 0) on a flat plateau of height 1."""
    def loss(x):
        x = np.asarray(x, dtype=float)
        lab = two_well_labels(x)
        x1, x2 = x[..., 0], x[..., 1]
        r1 = (x1 + 2.0) ** 2 + x2 ** 2
        r2 = (x1 - 2.0) ** 2 + x2 ** 2
        return np.where(lab == B1, r1, np.where(lab == B2, r2, 1.0))

    def grad(x):
        x = np.asarray(x, dtype=float)
        lab = two_well_labels(x)
        return _WELL_SCALE[lab][..., None] * (x - _WELL_CENTRES[lab])

    def kink_distance(x):
        x = np.asarray(x, dtype=float)
        d1 = np.abs(np.linalg.norm(x - O1, axis=-1) - 1.0)
        d2 = np.abs(np.linalg.norm(x - O2, axis=-1) - 1.0)
        return np.minimum(d1, d2)

    return LossLandscape(2, loss, grad, lipschitz_L=2.0, name="two_well",
                         kink_distance=kink_distance, minima=(O1.copy(), O2.copy()))


def make_diag_diffusion(mu: float) -> DiffusionField:
    """Constant field ``diag(mu, 2 - mu)``; trace is always 2."""
    mu = float(mu)
    if not 0.0 < mu < 2.0:
        raise ParameterError(f"mu must lie in (0, 2), got {mu}")
    return _piecewise_field(2, [np.diag([mu, 2.0 - mu])], None, 2.0, f"diag({mu!r})")


def make_constant_diffusion(D, name="constant") -> DiffusionField:
    D = np.asarray(D, dtype=float)
    return _piecewise_field(D.shape[0], [D], None, float(np.trace(D)), name)


def make_two_well_diffusion(mu1: float, mu2: float) -> DiffusionField:
    mu1, mu2 = float(mu1), float(mu2)
    for key, mu in (("mu1", mu1), ("mu2", mu2)):
        if not 1.0 < mu < 2.0:
            raise ParameterError(f"{key} must lie in (1, 2), got {mu}")
    # index order matches the labels: PLATEAU=0, B1=1, B2=2
    pieces = [np.eye(2), np.diag([mu1, 2.0 - mu1]), np.diag([mu2, 2.0 - mu2])]
    return _piecewise_field(2, pieces, two_well_labels, 2.0,
                            f"two_well_diffusion({mu1!r},{mu2!r})")


def factorize(D) -> np.ndarray:
    """Lower-triangular Cholesky factor of a symmetric positive definite matrix."""
    A = np.array(D, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise FactorizationError("matrix must be square")
    if not np.array_equal(A, A.T):
        raise FactorizationError("matrix is not symmetric", minor=0)
    n = A.shape[0]
    L = np.zeros_like(A)
    for j in range(n):
        pivot = A[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > 0.0:
            raise FactorizationError(
                f"leading principal minor of order {j + 1} is not positive", minor=j + 1)
        L[j, j] = math.sqrt(pivot)
        for i in range(j + 1, n):
            L[i, j] = (A[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


@dataclass
class FiniteSumLoss:
    """``f = (1/n) sum f_i`` with mini-batches of size ``batch_size``."""

    components: Sequence[tuple[Callable, Callable]]
    batch_size: int

    def __post_init__(self):
        n = len(self.components)
        if n < 1:
            raise ParameterError("finite sum needs at least one component")
        if not 1 <= self.batch_size <= n:
            raise ParameterError(f"batch size must lie in [1, {n}], got {self.batch_size}")

    @property
    def n(self) -> int:
        return len(self.components)

    def component_grads(self, x) -> np.ndarray:
        return np.stack([np.asarray(g(x), dtype=float) for _, g in self.components])

    def loss(self, x):
        return sum(f(x) for f, _ in self.components) / self.n

    def grad(self, x):
        return self.component_grads(x).sum(axis=0) / self.n


MAX_ENUMERATION_N = 12


def minibatch_diffusion(fs: FiniteSumLoss, x) -> np.ndarray:
    """Exact covariance of the mini-batch gradient over all size-m subsets."""
    n, m = fs.n, fs.batch_size
    if n > MAX_ENUMERATION_N:
        raise ParameterError(f"exact enumeration limited to n <= {MAX_ENUMERATION_N}, got {n}")
    G = fs.component_grads(x)
    d = G.shape[1]
    gbar = G.sum(axis=0) / n
    acc = np.zeros((d, d))
    count = 0
    for subset in itertools.combinations(range(n), m):
        dev = G[list(subset)].sum(axis=0) / m - gbar
        acc += np.outer(dev, dev)
        count += 1
    return acc / count


def least_squares_finite_sum(A, b, batch_size) -> FiniteSumLoss:
    """Components ``f_i(x) = (a_i . x - b_i)^2 / 2`` of a linear regression."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    comps = []
    for a_i, b_i in zip(A, b):
        comps.append((lambda x, a=a_i, c=b_i: 0.5 * (a @ x - c) ** 2,
                      lambda x, a=a_i, c=b_i: (a @ x - c) * a))
    return FiniteSumLoss(comps, batch_size)


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


def landscape_from_id(spec: str) -> LossLandscape:
    """Resolve ``quadratic_bowl``, ``two_well`` or ``quadratic(a,b,...)``."""
    spec = spec.strip()
    if spec == "quadratic_bowl":
        return make_quadratic_bowl()
    if spec == "two_well":
        return make_two_well()
    m = re.fullmatch(r"quadratic\((.*)\)", spec)
    if m:
        try:
            coeffs = [float(c) for c in m.group(1).split(",")]
        except ValueError:
            raise ParameterError(f"bad quadratic coefficients in {spec!r}") from None
        k = math.isqrt(len(coeffs))
        if k * k == len(coeffs) and k > 1:
            return make_quadratic(np.reshape(coeffs, (k, k)), name=spec)
        return make_quadratic(np.diag(coeffs), name=spec)
    raise ParameterError(f"unknown landscape id {spec!r}")


def diffusion_from_id(spec: str) -> DiffusionField:
    """Resolve ``identity``, ``diag(mu)`` or ``two_well_diffusion(mu1,mu2)``."""
    spec = spec.strip()
    if spec == "identity":
        return make_constant_diffusion(np.eye(2), name="identity")
    m = re.fullmatch(rf"diag\(\s*({_NUM})\s*\)", spec)
    if m:
        return make_diag_diffusion(float(m.group(1)))
    m = re.fullmatch(rf"two_well_diffusion\(\s*({_NUM})\s*,\s*({_NUM})\s*\)", spec)
    if m:
        return make_two_well_diffusion(float(m.group(1)), float(m.group(2)))
    raise ParameterError(f"unknown diffusion id {spec!r}")
