"""Test functions, trapezoidal quadrature and assembly of the weak-form system.

The regression pair is ``G = Phi Q Theta(U)`` and ``B = -PhiDot Q U`` where
the rows of ``Phi``/``PhiDot`` are compactly supported bumps (and their exact
derivatives) sampled on the data grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .simulate import StateGrid

__all__ = [
    "ConfigurationError",
    "RankDeficiencyError",
    "RankReport",
    "TestFunctionBasis",
    "WeakSystem",
    "assemble",
    "build_basis",
    "check_rank",
    "default_radius_mult",
    "quadrature_matrix",
]

DEFAULT_ETA = 9.0


class ConfigurationError(ValueError):
    """Test-function layout does not fit the grid."""


class RankDeficiencyError(np.linalg.LinAlgError):
    def __init__(self, rank: int, J: int, smallest: np.ndarray):
        self.rank = rank
        self.J = J
        self.smallest = smallest
        super().__init__(
            f"G has rank {rank} < {J}; smallest singular values {np.array2string(smallest, precision=3)}"
        )


@dataclass(frozen=True)
class TestFunctionBasis:
    centers: np.ndarray
    radius_mult: int
    eta: float
    Phi: sparse.csr_matrix
    PhiDot: sparse.csr_matrix

    __test__ = False  # not a pytest class

    @property
    def K(self) -> int:
        return self.Phi.shape[0]


@dataclass(frozen=True)
class WeakSystem:
    G: np.ndarray
    B: np.ndarray
    Q: np.ndarray

    @property
    def K(self) -> int:
        return self.G.shape[0]


@dataclass(frozen=True)
class RankReport:
    singular_values: np.ndarray
    rank: int
    condition_number: float
    tol: float


def quadrature_matrix(M: int, dt: float) -> np.ndarray:
    """Diagonal trapezoid weights ``diag(dt/2, dt, ..., dt, dt/2)``."""
    if M < 2:
        raise ValueError("M must be at least 2")
    if not dt > 0:
        raise ValueError("dt must be positive")
    w = np.full(M + 1, float(dt))
    w[0] = w[-1] = dt / 2.0
    return np.diag(w)


def default_radius_mult(n_points: int) -> int:
    return max(2, n_points // 16)


def bump(s: np.ndarray, eta: float = DEFAULT_ETA) -> tuple[np.ndarray, np.ndarray]:
    """Unit-height bump ``exp(-eta s^2/(1-s^2))`` on ``|s| < 1`` and its ``d/ds``."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0
    ss = np.where(inside, s, 0.0)
    one_m = 1.0 - ss**2
    phi = np.where(inside, np.exp(-eta * ss**2 / one_m), 0.0)
    dphi = np.where(inside, phi * (-2.0 * eta * ss / one_m**2), 0.0)
    return phi, dphi


def build_basis(
    grid: StateGrid,
    K: int | None = None,
    radius_mult: int | None = None,
    eta: float = DEFAULT_ETA,
) -> TestFunctionBasis:
    """Bumps of half-width ``radius_mult * dt`` centred uniformly in the interior.

    Defaults: ``radius_mult = max(2, (M+1)//16)`` and one centre per interior
    grid point, ``K = M + 1 - 2 * radius_mult``.
    """
    n = grid.n_points
    r = default_radius_mult(n) if radius_mult is None else int(radius_mult)
    if r < 2:
        raise ConfigurationError("radius_mult must be at least 2")
    if 2 * r >= n - 1:
        raise ConfigurationError(
            f"test-function support 2*{r}*dt does not fit in a grid of {n} points"
        )
    n_interior = n - 2 * r
    K = n_interior if K is None else int(K)
    if K < 1:
        raise ConfigurationError("K must be positive")
    if K > n_interior:
        raise ConfigurationError(
            f"K={K} exceeds the {n_interior} admissible centres; centres would coincide"
        )
    radius = r * grid.dt
    lo, hi = grid.t0 + radius, grid.T - radius
    if K == 1:
        centers = np.array([(lo + hi) / 2.0])
    else:
        centers = lo + (hi - lo) * np.arange(K) / (K - 1)
    t = grid.times
    s = (t[None, :] - centers[:, None]) / radius
    phi, dphi = bump(s, eta)
    dphi = dphi / radius
    return TestFunctionBasis(
        centers=centers,
        radius_mult=r,
        eta=float(eta),
        Phi=sparse.csr_matrix(phi),
        PhiDot=sparse.csr_matrix(dphi),
    )


def quadrature_weights(Q: np.ndarray) -> np.ndarray:
    return np.diag(Q) if np.ndim(Q) == 2 else np.asarray(Q)


def assemble(basis: TestFunctionBasis, Q: np.ndarray, theta: np.ndarray, U: np.ndarray) -> WeakSystem:
    """``G = Phi Q theta`` and ``B = -PhiDot Q U``."""
    q = quadrature_weights(Q)
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    n = basis.Phi.shape[1]
    if theta.shape[0] != n or U.shape[0] != n or q.shape[0] != n:
        raise ValueError("dimension mismatch between basis, quadrature and data")
    G = np.asarray(basis.Phi @ (q[:, None] * theta))
    B = -np.asarray(basis.PhiDot @ (q[:, None] * U))
    return WeakSystem(G=G, B=B, Q=np.asarray(Q))


def check_rank(sys: WeakSystem | np.ndarray, raise_on_deficient: bool = True) -> RankReport:
    """Singular values, numerical rank and condition number of ``G``."""
    G = sys.G if isinstance(sys, WeakSystem) else np.asarray(sys, dtype=float)
    sv = np.linalg.svd(G, compute_uv=False)
    K, J = G.shape
    tol = max(K, J) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > tol))
    cond = float(sv[0] / sv[-1]) if sv.size and sv[-1] > 0 else float("inf")
    if raise_on_deficient and rank < J:
        raise RankDeficiencyError(rank, J, sv[-max(1, J - rank):])
    return RankReport(singular_values=sv, rank=rank, condition_number=cond, tol=tol)
