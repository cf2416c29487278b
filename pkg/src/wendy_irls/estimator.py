"""Weak-form parameter estimation by iteratively reweighted least squares.

The regression ``vec(G W - B)`` is stacked over states and restricted to the
model's active coefficients. Its residual covariance is linearised in the
measurement noise (both ``G`` and ``B`` are built from the noisy data), and
the generalized least squares step is repeated with that covariance until the
coefficients settle.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
from scipy.special import comb, ndtri

from .covariance import ResidualCovariance
from .models import FeatureEvaluationError, ModelSpec, eval_features
from .simulate import StateGrid
from .weakform import (
    DEFAULT_ETA,
    ConfigurationError,
    RankDeficiencyError,
    TestFunctionBasis,
    WeakSystem,
    assemble,
    build_basis,
    check_rank,
    quadrature_matrix,
)

__all__ = [
    "EstimatorConfig",
    "FitError",
    "IRLSResult",
    "WendyFit",
    "confidence_intervals",
    "estimate_measurement_variance",
    "fit",
    "irls",
    "measurement_filter",
    "ols_solve",
    "parameter_covariance",
    "residual_covariance",
    "stacked_design",
]


class FitError(RuntimeError):
    """A fit that could not produce estimates; ``reason`` is a short tag."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


@dataclass(frozen=True)
class EstimatorConfig:
    K: int | None = None
    radius_mult: int | None = None
    eta: float = DEFAULT_ETA
    tol: float = 1e-6
    max_iter: int = 100
    reg: float = 1e-10
    filter_order: int = 14
    ci_level: float = 0.95

    def with_overrides(self, **kw) -> EstimatorConfig:
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


@dataclass
class IRLSResult:
    W: np.ndarray
    C: np.ndarray
    iterations: int
    converged: bool
    flags: list[str] = field(default_factory=list)


@dataclass
class WendyFit:
    model: str
    W_hat: np.ndarray
    active_params: np.ndarray
    C: np.ndarray
    S: np.ndarray
    ses: np.ndarray
    sigma2_hat: float
    iterations: int
    converged: bool
    condition_number: float
    param_names: list[str]
    flags: list[str] = field(default_factory=list)

    def intervals(self, level: float = 0.95) -> np.ndarray:
        return confidence_intervals(self.active_params, self.ses, level)

    def report(self, level: float = 0.95) -> dict:
        """JSON-ready summary of the fit."""
        ci = self.intervals(level)
        return {
            "model": self.model,
            "ci_level": level,
            "params": [
                {
                    "name": name,
                    "estimate": float(w),
                    "se": float(se),
                    "ci_lo": float(lo),
                    "ci_hi": float(hi),
                }
                for name, w, se, (lo, hi) in zip(self.param_names, self.active_params, self.ses, ci)
            ],
            "sigma2_hat": float(self.sigma2_hat),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "condition_number": float(self.condition_number),
            "flags": list(self.flags),
        }


# ---------------------------------------------------------------------------
# stacked (vectorised) system


def _active_columns(model: ModelSpec) -> list[tuple[int, int, int]]:
    """``(flat index, feature, state)`` for each active term."""
    return [(p, j, i) for p, (j, i) in enumerate(model.terms)]


def stacked_design(model: ModelSpec, sys: WeakSystem) -> tuple[np.ndarray, np.ndarray]:
    """Block-diagonal design over states restricted to active terms, and ``vec(B)``.

    Rows follow column-major ``vec`` (state blocks of length ``K``); columns
    follow the flat parameter order.
    """
    K = sys.K
    Gs = np.zeros((K * model.d, model.n_params))
    for p, j, i in _active_columns(model):
        Gs[i * K:(i + 1) * K, p] = sys.G[:, j]
    b = sys.B.reshape(-1, order="F")
    return Gs, b


def _lstsq(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.linalg.lstsq(A, y, rcond=None)[0]


def ols_solve(sys: WeakSystem, model: ModelSpec | None = None) -> np.ndarray:
    """Least-squares ``W`` for each state column of ``B``.

    With a model, only its active features enter each equation and the
    returned ``J x d`` matrix is zero elsewhere; without one every feature is
    used in every equation.
    """
    check_rank(sys.G if model is None else _active_rank_matrix(model, sys))
    G, B = sys.G, sys.B
    if model is None:
        return _lstsq(G, B)
    W = np.zeros((model.J, model.d))
    for i, cols in enumerate(_features_by_state(model)):
        if cols:
            W[cols, i] = _lstsq(G[:, cols], B[:, i])
    return W


def _features_by_state(model: ModelSpec) -> list[list[int]]:
    out: list[list[int]] = [[] for _ in range(model.d)]
    for j, i in model.terms:
        out[i].append(j)
    return out


def _active_rank_matrix(model: ModelSpec, sys: WeakSystem) -> np.ndarray:
    used = sorted({j for j, _ in model.terms})
    return sys.G[:, used]


# ---------------------------------------------------------------------------
# residual covariance


def residual_covariance(
    model: ModelSpec,
    U: StateGrid | np.ndarray,
    W: np.ndarray,
    basis: TestFunctionBasis,
    Q,
    *,
    structured: bool = True,
) -> np.ndarray:
    """First-order covariance of ``vec(G W - B)`` under unit-variance i.i.d. noise.

    Returns ``L L^T`` where ``L`` combines ``PhiDot Q`` (from ``B``) with
    ``Phi Q`` weighted by the state Jacobian of ``Theta(u) W`` (from ``G W``).
    ``structured=False`` forces the sparse product instead of the banded
    sliding-window route.
    """
    states = U.states if isinstance(U, StateGrid) else np.asarray(U, dtype=float)
    rc = ResidualCovariance(model, states, basis, Q, structured=structured)
    return rc.dense(np.asarray(W, dtype=float))


def _regularize(C: np.ndarray, reg: float) -> np.ndarray:
    out = C.copy()
    idx = np.diag_indices_from(out)
    out[idx] += reg * np.diag(C)
    return out


# ---------------------------------------------------------------------------
# IRLS


def _gls_step(Gs: np.ndarray, b: np.ndarray, C: np.ndarray, reg: float) -> np.ndarray:
    chol = sla.cholesky(_regularize(C, reg), lower=True, check_finite=True)
    Gw = sla.solve_triangular(chol, Gs, lower=True)
    bw = sla.solve_triangular(chol, b, lower=True)
    return _lstsq(Gw, bw)


def _banded_gls_step(Gp: np.ndarray, bp: np.ndarray, ab: np.ndarray, reg: float) -> np.ndarray:
    """GLS step with ``C`` in lower banded storage (rows already permuted)."""
    ab = ab.copy()
    ab[0] *= 1.0 + reg
    cb = sla.cholesky_banded(ab, lower=True, check_finite=True)
    rhs = np.column_stack([Gp, bp])
    x, info = sla.lapack.dtbtrs(cb, rhs, uplo="L")
    if info != 0:
        raise np.linalg.LinAlgError(f"banded triangular solve failed (info={info})")
    return _lstsq(x[:, :-1], x[:, -1])


def irls(
    model: ModelSpec,
    U: StateGrid,
    basis: TestFunctionBasis,
    Q,
    tol: float = 1e-6,
    max_iter: int = 100,
    reg: float = 1e-10,
    *,
    W0: np.ndarray | None = None,
    covariance=None,
    sys: WeakSystem | None = None,
) -> IRLSResult:
    """Reweighted least squares on the stacked weak-form system.

    ``covariance(W)`` overrides the residual covariance (mainly for testing);
    by default it is :func:`residual_covariance` at the current iterate.
    Stops when the relative change of the active coefficients drops below
    ``tol`` or after ``max_iter`` reweighted steps. A covariance that cannot
    be factorised ends the iteration at the previous iterate with
    ``converged=False`` and the flag ``"singular_covariance"``.
    """
    if sys is None:
        sys = assemble(basis, Q, eval_features(model, U.states), U.states)
    Gs, b = stacked_design(model, sys)
    step = None
    if covariance is None:
        rc = ResidualCovariance(model, U.states, basis, Q)
        covariance = rc.dense
        if rc.structured:
            Gp, bp = Gs[rc.perm], b[rc.perm]

            def step(W):
                return _banded_gls_step(Gp, bp, rc.banded(W), reg)
    if step is None:
        def step(W):
            return _gls_step(Gs, b, covariance(W), reg)

    W = ols_solve(sys, model) if W0 is None else np.asarray(W0, dtype=float)
    w = model.flatten(W)
    flags: list[str] = []
    converged = False
    n = 0
    while n < max_iter:
        try:
            w_new = step(W)
        except (np.linalg.LinAlgError, ValueError):
            flags.append("singular_covariance")
            break
        n += 1
        if not np.all(np.isfinite(w_new)):
            raise FitError("divergence", f"non-finite coefficients at iteration {n}")
        denom = np.linalg.norm(w)
        change = np.linalg.norm(w_new - w) / (denom if denom > 0 else 1.0)
        w = w_new
        W = model.unflatten(w)
        if change < tol:
            converged = True
            break
    if not converged and "singular_covariance" not in flags:
        flags.append("max_iter")
    # covariance reported at the returned iterate
    try:
        C = covariance(W)
    except (np.linalg.LinAlgError, ValueError):
        C = np.full((Gs.shape[0], Gs.shape[0]), np.nan)
    return IRLSResult(W=W, C=C, iterations=n, converged=converged, flags=flags)


# ---------------------------------------------------------------------------
# variance estimate and uncertainty


def measurement_filter(order: int = 14) -> np.ndarray:
    """Unit-norm ``order``-th difference stencil of length ``order + 1``."""
    k = np.arange(order + 1)
    f = (-1.0) ** k * comb(order, k, exact=False)
    return f / np.linalg.norm(f)


def estimate_measurement_variance(U: StateGrid | np.ndarray, order: int = 14) -> float:
    """Pooled noise variance from a high-order difference filter.

    The filter annihilates polynomials of degree below ``order`` and has unit
    ``l2`` norm, so white noise of variance ``s^2`` maps to variance ``s^2``.
    """
    X = U.states if isinstance(U, StateGrid) else np.asarray(U, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    f = measurement_filter(order)
    n_out = X.shape[0] - f.size + 1
    if n_out < 1:
        raise ValueError(
            f"grid of {X.shape[0]} points is shorter than the length-{f.size} filter"
        )
    conv = np.column_stack([np.convolve(X[:, i], f, mode="valid") for i in range(X.shape[1])])
    return float(np.sum(conv**2) / (X.shape[1] * n_out))


def parameter_covariance(
    sys: WeakSystem | np.ndarray,
    C: np.ndarray,
    sigma2: float,
    model: ModelSpec | None = None,
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """``S = s2 (G^T G)^-1 G^T C G (G^T G)^-1`` on the stacked system and ``sqrt(diag S)``.

    ``sys`` may be a :class:`WeakSystem` (stacked with ``model``) or an
    already stacked design matrix.
    """
    if isinstance(sys, WeakSystem):
        if model is None:
            Gs = np.kron(np.eye(sys.B.shape[1]), sys.G)
        else:
            Gs, _ = stacked_design(model, sys)
    else:
        Gs = np.asarray(sys, dtype=float)
    Qf, R = np.linalg.qr(Gs)
    H = sla.solve_triangular(R, Qf.T)  # (G^T G)^-1 G^T
    S = sigma2 * (H @ C @ H.T)
    S = 0.5 * (S + S.T)
    diag = np.diag(S).copy()
    flags = []
    if np.any(diag < 0):
        flags.append("negative_variance_clamped")
        diag = np.maximum(diag, 0.0)
    return S, np.sqrt(diag), flags


def normal_quantile(p: float) -> float:
    return float(ndtri(p))


def confidence_intervals(ws, ses, level: float = 0.95) -> np.ndarray:
    """Symmetric normal intervals, one ``(lo, hi)`` row per parameter."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    ws = np.asarray(ws, dtype=float)
    ses = np.asarray(ses, dtype=float)
    z = normal_quantile((1.0 + level) / 2.0)
    return np.column_stack([ws - z * ses, ws + z * ses])


def fit(model: ModelSpec, U: StateGrid, config: EstimatorConfig | None = None) -> WendyFit:
    """Full pipeline: basis, assembly, rank check, IRLS, variance and covariance.

    Raises
    ------
    FitError
        With ``reason`` one of ``configuration``, ``rank``, ``evaluation``,
        ``divergence`` or ``variance``.
    """
    cfg = config or EstimatorConfig()
    if U.d != model.d:
        raise ValueError(f"data has {U.d} states, model {model.name} has {model.d}")
    try:
        basis = build_basis(U, cfg.K, cfg.radius_mult, cfg.eta)
        Q = quadrature_matrix(U.M, U.dt)
        theta = eval_features(model, U.states)
        sys = assemble(basis, Q, theta, U.states)
        Gs, _ = stacked_design(model, sys)
        rank = check_rank(Gs)
        res = irls(model, U, basis, Q, cfg.tol, cfg.max_iter, cfg.reg, sys=sys)
        sigma2 = estimate_measurement_variance(U, cfg.filter_order)
    except ConfigurationError as exc:
        raise FitError("configuration", str(exc)) from exc
    except RankDeficiencyError as exc:
        raise FitError("rank", str(exc)) from exc
    except FeatureEvaluationError as exc:
        raise FitError("evaluation", str(exc)) from exc
    except ValueError as exc:
        raise FitError("variance", str(exc)) from exc
    if not np.all(np.isfinite(res.C)):
        raise FitError("singular_covariance", "residual covariance could not be formed")
    S, ses, cov_flags = parameter_covariance(Gs, res.C, sigma2)
    return WendyFit(
        model=model.name,
        W_hat=res.W,
        active_params=model.flatten(res.W),
        C=res.C,
        S=S,
        ses=ses,
        sigma2_hat=sigma2,
        iterations=res.iterations,
        converged=res.converged,
        condition_number=rank.condition_number,
        param_names=model.param_names,
        flags=res.flags + cov_flags,
    )


def z_value(level: float) -> float:
    return normal_quantile((1.0 + level) / 2.0)

