"""Benchmark ODE systems written in linear-in-parameters form ``du/dt = Theta(u) W``.

Each benchmark carries its exact feature library, the state Jacobian of
``Theta(u) W``, the true parameter matrix and the initial condition used in
the coverage experiments. Parameter matrices are stored ``J x d``: column ``i``
holds the coefficients of the equation for state ``i`` and absent features are
zero. The flat parameter vector enumerates only the active entries, in the
order the terms are written in each equation.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BENCHMARKS",
    "FeatureEvaluationError",
    "ModelSpec",
    "UnknownModelError",
    "eval_features",
    "get_benchmark",
    "rhs",
]


class UnknownModelError(KeyError):
    """Requested benchmark name is not registered."""


class FeatureEvaluationError(FloatingPointError):
    """A feature evaluated to a non-finite value."""

    def __init__(self, row: int, feature: int, message: str | None = None):
        self.row = row
        self.feature = feature
        super().__init__(
            message or f"non-finite feature value at row {row}, feature {feature}"
        )


FeatureFn = Callable[[np.ndarray], np.ndarray]
# (U, W) -> (n, d, d) array of d(Theta(u) W)_i / du_k
JacobianFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ModelSpec:
    """An ODE model that is linear in its parameters.

    ``features`` maps an ``(n, d)`` state array to an ``(n, J)`` feature
    array. ``feature_state_jacobian`` maps ``(U, W)`` to the ``(n, d, d)``
    Jacobians of ``Theta(u) W`` with respect to ``u``. ``terms`` lists the
    active ``(feature, state)`` index pairs in reporting order.
    """

    name: str
    d: int
    J: int
    features: FeatureFn
    feature_state_jacobian: JacobianFn
    true_params: np.ndarray
    u0: np.ndarray
    terms: tuple[tuple[int, int], ...]
    feature_names: tuple[str, ...]
    default_T: float
    default_points: int
    nonneg_states: bool = False
    t0: float = 0.0
    aliases: tuple[str, ...] = field(default=())

    def __post_init__(self):
        W = np.array(self.true_params, dtype=float)
        u0 = np.array(self.u0, dtype=float).reshape(-1)
        if W.shape != (self.J, self.d):
            raise ValueError(f"true_params must be {self.J}x{self.d}, got {W.shape}")
        if u0.shape != (self.d,):
            raise ValueError(f"u0 must have length {self.d}")
        if len(self.feature_names) != self.J:
            raise ValueError("feature_names must have J entries")
        seen = set()
        for j, i in self.terms:
            if not (0 <= j < self.J and 0 <= i < self.d) or (j, i) in seen:
                raise ValueError(f"bad term index ({j}, {i})")
            seen.add((j, i))
        W.setflags(write=False)
        u0.setflags(write=False)
        object.__setattr__(self, "true_params", W)
        object.__setattr__(self, "u0", u0)

    @property
    def n_params(self) -> int:
        return len(self.terms)

    @property
    def active_mask(self) -> np.ndarray:
        mask = np.zeros((self.J, self.d), dtype=bool)
        for j, i in self.terms:
            mask[j, i] = True
        return mask

    @property
    def param_names(self) -> list[str]:
        return [f"w{p + 1}" for p in range(self.n_params)]

    def term_labels(self) -> list[str]:
        return [f"du{i + 1}/dt: {self.feature_names[j]}" for j, i in self.terms]

    def flatten(self, W: np.ndarray) -> np.ndarray:
        """Active entries of ``W`` in reporting order."""
        W = np.asarray(W, dtype=float)
        return np.array([W[j, i] for j, i in self.terms])

    def unflatten(self, w: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`flatten`; inactive entries are zero."""
        w = np.asarray(w, dtype=float).reshape(-1)
        if w.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {w.size}")
        W = np.zeros((self.J, self.d))
        for p, (j, i) in enumerate(self.terms):
            W[j, i] = w[p]
        return W

    @property
    def true_flat(self) -> np.ndarray:
        return self.flatten(self.true_params)

    def state_order_terms(self) -> list[list[int]]:
        """For each state, the flat indices of its active terms."""
        out: list[list[int]] = [[] for _ in range(self.d)]
        for p, (_, i) in enumerate(self.terms):
            out[i].append(p)
        return out


def eval_features(model: ModelSpec, U: np.ndarray) -> np.ndarray:
    """Evaluate the feature library at every row of ``U``.

    Raises
    ------
    FeatureEvaluationError
        If any feature is non-finite; the first offending row and feature
        index are reported.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[1] != model.d:
        raise ValueError(f"U must have {model.d} columns, got {U.shape[1]}")
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        theta = model.features(U)
    bad = ~np.isfinite(theta)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise FeatureEvaluationError(int(row), int(col))
    return theta


def rhs(model: ModelSpec, u: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Right-hand side ``Theta(u) W`` at a single state."""
    u = np.asarray(u, dtype=float).reshape(1, model.d)
    return (eval_features(model, u) @ np.asarray(W, dtype=float))[0]


def state_jacobian(model: ModelSpec, U: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``(n, d, d)`` Jacobians of ``Theta(u) W``; entry ``[m, i, k]`` is d f_i / d u_k."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        jac = model.feature_state_jacobian(U, np.asarray(W, dtype=float))
    bad = ~np.isfinite(jac)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise FeatureEvaluationError(row, -1, f"non-finite Jacobian at row {row}")
    return jac


# ---------------------------------------------------------------------------
# feature libraries


def _logistic_features(U):
    u = U[:, 0]
    return np.column_stack([u, u**2])


def _logistic_jac(U, W):
    u = U[:, 0]
    # d/du [w1 u + w2 u^2]
    return (W[0, 0] + 2.0 * W[1, 0] * u)[:, None, None]


def _lv_features(U):
    u1, u2 = U[:, 0], U[:, 1]
    return np.column_stack([u1, u2, u1 * u2])


def _lv_jac(U, W):
    u1, u2 = U[:, 0], U[:, 1]
    # dTheta/du: rows features, cols states
    dth = np.zeros((U.shape[0], 3, 2))
    dth[:, 0, 0] = 1.0
    dth[:, 1, 1] = 1.0
    dth[:, 2, 0] = u2
    dth[:, 2, 1] = u1
    return np.einsum("mjk,ji->mik", dth, W)


def _fhn_features(U):
    u1, u2 = U[:, 0], U[:, 1]
    return np.column_stack([u1, u1**3, u2, np.ones_like(u1)])


def _fhn_jac(U, W):
    u1 = U[:, 0]
    dth = np.zeros((U.shape[0], 4, 2))
    dth[:, 0, 0] = 1.0
    dth[:, 1, 0] = 3.0 * u1**2
    dth[:, 2, 1] = 1.0
    return np.einsum("mjk,ji->mik", dth, W)


def _hmr_features(U):
    u1, u2, u3 = U[:, 0], U[:, 1], U[:, 2]
    return np.column_stack([u2, u1**3, u1**2, u3, np.ones_like(u1), u1])


def _hmr_jac(U, W):
    u1 = U[:, 0]
    dth = np.zeros((U.shape[0], 6, 3))
    dth[:, 0, 1] = 1.0
    dth[:, 1, 0] = 3.0 * u1**2
    dth[:, 2, 0] = 2.0 * u1
    dth[:, 3, 2] = 1.0
    dth[:, 5, 0] = 1.0
    return np.einsum("mjk,ji->mik", dth, W)


PTB_MICHAELIS = 0.3


def _ptb_features(U):
    u1, u3, u4, u5 = U[:, 0], U[:, 2], U[:, 3], U[:, 4]
    return np.column_stack([u1, u1 * u3, u4, u5 / (PTB_MICHAELIS + u5)])


def _ptb_jac(U, W):
    u1, u3, u5 = U[:, 0], U[:, 2], U[:, 4]
    dth = np.zeros((U.shape[0], 4, 5))
    dth[:, 0, 0] = 1.0
    dth[:, 1, 0] = u3
    dth[:, 1, 2] = u1
    dth[:, 2, 3] = 1.0
    dth[:, 3, 4] = PTB_MICHAELIS / (PTB_MICHAELIS + u5) ** 2
    return np.einsum("mjk,ji->mik", dth, W)


def _build(name, d, feature_names, terms, values, **kwargs) -> ModelSpec:
    J = len(feature_names)
    W = np.zeros((J, d))
    for (j, i), v in zip(terms, values):
        W[j, i] = v
    return ModelSpec(
        name=name,
        d=d,
        J=J,
        feature_names=tuple(feature_names),
        terms=tuple(terms),
        true_params=W,
        **kwargs,
    )


def _make_benchmarks() -> dict[str, ModelSpec]:
    logistic = _build(
        "logistic",
        1,
        ["u1", "u1^2"],
        [(0, 0), (1, 0)],
        [1.0, -1.0],
        features=_logistic_features,
        feature_state_jacobian=_logistic_jac,
        u0=[0.01],
        default_T=10.0,
        default_points=103,
        nonneg_states=True,
    )
    lotka_volterra = _build(
        "lotka_volterra",
        2,
        ["u1", "u2", "u1*u2"],
        [(0, 0), (2, 0), (1, 1), (2, 1)],
        [3.0, -1.0, -6.0, 1.0],
        features=_lv_features,
        feature_state_jacobian=_lv_jac,
        u0=[1.0, 1.0],
        default_T=5.0,
        default_points=205,
        nonneg_states=True,
        aliases=("lv",),
    )
    fitzhugh_nagumo = _build(
        "fitzhugh_nagumo",
        2,
        ["u1", "u1^3", "u2", "1"],
        [(0, 0), (1, 0), (2, 0), (0, 1), (3, 1), (2, 1)],
        [3.0, -3.0, 3.0, -1.0 / 3.0, 17.0 / 150.0, 1.0 / 15.0],
        features=_fhn_features,
        feature_state_jacobian=_fhn_jac,
        u0=[0.0, 0.1],
        default_T=25.0,
        default_points=205,
        aliases=("fhn",),
    )
    hindmarsh_rose = _build(
        "hindmarsh_rose",
        3,
        ["u2", "u1^3", "u1^2", "u3", "1", "u1"],
        [
            (0, 0), (1, 0), (2, 0), (3, 0),
            (4, 1), (2, 1), (0, 1),
            (5, 2), (4, 2), (3, 2),
        ],
        [10.0, -10.0, 30.0, -10.0, 10.0, -50.0, -10.0, 0.04, 0.0319, -0.01],
        features=_hmr_features,
        feature_state_jacobian=_hmr_jac,
        u0=[-1.31, -7.6, -0.2],
        default_T=8.0,
        default_points=205,
        aliases=("hmr",),
    )
    ptb = _build(
        "ptb",
        5,
        ["u1", "u1*u3", "u4", "u5/(0.3+u5)"],
        [
            (0, 0), (1, 0), (2, 0),
            (0, 1),
            (1, 2), (2, 2), (3, 2),
            (1, 3), (2, 3),
            (2, 4), (3, 4),
        ],
        [-0.07, -0.6, 0.35, 0.07, -0.6, 0.05, 0.17, 0.6, -0.35, 0.3, -0.017],
        features=_ptb_features,
        feature_state_jacobian=_ptb_jac,
        u0=[1.0, 0.0, 1.0, 0.0, 1.0],
        default_T=25.0,
        default_points=205,
        nonneg_states=True,
    )
    return {
        m.name: m
        for m in (logistic, lotka_volterra, fitzhugh_nagumo, hindmarsh_rose, ptb)
    }


BENCHMARKS: dict[str, ModelSpec] = _make_benchmarks()
_ALIASES = {a: m.name for m in BENCHMARKS.values() for a in m.aliases}


def get_benchmark(name: str) -> ModelSpec:
    """Look up a benchmark model by name (short aliases such as ``lv`` accepted)."""
    key = name.strip().lower().replace("-", "_")
    key = _ALIASES.get(key, key)
    try:
        return BENCHMARKS[key]
    except KeyError:
        valid = ", ".join(BENCHMARKS)
        raise UnknownModelError(f"unknown model {name!r}; valid models: {valid}") from None
