"""Fixed-step RK4 reference trajectories on a uniform grid."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import ModelSpec

__all__ = [
    "DivergenceError",
    "StateGrid",
    "integrate",
    "integrate_many",
    "read_csv",
    "true_grid",
    "write_csv",
]


class DivergenceError(FloatingPointError):
    """The integrated state became non-finite."""

    def __init__(self, time: float):
        self.time = time
        super().__init__(f"trajectory diverged near t = {time:.6g}")


@dataclass(frozen=True)
class StateGrid:
    """States sampled at ``t_m = t0 + m * dt`` for ``m = 0..M``."""

    t0: float
    dt: float
    states: np.ndarray

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.shape[0] < 2:
            raise ValueError("a grid needs at least two points")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def M(self) -> int:
        return self.states.shape[0] - 1

    @property
    def n_points(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[1]

    @property
    def T(self) -> float:
        return self.t0 + self.M * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.M + 1) * self.dt

    def with_states(self, states: np.ndarray) -> StateGrid:
        return StateGrid(self.t0, self.dt, states)


def _field(model: ModelSpec, W: np.ndarray):
    def f(u):
        return (model.features(u[None, :]) @ W)[0]

    return f


def integrate(
    model: ModelSpec,
    W: np.ndarray,
    u0: np.ndarray,
    t0: float,
    T: float,
    M: int,
    substeps: int = 20,
) -> StateGrid:
    """Classical RK4 with ``substeps`` internal steps per output interval.

    Raises
    ------
    DivergenceError
        If the state stops being finite.
    """
    if not T > t0:
        raise ValueError("T must exceed t0")
    if M < 2:
        raise ValueError("M must be at least 2")
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    W = np.asarray(W, dtype=float)
    u = np.array(u0, dtype=float).reshape(model.d)
    dt = (T - t0) / M
    h = dt / substeps
    f = _field(model, W)
    out = np.empty((M + 1, model.d))
    out[0] = u
    with np.errstate(all="ignore"):
        for m in range(M):
            for s in range(substeps):
                k1 = f(u)
                k2 = f(u + 0.5 * h * k1)
                k3 = f(u + 0.5 * h * k2)
                k4 = f(u + h * k3)
                u = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                if not np.all(np.isfinite(u)):
                    raise DivergenceError(t0 + m * dt + (s + 1) * h)
            out[m + 1] = u
    return StateGrid(t0, dt, out)


def true_grid(
    model: ModelSpec,
    points: int | None = None,
    T: float | None = None,
    substeps: int = 20,
) -> StateGrid:
    """Noise-free trajectory from the model's true parameters."""
    points = model.default_points if points is None else points
    T = model.default_T if T is None else T
    return integrate(model, model.true_params, model.u0, model.t0, T, points - 1, substeps)


def write_csv(grid: StateGrid, path: str | Path) -> None:
    """Dump ``t,u1,...,ud`` rows at full double precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"u{i + 1}" for i in range(grid.d)])
        for t, row in zip(grid.times, grid.states):
            w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in row])


def read_csv(path: str | Path) -> StateGrid:
    """Load a trajectory written by :func:`write_csv`; the grid must be uniform."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    if t.size < 2:
        raise ValueError("trajectory needs at least two rows")
    dt = (t[-1] - t[0]) / (t.size - 1)
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12 * max(1.0, abs(t[-1]))):
        raise ValueError("time grid is not uniform")
    return StateGrid(float(t[0]), float(dt), data[:, 1:])


def integrate_many(
    model: ModelSpec,
    Ws: np.ndarray,
    u0: np.ndarray,
    t0: float,
    T: float,
    M: int,
    substeps: int = 20,
) -> tuple[np.ndarray, np.ndarray]:
    """RK4 for a batch of coefficient matrices sharing one grid and ``u0``.

    Each trajectory agrees with :func:`integrate` up to summation-order
    roundoff.
    Returns ``(states, diverged)`` with ``states`` of shape ``(n, M+1, d)``;
    a trajectory that stops being finite is frozen at NaN from that point on
    and flagged in ``diverged``.
    """
    if not T > t0:
        raise ValueError("T must exceed t0")
    if M < 2:
        raise ValueError("M must be at least 2")
    Ws = np.asarray(Ws, dtype=float)
    if Ws.ndim != 3 or Ws.shape[1:] != (model.J, model.d):
        raise ValueError(f"Ws must have shape (n, {model.J}, {model.d})")
    n = Ws.shape[0]
    dt = (T - t0) / M
    h = dt / substeps

    def f(u):
        return np.einsum("bj,bji->bi", model.features(u), Ws)

    u = np.tile(np.asarray(u0, dtype=float).reshape(1, model.d), (n, 1))
    out = np.empty((n, M + 1, model.d))
    out[:, 0] = u
    diverged = np.zeros(n, dtype=bool)
    with np.errstate(all="ignore"):
        for m in range(M):
            for _ in range(substeps):
                k1 = f(u)
                k2 = f(u + 0.5 * h * k1)
                k3 = f(u + 0.5 * h * k2)
                k4 = f(u + h * k3)
                u = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                bad = ~np.all(np.isfinite(u), axis=1)
                if bad.any():
                    diverged |= bad
                    u[bad] = np.nan
            out[:, m + 1] = u
    return out, diverged
