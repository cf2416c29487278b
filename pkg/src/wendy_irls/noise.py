"""Measurement noise: additive normal, censored, truncated and multiplicative log-normal."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .simulate import StateGrid

__all__ = [
    "InvalidModelError",
    "NoiseConfig",
    "NoiseKind",
    "add_noise",
    "calibrate_sigma",
    "empirical_noise_ratio",
    "lognormal_noise_ratio",
    "make_rng",
    "mean_square_noise_ratio",
]


class NoiseKind(enum.IntEnum):
    NORMAL = 0
    CENSORED = 1
    TRUNCATED = 2
    LOGNORMAL = 3

    @classmethod
    def parse(cls, value) -> NoiseKind:
        if isinstance(value, NoiseKind):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower()
        try:
            return _CLI_NAMES[key]
        except KeyError:
            if key.isdigit():
                return cls(int(key))
            raise ValueError(
                f"unknown noise kind {value!r}; expected one of {', '.join(_CLI_NAMES)}"
            ) from None

    @property
    def cli_name(self) -> str:
        return {0: "normal", 1: "acn", 2: "atn", 3: "mln"}[int(self)]


_CLI_NAMES = {
    "normal": NoiseKind.NORMAL,
    "acn": NoiseKind.CENSORED,
    "atn": NoiseKind.TRUNCATED,
    "mln": NoiseKind.LOGNORMAL,
}


class InvalidModelError(ValueError):
    """Noise kind is not applicable to the given states."""


@dataclass(frozen=True)
class NoiseConfig:
    kind: NoiseKind
    gamma: float
    sigmas: np.ndarray
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind.parse(self.kind))
        s = np.array(self.sigmas, dtype=float).reshape(-1)
        if np.any(~np.isfinite(s)) or np.any(s < 0):
            raise ValueError("sigmas must be finite and nonnegative")
        s.setflags(write=False)
        object.__setattr__(self, "sigmas", s)


def make_rng(seed: int, stream: int | None = None) -> np.random.Generator:
    """Generator for ``(seed, stream)``; streams are independent of call order."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    if stream is not None:
        entropy.append(int(stream))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _lognormal_sigma(target: np.ndarray) -> np.ndarray:
    # (e^{s^2} - 1) e^{s^2} = target  ->  x^2 - x - target = 0 with x = e^{s^2}
    x = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * target))
    return np.sqrt(np.maximum(np.log(x), 0.0))


def calibrate_sigma(kind, states, gamma: float, mln_variance: str = "linear") -> np.ndarray:
    """Per-state noise scale from the noise level ``gamma``.

    Additive kinds use ``sigma_i = range_i * gamma``. For log-normal noise the
    scale solves ``(exp(s^2) - 1) exp(s^2) = target`` where ``target`` is
    ``range_i * gamma`` (``mln_variance="linear"``, the default) or its square
    (``"squared"``).
    """
    kind = NoiseKind.parse(kind)
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    U = states.states if isinstance(states, StateGrid) else np.atleast_2d(states)
    r = U.max(axis=0) - U.min(axis=0)
    if kind is NoiseKind.LOGNORMAL:
        if mln_variance == "linear":
            target = r * gamma
        elif mln_variance == "squared":
            target = (r * gamma) ** 2
        else:
            raise ValueError("mln_variance must be 'linear' or 'squared'")
        return _lognormal_sigma(target)
    return r * gamma


def _truncated_normal(rng, sigma, lower):
    """Normal(0, sigma) conditioned on ``z >= lower`` via the inverse CDF."""
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(sigma > 0, lower / sigma, -np.inf)
    # upper-tail form keeps precision when the truncation point sits far out
    q = ndtr(-a)
    v = 1.0 - rng.random(a.shape)  # (0, 1]
    z = -ndtri(v * q)
    z = np.maximum(z, a)
    return np.where(sigma > 0, sigma * z, 0.0)


def add_noise(grid: StateGrid, cfg: NoiseConfig, rng: np.random.Generator | None = None) -> StateGrid:
    """Draw one noisy copy of ``grid`` (independent draws per entry)."""
    u = grid.states
    sig = np.broadcast_to(cfg.sigmas, u.shape)
    if cfg.sigmas.shape != (u.shape[1],):
        raise ValueError("sigmas must have one entry per state")
    rng = make_rng(cfg.seed) if rng is None else rng
    kind = cfg.kind
    if kind is NoiseKind.LOGNORMAL:
        noisy = np.exp(rng.standard_normal(u.shape) * sig) * u
    elif kind in (NoiseKind.NORMAL, NoiseKind.CENSORED):
        noisy = u + rng.standard_normal(u.shape) * sig
        if kind is NoiseKind.CENSORED:
            noisy = np.maximum(noisy, 0.0)
    else:
        if np.any(u < 0):
            raise InvalidModelError("truncated noise requires nonnegative true states")
        noisy = u + _truncated_normal(rng, sig, -u)
        noisy = np.maximum(noisy, 0.0)
    return grid.with_states(noisy)


def _states(g) -> np.ndarray:
    return g.states if isinstance(g, StateGrid) else np.asarray(g, dtype=float)


def empirical_noise_ratio(u_star, U) -> float:
    """``rms(u* - U) / rms(U)`` over all entries."""
    a, b = _states(u_star), _states(U)
    if a.shape != b.shape:
        raise ValueError("grids are not congruent")
    den = np.sqrt(np.mean(b**2))
    if den == 0:
        raise ZeroDivisionError("noise ratio undefined for an all-zero signal")
    return float(np.sqrt(np.mean((a - b) ** 2)) / den)


def mean_square_noise_ratio(u_star, U) -> float:
    """Mean squared deviation over the mean square of the true signal."""
    a, b = _states(u_star), _states(U)
    if a.shape != b.shape:
        raise ValueError("grids are not congruent")
    den = np.mean(a**2)
    if den == 0:
        raise ZeroDivisionError("noise ratio undefined for an all-zero signal")
    return float(np.mean((b - a) ** 2) / den)


def lognormal_noise_ratio(sigma: float) -> float:
    """``E[(eps - 1)^2]`` for ``eps = exp(N(0, sigma^2))``."""
    s2 = float(sigma) ** 2
    return float(np.exp(s2) * np.expm1(s2) + np.expm1(s2 / 2.0) ** 2)
