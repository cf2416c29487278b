"""Monte Carlo experiments: replicated fits, coverage, bias, sweeps and bootstrap clouds.

Each replicate ``r`` draws its noise from the stream ``(base_seed, r)``, so a
level's results do not depend on execution order or on the number of worker
processes. The same streams are reused at every level of a sweep (common
random numbers), which makes level-to-level differences less noisy.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .estimator import (
    EstimatorConfig,
    FitError,
    WendyFit,
    estimate_measurement_variance,
    fit,
    z_value,
)
from .models import ModelSpec, get_benchmark
from .noise import (
    NoiseConfig,
    NoiseKind,
    add_noise,
    calibrate_sigma,
    empirical_noise_ratio,
    make_rng,
)
from .simulate import DivergenceError, StateGrid, integrate, integrate_many, true_grid
from .weakform import ConfigurationError, build_basis

__all__ = [
    "RAW_COLUMNS",
    "RESULTS_COLUMNS",
    "BootstrapCloud",
    "BootstrapError",
    "ExperimentConfig",
    "ExperimentResult",
    "LevelResult",
    "bias_stats",
    "bootstrap_cloud",
    "coverage_indicator",
    "default_noise_schedule",
    "default_resolution_schedule",
    "noise_sweep",
    "recheck_coverage",
    "resolution_sweep",
    "run_experiment",
    "run_level",
    "state_histograms",
    "write_raw_csv",
    "write_results_csv",
]

Z95 = 1.96
MAX_GAMMA = 0.9
COVERAGE_FLOOR = 0.5
DESK_REPLICATES = 200
FULL_REPLICATES = 1000

RESULTS_COLUMNS = [
    "level_kind",
    "level_value",
    "param",
    "coverage",
    "bias",
    "rel_bias",
    "mean_se",
    "emp_sd",
    "n_success",
    "n_fail",
]
RAW_COLUMNS = ["level_kind", "level_value", "replicate", "param", "estimate", "se", "ci_lo", "ci_hi", "covered", "status"]

# noise levels shown in the figures for each (model, noise kind)
_NOISE_SCHEDULES: dict[tuple[str, NoiseKind], tuple[float, ...]] = {
    ("logistic", NoiseKind.NORMAL): (0.05, 0.25, 0.5, 0.7),
    ("logistic", NoiseKind.CENSORED): (0.1, 0.3, 0.5, 0.6),
    ("logistic", NoiseKind.LOGNORMAL): (0.05, 0.3, 0.6, 0.9),
    ("logistic", NoiseKind.TRUNCATED): (0.1, 0.3, 0.6, 0.9),
    ("lotka_volterra", NoiseKind.NORMAL): (0.1, 0.3, 0.5, 0.6),
    ("lotka_volterra", NoiseKind.CENSORED): (0.3, 0.5, 0.7, 0.8),
    ("lotka_volterra", NoiseKind.LOGNORMAL): (0.05, 0.3, 0.6, 0.9),
    ("lotka_volterra", NoiseKind.TRUNCATED): (0.025, 0.05, 0.075, 0.1),
    ("fitzhugh_nagumo", NoiseKind.NORMAL): (0.02, 0.03, 0.05, 0.07),
    ("fitzhugh_nagumo", NoiseKind.LOGNORMAL): (0.002, 0.004, 0.006, 0.008),
    ("hindmarsh_rose", NoiseKind.NORMAL): (0.01, 0.02, 0.03, 0.04),
    ("hindmarsh_rose", NoiseKind.LOGNORMAL): (0.0005, 0.001, 0.002, 0.0025),
    ("ptb", NoiseKind.NORMAL): (0.1, 0.3, 0.6, 0.9),
    ("ptb", NoiseKind.CENSORED): (0.1, 0.3, 0.6, 0.9),
    ("ptb", NoiseKind.LOGNORMAL): (0.1, 0.3, 0.6, 0.9),
    ("ptb", NoiseKind.TRUNCATED): (0.1, 0.3, 0.5, 0.6),
}

# (fixed gamma, grid sizes) for resolution sweeps
_RESOLUTION_SCHEDULES: dict[tuple[str, NoiseKind], tuple[float, tuple[int, ...]]] = {
    ("logistic", NoiseKind.NORMAL): (0.05, (20, 120, 220, 320)),
    ("logistic", NoiseKind.CENSORED): (0.1, (20, 120, 220, 320)),
    ("logistic", NoiseKind.LOGNORMAL): (0.1, (20, 120, 220, 320)),
    ("logistic", NoiseKind.TRUNCATED): (0.1, (20, 120, 220, 320)),
    ("lotka_volterra", NoiseKind.NORMAL): (0.3, (20, 120, 220, 320)),
    ("lotka_volterra", NoiseKind.CENSORED): (0.3, (20, 120, 220, 320)),
    ("lotka_volterra", NoiseKind.LOGNORMAL): (0.05, (20, 120, 220, 320)),
    ("lotka_volterra", NoiseKind.TRUNCATED): (0.05, (20, 120, 220, 320)),
    ("fitzhugh_nagumo", NoiseKind.NORMAL): (0.02, (20, 150, 275, 400)),
    ("fitzhugh_nagumo", NoiseKind.LOGNORMAL): (0.002, (20, 150, 275, 400)),
    ("hindmarsh_rose", NoiseKind.NORMAL): (0.01, (50, 150, 250, 350)),
    ("hindmarsh_rose", NoiseKind.LOGNORMAL): (0.0005, (50, 150, 250, 350)),
    ("ptb", NoiseKind.NORMAL): (0.1, (30, 130, 230, 330)),
    ("ptb", NoiseKind.CENSORED): (0.1, (30, 130, 230, 330)),
    ("ptb", NoiseKind.LOGNORMAL): (0.1, (30, 130, 230, 330)),
    ("ptb", NoiseKind.TRUNCATED): (0.1, (30, 130, 230, 330)),
}


def default_noise_schedule(model: str, kind) -> tuple[float, ...]:
    spec = get_benchmark(model)
    key = (spec.name, NoiseKind.parse(kind))
    if key not in _NOISE_SCHEDULES:
        raise ValueError(f"no default noise schedule for {spec.name}/{key[1].cli_name}; pass --gamma")
    return _NOISE_SCHEDULES[key]


def default_resolution_schedule(model: str, kind) -> tuple[float, tuple[int, ...]]:
    spec = get_benchmark(model)
    key = (spec.name, NoiseKind.parse(kind))
    if key not in _RESOLUTION_SCHEDULES:
        raise ValueError(f"no default resolution schedule for {spec.name}/{key[1].cli_name}; pass --points")
    return _RESOLUTION_SCHEDULES[key]


# ---------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a single level or a sweep over noise or grid size.

    ``gammas`` and ``points`` hold one entry each except along the swept
    axis. ``points=None`` uses the model's default grid.
    """

    model: str
    noise: NoiseKind = NoiseKind.NORMAL
    gammas: tuple[float, ...] = (0.05,)
    points: tuple[int, ...] | None = None
    replicates: int = DESK_REPLICATES
    seed: int = 0
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    mode: str = "single"
    T: float | None = None
    mln_variance: str = "linear"
    keep_raw: bool = True

    def __post_init__(self):
        object.__setattr__(self, "model", get_benchmark(self.model).name)
        object.__setattr__(self, "noise", NoiseKind.parse(self.noise))
        object.__setattr__(self, "gammas", tuple(float(g) for g in np.atleast_1d(self.gammas)))
        if self.points is not None:
            object.__setattr__(self, "points", tuple(int(p) for p in np.atleast_1d(self.points)))
        if self.mode not in ("single", "noise", "resolution"):
            raise ValueError("mode must be 'single', 'noise' or 'resolution'")
        if int(self.replicates) < 1:
            raise ValueError("replicates must be at least 1")
        if not self.gammas:
            raise ValueError("at least one noise level is required")
        if any(not 0.0 <= g <= 1.0 for g in self.gammas):
            raise ValueError("noise levels must lie in [0, 1]")
        if self.mode == "noise":
            if any(b <= a for a, b in zip(self.gammas, self.gammas[1:])):
                raise ValueError("noise levels must be strictly increasing for a noise sweep")
            if self.gammas[-1] > MAX_GAMMA:
                raise ValueError(f"noise sweeps stop at gamma = {MAX_GAMMA}")
        elif len(self.gammas) != 1:
            raise ValueError("only a noise sweep takes several noise levels")
        if self.mode == "resolution":
            if not self.points:
                raise ValueError("a resolution sweep needs a list of grid sizes")
        elif self.points is not None and len(self.points) != 1:
            raise ValueError("only a resolution sweep takes several grid sizes")

    @property
    def spec(self) -> ModelSpec:
        return get_benchmark(self.model)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = self.noise.cli_name
        d["gammas"] = list(self.gammas)
        d["points"] = None if self.points is None else list(self.points)
        return d


@dataclass
class LevelResult:
    """Aggregates for one (gamma, grid size) level.

    Per-replicate arrays have one row per replicate; failed replicates hold
    NaN. Coverage and bias use successful replicates only; failures are
    counted in ``failures`` by reason.
    """

    level_kind: str
    level_value: float
    gamma: float
    points: int
    param_names: list[str]
    w_star: np.ndarray
    estimates: np.ndarray
    ses: np.ndarray
    intervals: np.ndarray
    covered: np.ndarray
    status: list[str]
    noise_ratio: float
    valid: bool = True
    invalid_reason: str | None = None
    coverage: np.ndarray = field(init=False)
    bias: np.ndarray = field(init=False)
    rel_bias: np.ndarray = field(init=False)
    mean_se: np.ndarray = field(init=False)
    emp_sd: np.ndarray = field(init=False)

    def __post_init__(self):
        ok = self.success
        P = self.w_star.size
        if ok.any():
            self.coverage = self.covered[ok].sum(axis=0) / ok.sum()
            self.bias, self.rel_bias = bias_stats(self.w_star, self.estimates[ok])
            self.mean_se = self.ses[ok].mean(axis=0)
            self.emp_sd = self.estimates[ok].std(axis=0, ddof=1) if ok.sum() > 1 else np.zeros(P)
        else:
            nan = np.full(P, np.nan)
            self.coverage, self.bias, self.rel_bias, self.mean_se, self.emp_sd = (nan.copy() for _ in range(5))
        if self.valid and self.n_fail * 2 > self.replicates:
            self.valid = False
            self.invalid_reason = f"{self.n_fail} of {self.replicates} fits failed"

    @property
    def replicates(self) -> int:
        return len(self.status)

    @property
    def success(self) -> np.ndarray:
        return np.array([s == "ok" for s in self.status], dtype=bool)

    @property
    def n_success(self) -> int:
        return int(self.success.sum())

    @property
    def n_fail(self) -> int:
        return self.replicates - self.n_success

    @property
    def failures(self) -> dict[str, int]:
        return dict(sorted(Counter(s for s in self.status if s != "ok").items()))

    def to_dict(self) -> dict:
        return {
            "level_kind": self.level_kind,
            "level_value": self.level_value,
            "gamma": self.gamma,
            "points": self.points,
            "valid": self.valid,
            "invalid_reason": self.invalid_reason,
            "n_success": self.n_success,
            "n_fail": self.n_fail,
            "failures": self.failures,
            "noise_ratio": _json_float(self.noise_ratio),
            "params": [
                {
                    "name": n,
                    "w_star": _json_float(self.w_star[i]),
                    "coverage": _json_float(self.coverage[i]),
                    "bias": _json_float(self.bias[i]),
                    "rel_bias": _json_float(self.rel_bias[i]),
                    "mean_se": _json_float(self.mean_se[i]),
                    "emp_sd": _json_float(self.emp_sd[i]),
                }
                for i, n in enumerate(self.param_names)
            ],
        }


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    levels: list[LevelResult]
    stop_reason: str

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "stop_reason": self.stop_reason,
            "coverage_recheck": all(recheck_coverage(lv) for lv in self.levels),
            "levels": [lv.to_dict() for lv in self.levels],
        }


def _json_float(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# statistics


def coverage_indicator(w_star, w, ses, z: float = Z95) -> np.ndarray:
    """1 where ``w - z*se <= w* <= w + z*se`` (closed interval), else 0."""
    w_star, w, ses = (np.asarray(a, dtype=float) for a in (w_star, w, ses))
    if not (w_star.shape == w.shape == ses.shape):
        raise ValueError("w_star, w and ses must have equal lengths")
    return ((w - z * ses <= w_star) & (w_star <= w + z * ses)).astype(int)


def bias_stats(w_star, estimates) -> tuple[np.ndarray, np.ndarray]:
    """``bias = w* - mean(w_hat)`` and ``bias / w*`` (NaN where ``w* = 0``)."""
    w_star = np.asarray(w_star, dtype=float)
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    if est.shape[0] < 1:
        raise ValueError("need at least one replicate")
    bias = w_star - est.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(w_star != 0, bias / np.where(w_star != 0, w_star, 1.0), np.nan)
    return bias, rel


def recheck_coverage(level: LevelResult) -> bool:
    """Recount coverage from the stored intervals one replicate at a time."""
    if level.n_success == 0:
        return bool(np.all(np.isnan(level.coverage)))
    P = level.w_star.size
    hits = [0] * P
    n = 0
    for r, s in enumerate(level.status):
        if s != "ok":
            continue
        n += 1
        for i in range(P):
            lo, hi = level.intervals[r, i]
            if lo <= level.w_star[i] <= hi:
                hits[i] += 1
    return all(hits[i] / n == level.coverage[i] for i in range(P))


# ---------------------------------------------------------------------------
# replicates


def _coverage_z(cfg: EstimatorConfig) -> float:
    return Z95 if cfg.ci_level == 0.95 else z_value(cfg.ci_level)


def _replicate_chunk(args) -> list[tuple]:
    model_name, truth, noise_cfg, est_cfg, seed, indices = args
    model = get_benchmark(model_name)
    out = []
    for r in indices:
        U = add_noise(truth, noise_cfg, make_rng(seed, r))
        try:
            ratio = empirical_noise_ratio(truth, U)
        except ZeroDivisionError:
            ratio = float("nan")
        try:
            f = fit(model, U, est_cfg)
        except FitError as exc:
            out.append((r, exc.reason, None, None, ratio))
            continue
        if not np.all(np.isfinite(f.ses)):
            out.append((r, "non_finite_se", None, None, ratio))
            continue
        out.append((r, "ok", f.active_params, f.ses, ratio))
    return out


def _level_precheck(model: ModelSpec, truth: StateGrid, est_cfg: EstimatorConfig) -> str | None:
    try:
        build_basis(truth, K=est_cfg.K, radius_mult=est_cfg.radius_mult, eta=est_cfg.eta)
        estimate_measurement_variance(truth.states, est_cfg.filter_order)
    except (ConfigurationError, ValueError) as exc:
        return f"configuration: {exc}"
    return None


def run_level(
    cfg: ExperimentConfig,
    gamma: float | None = None,
    points: int | None = None,
    *,
    level_kind: str = "single",
    threads: int = 1,
) -> LevelResult:
    """Fit ``cfg.replicates`` noisy copies of the true trajectory at one level."""
    model = cfg.spec
    gamma = cfg.gammas[0] if gamma is None else float(gamma)
    if points is None:
        points = model.default_points if cfg.points is None else cfg.points[0]
    level_value = float(points) if level_kind == "resolution" else gamma
    P = model.n_params
    R = int(cfg.replicates)
    w_star = model.true_flat

    def empty(reason_status: str, reason: str) -> LevelResult:
        return LevelResult(
            level_kind, level_value, gamma, int(points), model.param_names, w_star,
            np.full((R, P), np.nan), np.full((R, P), np.nan), np.full((R, P, 2), np.nan),
            np.zeros((R, P), dtype=int), [reason_status] * R, float("nan"),
            valid=False, invalid_reason=reason,
        )

    try:
        truth = true_grid(model, points=int(points), T=cfg.T)
    except (DivergenceError, ValueError) as exc:
        return empty("configuration", f"configuration: {exc}")
    reason = _level_precheck(model, truth, cfg.estimator)
    if reason is not None:
        return empty("configuration", reason)
    sig = np.zeros(model.d) if gamma == 0 else calibrate_sigma(cfg.noise, truth, gamma, cfg.mln_variance)
    noise_cfg = NoiseConfig(cfg.noise, gamma, sig, cfg.seed)
    # surfaces invalid noise/model pairs (e.g. truncation below a negative state) once
    add_noise(truth, noise_cfg, make_rng(cfg.seed, 0))

    chunks = [list(c) for c in np.array_split(np.arange(R), max(1, min(threads, R))) if len(c)]
    jobs = [(model.name, truth, noise_cfg, cfg.estimator, cfg.seed, c) for c in chunks]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(_replicate_chunk, jobs))
    else:
        parts = [_replicate_chunk(j) for j in jobs]
    rows = sorted((row for part in parts for row in part), key=lambda t: t[0])

    est = np.full((R, P), np.nan)
    ses = np.full((R, P), np.nan)
    status = ["ok"] * R
    ratios = np.full(R, np.nan)
    for r, st, w, s, ratio in rows:
        status[r] = st
        ratios[r] = ratio
        if st == "ok":
            est[r], ses[r] = w, s
    z = _coverage_z(cfg.estimator)
    intervals = np.stack([est - z * ses, est + z * ses], axis=-1)
    covered = np.zeros((R, P), dtype=int)
    for r in range(R):
        if status[r] == "ok":
            covered[r] = coverage_indicator(w_star, est[r], ses[r], z)
    finite = np.isfinite(ratios)
    ratio = float(ratios[finite].mean()) if finite.any() else float("nan")
    return LevelResult(
        level_kind, level_value, gamma, int(points), model.param_names, w_star,
        est, ses, intervals, covered, status, ratio,
    )


def noise_sweep(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Increase gamma until some coverage drops below 50% or gamma reaches 0.9."""
    if cfg.mode != "noise":
        cfg = replace(cfg, mode="noise")
    levels: list[LevelResult] = []
    stop = "schedule exhausted"
    for g in cfg.gammas:
        lv = run_level(cfg, gamma=g, level_kind="noise", threads=threads)
        levels.append(lv)
        if not lv.valid:
            stop = "invalid level"
            break
        if np.nanmin(lv.coverage) < COVERAGE_FLOOR:
            stop = "coverage below 0.5"
            break
        if g >= MAX_GAMMA:
            stop = "max level"
            break
    return ExperimentResult(cfg, levels, stop)


def resolution_sweep(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Fixed gamma, one level per grid size."""
    if cfg.mode != "resolution":
        cfg = replace(cfg, mode="resolution")
    levels = [run_level(cfg, points=p, level_kind="resolution", threads=threads) for p in cfg.points]
    return ExperimentResult(cfg, levels, "schedule exhausted")


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    if cfg.mode == "noise":
        return noise_sweep(cfg, threads)
    if cfg.mode == "resolution":
        return resolution_sweep(cfg, threads)
    return ExperimentResult(cfg, [run_level(cfg, threads=threads)], "single level")


# ---------------------------------------------------------------------------
# output


def _fmt(x) -> str:
    x = float(x)
    return repr(x) if math.isfinite(x) else "nan"


def write_results_csv(result: ExperimentResult, path: str | Path) -> None:
    """One row per (level, parameter); see ``RESULTS_COLUMNS``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_COLUMNS)
        for lv in result.levels:
            for i, name in enumerate(lv.param_names):
                w.writerow([
                    lv.level_kind, _fmt(lv.level_value), name, _fmt(lv.coverage[i]), _fmt(lv.bias[i]),
                    _fmt(lv.rel_bias[i]), _fmt(lv.mean_se[i]), _fmt(lv.emp_sd[i]), lv.n_success, lv.n_fail,
                ])


def write_raw_csv(result: ExperimentResult, path: str | Path) -> None:
    """One row per (level, replicate, parameter)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_COLUMNS)
        for lv in result.levels:
            for r, st in enumerate(lv.status):
                for i, name in enumerate(lv.param_names):
                    w.writerow([
                        lv.level_kind, _fmt(lv.level_value), r, name, _fmt(lv.estimates[r, i]),
                        _fmt(lv.ses[r, i]), _fmt(lv.intervals[r, i, 0]), _fmt(lv.intervals[r, i, 1]),
                        int(lv.covered[r, i]), st,
                    ])


# ---------------------------------------------------------------------------
# parametric bootstrap


class BootstrapError(np.linalg.LinAlgError):
    def __init__(self, smallest_eigenvalue: float):
        self.smallest_eigenvalue = smallest_eigenvalue
        super().__init__(f"parameter covariance is not positive semidefinite (smallest eigenvalue {smallest_eigenvalue:.3e})")


@dataclass
class BootstrapCloud:
    times: np.ndarray
    central: np.ndarray
    samples: np.ndarray  # (n, M+1, d)
    params: np.ndarray  # (n, P)
    diverged: np.ndarray  # (n,)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


def _covariance_factor(S: np.ndarray) -> np.ndarray:
    S = 0.5 * (S + S.T)
    if not np.all(np.isfinite(S)):
        raise BootstrapError(float("nan"))
    lam, V = np.linalg.eigh(S)
    scale = max(abs(lam).max(), 1e-300) if lam.size else 1.0
    if lam.size and lam[0] < -1e-10 * scale:
        raise BootstrapError(float(lam[0]))
    return V * np.sqrt(np.clip(lam, 0.0, None))[None, :]


def bootstrap_cloud(
    fit_result: WendyFit,
    model: ModelSpec,
    grid: StateGrid,
    n_samples: int = 100,
    *,
    u0: np.ndarray | None = None,
    seed: int = 0,
    substeps: int = 20,
) -> BootstrapCloud:
    """Trajectories for parameters drawn from ``N(w_hat, S)``.

    Raises
    ------
    BootstrapError
        If ``S`` has a clearly negative eigenvalue.
    DivergenceError
        If the central trajectory itself blows up.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    u0 = model.u0 if u0 is None else np.asarray(u0, dtype=float)
    L = _covariance_factor(np.asarray(fit_result.S, dtype=float))
    rng = make_rng(seed)
    z = rng.standard_normal((n_samples, L.shape[1]))
    w_hat = np.asarray(fit_result.active_params, dtype=float)
    draws = w_hat[None, :] + z @ L.T
    central = integrate(model, model.unflatten(w_hat), u0, grid.t0, grid.T, grid.M, substeps)
    Ws = np.stack([model.unflatten(w) for w in draws])
    samples, diverged = integrate_many(model, Ws, u0, grid.t0, grid.T, grid.M, substeps)
    return BootstrapCloud(grid.times, central.states, samples, draws, diverged)


def default_time_indices(n_points: int, count: int = 8) -> np.ndarray:
    """``count`` evenly spaced interior grid indices."""
    idx = np.linspace(0, n_points - 1, count + 2)[1:-1]
    return np.unique(np.round(idx).astype(int))


def state_histograms(cloud: BootstrapCloud, time_indices=None, bins: int = 30) -> list[dict]:
    """Fixed-width histograms of every state at the selected times.

    Diverged samples are left out and counted in ``n_excluded``.
    """
    n_points = cloud.samples.shape[1]
    idx = default_time_indices(n_points) if time_indices is None else np.asarray(time_indices, dtype=int)
    if np.any(idx < 0) or np.any(idx >= n_points):
        raise IndexError("time index outside the grid")
    out = []
    for m in idx:
        states = []
        for i in range(cloud.samples.shape[2]):
            x = cloud.samples[:, m, i]
            x = x[np.isfinite(x)]
            counts, edges = np.histogram(x, bins=bins)
            states.append({"state": i, "counts": counts, "edges": edges, "n_excluded": int(cloud.n_samples - x.size)})
        out.append({"index": int(m), "time": float(cloud.times[m]), "states": states})
    return out
