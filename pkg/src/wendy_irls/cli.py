"""Command-line front end.

Every command writes its payloads plus one ``manifest.json`` into
``--out-dir``. A manifest (or any JSON file holding the same keys) can be
passed back with ``--config``; flags given on the command line win over the
file, which wins over built-in defaults.

Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .estimator import EstimatorConfig, FitError, fit
from .harness import (
    DESK_REPLICATES,
    FULL_REPLICATES,
    BootstrapError,
    ExperimentConfig,
    ExperimentResult,
    bootstrap_cloud,
    default_noise_schedule,
    default_resolution_schedule,
    run_experiment,
    state_histograms,
    write_raw_csv,
    write_results_csv,
)
from .models import UnknownModelError, get_benchmark
from .noise import (
    InvalidModelError,
    NoiseConfig,
    NoiseKind,
    add_noise,
    calibrate_sigma,
    make_rng,
)
from .simulate import (
    DivergenceError,
    StateGrid,
    integrate,
    read_csv,
    true_grid,
    write_csv,
)
from .svg import cloud_chart, line_chart

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2

COMMANDS = ("simulate", "fit", "experiment", "sweep-noise", "sweep-resolution", "bootstrap")

# keys that may come from --config; values are the built-in defaults
DEFAULTS: dict[str, object] = {
    "model": None,
    "noise": None,
    "gamma": None,
    "points": None,
    "T": None,
    "replicates": None,
    "seed": 0,
    "out_dir": "wendy_out",
    "threads": 1,
    "full": False,
    "K": None,
    "radius_mult": None,
    "eta": 9.0,
    "ci_level": 0.95,
    "mln_variance": "linear",
    "input": None,
    "u0_from_data": False,
    "samples": 100,
    "bins": 30,
    "raw": True,
    "svg": True,
}


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", help="JSON config or manifest; CLI flags override it")
    g.add_argument("--model", help="benchmark name (logistic, lv, fhn, hmr, ptb)")
    g.add_argument("--noise", help="noise kind: normal, acn, atn or mln")
    g.add_argument("--gamma", type=_floats, help="noise level(s), comma separated")
    g.add_argument("--points", type=_ints, help="grid size(s) M+1, comma separated")
    g.add_argument("--T", type=float, help="final time (default: model's)")
    g.add_argument("--replicates", type=int, help=f"Monte Carlo replicates (default {DESK_REPLICATES})")
    g.add_argument("--seed", type=int, help="base RNG seed (default 0)")
    g.add_argument("--out-dir", dest="out_dir", help="output directory (default wendy_out)")
    g.add_argument("--threads", type=int, help="worker processes for replicates")
    g.add_argument("--full", action="store_const", const=True, help=f"{FULL_REPLICATES} replicates per level")
    g.add_argument("--K", type=int, help="number of test functions")
    g.add_argument("--radius-mult", dest="radius_mult", type=int, help="test-function radius in grid steps")
    g.add_argument("--eta", type=float, help="bump sharpness (default 9)")
    g.add_argument("--ci-level", dest="ci_level", type=float, help="confidence level (default 0.95)")
    g.add_argument("--mln-variance", dest="mln_variance", choices=["linear", "squared"], help="log-normal calibration")
    g.add_argument("--no-svg", dest="svg", action="store_const", const=False, help="skip SVG quick-look plots")

    p = argparse.ArgumentParser(prog="wendy-irls", description="Weak-form IRLS parameter estimation and coverage experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    sub.add_parser("simulate", parents=[common], help="write a (noisy) trajectory CSV")
    f = sub.add_parser("fit", parents=[common], help="fit one dataset and write a JSON report")
    f.add_argument("--input", help="trajectory CSV (default: simulate from --model)")
    f.add_argument(
        "--u0-from-data", dest="u0_from_data", action="store_const", const=True,
        help="start fitted curves at the first data row instead of the model's initial condition",
    )
    e = sub.add_parser("experiment", parents=[common], help="Monte Carlo run at one level")
    e.add_argument("--no-raw", dest="raw", action="store_const", const=False, help="skip raw estimates CSV")
    for name in ("sweep-noise", "sweep-resolution"):
        s = sub.add_parser(name, parents=[common], help=f"{name.split('-')[1]} sweep")
        s.add_argument("--no-raw", dest="raw", action="store_const", const=False, help="skip raw estimates CSV")
    b = sub.add_parser("bootstrap", parents=[common], help="parametric bootstrap solution cloud")
    b.add_argument("--input", help="trajectory CSV (default: simulate from --model)")
    b.add_argument(
        "--u0-from-data", dest="u0_from_data", action="store_const", const=True,
        help="start fitted curves at the first data row instead of the model's initial condition",
    )
    b.add_argument("--samples", type=int, help="parameter draws (default 100)")
    b.add_argument("--bins", type=int, help="histogram bins (default 30)")
    return p


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if isinstance(data, dict) and "config" in data and "command" in data:
        data = data["config"]
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return data


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags into one flat settings dict."""
    cfg = dict(DEFAULTS)
    cfg.update(_load_config(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    for key in ("gamma", "points"):
        if cfg[key] is not None and not isinstance(cfg[key], list):
            cfg[key] = [cfg[key]]
    if cfg["model"] is None:
        raise UsageError("--model is required")
    cfg["model"] = get_benchmark(cfg["model"]).name
    if cfg["noise"] is not None:
        try:
            cfg["noise"] = NoiseKind.parse(cfg["noise"]).cli_name
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if cfg["replicates"] is None:
        cfg["replicates"] = FULL_REPLICATES if cfg["full"] else DESK_REPLICATES
    for key, lo in (("replicates", 1), ("threads", 1), ("samples", 1), ("bins", 1)):
        if int(cfg[key]) < lo:
            raise UsageError(f"{key} must be at least {lo}")
    if not 0.0 < float(cfg["ci_level"]) < 1.0:
        raise UsageError("ci_level must lie in (0, 1)")
    return cfg


def _estimator(cfg: dict) -> EstimatorConfig:
    return EstimatorConfig(K=cfg["K"], radius_mult=cfg["radius_mult"], eta=float(cfg["eta"]), ci_level=float(cfg["ci_level"]))


def _single(cfg: dict, key: str):
    vals = cfg[key]
    if vals is None:
        return None
    if len(vals) != 1:
        raise UsageError(f"this command takes a single --{key}")
    return vals[0]


def _dataset(cfg: dict) -> tuple[StateGrid, StateGrid | None]:
    """Data grid (read or simulated) and the noise-free truth when simulated."""
    if cfg.get("input"):
        path = Path(cfg["input"])
        if not path.is_file():
            raise UsageError(f"input file not found: {path}")
        try:
            return read_csv(path), None
        except ValueError as exc:
            raise UsageError(f"cannot read {path}: {exc}") from None
    model = get_benchmark(cfg["model"])
    points = _single(cfg, "points")
    if points is not None and points < 3:
        raise UsageError("--points must be at least 3")
    truth = true_grid(model, points=points, T=cfg["T"])
    gamma = _single(cfg, "gamma")
    if cfg["noise"] is None and gamma is None:
        return truth, truth
    kind = NoiseKind.parse(cfg["noise"] or "normal")
    gamma = 0.05 if gamma is None else gamma
    if not 0.0 <= gamma <= 1.0:
        raise UsageError("--gamma must lie in [0, 1]")
    sig = np.zeros(model.d) if gamma == 0 else calibrate_sigma(kind, truth, gamma, cfg["mln_variance"])
    ncfg = NoiseConfig(kind, gamma, sig, cfg["seed"])
    return add_noise(truth, ncfg, make_rng(cfg["seed"])), truth


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False, allow_nan=False)
        fh.write("\n")


def _write_text(path: Path, text: str) -> None:
    with open(path, "w") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: dict, out: Path) -> list[Path]:
    grid, _ = _dataset(cfg)
    path = out / "trajectory.csv"
    write_csv(grid, path)
    outputs = [path]
    if cfg["svg"]:
        p = out / "trajectory.svg"
        _write_text(p, cloud_chart(grid.times, np.empty((0, grid.n_points, grid.d)), grid.states, title=cfg["model"]))
        outputs.append(p)
    return outputs


def _initial_state(cfg: dict, model, grid: StateGrid) -> np.ndarray:
    if cfg["u0_from_data"]:
        return grid.states[0]
    if grid.t0 != model.t0:
        raise UsageError(f"data start at t = {grid.t0}, not the model's t0; use --u0-from-data")
    return model.u0


def cmd_fit(cfg: dict, out: Path) -> list[Path]:
    grid, truth = _dataset(cfg)
    model = get_benchmark(cfg["model"])
    if grid.d != model.d:
        raise UsageError(f"{cfg['input']} has {grid.d} states; {model.name} needs {model.d}")
    res = fit(model, grid, _estimator(cfg))
    path = out / "fit.json"
    report = res.report(float(cfg["ci_level"]))
    _write_json(path, _finite_or_none(report))
    outputs = [path]
    if cfg["svg"]:
        u0 = _initial_state(cfg, model, grid)
        try:
            central = integrate(model, res.W_hat, u0, grid.t0, grid.T, grid.M).states
        except DivergenceError:
            # a noisy first sample can put the start outside the stable region
            print("warning: fitted trajectory diverged; plotting data only", file=sys.stderr)
            central = np.full(grid.states.shape, np.nan)
        p = out / "fit.svg"
        _write_text(p, cloud_chart(
            grid.times, np.empty((0, grid.n_points, grid.d)), central, data=grid.states,
            truth=None if truth is None else truth.states, title=f"{model.name} fit",
        ))
        outputs.append(p)
    return outputs


def _experiment_config(cfg: dict, mode: str) -> ExperimentConfig:
    kind = cfg["noise"] or "normal"
    gammas, points = cfg["gamma"], cfg["points"]
    if mode == "noise" and gammas is None:
        gammas = list(default_noise_schedule(cfg["model"], kind))
    if mode == "resolution":
        g0, p0 = default_resolution_schedule(cfg["model"], kind) if gammas is None or points is None else (None, None)
        gammas = gammas if gammas is not None else [g0]
        points = points if points is not None else list(p0)
    if mode == "single" and gammas is None:
        gammas = [0.05]
    # record the resolved schedule so the manifest replays it verbatim
    cfg.update(noise=NoiseKind.parse(kind).cli_name, gamma=list(gammas), points=None if points is None else list(points))
    try:
        return ExperimentConfig(
            model=cfg["model"], noise=kind, gammas=tuple(gammas),
            points=None if points is None else tuple(points), replicates=int(cfg["replicates"]),
            seed=int(cfg["seed"]), estimator=_estimator(cfg), mode=mode, T=cfg["T"],
            mln_variance=cfg["mln_variance"], keep_raw=bool(cfg["raw"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write_experiment(result: ExperimentResult, cfg: dict, out: Path, xlabel: str) -> list[Path]:
    outputs = [out / "results.csv", out / "summary.json"]
    write_results_csv(result, outputs[0])
    _write_json(outputs[1], result.to_dict())
    if cfg["raw"]:
        p = out / "raw_estimates.csv"
        write_raw_csv(result, p)
        outputs.append(p)
    if cfg["svg"] and len(result.levels) > 0:
        x = [lv.level_value for lv in result.levels]
        names = result.levels[0].param_names
        series = {n: [lv.coverage[i] for lv in result.levels] for i, n in enumerate(names)}
        p = out / "coverage.svg"
        _write_text(p, line_chart(x, series, xlabel=xlabel, ylabel="coverage", ylim=(0.0, 1.0), hline=0.95,
                                  title=f"{result.config.model} / {result.config.noise.cli_name}"))
        outputs.append(p)
    return outputs


def cmd_experiment(cfg: dict, out: Path) -> list[Path]:
    ecfg = _experiment_config(cfg, "single")
    return _write_experiment(run_experiment(ecfg, int(cfg["threads"])), cfg, out, "noise level")


def cmd_sweep_noise(cfg: dict, out: Path) -> list[Path]:
    ecfg = _experiment_config(cfg, "noise")
    return _write_experiment(run_experiment(ecfg, int(cfg["threads"])), cfg, out, "noise level")


def cmd_sweep_resolution(cfg: dict, out: Path) -> list[Path]:
    ecfg = _experiment_config(cfg, "resolution")
    return _write_experiment(run_experiment(ecfg, int(cfg["threads"])), cfg, out, "data points")


def cmd_bootstrap(cfg: dict, out: Path) -> list[Path]:
    grid, truth = _dataset(cfg)
    model = get_benchmark(cfg["model"])
    res = fit(model, grid, _estimator(cfg))
    u0 = _initial_state(cfg, model, grid)
    cloud = bootstrap_cloud(res, model, grid, int(cfg["samples"]), u0=u0, seed=int(cfg["seed"]))
    hist = state_histograms(cloud, bins=int(cfg["bins"]))
    outputs = [out / "cloud.csv", out / "histograms.csv", out / "bootstrap.json"]
    with open(outputs[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "t"] + [f"u{i + 1}" for i in range(model.d)])
        for t, row in zip(cloud.times, cloud.central):
            w.writerow(["central", repr(float(t))] + [repr(float(x)) for x in row])
        for s in range(cloud.n_samples):
            for t, row in zip(cloud.times, cloud.samples[s]):
                w.writerow([s, repr(float(t))] + [repr(float(x)) for x in row])
    with open(outputs[1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "t", "state", "bin", "lo", "hi", "count"])
        for h in hist:
            for st in h["states"]:
                for k, c in enumerate(st["counts"]):
                    w.writerow([h["index"], repr(h["time"]), f"u{st['state'] + 1}", k,
                                repr(float(st["edges"][k])), repr(float(st["edges"][k + 1])), int(c)])
    _write_json(outputs[2], _finite_or_none({
        "fit": res.report(float(cfg["ci_level"])),
        "n_samples": cloud.n_samples,
        "n_diverged": int(cloud.diverged.sum()),
        "diverged": [int(i) for i in np.flatnonzero(cloud.diverged)],
        "params": cloud.params.tolist(),
    }))
    if cfg["svg"]:
        p = out / "bootstrap.svg"
        _write_text(p, cloud_chart(cloud.times, cloud.samples, cloud.central, data=grid.states,
                                   truth=None if truth is None else truth.states,
                                   title=f"{model.name}: {cloud.n_samples} bootstrap curves"))
        outputs.append(p)
    return outputs


def _finite_or_none(obj):
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite_or_none(v) for v in obj]
    return obj


_HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "experiment": cmd_experiment,
    "sweep-noise": cmd_sweep_noise,
    "sweep-resolution": cmd_sweep_resolution,
    "bootstrap": cmd_bootstrap,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        cfg = resolve(args)
        out = Path(cfg["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        outputs = _HANDLERS[args.command](cfg, out)
    except UnknownModelError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, InvalidModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FitError as exc:
        print(json.dumps({"error": exc.reason, "detail": exc.detail}), file=sys.stderr)
        return EXIT_NUMERICAL
    except (DivergenceError, BootstrapError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}), file=sys.stderr)
        return EXIT_NUMERICAL
    manifest = {
        "command": args.command,
        "config": cfg,
        "version": __version__,
        "seed": cfg["seed"],
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": [str(p) for p in outputs],
    }
    _write_json(out / "manifest.json", manifest)
    for p in outputs:
        print(p)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
