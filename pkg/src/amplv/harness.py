"""Config-driven Monte Carlo runner and its command line.

Each experiment is a grid of ``(n, seed)`` cells. Cells are independent and
may run in a process pool (worker count from ``AMPLV_WORKERS``); rows are
collected in one place and written sorted by ``(n, seed)``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from . import __version__
from .amp import AmpConfig, amp_run, empirical_vs_se
from .kernels import ACTIVATIONS
from .lv_system import (LvModel, equilibrium_lcp, predicted_mixture, solve_fixed_point,
                        survival_fraction)
from .measures import EmpiricalMeasure, d2_to_mixture, smoothed_indicator
from .rng_matrix import (EntryDistribution, PowerIterationError, gaussian_norm_bound, make_profile,
                         sample_symmetric, spectral_norm)
from .state_evolution import NumericalFailure, lv_se_limit, run_se

log = logging.getLogger(__name__)

WORKERS_ENV = "AMPLV_WORKERS"
EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2
KINDS = ("amp_vs_se", "lv_equilibrium", "norm_bound", "fixed_point_study")
SURVIVAL_THRESHOLD = 1e-6

_VECTOR_SPEC = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["constant", "uniform"]},
        "value": {"type": "number"},
        "low": {"type": "number"},
        "high": {"type": "number"},
        "seed": {"type": "integer", "minimum": 0},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": list(KINDS)},
        "n": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "profile": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["banded", "block", "random-support", "wigner"]},
                "scale": {"type": "number", "exclusiveMinimum": 0},
                "K": {"oneOf": [{"type": "integer", "minimum": 1}, {"enum": ["n", "log2"]}]},
            },
            "required": ["kind", "scale"],
            "additionalProperties": False,
        },
        "distribution": {"enum": ["gaussian", "rademacher", "uniform-centered"]},
        "r": _VECTOR_SPEC,
        "eta": _VECTOR_SPEC,
        "x0": {"type": "number"},
        "activation": {"type": "string"},
        "t_max": {"type": "integer", "minimum": 1, "maximum": 30},
        "onsager_mode": {"enum": ["se_expected", "empirical_deriv", "hadamard_sq", "none"]},
        "compare_uncorrected": {"type": "boolean"},
        "indicator_width": {"type": "number", "exclusiveMinimum": 0},
        "mixture_seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "eps": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
        "tolerances": {
            "type": "object",
            "additionalProperties": {"type": "number", "exclusiveMinimum": 0},
        },
        "omega": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
        "output_dir": {"type": "string", "minLength": 1},
    },
    "required": ["kind", "n", "seeds", "profile", "output_dir"],
    "additionalProperties": False,
}

DEFAULT_TOLERANCES = {"fixed_point": 1e-12, "lcp": 1e-10, "norm": 1e-9, "se_limit": 1e-12}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    n: list
    seeds: list
    profile: dict
    output_dir: str
    distribution: str = "gaussian"
    r: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})
    eta: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})
    x0: float = 0.0
    activation: str = "relu_shift"
    t_max: int = 5
    onsager_mode: str = "se_expected"
    compare_uncorrected: bool = False
    indicator_width: float = 0.5
    mixture_seeds: list = field(default_factory=lambda: [0])
    eps: float = 0.1
    tolerances: dict = field(default_factory=dict)
    omega: float = 1.0

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        validate_dict(raw)
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def tol(self, key: str) -> float:
        return float(self.tolerances.get(key, DEFAULT_TOLERANCES[key]))


def validate_dict(raw: Any) -> None:
    """Raise :class:`ConfigError` listing every offending field."""
    errs = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(raw), key=lambda e: list(e.path))
    if errs:
        lines = [f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errs]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))
    if raw["kind"] == "amp_vs_se" and raw.get("activation", "relu_shift") not in ACTIVATIONS:
        raise ConfigError(f"activation: unknown activation {raw['activation']!r}")
    for key in ("r", "eta"):
        spec = raw.get(key)
        if spec and spec["kind"] == "uniform" and not {"low", "high"} <= spec.keys():
            raise ConfigError(f"{key}: uniform needs low and high")
        if spec and spec["kind"] == "constant" and "value" not in spec:
            raise ConfigError(f"{key}: constant needs value")


def _vector(spec: dict, n: int) -> np.ndarray:
    if spec["kind"] == "constant":
        return np.full(n, float(spec["value"]))
    rng = np.random.default_rng(spec.get("seed", 0))
    return rng.uniform(spec["low"], spec["high"], n)


def _K(profile: dict, n: int) -> int:
    K = profile.get("K", "n")
    if K == "n":
        return n
    if K == "log2":
        return min(n, math.ceil(math.log(n) ** 2))
    return int(K)


@lru_cache(maxsize=8)
def _profile(kind: str, n: int, K: int, scale: float, seed: int = 0):
    return make_profile(kind, n, K, scale, seed=seed)


def _base_profile(cfg: ExperimentConfig, n: int, seed: int = 0):
    p = cfg.profile
    return _profile(p["kind"], n, _K(p, n), float(p["scale"]), seed)


@lru_cache(maxsize=4)
def _se_for(cfg_json: str, n: int):
    cfg = ExperimentConfig(**json.loads(cfg_json))
    S = _base_profile(cfg, n)
    eta = _vector(cfg.eta, n)
    return S, eta, run_se(S, ACTIVATIONS[cfg.activation](), cfg.x0, eta, cfg.t_max)


def _cell_amp(cfg: ExperimentConfig, n: int, seed: int) -> dict:
    S, eta, se = _se_for(json.dumps(cfg.to_dict(), sort_keys=True), n)
    h = ACTIVATIONS[cfg.activation]()
    W = sample_symmetric(S, EntryDistribution(cfg.distribution), seed)
    ind = smoothed_indicator(cfg.indicator_width)
    phis = {"x2": lambda e, x: x**2, "relu": lambda e, x: np.maximum(x, 0.0),
            "ind": lambda e, x: ind(x + e)}
    row: dict = {}
    modes = [cfg.onsager_mode] + (["none"] if cfg.compare_uncorrected else [])
    for mode in modes:
        tr = amp_run(W, S, AmpConfig(h, eta, np.full(n, cfg.x0), cfg.t_max, mode), se, check_norm=(mode == modes[0]))
        if mode == modes[0]:
            row["flagged"] = int(tr.flagged)
            row["w_norm"] = tr.norm
            for name, phi in phis.items():
                for t in range(1, cfg.t_max + 1):
                    row[f"gap_{name}_t{t}"] = empirical_vs_se(tr, se, phi, t).gap
        else:
            for t in range(1, cfg.t_max + 1):
                row[f"gap_x2_uncorrected_t{t}"] = empirical_vs_se(tr, se, phis["x2"], t).gap
    return row


def _lv_model(cfg: ExperimentConfig, n: int, seed: int = 0) -> LvModel:
    return LvModel(_base_profile(cfg, n, seed), _vector(cfg.r, n), EntryDistribution(cfg.distribution))


@lru_cache(maxsize=4)
def _lv_prediction(cfg_json: str, n: int):
    cfg = ExperimentConfig(**json.loads(cfg_json))
    model = _lv_model(cfg, n)
    fp = solve_fixed_point(model, tol=cfg.tol("fixed_point"))
    return model, fp, predicted_mixture(model, fp)


def _cell_lv(cfg: ExperimentConfig, n: int, seed: int, extras: Optional[dict] = None) -> dict:
    model, fp, mix = _lv_prediction(json.dumps(cfg.to_dict(), sort_keys=True), n)
    W = sample_symmetric(model.V, model.entry_dist, seed)
    nrm = spectral_norm(W, tol=cfg.tol("norm"), seed=seed).value
    row = {"sigma_norm": nrm, "excluded": int(nrm >= 1.0), "gamma": survival_fraction(model, fp),
           "fp_residual": fp.residual}
    if nrm >= 1.0:
        row.update(d2=float("nan"), d2_q25=float("nan"), d2_q75=float("nan"),
                   survival_emp=float("nan"), comp_residual=float("nan"), sweeps=0)
        return row
    eq = equilibrium_lcp(W, model.r, tol=cfg.tol("lcp"), omega=cfg.omega, check_norm=False)
    band = d2_to_mixture(EmpiricalMeasure(eq.u_star), mix,
                         seeds=[10_000 * (s + 1) + seed for s in cfg.mixture_seeds])
    row.update(d2=band.median, d2_q25=band.low, d2_q75=band.high,
               survival_emp=float(np.mean(eq.u_star > SURVIVAL_THRESHOLD)),
               comp_residual=eq.comp_residual, sweeps=eq.sweeps)
    if extras is not None:
        extras["u_star"] = eq.u_star
        extras["w"] = eq.w
    return row


def _cell_norm(cfg: ExperimentConfig, n: int, seed: int) -> dict:
    S = _base_profile(cfg, n)
    W = sample_symmetric(S, EntryDistribution(cfg.distribution), seed)
    nrm = spectral_norm(W, tol=cfg.tol("norm"), seed=seed).value
    bound = gaussian_norm_bound(S, n, cfg.eps)
    return {"K": S.K, "w_norm": nrm, "bound": bound, "within": int(nrm <= bound)}


def _cell_fixed_point(cfg: ExperimentConfig, n: int, seed: int) -> dict:
    """Random model per seed: fixed point, damping cross-check, SE transformation chain."""
    model = _lv_model(cfg, n, seed)
    tol = cfg.tol("fixed_point")
    fp = solve_fixed_point(model, tol=tol)
    fp_half = solve_fixed_point(model, tol=tol, damping=0.5)
    one = 1.0 + fp.zeta
    S = model.V.scaled(one, one)
    eta = np.sqrt(one) * model.r
    lim = lv_se_limit(S, eta, tol=cfg.tol("se_limit"))
    return {"fp_residual": fp.residual, "fp_iterations": fp.iterations,
            "damping_gap": float(max(np.abs(fp.p - fp_half.p).max(), np.abs(fp.zeta - fp_half.zeta).max())),
            "gamma": survival_fraction(model, fp), "S_norm": S.row_sum_norm,
            "a_vs_p_err": float(np.abs(lim.a - one * fp.p).max()),
            "zeta_err": float(np.abs(lim.zeta - fp.zeta).max())}


_CELLS = {"amp_vs_se": _cell_amp, "lv_equilibrium": _cell_lv, "norm_bound": _cell_norm,
          "fixed_point_study": _cell_fixed_point}


def run_cell(cfg_dict: dict, n: int, seed: int):
    """One grid cell; returns ``(row, extras, seconds)``. Module level for pickling."""
    cfg = ExperimentConfig(**cfg_dict)
    t0 = time.perf_counter()
    extras: dict = {}
    if cfg.kind == "lv_equilibrium":
        row = _cell_lv(cfg, n, seed, extras)
    else:
        row = _CELLS[cfg.kind](cfg, n, seed)
    return {"n": n, "seed": seed, **row}, extras, time.perf_counter() - t0


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, np.floating):
        return repr(float(v))
    return str(v)


def write_rows(path, rows: list) -> None:
    rows = sorted(rows, key=lambda r: (r["n"], r["seed"]))
    cols = []
    for r in rows:
        cols += [c for c in r if c not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])


def summarize(rows: list) -> list:
    """Median and IQR of every numeric column, per ``n``."""
    out = []
    for n in sorted({r["n"] for r in rows}):
        grp = [r for r in rows if r["n"] == n]
        metrics = [c for c in grp[0] if c not in ("n", "seed")]
        for m in metrics:
            vals = np.array([float(r[m]) for r in grp if m in r], dtype=float)
            if m != "excluded":
                keep = np.array([not r.get("excluded", 0) for r in grp if m in r], dtype=bool)
                vals = vals[keep]
            vals = vals[np.isfinite(vals)]
            if vals.size == 0:
                med = q25 = q75 = float("nan")
            else:
                med, q25, q75 = (float(np.quantile(vals, q)) for q in (0.5, 0.25, 0.75))
            out.append({"n": n, "metric": m, "median": med, "q25": q25, "q75": q75,
                        "count": int(vals.size)})
    return out


def write_summary(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "metric", "median", "q25", "q75", "count"])
        for s in summarize(rows):
            w.writerow([_fmt(s[c]) for c in ("n", "metric", "median", "q25", "q75", "count")])


def _write_lv_extras(out: Path, cfg: ExperimentConfig, cells):
    with open(out / "ustar.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "seed", "i", "u_star", "w"])
        for (n, seed), ex in sorted(cells.items()):
            if "u_star" in ex:
                for i, (u, s) in enumerate(zip(ex["u_star"], ex["w"])):
                    w.writerow([n, seed, i, repr(float(u)), repr(float(s))])
    with open(out / "mixture.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "i", "mean", "sd"])
        for n in sorted({k[0] for k in cells}):
            _, _, mix = _lv_prediction(json.dumps(cfg.to_dict(), sort_keys=True), n)
            for i, (m, s) in enumerate(zip(mix.means, mix.sds)):
                w.writerow([n, i, repr(float(m)), repr(float(s))])


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> dict:
    """Run every ``(n, seed)`` cell and write results, summary and manifest.

    On a numerical failure the completed rows are still written and the
    manifest records the error before the exception propagates.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = worker_count() if workers is None else workers
    grid = [(n, s) for n in cfg.n for s in cfg.seeds]
    rows, extras, timings = [], {}, {}
    t_start = time.perf_counter()
    error = None
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futs = [pool.submit(run_cell, cfg.to_dict(), n, s) for n, s in grid]
                for (n, s), f in zip(grid, futs):
                    row, ex, dt = f.result()
                    rows.append(row)
                    extras[(n, s)] = ex
                    timings[f"{n}/{s}"] = dt
        else:
            for n, s in grid:
                row, ex, dt = run_cell(cfg.to_dict(), n, s)
                rows.append(row)
                extras[(n, s)] = ex
                timings[f"{n}/{s}"] = dt
    except Exception as e:
        error = f"{type(e).__name__}: {e}"
        raise
    finally:
        if rows:
            write_rows(out / "results.csv", rows)
            write_summary(out / "summary.csv", rows)
        if cfg.kind == "lv_equilibrium" and extras and error is None:
            _write_lv_extras(out, cfg, extras)
        manifest = {"config": cfg.to_dict(), "version": __version__, "workers": workers,
                    "status": "ok" if error is None and len(rows) == len(grid) else "failed",
                    "error": error, "cells_done": len(rows), "cells_total": len(grid),
                    "wall_clock_s": time.perf_counter() - t_start, "cell_seconds": timings}
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plotdata(results_path, kind: str, metric: Optional[str] = None, bins: int = 40,
             n: Optional[int] = None) -> list:
    """Tidy ``(x, y, group, seed)`` rows from a finished run.

    ``trend``: median of ``metric`` (default d2, or the first gap column) per n.
    ``histogram``: density of positive u* per seed and the mixture density
    from CDF differences on the same bins, plus the mass at zero at x = 0.
    """
    results_path = Path(results_path)
    if kind not in ("trend", "histogram"):
        raise ConfigError(f"unknown plot kind {kind!r}")
    if not results_path.is_file():
        raise FileNotFoundError(f"no results file at {results_path}")
    rows = _read_csv(results_path)
    if kind == "trend":
        if metric is None:
            cols = rows[0].keys() if rows else []
            metric = "d2" if "d2" in cols else next((c for c in cols if c.startswith("gap_")), None)
        if metric is None or (rows and metric not in rows[0]):
            raise ConfigError(f"metric {metric!r} not in results")
        out = []
        for nv in sorted({int(r["n"]) for r in rows}):
            vals = np.array([float(r[metric]) for r in rows if int(r["n"]) == nv
                             and not int(r.get("excluded", "0") or 0)])
            vals = vals[np.isfinite(vals)]
            out.append({"x": nv, "y": float(np.median(vals)) if vals.size else float("nan"),
                        "group": metric, "seed": "all"})
        return out

    from .measures import RectifiedGaussianMixture
    base = results_path.parent
    if not (base / "ustar.csv").is_file():
        raise FileNotFoundError(f"histogram needs ustar.csv next to {results_path}")
    ust = _read_csv(base / "ustar.csv")
    nv = max(int(r["n"]) for r in ust) if n is None else n
    mixrows = [r for r in _read_csv(base / "mixture.csv") if int(r["n"]) == nv]
    mix = RectifiedGaussianMixture([float(r["mean"]) for r in mixrows], [float(r["sd"]) for r in mixrows])
    samples: dict = {}
    for r in ust:
        if int(r["n"]) == nv:
            samples.setdefault(int(r["seed"]), []).append(float(r["u_star"]))
    top = max(max(v) for v in samples.values())
    edges = np.linspace(0.0, top * 1.0001, bins + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    width = edges[1] - edges[0]
    out = []
    for seed in sorted(samples):
        u = np.asarray(samples[seed])
        cnt, _ = np.histogram(u[u > SURVIVAL_THRESHOLD], bins=edges)
        out.append({"x": 0.0, "y": float(np.mean(u <= SURVIVAL_THRESHOLD)), "group": "empirical_atom", "seed": seed})
        out += [{"x": float(x), "y": float(c / (u.size * width)), "group": "empirical", "seed": seed}
                for x, c in zip(mids, cnt)]
    cdf = mix.cdf(edges)
    out.append({"x": 0.0, "y": float(cdf[0]), "group": "mixture_atom", "seed": ""})
    out += [{"x": float(x), "y": float(d / width), "group": "mixture", "seed": ""}
            for x, d in zip(mids, np.diff(cdf))]
    return out


def write_plotdata(rows: list, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["x", "y", "group", "seed"])
    for r in rows:
        w.writerow([_fmt(r["x"]), _fmt(r["y"]), r["group"], r["seed"]])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="amplv", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_plot = sub.add_parser("plotdata", help="tidy CSV for plotting")
    p_plot.add_argument("results")
    p_plot.add_argument("--kind", required=True)
    p_plot.add_argument("--metric")
    p_plot.add_argument("--bins", type=int, default=40)
    p_plot.add_argument("--n", type=int)
    p_plot.add_argument("-o", "--output", help="write here instead of stdout")
    p_val = sub.add_parser("validate", help="check a config against the schema")
    p_val.add_argument("config")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    try:
        if args.cmd == "validate":
            ExperimentConfig.load(args.config)
            print(f"{args.config}: ok")
            return EXIT_OK
        if args.cmd == "run":
            cfg = ExperimentConfig.load(args.config)
            man = run_experiment(cfg)
            print(f"wrote {cfg.output_dir} ({man['cells_done']} cells, {man['wall_clock_s']:.1f} s)")
            return EXIT_OK
        rows = plotdata(args.results, args.kind, args.metric, args.bins, args.n)
        if args.output:
            with open(args.output, "w", newline="") as fh:
                write_plotdata(rows, fh)
        else:
            write_plotdata(rows, sys.stdout)
        return EXIT_OK
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, PowerIterationError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        # bad model parameters that pass the schema (e.g. K > n, |||V||| too large)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
