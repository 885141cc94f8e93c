"""Symmetric AMP iteration with Onsager correction, and its comparison with
state evolution."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .kernels import ActivationFamily, gauss_hermite
from .measures import EmpiricalMeasure, wasserstein2
from .rng_matrix import SampledMatrix, VarianceProfile, spectral_norm
from .state_evolution import NumericalFailure, SeState

log = logging.getLogger(__name__)

ONSAGER_MODES = ("se_expected", "empirical_deriv", "hadamard_sq", "none")
C_W = 2.0


@dataclass(frozen=True, eq=False)
class AmpConfig:
    activation: ActivationFamily
    eta: np.ndarray
    x0: np.ndarray
    t_max: int = 5
    onsager_mode: str = "se_expected"

    def __post_init__(self):
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if self.onsager_mode not in ONSAGER_MODES:
            raise ValueError(f"unknown onsager mode {self.onsager_mode!r}")
        for name in ("eta", "x0"):
            v = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True, eq=False)
class AmpTrajectory:
    iterates: list = field(repr=False)  # x^1 .. x^t_max
    residuals: np.ndarray
    eta: np.ndarray = field(repr=False)
    x0: np.ndarray = field(repr=False)
    flagged: bool = False
    norm: float = float("nan")
    seed: int = 0
    matrix_id: str = ""
    config_id: str = ""

    def x(self, t: int) -> np.ndarray:
        """Iterate ``x^t`` (``t = 0`` is the initial vector)."""
        return self.x0 if t == 0 else self.iterates[t - 1]

    @property
    def t_max(self) -> int:
        return len(self.iterates)


def amp_run(W: SampledMatrix, S: VarianceProfile, cfg: AmpConfig, se: Optional[SeState] = None,
            check_norm: bool = False) -> AmpTrajectory:
    """Run ``x^{t+1} = W h(x^t) - diag(b^t) h(x^{t-1})`` for ``t < t_max``.

    ``b^t`` is ``S E dh(Z^t)`` (se_expected), ``S dh(x^t)`` (empirical_deriv),
    ``W^2 dh(x^t)`` (hadamard_sq, Hadamard square) or zero (none). There is
    no correction at ``t = 0``. ``residuals[t-1]`` is the gap between the
    empirical and predicted mean of ``(x^t)^2`` when ``se`` is given.
    """
    h = cfg.activation
    n = W.n
    eta = np.broadcast_to(np.asarray(cfg.eta, dtype=float), (n,))
    x0 = np.broadcast_to(np.asarray(cfg.x0, dtype=float), (n,)).copy()
    if cfg.onsager_mode == "se_expected":
        if se is None or se.t < cfg.t_max - 1:
            raise ValueError("se_expected mode needs a state evolution of depth t_max - 1")
    W2 = W.hadamard_sq() if cfg.onsager_mode == "hadamard_sq" else None

    flagged, nrm = False, float("nan")
    if check_norm:
        nrm = spectral_norm(W, tol=1e-6).value
        flagged = nrm > C_W

    iterates = []
    h_prev = None
    x = x0
    for t in range(cfg.t_max):
        hx = h.eval(x, eta, t)
        nxt = W @ hx
        if t > 0 and cfg.onsager_mode != "none":
            if cfg.onsager_mode == "se_expected":
                b = S @ se.onsager_expect(t)
            elif cfg.onsager_mode == "empirical_deriv":
                b = S @ h.deriv(x, eta, t)
            else:
                b = W2 @ h.deriv(x, eta, t)
            nxt = nxt - b * h_prev
        if not np.all(np.isfinite(nxt)):
            raise NumericalFailure(f"non-finite AMP iterate at step {t + 1}")
        iterates.append(nxt)
        h_prev, x = hx, nxt

    res = np.full(cfg.t_max, np.nan)
    if se is not None:
        for t in range(1, min(cfg.t_max, se.t) + 1):
            res[t - 1] = abs(np.mean(iterates[t - 1] ** 2) - np.mean(se.diag(t)))
    return AmpTrajectory(iterates, res, eta.copy(), x0, flagged, nrm, W.seed, W.profile_id,
                         f"{h.name}-{cfg.onsager_mode}-T{cfg.t_max}")


@dataclass(frozen=True)
class Comparison:
    empirical: float
    predicted: float
    gap: float
    stderr: float = 0.0


def empirical_vs_se(traj: AmpTrajectory, se: SeState, phi: Callable, times: Sequence[int] | int,
                    beta=None, mc_draws: int = 100_000, seed: int = 0, order: int = 80,
                    beta_bound: float = 1e6) -> Comparison:
    """Weighted test-function average over AMP particles vs its Gaussian prediction.

    ``phi(eta, x_1, ..., x_k)`` is evaluated at the iterates listed in
    ``times``. The prediction uses Gauss-Hermite (one or two times) or Monte
    Carlo over the mixture of ``N(0, R_i)`` (three or more), with the
    standard error reported.
    """
    times = (times,) if np.isscalar(times) else tuple(times)
    n = traj.eta.shape[0]
    beta = np.ones(n) if beta is None else np.broadcast_to(np.asarray(beta, dtype=float), (n,))
    if not np.all(np.abs(beta) <= beta_bound):
        raise ValueError("weights must be uniformly bounded")
    eta = traj.eta
    emp = float(np.mean(beta * phi(eta, *(traj.x(t) for t in times))))

    L = se.cov_factor(times)  # (n, k, k)
    k = len(times)
    stderr = 0.0
    if k <= 2:
        rule = gauss_hermite(order)
        if k == 1:
            g = rule.nodes[None, :, None]  # (1, m, 1)
            w = rule.weights
        else:
            g1, g2 = np.meshgrid(rule.nodes, rule.nodes, indexing="ij")
            g = np.stack([g1.ravel(), g2.ravel()], axis=-1)[None]
            w = np.outer(rule.weights, rule.weights).ravel()
        z = np.einsum("ikl,iml->imk", L, np.broadcast_to(g, (n,) + g.shape[1:]))
        vals = phi(eta[:, None], *(z[..., j] for j in range(k)))
        pred = float(np.mean(beta * (vals @ w)))
    else:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, n, size=mc_draws)
        z = np.einsum("ikl,il->ik", L[idx], rng.standard_normal((mc_draws, k)))
        vals = beta[idx] * phi(eta[idx], *(z[:, j] for j in range(k)))
        pred = float(vals.mean())
        stderr = float(vals.std(ddof=1) / np.sqrt(mc_draws))
    return Comparison(emp, pred, abs(emp - pred), stderr)


def sample_se_marginal(se: SeState, t: int, count: int, seed: int = 0) -> np.ndarray:
    """Draws from the mixture of ``N(0, R_i(t,t))`` with uniform ``i``."""
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, se.n, size=count)
    return np.sqrt(se.diag(t)[idx]) * rng.standard_normal(count)


def se_marginal_quantiles(se: SeState, t: int, levels: np.ndarray, grid: int = 4001) -> np.ndarray:
    """Quantiles of the mixture of ``N(0, R_i(t,t))`` by inverting its CDF on a grid."""
    sd = np.sqrt(se.diag(t))
    top = 8.5 * sd.max()
    x = np.linspace(-top, top, grid)
    cdf = ndtr(x[None, :] / np.where(sd > 0, sd, np.inf)[:, None])
    cdf = np.where((sd == 0)[:, None], (x >= 0)[None, :].astype(float), cdf).mean(axis=0)
    return np.interp(levels, cdf, x)


def wasserstein_check(traj: AmpTrajectory, se: SeState, t: int = 1, seed: int = 0,
                      reference: str = "sample") -> float:
    """W2 between the iterate ``x^t`` and its SE mixture.

    ``reference="sample"`` draws a same-size mixture sample (noise floor of
    order ``n^{-1/2}`` from both sides); ``"quantile"`` couples the sorted
    iterate with the mixture quantiles at levels ``(k - 1/2)/n``.
    """
    if not 1 <= t <= min(traj.t_max, se.t):
        raise ValueError("t outside the computed range")
    emp = EmpiricalMeasure(traj.x(t))
    if reference == "sample":
        ref = EmpiricalMeasure(sample_se_marginal(se, t, len(emp), seed))
    elif reference == "quantile":
        n = len(emp)
        ref = EmpiricalMeasure(se_marginal_quantiles(se, t, (np.arange(n) + 0.5) / n))
    else:
        raise ValueError(f"unknown reference {reference!r}")
    return wasserstein2(emp, ref)


def export_summary_csv(path, rows: Sequence[dict], append: bool = False) -> None:
    """Rows with keys ``seed, t, moment1, moment2, se_moment2, gap, flagged``."""
    cols = ["seed", "t", "moment1", "moment2", "se_moment2", "gap", "flagged"]
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        if not append:
            w.writeheader()
        for r in rows:
            w.writerow({c: r[c] for c in cols})


def summary_rows(traj: AmpTrajectory, se: SeState) -> list:
    out = []
    for t in range(1, min(traj.t_max, se.t) + 1):
        x = traj.x(t)
        m2 = float(np.mean(x**2))
        sm2 = float(np.mean(se.diag(t)))
        out.append(dict(seed=traj.seed, t=t, moment1=float(np.mean(x)), moment2=m2,
                        se_moment2=sm2, gap=abs(m2 - sm2), flagged=traj.flagged))
    return out
