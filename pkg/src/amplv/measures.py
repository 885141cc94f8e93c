"""One-dimensional empirical measures and rectified-Gaussian mixtures."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .kernels import npdf, relu_m1, relu_m2, relu_prob
from scipy.special import ndtr


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Uniform weights on a sorted sample."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.sort(np.asarray(self.samples, dtype=float).ravel())
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    def mean(self, phi: Optional[Callable] = None) -> float:
        return float(np.mean(self.samples if phi is None else phi(self.samples)))

    def export_csv(self, path) -> None:
        np.savetxt(path, self.samples, fmt="%.17g", header="value", comments="")


@dataclass(frozen=True, eq=False)
class RectifiedGaussianMixture:
    """Uniform mixture of the laws of ``(mean_i + sd_i xi)_+``."""

    means: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.means, dtype=float).ravel()
        s = np.broadcast_to(np.asarray(self.sds, dtype=float), m.shape).copy()
        if np.any(s < 0):
            raise ValueError("component sd must be nonnegative")
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "sds", s)

    def __len__(self):
        return self.means.size

    def mean(self) -> float:
        return float(np.mean(relu_m1(self.means, self.sds)))

    def second_moment(self) -> float:
        return float(np.mean(relu_m2(self.means, self.sds)))

    def survival(self) -> float:
        """P[Y > 0] for the unrectified mixture variable."""
        pos = self.sds > 0
        z = np.divide(self.means, self.sds, out=np.zeros_like(self.means), where=pos)
        return float(np.mean(np.where(pos, ndtr(z), (self.means > 0).astype(float))))

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m, s = self.means[:, None], self.sds[:, None]
        pos = s > 0
        z = np.divide(x[None, :] - m, s, out=np.zeros((m.size, x.size)), where=pos)
        comp = np.where(pos, ndtr(z), (x[None, :] >= m).astype(float))
        return np.where(x >= 0, comp.mean(axis=0), 0.0)

    def expect(self, phi: Callable, order: int = 40, panels: int = 12) -> float:
        """E phi((Y)_+), the atom at 0 exactly and the rest by panelled Gauss-Legendre.

        Each component contributes ``phi(0) P[xi < c] + int_c^inf phi(m + s xi) dPhi``
        with ``c = -m/s``; the integral is cut at ``xi = 12``.
        """
        pos = self.sds > 0
        m, s = self.means[pos], self.sds[pos]
        atoms = np.where(self.means[~pos] > 0, self.means[~pos], 0.0)
        total = float(np.sum(phi(atoms))) if atoms.size else 0.0
        if m.size:
            c = np.clip(-m / s, -12.0, 12.0)
            x, w = np.polynomial.legendre.leggauss(order)
            edges = c[:, None] + (12.0 - c[:, None]) * np.linspace(0, 1, panels + 1)[None, :]
            lo, hi = edges[:, :-1, None], edges[:, 1:, None]
            xi = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
            wt = 0.5 * (hi - lo) * w * npdf(xi)
            y = np.maximum(m[:, None, None] + s[:, None, None] * xi, 0.0)
            body = (phi(y) * wt).sum(axis=(1, 2))
            total += float(np.sum(phi(np.zeros(1))[0] * ndtr(c) + body))
        return total / len(self)

    def export_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "mean", "sd"])
            for i, (m, s) in enumerate(zip(self.means, self.sds)):
                w.writerow([i, repr(float(m)), repr(float(s))])


def wasserstein2(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Exact W2 between equal-size empirical measures (sorted coupling)."""
    if len(a) != len(b):
        raise ValueError(f"sample counts differ: {len(a)} vs {len(b)}")
    d = np.abs(a.samples - b.samples)
    top = d.max(initial=0.0)
    if top == 0.0:
        return 0.0
    # scaled by the largest gap so tiny or huge differences neither underflow nor overflow
    return float(top * np.sqrt(np.mean((d / top) ** 2)))


def sample_mixture(mix: RectifiedGaussianMixture, count: int, seed: int = 0) -> EmpiricalMeasure:
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(mix), size=count)
    xi = rng.standard_normal(count)
    return EmpiricalMeasure(np.maximum(mix.means[idx] + mix.sds[idx] * xi, 0.0))


def pl2_gap(a: EmpiricalMeasure, mix: RectifiedGaussianMixture, phi: Callable,
            exact: Optional[float] = None) -> float:
    """``|mean phi over a - E phi under mix|``; pass ``exact`` to skip quadrature."""
    target = mix.expect(phi) if exact is None else exact
    return abs(a.mean(phi) - target)


def smoothed_indicator(width: float = 0.05) -> Callable:
    """Continuous ramp from 0 at x <= 0 to 1 at x >= width; vanishes at 0."""
    return lambda x: np.clip(np.asarray(x) / width, 0.0, 1.0)


@dataclass(frozen=True)
class D2Band:
    median: float
    low: float
    high: float
    values: np.ndarray = field(repr=False)


def d2_to_mixture(a: EmpiricalMeasure, mix: RectifiedGaussianMixture, seeds=(0,)) -> D2Band:
    """W2 against mixture samples of the same size, over several mixture seeds."""
    vals = np.array([wasserstein2(a, sample_mixture(mix, len(a), s)) for s in seeds])
    return D2Band(float(np.median(vals)), float(np.quantile(vals, 0.25)),
                  float(np.quantile(vals, 0.75)), vals)
