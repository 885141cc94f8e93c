"""Gaussian expectations of activation functions.

All rectified moments are taken with respect to ``mean + sd * xi`` with
``xi ~ N(0, 1)``. Every function broadcasts over numpy arrays; ``sd = 0`` is
treated as a point mass.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import ndtr, owens_t

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def npdf(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


@dataclass(frozen=True)
class GaussHermiteRule:
    """Nodes and weights with ``E f(xi) ~= sum(weights * f(nodes))``."""

    order: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def expect(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


@lru_cache(maxsize=None)
def gauss_hermite(order: int = 100) -> GaussHermiteRule:
    """Probabilists' Gauss-Hermite rule, normalized to the standard normal."""
    if order < 1:
        raise ValueError("order must be positive")
    x, w = hermegauss(order)
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return GaussHermiteRule(order, x, w)


def _split(mean, sd):
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if np.any(sd < 0):
        raise ValueError("sd must be nonnegative")
    pos = sd > 0
    z = np.divide(mean, sd, out=np.zeros(np.broadcast(mean, sd).shape), where=pos)
    return mean, sd, pos, z


def _ret(x):
    return x.item() if np.ndim(x) == 0 else x


def relu_prob(mean, sd):
    """P[mean + sd*xi >= 0]."""
    mean, sd, pos, z = _split(mean, sd)
    return _ret(np.where(pos, ndtr(z), (mean >= 0).astype(float)))


def relu_m1(mean, sd):
    """E (mean + sd*xi)_+."""
    mean, sd, pos, z = _split(mean, sd)
    val = mean * ndtr(z) + sd * npdf(z)
    return _ret(np.where(pos, val, np.maximum(mean, 0.0)))


def relu_m2(mean, sd):
    """E (mean + sd*xi)_+^2."""
    mean, sd, pos, z = _split(mean, sd)
    val = (mean**2 + sd**2) * ndtr(z) + mean * sd * npdf(z)
    return _ret(np.where(pos, val, np.maximum(mean, 0.0) ** 2))


def bvn_cdf(h, k, q):
    """P[G1 <= h, G2 <= k] for standard normals with correlation ``q``.

    Owen's T representation; valid for |q| < 1.
    """
    h, k, q = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (h, k, q)))
    s = np.sqrt((1.0 - q) * (1.0 + q))
    # owens_t has a removable singularity at zero
    h = np.where(h == 0.0, 1e-150, h)
    k = np.where(k == 0.0, 1e-150, k)
    a_h = (k - q * h) / (h * s)
    a_k = (h - q * k) / (k * s)
    beta = np.where(h * k > 0, 0.0, 0.5)
    return 0.5 * ndtr(h) + 0.5 * ndtr(k) - owens_t(h, a_h) - owens_t(k, a_k) - beta


def relu_cross(q, b, d):
    """E (G1 + b)_+ (G2 + d)_+ for standard normals with correlation ``q``.

    Closed form in terms of the bivariate normal CDF; the endpoints
    ``q = +-1`` use their one-dimensional reductions.
    """
    q, b, d = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (q, b, d)))
    if np.any(np.abs(q) > 1.0):
        raise ValueError("correlation must lie in [-1, 1]")
    out = np.empty(q.shape)

    up = q >= 1.0 - 1e-14
    lo = q <= -1.0 + 1e-14
    mid = ~(up | lo)

    if np.any(mid):
        qm, bm, dm = q[mid], b[mid], d[mid]
        s = np.sqrt((1.0 - qm) * (1.0 + qm))
        cb = ndtr((bm - qm * dm) / s)
        cd = ndtr((dm - qm * bm) / s)
        out[mid] = (
            (bm * dm + qm) * bvn_cdf(bm, dm, qm)
            + bm * npdf(dm) * cb
            + dm * npdf(bm) * cd
            + s * npdf(bm) * npdf((dm - qm * bm) / s)
        )
    if np.any(up):
        bu, du = b[up], d[up]
        c = np.minimum(bu, du)
        out[up] = (bu * du + 1.0) * ndtr(c) + (bu + du - c) * npdf(c)
    if np.any(lo):
        bl, dl = b[lo], d[lo]
        val = (bl * dl - 1.0) * (ndtr(dl) - ndtr(-bl)) + (dl - bl) * (npdf(bl) - npdf(dl)) \
            + bl * npdf(bl) + dl * npdf(dl)
        out[lo] = np.where(bl + dl > 0, val, 0.0)
    return _ret(out)


def relu_cross_quad(q: float, b: float, d: float, order: int = 60) -> float:
    """Quadrature route for :func:`relu_cross`.

    Rotates ``G2 = q*G1 + sqrt(1-q^2)*G3``, integrates ``G3`` in closed form
    and ``G1`` over ``[-b, inf)`` with composite Gauss-Legendre. Panels are
    graded geometrically around the kink ``-d/q`` of the inner integrand.
    """
    if abs(q) > 1.0:
        raise ValueError("correlation must lie in [-1, 1]")
    s = np.sqrt(max((1.0 - q) * (1.0 + q), 0.0))
    lo, hi = -b, max(-b, 0.0) + 12.0
    brk = {lo, hi}
    if q != 0.0:
        c = -d / q
        width = max(s / abs(q), 1e-12)
        for k in range(-1, 40):
            for pt in (c - width * 4.0**k, c + width * 4.0**k):
                if lo < pt < hi:
                    brk.add(pt)
            if width * 4.0**k > hi - lo:
                break
        if lo < c < hi:
            brk.add(c)
    brk = np.array(sorted(brk))
    x, w = np.polynomial.legendre.leggauss(order)
    half, mid = np.diff(brk) / 2.0, (brk[1:] + brk[:-1]) / 2.0
    g = (mid[:, None] + half[:, None] * x).ravel()
    wg = (half[:, None] * w).ravel()
    return float(np.sum(wg * (g + b) * npdf(g) * relu_m1(q * g + d, s)))


@dataclass(frozen=True)
class ActivationFamily:
    """Activation ``h(x, eta, t)`` with its a.e. derivative.

    ``moments`` and ``cross`` are optional closed forms. ``moments(eta, t, var)``
    returns ``(E h, E h^2, E dh)`` under ``Z ~ N(0, var)``; ``cross(eta, t1,
    t2, v1, v2, c)`` returns ``E h(Z1, eta, t1) h(Z2, eta, t2)`` for a centered
    pair with variances ``v1, v2`` and covariance ``c``.
    """

    name: str
    eval: Callable
    deriv: Callable
    growth: int = 1
    moments: Optional[Callable] = None
    cross: Optional[Callable] = None

    def __call__(self, x, eta, t=0):
        return self.eval(x, eta, t)


def _relu_shift_moments(eta, t, var):
    sd = np.sqrt(np.maximum(var, 0.0))
    return relu_m1(eta, sd), relu_m2(eta, sd), relu_prob(eta, sd)


def _relu_shift_cross(eta, t1, t2, v1, v2, c):
    eta, v1, v2, c = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (eta, v1, v2, c)))
    s1, s2 = np.sqrt(v1), np.sqrt(v2)
    both = (s1 > 0) & (s2 > 0)
    out = np.empty(eta.shape)
    # degenerate coordinates: one factor is deterministic
    out[~both] = (np.where(s1 > 0, relu_m1(eta, s1), np.maximum(eta, 0.0))
                  * np.where(s2 > 0, relu_m1(eta, s2), np.maximum(eta, 0.0)))[~both]
    if np.any(both):
        sb1, sb2, eb = s1[both], s2[both], eta[both]
        rho = np.clip(c[both] / (sb1 * sb2), -1.0, 1.0)
        out[both] = sb1 * sb2 * relu_cross(rho, eb / sb1, eb / sb2)
    return _ret(out)


def relu_shift() -> ActivationFamily:
    """h(x, eta) = (x + eta)_+ with derivative 1{x + eta > 0}."""
    return ActivationFamily(
        name="relu_shift",
        eval=lambda x, eta, t=0: np.maximum(np.asarray(x) + eta, 0.0),
        deriv=lambda x, eta, t=0: (np.asarray(x) + eta > 0).astype(float),
        growth=1,
        moments=_relu_shift_moments,
        cross=_relu_shift_cross,
    )


def identity() -> ActivationFamily:
    return ActivationFamily(
        name="identity",
        eval=lambda x, eta, t=0: np.asarray(x, dtype=float) + 0.0 * np.asarray(eta),
        deriv=lambda x, eta, t=0: np.ones(np.broadcast(np.asarray(x), np.asarray(eta)).shape),
        growth=1,
        moments=lambda eta, t, var: (0.0 * np.asarray(var), np.asarray(var, dtype=float) + 0.0,
                                     np.ones(np.shape(var))),
    )


def tanh_shift() -> ActivationFamily:
    """Smooth bounded activation ``tanh(x + eta)``; quadrature only."""
    return ActivationFamily(
        name="tanh_shift",
        eval=lambda x, eta, t=0: np.tanh(np.asarray(x) + eta),
        deriv=lambda x, eta, t=0: 1.0 / np.cosh(np.asarray(x) + eta) ** 2,
        growth=0,
    )


ACTIVATIONS = {"relu_shift": relu_shift, "identity": identity, "tanh_shift": tanh_shift}


@dataclass(frozen=True)
class GaussExpectation:
    mean: np.ndarray
    second: np.ndarray
    deriv: np.ndarray
    stein_deriv: np.ndarray
    stein_ok: bool


def gauss_expect(h: ActivationFamily, eta, t, variance, rule: GaussHermiteRule | None = None,
                 stein_tol: float = 1e-6) -> GaussExpectation:
    """Moments of ``h(Z, eta, t)`` with ``Z ~ N(0, variance)``.

    The closed form of ``h`` is used when available, quadrature otherwise.
    ``E dh`` is cross-checked against Stein's identity ``E[Z h(Z)] / var``
    (computed by quadrature); ``stein_ok`` is False when the two disagree by
    more than ``stein_tol``. For kinked activations the quadrature side of
    this diagnostic is itself only accurate to roughly 1e-4.
    """
    rule = rule or gauss_hermite(100)
    eta, variance = np.broadcast_arrays(np.asarray(eta, dtype=float),
                                        np.asarray(variance, dtype=float))
    if np.any(variance < 0):
        raise ValueError("variance must be nonnegative")
    sd = np.sqrt(variance)[..., None]
    z = sd * rule.nodes
    hz = h.eval(z, eta[..., None], t)
    if h.moments is not None:
        m1, m2, md = (np.asarray(v, dtype=float) + np.zeros(eta.shape) for v in h.moments(eta, t, variance))
    else:
        m1 = hz @ rule.weights
        m2 = (hz**2) @ rule.weights
        md = h.deriv(z, eta[..., None], t) @ rule.weights
    pos = variance > 0
    stein = np.where(pos, ((z * hz) @ rule.weights) / np.where(pos, variance, 1.0), md)
    ok = bool(np.all(np.abs(stein - md) <= stein_tol))
    return GaussExpectation(_ret(m1), _ret(m2), _ret(md), _ret(stein), ok)


def gauss_cross(h: ActivationFamily, eta, t1, t2, v1, v2, c, order: int = 60):
    """E h(Z1, eta, t1) h(Z2, eta, t2) for a centered Gaussian pair.

    Tensorized Gauss-Hermite after writing ``Z2 = rho*Z1/sd1 * sd2 +
    sqrt(1 - rho^2) * sd2 * G3``; closed form when ``h.cross`` exists.
    """
    if h.cross is not None:
        return h.cross(eta, t1, t2, v1, v2, c)
    rule = gauss_hermite(order)
    eta, v1, v2, c = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (eta, v1, v2, c)))
    s1, s2 = np.sqrt(v1), np.sqrt(v2)
    denom = s1 * s2
    rho = np.clip(np.divide(c, denom, out=np.zeros(c.shape), where=denom > 0), -1.0, 1.0)
    g1 = rule.nodes[:, None]
    g3 = rule.nodes[None, :]
    w = np.outer(rule.weights, rule.weights)
    e = eta[..., None, None]
    z1 = s1[..., None, None] * g1
    z2 = s2[..., None, None] * (rho[..., None, None] * g1 + np.sqrt(1 - rho[..., None, None] ** 2) * g3)
    vals = h.eval(z1, e, t1) * h.eval(z2, e, t2)
    return _ret(np.einsum("...ij,ij->...", vals, w))
