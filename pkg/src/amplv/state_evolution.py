"""State evolution for symmetric AMP with a variance profile.

Two paths are provided. :func:`se_step` runs the general recursion on the
full per-coordinate covariance matrices ``R_i^t``; :func:`lv_se_step` tracks
only the variances, Onsager coefficients and lag-one correlations for the
activation ``(x + eta)_+``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .kernels import ActivationFamily, gauss_cross, gauss_expect, relu_cross, relu_m1, relu_m2, relu_prob
from .rng_matrix import VarianceProfile

log = logging.getLogger(__name__)

PSD_TOL = 1e-10
T_MAX = 30


class NumericalFailure(RuntimeError):
    pass


class ContractionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SeState:
    """State after ``t`` steps.

    ``R`` has shape ``(n, t, t)`` (covariance of ``Z_i^1..Z_i^t``); ``Xi``
    has shape ``(n, t, t)`` and is the Gram matrix used to build ``R``, i.e.
    ``Xi^{t-1}``. Entry 0 of ``Xi`` refers to the deterministic initial
    vector.
    """

    t: int
    R: np.ndarray = field(repr=False)
    Xi: np.ndarray = field(repr=False)
    x0: np.ndarray = field(repr=False)
    eta: np.ndarray = field(repr=False)
    Eh: np.ndarray = field(repr=False)  # (n, t) means E h(Z^s), s = 1..t-1 filled lazily
    Edh: np.ndarray = field(repr=False)  # (n, t+1) columns s >= 1 are E dh(Z^s)

    @property
    def n(self) -> int:
        return self.x0.shape[0]

    def diag(self, s: Optional[int] = None) -> np.ndarray:
        """Variances ``R_i(s, s)`` (1-based ``s``; default the last)."""
        s = self.t if s is None else s
        return self.R[:, s - 1, s - 1]

    def onsager_expect(self, s: Optional[int] = None) -> np.ndarray:
        """E dh(Z_i^s, eta_i, s)."""
        s = self.t if s is None else s
        return self.Edh[:, s]

    def cov_factor(self, times) -> np.ndarray:
        """Square-root factors (n, k, k) of the covariances at 1-based ``times``.

        Eigenvalues in ``(-PSD_TOL, 0)`` are clipped to zero here; ``R`` itself
        is never modified, so nesting across steps stays exact.
        """
        idx = np.asarray(times) - 1
        C = self.R[:, idx][:, :, idx]
        w, U = np.linalg.eigh(C)
        return U * np.sqrt(np.clip(w, 0.0, None))[:, None, :]


def _check_profile(S: VarianceProfile) -> None:
    if S.c_S <= 0:
        bad = int(np.argmin(S.row_sums))
        raise NumericalFailure(f"variance profile row {bad} sums to zero (non-degeneracy)")


def se_init(x0, eta, S: VarianceProfile) -> SeState:
    _check_profile(S)
    n = S.n
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n,)).copy()
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (n,)).copy()
    return SeState(0, np.zeros((n, 0, 0)), np.zeros((n, 0, 0)), x0, eta,
                   np.zeros((n, 0)), np.zeros((n, 1)))


def _psd_check(R: np.ndarray, t: int) -> None:
    if not np.all(np.isfinite(R)):
        raise NumericalFailure(f"non-finite covariance at step {t}")
    w = np.linalg.eigvalsh(R)
    scale = np.maximum(1.0, np.abs(np.diagonal(R, axis1=1, axis2=2)).max(axis=1))
    worst = (w[:, 0] / scale).min()
    if worst < -PSD_TOL:
        i = int(np.argmin(w[:, 0] / scale))
        raise NumericalFailure(f"R^{t} of coordinate {i} has eigenvalue {w[i, 0]:.3e}")


def se_step(state: SeState, S: VarianceProfile, h: ActivationFamily) -> SeState:
    """Advance the state evolution by one step.

    Only the new row and column of ``Xi`` are computed; earlier entries are
    copied, which makes ``R^t`` the exact leading block of ``R^{t+1}``.
    """
    _check_profile(S)
    t = state.t
    n = state.n
    eta = state.eta
    Xi = np.zeros((n, t + 1, t + 1))
    Xi[:, :t, :t] = state.Xi
    Eh = np.zeros((n, t + 1))
    Eh[:, :t] = state.Eh
    Edh = np.zeros((n, t + 2))
    Edh[:, : t + 1] = state.Edh

    h0 = h.eval(state.x0, eta, 0)
    Eh[:, 0] = h0
    if t == 0:
        Xi[:, 0, 0] = h0**2
    else:
        v = state.diag(t)
        ge = gauss_expect(h, eta, t, v)
        Eh[:, t] = ge.mean
        Xi[:, t, t] = ge.second
        Xi[:, 0, t] = Xi[:, t, 0] = h0 * ge.mean
        for s in range(1, t):
            c = gauss_cross(h, eta, s, t, state.diag(s), v, state.R[:, s - 1, t - 1])
            Xi[:, s, t] = Xi[:, t, s] = c

    R = np.zeros((n, t + 1, t + 1))
    R[:, :t, :t] = state.R
    new = S @ Xi[:, t, :]
    R[:, t, :] = new
    R[:, :, t] = new
    _psd_check(R, t + 1)
    Edh[:, t + 1] = gauss_expect(h, eta, t + 1, R[:, t, t]).deriv
    return SeState(t + 1, R, Xi, state.x0, eta, Eh, Edh)


def run_se(S: VarianceProfile, h: ActivationFamily, x0, eta, t_max: int = 5) -> SeState:
    if t_max > T_MAX:
        raise ValueError(f"t_max is capped at {T_MAX}")
    st = se_init(x0, eta, S)
    for _ in range(t_max):
        st = se_step(st, S, h)
    return st


@dataclass(frozen=True, eq=False)
class LvSeTrack:
    """Scalar tracks for ``h = (x + eta)_+``.

    ``q`` is the correlation of ``Z^t`` with ``Z^{t-1}``; at ``t = 1`` there
    is no predecessor and ``q`` is set to 0.
    """

    t: int
    a: np.ndarray
    zeta: np.ndarray
    q: np.ndarray
    a_prev: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None


def lv_se_init(S: VarianceProfile, eta, x0=1.0) -> LvSeTrack:
    _check_profile(S)
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (S.n,))
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (S.n,)).copy()
    a = S @ np.maximum(x0 + eta, 0.0) ** 2
    zeta = S @ relu_prob(eta, np.sqrt(a))
    return LvSeTrack(1, a, zeta, np.zeros(S.n), None, x0)


def lv_se_step(track: LvSeTrack, S: VarianceProfile, eta) -> LvSeTrack:
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (S.n,))
    if np.any(track.a <= 0):
        raise ValueError("variance track must be positive")
    sd = np.sqrt(track.a)
    a_new = S @ relu_m2(eta, sd)
    zeta_new = S @ relu_prob(eta, np.sqrt(a_new))
    if track.t == 1:
        x0 = track.x0 if track.x0 is not None else np.ones(S.n)
        cross = np.maximum(x0 + eta, 0.0) * relu_m1(eta, sd)
    else:
        sp_ = np.sqrt(track.a_prev)
        cross = sd * sp_ * relu_cross(np.clip(track.q, -1.0, 1.0), eta / sd, eta / sp_)
    q_new = np.clip((S @ cross) / np.sqrt(a_new * track.a), 0.0, 1.0)
    return LvSeTrack(track.t + 1, a_new, zeta_new, q_new, track.a, track.x0)


@dataclass(frozen=True, eq=False)
class LvSeLimit:
    a: np.ndarray
    zeta: np.ndarray
    q: np.ndarray
    residual: float
    iterations: int
    history: list = field(repr=False, default_factory=list)  # sup-norm a-increments


def lv_se_limit(S: VarianceProfile, eta, tol: float = 1e-12, max_iter: int = 10000,
                damping: float = 1.0, q_tol: Optional[float] = None, x0=1.0) -> LvSeLimit:
    """Fixed point of ``a = S E(sqrt(a) xi + eta)_+^2`` with its ``zeta`` and ``q``.

    Plain Picard iteration of the state evolution when ``damping = 1``; the
    map is a sup-norm contraction with rate |||S|||, which is required to be
    below 1. ``q_tol`` (default ``max(tol, 1e-9)``) bounds ``1 - q``.
    """
    rate = S.row_sum_norm
    if rate >= 1.0:
        raise ContractionError(f"|||S||| = {rate:.4g} >= 1: no contraction")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    q_tol = max(tol, 1e-9) if q_tol is None else q_tol
    eta = np.broadcast_to(np.asarray(eta, dtype=float), (S.n,))
    tr = lv_se_init(S, eta, x0)
    hist = []
    for it in range(1, max_iter + 1):
        nxt = lv_se_step(tr, S, eta)
        if damping < 1.0:
            a = (1 - damping) * tr.a + damping * nxt.a
            nxt = LvSeTrack(nxt.t, a, S @ relu_prob(eta, np.sqrt(a)), nxt.q, nxt.a_prev, nxt.x0)
        hist.append(float(np.abs(nxt.a - tr.a).max()))
        tr = nxt
        res = float(np.abs(tr.a - S @ relu_m2(eta, np.sqrt(tr.a))).max())
        if res <= tol and float(np.abs(1.0 - tr.q).max()) <= q_tol:
            return LvSeLimit(tr.a, S @ relu_prob(eta, np.sqrt(tr.a)), tr.q, res, it, hist)
    raise NumericalFailure(f"state evolution limit not reached in {max_iter} iterations (residual {res:.3e})")


def export_trajectory_csv(path, state: Optional[SeState] = None, tracks=()) -> None:
    """Write ``(t, i, R_diag, a, zeta, q)`` rows; missing fields are left blank."""
    rows = {}
    if state is not None:
        for s in range(1, state.t + 1):
            for i, v in enumerate(state.diag(s)):
                rows[(s, i)] = [s, i, repr(float(v)), "", "", ""]
    for tr in tracks:
        for i in range(tr.a.shape[0]):
            row = rows.setdefault((tr.t, i), [tr.t, i, "", "", "", ""])
            row[3:] = [repr(float(tr.a[i])), repr(float(tr.zeta[i])), repr(float(tr.q[i]))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "i", "R_diag", "a", "zeta", "q"])
        for key in sorted(rows):
            w.writerow(rows[key])
