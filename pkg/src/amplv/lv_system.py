"""Lotka-Volterra equilibria: fixed-point system, LCP solver and ODE oracle."""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .kernels import relu_m2, relu_prob
from .measures import RectifiedGaussianMixture
from .rng_matrix import EntryDistribution, SampledMatrix, VarianceProfile, spectral_norm
from .state_evolution import NumericalFailure

log = logging.getLogger(__name__)


class ConvergenceError(NumericalFailure):
    def __init__(self, msg, best=None, trace=None):
        super().__init__(msg)
        self.best = best
        self.trace = trace or []


@dataclass(frozen=True, eq=False)
class LvModel:
    V: VarianceProfile
    r: np.ndarray
    entry_dist: EntryDistribution = field(default_factory=EntryDistribution)

    def __post_init__(self):
        r = np.broadcast_to(np.asarray(self.r, dtype=float), (self.V.n,)).copy()
        object.__setattr__(self, "r", r)
        if not self.V.row_sum_norm < 0.25:
            raise ValueError(f"|||V||| = {self.V.row_sum_norm:.4g} must be below 1/4")
        if np.any(r <= 0) or not np.all(np.isfinite(r)):
            raise ValueError("growth rates must be positive and finite")

    @property
    def n(self) -> int:
        return self.V.n


@dataclass(frozen=True, eq=False)
class FixedPoint:
    p: np.ndarray
    zeta: np.ndarray
    residual: float
    iterations: int
    p_max: float
    trace: list = field(repr=False, default_factory=list)

    def export_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "p_i", "zeta_i"])
            for i, (p, z) in enumerate(zip(self.p, self.zeta)):
                w.writerow([i, repr(float(p)), repr(float(z))])


def p_upper(r_max: float) -> float:
    """Smallest ``p`` with ``E(sqrt(p) xi + r_max)_+^2 <= 3p/4``.

    ``p -> E(...)^2 - 3p/4`` is concave, positive at 0 and eventually
    negative, so bisection on the single sign change is safe.
    """
    g = lambda p: relu_m2(r_max, np.sqrt(p)) - 0.75 * p
    lo, hi = 0.0, max(1.0, r_max**2)
    while g(hi) > 0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if g(mid) > 0 else (lo, mid)
        if hi - lo <= 1e-15 * hi:
            break
    return hi


def fixed_point_map(V: VarianceProfile, r: np.ndarray, p: np.ndarray, zeta: np.ndarray):
    sd = np.sqrt(p)
    one = 1.0 + zeta
    return (V @ (one**2 * relu_m2(r, sd)), one * (V @ (one * relu_prob(r, sd))))


def solve_fixed_point(model: LvModel, tol: float = 1e-12, max_iter: int = 20000,
                      damping: float = 1.0) -> FixedPoint:
    """Damped Picard iteration for the joint ``(p, zeta)`` system.

    Starts from ``(V (1+r)^2, 0)`` and stops once the sup-norm residual of
    both equations is at most ``tol``.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    V, r = model.V, model.r
    p_max = p_upper(float(r.max()))
    p = V @ (1.0 + r) ** 2
    zeta = np.zeros(model.n)
    trace = []
    for it in range(1, max_iter + 1):
        gp, gz = fixed_point_map(V, r, p, zeta)
        res = max(np.abs(gp - p).max(initial=0.0), np.abs(gz - zeta).max(initial=0.0))
        trace.append(float(res))
        if res <= tol:
            if np.any(p > p_max) or np.any(zeta < 0) or np.any(zeta > 1):
                raise NumericalFailure("fixed point left the invariant box")
            return FixedPoint(p, zeta, float(res), it - 1, p_max, trace)
        p = (1 - damping) * p + damping * gp
        zeta = (1 - damping) * zeta + damping * gz
    raise ConvergenceError(f"fixed point not reached in {max_iter} iterations (residual {res:.3e})",
                           (p, zeta), trace)


def predicted_mixture(model: LvModel, fp: FixedPoint) -> RectifiedGaussianMixture:
    """Law of ``((1+zeta_i)(sqrt(p_i) xi + r_i))_+`` for uniform ``i``."""
    one = 1.0 + fp.zeta
    return RectifiedGaussianMixture(one * model.r, one * np.sqrt(fp.p))


def survival_fraction(model: LvModel, fp: FixedPoint) -> float:
    return float(np.mean(relu_prob(model.r, np.sqrt(fp.p))))


@dataclass(frozen=True, eq=False)
class Equilibrium:
    u_star: np.ndarray
    w: np.ndarray
    comp_residual: float
    feas_residuals: tuple
    method: str
    sweeps: int = 0

    def export_csv(self, path, instance_seed: int = 0, append: bool = False) -> None:
        with open(path, "a" if append else "w", newline="") as fh:
            wr = csv.writer(fh)
            if not append:
                wr.writerow(["instance_seed", "i", "u_star_i", "w_i"])
            for i, (u, s) in enumerate(zip(self.u_star, self.w)):
                wr.writerow([instance_seed, i, repr(float(u)), repr(float(s))])


def _values(Sigma):
    return Sigma.values if isinstance(Sigma, SampledMatrix) else Sigma


def _equilibrium(B, r, u, method, sweeps=0) -> Equilibrium:
    w = B @ u - r
    return Equilibrium(u, w, float(abs(u @ w)), (float(u.min(initial=0.0)), float(w.min(initial=0.0))),
                       method, sweeps)


def _identity_minus(S):
    n = S.shape[0]
    return (sp.identity(n, format="csr") - S).tocsr() if sp.issparse(S) else np.eye(n) - S


def _polish(B, r, u, tol):
    """Solve the linear system on the support of ``u``; None if LCP conditions fail."""
    act = u > 0
    v = np.zeros_like(u)
    if act.any():
        Bdense = B[act][:, act]
        Bdense = Bdense.toarray() if sp.issparse(Bdense) else Bdense
        try:
            v[act] = sla.solve(Bdense, r[act], assume_a="pos")
        except (sla.LinAlgError, ValueError):
            return None
    w = B @ v - r
    if v.min(initial=0.0) < 0 or w.min(initial=0.0) < -tol:
        return None
    return v


def psor(B, r, tol: float = 1e-10, omega: float = 1.0, max_sweeps: int = 10000, u0=None):
    """Projected SOR for ``LCP(B, -r)`` with ``B`` symmetric positive definite.

    Each sweep updates ``u_i <- max(0, u_i - omega (B u - r)_i / B_ii)`` in
    place. Returns ``(u, sweeps)`` once the natural residual
    ``|| min(u, Bu - r) ||_inf`` drops below ``tol``.
    """
    n = r.shape[0]
    u = np.maximum(r, 0.0) if u0 is None else np.array(u0, dtype=float)
    dense = not sp.issparse(B)
    if not dense:
        B = B.tocsr()
        indptr, indices, data = B.indptr, B.indices, B.data
    diag = np.asarray(B.diagonal(), dtype=float)
    for sweep in range(1, max_sweeps + 1):
        for i in range(n):
            if dense:
                g = B[i] @ u - r[i]
            else:
                lo, hi = indptr[i], indptr[i + 1]
                g = data[lo:hi] @ u[indices[lo:hi]] - r[i]
            nu = u[i] - omega * g / diag[i]
            u[i] = nu if nu > 0.0 else 0.0
        if np.abs(np.minimum(u, B @ u - r)).max() <= tol:
            return u, sweep
    raise ConvergenceError(f"PSOR stalled after {max_sweeps} sweeps", u)


def operator_norm(S, dense_limit: int = 1000) -> float:
    """Exact eigensolver for moderate dense matrices, power iteration otherwise."""
    if not sp.issparse(S) and S.shape[0] <= dense_limit:
        w = sla.eigvalsh(S)
        return float(max(abs(w[0]), abs(w[-1]))) if w.size else 0.0
    return spectral_norm(S, tol=1e-9).value


def equilibrium_lcp(Sigma, r, tol: float = 1e-10, omega: float = 1.0, check_norm: bool = True,
                    max_sweeps: int = 10000) -> Equilibrium:
    """Globally stable LV equilibrium as ``LCP(I - Sigma, -r)``.

    PSOR brings the iterate to within ``tol`` of the solution; the support
    it identifies is then used for one exact linear solve, accepted only if
    it satisfies the LCP conditions.
    """
    S = _values(Sigma)
    r = np.asarray(r, dtype=float)
    if check_norm:
        nrm = operator_norm(S)
        if nrm >= 1.0:
            raise ValueError(f"||Sigma|| = {nrm:.4f} >= 1: equilibrium not guaranteed")
    B = _identity_minus(S)
    u, sweeps = psor(B, r, tol=tol, omega=omega, max_sweeps=max_sweeps)
    v = _polish(B, r, u, tol)
    if v is not None:
        u = v
    return _equilibrium(B, r, u, "lcp", sweeps)


def lcp_bruteforce(B: np.ndarray, r: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Enumerate supports of ``LCP(B, -r)`` and return the feasible solution (n <= 12)."""
    B = np.asarray(B, dtype=float)
    n = r.shape[0]
    if n > 12:
        raise ValueError("brute force is limited to n <= 12")
    for mask in itertools.product((False, True), repeat=n):
        act = np.array(mask)
        u = np.zeros(n)
        if act.any():
            try:
                u[act] = np.linalg.solve(B[np.ix_(act, act)], r[act])
            except np.linalg.LinAlgError:
                continue
        w = B @ u - r
        if u.min() >= -tol and w.min() >= -tol:
            return np.maximum(u, 0.0)
    raise ValueError("no complementary solution found")


def integrate_lv(Sigma, r, u0, T: float = 500.0, rtol: float = 1e-10, atol: float = 1e-12,
                 blowup: float = 1e6) -> np.ndarray:
    """Integrate ``du/dt = u (r + (Sigma - I) u)`` from ``u0 > 0`` to time ``T``.

    The flow is integrated in log coordinates ``v = log u`` (RK45 via
    scipy), which keeps every component strictly positive without clamping.
    """
    S = _values(Sigma)
    r = np.asarray(r, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    if np.any(u0 <= 0):
        raise ValueError("initial abundances must be positive")

    def rhs(_, v):
        u = np.exp(v)
        return r + S @ u - u

    def blow(_, v):
        return np.log(blowup) - v.max()

    blow.terminal = True
    sol = solve_ivp(rhs, (0.0, T), np.log(u0), method="RK45", rtol=rtol, atol=atol, events=blow)
    if sol.status == 1:
        raise NumericalFailure(f"LV trajectory exceeded {blowup:g} at t = {sol.t[-1]:.3g}")
    if not sol.success:
        raise NumericalFailure(sol.message)
    return np.exp(sol.y[:, -1])


def lambda_min(B) -> float:
    if sp.issparse(B) and B.shape[0] > 200:
        return float(spla.eigsh(B, k=1, which="SA", return_eigenvectors=False)[0])
    B = B.toarray() if sp.issparse(B) else np.asarray(B)
    return float(sla.eigvalsh(B, subset_by_index=[0, 0])[0])


def perturbation_bound(Sigma, eps_vec) -> float:
    """``||(I - Sigma)^{-1}|| * ||eps||``: bound on the LCP solution shift."""
    B = _identity_minus(_values(Sigma))
    lam = lambda_min(B)
    if lam < 1e-10:
        raise ValueError(f"I - Sigma is near singular (lambda_min = {lam:.3e})")
    return float(np.linalg.norm(eps_vec)) / lam
