"""Variance profiles, symmetric random matrices and spectral-norm tools."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

PROFILE_KINDS = ("banded", "block", "random-support", "wigner")
DENSE_FRACTION = 0.5


def _as_csr(a) -> sp.csr_matrix:
    m = sp.csr_matrix(a, dtype=float)
    m.eliminate_zeros()
    m.sort_indices()
    return m


@dataclass(frozen=True, eq=False)
class VarianceProfile:
    """Symmetric nonnegative variance matrix with zero diagonal.

    ``entries`` is always stored in CSR with sorted column indices; ``matrix``
    returns the dense array instead when the profile is not sparse
    (``K / n > 0.5``). ``support_const`` and ``magnitude_const`` are the two
    sparsity constants, measured from the data.
    """

    n: int
    K: int
    entries: sp.csr_matrix = field(repr=False)
    kind: str = "custom"
    scale: float = float("nan")

    def __post_init__(self):
        e = _as_csr(self.entries)
        if e.shape != (self.n, self.n):
            raise ValueError(f"entries must be {self.n}x{self.n}")
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "_dense", None)

    @classmethod
    def from_matrix(cls, mat, K: Optional[int] = None, kind: str = "custom",
                    scale: float = float("nan")) -> "VarianceProfile":
        m = _as_csr(mat)
        n = m.shape[0]
        if K is None:
            K = max(1, int(np.diff(m.indptr).max(initial=1)))
        return cls(n, K, m, kind, scale)

    @property
    def is_dense(self) -> bool:
        return self.K / self.n > DENSE_FRACTION

    @property
    def matrix(self):
        """Dense array for dense profiles, CSR otherwise."""
        if not self.is_dense:
            return self.entries
        if self._dense is None:
            d = self.entries.toarray()
            d.setflags(write=False)
            object.__setattr__(self, "_dense", d)
        return self._dense

    def toarray(self) -> np.ndarray:
        return self.entries.toarray()

    @property
    def row_sums(self) -> np.ndarray:
        return np.asarray(self.entries.sum(axis=1)).ravel()

    @property
    def row_sum_norm(self) -> float:
        """Max row sum, |||S|||."""
        return float(self.row_sums.max(initial=0.0))

    @property
    def max_entry(self) -> float:
        return float(self.entries.data.max(initial=0.0))

    @property
    def support_sizes(self) -> np.ndarray:
        return np.diff(self.entries.indptr)

    @property
    def support_const(self) -> float:
        return float(self.support_sizes.max(initial=0)) / self.K

    @property
    def magnitude_const(self) -> float:
        return self.max_entry * self.K

    @property
    def c_S(self) -> float:
        return float(self.row_sums.min())

    def check(self, c_S: float = 0.0) -> None:
        """Raise ValueError if symmetry, diagonal or non-degeneracy fail."""
        e = self.entries
        if np.any(e.data < 0):
            raise ValueError("variance profile has negative entries")
        if abs(e - e.T).max() > 0:
            raise ValueError("variance profile is not symmetric")
        if np.any(e.diagonal() != 0):
            raise ValueError("variance profile has nonzero diagonal")
        if self.c_S <= c_S:
            raise ValueError(f"minimum row sum {self.c_S:g} is not above {c_S:g}")

    def __matmul__(self, other):
        return self.matrix @ other

    def permute(self, perm: Sequence[int]) -> "VarianceProfile":
        perm = np.asarray(perm)
        return VarianceProfile(self.n, self.K, self.entries[perm][:, perm], self.kind, self.scale)

    def scaled(self, left: np.ndarray, right: Optional[np.ndarray] = None) -> "VarianceProfile":
        """diag(left) S diag(right)."""
        right = left if right is None else right
        m = sp.diags(left) @ self.entries @ sp.diags(right)
        return VarianceProfile(self.n, self.K, m, self.kind, self.scale)

    def to_json(self) -> dict:
        coo = sp.triu(self.entries, k=1).tocoo()
        trip = [[int(i), int(j), float(s)] for i, j, s in zip(coo.row, coo.col, coo.data)]
        return {"n": self.n, "K": self.K, "kind": self.kind, "scale": self.scale, "triplets": trip}

    @classmethod
    def from_json(cls, doc: dict) -> "VarianceProfile":
        n = int(doc["n"])
        t = np.asarray(doc["triplets"], dtype=float).reshape(-1, 3)
        i, j, s = t[:, 0].astype(int), t[:, 1].astype(int), t[:, 2]
        m = sp.coo_matrix((np.r_[s, s], (np.r_[i, j], np.r_[j, i])), shape=(n, n))
        return cls(n, int(doc["K"]), m.tocsr(), doc.get("kind", "custom"), float(doc.get("scale", "nan")))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "VarianceProfile":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def make_profile(kind: str, n: int, K: int, scale: float = 1.0, seed: int = 0,
                 block_size: Optional[int] = None) -> VarianceProfile:
    """Build a variance profile of one of the standard families.

    banded
        row i is supported on ``0 < |i - j| <= K // 2`` (cyclic distance),
        every entry ``scale / K``.
    block
        coordinates are cut into consecutive blocks of size ``block_size``
        (default ``K + 1``); entries ``scale / K`` within a block.
    random-support
        each row draws ``K`` partners uniformly; the union is symmetrized,
        so rows may carry up to ``2K`` entries of ``scale / K``.
    wigner
        ``scale / n`` off the diagonal; ``K`` is forced to ``n``.
    """
    if kind not in PROFILE_KINDS:
        raise ValueError(f"unknown profile kind {kind!r}")
    if n < 2:
        raise ValueError("n must be at least 2")
    if not scale > 0:
        raise ValueError("scale must be positive")
    if kind == "wigner":
        K = n
    if not 2 <= K <= n:
        raise ValueError(f"need 2 <= K <= n, got K={K}, n={n}")

    if kind == "wigner":
        m = np.full((n, n), scale / n)
        np.fill_diagonal(m, 0.0)
        return VarianceProfile(n, K, sp.csr_matrix(m), kind, scale)

    if kind == "banded":
        half = K // 2
        if 2 * half >= n:
            raise ValueError("band wraps onto itself; need 2*(K//2) < n")
        rows = np.repeat(np.arange(n), 2 * half)
        offs = np.tile(np.r_[np.arange(1, half + 1), -np.arange(1, half + 1)], n)
        cols = (rows + offs) % n
    elif kind == "block":
        bs = block_size or K + 1
        blk = np.arange(n) // bs
        rows, cols = np.nonzero(blk[:, None] == blk[None, :])
        keep = rows != cols
        rows, cols = rows[keep], cols[keep]
    else:
        rng = np.random.default_rng(seed)
        rows = np.repeat(np.arange(n), K)
        cols = np.concatenate([rng.choice(np.delete(np.arange(n), i), size=K, replace=False)
                               for i in range(n)])
        rows, cols = np.r_[rows, cols], np.r_[cols, rows]
    m = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()
    m.data[:] = scale / K  # duplicates from symmetrization collapse to one entry
    return VarianceProfile(n, K, m, kind, scale)


@dataclass(frozen=True)
class EntryDistribution:
    """Zero-mean, unit-variance law of the matrix entries.

    ``table`` holds ``(values, probabilities)`` for the ``custom-table`` kind.
    ``rho`` is the growth exponent of the moment bound ``Cmom(2k) <= C
    k^{rho/2}``.
    """

    kind: str = "gaussian"
    table: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "rademacher", "uniform-centered", "custom-table"):
            raise ValueError(f"unknown distribution {self.kind!r}")
        if self.kind == "custom-table":
            if self.table is None:
                raise ValueError("custom-table needs (values, probabilities)")
            v, p = (np.asarray(a, dtype=float) for a in self.table)
            if v.shape != p.shape or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise ValueError("invalid probability table")
            if abs(p @ v) > 1e-12 or abs(p @ v**2 - 1.0) > 1e-12:
                raise ValueError("custom table must have mean 0 and variance 1")

    @property
    def rho(self) -> float:
        return 1.0 if self.kind == "gaussian" else 0.0

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_normal(size)
        if self.kind == "rademacher":
            return rng.integers(0, 2, size=size) * 2.0 - 1.0
        if self.kind == "uniform-centered":
            return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=size)
        v, p = (np.asarray(a, dtype=float) for a in self.table)
        return rng.choice(v, size=size, p=p / p.sum())


def row_generator(seed: int, row: int) -> np.random.Generator:
    """Counter-based stream for one matrix row (Philox keyed by seed and row)."""
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, row])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class SampledMatrix:
    n: int
    values: object = field(repr=False)  # ndarray or csr_matrix
    seed: int = 0
    profile_id: str = ""

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.values)

    def __matmul__(self, v):
        return self.values @ v

    def toarray(self) -> np.ndarray:
        return self.values.toarray() if self.is_sparse else np.asarray(self.values)

    def hadamard_sq(self):
        return self.values.multiply(self.values).tocsr() if self.is_sparse else self.values**2

    def scaled(self, d: np.ndarray) -> "SampledMatrix":
        """diag(d) M diag(d)."""
        if self.is_sparse:
            vals = (sp.diags(d) @ self.values @ sp.diags(d)).tocsr()
        else:
            vals = d[:, None] * self.values * d[None, :]
        return SampledMatrix(self.n, vals, self.seed, self.profile_id)

    def permute(self, perm) -> "SampledMatrix":
        perm = np.asarray(perm)
        vals = self.values[perm][:, perm]
        return SampledMatrix(self.n, vals, self.seed, self.profile_id)

    def save_triplets(self, path) -> None:
        coo = sp.coo_matrix(self.values)
        with open(path, "w") as fh:
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {v:.17g}\n")

    @classmethod
    def load_triplets(cls, path, n: int, seed: int = 0) -> "SampledMatrix":
        t = np.loadtxt(path, ndmin=2)
        m = sp.coo_matrix((t[:, 2], (t[:, 0].astype(int), t[:, 1].astype(int))), shape=(n, n)).tocsr()
        return cls(n, m, seed)


def profile_id(profile: VarianceProfile) -> str:
    return f"{profile.kind}-n{profile.n}-K{profile.K}-s{profile.scale:g}"


def sample_symmetric(profile: VarianceProfile, dist: EntryDistribution | None = None,
                     seed: int = 0) -> SampledMatrix:
    """Draw ``W = sqrt(S) * X`` with X symmetric, independent above the diagonal.

    Row ``i`` of the upper triangle is filled from its own Philox stream, so
    the result depends only on ``(profile, dist, seed)`` and rows can be
    produced in any order.
    """
    dist = dist or EntryDistribution()
    upper = sp.triu(profile.entries, k=1).tocsr()
    data = np.empty(upper.nnz)
    for i in range(profile.n):
        lo, hi = upper.indptr[i], upper.indptr[i + 1]
        if hi > lo:
            data[lo:hi] = np.sqrt(upper.data[lo:hi]) * dist.draw(row_generator(seed, i), hi - lo)
    up = sp.csr_matrix((data, upper.indices.copy(), upper.indptr.copy()), shape=upper.shape)
    w = (up + up.T).tocsr()
    w.sort_indices()
    vals = w.toarray() if profile.is_dense else w
    return SampledMatrix(profile.n, vals, seed, profile_id(profile))


class PowerIterationError(RuntimeError):
    def __init__(self, msg, estimate, iterations):
        super().__init__(msg)
        self.estimate = estimate
        self.iterations = iterations


@dataclass(frozen=True)
class NormEstimate:
    value: float
    iterations: int

    def __float__(self):
        return self.value


def spectral_norm(M, tol: float = 1e-8, seed: int = 0, max_iter: Optional[int] = None) -> NormEstimate:
    """Largest absolute eigenvalue of a symmetric matrix by power iteration.

    Iterates on ``M^2`` so that eigenvalues ``+lam`` and ``-lam`` do not cause
    oscillation. Stops when successive Rayleigh-quotient estimates of
    ``||M||`` differ by less than ``tol``; raises :class:`PowerIterationError`
    after ``max_iter`` iterations (default ``10 n``, at least 1000 so small
    matrices with nearly tied top eigenvalues still converge).
    """
    A = M.values if isinstance(M, SampledMatrix) else M
    n = A.shape[0]
    max_iter = max_iter or max(10 * n, 1000)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for k in range(1, max_iter + 1):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return NormEstimate(0.0, k)
        new = nw  # sqrt of Rayleigh quotient v'M^2v with |v| = 1
        v = A @ (w / nw)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return NormEstimate(float(new), k)
        v /= nv
        if abs(new - est) < tol:
            return NormEstimate(float(np.sqrt(nv * nw)), k)
        est = new
    raise PowerIterationError(f"power iteration did not converge in {max_iter} steps", est, max_iter)


def gaussian_norm_bound(profile: VarianceProfile, n: Optional[int] = None, eps: float = 0.1) -> float:
    """Bound on E||W|| for Gaussian entries with variance profile ``profile``.

    ``(1+eps) * (2 sqrt(|||V|||) + 6/sqrt(log(1+eps)) * sqrt(||V||_max log n))``.
    """
    if not 0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 1/2]")
    n = profile.n if n is None else n
    return (1 + eps) * (2.0 * math.sqrt(profile.row_sum_norm)
                        + 6.0 / math.sqrt(math.log1p(eps)) * math.sqrt(profile.max_entry * math.log(n)))
