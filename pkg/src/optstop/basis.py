"""Tensor Hermite bases orthonormal under the log-normal sampling measure.

With y = (ln x - m) / sigma_hat the measure mu becomes a standard normal in
each coordinate, so products of normalised probabilists' Hermite polynomials
He_i(y) / sqrt(i!) are orthonormal and the Gram matrix is the identity.

Multi-indices are ordered graded-lexicographically: by total degree, then
descending lexicographic within a degree, e.g. for n=2:
(0,0), (1,0), (0,1), (2,0), (1,1), (0,2), ...
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .sampling import MuParams

MAX_BASIS_SIZE = 10**7
SPD_FLOOR = 1e-10
DROP_TOL = 1e-8

EXACT_IDENTITY = "exact_identity"
MONTE_CARLO = "monte_carlo"
QUADRATURE = "quadrature"


@dataclass(frozen=True)
class MultiIndexSet:
    n: int
    p: int
    indices: tuple

    @property
    def K(self) -> int:
        return len(self.indices)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.intp).reshape(self.K, self.n)


def basis_size(n: int, p: int) -> int:
    return math.comb(p + n, n)


def _compositions(total: int, parts: int):
    """All tuples of ``parts`` nonnegative ints summing to ``total``, descending lex."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_indices(n: int, p: int) -> MultiIndexSet:
    if n < 1 or p < 0:
        raise ValueError(f"need n >= 1 and p >= 0, got n={n}, p={p}")
    K = basis_size(n, p)
    if K > MAX_BASIS_SIZE:
        raise ValueError(f"basis size K={K} for n={n}, p={p} exceeds {MAX_BASIS_SIZE}")
    indices = tuple(idx for d in range(p + 1) for idx in _compositions(d, n))
    return MultiIndexSet(n, p, indices)


def hermite_table(y, p: int) -> np.ndarray:
    """Normalised Hermite values h_0..h_p at ``y``, stacked on a new last axis."""
    y = np.asarray(y, dtype=float)
    out = np.empty(y.shape + (p + 1,))
    out[..., 0] = 1.0
    if p >= 1:
        out[..., 1] = y
    for i in range(1, p):
        # h_{i+1} = (y h_i - sqrt(i) h_{i-1}) / sqrt(i + 1)
        out[..., i + 1] = (y * out[..., i] - math.sqrt(i) * out[..., i - 1]) / math.sqrt(i + 1)
    return out


def hermite_1d(degree: int, y):
    """He_degree(y) / sqrt(degree!), orthonormal under the standard normal."""
    if degree < 0:
        raise ValueError("degree must be >= 0")
    value = hermite_table(y, degree)[..., degree]
    return float(value) if np.ndim(value) == 0 else value


@dataclass(frozen=True)
class GramMatrix:
    entries: np.ndarray
    provenance: str
    std_errors: np.ndarray | None = None
    _chol: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        G = np.asarray(self.entries, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValueError(f"Gram matrix must be square, got {G.shape}")
        if not np.allclose(G, G.T, rtol=0, atol=1e-12 * max(1.0, np.abs(G).max())):
            raise ValueError("Gram matrix must be symmetric")
        if self.provenance != EXACT_IDENTITY:
            eig = np.linalg.eigvalsh(G)
            if not eig[0] > SPD_FLOOR * eig[-1]:
                raise np.linalg.LinAlgError(
                    f"Gram matrix numerically singular: min eigenvalue {eig[0]:.3e}, "
                    f"max {eig[-1]:.3e}")
            object.__setattr__(self, "_chol", scipy.linalg.cho_factor(G))
        object.__setattr__(self, "entries", G)

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def is_identity(self) -> bool:
        return self.provenance == EXACT_IDENTITY

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.is_identity:
            return np.asarray(rhs, dtype=float)
        return scipy.linalg.cho_solve(self._chol, rhs)

    def eigenvalue_range(self) -> tuple[float, float]:
        eig = np.linalg.eigvalsh(self.entries)
        return float(eig[0]), float(eig[-1])

    @classmethod
    def identity(cls, K: int) -> "GramMatrix":
        return cls(np.eye(K), EXACT_IDENTITY)


class HermiteBasis:
    kind = "hermite_orthonormal"

    def __init__(self, index_set: MultiIndexSet, mu: MuParams):
        if index_set.n != mu.n:
            raise ValueError(f"index set dimension {index_set.n} != measure dimension {mu.n}")
        self.index_set = index_set
        self.mu = mu
        self._idx = index_set.as_array()

    @classmethod
    def total_degree(cls, n: int, p: int, mu: MuParams) -> "HermiteBasis":
        return cls(enumerate_indices(n, p), mu)

    @property
    def K(self) -> int:
        return self.index_set.K

    @property
    def n(self) -> int:
        return self.index_set.n

    def standardize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise ValueError("basis evaluation requires strictly positive components")
        return (np.log(x) - self.mu.m) / self.mu.sigma_hat

    def design(self, x: np.ndarray, counters=None) -> np.ndarray:
        """Design matrix psi_k(x_m) of shape (M, K) for states of shape (M, n)."""
        x = np.asarray(x, dtype=float).reshape(-1, self.n)
        table = hermite_table(self.standardize(x), self.index_set.p)  # (M, n, p+1)
        out = np.ones((x.shape[0], self.K))
        for d in range(self.n):
            degrees = self._idx[:, d]
            if degrees.any():
                out *= table[:, d, degrees]
        if counters is not None:
            counters.add_basis(x.shape[0], self.K)
        return out

    def gram(self) -> GramMatrix:
        return GramMatrix.identity(self.K)

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "p": self.index_set.p,
            "K": self.K,
            "ordering": "graded-lex",
            "mu": self.mu.to_dict(),
        }


def eval_basis(system, k: int, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(system.design(x.reshape(1, -1))[0, k])


class AugmentedBasis:
    """Hermite basis plus extra functions orthonormalised on a sample of mu.

    Each extra column is a fixed linear combination of the raw columns
    [psi_1..psi_K, g_1..g_L] evaluated at x.
    """

    kind = "augmented"

    def __init__(self, base: HermiteBasis, functions, names, weights: np.ndarray):
        self.base = base
        self.functions = list(functions)
        self.names = list(names)
        self.weights = np.asarray(weights, dtype=float)  # (K_base + L, accepted)

    @property
    def K(self) -> int:
        return self.base.K + self.weights.shape[1]

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def mu(self) -> MuParams:
        return self.base.mu

    def _raw(self, x: np.ndarray, counters=None) -> np.ndarray:
        phi = self.base.design(x, counters)
        if not self.functions:
            return phi
        extra = np.column_stack([g(x) for g in self.functions])
        if counters is not None:
            counters.add_basis(x.shape[0], len(self.functions))
        return np.hstack([phi, extra])

    def design(self, x: np.ndarray, counters=None) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.n)
        raw = self._raw(x, counters)
        if self.weights.shape[1] == 0:
            return raw[:, : self.base.K]
        return np.hstack([raw[:, : self.base.K], raw @ self.weights])

    def gram(self):
        raise ValueError("augmented bases need an estimated Gram matrix; use gram(system, 'monte_carlo', samples)")

    def descriptor(self) -> dict:
        d = self.base.descriptor()
        d.update(kind=self.kind, K=self.K, extra_functions=self.names,
                 extra_weights=self.weights.tolist())
        return d


def orthonormalize_augmented(base: HermiteBasis, functions, samples: np.ndarray, names=None):
    """Append ``functions`` to ``base`` via modified Gram-Schmidt on ``samples``.

    Inner products are sample means over ``samples`` (drawn from mu).  A
    function whose residual after projection onto the current span has
    relative norm below 1e-8 is dropped.  Returns ``(basis, report)`` where
    ``report["dropped"]`` lists the dropped names.
    """
    functions = list(functions)
    names = list(names) if names is not None else [f"g{i}" for i in range(len(functions))]
    samples = np.asarray(samples, dtype=float).reshape(-1, base.n)
    M = samples.shape[0]
    phi = base.design(samples)
    raw = np.hstack([phi] + [np.asarray(g(samples), dtype=float).reshape(M, 1) for g in functions])
    K = base.K
    L = len(functions)

    # Sample-orthonormal columns spanning the base; coef[:, c] expresses
    # column c in terms of the raw columns [psi_1..psi_K, g_1..g_L].
    Q, R = np.linalg.qr(phi)
    scale = math.sqrt(M)
    q_cols = list((Q * scale).T)
    base_coef = scipy.linalg.solve_triangular(R / scale, np.eye(K))
    coef_cols = [np.concatenate([base_coef[:, k], np.zeros(L)]) for k in range(K)]

    accepted, dropped, residuals = [], [], {}
    for l in range(L):
        g = raw[:, K + l]
        g_norm = math.sqrt(np.mean(g * g))
        v = g.copy()
        w = np.zeros(K + L)
        w[K + l] = 1.0
        for _ in range(2):  # reorthogonalise once for stability
            for q, c in zip(q_cols, coef_cols):
                proj = np.mean(q * v)
                v -= proj * q
                w -= proj * c
        norm = math.sqrt(np.mean(v * v))
        rel = norm / g_norm if g_norm > 0 else 0.0
        residuals[names[l]] = rel
        if rel < DROP_TOL:
            dropped.append(names[l])
            continue
        q_cols.append(v / norm)
        coef_cols.append(w / norm)
        accepted.append(w / norm)

    weights = np.column_stack(accepted) if accepted else np.zeros((K + L, 0))
    basis = AugmentedBasis(base, functions, names, weights)
    report = {"dropped": dropped, "relative_residuals": residuals, "samples": M}
    return basis, report


def gram(system, estimator: str = EXACT_IDENTITY, samples=None, points: int = 40) -> GramMatrix:
    """Gram matrix of ``system`` under its sampling measure.

    ``exact_identity`` is only valid for the orthonormal Hermite basis.
    ``monte_carlo`` averages psi psi^T over ``samples`` and records
    per-entry standard errors; ``quadrature`` uses a tensor Gauss-Hermite rule
    with ``points`` nodes per dimension (small n only).
    """
    if estimator == EXACT_IDENTITY:
        if getattr(system, "kind", None) != HermiteBasis.kind:
            raise ValueError(f"exact identity Gram only holds for {HermiteBasis.kind} bases")
        return GramMatrix.identity(system.K)
    if estimator == MONTE_CARLO:
        if samples is None:
            raise ValueError("monte_carlo Gram needs samples from mu")
        phi = system.design(np.asarray(samples, dtype=float))
        M = phi.shape[0]
        G = phi.T @ phi / M
        G = 0.5 * (G + G.T)
        second = (phi**2).T @ (phi**2) / M
        se = np.sqrt(np.maximum(second - G**2, 0.0) / M)
        return GramMatrix(G, MONTE_CARLO, se)
    if estimator == QUADRATURE:
        nodes, weights = np.polynomial.hermite_e.hermegauss(points)
        weights = weights / weights.sum()
        n = system.n
        grids = np.meshgrid(*([nodes] * n), indexing="ij")
        y = np.column_stack([g.ravel() for g in grids])
        w = np.ones(y.shape[0])
        for wg in np.meshgrid(*([weights] * n), indexing="ij"):
            w *= wg.ravel()
        mu = system.mu
        x = np.exp(mu.m + mu.sigma_hat * y)
        phi = system.design(x)
        G = (phi * w[:, None]).T @ phi
        return GramMatrix(0.5 * (G + G.T), QUADRATURE)
    raise ValueError(f"unknown Gram estimator {estimator!r}")
