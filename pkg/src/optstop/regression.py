"""Coefficient estimators: least squares and pseudo regression.

``fit_standard`` solves the empirical least-squares problem with a
tall-skinny QR: every fixed-size row block of ``[N | y]`` is reduced to its R
factor, the stacked factors are reduced again, and the final triangular
system is solved by pivoted QR (LAPACK gelsy), which returns the
minimum-norm solution when the design is rank deficient.  The block layout
is fixed, so results do not depend on the number of threads.

``fit_pseudo`` replaces the random matrix N^T N / M by the known Gram matrix:
beta = G^{-1} N^T y / M.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .basis import GramMatrix
from .costs import householder_r_macs, triangular_solve_macs
from .sampling import RngStream, block_slices, map_blocks, standard_normals

STANDARD = "standard_lsq"
PSEUDO = "pseudo"
RANK_RCOND = 1e-10
QR_BLOCK_ROWS = 2048


class RankDeficiencyWarning(UserWarning):
    """Design matrix has effective rank below the number of basis functions."""


@dataclass(frozen=True)
class RegressionFit:
    beta: np.ndarray
    method: str
    K: int
    M: int
    rank: int | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.beta)):
            raise FloatingPointError("regression produced non-finite coefficients")

    def evaluate(self, design: np.ndarray) -> np.ndarray:
        return design @ self.beta


def _check_inputs(design, y):
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2 or y.shape != (design.shape[0],):
        raise ValueError(f"design {design.shape} and response {y.shape} do not match")
    if not (np.all(np.isfinite(design)) and np.all(np.isfinite(y))):
        raise ValueError("design and response must be finite")
    return design, y


def _r_factor(a, b) -> np.ndarray:
    """R factor of the Householder QR of [a | b]."""
    m, k = a.shape
    block = np.empty((m, k + 1), order="F")
    block[:, :k] = a
    block[:, k] = b
    qr, _, _, info = scipy.linalg.lapack.dgeqrf(block, overwrite_a=True)
    if info != 0:
        raise np.linalg.LinAlgError(f"dgeqrf failed with info={info}")
    return np.triu(qr[: min(m, k + 1)])


def fit_standard(design, y, *, threads: int = 1, counters=None, warn: bool = True) -> RegressionFit:
    design, y = _check_inputs(design, y)
    M, K = design.shape
    if M < K:
        raise ValueError(f"standard regression needs M >= K, got M={M}, K={K}")

    slices = block_slices(M, QR_BLOCK_ROWS)
    factors = map_blocks(lambda sl: _r_factor(design[sl], y[sl]), slices, threads)
    stacked = np.vstack(factors)
    R = _r_factor(stacked[:, :K], stacked[:, K]) if len(factors) > 1 else stacked
    if R.shape[0] < K + 1:
        R = np.vstack([R, np.zeros((K + 1 - R.shape[0], K + 1))])
    beta, _, rank, _ = scipy.linalg.lstsq(
        R[:K, :K], R[:K, K], cond=RANK_RCOND, lapack_driver="gelsy", check_finite=False)
    if counters is not None:
        macs = sum(householder_r_macs(sl.stop - sl.start, K + 1) for sl in slices)
        if len(factors) > 1:
            macs += householder_r_macs(stacked.shape[0], K + 1)
        counters.add_flops(macs + triangular_solve_macs(K))
    if warn and rank < K:
        warnings.warn(f"design has effective rank {rank} < K={K}; returning minimum-norm solution",
                      RankDeficiencyWarning, stacklevel=2)
    return RegressionFit(beta, STANDARD, K, M, int(rank))


def fit_standard_identical_rows(row, y, *, counters=None) -> RegressionFit:
    """Minimum-norm least squares when every design row equals ``row``.

    The fitted value at ``row`` is the sample mean of ``y``; solving this
    through QR is both wasteful and slow (the reduction underflows).
    """
    row = np.asarray(row, dtype=float)
    y = np.asarray(y, dtype=float)
    K, M = row.shape[0], y.shape[0]
    if M < K:
        raise ValueError(f"standard regression needs M >= K, got M={M}, K={K}")
    norm2 = float(row @ row)
    if counters is not None:
        counters.add_flops(M + 2 * K)
    if norm2 == 0.0:
        return RegressionFit(np.zeros(K), STANDARD, K, M, 0)
    return RegressionFit(row * (float(np.mean(y)) / norm2), STANDARD, K, M, 1)


def fit_pseudo(design, y, gram: GramMatrix, *, threads: int = 1, counters=None) -> RegressionFit:
    design, y = _check_inputs(design, y)
    M, K = design.shape
    if gram.K != K:
        raise ValueError(f"Gram matrix is {gram.K}x{gram.K} but design has K={K} columns")
    partial = map_blocks(lambda sl: design[sl].T @ y[sl], block_slices(M), threads)
    moments = np.sum(np.stack(partial), axis=0) / M
    beta = gram.solve(moments)
    if counters is not None:
        counters.add_flops(M * K + (0 if gram.is_identity else 2 * triangular_solve_macs(K)))
    return RegressionFit(np.asarray(beta, dtype=float), PSEUDO, K, M)


def eval_fit(fit: RegressionFit, system, x) -> np.ndarray:
    if fit.K != system.K:
        raise ValueError(f"fit has K={fit.K} but basis has K={system.K}")
    x = np.asarray(x, dtype=float)
    values = system.design(x.reshape(-1, system.n)) @ fit.beta
    return float(values[0]) if x.ndim == 1 else values


def truncate_fit(values, D: float, nonnegative: bool = False):
    """Clip regression values to [0, D] (nonnegative payoffs) or [-D, D]."""
    if not D > 0:
        raise ValueError("truncation level D must be > 0")
    return np.clip(values, 0.0 if nonnegative else -D, D)


def default_truncation(cashflows) -> float:
    """Truncation level for diagnostics: 1.5 times the largest observed cash flow."""
    top = float(np.max(cashflows))
    if not top > 0:
        raise ValueError("default truncation needs a positive observed cash flow")
    return 1.5 * top


# --------------------------------------------------------------------------
# Accuracy diagnostics on synthetic problems with a known target function
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticProblem:
    """Y = u(U) + noise_sd * eps with U ~ mu and eps standard normal."""

    mu: object
    u: object
    noise_sd: float = 0.0


def quadrature_rule(mu, points: int = 200):
    """Tensor Gauss-Hermite nodes (as states) and probability weights for mu."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(points)
    weights = weights / weights.sum()
    grids = np.meshgrid(*([nodes] * mu.n), indexing="ij")
    wgrids = np.meshgrid(*([weights] * mu.n), indexing="ij")
    y = np.column_stack([g.ravel() for g in grids])
    w = np.prod(np.column_stack([g.ravel() for g in wgrids]), axis=1)
    return np.exp(mu.m + mu.sigma_hat * y), w


def inner_products(problem: SyntheticProblem, basis, points: int = 200) -> np.ndarray:
    """<psi_k, u> under mu by Gauss-Hermite quadrature."""
    x, w = quadrature_rule(problem.mu, points if problem.mu.n == 1 else min(points, 40))
    return basis.design(x).T @ (w * problem.u(x))


def _l2_error(fit_beta, basis, problem, error_rule):
    x, w = error_rule
    diff = basis.design(x) @ fit_beta - problem.u(x)
    return float(np.sum(w * diff * diff))


def loglog_slope(xs, ys) -> float:
    xs, ys = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(xs, ys, 1)[0])


def mse_diagnostic(method: str, problem: SyntheticProblem, make_basis, grid, replications: int,
                   seed: int = 0, threads: int = 1, eval_samples: int = 100_000) -> dict:
    """Mean L2(mu) error of the fitted function over independent replications.

    ``make_basis(p)`` builds the basis for degree ``p``; ``grid`` is a list of
    ``(p, M)`` pairs.  For n = 1 the error integral uses a 200-point
    Gauss-Hermite rule, otherwise ``eval_samples`` fresh samples of mu.
    The projection (bias) term is computed from quadrature inner products,
    and for every K the log-log slope of (error - bias) against M is fitted.
    """
    if method not in (STANDARD, PSEUDO):
        raise ValueError(f"unknown method {method!r}")
    stream = RngStream(seed).child("mse")
    mu = problem.mu
    if mu.n == 1:
        error_rule = quadrature_rule(mu, 200)
    else:
        x = mu.sample(eval_samples, stream.child("error-points"))
        error_rule = (x, np.full(eval_samples, 1.0 / eval_samples))

    rows = []
    for p, M in grid:
        basis = make_basis(p)
        gram = basis.gram()
        alpha = inner_products(problem, basis)
        x_q, w_q = error_rule
        bias = max(float(np.sum(w_q * problem.u(x_q) ** 2)) - float(alpha @ alpha), 0.0)
        errors = np.empty(replications)
        betas = np.empty((replications, basis.K))
        for rep in range(replications):
            rs = stream.child(p, M, rep)
            U = mu.sample(M, rs.child("U"), threads)
            Y = problem.u(U)
            if problem.noise_sd > 0:
                Y = Y + problem.noise_sd * standard_normals(rs.child("noise"), M, (), threads)
            design = basis.design(U)
            if method == PSEUDO:
                fit = fit_pseudo(design, Y, gram, threads=threads)
            else:
                fit = fit_standard(design, Y, threads=threads)
            betas[rep] = fit.beta
            errors[rep] = _l2_error(fit.beta, basis, problem, error_rule)
        rows.append({
            "p": p, "K": basis.K, "M": M,
            "mean_error": float(errors.mean()),
            "se_error": float(errors.std(ddof=1) / math.sqrt(replications)) if replications > 1 else float("nan"),
            "bias": bias,
            "beta_mean": betas.mean(axis=0).tolist(),
            "beta_se": (betas.std(axis=0, ddof=1) / math.sqrt(replications)).tolist() if replications > 1 else None,
            "alpha": alpha.tolist(),
        })

    slopes = {}
    for K in sorted({row["K"] for row in rows}):
        sub = [row for row in rows if row["K"] == K]
        if len(sub) >= 2:
            excess = [max(row["mean_error"] - row["bias"], 1e-300) for row in sub]
            slopes[K] = loglog_slope([row["M"] for row in sub], excess)
    return {"method": method, "rows": rows, "slopes": slopes}
