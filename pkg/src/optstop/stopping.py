"""Backward induction for Bermudan optimal stopping.

Four ways to build the continuation functions c_0..c_{J-1} (c_J = 0):

* ``tv_standard``: value-function recursion, least squares on paths from x0.
* ``tv_pseudo``: value-function recursion, pseudo regression on samples
  (U, one step from U) with U drawn from the sampling measure.
* ``ls_standard``: stopped cash-flow recursion, least squares on paths from x0.
* ``ls_pseudo``: stopped cash-flow recursion, pseudo regression on
  trajectories restarted from U.

Inequality conventions are fixed: the least-squares cash-flow update and the
policy evaluation exercise on ``f > c``; the pseudo cash-flow recursion
exercises on ``f >= c``.

A problem (``model``) supplies ``J``, ``start``, ``homogeneous``,
``cashflow(j, x)`` (discounted payoff) and ``transition(j, x, rng)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .regression import fit_pseudo, fit_standard, fit_standard_identical_rows, truncate_fit
from .sampling import (FIXED_X0, SAMPLED_FROM_MU, RngStream, TrajectoryBatch, one_step_samples,
                       shift_view, simulate_paths)

TV_STANDARD = "tv_standard"
TV_PSEUDO = "tv_pseudo"
LS_STANDARD = "ls_standard"
LS_PSEUDO = "ls_pseudo"
ALGORITHMS = (TV_STANDARD, TV_PSEUDO, LS_STANDARD, LS_PSEUDO)


@dataclass(frozen=True)
class StoppingPolicy:
    fits: tuple  # fits[j] defines c_j for j = 0..J-1
    basis: object  # one basis, or a tuple with one basis per date
    method: str
    clip: float | None = None

    @property
    def J(self) -> int:
        return len(self.fits)

    def basis_at(self, j: int):
        return self.basis[j] if isinstance(self.basis, tuple) else self.basis

    def _values(self, raw: np.ndarray) -> np.ndarray:
        if self.clip is None:
            return raw
        return truncate_fit(raw, self.clip, nonnegative=True)

    def continuation(self, j: int, x: np.ndarray, counters=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if j == self.J:
            return np.zeros(x.shape[0])
        design = self.basis_at(j).design(x, counters)
        if counters is not None:
            counters.add_flops(design.size)
        return self._values(design @ self.fits[j].beta)

    def export(self) -> dict:
        return {
            "method": self.method,
            "basis": ([b.descriptor() for b in self.basis] if isinstance(self.basis, tuple)
                      else self.basis.descriptor()),
            "clip": self.clip,
            "coefficients": [fit.beta.tolist() for fit in self.fits],
        }


@dataclass(frozen=True)
class PriceEstimate:
    value: float
    std_error: float
    method: str
    M_eval: int

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("standard error must be nonnegative")


def first_exercise(cashflows: np.ndarray, continuation: np.ndarray, strict: bool):
    """Cash flow at the first column where exercise beats continuation.

    Columns are consecutive dates, the last being the final date for the
    rows; a row that never triggers takes its last-column cash flow.
    Returns ``(payoff, column_index)``.
    """
    stop = cashflows > continuation if strict else cashflows >= continuation
    stop[:, -1] = True
    idx = np.argmax(stop, axis=1)
    return cashflows[np.arange(cashflows.shape[0]), idx], idx


def _check_batch(batch: TrajectoryBatch, basis, model):
    if batch.origin != FIXED_X0:
        raise ValueError("standard regression runs on paths started at x0")
    if batch.J != model.J:
        raise ValueError(f"batch has J={batch.J} but model has J={model.J}")
    if batch.M < basis.K:
        raise ValueError(f"standard regression needs M >= K, got M={batch.M}, K={basis.K}")


def _regress_standard(basis, x, y, threads, counters):
    """Least-squares fit of ``y`` on the basis at states ``x``; returns (fit, design)."""
    if np.all(x == x[0]):
        # Paths still at the common origin: the design is rank one by
        # construction and the minimum-norm fit reproduces the sample mean.
        row = basis.design(x[:1], counters)
        fit = fit_standard_identical_rows(row[0], y, counters=counters)
        return fit, np.broadcast_to(row, (x.shape[0], row.shape[1]))
    design = basis.design(x, counters)
    return fit_standard(design, y, threads=threads, counters=counters), design


def tv_standard(batch: TrajectoryBatch, basis, model, *, threads: int = 1,
                counters=None) -> StoppingPolicy:
    _check_batch(batch, basis, model)
    paths, J = batch.paths, batch.J
    fits = [None] * J
    cont = np.zeros(batch.M)
    for j in range(J, 0, -1):
        y = np.maximum(model.cashflow(j, paths[:, j]), cont)
        fit, design = _regress_standard(basis, paths[:, j - 1], y, threads, counters)
        cont = design @ fit.beta
        if counters is not None:
            counters.add_flops(design.size)
        fits[j - 1] = fit
    return StoppingPolicy(tuple(fits), basis, TV_STANDARD)


def ls_standard(batch: TrajectoryBatch, basis, model, *, threads: int = 1,
                counters=None) -> StoppingPolicy:
    _check_batch(batch, basis, model)
    paths, J = batch.paths, batch.J
    fits = [None] * J
    cash = model.cashflow(J, paths[:, J])
    for j in range(J, 0, -1):
        x = paths[:, j - 1]
        fit, design = _regress_standard(basis, x, cash, threads, counters)
        cont = design @ fit.beta
        if counters is not None:
            counters.add_flops(design.size)
        f = model.cashflow(j - 1, x)
        cash = np.where(f > cont, f, cash)
        fits[j - 1] = fit
    return StoppingPolicy(tuple(fits), basis, LS_STANDARD)


def _resolve_reuse(reuse, model, per_date: bool) -> bool:
    if reuse and per_date:
        raise ValueError("sample reuse across dates requires one sampling measure for all dates")
    if reuse is None:
        return bool(model.homogeneous) and not per_date
    if reuse and not model.homogeneous:
        raise ValueError("sample reuse across dates requires a time-homogeneous model")
    return bool(reuse)


def _per_date(mu, basis, gram, J):
    """Normalise (mu, basis, gram) to per-date lists; the flag says if they vary by date."""
    per_date = isinstance(mu, (list, tuple))
    if not per_date:
        return [mu] * J, [basis] * J, [gram] * J, False
    if not (isinstance(basis, (list, tuple)) and isinstance(gram, (list, tuple))):
        raise ValueError("per-date measures need per-date bases and Gram matrices")
    if not len(mu) == len(basis) == len(gram) == J:
        raise ValueError(f"need {J} per-date measures, bases and Gram matrices")
    return list(mu), list(basis), list(gram), True


def _clipped(values, clip):
    return values if clip is None else truncate_fit(values, clip, nonnegative=True)


def tv_pseudo(model, mu, basis, gram, M: int, stream: RngStream, *, reuse=None, clip=None,
              threads: int = 1, counters=None) -> StoppingPolicy:
    """Pseudo-regression value recursion.

    U ~ mu is drawn once and its design matrix reused at every date.  With
    ``reuse`` (default for homogeneous models) the one-step samples from U are
    also drawn once; otherwise they are redrawn for every date.

    ``mu``, ``basis`` and ``gram`` may instead be sequences indexed by date
    (entry j serves the fit of c_j); U is then drawn afresh for every date.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    J = model.J
    mus, bases, grams, per_date = _per_date(mu, basis, gram, J)
    reuse = _resolve_reuse(reuse, model, per_date)
    fits = [None] * J
    U = design_u = X = design_x = None
    for j in range(J, 0, -1):
        if U is None or per_date:
            U = mus[j - 1].sample(M, stream.child("mu", j) if per_date else stream.child("mu"),
                                  threads)
            design_u = bases[j - 1].design(U, counters)
            X = None
        if X is None or not reuse:
            X = one_step_samples(model, j - 1, U, stream.child("onestep", 0 if reuse else j),
                                 threads=threads, counters=counters)
            design_x = None
        y = model.cashflow(j, X)
        if j < J:
            if design_x is None:
                design_x = bases[j].design(X, counters)
            cont = _clipped(design_x @ fits[j].beta, clip)
            if counters is not None:
                counters.add_flops(design_x.size)
            y = np.maximum(y, cont)
        fits[j - 1] = fit_pseudo(design_u, y, grams[j - 1], threads=threads, counters=counters)
    return StoppingPolicy(tuple(fits), tuple(bases) if per_date else basis, TV_PSEUDO, clip)


def ls_pseudo(model, mu, basis, gram, M: int, stream: RngStream, *, reuse=None, clip=None,
              threads: int = 1, counters=None) -> StoppingPolicy:
    """Pseudo-regression stopped cash-flow recursion.

    With ``reuse`` (default for homogeneous models) one batch of full
    trajectories from U ~ mu serves every date through a time shift;
    otherwise fresh starting points and sub-trajectories are drawn per date.
    Per-date ``mu``/``basis``/``gram`` sequences work as in :func:`tv_pseudo`.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    J = model.J
    mus, bases, grams, per_date = _per_date(mu, basis, gram, J)
    reuse = _resolve_reuse(reuse, model, per_date)
    if reuse:
        return _ls_pseudo_shifted(model, mu, basis, gram, M, stream, clip, threads, counters)
    fits = [None] * J
    for j in range(J, 0, -1):
        rs = stream.child("date", j)
        U = mus[j - 1].sample(M, rs.child("mu"), threads)
        design_u = bases[j - 1].design(U, counters)
        x = U
        F, C = [], []
        for r in range(j, J + 1):
            x = one_step_samples(model, r - 1, x, rs.child("step", r), threads=threads,
                                 counters=counters)
            F.append(model.cashflow(r, x))
            if r < J:
                design = bases[r].design(x, counters)
                C.append(_clipped(design @ fits[r].beta, clip))
                if counters is not None:
                    counters.add_flops(design.size)
            else:
                C.append(np.zeros(M))
        y, _ = first_exercise(np.column_stack(F), np.column_stack(C), strict=False)
        fits[j - 1] = fit_pseudo(design_u, y, grams[j - 1], threads=threads, counters=counters)
    return StoppingPolicy(tuple(fits), tuple(bases) if per_date else basis, LS_PSEUDO, clip)


def _ls_pseudo_shifted(model, mu, basis, gram, M, stream, clip, threads, counters):
    J = model.J
    batch = simulate_paths(model, SAMPLED_FROM_MU, M, stream.child("paths"), mu=mu,
                           threads=threads, counters=counters)
    design_u = basis.design(batch.paths[:, 0], counters)
    designs = {c: basis.design(batch.paths[:, c], counters) for c in range(1, J)}
    # cont[(r, c)]: c_r evaluated on column c of the batch
    cont = {}
    fits = [None] * J
    for j in range(J, 0, -1):
        view = shift_view(batch, j)
        F = np.column_stack([model.cashflow(r, view.column(r)) for r in range(j, J + 1)])
        C = np.column_stack([cont[(r, r - j + 1)] for r in range(j, J)] + [np.zeros(M)])
        y, _ = first_exercise(F, C, strict=False)
        fit = fit_pseudo(design_u, y, gram, threads=threads, counters=counters)
        fits[j - 1] = fit
        # c_{j-1} is read later on columns 1..j-1 (date j-1 seen from steps j' < j)
        for c in range(1, j):
            cont[(j - 1, c)] = _clipped(designs[c] @ fit.beta, clip)
            if counters is not None:
                counters.add_flops(designs[c].size)
        designs.pop(j - 1, None)
        for r in range(j, J):
            cont.pop((r, r - j + 1), None)
    return StoppingPolicy(tuple(fits), basis, LS_PSEUDO, clip)


def price_at_origin(policy: StoppingPolicy, model) -> float:
    x0 = np.asarray(model.start, dtype=float).reshape(1, -1)
    return float(max(model.cashflow(0, x0)[0], policy.continuation(0, x0)[0]))


def value_function(policy: StoppingPolicy, model, j: int, x) -> np.ndarray:
    """v_j = max(f_j, c_j) on states ``x`` of shape (M, n)."""
    x = np.asarray(x, dtype=float)
    return np.maximum(model.cashflow(j, x), policy.continuation(j, x))


def evaluate_policy(policy, model, M_eval: int, stream: RngStream, *, threads: int = 1,
                    counters=None) -> PriceEstimate:
    """Lower-bound price: stop fresh paths at the first date with f_j > c_j."""
    if M_eval < 1:
        raise ValueError("M_eval must be >= 1")
    batch = simulate_paths(model, FIXED_X0, M_eval, stream, threads=threads, counters=counters)
    J = model.J
    F = np.empty((M_eval, J + 1))
    C = np.empty((M_eval, J + 1))
    for j in range(J + 1):
        x = batch.paths[:, j]
        F[:, j] = model.cashflow(j, x)
        if j == 0:
            # every path sits at the same starting state
            C[:, 0] = policy.continuation(0, x[:1], counters)[0]
        else:
            C[:, j] = policy.continuation(j, x, counters)
    payoff, _ = first_exercise(F, C, strict=True)
    se = float(payoff.std(ddof=1) / math.sqrt(M_eval)) if M_eval > 1 else 0.0
    return PriceEstimate(float(payoff.mean()), se, getattr(policy, "method", "policy"), M_eval)
