"""Ground-truth engines: exact dynamic programming on finite chains and a
binomial tree for one asset.

A finite chain can be fed to the pseudo-regression algorithms through
:class:`ChainProblem`, with the exhaustive indicator basis and a stratified
uniform measure over states.  The projection is then exact, so any deviation
from :func:`chain_dp` is pure Monte Carlo error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .basis import GramMatrix
from .sampling import RngStream
from .stopping import LS_PSEUDO, TV_PSEUDO, ls_pseudo, price_at_origin, tv_pseudo

ROW_SUM_TOL = 1e-12
DEFAULT_STEPS_PER_PERIOD = 400


# --------------------------------------------------------------------------
# Finite chains
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FiniteChain:
    """Markov chain on states 0..s-1 with (already discounted) payoffs.

    ``payoffs[j, i]`` is the cash flow for stopping at date j in state i and
    ``transitions[j]`` moves the chain from date j to j + 1.
    """

    payoffs: np.ndarray  # (J + 1, s)
    transitions: tuple  # J matrices of shape (s, s)
    start: int = 0
    labels: tuple | None = None
    name: str = "chain"

    def __post_init__(self):
        Z = np.array(self.payoffs, dtype=float)
        if Z.ndim != 2 or Z.shape[0] < 2:
            raise ValueError(f"payoffs must have shape (J+1, s) with J >= 1, got {Z.shape}")
        if np.any(Z < 0) or not np.all(np.isfinite(Z)):
            raise ValueError("payoffs must be finite and nonnegative")
        J, s = Z.shape[0] - 1, Z.shape[1]
        mats = [np.array(P, dtype=float) for P in self.transitions]
        if len(mats) == 1 and J > 1:
            mats = mats * J
        if len(mats) != J:
            raise ValueError(f"need 1 or J={J} transition matrices, got {len(mats)}")
        for j, P in enumerate(mats):
            if P.shape != (s, s):
                raise ValueError(f"transition {j} has shape {P.shape}, expected ({s}, {s})")
            if np.any(P < 0):
                raise ValueError(f"transition {j} has negative entries")
            bad = np.abs(P.sum(axis=1) - 1.0)
            if bad.max() > ROW_SUM_TOL:
                raise ValueError(f"transition {j} row {int(bad.argmax())} sums to "
                                 f"{P[bad.argmax()].sum()!r}, not 1")
        if not 0 <= self.start < s:
            raise ValueError(f"start state {self.start} outside 0..{s - 1}")
        if self.labels is not None and len(self.labels) != s:
            raise ValueError("need one label per state")
        Z.flags.writeable = False
        for P in mats:
            P.flags.writeable = False
        object.__setattr__(self, "payoffs", Z)
        object.__setattr__(self, "transitions", tuple(mats))

    @property
    def J(self) -> int:
        return self.payoffs.shape[0] - 1

    @property
    def s(self) -> int:
        return self.payoffs.shape[1]

    @property
    def homogeneous(self) -> bool:
        return all(np.array_equal(P, self.transitions[0]) for P in self.transitions)

    @property
    def deterministic(self) -> bool:
        return all(np.all((P == 0) | (P == 1)) for P in self.transitions)


@dataclass(frozen=True)
class ChainSolution:
    values: np.ndarray  # v_j(i)
    continuation: np.ndarray  # c_j(i) = E[v_{j+1} | X_j = i], zero at J
    stop: np.ndarray  # optimal stopping region: Z_j >= c_j
    start: int

    @property
    def value(self) -> float:
        return float(self.values[0, self.start])


def chain_dp(chain: FiniteChain) -> ChainSolution:
    """Exact backward recursion v_j = max(Z_j, P_j v_{j+1}), v_J = Z_J."""
    J, s = chain.J, chain.s
    values = np.empty((J + 1, s))
    cont = np.zeros((J + 1, s))
    values[J] = chain.payoffs[J]
    for j in range(J - 1, -1, -1):
        cont[j] = chain.transitions[j] @ values[j + 1]
        values[j] = np.maximum(chain.payoffs[j], cont[j])
    stop = chain.payoffs >= cont
    return ChainSolution(values, cont, stop, chain.start)


def load_chain(path) -> FiniteChain:
    """Read a chain from JSON.

    Keys: ``payoffs`` (list over dates of per-state lists), either
    ``transition`` (one matrix used at every step) or ``transitions`` (one per
    step), and optionally ``start``, ``states`` (labels) and ``name``.
    """
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: cannot read chain file: {exc}") from exc
    if "transitions" in spec:
        mats = spec["transitions"]
    elif "transition" in spec:
        mats = [spec["transition"]]
    else:
        raise ValueError(f"{path}: missing 'transition' or 'transitions'")
    labels = spec.get("states")
    return FiniteChain(
        payoffs=np.asarray(spec["payoffs"], dtype=float),
        transitions=tuple(mats),
        start=int(spec.get("start", 0)),
        labels=tuple(labels) if labels is not None else None,
        name=spec.get("name", path.stem),
    )


def fixture_chains() -> list[FiniteChain]:
    """The chains bundled with the package, sorted by file name."""
    folder = resources.files("optstop") / "data" / "chains"
    return [load_chain(Path(str(f))) for f in sorted(folder.iterdir(), key=lambda f: f.name)
            if f.name.endswith(".json")]


class ChainProblem:
    """Adapter exposing a chain through the model interface of the stopping code.

    States are carried as floats of shape (M, 1) holding the state index.
    """

    n = 1

    def __init__(self, chain: FiniteChain):
        self.chain = chain
        self._cum = [np.cumsum(P, axis=1) for P in chain.transitions]

    @property
    def J(self) -> int:
        return self.chain.J

    @property
    def homogeneous(self) -> bool:
        return self.chain.homogeneous

    @property
    def start(self) -> np.ndarray:
        return np.array([float(self.chain.start)])

    def cashflow(self, j: int, x: np.ndarray) -> np.ndarray:
        return self.chain.payoffs[j, _state_index(x)]

    def transition(self, j: int, x: np.ndarray, rng) -> np.ndarray:
        idx = _state_index(x)
        cum = self._cum[j][idx]
        u = rng.random(idx.shape[0])
        nxt = np.minimum((u[:, None] >= cum).sum(axis=1), self.chain.s - 1)
        return nxt.astype(float).reshape(x.shape)


def _state_index(x) -> np.ndarray:
    return np.asarray(x).reshape(-1).astype(np.intp)


@dataclass(frozen=True)
class UniformStates:
    """Uniform measure on 0..s-1, sampled by stratification.

    Row m gets state m mod s, so every state appears exactly M/s times when
    s divides M.  Chain transitions supply all the randomness.
    """

    s: int
    n: int = 1

    def sample(self, count: int, stream=None, threads: int = 1) -> np.ndarray:
        if count < 1:
            raise ValueError("count must be >= 1")
        return (np.arange(count) % self.s).astype(float).reshape(count, 1)

    def to_dict(self) -> dict:
        return {"kind": "uniform_states", "s": self.s}


class IndicatorBasis:
    """psi_i = sqrt(s) * 1{state = i}: orthonormal under the uniform measure."""

    kind = "state_indicator"
    n = 1

    def __init__(self, s: int):
        self.s = s

    @property
    def K(self) -> int:
        return self.s

    def design(self, x: np.ndarray, counters=None) -> np.ndarray:
        idx = _state_index(x)
        out = np.zeros((idx.shape[0], self.s))
        out[np.arange(idx.shape[0]), idx] = math.sqrt(self.s)
        if counters is not None:
            counters.add_basis(idx.shape[0], self.s)
        return out

    def gram(self) -> GramMatrix:
        return GramMatrix.identity(self.s)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "K": self.s}


@dataclass(frozen=True)
class ChainComparison:
    algorithm: str
    M: int
    exact: ChainSolution
    estimated: np.ndarray  # c_bar_j(i), rows j = 0..J-1
    errors: np.ndarray  # L2(mu) error per date
    std_errors: np.ndarray  # estimated Monte Carlo scale of each error
    v0: float

    @property
    def within(self) -> np.ndarray:
        """Per-date check: error below 4 estimated SEs (or 1e-12 when exact)."""
        return self.errors <= np.maximum(4 * self.std_errors, 1e-12)

    def as_dict(self) -> dict:
        return {
            "algorithm": self.algorithm, "M": self.M,
            "exact_value": self.exact.value, "v0": self.v0,
            "errors": self.errors.tolist(), "std_errors": self.std_errors.tolist(),
            "within": self.within.tolist(),
        }


def _transfer_norm(chain: FiniteChain, j: int, r: int) -> float:
    """L2(uniform) operator norm of the transition product from date j to r."""
    P = np.eye(chain.s)
    for k in range(j, r):
        P = P @ chain.transitions[k]
    return float(np.linalg.norm(P, 2))


def _response_spread(chain: FiniteChain, exact: ChainSolution, algorithm: str) -> np.ndarray:
    """Std deviation of the regression response given X_j = i under the exact policy.

    Row j refers to the fit of c_j; the response is max(Z, c)_{j+1} for the
    value recursion and the optimally stopped cash flow for the cash-flow
    recursion.
    """
    J, s = chain.J, chain.s
    spread = np.zeros((J, s))
    if algorithm == TV_PSEUDO:
        for j in range(J):
            v = exact.values[j + 1]
            mean = chain.transitions[j] @ v
            spread[j] = np.sqrt(np.maximum(chain.transitions[j] @ v**2 - mean**2, 0.0))
        return spread
    # second moment of the stopped cash flow from date j+1 on, by backward recursion
    second = chain.payoffs[J] ** 2
    for j in range(J - 1, -1, -1):
        mean = exact.continuation[j]
        m2 = chain.transitions[j] @ second
        spread[j] = np.sqrt(np.maximum(m2 - mean**2, 0.0))
        # exact stopping rule with the weak inequality used by the recursion
        second = np.where(exact.stop[j], chain.payoffs[j] ** 2, m2)
    return spread


def embed_chain_pricing(chain: FiniteChain, algorithm: str, M: int, seed: int = 0, *,
                        reuse=None, threads: int = 1) -> ChainComparison:
    """Run a pseudo-regression algorithm on the chain and compare with :func:`chain_dp`.

    The per-date standard errors combine the sampling error of each fit,
    sqrt(mean_i Var(y | i) * s / M), with the errors propagated from later
    dates through the transition operators.
    """
    if algorithm not in (TV_PSEUDO, LS_PSEUDO):
        raise ValueError(f"chain embedding supports {TV_PSEUDO} and {LS_PSEUDO}, got {algorithm!r}")
    problem = ChainProblem(chain)
    basis = IndicatorBasis(chain.s)
    mu = UniformStates(chain.s)
    run = tv_pseudo if algorithm == TV_PSEUDO else ls_pseudo
    policy = run(problem, mu, basis, basis.gram(), M, RngStream(seed).child("chain", algorithm),
                 reuse=reuse, threads=threads)
    exact = chain_dp(chain)
    J, s = chain.J, chain.s
    states = np.arange(s, dtype=float).reshape(s, 1)
    estimated = np.vstack([policy.continuation(j, states) for j in range(J)])
    errors = np.sqrt(np.mean((estimated - exact.continuation[:J]) ** 2, axis=1))

    sampling = np.sqrt(np.mean(_response_spread(chain, exact, algorithm) ** 2, axis=1) * s / M)
    se = np.zeros(J)
    for j in range(J - 1, -1, -1):
        if algorithm == TV_PSEUDO:
            later = _transfer_norm(chain, j, j + 1) * se[j + 1] if j + 1 < J else 0.0
        else:
            later = sum(_transfer_norm(chain, j, r) * se[r] for r in range(j + 1, J))
        se[j] = sampling[j] + later
    v0 = price_at_origin(policy, problem)
    return ChainComparison(algorithm, M, exact, estimated, errors, se, v0)


# --------------------------------------------------------------------------
# Binomial tree for one asset
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TreeSpec:
    model: object
    steps_per_period: int = DEFAULT_STEPS_PER_PERIOD

    def __post_init__(self):
        if self.model.n != 1:
            raise ValueError(f"the binomial tree prices one asset, got n={self.model.n}")
        if int(self.steps_per_period) != self.steps_per_period or self.steps_per_period < 1:
            raise ValueError("steps_per_period must be a positive integer")

    @property
    def levels(self) -> int:
        return self.steps_per_period * self.model.J


def tree_price(spec: TreeSpec, exercise_dates=None) -> float:
    """Recombining Cox-Ross-Rubinstein tree, exercise only at the given dates.

    ``exercise_dates`` are date indices in 0..J (default: all of them).  The
    up-probability uses the dividend-adjusted drift r - delta.
    """
    model = spec.model
    J, k = model.J, spec.steps_per_period
    dates = set(range(J + 1)) if exercise_dates is None else {int(d) for d in exercise_dates}
    if not dates or min(dates) < 0 or max(dates) > J:
        raise ValueError(f"exercise dates must be a nonempty subset of 0..{J}")
    N = spec.levels
    dt = model.T / N
    u = math.exp(model.sigma * math.sqrt(dt))
    d = 1.0 / u
    q = (math.exp((model.r - model.delta) * dt) - d) / (u - d)
    if not 0 < q < 1:
        raise ValueError(f"tree is not arbitrage free (q={q:.4f}); increase steps_per_period")
    disc = math.exp(-model.r * dt)

    def spot(level):
        return model.x0 * u ** (2.0 * np.arange(level + 1) - level)

    payoff = lambda level: model.intrinsic(spot(level)[:, None])
    values = payoff(N) if J in dates else np.zeros(N + 1)
    for level in range(N - 1, -1, -1):
        # node i at this level has i up-moves
        values = disc * (q * values[1:] + (1 - q) * values[:-1])
        if level % k == 0 and level // k in dates:
            values = np.maximum(values, payoff(level))
    return float(values[0])
