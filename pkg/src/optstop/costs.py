"""Operation counters for the unit-cost model.

One unit is charged for each of: generating one sample of X_{j+1} given X_j,
evaluating one basis function at one point, and one multiply-accumulate in a
regression solve or matrix product.  Counts are exact integers that depend
only on problem sizes, never on timing or thread count.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass
class CostCounters:
    sim_steps: int = 0
    basis_evals: int = 0
    flops: int = 0

    def add_sim(self, count: int) -> None:
        self.sim_steps += int(count)

    def add_basis(self, rows: int, K: int) -> None:
        self.basis_evals += int(rows) * int(K)

    def add_flops(self, count: int) -> None:
        self.flops += int(count)

    def as_dict(self) -> dict:
        return asdict(self)

    def total(self) -> int:
        return self.sim_steps + self.basis_evals + self.flops


def householder_r_macs(rows: int, cols: int) -> int:
    """Multiply-accumulates for the R factor of a Householder QR.

    Uses the textbook count n^2 (m - n/3) for an m x n matrix with m >= n
    (and m^2 (n - m/3) for wide blocks).
    """
    m, n = int(rows), int(cols)
    if m >= n:
        return (n * n * (3 * m - n)) // 3
    return (m * m * (3 * n - m)) // 3


def triangular_solve_macs(K: int) -> int:
    return (int(K) * (int(K) + 1)) // 2
