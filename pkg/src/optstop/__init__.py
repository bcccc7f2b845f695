"""Regression-based pricing of Bermudan options by backward induction.

Least-squares and pseudo regression variants of the value-function and
stopped-cash-flow recursions, with exact oracles for verification.
"""

from .basis import GramMatrix, HermiteBasis, MultiIndexSet, basis_size, enumerate_indices, gram
from .costs import CostCounters
from .market import AssetState, MarketModel, discounted_payoff, payoff, step
from .regression import RegressionFit, fit_pseudo, fit_standard, mse_diagnostic
from .sampling import (FIXED_X0, SAMPLED_FROM_MU, MuParams, RngStream, TrajectoryBatch,
                       sample_mu, shift_view, simulate_paths)
from .stopping import (LS_PSEUDO, LS_STANDARD, TV_PSEUDO, TV_STANDARD, PriceEstimate,
                       StoppingPolicy, evaluate_policy, ls_pseudo, ls_standard, price_at_origin,
                       tv_pseudo, tv_standard)

__version__ = "0.1.0"
