"""Dynamic assortment optimization under a contextual multinomial-logit choice model."""
from .assortment import (SolveReport, Subproblem, approx_multivariate, approx_univariate, brute_force, ci, estr,
                         exact_revenue_oracle, greedy_swap, objective)
from .core import (NO_PURCHASE, ContextSlice, ObservationLog, choice_probabilities, cumulative_fisher,
                   empirical_fisher_m, expected_revenue, instance_stats, log_likelihood, sample_purchase)
from .estimation import MleConfig, MleResult, local_mle, pilot_mle
from .kernels import BACKEND
from .policy import MleUcbPolicy, MnlUcbBaseline, UcbConfig, default_hyperparams, ucb_bound
from .sim import InstanceConfig, PolicySpec, run_episode, run_replications

__version__ = "0.1.0"
