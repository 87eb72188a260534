"""Exponential-utility indifference pricing on finite event trees.

The backward induction runs in a compiled extension when it is available
and in numpy otherwise; ``entropic_pricer.kernels.BACKEND`` reports which.
"""
from .errors import *  # noqa: F401,F403
from .kernels import BACKEND
from .market import (AgentProfile, MarketTree, Scenario, TradingStrategy, build_tree,
                     gains_process, is_replicable, load_scenario, replicate, risk_equivalent,
                     terminal_gains, tree_from_levels)
from .measures import (MartingaleMeasure, check_no_arbitrage, minimal_entropy_measure, penalty,
                       price_bounds, random_martingale_measure, relative_entropy, tilted_measure,
                       verify_martingale)
from .pricing import (PriceQuote, buyer_price, buyer_value, dual_optimizer, indirect_utility,
                      price_process, value_function, writer_price, writer_value)
from .hedging import kw_decompose, optimal_strategy, projected_variance, residual_risk
from .agreement import (agreement_interval, agreement_report, is_agreeable, max_excess_score,
                        optimal_claim, score)
from .asymptotics import (approx_interval_width, approx_peq, expand_price, expansion,
                          price_gradient, price_hessian, small_trade_direction)
from .equilibrium import EquilibriumResult, demand, solve_pepq, verify_clearing

__version__ = "0.1.0"
