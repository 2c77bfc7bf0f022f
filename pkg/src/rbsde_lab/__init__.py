"""BSDEs and reflected BSDEs on finite scenario trees."""
from .bsde import (
    AffineDriver,
    BsdeSolution,
    Driver,
    FunctionDriver,
    InfAffineDriver,
    ZeroDriver,
    doob_meyer,
    g_expectation,
    solve_bsde,
)
from .market import MarketSpec, build_market, crr_oracle, price_american_bounds, price_european_bounds
from .priors import PriorFamily, kappa_driver, measure_from_theta, robust_expectation_oracle, scenario_driver
from .rbsde import RbsdeSolution, minimax_bounds, optimal_stopping, solve_penalized, solve_rbsde
from .skorohod import solve_skorohod
from .tree import ScenarioTree, build_tree, node_stats

__version__ = "0.1.0"
