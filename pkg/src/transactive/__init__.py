"""Transactive energy market clearing on radial distribution feeders."""
from .agents import BuyerParams, SellerParams, buyer_best_response, seller_best_response, total_welfare
from .coordinator import ClearingConfig, ClearingResult, MarketClearing, clear_market
from .exceptions import (
    ContractError,
    GridTooLargeError,
    InfeasibleMarketError,
    MarketError,
    PowerFlowDivergence,
    ScenarioParseError,
    StepSizeError,
    TopologyError,
)
from .oracle import CentralizedClearing, brute_force_clear, centralized_clear, gauss_seidel_power_flow
from .powerflow import Line, Network, check_limits, compute_ptdf, solve_power_flow
from .scenario import Scenario, generate_scenario, load_scenario, save_scenario

__version__ = "0.1.0"

__all__ = [
    "BuyerParams",
    "SellerParams",
    "buyer_best_response",
    "seller_best_response",
    "total_welfare",
    "ClearingConfig",
    "ClearingResult",
    "MarketClearing",
    "clear_market",
    "ContractError",
    "GridTooLargeError",
    "InfeasibleMarketError",
    "MarketError",
    "PowerFlowDivergence",
    "ScenarioParseError",
    "StepSizeError",
    "TopologyError",
    "CentralizedClearing",
    "brute_force_clear",
    "centralized_clear",
    "gauss_seidel_power_flow",
    "Line",
    "Network",
    "check_limits",
    "compute_ptdf",
    "solve_power_flow",
    "Scenario",
    "generate_scenario",
    "load_scenario",
    "save_scenario",
]
