"""Input validation helpers shared by the estimators and the CLI."""
from __future__ import annotations

import math
from typing import TYPE_CHECKING

from .exceptions import ContractError, InfeasibleMarketError

if TYPE_CHECKING:
    from .coordinator import ClearingConfig
    from .scenario import Scenario


def check_scenario(scenario: "Scenario") -> "Scenario":
    """Raise ``ContractError`` unless every player sits on a network bus."""
    if not scenario.sellers or not scenario.buyers:
        raise ContractError("a market needs at least one seller and one buyer")
    for role, players in (("seller", scenario.sellers), ("buyer", scenario.buyers)):
        for i, p in enumerate(players):
            if p.node not in scenario.network._index:
                raise ContractError(f"{role} {i} sits on node {p.node!r}, which is not a load bus")
    return scenario


def feasibility_window(scenario: "Scenario") -> tuple[float, float]:
    lo = max(sum(p.s_min for p in scenario.sellers), sum(p.d_min for p in scenario.buyers))
    hi = min(sum(p.s_max for p in scenario.sellers), sum(p.d_max for p in scenario.buyers))
    return lo, hi


def check_feasible(scenario: "Scenario") -> "Scenario":
    check_scenario(scenario)
    lo, hi = feasibility_window(scenario)
    if lo > hi + 1e-12:
        raise InfeasibleMarketError(
            f"no balanced allocation exists: total volume must lie in [{lo:g}, {hi:g}] kW"
        )
    return scenario


def check_config(config: "ClearingConfig") -> "ClearingConfig":
    if not config.xi > 0:
        raise ContractError(f"step size xi must be > 0, got {config.xi}")
    if config.max_iterations < 1:
        raise ContractError("max_iterations must be >= 1")
    for name in ("eps_balance", "eps_price"):
        value = getattr(config, name)
        if value is not None and not value > 0:
            raise ContractError(f"{name} must be > 0, got {value}")
    for name in ("lambda0", "sigma_v", "sigma_f"):
        value = getattr(config, name)
        if not math.isfinite(value) or value < 0:
            raise ContractError(f"{name} must be finite and >= 0, got {value}")
    return config
