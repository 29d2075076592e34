"""The data center: price coordination and network-aware price signals.

Each round the coordinator announces an effective price to every player,
collects the best responses, runs a load flow on the resulting bus
withdrawals, turns voltage and line-flow violations into per-player price
signals, and moves the clearing price against the supply/demand mismatch.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, fields
from typing import TYPE_CHECKING, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .agents import BuyerArrays, BuyerParams, SellerArrays, SellerParams, total_welfare
from .exceptions import ContractError, StepSizeError
from .powerflow import DirectLoadFlow, Network, PowerFlowSolution, compute_ptdf
from .validation import check_config, check_feasible

if TYPE_CHECKING:
    from .scenario import Scenario


@dataclass
class ClearingConfig:
    """Tuning knobs of the clearing loop.

    ``eps_balance=None`` resolves to 0.1 % of the buyers' total maximum
    demand.  With ``accumulate_signals`` the network signals integrate their
    per-round values across rounds; without it each round's signal replaces
    the last one.
    """

    xi: float = 0.01
    sigma_v: float = 1.0
    sigma_f: float = 0.001
    lambda0: float = 20.0
    eps_balance: float | None = None
    eps_price: float = 1e-8
    max_iterations: int = 5000
    network_signals: bool = False
    accumulate_signals: bool = True
    voltage_tol: float = 1e-3
    flow_tol: float = 0.005
    divergence_window: int = 50


@dataclass
class MarketState:
    lam: float
    omega_signal: np.ndarray
    rho_signal: np.ndarray
    S: np.ndarray
    D: np.ndarray
    k: int = 0


@dataclass
class TraceRow:
    iteration: int
    lam: float
    total_supply_kw: float
    total_demand_kw: float
    mismatch_kw: float
    min_voltage_pu: float
    max_voltage_pu: float
    max_line_loading_pct: float
    omega_total: float
    rho_total: float
    transfer_imbalance: float
    balanced: bool = False

    def as_tuple(self):
        return tuple(getattr(self, f.name) for f in fields(self))[:-1]


@dataclass
class ClearingResult:
    lambda_star: float
    S_star: np.ndarray
    D_star: np.ndarray
    iterations: int
    converged: bool
    trace: list[TraceRow]
    final_solution: PowerFlowSolution | None
    omega_signal: np.ndarray
    rho_signal: np.ndarray
    runtime: float = 0.0
    eps_balance: float = 0.0

    @property
    def transfer_imbalance(self) -> list[float]:
        return [row.transfer_imbalance for row in self.trace]


def update_price(lambda_k: float, total_supply: float, total_demand: float, xi: float) -> float:
    """Projected dual step: excess supply lowers the price, excess demand raises it."""
    if not xi > 0:
        raise ContractError(f"step size must be positive, got {xi}")
    return max(0.0, lambda_k - xi * (total_supply - total_demand))


def nearest_seller(network: Network, violating_node: int, sellers: Sequence[SellerParams]) -> int:
    """Index of the seller electrically closest to ``violating_node``.

    Distance is the sum of |z| along the tree path; ties go to the lowest
    bus id, then to the lowest seller index.
    """
    if not sellers:
        raise ContractError("no sellers to route a voltage signal to")
    return int(seller_routing(network, sellers)[network.bus_index(violating_node)])


def seller_routing(network: Network, sellers: Sequence[SellerParams]) -> np.ndarray:
    """For every load bus, the index of its nearest seller."""
    if not sellers:
        raise ContractError("no sellers to route a voltage signal to")
    dist = network.electrical_distances()
    cols = np.array([network.bus_index(p.node) + 1 for p in sellers])
    routing = np.empty(network.n_buses, dtype=int)
    for n in range(network.n_buses):
        d = dist[n + 1, cols]
        best = d.min()
        tied = np.flatnonzero(d - best <= 1e-12 * max(1.0, abs(best)))
        routing[n] = min(tied, key=lambda i: (sellers[i].node, i))
    return routing


def voltage_price_signals(
    solution: PowerFlowSolution,
    network: Network,
    lam: float,
    sigma_v: float,
    sellers: Sequence[SellerParams],
    routing: np.ndarray | None = None,
) -> np.ndarray:
    """Per-seller voltage signal: negative for over-voltage, positive for under-voltage."""
    if routing is None:
        routing = seller_routing(network, sellers)
    vm = solution.magnitudes
    over = np.where(vm > network.v_max, network.v_max - vm, 0.0)
    under = np.where(vm < network.v_min, network.v_min - vm, 0.0)
    per_bus = sigma_v * lam * (over + under)
    # bincount sums in bus order, so accumulation is deterministic
    return np.bincount(routing, weights=per_bus, minlength=len(sellers))


def congestion_price_signals(
    solution: PowerFlowSolution,
    ptdf: np.ndarray,
    network: Network,
    lam: float,
    sigma_f: float,
    buyers: Sequence[BuyerParams],
    buyer_buses: np.ndarray | None = None,
) -> np.ndarray:
    """Per-buyer surcharge for every overloaded line the buyer draws through."""
    if buyer_buses is None:
        buyer_buses = np.array([network.bus_index(p.node) for p in buyers], dtype=int)
    excess = np.maximum(solution.line_flows - network.f_max, 0.0)
    per_bus = sigma_f * lam * (ptdf.T @ excess)
    return per_bus[buyer_buses]


def _transfer_scale(total_omega: float, total_rho: float) -> float | None:
    if total_omega != 0 and total_rho != 0 and total_omega / total_rho > 0:
        return total_omega / total_rho
    return None


def balance_transfers(omega_signal, rho_signal):
    """Rescale the buyer signals so both sides' transfers sum to the same amount.

    Scaling only applies when both totals are nonzero and of the same sign;
    otherwise the raw signals pass through and the residual is reported.
    Returns ``(omega, rho, residual)``.
    """
    omega = np.array(omega_signal, dtype=float)
    rho = np.array(rho_signal, dtype=float)
    total_omega, total_rho = math.fsum(omega), math.fsum(rho)
    beta = _transfer_scale(total_omega, total_rho)
    if beta is not None:
        rho = rho * beta
        return omega, rho, total_omega - math.fsum(rho)
    return omega, rho, total_omega - total_rho


def _resolve_eps_balance(config, scenario):
    if config.eps_balance is not None:
        return config.eps_balance
    return 1e-3 * sum(p.d_max for p in scenario.buyers)


def clear_market(scenario: "Scenario", config: ClearingConfig | None = None) -> ClearingResult:
    """Run the distributed clearing loop until supply and demand agree.

    Raises ``InfeasibleMarketError`` before iterating if the bounds admit no
    balanced allocation, ``PowerFlowDivergence`` if a load flow fails, and
    ``StepSizeError`` if the mismatch keeps growing.  Hitting
    ``max_iterations`` is not an error: the result comes back with
    ``converged=False``.
    """
    config = check_config(config or ClearingConfig())
    check_feasible(scenario)
    t0 = time.perf_counter()

    net = scenario.network
    sellers, buyers = scenario.sellers, scenario.buyers
    seller_arr, buyer_arr = SellerArrays(sellers), BuyerArrays(buyers)
    seller_buses = np.array([net.bus_index(p.node) for p in sellers], dtype=int)
    buyer_buses = np.array([net.bus_index(p.node) for p in buyers], dtype=int)
    n_bus = net.n_buses
    solver = DirectLoadFlow(net)
    f_max, f_min = net.f_max, net.f_min
    flow_hi = f_max * (1 + config.flow_tol)
    flow_lo = f_min - config.flow_tol * f_max

    signals = config.network_signals
    if signals:
        ptdf = compute_ptdf(net)
        routing = seller_routing(net, sellers)

    eps_b = _resolve_eps_balance(config, scenario)
    lam = float(config.lambda0)
    omega_state = np.zeros(len(sellers))
    rho_state = np.zeros(len(buyers))
    omega = omega_state.copy()
    rho = rho_state.copy()
    imbalance, balanced = 0.0, False

    trace: list[TraceRow] = []
    growth = 0
    converged = False
    S = D = sol = None
    for k in range(config.max_iterations):
        S = seller_arr.respond(lam + omega)
        D = buyer_arr.respond(lam + rho)
        total_s, total_d = math.fsum(S), math.fsum(D)
        mismatch = total_s - total_d

        P = np.bincount(buyer_buses, D, n_bus) - np.bincount(seller_buses, S, n_bus)
        sol = solver.solve(P)
        vm = sol.magnitudes
        v_lo, v_hi = float(vm.min()), float(vm.max())
        flows = sol.line_flows

        lam_next = update_price(lam, total_s, total_d, config.xi)
        trace.append(
            TraceRow(
                k,
                lam,
                total_s,
                total_d,
                mismatch,
                v_lo,
                v_hi,
                100.0 * float((np.abs(flows) / f_max).max()),
                math.fsum(omega),
                math.fsum(rho),
                imbalance,
                balanced,
            )
        )

        secure = True
        if signals:
            secure = (
                v_hi <= net.v_max + config.voltage_tol
                and v_lo >= net.v_min - config.voltage_tol
                and bool(np.all(flows <= flow_hi))
                and bool(np.all(flows >= flow_lo))
            )
        if abs(mismatch) <= eps_b and abs(lam_next - lam) <= config.eps_price and secure:
            converged = True
            break

        if k and abs(mismatch) > abs(trace[-2].mismatch_kw):
            growth += 1
            if growth >= config.divergence_window:
                start = abs(trace[-1 - growth].mismatch_kw)
                if abs(mismatch) >= 2.0 * start:
                    raise StepSizeError(
                        f"supply/demand mismatch grew for {growth} consecutive rounds "
                        f"(now {mismatch:.4g} kW); reduce the step size xi={config.xi}"
                    )
        else:
            growth = 0

        if signals:
            d_omega = voltage_price_signals(sol, net, lam, config.sigma_v, sellers, routing)
            d_rho = congestion_price_signals(sol, ptdf, net, lam, config.sigma_f, buyers, buyer_buses)
            if config.accumulate_signals:
                omega_state = omega_state + d_omega
                rho_state = rho_state + d_rho
            else:
                omega_state, rho_state = d_omega, d_rho
            balanced = _transfer_scale(math.fsum(omega_state), math.fsum(rho_state)) is not None
            omega, rho, imbalance = balance_transfers(omega_state, rho_state)
        lam = lam_next

    return ClearingResult(
        lambda_star=lam,
        S_star=S,
        D_star=D,
        iterations=len(trace),
        converged=converged,
        trace=trace,
        final_solution=sol,
        omega_signal=omega,
        rho_signal=rho,
        runtime=time.perf_counter() - t0,
        eps_balance=eps_b,
    )


class MarketClearing(BaseEstimator):
    """Distributed clearing as a scikit-learn style estimator.

    Parameters mirror :class:`ClearingConfig`.  After ``fit(scenario)`` the
    estimator exposes ``lambda_``, ``supply_``, ``demand_``, ``n_iter_``,
    ``converged_``, ``trace_`` and the full ``result_``.
    """

    def __init__(
        self,
        xi=0.01,
        sigma_v=1.0,
        sigma_f=0.001,
        lambda0=20.0,
        eps_balance=None,
        eps_price=1e-8,
        max_iterations=5000,
        network_signals=False,
        accumulate_signals=True,
        voltage_tol=1e-3,
        flow_tol=0.005,
        divergence_window=50,
    ):
        self.xi = xi
        self.sigma_v = sigma_v
        self.sigma_f = sigma_f
        self.lambda0 = lambda0
        self.eps_balance = eps_balance
        self.eps_price = eps_price
        self.max_iterations = max_iterations
        self.network_signals = network_signals
        self.accumulate_signals = accumulate_signals
        self.voltage_tol = voltage_tol
        self.flow_tol = flow_tol
        self.divergence_window = divergence_window

    def to_config(self) -> ClearingConfig:
        return ClearingConfig(**self.get_params())

    def fit(self, scenario, y=None):
        self.result_ = clear_market(scenario, self.to_config())
        self.lambda_ = self.result_.lambda_star
        self.supply_ = self.result_.S_star
        self.demand_ = self.result_.D_star
        self.n_iter_ = self.result_.iterations
        self.converged_ = self.result_.converged
        self.trace_ = self.result_.trace
        return self

    def score(self, scenario, y=None):
        """Total welfare of the fitted allocation."""
        check_is_fitted(self)
        return total_welfare(scenario.sellers, scenario.buyers, self.supply_, self.demand_)
