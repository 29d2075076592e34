"""Reference solvers that share no code path with the distributed loop.

``centralized_clear`` sees every private parameter and finds the clearing
price by bisection on aggregate excess supply.  ``brute_force_clear``
enumerates a grid of balanced allocations.  ``gauss_seidel_power_flow``
solves the bus equations through the admittance matrix instead of the
BIBC/BCBV route.
"""
from __future__ import annotations

import math
from typing import TYPE_CHECKING

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .agents import (
    buyer_best_response,
    buyer_utility,
    seller_best_response,
    seller_cost,
    total_welfare,
)
from .exceptions import GridTooLargeError, InfeasibleMarketError, PowerFlowDivergence
from .powerflow import Network, PowerFlowSolution
from .validation import check_feasible, check_scenario

if TYPE_CHECKING:
    from .scenario import Scenario

GRID_CAP = 10**7
STALL_SWEEPS = 200


def excess_supply(scenario: "Scenario", price: float) -> float:
    supply = sum(seller_best_response(p, price) for p in scenario.sellers)
    demand = sum(buyer_best_response(p, price) for p in scenario.buyers)
    return supply - demand


def centralized_clear(scenario: "Scenario", tol_kw: float = 1e-6, tol_price: float = 1e-9):
    """Clear the market with full information.

    Returns ``(lambda_star, S, D)``.  Excess supply is nondecreasing in the
    price, so bisection brackets the balancing price on ``[0, lambda_hi]``.
    """
    check_scenario(scenario)
    lo = 0.0
    hi = 1.0 + max(
        [p.omega for p in scenario.buyers] + [p.b + 2 * p.a * p.s_max for p in scenario.sellers]
    )
    e_lo, e_hi = excess_supply(scenario, lo), excess_supply(scenario, hi)
    if e_lo > tol_kw or e_hi < -tol_kw:
        raise InfeasibleMarketError(
            f"excess supply does not change sign on [0, {hi:g}] "
            f"(E(0) = {e_lo:.6g} kW, E(hi) = {e_hi:.6g} kW)"
        )
    if abs(e_lo) <= tol_kw:
        price = lo
    elif abs(e_hi) <= tol_kw:
        price = hi
    else:
        while True:
            price = 0.5 * (lo + hi)
            e = excess_supply(scenario, price)
            # the last test stops once the bracket is down to adjacent floats
            if abs(e) <= tol_kw or hi - lo <= tol_price or price in (lo, hi):
                break
            if e > 0:
                hi = price
            else:
                lo = price
    S = np.array([seller_best_response(p, price) for p in scenario.sellers])
    D = np.array([buyer_best_response(p, price) for p in scenario.buyers])
    return price, S, D


def _grid(lo, hi, step):
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def brute_force_clear(scenario: "Scenario", grid_step: float = 0.01):
    """Best balanced allocation on a uniform grid, by exhaustive enumeration.

    Every seller and every buyer but the last is enumerated; the last buyer
    takes whatever balances the book, snapped to its own grid.  Ties keep the
    lowest enumeration index.  Returns ``(welfare, S, D)``.
    """
    check_scenario(scenario)
    sellers, buyers = scenario.sellers, scenario.buyers
    grids = [_grid(p.s_min, p.s_max, grid_step) for p in sellers]
    grids += [_grid(p.d_min, p.d_max, grid_step) for p in buyers[:-1]]
    size = math.prod(len(g) for g in grids)
    if size > GRID_CAP:
        raise GridTooLargeError(f"grid has {size} points, cap is {GRID_CAP}")

    last = buyers[-1]
    last_grid = _grid(last.d_min, last.d_max, grid_step)
    n_s = len(sellers)

    # per-coordinate value tables; welfare is separable
    values = [np.array([-seller_cost(p, x) for x in g]) for p, g in zip(sellers, grids[:n_s])]
    values += [np.array([buyer_utility(p, x) for x in g]) for p, g in zip(buyers[:-1], grids[n_s:])]
    signs = [1.0] * n_s + [-1.0] * (len(buyers) - 1)

    # fold the enumeration one coordinate at a time into flat arrays
    net = np.zeros(1)
    val = np.zeros(1)
    for g, v, sgn in zip(grids, values, signs):
        net = (net[:, None] + sgn * g[None, :]).ravel()
        val = (val[:, None] + v[None, :]).ravel()
    k = np.rint((net - last.d_min) / grid_step)
    ok = (k >= 0) & (k < len(last_grid))
    ok &= np.abs(net - (last.d_min + k * grid_step)) <= grid_step / 2
    if not ok.any():
        raise InfeasibleMarketError("no balanced allocation on the grid")
    k = np.where(ok, k, 0).astype(int)
    last_u = np.array([buyer_utility(last, x) for x in last_grid])
    total = np.where(ok, val + last_u[k], -np.inf)
    best = int(np.argmax(total))

    idx = np.unravel_index(best, [len(g) for g in grids])
    S = np.array([grids[i][idx[i]] for i in range(n_s)])
    D = np.array([grids[i][idx[i]] for i in range(n_s, len(grids))] + [last_grid[k[best]]])
    return total_welfare(sellers, buyers, S, D), S, D


def _admittance(network: Network):
    order = {network.slack: 0}
    order.update({b: i + 1 for i, b in enumerate(network.buses)})
    n = network.n_buses + 1
    Y = np.zeros((n, n), dtype=complex)
    for ln in network.lines:
        u, v = order[ln.from_node], order[ln.to_node]
        y = 1.0 / ln.impedance
        Y[u, u] += y
        Y[v, v] += y
        Y[u, v] -= y
        Y[v, u] -= y
    return Y


def _optimal_relaxation(Y_load):
    d = np.diag(Y_load)
    jacobi = np.eye(len(d)) - Y_load / d[:, None]
    rho = float(np.max(np.abs(np.linalg.eigvals(jacobi)), initial=0.0))
    return 2.0 / (1.0 + math.sqrt(max(0.0, 1.0 - min(rho, 1.0) ** 2)))


def _sor(Y, p, v0, acceleration, tol, budget):
    """Over-relaxed Gauss-Seidel sweeps from a flat start.

    Returns ``(V, sweeps, residual, ok)``; ``ok`` is False when the iterate
    blows up or the residual fails to halve within ``STALL_SWEEPS`` sweeps,
    in which case the caller retries with less relaxation.
    """
    n = len(p)
    Vl = [complex(v0)] * (n + 1)
    nbrs = [[(j, complex(Y[k, j])) for j in np.flatnonzero(Y[k]) if j != k] for k in range(n + 1)]
    diag = [complex(Y[k, k]) for k in range(n + 1)]
    load = [0.0] + [float(x) for x in p]
    limit = 100.0 * (float(np.max(np.abs(p), initial=0.0)) + 1.0)
    V = np.array(Vl)
    residual = checkpoint = math.inf
    last_progress = 0
    for sweep in range(1, budget + 1):
        for k in range(1, n + 1):
            acc = 0j
            for j, y in nbrs[k]:
                acc += y * Vl[j]
            vk = Vl[k]
            target = (-load[k] / vk.conjugate() - acc) / diag[k]
            Vl[k] = vk + acceleration * (target - vk)
        V = np.array(Vl)
        with np.errstate(all="ignore"):
            residual = float(np.max(np.abs(V[1:] * np.conj(Y[1:] @ V) + p), initial=0.0))
        if residual <= tol:
            return V, sweep, residual, True
        if residual < 0.5 * checkpoint:
            checkpoint, last_progress = residual, sweep
        if not residual < limit or sweep - last_progress > STALL_SWEEPS:
            return V, sweep, residual, False
    return V, budget, residual, True


def gauss_seidel_power_flow(
    network: Network,
    P,
    tol: float = 1e-10,
    max_sweeps: int = 10_000,
    acceleration: float | None = None,
) -> PowerFlowSolution:
    """Accelerated Gauss-Seidel on the bus admittance equations.

    ``P`` is the withdrawal per load bus in kW.  Converges when the largest
    complex power mismatch falls to ``tol`` p.u.  Without an explicit
    ``acceleration`` the over-relaxation factor starts at the classical
    optimum for the linear part, ``2 / (1 + sqrt(1 - rho**2))`` with ``rho``
    the Jacobi spectral radius of the load-bus admittance block; if the
    iterate blows up the excess over 1 is halved and the solve restarts.
    ``max_sweeps`` bounds the sweeps over all restarts.
    """
    P = np.asarray(P, dtype=float)
    p = P / network.base_power
    Y = _admittance(network)
    n = network.n_buses
    if acceleration is None:
        acceleration = _optimal_relaxation(Y[1:, 1:])
    used = 0
    while True:
        V, sweeps, residual, ok = _sor(Y, p, network.slack_voltage, acceleration, tol, max_sweeps - used)
        used += sweeps
        if residual <= tol:
            break
        if ok or used >= max_sweeps or acceleration <= 1.0:
            raise PowerFlowDivergence(
                f"Gauss-Seidel did not converge in {used} sweeps (residual {residual:.3e})",
                residual=residual,
                iterations=used,
            )
        acceleration = 1.0 + 0.5 * (acceleration - 1.0)
        if acceleration < 1.01:
            acceleration = 1.0
    sweep = used

    Vb = V[1:]
    up = network.upstream
    # branch current from the voltage drop across each line, slack side to far side
    order = {network.slack: 0}
    order.update({b: i + 1 for i, b in enumerate(network.buses)})
    B = np.empty(n, dtype=complex)
    for l, ln in enumerate(network.lines):
        u, v = order[ln.from_node], order[ln.to_node]
        if v == up[l] + 1:
            u, v = v, u
        B[l] = (V[u] - V[v]) / ln.impedance
    V_send = np.where(up < 0, network.slack_voltage, Vb[np.maximum(up, 0)])
    flows = np.real(V_send * np.conj(B)) * network.base_power
    return PowerFlowSolution(Vb, B, flows, True, sweep, residual)


class CentralizedClearing(BaseEstimator):
    """Full-information market clearing as an estimator.

    ``fit(scenario)`` sets ``lambda_``, ``supply_``, ``demand_`` and
    ``welfare_``.
    """

    def __init__(self, tol_kw: float = 1e-6, tol_price: float = 1e-9):
        self.tol_kw = tol_kw
        self.tol_price = tol_price

    def fit(self, scenario, y=None):
        check_feasible(scenario)
        self.lambda_, self.supply_, self.demand_ = centralized_clear(
            scenario, self.tol_kw, self.tol_price
        )
        self.welfare_ = total_welfare(scenario.sellers, scenario.buyers, self.supply_, self.demand_)
        return self

    def score(self, scenario, y=None):
        check_is_fitted(self)
        return total_welfare(scenario.sellers, scenario.buyers, self.supply_, self.demand_)
