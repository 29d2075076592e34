"""Market players: private cost/utility models and their best responses.

Sellers carry a quadratic cost ``a*s**2 + b*s + gamma``; buyers a concave
quadratic utility that saturates at ``omega / (2*delta)``.  Each player
answers an announced effective price with the quantity maximizing its own
welfare, which is all the coordinator ever sees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import ContractError


@dataclass(frozen=True)
class SellerParams:
    a: float
    b: float
    gamma: float = 0.0
    s_min: float = 0.0
    s_max: float = 0.0
    node: int = 0

    def __post_init__(self):
        for name in ("a", "b", "gamma", "s_min", "s_max"):
            if not math.isfinite(getattr(self, name)):
                raise ContractError(f"seller {name} must be finite")
        if self.a < 0:
            raise ContractError(f"seller cost curvature a must be >= 0, got {self.a}")
        if self.gamma < 0:
            raise ContractError(f"seller fixed cost gamma must be >= 0, got {self.gamma}")
        if not 0 <= self.s_min <= self.s_max:
            raise ContractError(
                f"seller bounds must satisfy 0 <= s_min <= s_max, got [{self.s_min}, {self.s_max}]"
            )


@dataclass(frozen=True)
class BuyerParams:
    omega: float
    delta: float
    d_min: float = 0.0
    d_max: float = 0.0
    node: int = 0

    def __post_init__(self):
        for name in ("omega", "delta", "d_min", "d_max"):
            if not math.isfinite(getattr(self, name)):
                raise ContractError(f"buyer {name} must be finite")
        if self.omega < 0:
            raise ContractError(f"buyer omega must be >= 0, got {self.omega}")
        if self.delta <= 0:
            raise ContractError(f"buyer delta must be > 0, got {self.delta}")
        if not 0 <= self.d_min <= self.d_max:
            raise ContractError(
                f"buyer bounds must satisfy 0 <= d_min <= d_max, got [{self.d_min}, {self.d_max}]"
            )

    @property
    def saturation(self) -> float:
        """Consumption level beyond which utility no longer grows."""
        return self.omega / (2.0 * self.delta)


def seller_cost(params: SellerParams, s: float) -> float:
    if s < 0:
        raise ContractError(f"supply must be nonnegative, got {s}")
    return params.a * s * s + params.b * s + params.gamma


def buyer_utility(params: BuyerParams, d: float) -> float:
    """Utility of consuming ``d`` kW.

    Beyond the saturation point the utility is held at ``omega**2 / (4*delta)``,
    the value the quadratic branch reaches there, so the curve is continuous.
    """
    if d < 0:
        raise ContractError(f"demand must be nonnegative, got {d}")
    if d < params.saturation:
        return params.omega * d - params.delta * d * d
    return params.omega**2 / (4.0 * params.delta)


def seller_best_response(params: SellerParams, effective_price: float) -> float:
    p = effective_price
    if params.a > 0:
        return min(max((p - params.b) / (2.0 * params.a), params.s_min), params.s_max)
    # linear cost: bang-bang, ties go to the lower bound
    return params.s_max if p > params.b else params.s_min


def buyer_best_response(params: BuyerParams, effective_price: float) -> float:
    # for p <= 0 every point on the plateau is optimal; take the saturation point
    p = max(effective_price, 0.0)
    return min(max((params.omega - p) / (2.0 * params.delta), params.d_min), params.d_max)


def total_welfare(
    sellers: Sequence[SellerParams],
    buyers: Sequence[BuyerParams],
    S: Sequence[float],
    D: Sequence[float],
) -> float:
    if len(S) != len(sellers) or len(D) != len(buyers):
        raise ContractError(
            f"allocation lengths ({len(S)}, {len(D)}) do not match "
            f"player counts ({len(sellers)}, {len(buyers)})"
        )
    utility = sum(buyer_utility(p, float(d)) for p, d in zip(buyers, D))
    cost = sum(seller_cost(p, float(s)) for p, s in zip(sellers, S))
    return utility - cost


class SellerArrays:
    """Column view of a seller population for vectorized best responses."""

    def __init__(self, sellers: Sequence[SellerParams]):
        self.a = np.array([p.a for p in sellers], dtype=float)
        self.b = np.array([p.b for p in sellers], dtype=float)
        self.lo = np.array([p.s_min for p in sellers], dtype=float)
        self.hi = np.array([p.s_max for p in sellers], dtype=float)
        self._linear = self.a == 0
        self._two_a = np.where(self._linear, 1.0, 2.0 * self.a)

    def respond(self, prices: np.ndarray) -> np.ndarray:
        s = np.clip((prices - self.b) / self._two_a, self.lo, self.hi)
        if self._linear.any():
            bang = np.where(prices > self.b, self.hi, self.lo)
            s = np.where(self._linear, bang, s)
        return s


class BuyerArrays:
    """Column view of a buyer population for vectorized best responses."""

    def __init__(self, buyers: Sequence[BuyerParams]):
        self.omega = np.array([p.omega for p in buyers], dtype=float)
        self.two_delta = np.array([2.0 * p.delta for p in buyers], dtype=float)
        self.lo = np.array([p.d_min for p in buyers], dtype=float)
        self.hi = np.array([p.d_max for p in buyers], dtype=float)

    def respond(self, prices: np.ndarray) -> np.ndarray:
        p = np.maximum(prices, 0.0)
        return np.clip((self.omega - p) / self.two_delta, self.lo, self.hi)
