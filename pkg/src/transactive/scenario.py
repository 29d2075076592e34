"""Scenario construction, JSON persistence and CSV outputs."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .agents import BuyerParams, SellerParams
from .exceptions import ContractError, ScenarioParseError
from .powerflow import Line, Network
from .validation import check_scenario

if TYPE_CHECKING:
    from .coordinator import ClearingConfig, ClearingResult

TRACE_COLUMNS = (
    "iteration",
    "lambda",
    "total_supply_kw",
    "total_demand_kw",
    "mismatch_kw",
    "min_voltage_pu",
    "max_voltage_pu",
    "max_line_loading_pct",
    "omega_total",
    "rho_total",
    "transfer_imbalance",
)
PLAYER_COLUMNS = ("player_id", "role", "node", "allocation_kw", "effective_price")
SWEEP_COLUMNS = (
    "n_sellers",
    "n_buyers",
    "seed",
    "lambda_star",
    "iterations",
    "converged",
    "runtime_s",
)

# parameter intervals for generated markets
COST_CURVATURE = (0.01, 0.9)
COST_INTERCEPT = (3.0, 8.0)
UTILITY_INTERCEPT = (13.0, 17.0)
UTILITY_CURVATURE = (0.1, 0.9)
POWER_BOUNDS = (2.0, 4.0)
DEFAULT_IMPEDANCE = 0.01 + 0.01j


@dataclass(frozen=True)
class Scenario:
    network: Network
    sellers: tuple[SellerParams, ...]
    buyers: tuple[BuyerParams, ...]
    label: str = ""
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "sellers", tuple(self.sellers))
        object.__setattr__(self, "buyers", tuple(self.buyers))
        check_scenario(self)


def chain_network(
    n_buses: int,
    impedance: complex = DEFAULT_IMPEDANCE,
    f_max: float = 100.0,
    v_min: float = 0.95,
    v_max: float = 1.05,
    base_power: float = 100.0,
    base_voltage: float = 0.4,
) -> Network:
    """Uniform feeder ``0 - 1 - 2 - ... - n_buses`` with the slack at bus 0."""
    lines = tuple(Line(i, i + 1, impedance, f_max) for i in range(n_buses))
    return Network(
        buses=tuple(range(1, n_buses + 1)),
        lines=lines,
        v_min=v_min,
        v_max=v_max,
        base_power=base_power,
        base_voltage=base_voltage,
    )


def generate_scenario(
    n_sellers: int,
    n_buyers: int,
    seed: int = 0,
    *,
    impedance: complex = DEFAULT_IMPEDANCE,
    f_max: float = 100.0,
    v_min: float = 0.95,
    v_max: float = 1.05,
    power_bounds: tuple[float, float] = POWER_BOUNDS,
    layout: str = "buyers_first",
    label: str | None = None,
) -> Scenario:
    """Draw a random market on a chain feeder.

    With the default ``layout="buyers_first"`` buyers occupy buses
    ``1..n_buyers`` next to the slack and sellers the far end; ``"sellers_first"``
    swaps the two blocks.
    """
    if n_sellers < 1 or n_buyers < 1:
        raise ContractError("need at least one seller and one buyer")
    if layout not in ("buyers_first", "sellers_first"):
        raise ContractError(f"unknown layout {layout!r}")
    lo, hi = power_bounds
    rng = np.random.default_rng(seed)
    a = rng.uniform(*COST_CURVATURE, n_sellers)
    b = rng.uniform(*COST_INTERCEPT, n_sellers)
    omega = rng.uniform(*UTILITY_INTERCEPT, n_buyers)
    delta = rng.uniform(*UTILITY_CURVATURE, n_buyers)

    n = n_sellers + n_buyers
    if layout == "buyers_first":
        buyer_nodes = range(1, n_buyers + 1)
        seller_nodes = range(n_buyers + 1, n + 1)
    else:
        seller_nodes = range(1, n_sellers + 1)
        buyer_nodes = range(n_sellers + 1, n + 1)
    sellers = [
        SellerParams(float(a[i]), float(b[i]), 0.0, lo, hi, node)
        for i, node in enumerate(seller_nodes)
    ]
    buyers = [
        BuyerParams(float(omega[j]), float(delta[j]), lo, hi, node)
        for j, node in enumerate(buyer_nodes)
    ]
    network = chain_network(n, impedance, f_max, v_min, v_max)
    if label is None:
        label = f"generated-{n_sellers}s-{n_buyers}b-seed{seed}"
    return Scenario(network, tuple(sellers), tuple(buyers), label, seed)


# -- JSON ---------------------------------------------------------------------

_NETWORK_KEYS = {
    "slack": False,
    "slack_voltage": False,
    "buses": True,
    "lines": True,
    "v_min": False,
    "v_max": False,
    "base_power": False,
    "base_voltage": False,
}
_LINE_KEYS = {"from": True, "to": True, "r": True, "x": True, "f_max": True, "f_min": False}
_SELLER_KEYS = {"a": True, "b": True, "gamma": False, "s_min": True, "s_max": True, "node": True}
_BUYER_KEYS = {"omega": True, "delta": True, "d_min": True, "d_max": True, "node": True}
_TOP_KEYS = {"network": True, "sellers": True, "buyers": True, "label": False, "seed": False}


def scenario_to_dict(scenario: Scenario) -> dict:
    net = scenario.network
    return {
        "label": scenario.label,
        "seed": scenario.seed,
        "network": {
            "slack": net.slack,
            "slack_voltage": [net.slack_voltage.real, net.slack_voltage.imag],
            "buses": list(net.buses),
            "lines": [
                {
                    "from": ln.from_node,
                    "to": ln.to_node,
                    "r": ln.impedance.real,
                    "x": ln.impedance.imag,
                    "f_max": ln.f_max,
                    "f_min": ln.f_min,
                }
                for ln in net.lines
            ],
            "v_min": net.v_min,
            "v_max": net.v_max,
            "base_power": net.base_power,
            "base_voltage": net.base_voltage,
        },
        "sellers": [
            {"a": p.a, "b": p.b, "gamma": p.gamma, "s_min": p.s_min, "s_max": p.s_max, "node": p.node}
            for p in scenario.sellers
        ],
        "buyers": [
            {"omega": p.omega, "delta": p.delta, "d_min": p.d_min, "d_max": p.d_max, "node": p.node}
            for p in scenario.buyers
        ],
    }


def _check_keys(obj, schema, where):
    if not isinstance(obj, dict):
        raise ScenarioParseError(f"{where}: expected an object", where)
    for key in obj:
        if key not in schema:
            raise ScenarioParseError(f"{where}.{key}: unknown key", f"{where}.{key}")
    for key, required in schema.items():
        if required and key not in obj:
            raise ScenarioParseError(f"{where}.{key}: missing required field", f"{where}.{key}")


def _number(obj, key, where, default=None):
    if key not in obj:
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ScenarioParseError(f"{where}.{key}: expected a finite number", f"{where}.{key}")
    return float(value)


def _node(obj, key, where):
    value = obj.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioParseError(f"{where}.{key}: expected an integer node id", f"{where}.{key}")
    return value


def _list(obj, key, where):
    value = obj[key]
    if not isinstance(value, list):
        raise ScenarioParseError(f"{where}.{key}: expected a list", f"{where}.{key}")
    return value


def scenario_from_dict(doc) -> Scenario:
    """Build a scenario from its JSON document form.

    Shape problems raise ``ScenarioParseError`` naming the field; invariant
    violations (cycles, bad bounds) surface as ``ContractError`` or
    ``TopologyError``.
    """
    _check_keys(doc, _TOP_KEYS, "$")
    net_doc = doc["network"]
    _check_keys(net_doc, _NETWORK_KEYS, "network")

    lines = []
    for i, ln in enumerate(_list(net_doc, "lines", "network")):
        where = f"network.lines[{i}]"
        _check_keys(ln, _LINE_KEYS, where)
        z = complex(_number(ln, "r", where), _number(ln, "x", where))
        lines.append(
            Line(
                _node(ln, "from", where),
                _node(ln, "to", where),
                z,
                _number(ln, "f_max", where),
                _number(ln, "f_min", where),
            )
        )
    buses = _list(net_doc, "buses", "network")
    for i, b in enumerate(buses):
        if isinstance(b, bool) or not isinstance(b, int):
            raise ScenarioParseError(f"network.buses[{i}]: expected an integer", f"network.buses[{i}]")
    v0 = net_doc.get("slack_voltage", [1.0, 0.0])
    if (
        not isinstance(v0, list)
        or len(v0) != 2
        or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v0)
    ):
        raise ScenarioParseError("network.slack_voltage: expected [re, im]", "network.slack_voltage")
    slack = net_doc.get("slack", 0)
    if isinstance(slack, bool) or not isinstance(slack, int):
        raise ScenarioParseError("network.slack: expected an integer", "network.slack")
    network = Network(
        buses=tuple(buses),
        lines=tuple(lines),
        slack=slack,
        slack_voltage=complex(v0[0], v0[1]),
        v_min=_number(net_doc, "v_min", "network", 0.95),
        v_max=_number(net_doc, "v_max", "network", 1.05),
        base_power=_number(net_doc, "base_power", "network", 100.0),
        base_voltage=_number(net_doc, "base_voltage", "network", 0.4),
    )

    sellers = []
    for i, p in enumerate(_list(doc, "sellers", "$")):
        where = f"sellers[{i}]"
        _check_keys(p, _SELLER_KEYS, where)
        sellers.append(
            SellerParams(
                _number(p, "a", where),
                _number(p, "b", where),
                _number(p, "gamma", where, 0.0),
                _number(p, "s_min", where),
                _number(p, "s_max", where),
                _node(p, "node", where),
            )
        )
    buyers = []
    for j, p in enumerate(_list(doc, "buyers", "$")):
        where = f"buyers[{j}]"
        _check_keys(p, _BUYER_KEYS, where)
        buyers.append(
            BuyerParams(
                _number(p, "omega", where),
                _number(p, "delta", where),
                _number(p, "d_min", where),
                _number(p, "d_max", where),
                _node(p, "node", where),
            )
        )
    label = doc.get("label", "")
    if not isinstance(label, str):
        raise ScenarioParseError("$.label: expected a string", "$.label")
    seed = doc.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise ScenarioParseError("$.seed: expected an integer or null", "$.seed")
    return Scenario(network, tuple(sellers), tuple(buyers), label, seed)


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n", encoding="utf-8")


def load_scenario(path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(doc)


# -- CSV ----------------------------------------------------------------------


def write_trace(result: "ClearingResult", path, players_path=None, scenario: Scenario | None = None):
    """Write the per-iteration trace, and optionally the per-player allocations.

    The trace ends with a ``#`` metadata line carrying the convergence flag.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for row in result.trace:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row.as_tuple()])
        if result.trace:
            fh.write(
                f"# converged={str(result.converged).lower()} iterations={result.iterations} "
                f"lambda_star={result.lambda_star!r}\n"
            )
    if players_path is not None:
        if scenario is None:
            raise ContractError("the per-player table needs the scenario")
        write_players(result, scenario, players_path)


def write_players(result: "ClearingResult", scenario: Scenario, path) -> None:
    lam = result.lambda_star
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PLAYER_COLUMNS)
        for i, (p, s) in enumerate(zip(scenario.sellers, result.S_star)):
            price = lam + float(result.omega_signal[i])
            writer.writerow([f"S{i + 1}", "seller", p.node, repr(float(s)), repr(price)])
        for j, (p, d) in enumerate(zip(scenario.buyers, result.D_star)):
            price = lam + float(result.rho_signal[j])
            writer.writerow([f"B{j + 1}", "buyer", p.node, repr(float(d)), repr(price)])


def sweep_sellers(
    total_players: int,
    seller_counts: Sequence[int],
    seeds: Iterable[int],
    config: "ClearingConfig | None" = None,
    power_bounds: tuple[float, float] = (0.0, 4.0),
    **generate_kwargs,
) -> list[dict]:
    """Clear one market per (seller count, seed) at a fixed player total.

    The lower power bound defaults to zero: with ``[2, 4]`` kW a 5-seller,
    45-buyer market has no balanced allocation.
    """
    from .coordinator import ClearingConfig, clear_market

    config = config or ClearingConfig()
    seeds = list(seeds)
    for count in seller_counts:
        if not 0 < count < total_players:
            raise ContractError(
                f"seller count {count} leaves no {'buyers' if count >= total_players else 'sellers'}"
            )
    rows = []
    for count in seller_counts:
        for seed in seeds:
            scenario = generate_scenario(
                count, total_players - count, seed, power_bounds=power_bounds, **generate_kwargs
            )
            t0 = time.perf_counter()
            result = clear_market(scenario, config)
            rows.append(
                {
                    "n_sellers": count,
                    "n_buyers": total_players - count,
                    "seed": seed,
                    "lambda_star": result.lambda_star,
                    "iterations": result.iterations,
                    "converged": result.converged,
                    "runtime_s": time.perf_counter() - t0,
                }
            )
    return rows


def write_sweep(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})

