"""Radial feeder model and direct load flow.

The direct approach never forms an admittance matrix.  Two topology
matrices carry the whole network:

* BIBC (lines x buses, 0/1): which bus withdrawals each line carries.
* BCBV (buses x lines, complex): the impedances on the path slack -> bus.

Their product ``DLF = BCBV @ BIBC`` maps withdrawal currents to voltage
drops, so a load flow is the fixed point ``V = V0 - DLF @ conj(P / V)``.
All arithmetic is per-unit; powers cross the API in kW.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ContractError, PowerFlowDivergence, TopologyError

VOLTAGE_TOL = 1e-8
MAX_INNER_ITER = 100


@dataclass(frozen=True)
class Line:
    from_node: int
    to_node: int
    impedance: complex
    f_max: float = 100.0
    f_min: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "impedance", complex(self.impedance))
        if self.f_min is None:
            object.__setattr__(self, "f_min", -self.f_max)
        if abs(self.impedance) <= 0:
            raise ContractError(f"line {self.from_node}-{self.to_node} has zero impedance")
        if not self.f_max > 0:
            raise ContractError(f"line {self.from_node}-{self.to_node}: f_max must be > 0")
        if self.f_min > 0:
            raise ContractError(f"line {self.from_node}-{self.to_node}: f_min must be <= 0")


@dataclass(frozen=True)
class Network:
    """A radial feeder rooted at ``slack``.

    ``lines[l]`` and ``buses[n]`` fix the row/column order of every matrix
    built from the network.  Construction validates the tree and caches the
    topology matrices, which never change for a given instance.
    """

    buses: tuple[int, ...]
    lines: tuple[Line, ...]
    slack: int = 0
    slack_voltage: complex = 1.0 + 0.0j
    v_min: float = 0.95
    v_max: float = 1.05
    base_power: float = 100.0
    base_voltage: float = 0.4
    _bibc: np.ndarray = field(init=False, repr=False, compare=False)
    _upstream: np.ndarray = field(init=False, repr=False, compare=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(int(b) for b in self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "slack_voltage", complex(self.slack_voltage))
        if not self.v_min < self.v_max:
            raise ContractError(f"v_min ({self.v_min}) must be below v_max ({self.v_max})")
        if not (self.base_power > 0 and self.base_voltage > 0):
            raise ContractError("base quantities must be positive")
        bibc, upstream = _analyse_tree(self.slack, self.buses, self.lines)
        bibc.setflags(write=False)
        object.__setattr__(self, "_bibc", bibc)
        object.__setattr__(self, "_upstream", upstream)
        object.__setattr__(self, "_index", {b: i for i, b in enumerate(self.buses)})

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def impedances(self) -> np.ndarray:
        return np.array([ln.impedance for ln in self.lines], dtype=complex)

    @property
    def f_max(self) -> np.ndarray:
        return np.array([ln.f_max for ln in self.lines], dtype=float)

    @property
    def f_min(self) -> np.ndarray:
        return np.array([ln.f_min for ln in self.lines], dtype=float)

    @property
    def upstream(self) -> np.ndarray:
        """Per line, the bus index at its slack-side end (-1 for the slack)."""
        return self._upstream

    def bus_index(self, node: int) -> int:
        try:
            return self._index[node]
        except KeyError:
            raise ContractError(f"node {node!r} is not a load bus of the network") from None

    def electrical_distances(self) -> np.ndarray:
        """Sum of |z| along the tree path between every pair of buses.

        Index 0 is the slack bus, index ``n + 1`` is ``buses[n]``.
        """
        path = np.hstack([np.zeros((len(self.lines), 1)), self._bibc.astype(float)])
        w = np.abs(self.impedances)
        to_root = w @ path
        common = path.T @ (w[:, None] * path)
        return to_root[:, None] + to_root[None, :] - 2.0 * common


def _analyse_tree(slack, buses, lines):
    n = len(buses)
    index = {b: i for i, b in enumerate(buses)}
    if len(index) != n:
        raise TopologyError("duplicate bus identifiers")
    if slack in index:
        raise TopologyError("slack bus must not appear among the load buses")
    if len(lines) != n:
        raise TopologyError(
            f"network not radial: {len(lines)} lines for {n} buses (a tree needs equal counts)"
        )
    adjacency: dict[int, list[tuple[int, int]]] = {slack: []}
    adjacency.update({b: [] for b in buses})
    for l, ln in enumerate(lines):
        for end in (ln.from_node, ln.to_node):
            if end not in adjacency:
                raise TopologyError(f"line {l} references unknown node {end!r}")
        if ln.from_node == ln.to_node:
            raise TopologyError(f"network not radial: line {l} is a self-loop")
        adjacency[ln.from_node].append((ln.to_node, l))
        adjacency[ln.to_node].append((ln.from_node, l))

    parent_line = {}
    upstream = np.full(n, -1, dtype=int)
    seen = {slack}
    queue = deque([slack])
    while queue:
        u = queue.popleft()
        for v, l in adjacency[u]:
            if l == parent_line.get(u):
                continue
            if v in seen:
                raise TopologyError("network not radial: cycle detected")
            seen.add(v)
            parent_line[v] = l
            upstream[l] = index.get(u, -1)
            queue.append(v)
    if len(seen) != n + 1:
        missing = sorted(set(buses) - seen)
        raise TopologyError(f"network not radial: buses {missing} unreachable from slack")

    bibc = np.zeros((n, n), dtype=np.int8)
    for i, b in enumerate(buses):
        node = b
        while node != slack:
            l = parent_line[node]
            bibc[l, i] = 1
            u = upstream[l]
            node = slack if u < 0 else buses[u]
    return bibc, upstream


def build_bibc(network: Network) -> np.ndarray:
    return network._bibc.astype(float)


def build_bcbv(network: Network) -> np.ndarray:
    return network._bibc.T * network.impedances[None, :]


def build_dlf(network: Network) -> np.ndarray:
    # BCBV @ BIBC: the only order taking bus currents to bus voltage drops
    return build_bcbv(network) @ build_bibc(network)


def compute_ptdf(network: Network) -> np.ndarray:
    """Sensitivity of each line flow to a withdrawal at each bus.

    On a radial feeder a withdrawal is carried by exactly the lines between
    the slack and the bus, so the lossless factors are the BIBC pattern.
    """
    return build_bibc(network)


def injections_from_market(
    network: Network,
    S: Sequence[float],
    D: Sequence[float],
    seller_nodes: Sequence[int],
    buyer_nodes: Sequence[int],
) -> np.ndarray:
    """Net withdrawal per bus in kW: buyers draw, sellers inject."""
    if len(S) != len(seller_nodes) or len(D) != len(buyer_nodes):
        raise ContractError("allocation vectors and node lists differ in length")
    P = np.zeros(network.n_buses)
    for node, d in zip(buyer_nodes, D):
        P[network.bus_index(node)] += d
    for node, s in zip(seller_nodes, S):
        P[network.bus_index(node)] -= s
    return P


@dataclass
class PowerFlowSolution:
    voltages: np.ndarray
    branch_currents: np.ndarray
    line_flows: np.ndarray
    converged: bool
    iterations: int
    residual: float = 0.0

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.voltages)


class DirectLoadFlow:
    """Reusable solver holding the DLF matrix of one network."""

    def __init__(self, network: Network, tol: float = VOLTAGE_TOL, max_iter: int = MAX_INNER_ITER):
        self.network = network
        self.tol = tol
        self.max_iter = max_iter
        self._bibc = build_bibc(network)
        self._dlf = build_dlf(network)
        self._at_slack = network.upstream < 0
        self._up = np.maximum(network.upstream, 0)

    def solve(self, P: np.ndarray) -> PowerFlowSolution:
        net = self.network
        P = np.asarray(P, dtype=float)
        if P.shape != (net.n_buses,):
            raise ContractError(f"expected {net.n_buses} bus withdrawals, got shape {P.shape}")
        if not np.all(np.isfinite(P)):
            raise ContractError("bus withdrawals must be finite")
        p = P / net.base_power
        v0 = net.slack_voltage
        V = np.full(net.n_buses, v0, dtype=complex)
        if not net.n_buses:
            return PowerFlowSolution(V, V.copy(), np.zeros(0), True, 0, 0.0)
        dlf = self._dlf
        residual = math.inf
        for it in range(1, self.max_iter + 1):
            V_next = v0 - dlf @ np.conj(p / V)
            residual = float(np.abs(V_next - V).max())
            V = V_next
            if residual <= self.tol:
                break
        else:
            raise PowerFlowDivergence(
                f"direct load flow did not converge in {self.max_iter} iterations "
                f"(last residual {residual:.3e} p.u.)",
                residual=residual,
                iterations=self.max_iter,
            )
        B = self._bibc @ np.conj(p / V)
        V_send = np.where(self._at_slack, v0, V[self._up])
        flows = np.real(V_send * np.conj(B)) * net.base_power
        return PowerFlowSolution(V, B, flows, True, it, residual)


def solve_power_flow(network: Network, P: Sequence[float]) -> PowerFlowSolution:
    return DirectLoadFlow(network).solve(np.asarray(P, dtype=float))


@dataclass
class ViolationReport:
    """Signed excesses: positive above an upper limit, negative below a lower one."""

    voltage: list[tuple[int, float]] = field(default_factory=list)
    flow: list[tuple[int, float]] = field(default_factory=list)

    def __bool__(self):
        return bool(self.voltage or self.flow)


def check_limits(solution: PowerFlowSolution, network: Network) -> ViolationReport:
    report = ViolationReport()
    for n, vm in enumerate(solution.magnitudes):
        if vm > network.v_max:
            report.voltage.append((network.buses[n], float(vm - network.v_max)))
        elif vm < network.v_min:
            report.voltage.append((network.buses[n], float(vm - network.v_min)))
    for l, (F, ln) in enumerate(zip(solution.line_flows, network.lines)):
        if F > ln.f_max:
            report.flow.append((l, float(F - ln.f_max)))
        elif F < ln.f_min:
            report.flow.append((l, float(F - ln.f_min)))
    return report
