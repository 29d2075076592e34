"""Command-line entry point.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure
(non-convergence, divergence, oracle disagreement).  Summaries go to
standard output as ``key=value`` lines.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from .coordinator import ClearingConfig, clear_market
from .exceptions import MarketError, PowerFlowDivergence, StepSizeError
from .oracle import centralized_clear, gauss_seidel_power_flow
from .powerflow import solve_power_flow
from .scenario import (
    DEFAULT_IMPEDANCE,
    POWER_BOUNDS,
    generate_scenario,
    load_scenario,
    save_scenario,
    sweep_sellers,
    write_players,
    write_sweep,
    write_trace,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2
COMPARE_PRICE_TOL = 1e-3
COMPARE_ALLOCATION_TOL = 1e-2
POWERFLOW_TOL = 1e-8


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _defaults_table() -> str:
    rows = [f"  {f.name:<20} {getattr(ClearingConfig(), f.name)!r}" for f in fields(ClearingConfig)]
    return "\n".join(
        [
            "clearing defaults:",
            *rows,
            "  (eps_balance None = 0.1% of total maximum demand)",
            "generator defaults:",
            f"  {'impedance':<20} {DEFAULT_IMPEDANCE!r} p.u. per span",
            f"  {'power bounds':<20} {POWER_BOUNDS!r} kW (sweep: (0.0, 4.0))",
            f"  {'v_min / v_max':<20} 0.95 / 1.05 p.u.",
            f"  {'f_max':<20} 100.0 kW",
            f"  {'base':<20} 100 kVA, 0.4 kV",
            "comparison tolerances:",
            f"  {'price':<20} {COMPARE_PRICE_TOL} $/kWh",
            f"  {'allocation':<20} {COMPARE_ALLOCATION_TOL} kW",
            f"  {'voltage':<20} {POWERFLOW_TOL} p.u.",
        ]
    )


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _add_config_flags(p):
    d = ClearingConfig()
    p.add_argument("--xi", type=float, default=d.xi, help="price step size")
    p.add_argument("--lambda0", type=float, default=d.lambda0, help="initial price ($/kWh)")
    p.add_argument("--max-iter", type=int, default=d.max_iterations)
    p.add_argument("--eps-balance", type=float, default=d.eps_balance, help="kW")
    p.add_argument("--eps-price", type=float, default=d.eps_price, help="$/kWh")
    p.add_argument("--sigma-v", type=float, default=d.sigma_v)
    p.add_argument("--sigma-f", type=float, default=d.sigma_f)
    p.add_argument("--network-signals", type=_on_off, default=d.network_signals, metavar="on|off")
    p.add_argument(
        "--signal-mode",
        choices=("accumulate", "per-round"),
        default="accumulate" if d.accumulate_signals else "per-round",
    )


def _config(args, **override) -> ClearingConfig:
    cfg = ClearingConfig(
        xi=args.xi,
        lambda0=args.lambda0,
        max_iterations=args.max_iter,
        eps_balance=args.eps_balance,
        eps_price=args.eps_price,
        sigma_v=args.sigma_v,
        sigma_f=args.sigma_f,
        network_signals=args.network_signals,
        accumulate_signals=args.signal_mode == "accumulate",
    )
    for key, value in override.items():
        setattr(cfg, key, value)
    return cfg


def _emit(**pairs):
    for key, value in pairs.items():
        if isinstance(value, bool):
            value = str(value).lower()
        print(f"{key}={value}")


def cmd_clear(args) -> int:
    scenario = load_scenario(args.scenario)
    result = clear_market(scenario, _config(args))
    sol = result.final_solution
    _emit(
        status="converged" if result.converged else "not_converged",
        lambda_star=f"{result.lambda_star:.6f}",
        total_supply_kw=f"{result.S_star.sum():.6f}",
        total_demand_kw=f"{result.D_star.sum():.6f}",
        iterations=result.iterations,
        runtime_s=f"{result.runtime:.4f}",
        max_voltage_pu=f"{sol.magnitudes.max():.6f}",
        min_voltage_pu=f"{sol.magnitudes.min():.6f}",
    )
    if args.trace_csv:
        write_trace(result, args.trace_csv)
    if args.players_csv:
        write_players(result, scenario, args.players_csv)
    return EXIT_OK if result.converged else EXIT_NUMERIC


def cmd_generate(args) -> int:
    scenario = generate_scenario(
        args.sellers,
        args.buyers,
        args.seed,
        impedance=complex(args.impedance_r, args.impedance_x),
        f_max=args.f_max,
        v_min=args.v_min,
        v_max=args.v_max,
        power_bounds=(args.min_kw, args.max_kw),
        layout=args.layout,
        label=args.label,
    )
    save_scenario(scenario, args.out)
    _emit(out=args.out, sellers=args.sellers, buyers=args.buyers, seed=args.seed)
    return EXIT_OK


def cmd_compare(args) -> int:
    scenario = load_scenario(args.scenario)
    t0 = time.perf_counter()
    result = clear_market(scenario, _config(args, network_signals=False))
    lam, S, D = centralized_clear(scenario)
    price_gap = abs(result.lambda_star - lam)
    alloc_gap = float(max(np.abs(result.S_star - S).max(), np.abs(result.D_star - D).max()))
    agree = result.converged and price_gap <= COMPARE_PRICE_TOL and alloc_gap <= COMPARE_ALLOCATION_TOL
    _emit(
        lambda_distributed=f"{result.lambda_star:.9f}",
        lambda_centralized=f"{lam:.9f}",
        lambda_gap=f"{price_gap:.3e}",
        max_allocation_gap_kw=f"{alloc_gap:.3e}",
        iterations=result.iterations,
        runtime_s=f"{time.perf_counter() - t0:.4f}",
        agree=agree,
    )
    return EXIT_OK if agree else EXIT_NUMERIC


def _parse_counts(text):
    if ":" in text:
        start, stop, step = (int(x) for x in text.split(":"))
        return list(range(start, stop + 1, step))
    return [int(x) for x in text.split(",") if x]


def cmd_sweep(args) -> int:
    counts = _parse_counts(args.counts)
    seeds = range(args.base_seed, args.base_seed + args.seeds)
    rows = sweep_sellers(args.total, counts, seeds, _config(args), power_bounds=(args.min_kw, args.max_kw))
    write_sweep(rows, args.out)
    _emit(rows=len(rows), out=args.out, converged=sum(r["converged"] for r in rows))
    return EXIT_OK


def _injections(args, n_buses):
    source = args.injections
    if source == "zero":
        return np.zeros(n_buses)
    if source == "random":
        rng = np.random.default_rng(args.seed)
        return rng.uniform(-args.scale_kw, args.scale_kw, n_buses)
    values = json.loads(Path(source).read_text(encoding="utf-8"))
    if not isinstance(values, list) or len(values) != n_buses:
        raise MarketError(f"{source}: expected a JSON list of {n_buses} withdrawals in kW")
    return np.asarray(values, dtype=float)


def cmd_powerflow_check(args) -> int:
    scenario = load_scenario(args.scenario)
    net = scenario.network
    P = _injections(args, net.n_buses)
    dlf = solve_power_flow(net, P)
    gs = gauss_seidel_power_flow(net, P)
    gap = float(np.abs(dlf.voltages - gs.voltages).max(initial=0.0))
    _emit(
        buses=net.n_buses,
        max_voltage_diff_pu=f"{gap:.3e}",
        dlf_iterations=dlf.iterations,
        gauss_seidel_sweeps=gs.iterations,
        agree=gap <= POWERFLOW_TOL,
    )
    return EXIT_OK if gap <= POWERFLOW_TOL else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="transactive",
        description="Distributed clearing of a local transactive energy market.",
        epilog=_defaults_table(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("clear", help="clear a market from a scenario file")
    p.add_argument("scenario")
    _add_config_flags(p)
    p.add_argument("--trace-csv")
    p.add_argument("--players-csv")
    p.set_defaults(func=cmd_clear)

    p = sub.add_parser("generate", help="write a random scenario file")
    p.add_argument("--sellers", type=int, required=True)
    p.add_argument("--buyers", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--impedance-r", type=float, default=DEFAULT_IMPEDANCE.real)
    p.add_argument("--impedance-x", type=float, default=DEFAULT_IMPEDANCE.imag)
    p.add_argument("--v-min", type=float, default=0.95)
    p.add_argument("--v-max", type=float, default=1.05)
    p.add_argument("--f-max", type=float, default=100.0)
    p.add_argument("--min-kw", type=float, default=POWER_BOUNDS[0])
    p.add_argument("--max-kw", type=float, default=POWER_BOUNDS[1])
    p.add_argument("--layout", choices=("buyers_first", "sellers_first"), default="buyers_first")
    p.add_argument("--label")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("compare", help="check the distributed result against the centralized oracle")
    p.add_argument("scenario")
    _add_config_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="clearing price and iterations versus seller count")
    p.add_argument("--total", type=int, default=50)
    p.add_argument("--counts", default="5:45:5", help="start:stop:step (inclusive) or a comma list")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--min-kw", type=float, default=0.0)
    p.add_argument("--max-kw", type=float, default=POWER_BOUNDS[1])
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("powerflow-check", help="compare direct load flow with Gauss-Seidel")
    p.add_argument("scenario")
    p.add_argument("--injections", default="zero", help="'zero', 'random' or a JSON file of kW")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale-kw", type=float, default=3.0)
    p.set_defaults(func=cmd_powerflow_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PowerFlowDivergence, StepSizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MarketError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
