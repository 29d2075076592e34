import numpy as np

from transactive.powerflow import Line, Network


def random_feeder(rng, n_buses, r=(0.002, 0.02), x=(0.002, 0.02), f_max=100.0, shuffle=True):
    """Random radial feeder: bus k hangs off a uniformly chosen earlier bus."""
    lines = []
    for k in range(1, n_buses + 1):
        parent = int(rng.integers(0, k))
        z = complex(rng.uniform(*r), rng.uniform(*x))
        ends = (parent, k) if rng.random() < 0.5 or not shuffle else (k, parent)
        lines.append(Line(*ends, z, f_max))
    buses = list(range(1, n_buses + 1))
    if shuffle:
        rng.shuffle(lines)
        rng.shuffle(buses)
    return Network(tuple(buses), tuple(lines))


def chain(impedances, f_max=100.0, **kwargs):
    lines = tuple(Line(i, i + 1, z, f_max) for i, z in enumerate(impedances))
    return Network(tuple(range(1, len(impedances) + 1)), lines, **kwargs)


# (criterion, passed, detail) rows filled in by the acceptance suite
ACCEPTANCE = []


def report(criterion, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed
