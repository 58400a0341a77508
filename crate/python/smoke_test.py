#!/usr/bin/env python3
"""Smoke test for the Python bindings.

Builds the extension module, imports it, runs the Y-junction fixture and
checks mass bookkeeping, junction splitting and the flat metric.

Usage: python3 python/smoke_test.py
"""

import pathlib
import shutil
import subprocess
import sys

ROOT = pathlib.Path(__file__).resolve().parents[1]
HERE = pathlib.Path(__file__).resolve().parent


def build_and_import():
    subprocess.run(
        ["cargo", "build", "-p", "netmass-py", "--release"],
        check=True,
        cwd=ROOT,
    )
    so = ROOT / "target" / "release" / "libnetmass_py.so"
    dest = HERE / "netmass.so"
    shutil.copy(so, dest)
    sys.path.insert(0, str(HERE))
    import netmass

    return netmass


def check(label, ok):
    print(f"{'PASS' if ok else 'FAIL'}  {label}")
    if not ok:
        sys.exit(1)


def main():
    netmass = build_and_import()

    sc = netmass.Scenario.from_file(str(ROOT / "fixtures" / "y_junction.json"))
    check("scenario loads and validates", sc.horizon == 2.0)

    sol = sc.simulate(5)
    times = sol.times
    check("grid has 2^5 + 1 times", len(times) == 33)

    residuals = sol.mass_residuals()
    check("mass ledger balances to 1e-12", max(residuals) <= 1e-12)

    # After T = 2 every initial atom and the source atom have crossed the
    # junction; the split masses follow the 0.3 / 0.7 routing row.
    final = sol.snapshot(len(times) - 1)
    left = sum(m for arc, _, m in final if arc == "left")
    right = sum(m for arc, _, m in final if arc == "right")
    total0 = sol.total_mass(0)
    check("all mass has crossed the junction", abs(left + right - (total0 + 0.6)) < 1e-12)
    check("routing split is 0.3 / 0.7", abs(left / (left + right) - 0.3) < 1e-12)

    # Trace events balance: each arrival equals the sum of its children.
    traces = sol.traces()
    arrivals = [(t, m) for _, _, to, t, m in traces if to is None]
    spawned = [(t, m) for _, _, to, t, m in traces if to is not None]
    check(
        "trace mass balances at the vertex",
        abs(sum(m for _, m in arrivals) - sum(m for _, m in spawned)) < 1e-12,
    )

    # Flat metric: two unit atoms at distance d on one road give 2d/(2+d).
    d = sc.flat_distance([("feed", 0.0, 1.0)], [("feed", 0.5, 1.0)])
    check("flat distance closed form", abs(d - 0.4) < 1e-9)

    # Distances respect orientation.
    check("graph distance", abs(sc.graph_distance(("feed", 0.2), ("feed", 0.9)) - 0.7) < 1e-12)
    check("forward distance is directional", sc.forward_distance(("feed", 0.9), ("feed", 0.2)) is None)

    # Convergence gaps on the nonlocal fixture decrease.
    nl = netmass.Scenario.from_file(str(ROOT / "fixtures" / "y_nonlocal.json"))
    rows = nl.converge([4, 5, 6])
    check("nonlocal levels are Cauchy", rows[1][1] <= rows[0][1])

    print("smoke test passed")


if __name__ == "__main__":
    main()
