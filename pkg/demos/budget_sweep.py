"""Objective of every method as the shared uplink bandwidth grows.

Run: python3 demos/budget_sweep.py
"""

from quhe.cli import SweepSpec, run_sweep
from quhe.scenario import surfnet_default

VALUES = (2.5e6, 5e6, 1e7, 2e7, 4e7)


def main():
    spec = SweepSpec("b_total", VALUES, ("quhe", "aa", "olaa", "occr"), (42,))
    rows = run_sweep(surfnet_default(), spec)
    methods = spec.methods
    print("B_total [MHz]  " + "  ".join(f"{m:>9s}" for m in methods))
    for v in VALUES:
        obj = {r["method"]: r["objective"] for r in rows if r["value"] == v}
        print(f"{v / 1e6:13.1f}  " + "  ".join(f"{obj[m]:9.5f}" for m in methods))


if __name__ == "__main__":
    main()
