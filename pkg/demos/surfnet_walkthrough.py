"""Solve the bundled SURFnet instance and compare against the baselines.

Run: python3 demos/surfnet_walkthrough.py [seed]
"""

import sys

from quhe.objective import objective_terms
from quhe.orchestrator import BASELINES, run_baseline, run_quhe
from quhe.scenario import surfnet_default


def main(seed=42):
    sc = surfnet_default().with_seed(seed)
    res = run_quhe(sc)
    s = res.state
    print(f"seed {seed}: objective {res.objective:.6f}, converged {res.converged}, "
          f"{res.trace.outer_iterations} outer / {res.trace.inner_iterations} inner iterations")

    print("\nkey rates per route")
    for r, phi in zip(sc.topology.routes, s.phi):
        print(f"  route {r.id} {'-'.join(r.end_nodes):22s} phi = {phi:.4f}")

    print("\nper-client allocation")
    print("  client  lambda    p [W]   b [MHz]  f_c [GHz]  f_s [GHz]")
    for n in range(sc.N):
        print(f"  {n + 1:6d}  {int(s.lam[n]):6d}  {s.p[n]:7.4f}  {s.b[n] / 1e6:8.3f}"
              f"  {s.f_c[n] / 1e9:9.3f}  {s.f_s[n] / 1e9:9.3f}")

    print("\nmethod  objective   U_qkd      U_msl     T [s]     E [J]")
    rows = [("QuHE", s)] + [(k, run_baseline(sc, k).state) for k in BASELINES]
    for name, state in rows:
        t = objective_terms(sc, state)
        print(f"{name:6s}  {t.value:9.5f}  {t.u_qkd:8.5f}  {t.u_msl:8.3f}  {t.T:8.1f}  {t.e_total:9.1f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 42)
