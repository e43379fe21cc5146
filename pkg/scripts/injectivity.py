"""Shooting estimates of the ambient, leafwise and transverse injectivity radii on FIX-HOPF."""
import argparse
import math
import time

from foliab import audit as au
from foliab import fixtures

TARGET = {"ambient": math.pi, "leafwise": math.pi, "transverse": math.pi / 2}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cap", type=float, default=4.0)
    ap.add_argument("--shoot-step", type=float, nargs="+", default=[2e-2, 1e-2])
    ap.add_argument("--lattice", type=int, default=3)
    args = ap.parse_args()
    fx = fixtures.get("FIX-HOPF")
    print(f"{'step':>6} {'kind':>10} {'floor':>8} {'target':>8} {'rel':>7} {'time':>6}")
    for step in args.shoot_step:
        cfg = au.AuditConfig(cap=args.cap, shoot_step=step, injectivity_lattice=args.lattice)
        runs = {"ambient": lambda: au.ambient_injectivity_floor(fx.metric, cfg, fx),
                "leafwise": lambda: au.leafwise_injectivity_floor(fx.metric, cfg, fx),
                "transverse": lambda: au.transverse_injectivity_floor(fx, cfg)}
        for kind, fn in runs.items():
            t0 = time.perf_counter()
            est = fn()
            rel = est.floor / TARGET[kind] - 1
            print(f"{step:6.3g} {kind:>10} {est.floor:8.4f} {TARGET[kind]:8.4f} {rel:+7.1%} "
                  f"{time.perf_counter() - t0:5.1f}s")


if __name__ == "__main__":
    main()
