"""Sup of |T| on FIX-WARP-SINGULAR as the domain edge eps approaches the singular line."""
import argparse

from foliab import audit as au
from foliab import fixtures


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.02, 0.01])
    ap.add_argument("--lattice", type=int, default=9)
    ap.add_argument("--m-max", type=int, default=2)
    args = ap.parse_args()
    cfg = au.AuditConfig(lattice=args.lattice, m_max=args.m_max)
    print(f"{'eps':>8} {'sup|T|':>12} {'eps*sup|T|':>11} {'sup|nabla T|':>13}  verdict")
    for eps in args.eps:
        fx = fixtures.get("FIX-WARP-SINGULAR", eps=eps)
        rep = au.covariant_bound_table(fx.metric, cfg, fx)
        t0 = rep.sup[("T", 0)]
        t1 = rep.sup.get(("T", 1), float("nan"))
        print(f"{eps:8.3g} {t0:12.6g} {eps * t0:11.6f} {t1:13.6g}  {rep.verdict}")


if __name__ == "__main__":
    main()
