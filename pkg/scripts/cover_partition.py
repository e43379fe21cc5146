"""Build a chart cover and partition of unity on a box and report its statistics."""
import argparse
import csv

from foliab import fixtures, suites


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("fixture", nargs="?", default="FIX-PRODUCT")
    ap.add_argument("--r1", type=float, default=0.5)
    ap.add_argument("--box", type=float, nargs=4, default=[-1, 1, -1, 1], metavar=("X0", "X1", "Y0", "Y1"))
    ap.add_argument("--test-k", type=int, default=100)
    ap.add_argument("--queries", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--weights-csv", help="write query points and weights here")
    args = ap.parse_args()
    region = [args.box[:2], args.box[2:]]
    res = suites.partition(fixtures.get(args.fixture), args.r1, region, test_k=args.test_k,
                           queries=args.queries, seed=args.seed)
    info = res.info
    print(f"{args.fixture}: {len(info['centers'])} centres, radii {info['radii']}, "
          f"N = {info['N']} (volume bound {info['N_volume']}), coverage {info['coverage']:.2%}")
    for c in res.checks:
        print(f"  {'ok  ' if c.passed else 'FAIL'} {c.name}: {c.residual:.3g} (tol {c.tolerance:g})")
    if args.weights_csv:
        rows = res.tables["weights"]
        with open(args.weights_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
