"""Regenerate the frozen symbolic reference values in tests/data/oracles.json.

Requires sympy (test extra). The package itself never imports sympy.
"""

import json
from pathlib import Path

import sympy as sp

OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "oracles.json"


def christoffel(g, xs):
    n = len(xs)
    gi = g.inv()
    G = [[[0] * n for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            for k in range(n):
                G[i][j][k] = sp.simplify(sum(gi[i, l] * (sp.diff(g[l, j], xs[k]) + sp.diff(g[l, k], xs[j])
                                                         - sp.diff(g[j, k], xs[l])) for l in range(n)) / 2)
    return G


def riemann(G, xs):
    # R[i][j][k][l] = (R(d_k, d_l) d_j)^i
    n = len(xs)
    R = [[[[0] * n for _ in range(n)] for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    e = sp.diff(G[i][j][l], xs[k]) - sp.diff(G[i][j][k], xs[l])
                    e += sum(G[i][m][k] * G[m][j][l] - G[i][m][l] * G[m][j][k] for m in range(n))
                    R[i][j][k][l] = sp.simplify(e)
    return R


def num(tree, subs):
    if isinstance(tree, list):
        return [num(t, subs) for t in tree]
    return float(sp.N(tree.subs(subs), 20))


def main():
    th, ph, ps = sp.symbols("x1 x2 x3")
    xs = [th, ph, ps]
    g = sp.Matrix([[sp.Rational(1, 4), 0, 0], [0, sp.Rational(1, 4), sp.cos(th) / 4], [0, sp.cos(th) / 4, sp.Rational(1, 4)]])
    G = christoffel(g, xs)
    R = riemann(G, xs)
    points = [[1.2, 0.1, 0.2], [0.7, -0.4, 1.3]]
    hopf = [{"point": p, "christoffel": num(G, dict(zip(xs, p))), "riemann": num(R, dict(zip(xs, p)))} for p in points]

    x, y = sp.symbols("x1 x2")
    exprs = ["x1^2*x2", "exp(2*x1)", "sin(x1)*cosh(x2)", "sqrt(1 + x1^2*x2^2)", "(x1 - x2)/(2 + sinh(x1*x2))"]
    jets = []
    for src in exprs:
        e = sp.sympify(src.replace("^", "**"), locals={"x1": x, "x2": y})
        for p in ([0.3, -0.2], [-0.7, 0.45]):
            for alpha in ([1, 0], [0, 1], [2, 1], [1, 3], [2, 2], [0, 4], [3, 2]):
                d = sp.diff(e, x, alpha[0], y, alpha[1]) if sum(alpha) else e
                jets.append({"expr": src, "point": p, "alpha": alpha, "value": float(sp.N(d.subs({x: p[0], y: p[1]}), 20))})
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps({"hopf": hopf, "jets": jets}, indent=1) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
