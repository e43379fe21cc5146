"""Normal-chart residuals as the RK4 step of both chart legs is refined."""
import argparse

import numpy as np

from foliab import fixtures
from foliab import normal_charts as nc
from foliab import suites


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("fixture", nargs="?", default="FIX-HOPF")
    ap.add_argument("--center", type=float, nargs="+", default=[1.2, 0.1, 0.2])
    ap.add_argument("--radius", type=float, default=0.2)
    ap.add_argument("--steps", type=float, nargs="+", default=[2e-2, 1e-2, 5e-3])
    ap.add_argument("--points", type=int, default=3)
    args = ap.parse_args()
    fx = fixtures.get(args.fixture)
    rng = np.random.default_rng(0)
    center = np.asarray(args.center[: fx.metric.n])
    probe = None
    for step in args.steps:
        chart = nc.NormalChart(fx.metric, center, args.radius, args.radius, nc.ChartConfig(step=step))
        if probe is None:
            probe = suites.chart_samples(chart, args.points, rng)
        xf, xt = probe
        frame = max(nc.frame_ode_residual(chart, v, x) or 0.0
                    for v in nc.FRAME_VARIANTS for x in (xt if v.startswith("transverse") else xf))
        radial = max(nc.radial_identity_residual(chart, v, x) or 0.0
                     for v in nc.RADIAL_VARIANTS[:4] for x in (xt if "transverse" in v else xf))
        vanish = max(nc.gamma_vanishing_residuals(chart, xt[:, : chart.nt]))
        print(f"step {step:7.3g}: frame ODE {frame:.2e}  radial {radial:.2e}  frame connection {vanish:.2e}")


if __name__ == "__main__":
    main()
