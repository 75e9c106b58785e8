"""Lorenz 96 twin experiment: analysis RMSE over inflation and taper radius.

Writes ``rmse_grid.csv`` (one row per setting) and ``rmse_path.csv`` with the
per-step RMSE of the regularised and unregularised runs.
"""

import math

import numpy as np

from smcda import DivergenceError, Lorenz96, RngStream
from smcda.enkf import run_enkf

from _common import parser, save


def main():
    p = parser(__doc__.splitlines()[0], "lorenz96_twin")
    p.add_argument("--T", type=int, default=200)
    p.add_argument("--variant", default="stochastic", choices=["stochastic", "square_root"])
    args = p.parse_args()

    m = Lorenz96()
    xs, ys = m.simulate(args.T, RngStream(args.seed))
    start = min(50, args.T)
    rows = []
    for N in (20, 40):
        for infl in (1.0, 1.02, 1.05, 1.1):
            for radius in (None, 2.0, 4.0, 8.0):
                try:
                    res = run_enkf(m, m.obs_operator, ys, N, infl, radius, args.variant, args.seed + 1, truth=xs)
                    rmse, step = res.time_avg_rmse(start, args.T), None
                except DivergenceError as exc:
                    rmse, step = math.nan, exc.step
                rows.append([N, infl, math.nan if radius is None else radius, rmse, step if step else math.nan])
                print(f"N={N:3d} inflation={infl:.2f} taper={radius} rmse={rmse:.3f}")
    save(args.out, "rmse_grid.csv", ["N", "inflation", "taper_radius", "rmse", "diverged_at"], rows)

    reg = run_enkf(m, m.obs_operator, ys, 40, 1.05, 4.0, args.variant, args.seed + 1, truth=xs).rmse
    try:
        raw = run_enkf(m, m.obs_operator, ys, 20, 1.0, None, args.variant, args.seed + 1, truth=xs).rmse
    except DivergenceError:
        raw = np.full(args.T + 1, math.nan)
    save(args.out, "rmse_path.csv", ["t", "rmse_regularised", "rmse_raw"],
         [[t, reg[t], raw[t]] for t in range(args.T + 1)])


if __name__ == "__main__":
    main()
