"""Largest importance weight after one bootstrap step as the observation dimension grows."""

import numpy as np

from smcda import LinearGaussian, LinearGaussianParams, RngStream
from smcda.pf import collapse_diagnostic, run_bootstrap_filter

from _common import parser, save


def main():
    p = parser(__doc__, "weight_collapse")
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--reps", type=int, default=200)
    args = p.parse_args()

    rows = []
    for d in (1, 2, 5, 10, 25, 50, 125, 250):
        eye = np.eye(d)
        m = LinearGaussian(LinearGaussianParams(np.zeros((d, d)), eye, eye, eye, np.zeros(d), eye))
        stats = []
        for r in range(args.reps):
            _, ys = m.simulate(1, RngStream(args.seed + 10_000 + r))
            res = run_bootstrap_filter(m, ys, args.N, seed=args.seed + r, store_particles=True)
            stats.append(collapse_diagnostic(np.exp(res.log_weights[1])))
        mx, ratio, e = np.median(np.array(stats), axis=0)
        rows.append([d, mx, ratio, e])
        print(f"d={d:4d}  median max weight {mx:.3f}  ESS {e:.1f}")
    save(args.out, "collapse.csv", ["d", "median_max_weight", "median_top2_ratio", "median_ess"], rows)


if __name__ == "__main__":
    main()
