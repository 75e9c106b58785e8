"""Ancestral path counts of the bootstrap filter on the SV model.

For each seed, writes the number of distinct time-s ancestors of the final
particles (``paths.csv``) and the coalescence lag ``T - s*`` (``lags.csv``).
"""

import math

from smcda import RngStream, StochasticVolatility, SVParams
from smcda.pf import run_bootstrap_filter
from smcda.smooth import TrajectoryStore, coalescence_time, unique_path_counts

from _common import parser, save


def main():
    p = parser(__doc__.splitlines()[0], "path_degeneracy")
    p.add_argument("--N", type=int, default=20)
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--seeds", type=int, default=20)
    args = p.parse_args()

    m = StochasticVolatility(SVParams(0.9, 0.3, 0.6))
    counts, lags = [], []
    for s in range(args.seeds):
        _, ys = m.simulate(args.T, RngStream(args.seed + 1000 + s))
        res = run_bootstrap_filter(m, ys, args.N, seed=args.seed + s, store_particles=True)
        store = TrajectoryStore.from_filter(res)
        c = unique_path_counts(store)
        counts.extend([s, t, int(k)] for t, k in enumerate(c))
        tc = coalescence_time(store)
        lags.append([s, args.T - tc if tc is not None else math.nan])
    save(args.out, "paths.csv", ["seed", "s", "unique_paths"], counts)
    save(args.out, "lags.csv", ["seed", "coalescence_lag"], lags)
    nlogn = args.N * math.log(args.N)
    print(f"N log N = {nlogn:.1f}; lags: {sorted(l for _, l in lags)}")


if __name__ == "__main__":
    main()
