"""Conditional particle filter mixing on the SV model.

Per-time change frequency of the reference path over repeated sweeps, with
and without ancestor sampling, for several particle counts.
"""

import numpy as np

from smcda import RngStream, StochasticVolatility, SVParams
from smcda.pmcmc import conditional_particle_filter

from _common import parser, save


def change_frequency(model, ys, N, sweeps, ancestor_sampling, seed, burn=50):
    x = np.zeros((len(ys) + 1, 1))
    changed = np.zeros(len(ys) + 1)
    rng = RngStream(seed)
    for k in range(burn + sweeps):
        new, _ = conditional_particle_filter(x, model, ys, N, ancestor_sampling, rng.child(k))
        if k >= burn:
            changed += new[:, 0] != x[:, 0]
        x = new
    return changed / sweeps


def main():
    p = parser(__doc__.splitlines()[0], "pg_mixing")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--sweeps", type=int, default=1000)
    args = p.parse_args()

    m = StochasticVolatility(SVParams(0.9, 0.3, 0.6))
    _, ys = m.simulate(args.n, RngStream(args.seed + 10))
    rows = []
    for N in (10, 30, 100):
        for asamp in (False, True):
            freq = change_frequency(m, ys, N, args.sweeps, asamp, args.seed + N)
            rows.extend([N, int(asamp), t, f] for t, f in enumerate(freq))
            print(f"N={N:3d} ancestor_sampling={asamp!s:5}  t=0: {freq[0]:.3f}  t=n: {freq[-1]:.3f}")
    save(args.out, "change_frequency.csv", ["N", "ancestor_sampling", "t", "change_frequency"], rows)


if __name__ == "__main__":
    main()
