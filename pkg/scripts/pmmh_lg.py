"""PMMH for the AR coefficient of a scalar linear-Gaussian model against the exact grid posterior."""

import numpy as np

from smcda import LinearGaussian, LinearGaussianParams, RngStream
from smcda.oracle import grid_posterior
from smcda.pmcmc import GaussianRandomWalk, UniformPrior, run_pmmh, tune_particles

from _common import parser, save


def main():
    p = parser(__doc__, "pmmh_lg")
    p.add_argument("--T", type=int, default=40)
    p.add_argument("--N", type=int, default=200)
    p.add_argument("--iterations", type=int, default=50_000)
    p.add_argument("--burn-in", type=int, default=1000)
    args = p.parse_args()

    _, ys = LinearGaussian(LinearGaussianParams.scalar(phi=0.7)).simulate(args.T, RngStream(args.seed + 9))

    def builder(th):
        return LinearGaussian(LinearGaussianParams.scalar(phi=float(th[0])))

    post = grid_posterior(lambda v: 0.0 if 0 <= v <= 1 else -np.inf, np.linspace(0, 1, 2001), ys,
                          lambda v: LinearGaussianParams.scalar(phi=v))
    mode = float(post.grid[np.argmax(post.density)])
    rep = tune_particles(builder, [mode], ys, 20, seed=args.seed, max_rounds=6)
    print(f"tune-n at phi={mode:.3f}: " + ", ".join(f"N={n} var={v:.2f}" for n, v in rep.rounds))

    chain = run_pmmh([0.5], args.iterations, UniformPrior([0.0], [1.0]), GaussianRandomWalk(0.15), builder, ys,
                     args.N, seed=args.seed, burn_in=args.burn_in)
    sample = chain.post_burn_in(args.burn_in)[:, 0]
    edges = np.linspace(0, 1, 41)
    hist = np.histogram(sample, edges)[0] / sample.size
    exact = post.bin_probabilities(edges)
    print(f"acceptance {chain.acceptance_rate:.2f}, TV to grid posterior {0.5 * np.abs(hist - exact).sum():.3f}")
    save(args.out, "histogram.csv", ["bin_low", "bin_high", "pmmh", "exact"],
         [[edges[i], edges[i + 1], hist[i], exact[i]] for i in range(40)])
    save(args.out, "chain.csv", ["iter", "phi", "log_lik_hat", "accepted"],
         [[k, chain.thetas[k, 0], chain.log_lik_hat[k], bool(chain.accepted[k])] for k in range(len(chain.thetas))])


if __name__ == "__main__":
    main()
