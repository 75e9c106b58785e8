"""Command-line experiment driver.

    smcda <subcommand> --config run.json [--seed S] [--out DIR] [--threads K]

A config is a JSON object with ``model``, ``algorithm``, ``data``,
``output`` and ``seed`` blocks. Exit status: 0 on success, 2 when the
config is invalid (the message names the key), 3 when the algorithm fails
at run time (the message names the step or iteration).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .enkf import run_enkf
from .errors import CapabilityError, DomainError
from .pf import LinearGaussianOptimalProposal, run_particle_filter, weighted_quantiles
from .pmcmc import (
    GaussianRandomWalk,
    UniformPrior,
    identity_theta_update,
    lg_phi_conditional,
    run_particle_gibbs,
    run_pmmh,
    rw_metropolis_theta_update,
    tune_particles,
)
from .resample import SCHEMES
from .rng import RngStream
from .smooth import (
    MarginalSummary,
    TrajectoryStore,
    backward_sample_paths,
    ffbs_marginals,
    fixed_lag_smoother,
    kitagawa_marginals,
    unique_path_counts,
)
from .ssm import (
    LinearGaussian,
    LinearGaussianParams,
    Lorenz96,
    Lorenz96Params,
    StateSpaceModel,
    StochasticVolatility,
    SVParams,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

SUBCOMMANDS = ("simulate", "filter", "smooth", "enkf", "pmmh", "pgibbs", "tune-n")

# algorithm names accepted by each subcommand; the first is the default
ALGORITHMS = {
    "filter": ("bootstrap", "sis", "auxiliary"),
    "smooth": ("kitagawa", "ffbs", "backward", "fixed_lag"),
    "enkf": ("stochastic", "square_root"),
    "pmmh": ("pmmh",),
    "pgibbs": ("pgibbs",),
    "tune-n": ("tune-n",),
}

MODEL_KEYS = {
    "sv": {"phi", "sigma", "beta", "init_var"},
    "linear_gaussian": {"Phi", "Q", "H", "R", "m0", "P0"},
    "lorenz96": {"K", "forcing", "dt", "obs_sigma", "stride", "h", "init_sd"},
}

# parameters that PMMH / particle Gibbs may treat as unknown
FREE_PARAMETERS = {
    "sv": ("phi", "sigma", "beta"),
    "linear_gaussian": ("phi", "q", "r"),
    "lorenz96": ("forcing",),
}


class ConfigError(Exception):
    def __init__(self, key: str, message: str):
        super().__init__(f"config error at '{key}': {message}")
        self.key = key


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------


def _get(block: dict, key: str, where: str, kind, default=None, required=False):
    if key not in block:
        if required:
            raise ConfigError(f"{where}.{key}", "missing")
        return default
    val = block[key]
    name = f"{where}.{key}"
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(name, "must be an integer")
    elif kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
            raise ConfigError(name, "must be a finite number")
        val = float(val)
    elif kind is bool:
        if not isinstance(val, bool):
            raise ConfigError(name, "must be true or false")
    elif kind is str:
        if not isinstance(val, str):
            raise ConfigError(name, "must be a string")
    return val


def _block(cfg: dict, key: str, required: bool = True) -> dict:
    if key not in cfg:
        if required:
            raise ConfigError(key, "missing block")
        return {}
    if not isinstance(cfg[key], dict):
        raise ConfigError(key, "must be an object")
    return cfg[key]


@dataclass
class ModelSpec:
    name: str
    params: dict

    def build(self, overrides: dict | None = None) -> StateSpaceModel:
        p = dict(self.params)
        if self.name == "sv":
            init_var = p.pop("init_var", None)
            p.update(overrides or {})
            return StochasticVolatility(SVParams(**p), init_var=init_var)
        if self.name == "linear_gaussian":
            lg = LinearGaussianParams(**p)
            if overrides:
                lg = LinearGaussianParams(
                    Phi=[[overrides.get("phi", lg.Phi[0, 0])]],
                    Q=[[overrides.get("q", lg.Q[0, 0])]],
                    H=lg.H,
                    R=[[overrides.get("r", lg.R[0, 0])]],
                    m0=lg.m0,
                    P0=lg.P0,
                )
            return LinearGaussian(lg)
        p.update(overrides or {})
        return Lorenz96(Lorenz96Params(**p))

    def value(self, name: str) -> float:
        """Current value of a free parameter, taken from the model block."""
        if self.name == "linear_gaussian":
            m = self.build()
            return float({"phi": m.params.Phi, "q": m.params.Q, "r": m.params.R}[name][0, 0])
        defaults = {"sv": SVParams(), "lorenz96": Lorenz96Params()}[self.name]
        return float(self.params.get(name, getattr(defaults, name)))


def parse_model(cfg: dict) -> ModelSpec:
    block = _block(cfg, "model")
    name = _get(block, "name", "model", str, required=True)
    if name not in MODEL_KEYS:
        raise ConfigError("model.name", f"unknown model {name!r}; choose from {sorted(MODEL_KEYS)}")
    params = {k: v for k, v in block.items() if k != "name"}
    for k in params:
        if k not in MODEL_KEYS[name]:
            raise ConfigError(f"model.{k}", f"not a parameter of {name}")
    if name == "linear_gaussian":
        for k in ("Phi", "Q", "H", "R", "m0", "P0"):
            if k not in params:
                defaults = {"Phi": 0.9, "Q": 1.0, "H": 1.0, "R": 1.0, "m0": 0.0, "P0": 1.0}
                params[k] = defaults[k]
            v = np.asarray(params[k], dtype=float)
            if k == "m0":
                params[k] = np.atleast_1d(v)
            else:
                params[k] = np.atleast_2d(v)
    spec = ModelSpec(name, params)
    try:
        spec.build()
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError("model", str(exc)) from exc
    return spec


@dataclass
class DataSpec:
    T: int | None = None
    seed: int | None = None
    path: str | None = None


def parse_data(cfg: dict) -> DataSpec:
    block = _block(cfg, "data")
    path = _get(block, "path", "data", str)
    if path is not None:
        if "T" in block:
            raise ConfigError("data", "give either data.path or data.T, not both")
        return DataSpec(path=path)
    T = _get(block, "T", "data", int, required=True)
    if T < 1:
        raise ConfigError("data.T", "must be >= 1")
    seed = _get(block, "seed", "data", int)
    if seed is not None and seed < 0:
        raise ConfigError("data.seed", "must be a non-negative integer")
    return DataSpec(T=T, seed=seed)


@dataclass
class AlgorithmSpec:
    name: str
    N: int = 100
    scheme: str = "systematic"
    resample_threshold: float | None = None
    proposal: str = "model"
    lag: int | None = None
    paths: int | None = None
    inflation: float = 1.0
    taper_radius: float | None = None
    iterations: int = 1000
    burn_in: int = 0
    kernel_scale: list = field(default_factory=lambda: [0.1])
    parameters: dict = field(default_factory=dict)  # name -> (low, high)
    ancestor_sampling: bool = False
    theta_update: str = "metropolis"
    reps: int = 20
    target: float = 1.5
    max_rounds: int = 4


def parse_algorithm(cfg: dict, command: str, model: ModelSpec) -> AlgorithmSpec:
    block = _block(cfg, "algorithm")
    allowed = ALGORITHMS[command]
    name = _get(block, "name", "algorithm", str, default=allowed[0])
    if name not in allowed:
        raise ConfigError("algorithm.name", f"{name!r} is not valid for '{command}'; choose from {list(allowed)}")
    a = AlgorithmSpec(name)
    a.N = _get(block, "N", "algorithm", int, default=a.N)
    if a.N < 2:
        raise ConfigError("algorithm.N", "must be >= 2")
    a.scheme = _get(block, "scheme", "algorithm", str, default=a.scheme)
    if a.scheme not in SCHEMES:
        raise ConfigError("algorithm.scheme", f"choose from {list(SCHEMES)}")
    a.resample_threshold = _get(block, "resample_threshold", "algorithm", float)
    a.proposal = _get(block, "proposal", "algorithm", str, default=a.proposal)
    if a.proposal not in ("model", "optimal"):
        raise ConfigError("algorithm.proposal", "choose from ['model', 'optimal']")
    a.lag = _get(block, "lag", "algorithm", int)
    a.paths = _get(block, "paths", "algorithm", int)
    a.inflation = _get(block, "inflation", "algorithm", float, default=a.inflation)
    if a.inflation < 1.0:
        raise ConfigError("algorithm.inflation", "must be >= 1")
    a.taper_radius = _get(block, "taper_radius", "algorithm", float)
    if a.taper_radius is not None and a.taper_radius <= 0:
        raise ConfigError("algorithm.taper_radius", "must be positive")
    a.iterations = _get(block, "iterations", "algorithm", int, default=a.iterations)
    if a.iterations < 0:
        raise ConfigError("algorithm.iterations", "must be >= 0")
    a.burn_in = _get(block, "burn_in", "algorithm", int, default=a.burn_in)
    if not 0 <= a.burn_in <= a.iterations:
        raise ConfigError("algorithm.burn_in", "must lie in [0, iterations]")
    a.ancestor_sampling = _get(block, "ancestor_sampling", "algorithm", bool, default=False)
    a.theta_update = _get(block, "theta_update", "algorithm", str, default=a.theta_update)
    a.reps = _get(block, "reps", "algorithm", int, default=a.reps)
    a.target = _get(block, "target", "algorithm", float, default=a.target)
    a.max_rounds = _get(block, "max_rounds", "algorithm", int, default=a.max_rounds)

    params = block.get("parameters", {})
    if not isinstance(params, dict):
        raise ConfigError("algorithm.parameters", "must map parameter names to [low, high]")
    for k, bounds in params.items():
        key = f"algorithm.parameters.{k}"
        if k not in FREE_PARAMETERS[model.name]:
            raise ConfigError(key, f"{model.name} has free parameters {list(FREE_PARAMETERS[model.name])}")
        if not (isinstance(bounds, list) and len(bounds) == 2 and all(isinstance(b, (int, float)) for b in bounds)):
            raise ConfigError(key, "must be [low, high]")
        if not bounds[0] < bounds[1]:
            raise ConfigError(key, "low must be below high")
        if not bounds[0] < model.value(k) < bounds[1]:
            raise ConfigError(key, f"starting value {model.value(k)} from the model block is outside the bounds")
        a.parameters[k] = (float(bounds[0]), float(bounds[1]))
    if model.name == "linear_gaussian" and params and model.build().dim_state != 1:
        raise ConfigError("algorithm.parameters", "free parameters need a scalar linear-Gaussian model")

    scale = block.get("kernel_scale", a.kernel_scale)
    scale = scale if isinstance(scale, list) else [scale]
    if not all(isinstance(s, (int, float)) and s > 0 for s in scale):
        raise ConfigError("algorithm.kernel_scale", "must be positive")
    if len(scale) not in (1, max(1, len(a.parameters))):
        raise ConfigError("algorithm.kernel_scale", "needs one entry or one per parameter")
    a.kernel_scale = [float(s) for s in scale]

    # checks that depend on the subcommand and on model capabilities
    m = model.build()
    if command in ("pmmh",) and not a.parameters:
        raise ConfigError("algorithm.parameters", "PMMH needs at least one free parameter")
    if command == "smooth" and name == "fixed_lag":
        if a.lag is None:
            raise ConfigError("algorithm.lag", "fixed_lag needs a lag")
        if a.lag < 0:
            raise ConfigError("algorithm.lag", "must be >= 0")
    if command == "smooth" and name in ("ffbs", "backward") and not m.has_transition_density:
        raise ConfigError("algorithm.name", f"{name} needs a transition density, which {model.name} lacks")
    if command == "filter" and name == "auxiliary" and not m.has_transition_density:
        raise ConfigError("algorithm.name", f"auxiliary filter needs a transition density, which {model.name} lacks")
    if command == "filter" and a.proposal == "optimal" and (name != "auxiliary" or model.name != "linear_gaussian"):
        raise ConfigError("algorithm.proposal", "the optimal proposal needs the auxiliary filter on a linear-Gaussian model")
    if command == "enkf" and not hasattr(m, "obs_operator"):
        raise ConfigError("model.name", f"EnKF needs a linear observation operator, which {model.name} lacks")
    if command == "pgibbs":
        if a.ancestor_sampling and not m.has_transition_density:
            raise ConfigError("algorithm.ancestor_sampling", f"{model.name} has no transition density")
        if a.theta_update not in ("metropolis", "conjugate"):
            raise ConfigError("algorithm.theta_update", "choose from ['metropolis', 'conjugate']")
        if a.parameters and not m.has_transition_density:
            raise ConfigError("algorithm.parameters", f"parameter updates need a transition density, which {model.name} lacks")
        if a.theta_update == "conjugate" and (model.name != "linear_gaussian" or list(a.parameters) != ["phi"]):
            raise ConfigError("algorithm.theta_update", "conjugate update is available for a linear-Gaussian phi only")
    return a


@dataclass
class ExperimentConfig:
    command: str
    model: ModelSpec
    algorithm: AlgorithmSpec
    data: DataSpec
    out: Path
    formats: tuple
    seed: int
    threads: int = 1


def load_config(path, command: str, seed=None, out=None, threads: int = 1) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config", "top level must be an object")
    return parse_config(cfg, command, seed, out, threads)


def parse_config(cfg: dict, command: str, seed=None, out=None, threads: int = 1) -> ExperimentConfig:
    if command not in SUBCOMMANDS:
        raise ConfigError("command", f"unknown subcommand {command!r}")
    model = parse_model(cfg)
    data = parse_data(cfg)
    # simulate only draws the twin-experiment data; any algorithm block is ignored
    algo = AlgorithmSpec("none") if command == "simulate" else parse_algorithm(cfg, command, model)
    output = _block(cfg, "output", required=False)
    formats = output.get("formats", ["csv", "json"])
    if not isinstance(formats, list) or not set(formats) <= {"csv", "json"}:
        raise ConfigError("output.formats", "must be a list drawn from ['csv', 'json']")
    out_dir = out if out is not None else _get(output, "dir", "output", str, default=".")
    if seed is None:
        seed = _get(cfg, "seed", "config", int, default=0)
        if seed < 0 or seed >= 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
    if threads < 1:
        raise ConfigError("threads", "must be >= 1")
    return ExperimentConfig(command, model, algo, data, Path(out_dir), tuple(formats), int(seed), threads)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "%.17g" % v if math.isfinite(v) else "NA"


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(format_cell(v) for v in row) for row in rows)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_obs_csv(path) -> np.ndarray:
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if not header or header[0] != "t":
                raise ConfigError("data.path", "observation file must start with a 't' column")
            rows = [line.strip().split(",") for line in fh if line.strip()]
    except OSError as exc:
        raise ConfigError("data.path", f"cannot read {path}: {exc.strerror}") from exc
    try:
        ys = np.array([[float(c) for c in r[1:]] for r in rows])
    except ValueError as exc:
        raise ConfigError("data.path", f"non-numeric cell: {exc}") from exc
    if ys.ndim != 2 or ys.shape[0] < 1 or ys.shape[1] != len(header) - 1 or not np.all(np.isfinite(ys)):
        raise ConfigError("data.path", "observations must be a complete finite table")
    return ys


def _cols(prefix: str, d: int) -> list[str]:
    return [f"{prefix}_{k}" for k in range(1, d + 1)]


def simulate_truth(model: StateSpaceModel, T: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Exact forward draw ``(x_{0:T}, y_{1:T})`` for twin experiments."""
    if T < 1:
        raise DomainError("T must be >= 1")
    rng = seed if isinstance(seed, RngStream) else RngStream(int(seed))
    return model.simulate(T, rng)


def write_truth(out: Path, xs: np.ndarray, ys: np.ndarray) -> None:
    # states are written for the observation times only, one row per y_t
    write_csv(out / "truth.csv", ["t"] + _cols("x", xs.shape[1]), ([t, *xs[t]] for t in range(1, xs.shape[0])))
    write_csv(out / "obs.csv", ["t"] + _cols("y", ys.shape[1]), ([t, *ys[t - 1]] for t in range(1, ys.shape[0] + 1)))


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


def _filter(cfg, model, ys, rng, summary):
    a = cfg.algorithm
    proposal = None
    if a.proposal == "optimal":
        proposal = LinearGaussianOptimalProposal(model, model.params)
    res = run_particle_filter(
        model, ys, a.N, rng, method=a.name, scheme=a.scheme, resample_threshold=a.resample_threshold,
        proposal=proposal, threads=cfg.threads,
    )
    d = res.mean.shape[1]
    header = ["t"] + _cols("mean", d) + _cols("q05", d) + _cols("q95", d) + ["ess", "max_weight", "log_lik_cum"]
    rows = [
        [t, *res.mean[t], *res.q05[t], *res.q95[t], res.ess[t], res.max_weight[t], res.log_lik_cum[t]]
        for t in range(1, res.T + 1)
    ]
    summary["log_lik"] = res.log_lik
    return {"filter.csv": (header, rows)}


def _smooth(cfg, model, ys, rng, summary):
    a = cfg.algorithm
    res = run_particle_filter(model, ys, a.N, rng, scheme=a.scheme, store_particles=True, threads=cfg.threads)
    store = TrajectoryStore.from_filter(res)
    if a.name == "kitagawa":
        sm = kitagawa_marginals(store)
    elif a.name == "fixed_lag":
        sm = fixed_lag_smoother(store, a.lag)
    elif a.name == "ffbs":
        sm = ffbs_marginals(store, model)
    else:
        paths = backward_sample_paths(store, model, a.paths or a.N, rng.child("backward"))
        n = paths.shape[0]
        w = np.full(n, 1.0 / n)
        mean = paths.mean(axis=0)
        qs = np.array([weighted_quantiles(paths[:, s], w, (0.05, 0.95)) for s in range(paths.shape[1])])
        sm = MarginalSummary(mean, qs[:, 0], qs[:, 1])
    counts = unique_path_counts(store)
    d = sm.mean.shape[1]
    header = ["s"] + _cols("mean", d) + _cols("q05", d) + _cols("q95", d) + ["unique_paths"]
    rows = [[s, *sm.mean[s], *sm.q05[s], *sm.q95[s], int(counts[s])] for s in range(store.T + 1)]
    summary["log_lik"] = res.log_lik
    summary["unique_paths_at_0"] = int(counts[0])
    return {"smooth.csv": (header, rows)}


def _enkf(cfg, model, ys, rng, summary, truth):
    a = cfg.algorithm
    res = run_enkf(
        model, model.obs_operator, ys, a.N, inflation=a.inflation, taper=a.taper_radius, variant=a.name,
        seed=rng, truth=truth, threads=cfg.threads,
    )
    d = res.mean.shape[1]
    T = res.mean.shape[0] - 1
    header = ["t"] + _cols("mean", d) + _cols("spread", d) + (["rmse"] if truth is not None else [])
    rows = []
    for t in range(1, T + 1):
        row = [t, *res.mean[t], *res.spread[t]]
        if truth is not None:
            row.append(res.rmse[t])
        rows.append(row)
    if truth is not None:
        summary["mean_rmse"] = float(np.mean(res.rmse[1:]))
    return {"enkf.csv": (header, rows)}


def _builder(spec: ModelSpec, names):
    def build(theta):
        return spec.build(dict(zip(names, (float(v) for v in np.atleast_1d(theta)))))

    return build


def _chain_table(chain, names):
    p = len(names)
    header = ["iter"] + _cols("theta", p) + ["log_lik_hat", "accepted"]
    rows = [[k, *chain.thetas[k], chain.log_lik_hat[k], bool(chain.accepted[k])] for k in range(chain.thetas.shape[0])]
    return header, rows


def _prior_kernel(a: AlgorithmSpec):
    names = list(a.parameters)
    prior = UniformPrior([a.parameters[k][0] for k in names], [a.parameters[k][1] for k in names])
    scale = a.kernel_scale * len(names) if len(a.kernel_scale) == 1 else a.kernel_scale
    return names, prior, GaussianRandomWalk(np.array(scale))


def _pmmh(cfg, model, ys, rng, summary):
    a = cfg.algorithm
    names, prior, kernel = _prior_kernel(a)
    theta0 = [cfg.model.value(k) for k in names]
    chain = run_pmmh(theta0, a.iterations, prior, kernel, _builder(cfg.model, names), ys, a.N, rng,
                     burn_in=a.burn_in, scheme=a.scheme)
    summary["acceptance_rate"] = chain.acceptance_rate
    summary["parameters"] = names
    post = chain.post_burn_in(a.burn_in)
    summary["posterior_mean"] = [float(v) for v in post.mean(axis=0)]
    summary["log_lik"] = float(chain.log_lik_hat[-1])
    return {"chain.csv": _chain_table(chain, names)}


def _pgibbs(cfg, model, ys, rng, summary):
    a = cfg.algorithm
    if a.parameters:
        names, prior, _ = _prior_kernel(a)
        builder = _builder(cfg.model, names)
        if a.theta_update == "conjugate":
            low, high = a.parameters["phi"]
            update = lg_phi_conditional(float(model.params.Q[0, 0]), low, high)
        else:
            scale = a.kernel_scale * len(names) if len(a.kernel_scale) == 1 else a.kernel_scale
            update = rw_metropolis_theta_update(prior, builder, ys, np.array(scale))
        theta0 = [cfg.model.value(k) for k in names]
    else:
        names, theta0 = ["none"], [0.0]
        update = identity_theta_update

        def builder(theta):
            return model

    chain = run_particle_gibbs(theta0, a.iterations, update, builder, ys, a.N, rng,
                               ancestor_sampling=a.ancestor_sampling)
    summary["path_change_rate"] = chain.acceptance_rate
    if a.parameters:
        summary["parameters"] = names
        summary["posterior_mean"] = [float(v) for v in chain.post_burn_in(a.burn_in).mean(axis=0)]
        return {"chain.csv": _chain_table(chain, names)}
    header, rows = _chain_table(chain, names)
    header = ["iter", "log_lik_hat", "accepted"]
    return {"chain.csv": (header, [[r[0], r[-2], r[-1]] for r in rows])}


def _tune(cfg, model, ys, rng, summary):
    a = cfg.algorithm
    names = list(a.parameters)
    theta = [cfg.model.value(k) for k in names]

    def builder(th):
        return cfg.model.build(dict(zip(names, th))) if names else model

    rep = tune_particles(builder, np.asarray(theta if names else [0.0]), ys, a.N, rng,
                         reps=a.reps, target=a.target, max_rounds=a.max_rounds, scheme=a.scheme)
    summary["recommended_N"] = rep.recommended_N
    summary["final_variance"] = rep.final_variance
    rows = [[k, n, v] for k, (n, v) in enumerate(rep.rounds)]
    return {"tune.csv": (["round", "N", "var_log_lik"], rows)}


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run one configured experiment and write its result files."""
    started = time.perf_counter()
    model = cfg.model.build()
    truth = None
    if cfg.data.path is not None:
        ys = read_obs_csv(cfg.data.path)
        if ys.shape[1] != model.dim_obs:
            raise ConfigError("data.path", f"expected {model.dim_obs} observation columns, found {ys.shape[1]}")
    else:
        data_seed = cfg.seed if cfg.data.seed is None else cfg.data.seed
        truth, ys = simulate_truth(model, cfg.data.T, data_seed)
    rng = RngStream(cfg.seed)
    summary: dict = {"command": cfg.command, "algorithm": cfg.algorithm.name, "seed": cfg.seed, "T": int(ys.shape[0])}
    if cfg.command == "simulate":
        tables = {}
    elif cfg.command == "filter":
        tables = _filter(cfg, model, ys, rng, summary)
    elif cfg.command == "smooth":
        tables = _smooth(cfg, model, ys, rng, summary)
    elif cfg.command == "enkf":
        tables = _enkf(cfg, model, ys, rng, summary, truth)
    elif cfg.command == "pmmh":
        tables = _pmmh(cfg, model, ys, rng, summary)
    elif cfg.command == "pgibbs":
        tables = _pgibbs(cfg, model, ys, rng, summary)
    else:
        tables = _tune(cfg, model, ys, rng, summary)

    cfg.out.mkdir(parents=True, exist_ok=True)
    if "csv" in cfg.formats:
        if truth is not None:
            write_truth(cfg.out, truth, ys)
        for name, (header, rows) in tables.items():
            write_csv(cfg.out / name, header, rows)
    summary["runtime_seconds"] = time.perf_counter() - started
    if "json" in cfg.formats:
        clean = {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in summary.items()}
        (cfg.out / "summary.json").write_text(json.dumps(clean, indent=2, sort_keys=True) + "\n")
    return summary


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _seed_arg(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smcda", description="Seeded particle-filter and EnKF experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=_seed_arg, default=None, help="overrides the config seed")
        p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
        p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config, args.command, args.seed, args.out, args.threads)
        run_experiment(cfg)
    except ConfigError as exc:
        print(f"smcda: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapabilityError as exc:
        print(f"smcda: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, DomainError, np.linalg.LinAlgError) as exc:
        step = getattr(exc, "step", None)
        where = f" at step {step}" if step is not None else ""
        print(f"smcda: runtime failure{where}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
