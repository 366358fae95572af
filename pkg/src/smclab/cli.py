"""Config-driven experiment runner.

Every subcommand reads a JSON config, expands one master seed into named
sub-streams, writes plotting-ready CSV/JSON artifacts into the output
directory and records a ``run_manifest.json`` naming every file it produced
together with the config hash and library versions.  Identical config + seed
always reproduces byte-identical outputs, regardless of ``--threads``.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .configio import (
    SUBCOMMANDS,
    build_level_process,
    build_model,
    build_parametric_model,
    build_target_sequence,
    check_keys,
    load_config,
    require,
    _int,
    _matrix,
    _number,
)
from .dataio import (
    FORMAT_VERSION,
    canonical_json,
    read_observations,
    write_csv,
    write_json,
    write_observations,
)
from .enkf import EnkfConfig, run_enkf
from .errors import (
    CapabilityError,
    ConfigError,
    DegenerateModelError,
    DegenerateWeightsError,
    NumericalError,
)
from .exact import hmm_forward, kalman_smoother, run_kalman_filter
from .filtering import AuxiliarySpec, FilterConfig, run_filter
from .models import FiniteHMM, LinearGaussianSSM, simulate
from .pmmh import PmmhConfig, ProposalKernel, run_pmmh
from .resampling import ResamplingConfig
from .smc_sampler import SmcSamplerConfig, run_smc_sampler
from .smoothing import backward_smooth, smoothed_means, smoothed_quantiles
from .splitting import splitting_run
from .util import parallel_map, substream

_ALGORITHM_ERRORS = (
    CapabilityError,
    DegenerateWeightsError,
    DegenerateModelError,
    NumericalError,
)


def _resampling_from(section: dict, where: str) -> ResamplingConfig:
    try:
        return ResamplingConfig(
            scheme=section.get("resampling", "systematic"),
            ess_fraction=_number(section.get("ess_threshold", 0.5), f"{where}.ess_threshold"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def _resolve_observations(cfg: dict, model, seed: int, subcommand: str,
                          outputs: dict, out_dir: Path) -> np.ndarray:
    section = require(cfg, "observations", "")
    check_keys(section, {"path", "simulate_steps", "true_theta"}, "observations")
    if "path" in section:
        return read_observations(section["path"])
    steps = _int(require(section, "simulate_steps", "observations"),
                 "observations.simulate_steps", minimum=0)
    rng = substream(seed, subcommand, "observations")
    _, ys = simulate(model, steps, rng)
    path = out_dir / "observations.csv"
    write_observations(path, ys)
    outputs["observations.csv"] = path
    return ys


def _write_manifest(out_dir: Path, subcommand: str, cfg: dict, seed: int,
                    outputs: dict) -> None:
    digest = hashlib.sha256(canonical_json(cfg).encode()).hexdigest()
    manifest = {
        "format_version": FORMAT_VERSION,
        "subcommand": subcommand,
        "seed": seed,
        "config_sha256": digest,
        "versions": {
            "python": ".".join(map(str, sys.version_info[:3])),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "smclab": __version__,
        },
        "outputs": sorted(outputs),
    }
    write_json(out_dir / "run_manifest.json", manifest)


def _trace_rows(trace):
    for t in range(trace.n_steps):
        yield (t + 1, trace.ess[t], trace.loglik_increments[t],
               trace.resampled[t], *trace.means[t])


def _cmd_simulate(cfg, seed, out_dir, threads, oracle):
    model = build_model(require(cfg, "model", ""))
    section = require(cfg, "simulate", "")
    check_keys(section, {"steps"}, "simulate")
    steps = _int(require(section, "steps", "simulate"), "simulate.steps", minimum=0)
    rng = substream(seed, "simulate", "run")
    states, ys = simulate(model, steps, rng)
    outputs = {}
    states_2d = np.atleast_2d(states.astype(float).reshape(states.shape[0], -1))
    write_csv(out_dir / "states.csv",
              [f"x{i + 1}" for i in range(states_2d.shape[1])],
              states_2d)
    outputs["states.csv"] = True
    write_observations(out_dir / "observations.csv", ys)
    outputs["observations.csv"] = True
    return outputs


def _oracle_filter_comparison(model, ys, trace, out_dir, outputs):
    if isinstance(model, LinearGaussianSSM):
        exact = run_kalman_filter(model, ys)
        rows = []
        for t in range(trace.n_steps):
            belief = exact.filtered[t + 1]
            sd = np.sqrt(np.diag(belief.cov))
            err = trace.means[t] - belief.mean
            rows.append((t + 1, *trace.means[t], *belief.mean, *err, *sd))
        d = trace.means.shape[1]
        header = (["step"] + [f"pf_mean_{i+1}" for i in range(d)]
                  + [f"exact_mean_{i+1}" for i in range(d)]
                  + [f"mean_error_{i+1}" for i in range(d)]
                  + [f"posterior_sd_{i+1}" for i in range(d)])
    elif isinstance(model, FiniteHMM):
        beliefs, _ = hmm_forward(model, ys)
        if trace.ensembles is None:
            raise ConfigError("filter.store must be true for --oracle on a finite_hmm model")
        rows = []
        for t in range(trace.n_steps):
            ens = trace.ensembles[t + 1]
            emp = model.empirical_marginals(ens.states, ens.weights.linear())
            exact_p = beliefs[t + 1].probs
            tv = 0.5 * np.abs(emp - exact_p).sum()
            rows.append((t + 1, *emp, *exact_p, tv))
        k = model.n_states
        header = (["step"] + [f"pf_prob_{i+1}" for i in range(k)]
                  + [f"exact_prob_{i+1}" for i in range(k)] + ["total_variation"])
    else:
        raise ConfigError("--oracle is only available for linear_gaussian and finite_hmm models")
    path = out_dir / "oracle_comparison.csv"
    write_csv(path, header, rows)
    outputs["oracle_comparison.csv"] = True


def _cmd_filter(cfg, seed, out_dir, threads, oracle):
    model = build_model(require(cfg, "model", ""))
    section = require(cfg, "filter", "")
    check_keys(section, {"n_particles", "algorithm", "ess_threshold", "resampling", "store"},
               "filter")
    n = _int(require(section, "n_particles", "filter"), "filter.n_particles", minimum=1)
    algorithm = section.get("algorithm", "sir")
    if algorithm not in ("sir", "apf"):
        raise ConfigError("field filter.algorithm must be 'sir' or 'apf'")
    store = bool(section.get("store", False)) or (oracle and isinstance(model, FiniteHMM))
    outputs = {}
    ys = _resolve_observations(cfg, model, seed, "filter", outputs, out_dir)
    config = FilterConfig(n_particles=n, resampling=_resampling_from(section, "filter"),
                          store_ensembles=store)
    aux = None
    if algorithm == "apf":
        if isinstance(model, LinearGaussianSSM):
            aux = AuxiliarySpec.for_linear_gaussian(model)
        elif isinstance(model, FiniteHMM):
            aux = AuxiliarySpec.for_hmm(model)
        else:
            raise ConfigError("filter.algorithm 'apf' needs a linear_gaussian or finite_hmm model")
    rng = substream(seed, "filter", "run")
    trace = run_filter(model, ys, config, rng, aux=aux)
    d = trace.means.shape[1]
    header = ["step", "ess", "loglik_increment", "resampled"] + [
        f"mean_{i + 1}" for i in range(d)
    ]
    write_csv(out_dir / "trace.csv", header, _trace_rows(trace))
    outputs["trace.csv"] = True
    if oracle:
        _oracle_filter_comparison(model, ys, trace, out_dir, outputs)
    return outputs


def _cmd_enkf(cfg, seed, out_dir, threads, oracle):
    model = build_model(require(cfg, "model", ""))
    if not isinstance(model, LinearGaussianSSM):
        raise ConfigError("enkf requires a linear_gaussian model")
    section = require(cfg, "enkf", "")
    check_keys(section, {"n_members", "shrinkage", "taper_radius"}, "enkf")
    n = _int(require(section, "n_members", "enkf"), "enkf.n_members", minimum=2)
    try:
        enkf_cfg = EnkfConfig.for_model(
            model,
            shrinkage=_number(section.get("shrinkage", 0.0), "enkf.shrinkage"),
            taper_radius=section.get("taper_radius"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid enkf: {exc}") from exc
    outputs = {}
    ys = _resolve_observations(cfg, model, seed, "enkf", outputs, out_dir)
    rng = substream(seed, "enkf", "run")
    trace = run_enkf(model, ys, n, enkf_cfg, rng)
    d = trace.means.shape[1]
    header = ["step"] + [f"mean_{i+1}" for i in range(d)] + [f"var_{i+1}" for i in range(d)]
    rows = [
        (t + 1, *trace.means[t], *np.diag(trace.covs[t])) for t in range(trace.n_steps)
    ]
    write_csv(out_dir / "trace.csv", header, rows)
    outputs["trace.csv"] = True
    if oracle:
        exact = run_kalman_filter(model, ys)
        rows = []
        for t in range(trace.n_steps):
            belief = exact.filtered[t + 1]
            rows.append((t + 1, *trace.means[t], *belief.mean,
                         *np.diag(trace.covs[t]), *np.diag(belief.cov)))
        header = (["step"] + [f"enkf_mean_{i+1}" for i in range(d)]
                  + [f"exact_mean_{i+1}" for i in range(d)]
                  + [f"enkf_var_{i+1}" for i in range(d)]
                  + [f"exact_var_{i+1}" for i in range(d)])
        write_csv(out_dir / "oracle_comparison.csv", header, rows)
        outputs["oracle_comparison.csv"] = True
    return outputs


def _cmd_smooth(cfg, seed, out_dir, threads, oracle):
    model = build_model(require(cfg, "model", ""))
    section = require(cfg, "smooth", "")
    check_keys(section, {"n_particles", "ess_threshold", "resampling"}, "smooth")
    n = _int(require(section, "n_particles", "smooth"), "smooth.n_particles", minimum=1)
    outputs = {}
    ys = _resolve_observations(cfg, model, seed, "smooth", outputs, out_dir)
    config = FilterConfig(n_particles=n, resampling=_resampling_from(section, "smooth"),
                          store_ensembles=True)
    rng = substream(seed, "smooth", "run")
    trace = run_filter(model, ys, config, rng)
    sw = backward_smooth(trace, model)
    means = smoothed_means(trace, sw)
    quants = smoothed_quantiles(trace, sw, [0.05, 0.5, 0.95])
    d = means.shape[1]
    header = (["step"] + [f"mean_{i+1}" for i in range(d)] + ["q05", "q50", "q95"])
    rows = [(t, *means[t], *quants[t]) for t in range(means.shape[0])]
    write_csv(out_dir / "smoothed.csv", header, rows)
    outputs["smoothed.csv"] = True
    if oracle:
        if not isinstance(model, LinearGaussianSSM):
            raise ConfigError("--oracle for smooth requires a linear_gaussian model")
        exact = run_kalman_filter(model, ys)
        smoothed = kalman_smoother(exact, model.F)
        rows = []
        for t, belief in enumerate(smoothed):
            sd = np.sqrt(np.diag(belief.cov))
            rows.append((t, *means[t], *belief.mean, *(means[t] - belief.mean), *sd))
        header = (["step"] + [f"pf_mean_{i+1}" for i in range(d)]
                  + [f"exact_mean_{i+1}" for i in range(d)]
                  + [f"mean_error_{i+1}" for i in range(d)]
                  + [f"posterior_sd_{i+1}" for i in range(d)])
        write_csv(out_dir / "oracle_comparison.csv", header, rows)
        outputs["oracle_comparison.csv"] = True
    return outputs


def _cmd_pmmh(cfg, seed, out_dir, threads, oracle):
    section = require(cfg, "pmmh", "")
    check_keys(section, {"model", "iterations", "burn_in", "n_particles",
                         "proposal_scale", "init_theta"}, "pmmh")
    model = build_parametric_model(require(section, "model", "pmmh"))
    iterations = _int(require(section, "iterations", "pmmh"), "pmmh.iterations", minimum=0)
    burn_in = _int(section.get("burn_in", 0), "pmmh.burn_in", minimum=0)
    n = _int(require(section, "n_particles", "pmmh"), "pmmh.n_particles", minimum=1)
    scale = _number(require(section, "proposal_scale", "pmmh"), "pmmh.proposal_scale")
    init_theta = _matrix(section, "init_theta", "pmmh")
    outputs = {}
    obs_section = require(cfg, "observations", "")
    if "path" not in obs_section:
        true_theta = _matrix(obs_section, "true_theta", "observations")
        sim_model = model.build(true_theta)
    else:
        sim_model = None
    ys = _resolve_observations(cfg, sim_model, seed, "pmmh", outputs, out_dir)
    try:
        proposal = ProposalKernel.gaussian_random_walk(scale)
    except ValueError as exc:
        raise ConfigError(f"invalid pmmh.proposal_scale: {exc}") from exc
    rng = substream(seed, "pmmh", "run")
    chain = run_pmmh(model, ys, proposal, iterations, burn_in, PmmhConfig(n), rng,
                     init_theta)
    d = chain.thetas.shape[1] if chain.thetas.size else len(init_theta)
    header = ["iteration"] + [f"theta_{i+1}" for i in range(d)] + ["log_lik", "accepted"]
    rows = [
        (burn_in + i + 1, *chain.thetas[i], chain.log_liks[i], chain.accepted[i])
        for i in range(chain.thetas.shape[0])
    ]
    write_csv(out_dir / "theta_trace.csv", header, rows)
    outputs["theta_trace.csv"] = True
    summary = {
        "acceptance_rate": chain.acceptance_rate,
        "iterations": iterations,
        "burn_in": burn_in,
        "n_particles": n,
        "posterior_mean": chain.thetas.mean(axis=0).tolist() if chain.thetas.size else None,
        "posterior_sd": chain.thetas.std(axis=0, ddof=1).tolist()
        if chain.thetas.shape[0] > 1 else None,
    }
    write_json(out_dir / "summary.json", summary)
    outputs["summary.json"] = True
    return outputs


def _cmd_smc(cfg, seed, out_dir, threads, oracle):
    section = require(cfg, "smc", "")
    check_keys(section, {"n_particles", "steps", "n_moves", "base", "target",
                         "replications", "ess_threshold", "resampling"}, "smc")
    seq = build_target_sequence(section)
    n = _int(require(section, "n_particles", "smc"), "smc.n_particles", minimum=1)
    n_moves = _int(section.get("n_moves", 2), "smc.n_moves", minimum=0)
    reps = _int(section.get("replications", 1), "smc.replications", minimum=1)
    config = SmcSamplerConfig(n_particles=n, n_moves=n_moves,
                              resampling=_resampling_from(section, "smc"))
    rngs = [substream(seed, "smc", "rep", i) for i in range(reps)]
    results = parallel_map(lambda r: run_smc_sampler(seq, config, r), rngs, threads)
    log_zs = np.array([res.log_z for res in results])
    final = results[0].ensemble
    d = final.states.shape[1]
    header = ["weight"] + [f"x{i+1}" for i in range(d)]
    rows = [(w, *x) for w, x in zip(final.weights.linear(), final.states)]
    write_csv(out_dir / "samples.csv", header, rows)
    summary = {
        "log_z": log_zs.tolist(),
        "log_z_mean": float(log_zs.mean()),
        "log_z_se": float(log_zs.std(ddof=1) / np.sqrt(reps)) if reps > 1 else None,
        "replications": reps,
        "min_ess": float(min(res.ess.min() for res in results)),
    }
    write_json(out_dir / "summary.json", summary)
    return {"samples.csv": True, "summary.json": True}


def _cmd_rare_event(cfg, seed, out_dir, threads, oracle):
    section = require(cfg, "rare_event", "")
    check_keys(section, {"n_particles", "replications", "chain", "levels",
                         "kill_below", "max_steps"}, "rare_event")
    lp = build_level_process(section)
    n = _int(require(section, "n_particles", "rare_event"), "rare_event.n_particles",
             minimum=1)
    reps = _int(section.get("replications", 1), "rare_event.replications", minimum=1)
    rngs = [substream(seed, "rare-event", "rep", i) for i in range(reps)]
    runs = parallel_map(lambda r: splitting_run(lp, n, r), rngs, threads)
    estimates = np.array([r.estimate for r in runs])
    payload = {
        "estimate": float(estimates.mean()),
        "standard_error": float(estimates.std(ddof=1) / np.sqrt(reps)) if reps > 1 else None,
        "level_fractions": np.mean([r.level_fractions for r in runs], axis=0).tolist(),
        "replications": reps,
        "n_particles": n,
        "total_chain_steps": int(sum(r.total_chain_steps for r in runs)),
    }
    write_json(out_dir / "estimate.json", payload)
    return {"estimate.json": True}


_HANDLERS = {
    "simulate": (_cmd_simulate, {"model", "simulate", "seed"}),
    "filter": (_cmd_filter, {"model", "filter", "observations", "seed"}),
    "enkf": (_cmd_enkf, {"model", "enkf", "observations", "seed"}),
    "smooth": (_cmd_smooth, {"model", "smooth", "observations", "seed"}),
    "pmmh": (_cmd_pmmh, {"pmmh", "observations", "seed"}),
    "smc": (_cmd_smc, {"smc", "seed"}),
    "rare-event": (_cmd_rare_event, {"rare_event", "seed"}),
}


def run(subcommand: str, config_path: str, seed: int | None, out: str,
        threads: int = 1, oracle: bool = False) -> list[str]:
    """Execute one experiment; returns the list of files written."""
    handler, allowed = _HANDLERS[subcommand]
    cfg = load_config(config_path)
    check_keys(cfg, allowed, "")
    if seed is None:
        seed = _int(cfg.get("seed", 0), "seed", minimum=0)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = handler(cfg, seed, out_dir, threads, oracle)
    _write_manifest(out_dir, subcommand, cfg, seed, outputs)
    return sorted(outputs) + ["run_manifest.json"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smclab",
        description="Sequential Monte Carlo experiments with reproducible seeding.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment described by --config")
        p.add_argument("--config", required=True, help="JSON experiment configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (overrides the config's 'seed')")
        p.add_argument("--out", default="smclab-out", help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for replicated runs (never affects results)")
        p.add_argument("--oracle", action="store_true",
                       help="also run the exact reference method and emit a comparison")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        files = run(args.subcommand, args.config, args.seed, args.out,
                    args.threads, args.oracle)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _ALGORITHM_ERRORS as exc:
        print(f"error: [{args.subcommand}] {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    for name in files:
        print(f"wrote {Path(args.out) / name}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
