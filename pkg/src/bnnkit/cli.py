"""Command-line entry point.

Exit codes: 0 success, 2 usage or invalid configuration, 3 numeric failure,
4 state or sequencing error (for example evaluating before training).

Every command writes a manifest recording the full argument set, including
the seed, so ``bnnkit rerun <manifest>`` reproduces the artifacts byte for
byte. Artifacts are staged in a scratch directory and moved into place only
when the command succeeds.
"""

from __future__ import annotations

import argparse
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .advi import AdviConfig, Family, VariationalState, run_advi, sample_standardized
from .bnn import (
    N_BALLS,
    WEIGHT_TABLE_HEADER,
    BnnArchitecture,
    bayes_optimal_accuracy,
    bnn_log_joint,
    decision_boundary_grid,
    posterior_predictive,
    split_tickets,
    synthesize_powerball,
    weight_posterior_summary,
)
from .diagnostics import confusion, summarize
from .errors import (
    AdviDivergenceError,
    EstimationError,
    EvaluationError,
    InitializationError,
    InsufficientSampleError,
    InvalidArgumentError,
)
from .io import read_json, write_csv, write_json
from .mcmc import HmcConfig, MhConfig, NutsConfig, SampleSet, sample_chains
from .model_core import Dataset
from .presets import PRESETS, build_preset, parse_floats

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_STATE = 0, 2, 3, 4
SUBSTREAMS = {"data": 0, "init": 1, "sampler": 2}


class StateError(RuntimeError):
    """A command was run before the artifacts it depends on exist."""


class NumericFailure(RuntimeError):
    pass


def substream_seed(seed: int, name: str) -> int:
    """Integer seed for a named substream of the run seed."""
    ss = np.random.SeedSequence(seed, spawn_key=(SUBSTREAMS[name],))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


class Staging:
    """Collect artifacts in a scratch directory; publish them on success."""

    def __init__(self, output_dir):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.dir = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.output_dir))
        # set for failures whose partial state is itself a deliverable
        self.keep_on_failure = False

    def path(self, name) -> Path:
        return self.dir / name

    def commit(self):
        for f in sorted(self.dir.iterdir()):
            f.replace(self.output_dir / f.name)
        self.dir.rmdir()

    def discard(self):
        shutil.rmtree(self.dir, ignore_errors=True)


def _manifest(command, args) -> dict:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "output_dir", "command_path")}
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": "bnnkit",
        "version": __version__,
        "command": command,
        "seed": args.seed,
        "args": params,
    }


def _write_summary(stage: Staging, name: str, summary: dict, fmt: str):
    if fmt == "json":
        write_json(stage.path(f"{name}.json"), summary)
    else:
        write_csv(stage.path(f"{name}.csv"), ["key", "value"], _flatten(summary))


def _flatten(d, prefix=""):
    rows = []
    for k in sorted(d):
        v = d[k]
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            rows.extend(_flatten(v, key + "."))
        elif isinstance(v, (list, tuple, np.ndarray)):
            for i, x in enumerate(np.ravel(np.asarray(v, dtype=object))):
                rows.append((f"{key}[{i}]", x))
        else:
            rows.append((key, "" if v is None else v))
    return rows


# model presets -------------------------------------------------------------


def _preset_from_args(args):
    return build_preset(
        args.model, alpha=args.alpha, beta=args.beta, heads=args.heads, tails=args.tails,
        events=args.events, intervals=args.intervals, concentration=args.concentration,
        counts=args.counts, mean=args.mean, rho=args.rho,
    )


def _add_model_flags(p):
    p.add_argument("--model", choices=PRESETS, default="beta-bernoulli")
    p.add_argument("--alpha", type=float, default=1.0, help="Beta/Gamma prior shape")
    p.add_argument("--beta", type=float, default=1.0, help="Beta prior second shape or Gamma prior rate")
    p.add_argument("--heads", type=int, default=0)
    p.add_argument("--tails", type=int, default=0)
    p.add_argument("--events", type=int, default=0, help="total Poisson events")
    p.add_argument("--intervals", type=int, default=0, help="number of Poisson intervals")
    p.add_argument("--concentration", default="1,1,1", help="Dirichlet prior, comma separated")
    p.add_argument("--counts", default="0,0,0", help="category counts, comma separated")
    p.add_argument("--mean", default="1,-1", help="gaussian-2d mean")
    p.add_argument("--rho", type=float, default=0.9, help="gaussian-2d correlation")


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir", default=".")
    p.add_argument("--format", choices=("json", "csv"), default="json")


# sample ---------------------------------------------------------------------


def _sampler_config(args, seed):
    if args.sampler == "mh":
        return MhConfig(proposal_scale=args.proposal_scale, n_samples=args.n, n_warmup=args.warmup, seed=seed)
    if args.sampler == "hmc":
        return HmcConfig(step_size=args.step_size or 0.1, n_leapfrog=args.n_leapfrog, n_samples=args.n,
                         n_warmup=args.warmup, seed=seed, target_accept=args.target_accept)
    return NutsConfig(target_accept=args.target_accept or 0.8, max_tree_depth=args.max_tree_depth,
                      n_samples=args.n, n_warmup=args.warmup, seed=seed, step_size=args.step_size)


def cmd_sample(args, stage: Staging):
    preset = _preset_from_args(args)
    cfg = _sampler_config(args, substream_seed(args.seed, "sampler"))
    try:
        samples = sample_chains(args.sampler, preset.model, cfg, n_chains=args.chains)
    except (InitializationError, EvaluationError) as exc:
        raise NumericFailure(str(exc)) from exc
    samples.to_csv(stage.path("draws.csv"))
    summary = summarize(samples, args.hpd_mass)
    summary["reference"] = preset.reference()
    summary["model"] = args.model
    _write_summary(stage, "summary", summary, args.format)


# advi -----------------------------------------------------------------------


def _advi_summary(preset, state: VariationalState, seed, n_draws=10_000):
    rng = np.random.default_rng(substream_seed(seed, "sampler"))
    _, zeta = sample_standardized(state, rng, n_draws)
    theta = np.array([preset.model.constrain(z) for z in zeta]).reshape(n_draws, -1)
    out = {
        "family": state.family.value,
        "mu": state.mu,
        "covariance": state.covariance,
        "posterior_mean": theta.mean(axis=0),
        "posterior_variance": theta.var(axis=0),
        "reference": preset.reference(),
    }
    if preset.true_cov is not None:
        out["mu_error"] = float(np.max(np.abs(state.mu - preset.true_mean)))
        out["sigma_rel_frobenius_error"] = float(
            np.linalg.norm(state.covariance - preset.true_cov) / np.linalg.norm(preset.true_cov)
        )
    return out


def _advi_config(args, seed):
    return AdviConfig(n_mc_samples=args.mc_samples, base_step=args.base_step, adaptive=args.adaptive,
                      n_iterations=args.iterations, elbo_check_every=args.elbo_every,
                      n_elbo_samples=args.elbo_samples, seed=seed)


def _persist_advi(stage, state, trace):
    write_json(stage.path("variational_state.json"), state.to_dict())
    write_csv(stage.path("elbo_trace.csv"), ["iteration", "elbo"],
              ((int(i), float(e)) for i, e in np.asarray(trace).reshape(-1, 2)))


def cmd_advi(args, stage: Staging):
    preset = _preset_from_args(args)
    cfg = _advi_config(args, substream_seed(args.seed, "sampler"))
    try:
        result = run_advi(preset.model, args.family, cfg)
    except AdviDivergenceError as exc:
        _persist_advi(stage, exc.state, exc.trace)
        write_json(stage.path("failure.json"), {"error": str(exc), "iteration": exc.iteration})
        stage.keep_on_failure = True
        raise NumericFailure(str(exc)) from exc
    _persist_advi(stage, result.state, result.elbo_trace)
    _write_summary(stage, "summary", _advi_summary(preset, result.state, args.seed), args.format)


# powerball --------------------------------------------------------------------


def cmd_pb_synthesize(args, stage: Staging):
    ds = synthesize_powerball(args.tickets, substream_seed(args.seed, "data"))
    ds.to_csv(stage.path("dataset.csv"))


def _arch_from_args(args):
    hidden = tuple(int(h) for h in parse_floats(args.hidden))
    return BnnArchitecture(1, hidden, "tanh", args.prior_std, True)


def _dataset_path(args) -> Path:
    p = Path(args.data) if args.data else Path(args.output_dir) / "dataset.csv"
    if not p.is_file():
        raise StateError(f"no dataset at {p}; run 'powerball synthesize' first or pass --data")
    return p


def cmd_pb_train(args, stage: Staging):
    data = Dataset.from_csv(_dataset_path(args))
    train, _ = split_tickets(data, args.test_fraction)
    arch = _arch_from_args(args)
    model = bnn_log_joint(arch, train)
    info = {"method": args.method, "architecture": arch.to_dict(), "test_fraction": args.test_fraction,
            "data": args.data or "dataset.csv", "n_train_rows": len(train)}
    if args.method == "advi":
        cfg = AdviConfig(n_mc_samples=args.mc_samples, base_step=args.base_step, adaptive=args.adaptive,
                         n_iterations=args.iterations, elbo_check_every=args.elbo_every,
                         n_elbo_samples=args.elbo_samples, seed=substream_seed(args.seed, "sampler"))
        try:
            result = run_advi(model, args.family, cfg)
        except AdviDivergenceError as exc:
            _persist_advi(stage, exc.state, exc.trace)
            stage.keep_on_failure = True
            raise NumericFailure(str(exc)) from exc
        _persist_advi(stage, result.state, result.elbo_trace)
        info["family"] = Family(args.family).value
        info["final_elbo"] = float(result.elbo_trace[-1, 1]) if len(result.elbo_trace) else None
    else:
        cfg = NutsConfig(target_accept=args.target_accept, max_tree_depth=args.max_tree_depth,
                         n_samples=args.n, n_warmup=args.warmup, seed=substream_seed(args.seed, "sampler"))
        try:
            samples = sample_chains("nuts", model, cfg, n_chains=args.chains)
        except (InitializationError, EvaluationError) as exc:
            raise NumericFailure(str(exc)) from exc
        samples.to_csv(stage.path("draws.csv"))
        info["step_size"] = samples.info.get("step_size")
        info["divergences"] = int(np.sum(samples.divergent))
    write_json(stage.path("inference.json"), info)


def _load_inference(args):
    out = Path(args.output_dir)
    meta_path = out / "inference.json"
    if not meta_path.is_file():
        raise StateError(f"no trained model in {out}; run 'powerball train' first")
    meta = read_json(meta_path)
    arch = BnnArchitecture.from_dict(meta["architecture"])
    if meta["method"] == "advi":
        inference = VariationalState.from_dict(read_json(out / "variational_state.json"))
    else:
        inference = SampleSet.from_csv(out / "draws.csv")
    return meta, arch, inference


def _rng(args):
    return np.random.default_rng(substream_seed(args.seed, "sampler"))


def cmd_pb_evaluate(args, stage: Staging):
    meta, arch, inference = _load_inference(args)
    data_path = Path(meta["data"]) if meta["data"] != "dataset.csv" else Path(args.output_dir) / "dataset.csv"
    if not data_path.is_file():
        raise StateError(f"training dataset {data_path} is missing")
    _, test = split_tickets(Dataset.from_csv(data_path), meta["test_fraction"])
    rng = _rng(args)
    pred = posterior_predictive(arch, inference, test.features, args.n_draws, rng)
    cm = confusion(np.array([s.mean_prob for s in pred]), test.labels)
    cm.to_csv(stage.path("confusion.csv"))
    values = np.arange(0, N_BALLS + 1, dtype=float)
    table = posterior_predictive(arch, inference, values[:, None], args.n_draws, rng)
    write_csv(stage.path("uncertainty.csv"), ["value", "mean_prob", "std_prob", "hpd_low", "hpd_high"],
              ([int(v), s.mean_prob, s.std_prob, s.hpd_low, s.hpd_high] for v, s in zip(values, table)))
    summary = {
        "accuracy": cm.accuracy,
        "bayes_optimal_accuracy": bayes_optimal_accuracy(),
        "confusion": cm.to_dict(),
        "n_test_rows": len(test),
        "method": meta["method"],
    }
    _write_summary(stage, "evaluation", summary, args.format)


def cmd_pb_boundary(args, stage: Staging):
    _, arch, inference = _load_inference(args)
    header, rows = decision_boundary_grid(arch, inference, (args.low, args.high), args.resolution,
                                          args.n_draws, _rng(args))
    write_csv(stage.path("boundary.csv"), header, rows)


def cmd_pb_weights(args, stage: Staging):
    _, arch, inference = _load_inference(args)
    rows = weight_posterior_summary(inference, arch, args.n_draws, _rng(args))
    write_csv(stage.path("weights.csv"), WEIGHT_TABLE_HEADER, ([r[k] for k in WEIGHT_TABLE_HEADER] for r in rows))


# parser -----------------------------------------------------------------------


def _add_advi_flags(p, iterations, base_step, adaptive):
    p.add_argument("--family", choices=[f.value for f in Family], default="fullrank")
    p.add_argument("--iterations", type=int, default=iterations)
    p.add_argument("--mc-samples", type=int, default=10)
    p.add_argument("--base-step", type=float, default=base_step)
    p.add_argument("--adaptive", action=argparse.BooleanOptionalAction, default=adaptive)
    p.add_argument("--elbo-every", type=int, default=100)
    p.add_argument("--elbo-samples", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnnkit", description="Bayesian inference toolkit")
    parser.add_argument("--version", action="version", version=f"bnnkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="MCMC on a model preset")
    _add_model_flags(p)
    _add_common(p)
    p.add_argument("--sampler", choices=("mh", "hmc", "nuts"), default="nuts")
    p.add_argument("--n", type=int, default=1000, help="draws per chain")
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--proposal-scale", type=float, default=1.0)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--n-leapfrog", type=int, default=20)
    p.add_argument("--target-accept", type=float, default=None)
    p.add_argument("--max-tree-depth", type=int, default=10)
    p.add_argument("--hpd-mass", type=float, default=0.9)
    p.set_defaults(func=cmd_sample, command_path=["sample"])

    p = sub.add_parser("advi", help="variational inference on a model preset")
    _add_model_flags(p)
    _add_common(p)
    _add_advi_flags(p, iterations=5000, base_step=0.1, adaptive=False)
    p.set_defaults(func=cmd_advi, command_path=["advi"])

    pb = sub.add_parser("powerball", help="bin classification experiment")
    pbs = pb.add_subparsers(dest="subcommand", required=True)

    p = pbs.add_parser("synthesize", help="simulate tickets into dataset.csv")
    _add_common(p)
    p.add_argument("--tickets", type=int, default=20_000)
    p.set_defaults(func=cmd_pb_synthesize, command_path=["powerball", "synthesize"])

    p = pbs.add_parser("train", help="fit the BNN")
    _add_common(p)
    p.add_argument("--data", default=None, help="dataset CSV (default: <output-dir>/dataset.csv)")
    p.add_argument("--method", choices=("advi", "nuts"), default="advi")
    p.add_argument("--hidden", default="5", help="hidden layer widths, comma separated")
    p.add_argument("--prior-std", type=float, default=1.0)
    p.add_argument("--test-fraction", type=float, default=0.2)
    _add_advi_flags(p, iterations=3000, base_step=0.5, adaptive=True)
    p.add_argument("--n", type=int, default=500, help="NUTS draws per chain")
    p.add_argument("--warmup", type=int, default=500)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--max-tree-depth", type=int, default=10)
    p.set_defaults(func=cmd_pb_train, command_path=["powerball", "train"])

    p = pbs.add_parser("evaluate", help="held-out accuracy, confusion matrix, uncertainty table")
    _add_common(p)
    p.add_argument("--n-draws", type=int, default=1000)
    p.set_defaults(func=cmd_pb_evaluate, command_path=["powerball", "evaluate"])

    p = pbs.add_parser("boundary", help="predictive grid CSV")
    _add_common(p)
    p.add_argument("--resolution", type=int, default=100)
    p.add_argument("--low", type=float, default=0.0)
    p.add_argument("--high", type=float, default=float(N_BALLS))
    p.add_argument("--n-draws", type=int, default=500)
    p.set_defaults(func=cmd_pb_boundary, command_path=["powerball", "boundary"])

    p = pbs.add_parser("weights", help="weight posterior summary CSV")
    _add_common(p)
    p.add_argument("--n-draws", type=int, default=2000)
    p.set_defaults(func=cmd_pb_weights, command_path=["powerball", "weights"])

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--output-dir", default=None, help="default: the manifest's directory")
    p.set_defaults(func=None, command_path=["rerun"])
    return parser


def _manifest_name(command_path):
    return "manifest.json" if len(command_path) == 1 else f"manifest_{command_path[-1]}.json"


def _args_from_manifest(parser, path, output_dir):
    manifest = read_json(path)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise InvalidArgumentError(f"unsupported manifest schema {manifest.get('schema_version')!r}")
    args = parser.parse_args(list(manifest["command"]))
    known = vars(args)
    for k, v in manifest["args"].items():
        if k not in known:
            raise InvalidArgumentError(f"manifest argument {k!r} is not understood by this version")
        setattr(args, k, v)
    args.output_dir = output_dir if output_dir is not None else str(Path(path).parent)
    return args


def run(args) -> int:
    stage = Staging(args.output_dir)
    try:
        args.func(args, stage)
        write_json(stage.path(_manifest_name(args.command_path)), _manifest(args.command_path, args))
    except BaseException as exc:
        if stage.keep_on_failure:
            write_json(stage.path(_manifest_name(args.command_path)),
                       dict(_manifest(args.command_path, args), status="failed"))
            stage.commit()
        else:
            stage.discard()
        if isinstance(exc, (InvalidArgumentError, InsufficientSampleError)):
            print(f"bnnkit: error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        if isinstance(exc, (NumericFailure, EstimationError, EvaluationError, InitializationError)):
            print(f"bnnkit: numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        if isinstance(exc, StateError):
            print(f"bnnkit: {exc}", file=sys.stderr)
            return EXIT_STATE
        raise
    stage.commit()
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "rerun":
        try:
            args = _args_from_manifest(parser, args.manifest, args.output_dir)
        except (OSError, ValueError, KeyError) as exc:
            print(f"bnnkit: error: cannot rerun {args.manifest}: {exc}", file=sys.stderr)
            return EXIT_USAGE
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
