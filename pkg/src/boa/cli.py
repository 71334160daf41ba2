"""Command-line entry point: ``boa <subcommand> --flags``.

On failure the process exits with status 1 and writes a single JSON line
``{"error": <exception type>, "message": <text>}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataset as ds
from .errors import BoaError, ConsistencyError
from .featurizer import FeaturizerSpec
from .gridworld import TASKS, EnvSpec
from .harness import (
    AGENTS,
    K_GRID,
    Artifacts,
    RunSpec,
    ablate_k,
    ablate_n,
    evaluate,
    index_for,
    report,
)
from .latent_index import LatentIndex
from .policies import fit_linear_bc, fit_tabular_bc, load_policy, save_policy


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _env_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", required=True, choices=TASKS)
    p.add_argument("--width", type=int, default=0, help="interior width (0: task default)")
    p.add_argument("--height", type=int, default=0, help="interior height (0: task default)")
    p.add_argument("--max-steps", type=int, default=0, help="episode limit T (0: task default)")
    p.add_argument("--view-radius", type=int, default=3)


def _env_spec(args) -> EnvSpec:
    return EnvSpec(args.env, args.width, args.height, args.max_steps, args.view_radius)


def _featurizer_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--featurizer-seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=64)


def _run_flags(p: argparse.ArgumentParser) -> None:
    _env_flags(p)
    p.add_argument("--agent", required=True, choices=AGENTS)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--runs", type=int, default=6)
    p.add_argument("--seed", type=int, default=0, help="master seed; run r uses seed ^ r")
    p.add_argument("--index", type=Path)
    p.add_argument("--policy", type=Path)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--epsilon", type=float, default=0.0, help="uniform mixture weight of the base policy")
    p.add_argument(
        "--mode",
        default="sample_dirichlet_then_categorical",
        choices=("sample_dirichlet_then_categorical", "mean_categorical", "argmax_mean"),
    )
    p.add_argument("--horizon", type=int, default=20, help="ZIP copy horizon")
    p.add_argument("--threshold", type=float, default=0.5, help="ZIP re-search squared distance")
    p.add_argument("--argmax", action="store_true", help="act greedily with plain BC policies")
    p.add_argument("--time-queries", action="store_true", help="fill mean_query_ms (not reproducible)")
    p.add_argument("--out", type=Path, help="CSV output path (stdout if omitted)")


def _run_spec(args) -> RunSpec:
    return RunSpec(
        agent=args.agent,
        env=_env_spec(args),
        episodes=args.episodes,
        runs=args.runs,
        seed=args.seed,
        k=args.k,
        epsilon=args.epsilon,
        mode=args.mode,
        horizon=args.horizon,
        threshold=args.threshold,
        argmax=args.argmax,
    )


def _load_artifacts(args, spec: RunSpec) -> Artifacts:
    art = Artifacts()
    if getattr(args, "index", None):
        art.index = LatentIndex.load(args.index)
        if art.index.featurizer:
            art.featurizer = FeaturizerSpec.from_dict(art.index.featurizer)
    if getattr(args, "policy", None):
        art.policy, meta = load_policy(args.policy)
        fp = meta.get("env_fingerprint")
        if fp is not None and fp != spec.env.fingerprint():
            raise ConsistencyError("policy was fitted on a different environment configuration")
        if meta.get("featurizer"):
            feat = FeaturizerSpec.from_dict(meta["featurizer"])
            if art.featurizer is not None and feat != art.featurizer:
                raise ConsistencyError("policy and index were built with different featurizers")
            art.featurizer = feat
    return art


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_bytes(text.encode("utf-8"))


def cmd_record(args) -> None:
    data = ds.record(
        _env_spec(args), args.episodes, args.seed, eta=args.eta, keep_failures=args.keep_failures
    )
    ds.save(data, args.out)


def cmd_fit_bc(args) -> None:
    data = ds.load(args.dataset)
    meta = {"env_fingerprint": data.env.fingerprint()}
    if args.kind == "tabular":
        policy = fit_tabular_bc(data.pairs(), data.env.num_actions, args.beta, args.tau)
    else:
        feat = FeaturizerSpec.for_env(data.env, args.featurizer_seed, args.dim)
        entries = ds.encode_dataset(data, feat)
        policy, _ = fit_linear_bc(
            [e.latent for e in entries], [e.action for e in entries], data.env.num_actions,
            args.epochs, args.lr, args.seed,
        )
        meta["featurizer"] = feat.to_dict()
    save_policy(policy, args.out, meta)


def cmd_build_index(args) -> None:
    data = ds.load(args.dataset)
    if args.trajectories:
        data = ds.truncate(data, args.trajectories)
    feat = FeaturizerSpec.for_env(data.env, args.featurizer_seed, args.dim)
    index_for(data, feat).save(args.out)


def _diagnostics_sink(path: Path | None):
    if path is None:
        return None, None
    fh = path.open("w", encoding="utf-8", newline="\n")
    return fh, lambda diag: fh.write(diag.to_json() + "\n")


def cmd_run(args) -> None:
    spec = _run_spec(args)
    art = _load_artifacts(args, spec)
    fh, sink = _diagnostics_sink(args.diagnostics)
    try:
        table = evaluate(spec, art, args.time_queries, sink)
    finally:
        if fh:
            fh.close()
    _emit(table.to_csv(), args.out)


def cmd_ablate_k(args) -> None:
    spec = _run_spec(args)
    art = _load_artifacts(args, spec)
    sweep = ablate_k(spec, art, args.k_list or K_GRID, args.time_queries)
    _emit(sweep.combined.to_csv(), args.out)
    if args.summary:
        _emit(sweep.summary_csv(), args.summary)


def cmd_ablate_n(args) -> None:
    spec = _run_spec(args)
    art = _load_artifacts(args, spec)
    data = ds.load(args.dataset)
    if data.env.fingerprint() != spec.env.fingerprint():
        raise ConsistencyError("dataset was recorded on a different environment configuration")
    feat = art.featurizer or FeaturizerSpec.for_env(data.env, args.featurizer_seed, args.dim)
    sweep = ablate_n(spec, data, feat, art.policy, args.n_list, args.time_queries)
    _emit(sweep.combined.to_csv(), args.out)
    if args.summary:
        _emit(sweep.summary_csv(), args.summary)


def cmd_report(args) -> None:
    wide, long = report([Path(p).read_text(encoding="utf-8") for p in args.inputs])
    _emit(wide, args.out)
    if args.long_out:
        _emit(long, args.long_out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("record", help="roll out the scripted expert into a trajectory file")
    _env_flags(p)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eta", type=float, default=0.0, help="expert tie-noise in [0, 1]")
    p.add_argument("--keep-failures", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("fit-bc", help="fit a behavior-cloning policy on a trajectory file")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--kind", choices=("tabular", "linear"), default="tabular")
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    _featurizer_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_fit_bc)

    p = sub.add_parser("build-index", help="encode a trajectory file into an index snapshot")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--trajectories", type=int, default=0, help="use only the first m (0: all)")
    _featurizer_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("run", help="evaluate one agent")
    _run_flags(p)
    p.add_argument("--diagnostics", type=Path, help="write BOA step records as JSON lines")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate-k", help="sweep the number of retrieved neighbors")
    _run_flags(p)
    p.add_argument("--k-list", type=_int_list, help="comma-separated (default: 1,5,10,...,100)")
    p.add_argument("--summary", type=Path, help="per-k mean/std CSV with a best column")
    p.set_defaults(func=cmd_ablate_k)

    p = sub.add_parser("ablate-n", help="sweep the number of encoded trajectories")
    _run_flags(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--n-list", type=_int_list, help="comma-separated (default: 1,5,...,150)")
    _featurizer_flags(p)
    p.add_argument("--summary", type=Path, help="per-n mean/std CSV with a best column")
    p.set_defaults(func=cmd_ablate_n)

    p = sub.add_parser("report", help="merge run CSVs into mean/std and long-format tables")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", type=Path)
    p.add_argument("--long-out", type=Path)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (BoaError, OSError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
