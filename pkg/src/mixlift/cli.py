"""Command line entry point.

Exit codes: 0 ok, 1 usage error, 2 computation error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from mixlift.model import ModelError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_COMPUTE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _config_from(args) -> "PipelineConfig":
    from mixlift.pipeline import PipelineConfig

    cfg = PipelineConfig()
    cfg.seed = args.seed
    cfg.use_cache = not args.no_cache
    cfg.k_cap = args.k_cap
    if args.tol is not None:
        cfg.tol = args.tol
    if getattr(args, "k_max", None) is not None:
        cfg.k_max = args.k_max
    if getattr(args, "steps", None) is not None:
        cfg.steps = args.steps
    if getattr(args, "burn_in", None) is not None:
        cfg.burn_in = args.burn_in
    return cfg


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_lift(args) -> int:
    from mixlift.modelfile import parse_model, serialize_model
    from mixlift.pipeline import lift_document

    path = Path(args.model)
    doc = parse_model(path.read_text())
    cache_path = path.with_suffix(path.suffix + ".fitcache.json")
    lifted, info = lift_document(doc, _config_from(args), cache_path=cache_path)
    text = serialize_model(lifted)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    for entry in info.values():
        entry.pop("seconds", None)
    print(json.dumps({"fit_reports": info}, sort_keys=True), file=sys.stderr)
    return EXIT_OK


def _cmd_infer(args, method: str) -> int:
    from mixlift.pipeline import run_pipeline

    doc = run_pipeline(
        args.model,
        obs_path=args.obs,
        query=args.query,
        method=method,
        config=_config_from(args),
    )
    _emit(doc, args.output)
    return EXIT_OK if doc["result"].get("status") == "ok" else EXIT_COMPUTE


def _cmd_verify(args) -> int:
    from mixlift.modelfile import parse_model, serialize_model

    text = Path(args.model).read_text()
    doc = parse_model(text)
    canonical = serialize_model(doc)
    roundtrip = serialize_model(parse_model(canonical))
    ok = roundtrip == canonical
    _emit(
        {
            "status": "ok" if ok else "error",
            "atoms": len(doc.atoms),
            "parfactors": len(doc.parfactors),
            "couplings": len(doc.couplings),
            "latents": len(doc.latents),
            "round_trip": ok,
        },
        args.output,
    )
    return EXIT_OK if ok else EXIT_COMPUTE


def _cmd_bound(args) -> int:
    from mixlift.modelfile import parse_model
    from mixlift.pipeline import _bound_reports

    doc = parse_model(Path(args.model).read_text())
    if not doc.extendibility:
        print("error: model declares no EXTENDIBILITY section", file=sys.stderr)
        return EXIT_USAGE
    report = _bound_reports(doc)
    _emit(report, args.output)
    return EXIT_OK


def _cmd_extend_check(args) -> int:
    from mixlift.bounds import check_extendibility
    from mixlift.model import HistTable
    from mixlift.modelfile import parse_model

    doc = parse_model(Path(args.model).read_text())
    n_bar = args.n_bar if args.n_bar is not None else doc.extendibility.get(args.atom)
    if n_bar is None:
        print("error: no --n-bar given and none declared", file=sys.stderr)
        return EXIT_USAGE
    table = None
    for spec in doc.parfactors:
        if spec.atom_names == (args.atom,) and isinstance(spec.potential, HistTable):
            table = spec.potential
            break
    if table is None:
        print(
            f"error: no single-atom histogram parfactor over {args.atom!r}",
            file=sys.stderr,
        )
        return EXIT_USAGE
    result = check_extendibility(table, n_bar)
    _emit(
        {
            "atom": args.atom,
            "n_bar": result.n_bar,
            "feasible": result.feasible,
            "residual": result.residual,
        },
        args.output,
    )
    return EXIT_OK


def _cmd_cluster(args) -> int:
    from mixlift.pipeline import cluster_columns, read_observation_matrix

    _, columns = read_observation_matrix(Path(args.matrix).read_text())
    result = cluster_columns(columns, k=args.k, seed=args.seed)
    _emit(
        {
            "k": args.k,
            "sizes": result.sizes,
            "centroids": result.centroids.tolist(),
            "labels": result.labels,
        },
        args.output,
    )
    return EXIT_OK


def _cmd_bench(args) -> int:
    from mixlift.pipeline import bench, bench_csv

    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else []
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
    kwargs = {}
    if args.family == "job_house":
        if args.steps is not None:
            kwargs["steps"] = args.steps
        rows = bench(args.family, sizes, seeds, **kwargs) if sizes else []
    else:
        rows = bench(args.family, sizes, seeds, **kwargs)
    text = bench_csv(rows)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, model: bool = True) -> None:
    if model:
        p.add_argument("model", help="model file path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--k-cap", type=int, default=64)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("-o", "--output", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mixlift", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lift", help="fit variational mixtures for every parfactor")
    _add_common(p)

    p = sub.add_parser("infer", help="query marginal by lifted elimination")
    _add_common(p)
    p.add_argument("--query", required=True, help="atom name")
    p.add_argument("--obs", default=None)

    p = sub.add_parser("mcmc", help="query estimate by lifted sampling")
    _add_common(p)
    p.add_argument("--query", required=True, help="'Atom<x' or 'Atom=v'")
    p.add_argument("--obs", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--burn-in", type=int, default=None)

    p = sub.add_parser("verify", help="parse and round-trip a model file")
    _add_common(p)

    p = sub.add_parser("bound", help="analytic error bounds from declared extensions")
    _add_common(p)

    p = sub.add_parser("extend-check", help="extendibility feasibility of a table")
    _add_common(p)
    p.add_argument("--atom", required=True)
    p.add_argument("--n-bar", type=int, default=None)

    p = sub.add_parser("cluster", help="k-means grouping of observation columns")
    p.add_argument("matrix", help="CSV path (header row of column ids)")
    p.add_argument("-k", type=int, required=True, dest="k")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default=None)

    p = sub.add_parser("bench", help="benchmark sweeps, CSV output")
    p.add_argument("--family", required=True, choices=["job_house", "groundwater"])
    p.add_argument("--sizes", default="")
    p.add_argument("--seeds", default="")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        if args.command == "lift":
            return _cmd_lift(args)
        if args.command == "infer":
            return _cmd_infer(args, "ve")
        if args.command == "mcmc":
            return _cmd_infer(args, "mcmc")
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "bound":
            return _cmd_bound(args)
        if args.command == "extend-check":
            return _cmd_extend_check(args)
        if args.command == "cluster":
            return _cmd_cluster(args)
        if args.command == "bench":
            return _cmd_bench(args)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
