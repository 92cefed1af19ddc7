"""Command-line workflow: synth -> build -> stats/margin -> prune -> eval.

Exit codes: 0 success, 2 invalid arguments, 3 format error,
4 insufficient data, 5 partial prune (pool exhausted before the ratio).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .core import stats
from .correctness import DEFAULT_K_BAR, build_datastore, compute_margins, margin_histogram
from .errors import FormatError, InsufficientData, InvalidArgument, StateError
from .formats import load_datastore, read_build_trace, read_eval_trace, save_datastore
from .index import build_index
from .inference import KnnParams, evaluate
from .pruning import STRATEGIES, PruneSpec, prune
from .synth import load_world_config, mixed_region_world, parse_config_text

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_FORMAT = 3
EXIT_INSUFFICIENT = 4
EXIT_PARTIAL = 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse already exits with 2; keep the code explicit
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _emit(payload: dict, path: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _effective(args: argparse.Namespace) -> dict:
    out = {k: v for k, v in vars(args).items() if k not in ("func", "config_defaults")}
    if "lam" in out:
        out["lambda"] = out.pop("lam")
    return dict(sorted(out.items()))


def cmd_build(args) -> int:
    trace = read_build_trace(args.trace)
    store = build_datastore(trace)
    save_datastore(args.out, store)
    _emit({"params": _effective(args), "stats": stats(store).to_dict()}, args.report)
    return EXIT_OK


def cmd_stats(args) -> int:
    store = load_datastore(args.store)
    payload = {"params": _effective(args), "stats": stats(store).to_dict()}
    payload["dim"] = store.dim
    payload["vocab_size"] = store.vocab_size
    payload["margin_cap"] = store.margin_cap
    _emit(payload, args.report)
    return EXIT_OK


def cmd_margin(args) -> int:
    store = load_datastore(args.store)
    if store.margin_cap != args.kbar:
        base = store if not store.has_margins else store.subset(range(len(store)))
        store = compute_margins(build_index(base), args.kbar)
    report = margin_histogram(store, args.kbar)
    if args.csv:
        report.write_csv(args.csv)
    if args.save:
        save_datastore(args.save, store)
    payload = {"params": _effective(args), "stats": stats(store).to_dict(), "margins": report.to_dict()}
    payload["unknown_fraction_below_4"] = report.fraction_below(4, known=False)
    _emit(payload, args.report)
    return EXIT_OK


def cmd_prune(args) -> int:
    strategy = args.strategy
    k_p = args.kp if strategy in ("plac", "reverse") else None
    spec = PruneSpec(strategy, args.ratio, k_p, args.seed)
    store = load_datastore(args.store)
    index = build_index(store) if strategy in ("plac", "reverse") else None
    pruned, report = prune(store, index, spec)
    save_datastore(args.out, pruned)
    _emit({"params": _effective(args), **report.to_dict()}, args.report)
    return EXIT_PARTIAL if report.partial else EXIT_OK


def cmd_eval(args) -> int:
    params = KnnParams(args.k, args.T, args.lam)
    store = load_datastore(args.store)
    trace = read_eval_trace(args.etrace)
    index = build_index(store) if len(store) else None
    summary = evaluate(index, store, trace, params, args.kbar)
    if args.csv:
        summary.write_csv(args.csv)
    payload = summary.to_dict()
    payload["knn_params"] = payload.pop("params")
    payload["params"] = _effective(args)
    _emit(payload, args.report)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = load_world_config(args.config)
    if args.seed is not None:
        cfg = type(cfg).from_mapping({**cfg.to_dict(), "seed": args.seed})
    world = mixed_region_world(cfg)
    paths = world.write(args.out_prefix)
    _emit(
        {
            "params": _effective(args),
            "config": cfg.to_dict(),
            "files": [str(p) for p in paths],
            "n_build": world.manifest["n_build"],
            "n_build_known": world.manifest["n_build_known"],
            "n_eval": world.manifest["n_eval"],
        },
        args.report,
    )
    return EXIT_OK


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="knnprune", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, func, help: str, config_defaults: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func, config_defaults=config_defaults)
        if config_defaults:
            p.add_argument("--config", help="key=value file of flag defaults (flags win)")
        p.add_argument("--report", help="write the JSON report here instead of stdout")
        return p

    p = add("build", cmd_build, "build a datastore from a .btrc trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)

    p = add("stats", cmd_stats, "known/unknown counts of a datastore")
    p.add_argument("--store", required=True)

    p = add("margin", cmd_margin, "knowledge-margin histogram")
    p.add_argument("--store", required=True)
    p.add_argument("--kbar", type=int, default=DEFAULT_K_BAR)
    p.add_argument("--csv")
    p.add_argument("--save", help="also write the store with its margin column")

    p = add("prune", cmd_prune, "prune a datastore")
    p.add_argument("--store", required=True)
    p.add_argument("--strategy", choices=STRATEGIES, default="plac")
    p.add_argument("--ratio", type=float, default=0.45)
    p.add_argument("--kp", type=int, default=16)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "kNN-interpolated evaluation on a .etrc trace")
    p.add_argument("--store", required=True)
    p.add_argument("--etrace", required=True)
    p.add_argument("-k", type=int, default=8)
    p.add_argument("-T", type=float, default=10.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.7)
    p.add_argument("--kbar", type=int, default=DEFAULT_K_BAR)
    p.add_argument("--csv")

    p = add("synth", cmd_synth, "generate a synthetic world", config_defaults=False)
    p.add_argument("--config", required=True, help="world config file or packaged name")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--seed", type=_seed, default=None)
    return parser


def _preload_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Install ``--config`` values as subcommand defaults so explicit flags win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    first, _ = pre.parse_known_args(argv)
    subparser = parser._subparsers._group_actions[0].choices.get(first.command)
    if subparser is None or not first.config or not subparser.get_default("config_defaults"):
        return
    try:
        values = parse_config_text(Path(first.config).read_text())
    except OSError as exc:
        raise InvalidArgument(f"cannot read config {first.config}: {exc}") from None
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        dest = "lam" if key == "lambda" else key
        if dest not in actions or dest in ("help", "config", "report"):
            raise InvalidArgument(f"config key {key!r} is not an option of {first.command}")
        action = actions[dest]
        try:
            defaults[dest] = action.type(raw) if action.type else raw
        except (TypeError, ValueError, argparse.ArgumentTypeError):
            raise InvalidArgument(f"config key {key!r}: cannot parse {raw!r}") from None
        action.required = False
    subparser.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = make_parser()
    try:
        _preload_config(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # usage errors, --help, --version
            return exc.code if isinstance(exc.code, int) else EXIT_INVALID
        return args.func(args)
    except FormatError as exc:
        print(f"knnprune: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except InsufficientData as exc:
        print(f"knnprune: insufficient data: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except (InvalidArgument, StateError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"knnprune: invalid argument: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
