"""Command-line entry point.

Exit status: 0 on success, 1 on validation/usage errors, 2 on I/O or file
format errors. Progress goes to stderr; results go to files or stdout.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import descriptors as dsmod
from .errors import BowError, DimensionMismatch, FormatError
from .eval import EvalConfig, evaluate, features_needed_profile, sweep, write_report_csv
from .index import build_index, load_index, save_index
from .query import VoteConfig, run_query, run_query_trace
from .stopping import make_rule, race_simulate
from .vocabulary import KMeansConfig, compute_idf, load_vocabulary, save_vocabulary, train

log = logging.getLogger("anytime_bow")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--log-level", default=None)
    p.add_argument("--config", default=None, help="JSON file supplying defaults for any flag")
    return p


def _query_flags(p):
    p.add_argument("--index")
    p.add_argument("--vocab")
    p.add_argument("--dataset")
    p.add_argument("--distance-weighted", action="store_true", default=None)
    p.add_argument("--raw-scores", action="store_true", default=None,
                   help="vote idf*tf*idf without per-image normalization")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="anytime-bow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    for f in dsmod.SynthConfig.__dataclass_fields__.values():
        p.add_argument("--" + f.name.replace("_", "-"), type=type(f.default), default=None)
    p.add_argument("--out")

    p = sub.add_parser("train-vocab", parents=[common], help="k-means vocabulary + idf")
    p.add_argument("--input")
    p.add_argument("--k", type=int)
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("--out")

    p = sub.add_parser("build-index", parents=[common], help="build the inverted index")
    p.add_argument("--vocab")
    p.add_argument("--input")
    p.add_argument("--out")

    p = sub.add_parser("query", parents=[common], help="run one anytime query")
    _query_flags(p)
    p.add_argument("--query-id", type=int)
    p.add_argument("--rule")
    p.add_argument("--threshold", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--min-score", type=float, default=None)
    p.add_argument("--trace")

    p = sub.add_parser("bench", parents=[common], help="evaluate rules over all queries")
    _query_flags(p)
    p.add_argument("--rules", nargs="+", help="e.g. never rule1:0.25,0.2 rule3:20")
    p.add_argument("--n", default=None, help="comma-separated top-n levels")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--precision-floor", type=float, default=None)
    p.add_argument("--out")

    p = sub.add_parser("sweep", parents=[common], help="threshold sweep of one rule family")
    _query_flags(p)
    p.add_argument("--family")
    p.add_argument("--thresholds")
    p.add_argument("--n", default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--precision-floor", type=float, default=None)
    p.add_argument("--out")

    p = sub.add_parser("profile", parents=[common], help="features needed per query")
    _query_flags(p)
    p.add_argument("--out")
    p.add_argument("--per-query")

    p = sub.add_parser("race", parents=[common], help="two-arm Hoeffding race simulation")
    p.add_argument("--mu1", type=float)
    p.add_argument("--mu2", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--out")
    parser.subcommands = sub.choices
    return parser


DEFAULTS = {
    "seed": 0, "threads": 1, "log_level": "WARNING", "n": None, "runs": 10,
    "precision_floor": 0.9, "distance_weighted": False, "raw_scores": False,
    "max_iterations": 100, "tolerance": 1e-4, "max_steps": 10_000_000,
}

REQUIRED = {
    "synth": ["out"],
    "train-vocab": ["input", "k", "out"],
    "build-index": ["vocab", "input", "out"],
    "query": ["index", "vocab", "dataset", "query_id", "rule"],
    "bench": ["index", "vocab", "dataset", "rules", "out"],
    "sweep": ["index", "vocab", "dataset", "family", "thresholds", "out"],
    "profile": ["index", "vocab", "dataset", "out"],
    "race": ["mu1", "mu2", "delta", "trials"],
}


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    if args.config:
        with open(args.config) as fh:
            conf = json.load(fh)
        for key, val in conf.items():
            key = key.replace("-", "_")
            if not hasattr(args, key):
                raise UsageError(f"config key {key!r} is not a flag of {args.command}")
            if getattr(args, key) is None:
                setattr(args, key, val)
    for key, val in DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, val)
    missing = [k for k in REQUIRED[args.command] if getattr(args, k) is None]
    if missing:
        args.usage()
        raise UsageError("missing required " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return args


def _int_list(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    if isinstance(text, int):
        return (text,)
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def parse_rules(specs) -> tuple:
    """``["never", "rule1:0.25,0.2"]`` -> (Never(), Rule1(0.25), Rule1(0.2))."""
    if isinstance(specs, str):
        specs = specs.split()
    rules = []
    for spec in specs:
        family, _, values = spec.partition(":")
        if not values:
            rules.append(make_rule(family))
        else:
            rules.extend(make_rule(family, x) for x in _float_list(values))
    return tuple(rules)


def _votes(args) -> VoteConfig:
    return VoteConfig(normalize=not args.raw_scores, distance_weighted=bool(args.distance_weighted))


def _load_engine(args):
    return load_index(args.index), load_vocabulary(args.vocab), dsmod.load_dataset(args.dataset)


def cmd_synth(args):
    fields = dsmod.SynthConfig.__dataclass_fields__
    cfg = dsmod.SynthConfig(**{k: getattr(args, k) for k in fields if getattr(args, k) is not None})
    ds, info = dsmod.synthesize_with_info(cfg, args.seed)
    dsmod.save_dataset(ds, args.out)
    with open(Path(args.out).with_suffix(".synth.json"), "w") as fh:
        json.dump(info.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    log.info("wrote %d images (%d queries) to %s", len(ds.images), len(ds.queries), args.out)


def cmd_train_vocab(args):
    ds = dsmod.load_dataset(args.input)
    db = ds.database
    cfg = KMeansConfig(args.k, args.max_iterations, args.tolerance, args.seed)
    v = train(np.concatenate([im.descriptors for im in db]), cfg)
    v = compute_idf(v, db)
    save_vocabulary(v, args.out)
    log.info("vocabulary of %d words written to %s", v.size, args.out)


def cmd_build_index(args):
    v = load_vocabulary(args.vocab)
    ds = dsmod.load_dataset(args.input)
    save_index(build_index(v, ds.database), args.out)
    log.info("index over %d database images written to %s", ds.num_database, args.out)


def cmd_query(args):
    ix, v, ds = _load_engine(args)
    param = {"rule1": args.threshold, "rule2": args.threshold, "rule3": args.patience,
             "hoeffding": args.delta}.get(args.rule)
    rule = make_rule(args.rule, param)
    try:
        query = ds.image(args.query_id)
    except KeyError:
        raise UsageError(f"no image with id {args.query_id}") from None
    n = args.n or 5
    if args.trace:
        trace = run_query_trace(ix, v, query, rule, n, args.seed, votes=_votes(args),
                                min_score=args.min_score)
        trace.write_csv(args.trace)
        res = trace.result
    else:
        res = run_query(ix, v, query, rule, n, args.seed, votes=_votes(args),
                        min_score=args.min_score)
    out = {
        "query_id": args.query_id,
        "ranked": [{"image_id": i, "score": s} for i, s in res.ranked],
        "features_processed": res.features_processed,
        "fraction_processed": res.fraction_processed,
        "stop_reason": res.stop_reason.value,
    }
    json.dump(out, sys.stdout, indent=1)
    sys.stdout.write("\n")


def _eval_config(args, rules) -> EvalConfig:
    return EvalConfig(
        top_n=_int_list(args.n) if args.n is not None else (3, 5, 10),
        rules=rules,
        monte_carlo_runs=args.runs,
        seed=args.seed,
        precision_floor=args.precision_floor,
        threads=args.threads,
        votes=_votes(args),
    )


def cmd_bench(args):
    ix, v, ds = _load_engine(args)
    report = evaluate(ix, v, ds, _eval_config(args, parse_rules(args.rules)))
    write_report_csv([report], args.out)


def cmd_sweep(args):
    ix, v, ds = _load_engine(args)
    thresholds = _float_list(args.thresholds)
    reports = sweep(ix, v, ds, args.family, thresholds, _eval_config(args, ()))
    write_report_csv(reports, args.out)


def cmd_profile(args):
    ix, v, ds = _load_engine(args)
    prof = features_needed_profile(ix, v, ds, args.seed, _votes(args), args.threads)
    prof.write_csv(args.out)
    if args.per_query:
        prof.write_per_query_csv(args.per_query)


def cmd_race(args):
    rep = race_simulate(args.mu1, args.mu2, args.delta, args.trials, args.seed, args.max_steps)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mu1", "mu2", "delta", "trials", "seed", "error_rate", "mean_stop_time", "truncated"])
        w.writerow([args.mu1, args.mu2, args.delta, args.trials, args.seed,
                    f"{rep.error_rate:.6f}", f"{rep.mean_stop_time:.3f}", rep.truncated])
    finally:
        if fh is not sys.stdout:
            fh.close()


COMMANDS = {
    "synth": cmd_synth, "train-vocab": cmd_train_vocab, "build-index": cmd_build_index,
    "query": cmd_query, "bench": cmd_bench, "sweep": cmd_sweep, "profile": cmd_profile,
    "race": cmd_race,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv[:2] == ["bench", "race"]:
        argv = ["race"] + argv[2:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("a subcommand is required")
        args.usage = lambda: parser.subcommands[args.command].print_usage(sys.stderr)
        args = _merge_config(args)
    except UsageError as exc:
        print(f"anytime-bow: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"anytime-bow: error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=str(args.log_level).upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"anytime-bow: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, FormatError, DimensionMismatch) as exc:
        print(f"anytime-bow: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (BowError, ValueError) as exc:
        print(f"anytime-bow: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
