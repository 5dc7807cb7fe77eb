"""Command-line entry point: ``softhad {score,eval,graph} ...``.

Exit status is 0 on success, 2 for usage errors (bad or inconsistent flags,
rejected before any computation) and 1 for runtime failures.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backbone import save_backbone
from .data import BUNDLED, IngestOptions, bundled_path, load_csv, load_train_recent
from .errors import SoftHADError
from .evaluation import ExperimentSpec, run_sweep, summary_csv, summary_json
from .graph import write_edge_list
from .harmonic import HarmonicConfig
from .pipeline import fit_backbone, score_dataset

log = logging.getLogger("softhad")


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("expected a non-negative integer")
    return value


def _backbone_size(text):
    return None if text == "all" else _positive_int(text)


def _float(lo=None, strict=False):
    def parse(text):
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
        if lo is not None and (value < lo or (strict and value == lo)):
            raise argparse.ArgumentTypeError(f"{value} must be {'>' if strict else '>='} {lo}")
        return value

    return parse


def _sigma(text):
    if text == "auto":
        return text
    value = _float(0.0, strict=True)(text)
    return value


def _fraction(text):
    value = _float(0.0)(text)
    if value > 1:
        raise argparse.ArgumentTypeError("fraction must lie in [0, 1]")
    return value


def _common(p, sweep=False):
    p.add_argument("--input", required=True, help="training CSV (eval also accepts bundled:<name>)")
    p.add_argument("--label-col", help="column holding -1/+1 labels")
    p.add_argument("--response-col", help="ordinal response column, thresholded at its scaled midpoint")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--impute", action="store_true", help="mean-impute missing features instead of rejecting rows")
    p.add_argument("--k-graph", type=_positive_int, default=75)
    p.add_argument("--cl", type=_float(0.0, strict=True), default=1.0)
    p.add_argument("--cu", type=_float(0.0), default=None, help="defaults to --cl")
    if sweep:
        p.add_argument("--gamma-g", type=_float(0.0), nargs="+", default=[1.0])
        p.add_argument("--backbone-k", type=_backbone_size, nargs="+", default=[None],
                       help="backbone sizes, or 'all' for no quantization")
    else:
        p.add_argument("--gamma-g", type=_float(0.0), default=1.0)
        p.add_argument("--backbone-k", type=_backbone_size, default=None)
    p.add_argument("--sigma", type=_sigma, default="auto", help="'auto' or a fixed bandwidth")
    p.add_argument("--sigma-mode", choices=("variance_sq", "variance"), default="variance_sq",
                   help="auto rule: sigma^2 or sigma equals 0.1 * Var(distances)")
    p.add_argument("--balanced", action="store_true", help="subsample classes to equal size before quantizing")
    p.add_argument("--multiplicity-weighting", choices=("on", "off"), default="on")
    p.add_argument("--recent-edges", action="store_true", help="allow recent-recent edges")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--out", required=True, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="softhad", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"softhad {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score recent instances against training data")
    _common(p)
    p.add_argument("--recent", required=True, help="CSV of recent instances with observed labels")
    p.add_argument("--mode", choices=("withheld", "included"), default="withheld")

    p = sub.add_parser("eval", help="label-flip evaluation of SoftHAD against weighted k-NN")
    _common(p, sweep=True)
    p.add_argument("--mode", choices=("withheld", "included"), default="withheld")
    p.add_argument("--flip-frac", type=_fraction, default=0.03)
    p.add_argument("--train-frac", type=_fraction, default=2.0 / 3.0)
    p.add_argument("--flip-scope", choices=("all", "test"), default="all")
    p.add_argument("--runs", type=_positive_int, default=100)
    p.add_argument("--knn-k", type=_positive_int, default=None, help="wk-NN neighbours (defaults to --k-graph)")

    p = sub.add_parser("graph", help="build and export the (backbone) similarity graph")
    _common(p)
    return parser


def _validate(parser, args):
    if args.command in ("score", "graph") and not (args.label_col or args.response_col):
        parser.error("one of --label-col or --response-col is required")
    if args.label_col and args.response_col:
        parser.error("--label-col and --response-col are mutually exclusive")
    if args.command == "eval":
        if args.label_col:
            parser.error("eval needs an ordinal --response-col, not --label-col")
        if not args.input.startswith("bundled:") and not args.response_col:
            parser.error("eval needs --response-col")
        if not 0 < args.train_frac < 1:
            parser.error("--train-frac must lie strictly between 0 and 1")
        if args.input.startswith("bundled:") and args.input[8:] not in BUNDLED:
            parser.error(f"unknown bundled dataset {args.input[8:]!r}; choose from {sorted(BUNDLED)}")
        sizes = [s for s in args.backbone_k if s is not None]
    else:
        sizes = [] if args.backbone_k is None else [args.backbone_k]
    for size in sizes:
        if args.k_graph >= size:
            parser.error(f"--k-graph {args.k_graph} must be smaller than --backbone-k {size}")
    if args.sigma != "auto" and args.sigma_mode != "variance_sq":
        parser.error("--sigma-mode only applies to --sigma auto")


def _harmonic(args, gamma):
    return HarmonicConfig(
        c_l=args.cl,
        c_u=args.cu,
        gamma_g=gamma,
        graph_k=args.k_graph,
        multiplicity_weighting=args.multiplicity_weighting == "on",
        include_recent_edges=args.recent_edges,
    )


def _sigma_options(args):
    if args.sigma == "auto":
        return {"sigma_mode": args.sigma_mode, "sigma_value": None}
    return {"sigma_mode": "fixed", "sigma_value": args.sigma}


def _ingest(args, split=None):
    return IngestOptions(
        delimiter=args.delimiter,
        response=bool(args.response_col),
        impute=args.impute,
        split=split,
    )


def provenance(args):
    config = {k: v for k, v in sorted(vars(args).items()) if k != "verbose"}
    return {"artifact": "softhad", "version": __version__, "seed": args.seed, "config": config}


def cmd_score(args):
    label = args.response_col or args.label_col
    data = load_train_recent(args.input, args.recent, label, _ingest(args))
    cfg = _harmonic(args, args.gamma_g)
    report, bb = score_dataset(data, cfg, mode=args.mode, backbone_k=args.backbone_k,
                               balanced=args.balanced, seed=args.seed, **_sigma_options(args))
    # node ids count rows of the recent file from 0
    report.node_ids = np.asarray(report.node_ids) - data.split
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    report.write_json(out / "report.json", provenance(args))
    log.info("scored %d recent instances against %d backbone nodes", data.n_recent, bb.size)
    return 0


def cmd_eval(args):
    if args.input.startswith("bundled:"):
        name = args.input[len("bundled:"):]
        path, response = bundled_path(name), args.response_col or BUNDLED[name][1]
    else:
        path, response, name = args.input, args.response_col, Path(args.input).stem
    options = IngestOptions(delimiter=args.delimiter, response=True, impute=args.impute, standardize=False)
    data = load_csv(path, response, options)
    spec = ExperimentSpec(
        dataset=data,
        name=name,
        flip_fraction=args.flip_frac,
        train_fraction=args.train_frac,
        runs=args.runs,
        seed=args.seed,
        harmonic=_harmonic(args, args.gamma_g[0]),
        knn_k=args.knn_k,
        balanced=args.balanced,
        mode=args.mode,
        flip_scope=args.flip_scope,
        **_sigma_options(args),
    )
    summaries = run_sweep(spec, args.gamma_g, args.backbone_k, workers=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(summary_csv(summaries))
    (out / "summary.json").write_text(summary_json(summaries, spec, provenance(args)))
    return 0


def cmd_graph(args):
    label = args.response_col or args.label_col
    data = load_csv(args.input, label, _ingest(args))
    cfg = _harmonic(args, args.gamma_g)
    bb = fit_backbone(data, cfg, backbone_k=args.backbone_k, balanced=args.balanced,
                      seed=args.seed, **_sigma_options(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_edge_list(bb.graph, out / "graph.txt")
    save_backbone(bb, out / "backbone")
    (out / "graph.json").write_text(json.dumps(provenance(args), indent=2, sort_keys=True) + "\n")
    return 0


COMMANDS = {"score": cmd_score, "eval": cmd_eval, "graph": cmd_graph}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate(parser, args)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SoftHADError as exc:
        print(f"softhad: error [{exc.stage}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"softhad: error [io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
