"""Command-line entry point: flag | ensemble | evaluate | watch | synth.

Exit codes: 0 success, 1 I/O failure, 2 validation failure, 10 when
``--fail-on-flag`` is given and a case was flagged.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from ._atomic import write_csv, write_json
from .errors import FoldgateError, ManifestError
from .evaluation import EvaluationRecord, cohort_summary, confusion_matrix, scatter_table
from .flagging import load_policy
from .manifest import MANIFEST_SUFFIX, discover_manifests, load_case, load_manifest
from .metrics import STATISTICS
from .nifti import write_nifti
from .pipeline import analyze_case, build_ensemble, decision_document
from .synthgen import SynthConfig, generate_cohort
from .watch import watch

log = logging.getLogger("foldgate")

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2
EXIT_FLAGGED = 10

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = _LOG_LEVELS.get(os.environ.get("FOLDGATE_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _manifest_paths(args) -> list[Path]:
    paths = [Path(p) for p in args.manifest or []]
    if args.cohort:
        cohort = Path(args.cohort)
        if not cohort.is_dir():
            raise ManifestError(f"cohort directory not found: {cohort}")
        paths.extend(discover_manifests(cohort))
    if not paths:
        raise ManifestError("no manifests given (use --manifest or --cohort)")
    return paths


def _run_cases(paths, fn, jobs):
    """Apply ``fn`` to each loaded case, in parallel, returning results sorted by case id."""

    def work(path):
        return fn(load_case(load_manifest(path)))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, paths))
    else:
        results = [work(p) for p in paths]
    ids = [r.case_id for r in results]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ManifestError(f"duplicate case ids: {dupes}")
    return sorted(results, key=lambda r: r.case_id)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_flag(args) -> int:
    spec = load_policy(args.policy)
    analyses = _run_cases(_manifest_paths(args), lambda c: analyze_case(c, spec), args.jobs)
    out = _out_dir(args)
    rows = []
    for a in analyses:
        write_json(out / f"{a.case_id}.decision.json", decision_document(a))
        for e in a.decision.labels:
            rows.append((a.case_id, e.label, e.statistic, float(e.value), float(e.threshold), str(e.flagged).lower()))
    write_csv(out / "decisions.csv", ["case_id", "label", "statistic", "value", "threshold", "flagged"], rows)
    n_flagged = sum(a.decision.case_flagged for a in analyses)
    log.info("%d of %d cases flagged", n_flagged, len(analyses))
    if args.fail_on_flag and n_flagged:
        return EXIT_FLAGGED
    return EXIT_OK


class _EnsembleOut:
    def __init__(self, case):
        self.case_id = case.case_id
        self.result = build_ensemble(case)
        self.k = case.k
        self.label_map = case.manifest.label_map


def cmd_ensemble(args) -> int:
    results = _run_cases(_manifest_paths(args), _EnsembleOut, args.jobs)
    out = _out_dir(args)
    for r in results:
        write_nifti(r.result.labels, out / f"{r.case_id}.ensemble.nii")
        write_json(
            out / f"{r.case_id}.ensemble.json",
            {
                "case_id": r.case_id,
                "method": r.result.method,
                "k": r.k,
                "label_map": {str(k): v for k, v in sorted(r.label_map.items())},
            },
        )
    return EXIT_OK


def _perf_threshold(args, policy, label):
    return policy.thresholds[label] if args.perf_threshold is None else args.perf_threshold


def cmd_evaluate(args) -> int:
    if args.perf_threshold is not None and not 0.0 <= args.perf_threshold <= 1.0:
        raise FoldgateError(f"--perf-threshold must be in [0, 1], got {args.perf_threshold}")
    spec = load_policy(args.policy)
    analyses = _run_cases(_manifest_paths(args), lambda c: analyze_case(c, spec, evaluate=True), args.jobs)
    out = _out_dir(args)

    labels = sorted({lid for a in analyses for lid in a.policy.thresholds})
    names = {}
    for a in analyses:
        for lid in a.policy.thresholds:
            names.setdefault(lid, a.label_map.get(lid, str(lid)))

    by_stat = {}
    for stat in STATISTICS:
        for lid in labels:
            records = []
            for a in analyses:
                if lid not in a.policy.thresholds:
                    continue
                flagged = a.decide(stat).for_label(lid).flagged
                records.append(
                    EvaluationRecord.build(
                        a.case_id, lid, flagged, a.ensemble_dice[lid], _perf_threshold(args, a.policy, lid)
                    )
                )
            by_stat[stat, lid] = records

    primary = analyses[0].policy.statistic
    confusion_rows = []
    for lid in labels:
        cm = confusion_matrix(by_stat[primary, lid])
        confusion_rows.append((lid, cm.tp, cm.tn, cm.fp, cm.fn))
    write_csv(out / "confusion.csv", ["label", "tp", "tn", "fp", "fn"], confusion_rows)

    cohort_rows = []
    cohorts = {}
    for lid in labels:
        for stat in STATISTICS:
            c = cohort_summary(by_stat[stat, lid])
            cohorts[stat, lid] = c
            cohort_rows.append((
                lid, stat, c.n_flagged, c.flagged_mean, c.flagged_std, c.n_unflagged,
                c.unflagged_mean, c.unflagged_std, c.overall_mean, c.overall_std, c.removal_delta,
            ))
    write_csv(
        out / "cohorts.csv",
        ["label", "summary_metric", "number_of_flagged_images", "flagged_mean", "flagged_std",
         "number_of_unflagged_images", "unflagged_mean", "unflagged_std", "overall_mean",
         "overall_std", "removal_delta"],
        cohort_rows,
    )

    multi = len(labels) > 1
    for stat in STATISTICS:
        rows = []
        for lid in labels:
            entries = [(a.case_id, a.stats[lid], a.ensemble_dice[lid]) for a in analyses if lid in a.stats]
            for r in scatter_table(entries, stat):
                rows.append((r.case_id, lid, r.ensemble_dice, r.stat_value) if multi else tuple(r))
        header = ["case_id", "label", "ensemble_dice", "stat_value"] if multi else ["case_id", "ensemble_dice", "stat_value"]
        write_csv(out / f"scatter_{stat}.csv", header, sorted(rows, key=lambda r: r[:2]) if multi else rows)

    cells = {(r.case_id, lid): r.cell for lid in labels for r in by_stat[primary, lid]}
    report = {
        "n_cases": len(analyses),
        "statistic": primary,
        "perf_threshold": args.perf_threshold,
        "removal_delta": {names[lid]: cohorts[primary, lid].removal_delta for lid in labels},
        "labels": {
            names[lid]: {
                "label": lid,
                "confusion": confusion_matrix(by_stat[primary, lid]).to_dict(),
                "by_statistic": {
                    stat: {
                        "confusion": confusion_matrix(by_stat[stat, lid]).to_dict(),
                        "cohort": cohorts[stat, lid].to_dict(),
                    }
                    for stat in STATISTICS
                },
            }
            for lid in labels
        },
        "cases": [
            {
                "case_id": a.case_id,
                "ensemble_method": a.ensemble.method,
                "labels": [
                    {
                        "label": lid,
                        "summary": a.stats[lid].to_dict(),
                        "flag_threshold": a.policy.thresholds[lid],
                        "perf_threshold": _perf_threshold(args, a.policy, lid),
                        "flagged": a.decision.for_label(lid).flagged,
                        "ensemble_dice": a.ensemble_dice[lid],
                        "cell": cells[a.case_id, lid],
                        "reference_volume_ml": a.reference_volume_ml[lid],
                        "ensemble_volume_ml": a.ensemble_volume_ml[lid],
                    }
                    for lid in sorted(a.policy.thresholds)
                ],
            }
            for a in analyses
        ],
    }
    write_json(out / "report.json", report)
    return EXIT_OK


def cmd_watch(args) -> int:
    if args.interval <= 0:
        raise FoldgateError("--interval must be > 0")
    inbox = Path(args.inbox or args.cohort or "")
    if not inbox.is_dir():
        raise FoldgateError(f"inbox directory not found: {inbox}")
    out = Path(args.out)
    if not out.is_dir():
        raise FoldgateError(f"output directory not found: {out}")
    spec = load_policy(args.policy)
    try:
        watch(inbox, out, spec, args.interval, args.stale_after, args.jobs, args.max_polls)
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def _floats(n):
    def parse(text):
        parts = [float(p) for p in text.replace("x", ",").split(",")]
        if len(parts) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
        return tuple(parts)

    return parse


def _ints(n):
    def parse(text):
        parts = [int(p) for p in text.replace("x", ",").split(",")]
        if len(parts) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated integers, got {text!r}")
        return tuple(parts)

    return parse


def cmd_synth(args) -> int:
    defaults = SynthConfig()
    try:
        cfg = SynthConfig(
            n_cases=args.cases,
            k_folds=args.folds,
            dims=args.dims or defaults.dims,
            spacing=args.spacing or defaults.spacing,
            radii_range=args.radii or defaults.radii_range,
            disagreement=args.disagreement,
            shared_error=args.shared_error,
            reference_noise=args.reference_noise,
            ood_fraction=args.ood_fraction,
            ood_radii_range=args.ood_radii or defaults.ood_radii_range,
            seed=args.seed,
        )
    except ValueError as e:
        raise FoldgateError(str(e)) from None
    paths = generate_cohort(cfg, args.out, jobs=args.jobs)
    log.info("wrote %d cases to %s", len(paths), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="foldgate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def inputs(p):
        p.add_argument("--manifest", action="append", help=f"case manifest (*{MANIFEST_SUFFIX}); repeatable")
        p.add_argument("--cohort", help="directory of case manifests")

    def common(p):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--jobs", type=_positive_int, default=1, help="cases processed in parallel")

    def policy(p):
        p.add_argument("--policy", default="ct_tumor",
                       help="policy JSON file, or a shipped default: ct_tumor, mr_tumor (default ct_tumor)")

    p = sub.add_parser("flag", help="flag cases whose interfold Dice summary is below threshold")
    inputs(p)
    common(p)
    policy(p)
    p.add_argument("--fail-on-flag", action="store_true", help=f"exit {EXIT_FLAGGED} if any case is flagged")
    p.set_defaults(func=cmd_flag)

    p = sub.add_parser("ensemble", help="write the ensemble segmentation per case")
    inputs(p)
    common(p)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("evaluate", help="score flags against reference masks")
    inputs(p)
    common(p)
    policy(p)
    p.add_argument("--perf-threshold", type=float, default=None,
                   help="ensemble Dice below this counts as poor (default: the flag threshold)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("watch", help="poll an inbox and log flag decisions as JSONL")
    p.add_argument("--inbox", help="directory receiving case manifests")
    p.add_argument("--cohort", help=argparse.SUPPRESS)
    common(p)
    policy(p)
    p.add_argument("--interval", type=float, default=5.0, help="seconds between polls")
    p.add_argument("--stale-after", type=float, default=300.0,
                   help="seconds before an unfinished claim is reclaimed")
    p.add_argument("--max-polls", type=int, default=0, help="stop after this many polls (0 = run forever)")
    p.set_defaults(func=cmd_watch)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    common(p)
    d = SynthConfig()
    p.add_argument("--cases", type=int, default=d.n_cases, help="number of cases")
    p.add_argument("--folds", type=int, default=d.k_folds, help="fold predictions per case")
    p.add_argument("--seed", type=int, default=d.seed, help="generator seed")
    p.add_argument("--dims", type=_ints(3), help=f"grid size, e.g. 32,32,24 (default {d.dims})")
    p.add_argument("--spacing", type=_floats(3), help="voxel spacing in mm")
    p.add_argument("--radii", type=_floats(2), help=f"ellipsoid radius range in voxels (default {d.radii_range})")
    p.add_argument("--disagreement", type=float, default=d.disagreement,
                   help="per-fold boundary flip probability at the last case")
    p.add_argument("--shared-error", type=float, default=d.shared_error,
                   help="case-level boundary flip probability at the last case")
    p.add_argument("--reference-noise", type=float, default=d.reference_noise,
                   help="boundary flip probability of the reference against the true shape")
    p.add_argument("--ood-fraction", type=float, default=d.ood_fraction,
                   help="fraction of cases drawn from the small-radius range")
    p.add_argument("--ood-radii", type=_floats(2), help=f"radius range for those cases (default {d.ood_radii_range})")
    p.set_defaults(func=cmd_synth)
    return parser


def _positive_int(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FoldgateError as e:
        log.error("%s", e)
        return EXIT_INVALID
    except OSError as e:
        log.error("I/O failure: %s", e)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
