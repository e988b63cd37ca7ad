"""Command-line interface: ``pollenauth {extract,dict,classify,evaluate,synth}``.

Exit codes: 0 success, 1 usage or configuration error, 2 empty result,
3 ambiguity abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import evaluation as ev
from .ensemble import (
    DEFAULT_DELTA_THRESHOLD,
    DEFAULT_T_M_MIN,
    DEFAULT_T_OC_MIN,
    DictionaryError,
    PollenDictionary,
    add_class,
    classify_sample,
    detect_ambiguity,
    load_dictionary,
    merge_classes,
    predict_labels,
    save_dictionary,
)
from .imaging import ImageError
from .pipeline import LoadColorExtractor, write_debug

log = logging.getLogger("pollenauth")

EXIT_OK, EXIT_USAGE, EXIT_EMPTY, EXIT_ABORT = 0, 1, 2, 3
ENV_DICT = "POLLEN_DICT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _unit_interval(text):
    x = float(text)
    if not 0 <= x < 1:
        raise argparse.ArgumentTypeError(f"{text} not in [0, 1)")
    return x


def _positive(text):
    x = float(text)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"{text} must be > 0")
    return x


def _positive_int(text):
    x = int(text)
    if x < 1:
        raise argparse.ArgumentTypeError(f"{text} must be >= 1")
    return x


def _add_extraction_flags(p):
    g = p.add_argument_group("extraction")
    g.add_argument("--hs", type=_positive, default=15.0, help="spatial bandwidth (pixels)")
    g.add_argument("--hr", type=_positive, default=20.0, help="range bandwidth (L*u*v*)")
    g.add_argument("--min-segment-area", type=_positive_int, default=20)
    g.add_argument("--min-component", type=_positive_int, default=50,
                   help="drop foreground components smaller than this")
    g.add_argument("--invert-mask", action="store_true",
                   help="loads are darker than the background")


def _add_dict_flag(p):
    p.add_argument("--dict", dest="dict_path", default=os.environ.get(ENV_DICT),
                   help=f"dictionary file (default: ${ENV_DICT})")


def _add_threshold_flags(p, defaults=True):
    p.add_argument("--toc-min", type=_unit_interval,
                   default=DEFAULT_T_OC_MIN if defaults else None)
    p.add_argument("--tm-min", type=_unit_interval,
                   default=DEFAULT_T_M_MIN if defaults else None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pollenauth",
                     description="Authenticate pollen-load images against a trained dictionary.")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="images -> color instance CSV")
    p.add_argument("images", nargs="+")
    p.add_argument("-o", "--output", help="CSV path (default: stdout)")
    p.add_argument("--label", help="label written on every instance")
    p.add_argument("--debug-dir", help="write mask/filtered PPMs and segment CSVs here")
    _add_extraction_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("dict", help="manage the pollen dictionary")
    dsub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)

    a = dsub.add_parser("add", help="train a new class from a CSV of instances")
    a.add_argument("name")
    a.add_argument("--train", required=True, help="instance CSV for the new class")
    a.add_argument("--test", help="labelled CSV used for ambiguity discovery")
    a.add_argument("--reject", type=_unit_interval, default=None,
                   help="rejection fraction (new dictionaries only; default 0)")
    _add_threshold_flags(a, defaults=False)
    a.add_argument("--delta-threshold", type=float, default=DEFAULT_DELTA_THRESHOLD)
    a.add_argument("--non-interactive", action="store_true")
    a.add_argument("--on-ambiguity", choices=["merge", "keep", "abort"], default=None)
    _add_dict_flag(a)
    a.set_defaults(func=cmd_dict_add)

    a = dsub.add_parser("list")
    _add_dict_flag(a)
    a.add_argument("--json", action="store_true")
    a.set_defaults(func=cmd_dict_list)

    a = dsub.add_parser("remove")
    a.add_argument("name")
    _add_dict_flag(a)
    a.set_defaults(func=cmd_dict_remove)

    a = dsub.add_parser("merge", help="fold class CJ into class CI")
    a.add_argument("ci")
    a.add_argument("cj")
    _add_dict_flag(a)
    a.set_defaults(func=cmd_dict_merge)

    p = sub.add_parser("classify", help="authenticate an image or an instance CSV")
    p.add_argument("input")
    _add_dict_flag(p)
    _add_threshold_flags(p, defaults=False)
    _add_extraction_flags(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="confusion matrix and metrics on labelled instances")
    p.add_argument("csv")
    _add_dict_flag(p)
    _add_threshold_flags(p, defaults=False)
    p.add_argument("--convention", required=True, choices=["paper52", "standard", "both"])
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write a synthetic labelled instance CSV")
    p.add_argument("-o", "--output", help="CSV path (default: stdout)")
    p.add_argument("--cluster", action="append", default=[], metavar="LABEL:L,u,v:STD:COUNT")
    p.add_argument("--outliers", type=int, default=None, help="number of uniform outliers")
    p.add_argument("--box", default="0,-100,-100:100,100,100", metavar="LOW:HIGH",
                   help="outlier box as L,u,v:L,u,v")
    p.set_defaults(func=cmd_synth)
    return parser


# --------------------------------------------------------------------------
# helpers

def _extractor(args, label=None) -> LoadColorExtractor:
    return LoadColorExtractor(hs=args.hs, hr=args.hr, min_segment_area=args.min_segment_area,
                              min_component_pixels=args.min_component,
                              invert_mask=args.invert_mask, label=label)


def _require_dict_path(args) -> str:
    if not args.dict_path:
        raise UsageError(f"no dictionary given (use --dict or set ${ENV_DICT})")
    return args.dict_path


def _load(args) -> PollenDictionary:
    path = _require_dict_path(args)
    if not Path(path).exists():
        raise UsageError(f"dictionary {path} does not exist")
    d = load_dictionary(path)
    return d.with_thresholds(getattr(args, "toc_min", None), getattr(args, "tm_min", None))


def _triple(text):
    vals = [float(x) for x in text.split(",")]
    if len(vals) != 3:
        raise UsageError(f"expected three comma-separated numbers, got {text!r}")
    return tuple(vals)


# --------------------------------------------------------------------------
# commands

def cmd_extract(args) -> int:
    extractor = _extractor(args, args.label)
    print(f"hs={args.hs:g} hr={args.hr:g} min_area={args.min_segment_area} "
          f"min_component={args.min_component}", file=sys.stderr)
    instances = []
    for path in args.images:
        try:
            ex = extractor.extract(path)
        except (ImageError, ValueError) as exc:
            raise UsageError(f"{path}: {exc}") from None
        log.info("%s: threshold %d, %d foreground pixels", path, ex.otsu.level,
                 int(ex.mask.sum()))
        if not ex.instances:
            print(f"warning: {path}: no pollen loads found", file=sys.stderr)
        print(f"{path}: {len(ex.segments)} segments", file=sys.stderr)
        if args.debug_dir:
            os.makedirs(args.debug_dir, exist_ok=True)
            write_debug(ex, ex.mask.shape, os.path.join(args.debug_dir, Path(path).stem))
        instances.extend(ex.instances)
    if args.output:
        ev.write_instances_csv(args.output, instances)
    else:
        ev.write_instances_csv(sys.stdout, instances)
    return EXIT_OK


def cmd_dict_add(args) -> int:
    path = _require_dict_path(args)
    if Path(path).exists():
        before = load_dictionary(path)
        if args.reject is not None and args.reject != before.rejection_fraction:
            raise UsageError("--reject cannot change an existing dictionary's rejection fraction")
        before = before.with_thresholds(args.toc_min, args.tm_min)
    else:
        before = PollenDictionary(
            t_oc_min=DEFAULT_T_OC_MIN if args.toc_min is None else args.toc_min,
            t_m_min=DEFAULT_T_M_MIN if args.tm_min is None else args.tm_min,
            rejection_fraction=args.reject or 0.0)
    train = ev.read_instances_csv(args.train)
    after = add_class(before, args.name, train)
    result = after

    if not before.models:
        print(f"added {args.name!r} ({len(train)} instances); no ambiguity check possible")
    elif not args.test:
        print(f"warning: ambiguity check skipped for {args.name!r}: no --test data",
              file=sys.stderr)
    else:
        test = ev.read_instances_csv(args.test)
        report = detect_ambiguity(before, after, test, args.delta_threshold)
        print(f"epsilon before={report.epsilon_before:.4f} after={report.epsilon_after:.4f} "
              f"delta={report.delta:.4f} threshold={args.delta_threshold:g}")
        if report.triggered:
            ci, cj = report.conflicting_pair or (None, None)
            print(f"ambiguity detected between {ci!r} and {cj!r}")
            policy = args.on_ambiguity
            if policy is None and args.non_interactive:
                policy = "abort"
            if policy is None:
                sys.stdout.write(f"merge {ci} and {cj}? [y/N] ")
                sys.stdout.flush()
                answer = sys.stdin.readline().strip().lower()
                policy = "merge" if answer in ("y", "yes") else "keep"
            if policy == "abort":
                print("aborted; dictionary unchanged", file=sys.stderr)
                return EXIT_ABORT
            if policy == "merge":
                if ci is None:
                    raise UsageError("no conflicting pair to merge")
                # keep the established name when the newcomer is involved
                if ci == args.name:
                    ci, cj = cj, ci
                result = merge_classes(after, ci, cj)
                print(f"merged {cj!r} into {ci!r}")
    save_dictionary(result, path)
    print(f"dictionary {path}: {len(result)} classes")
    return EXIT_OK


def cmd_dict_list(args) -> int:
    d = _load(args)
    rows = [{"class_name": m.class_name, "prototypes": len(m), "threshold": m.threshold,
             "degenerate": m.degenerate} for m in d.models]
    if args.json:
        print(json.dumps({"t_oc_min": d.t_oc_min, "t_m_min": d.t_m_min,
                          "rejection_fraction": d.rejection_fraction, "classes": rows},
                         indent=2))
        return EXIT_OK
    print(f"rejection_fraction={d.rejection_fraction:g} t_oc_min={d.t_oc_min:g} "
          f"t_m_min={d.t_m_min:g}")
    print(f"{'class':<20}{'prototypes':>12}{'threshold':>14}")
    for r in rows:
        flag = "  (degenerate)" if r["degenerate"] else ""
        print(f"{r['class_name']:<20}{r['prototypes']:>12d}{r['threshold']:>14.6g}{flag}")
    return EXIT_OK


def cmd_dict_remove(args) -> int:
    d = load_dictionary(_require_dict_path(args))
    if args.name not in d:
        raise UsageError(f"unknown class {args.name!r}")
    save_dictionary(d.without(args.name), args.dict_path)
    print(f"removed {args.name!r}")
    return EXIT_OK


def cmd_dict_merge(args) -> int:
    d = load_dictionary(_require_dict_path(args))
    save_dictionary(merge_classes(d, args.ci, args.cj), args.dict_path)
    print(f"merged {args.cj!r} into {args.ci!r}")
    return EXIT_OK


def cmd_classify(args) -> int:
    d = _load(args)
    if args.input.lower().endswith(".csv"):
        instances = ev.read_instances_csv(args.input)
    else:
        try:
            instances = _extractor(args).extract(args.input).instances
        except (ImageError, ValueError) as exc:
            raise UsageError(f"{args.input}: {exc}") from None
    if not instances:
        if args.json:
            print(json.dumps({"input": args.input, "verdict": "NO SAMPLE", "instances": []},
                             indent=2))
        else:
            print("verdict: NO SAMPLE")
        return EXIT_EMPTY
    verdict = classify_sample(d, instances)
    if args.json:
        doc = {
            "input": args.input,
            "verdict": verdict.label,
            "votes": dict(sorted(verdict.votes.items())),
            "instances": [
                {"L": inst.color.L, "u": inst.color.u, "v": inst.color.v,
                 "weight": inst.weight, **dec.to_dict()}
                for inst, dec in zip(instances, verdict.decisions)
            ],
        }
        print(json.dumps(doc, indent=2))
        return EXIT_OK
    print(f"{'#':>4} {'L':>8} {'u':>8} {'v':>8} {'weight':>7} {'predicted':<16}"
          f"{'t_oc':>8} {'t_m':>8}")
    for i, (inst, dec) in enumerate(zip(instances, verdict.decisions)):
        L, u, v = inst.color
        print(f"{i:>4} {L:>8.2f} {u:>8.2f} {v:>8.2f} {inst.weight:>7d} {dec.predicted:<16}"
              f"{dec.t_oc:>8.4f} {dec.t_m:>8.4f}")
    print(f"verdict: {verdict.label}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    d = _load(args)
    instances = ev.read_instances_csv(args.csv)
    truth = [inst.label or ev.OUTLIER for inst in instances]
    unknown = sorted(set(truth) - set(d.class_names) - {ev.OUTLIER})
    if unknown:
        raise UsageError(f"labels not in dictionary: {', '.join(unknown)}")
    pred = predict_labels(d, [inst.color for inst in instances])
    cm = ev.confusion(truth, pred, labels=d.class_names + [ev.OUTLIER])
    conventions = list(ev.CONVENTIONS) if args.convention == "both" else [args.convention]
    reports = [ev.multiclass_metrics(cm, c) for c in conventions]
    if args.json:
        print(json.dumps({"confusion": cm.to_dict(),
                          "metrics": [r.to_dict() for r in reports]}, indent=2))
        return EXIT_OK
    print(cm.format_table())
    for r in reports:
        print()
        print(r.format_table())
    return EXIT_OK


_DEFAULT_CLUSTERS = [
    ev.ClusterSpec("Rubus", (70.0, 40.0, 60.0), 3.0, 200),
    ev.ClusterSpec("Echium", (45.0, -20.0, -40.0), 3.0, 200),
    ev.ClusterSpec("Cistus", (80.0, 5.0, 80.0), 3.0, 200),
    ev.ClusterSpec("Quercus", (55.0, 60.0, 10.0), 3.0, 200),
]


def cmd_synth(args) -> int:
    clusters = []
    for text in args.cluster:
        try:
            label, mean, std, count = text.split(":")
            clusters.append(ev.ClusterSpec(label, _triple(mean), float(std), int(count)))
        except ValueError:
            raise UsageError(f"bad --cluster {text!r}; expected LABEL:L,u,v:STD:COUNT") from None
    if not clusters:
        clusters = _DEFAULT_CLUSTERS
    n_out = 400 if args.outliers is None else args.outliers
    try:
        low, high = args.box.split(":")
    except ValueError:
        raise UsageError(f"bad --box {args.box!r}") from None
    outliers = ev.OutlierSpec(_triple(low), _triple(high), n_out)
    data = ev.synth_dataset(clusters, outliers, seed=args.seed)
    if args.output:
        ev.write_instances_csv(args.output, data)
    else:
        ev.write_instances_csv(sys.stdout, data)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, DictionaryError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"pollenauth: error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
