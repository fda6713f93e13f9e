"""Command-line interface: ``agglo {synth,watershed,train,segment,eval}``.

Every command writes a JSON manifest next to its output recording the
resolved configuration, seeds, input digests, tool version and wall time.
Numeric options can also come from ``--config file.json`` (keys are the
long option names with dashes or underscores); explicit flags win.

Exit codes: 0 success, 2 usage error, 3 data or shape error, 4 internal
assertion.
"""

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .classify import (ModelFormatError, TrainingSet, load_model,
                       save_model, train_forest)
from .estimator import segment
from .evaluate import (LOWER_IS_BETTER, adjusted_rand_error, contingency,
                       covering, ods_ois, rand_index, threshold_sweep, vi,
                       vi_breakdown)
from .features import FeatureMap, default_feature_map
from .learn import prepare_image, train
from .rag import Dendrogram, LearnedPolicy, MeanBoundary, apply_threshold
from .synth import SynthConfig, generate
from .volume import VolumeFormatError, load_volume, regional_minima, \
    save_volume, watershed

log = logging.getLogger("agglo")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
METRICS = ("vi", "splitvi", "ri", "are", "covering", "breakdown")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# --- helpers ----------------------------------------------------------------

def _fmt(x):
    return format(float(x), ".17g")


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def manifest_path(out):
    out = Path(out)
    if out.is_dir():
        return out / "manifest.json"
    return out.with_name(out.stem + ".manifest.json")


def sibling(out, suffix):
    """`out` with its extension replaced by `suffix` (e.g. '.tree.csv')."""
    out = Path(out)
    return out.with_name(out.stem + suffix)


def read_volume(path, what, kind=None):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{what} file not found: {path}")
    try:
        vol = load_volume(path)
    except (VolumeFormatError, OSError) as exc:
        raise DataError(f"cannot read {what} file {path}: {exc}") from exc
    is_label = vol.dtype == np.uint64
    if kind == "label" and not is_label:
        raise DataError(f"{what} file {path} holds cues, expected labels")
    if kind == "cue" and is_label:
        raise DataError(f"{what} file {path} holds labels, expected cues")
    return vol


def write_manifest(args, out, inputs, outputs, seeds, started):
    config = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func", "config") and not k.startswith("_")}
    manifest = {
        "command": args.command,
        "argv": list(args._argv),
        "config": config,
        "config_file": args.config,
        "seeds": seeds,
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "wall_time_seconds": time.perf_counter() - started,
    }
    Path(manifest_path(out)).write_text(
        json.dumps(manifest, indent=2, default=str) + "\n")


def _same_length(args, *names):
    lists = [getattr(args, n) or [] for n in names]
    if len({len(x) for x in lists}) != 1:
        raise UsageError(" ".join(f"--{n}" for n in names)
                         + " need the same number of paths")
    return lists


def parse_thresholds(text):
    """'a:b:n' for n evenly spaced values or a comma-separated list."""
    try:
        if ":" in text:
            a, b, n = text.split(":")
            values = np.linspace(float(a), float(b), int(n))
        else:
            values = np.array([float(x) for x in text.split(",") if x])
    except ValueError as exc:
        raise UsageError(f"bad threshold list {text!r}") from exc
    if len(values) == 0 or np.any(np.isnan(values)):
        raise UsageError(f"bad threshold list {text!r}")
    return np.sort(values)


# --- commands ---------------------------------------------------------------

def cmd_synth(args):
    started = time.perf_counter()
    cfg = SynthConfig(shape=tuple(args.shape), n_regions=args.n_regions,
                      blur=args.blur, boundary_noise=args.boundary_noise,
                      texture=args.texture, texture_noise=args.texture_noise,
                      seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gt, cues, sp = generate(cfg)
    outputs = [out / "gt.ndv", out / "cues.ndv", out / "sp.ndv",
               out / "config.json"]
    save_volume(gt, outputs[0])
    save_volume(cues, outputs[1])
    save_volume(sp, outputs[2])
    outputs[3].write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    write_manifest(args, out, [], outputs, {"synth": cfg.seed}, started)


def cmd_watershed(args):
    started = time.perf_counter()
    cues = read_volume(args.cues, "cues", "cue")
    if not 0 <= args.channel < cues.shape[0]:
        raise DataError(f"channel {args.channel} out of range for "
                        f"{cues.shape[0]} cue channels")
    seeds = regional_minima(cues, args.channel, args.connectivity)
    sp = watershed(cues, seeds, args.channel, args.connectivity)
    save_volume(sp, args.out)
    write_manifest(args, args.out, [args.cues], [args.out], {}, started)


def _forest_params(args):
    return {"n_trees": args.n_trees, "max_depth": args.max_depth,
            "min_leaf": args.min_leaf,
            "features_per_split": args.features_per_split, "seed": args.seed}


def cmd_train(args):
    started = time.perf_counter()
    out = Path(args.out)
    inputs, outputs = [], [out]
    examples_path = sibling(out, ".examples.csv")
    if args.examples:
        # offline re-training from a training-set dump
        if args.sp or args.cues or args.gt:
            raise UsageError("--examples replaces --sp/--cues/--gt")
        tset, sidecar = TrainingSet.from_csv(args.examples)
        if sidecar.get("feature_map_config") is None:
            raise DataError(f"{args.examples}: sidecar lacks a feature map")
        fm = FeatureMap.from_config(sidecar["feature_map_config"])
        if fm.n_features != tset.n_features:
            raise DataError(f"{args.examples}: {tset.n_features} columns but "
                            f"the feature map produces {fm.n_features}")
        model = train_forest(tset, **_forest_params(args))
        inputs.append(args.examples)
    else:
        sps, cues_l, gts = _same_length(args, "sp", "cues", "gt")
        if not sps:
            raise UsageError("train needs --sp, --cues and --gt "
                             "(or --examples)")
        images, fm = [], None
        for sp_path, cue_path, gt_path in zip(sps, cues_l, gts):
            sp = read_volume(sp_path, "sp", "label")
            cues = read_volume(cue_path, "cues", "cue")
            gt = read_volume(gt_path, "gt", "label")
            if sp.shape != gt.shape or cues.shape[1:] != sp.shape:
                raise DataError(f"shape mismatch: sp {sp.shape}, cues "
                                f"{cues.shape[1:]}, gt {gt.shape}")
            if fm is None:
                fm = default_feature_map(cues.shape[0], sp.ndim, args.bins,
                                         args.quantiles, args.mid_level)
            elif fm.n_channels != cues.shape[0]:
                raise DataError("all images need the same cue channel count")
            images.append(prepare_image(sp, cues, gt, fm, args.connectivity))
            inputs += [sp_path, cue_path, gt_path]
        model, tset = train(images, fm, args.method, args.epochs, args.init,
                            args.mixed, _forest_params(args), jobs=args.jobs)
        tset.to_csv(examples_path, fm,
                    extra={"method": args.method, "epochs": args.epochs,
                           "init": args.init, "mixed": args.mixed})
        outputs += [examples_path, examples_path.with_suffix(".json")]
    save_model(model, out, fm)
    write_manifest(args, out, inputs, outputs, {"forest": args.seed},
                   started)


def cmd_segment(args):
    started = time.perf_counter()
    sp = read_volume(args.sp, "sp", "label")
    cues = read_volume(args.cues, "cues", "cue")
    if cues.shape[1:] != sp.shape:
        raise DataError(f"shape mismatch: sp {sp.shape}, cues "
                        f"{cues.shape[1:]}")
    inputs = [args.sp, args.cues]
    fm = None
    if args.policy == "learned":
        if not args.model:
            raise UsageError("--policy learned needs --model")
        try:
            model = load_model(args.model)
        except FileNotFoundError as exc:
            raise DataError(f"model file not found: {args.model}") from exc
        fm = model.feature_map_
        if fm is None:
            raise DataError(f"{args.model}: model carries no feature map")
        if fm.n_channels != cues.shape[0]:
            raise DataError(f"model expects {fm.n_channels} cue channels, "
                            f"{args.cues} has {cues.shape[0]}")
        policy = LearnedPolicy(fm, model)
        inputs.append(args.model)
    else:
        if not 0 <= args.channel < cues.shape[0]:
            raise DataError(f"channel {args.channel} out of range")
        policy = MeanBoundary(args.channel)
    limit = np.inf if args.save_tree else args.threshold
    _, dend = segment(sp, cues, policy, limit, fm, args.connectivity)
    # the segmentation is a prefix cut of whatever was merged
    seg = apply_threshold(sp, dend, args.threshold)
    save_volume(seg, args.out)
    tree = sibling(args.out, ".tree.csv")
    dend.to_csv(tree)
    write_manifest(args, args.out, inputs, [args.out, tree], {}, started)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _scalar_rows(t, metrics):
    rows = []
    if "vi" in metrics:
        rows.append(["vi", "", _fmt(vi(t).total)])
    if "splitvi" in metrics:
        r = vi(t)
        rows += [["vi_under", "", _fmt(r.under)],
                 ["vi_over", "", _fmt(r.over)]]
    if "ri" in metrics:
        rows.append(["ri", "", _fmt(rand_index(t))])
    if "are" in metrics:
        rows.append(["are", "", _fmt(adjusted_rand_error(t))])
    if "covering" in metrics:
        rows.append(["covering", "", _fmt(covering(t))])
    return rows


def _breakdown_rows(t):
    splits, merges = vi_breakdown(t)
    rows = []
    for b, direction in ((splits, "false_split"), (merges, "false_merge")):
        rows += [[int(i), _fmt(m), _fmt(e), direction]
                 for i, m, e in zip(b.ids, b.mass, b.entropy)]
    return rows


def _sweep_columns(metrics):
    cols = []
    if "vi" in metrics:
        cols.append("vi")
    if "splitvi" in metrics:
        cols += ["vi_under", "vi_over"]
    cols += [m for m in ("ri", "are", "covering") if m in metrics]
    return cols


def _sweep_one(job):
    sp_path, tree_path, gt_path, thresholds, metrics = job
    sp = read_volume(sp_path, "sp", "label")
    gt = read_volume(gt_path, "gt", "label")
    if sp.shape != gt.shape:
        raise DataError(f"shape mismatch: sp {sp.shape}, gt {gt.shape}")
    if not Path(tree_path).exists():
        raise DataError(f"dendrogram file not found: {tree_path}")
    dend = Dendrogram.from_csv(tree_path)
    wanted = set(metrics) | ({"vi"} if "splitvi" in metrics else set())
    return threshold_sweep(sp, dend, gt, thresholds, tuple(wanted))


def cmd_eval(args):
    started = time.perf_counter()
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    bad = [m for m in metrics if m not in METRICS]
    if bad or not metrics:
        raise UsageError(f"unknown metrics {bad}; choose from "
                         f"{','.join(METRICS)}")
    out = Path(args.out)
    outputs = [out]
    if args.sweep:
        sps, trees, gts = _same_length(args, "sp", "sweep", "gt")
        if len(sps) > 1 and not args.ods:
            raise UsageError("several images need --ods")
        thresholds = parse_thresholds(args.thresholds)
        jobs = [(s, d, g, thresholds, metrics)
                for s, d, g in zip(sps, trees, gts)]
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(args.jobs) as pool:
                tables = list(pool.map(_sweep_one, jobs))
        else:
            tables = [_sweep_one(j) for j in jobs]
        cols = _sweep_columns(metrics)
        rows = []
        for m in cols:
            curve = np.mean([tab[m] for tab in tables], axis=0)
            rows += [[m, _fmt(thr), _fmt(v)]
                     for thr, v in zip(thresholds, curve)]
        if args.ods:
            for m in cols:
                res = ods_ois(thresholds, [tab[m] for tab in tables],
                              LOWER_IS_BETTER[m])
                rows.append([f"{m}_ods", _fmt(res["ods_threshold"]),
                             _fmt(res["ods"])])
                rows.append([f"{m}_ois", "", _fmt(res["ois"])])
        inputs = sps + trees + gts
    else:
        if args.ods:
            raise UsageError("--ods needs --sweep")
        segs, gts = _same_length(args, "seg", "gt")
        if len(segs) != 1:
            raise UsageError("eval without --sweep takes one --seg and --gt")
        seg = read_volume(segs[0], "seg", "label")
        gt = read_volume(gts[0], "gt", "label")
        if seg.shape != gt.shape:
            raise DataError(f"shape mismatch: seg {seg.shape}, gt {gt.shape}")
        t = contingency(seg, gt)
        rows = _scalar_rows(t, metrics)
        if "breakdown" in metrics:
            bpath = sibling(out, ".breakdown.csv")
            _write_rows(bpath, ["segment_id", "mass", "entropy", "direction"],
                        _breakdown_rows(t))
            outputs.append(bpath)
        inputs = segs + gts
    _write_rows(out, ["metric", "threshold", "value"], rows)
    write_manifest(args, out, inputs, outputs, {}, started)


# --- argument parsing -------------------------------------------------------

def _bool(text):
    if isinstance(text, bool):
        return text
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _optional_bool(text):
    return None if text.lower() in ("auto", "none") else _bool(text)


def _optional_int(text):
    return None if text.lower() in ("auto", "none") else int(text)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="agglo", description="Learned agglomeration of superpixels.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON file of option defaults")
        p.add_argument("--out", required=True, help="output path")
        p.set_defaults(func=func)
        return p

    p = command("synth", cmd_synth, "generate a synthetic benchmark")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--shape", type=int, nargs="+", default=[128, 128])
    p.add_argument("--n-regions", type=int, default=20)
    p.add_argument("--blur", type=int, default=1)
    p.add_argument("--boundary-noise", type=float, default=0.3)
    p.add_argument("--texture", type=_bool, default=True)
    p.add_argument("--texture-noise", type=float, default=0.1)

    p = command("watershed", cmd_watershed, "superpixels from a cue channel")
    p.add_argument("--cues", required=True)
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--connectivity", choices=("face", "full"), default="face")

    p = command("train", cmd_train, "train a merge classifier")
    p.add_argument("--sp", nargs="+")
    p.add_argument("--cues", nargs="+")
    p.add_argument("--gt", nargs="+")
    p.add_argument("--examples", help="re-train from a training-set CSV")
    p.add_argument("--method", choices=("flat", "gala", "lash"),
                   default="gala")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--init", choices=("flat", "mean", "random"),
                   default="flat")
    p.add_argument("--mixed", type=_bool, default=False)
    p.add_argument("--bins", type=int, default=25)
    p.add_argument("--quantiles", type=int, default=9)
    p.add_argument("--mid-level", type=_optional_bool, default=None)
    p.add_argument("--connectivity", choices=("face", "full"), default="face")
    p.add_argument("--n-trees", type=int, default=100)
    p.add_argument("--max-depth", type=int, default=20)
    p.add_argument("--min-leaf", type=int, default=1)
    p.add_argument("--features-per-split", type=_optional_int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)

    p = command("segment", cmd_segment, "agglomerate superpixels")
    p.add_argument("--sp", required=True)
    p.add_argument("--cues", required=True)
    p.add_argument("--model")
    p.add_argument("--policy", choices=("learned", "mean"),
                   default="learned")
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--save-tree", action="store_true",
                   help="record the full merge tree, not just the cut")
    p.add_argument("--connectivity", choices=("face", "full"), default="face")

    p = command("eval", cmd_eval, "region metrics against a gold standard")
    p.add_argument("--seg", nargs="+")
    p.add_argument("--gt", nargs="+", required=True)
    p.add_argument("--sp", nargs="+")
    p.add_argument("--sweep", nargs="+", help="dendrogram CSV(s)")
    p.add_argument("--thresholds", default="0:1:21",
                   help="'start:stop:count' or comma-separated values")
    p.add_argument("--metrics", default="vi,splitvi,ri,are,covering")
    p.add_argument("--ods", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    return parser


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") \
                from exc
        if not isinstance(cfg, dict):
            raise DataError(f"config {args.config} must be a JSON object")
        sp = _subparsers(parser)[args.command]
        dests = {a.dest for a in sp._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - dests - {"command"})
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: "
                             f"{', '.join(unknown)}")
        cfg.pop("command", None)
        sp.set_defaults(**cfg)
        # explicit flags still win over the file
        args = parser.parse_args(argv)
    args._argv = list(argv)
    return args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return exc.code
    except UsageError as exc:
        print(f"agglo: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"agglo: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"agglo: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AssertionError as exc:
        print(f"agglo: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (DataError, ModelFormatError, ValueError, OSError) as exc:
        print(f"agglo: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
