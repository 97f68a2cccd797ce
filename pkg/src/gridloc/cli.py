"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .evaluation import evaluate, load_records
from .headshape import ConstraintError, build_original_head, build_plus_head, ledger, validate_groups
from .sampler import batch_count_variance, make_count_source
from .simulator import ProposalRecord, compare_pipelines, generate_scenes, run_experiment

log = logging.getLogger("gridloc")

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 2, 3


class IOFailure(OSError):
    pass


def worker_count() -> int:
    raw = os.environ.get("GRIDLOC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("GRIDLOC_THREADS", f"not an integer: {raw!r}") from None
    if n < 0:
        raise ConfigError("GRIDLOC_THREADS", "must be >= 0")
    return n or (os.cpu_count() or 1)


def write_atomic(path: Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _records_csv(records: list[ProposalRecord]) -> str:
    buf = io.StringIO()
    rows = [r.row() for r in records]
    if not rows:
        return ""
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(v, spec=".4f") -> str:
    return "-" if v is None else format(v, spec)


def _scene_kwargs(cfg: RunConfig) -> dict:
    sc = dict(cfg.scenes)
    sc["image_size"] = tuple(sc["image_size"])
    return sc


def cmd_simulate(cfg: RunConfig, as_json: bool) -> int:
    sc = _scene_kwargs(cfg)
    scenes = generate_scenes(seed=cfg.seed, **sc)
    result = run_experiment(
        scenes, cfg.variants, cfg.noise, cfg.pipeline, cfg.decode,
        positive_iou=cfg.positive_iou, workers=worker_count(),
    )
    report = {"config": cfg.resolved(), "seed": cfg.seed, **result.metrics()}
    write_atomic(cfg.output_dir / "metrics.json", dump_json(report))
    write_atomic(cfg.output_dir / "proposals.csv", _records_csv(result.records))
    if as_json:
        sys.stdout.write(dump_json(result.metrics()))
        return EXIT_OK
    header = f"{'variant':<14}{'decoded':>9}{'edge err':>11}{'mean IoU':>10}{'AP':>8}{'AP50':>8}{'AP75':>8}"
    print(header)
    print("-" * len(header))
    rows = list(result.variants.items()) + [("proposals", result.baseline)]
    for name, m in rows:
        ev = m["eval"]
        print(
            f"{name:<14}{m['num_decoded']:>9}{_fmt(m['mean_edge_error']):>11}"
            f"{_fmt(m['mean_iou']):>10}{_fmt(ev['ap']):>8}{_fmt(ev['ap50']):>8}{_fmt(ev['ap75']):>8}"
        )
    print(f"wrote {cfg.output_dir / 'metrics.json'} and {cfg.output_dir / 'proposals.csv'}")
    return EXIT_OK


def cmd_flops(args) -> int:
    try:
        plus = build_plus_head(args.channels, args.n_points, fusion_before_deconv=not args.fusion_after)
        orig = build_original_head(args.channels, args.n_points)
    except ConstraintError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    lp, lo = ledger(plus), ledger(orig)
    ratio = lp.total_macs / lo.total_macs
    report = {
        "channels": args.channels,
        "n_points": args.n_points,
        "plus": lp.to_dict(),
        "original": lo.to_dict(),
        "mac_ratio": ratio,
        "group_violations": {"plus": validate_groups(plus), "original": validate_groups(orig)},
    }
    if args.out:
        write_atomic(Path(args.out) / "flops.json", dump_json(report))
    if args.json:
        sys.stdout.write(dump_json(report))
        return EXIT_OK
    for led in (lp, lo):
        print(f"[{led.head} head]")
        print(f"{'layer':<12}{'kind':<11}{'output':<16}{'params':>12}{'MACs':>16}")
        for r in led.rows:
            shape = "x".join(str(s) for s in r.output_shape)
            print(f"{r.name:<12}{r.kind:<11}{shape:<16}{r.params:>12,}{r.macs:>16,}")
        print(f"{'total':<39}{led.total_params:>12,}{led.total_macs:>16,}\n")
    print(f"MAC ratio plus/original: {ratio:.4f}")
    return EXIT_OK


def cmd_nms_bench(cfg: RunConfig, as_json: bool) -> int:
    nb = cfg.nms_bench
    sc = _scene_kwargs(cfg)
    sc.update({k: nb[k] for k in nb if k != "count"})
    sc["count"] = nb["count"]
    scenes = generate_scenes(seed=cfg.seed, **sc)
    rows = compare_pipelines(
        scenes, cfg.variants[0], cfg.noise, cfg.pipeline, cfg.original_pipeline, cfg.decode
    )
    plus_evals = [r["plus_iou_evals"] for r in rows]
    orig_evals = [r["original_iou_evals"] for r in rows]
    nontrivial = [r for r in rows if r["original_second_pass_evals"] > 0]
    summary = {
        "scenes": len(rows),
        "plus_iou_evals_total": int(np.sum(plus_evals)),
        "original_iou_evals_total": int(np.sum(orig_evals)),
        "scenes_with_nontrivial_second_nms": len(nontrivial),
        "scenes_plus_strictly_fewer": sum(
            r["plus_iou_evals"] < r["original_iou_evals"] for r in nontrivial
        ),
        "plus_seconds_total": float(np.sum([r["plus_seconds"] for r in rows])),
        "original_seconds_total": float(np.sum([r["original_seconds"] for r in rows])),
    }
    report = {"config": cfg.resolved(), "seed": cfg.seed, "summary": summary, "scenes": rows}
    write_atomic(cfg.output_dir / "nms_bench.json", dump_json(report))
    if as_json:
        sys.stdout.write(dump_json(summary))
    else:
        for k, v in summary.items():
            print(f"{k:<36}{v}")
    return EXIT_OK


def cmd_sample_stats(cfg: RunConfig, as_json: bool) -> int:
    ss = cfg.sample_stats
    source = make_count_source(**ss["distribution"])
    stats = batch_count_variance(source, cfg.sampler, ss["trials"], cfg.seed)
    report = {"config": cfg.resolved(), "seed": cfg.seed, "stats": stats}
    write_atomic(cfg.output_dir / "sample_stats.json", dump_json(report))
    if as_json:
        sys.stdout.write(dump_json(stats))
    else:
        print(f"{'mode':<12}{'mean':>10}{'variance':>12}{'min':>8}{'max':>8}")
        for mode, s in stats.items():
            print(f"{mode:<12}{s['mean']:>10.2f}{s['variance']:>12.2f}{s['min']:>8.0f}{s['max']:>8.0f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        dets = load_records(args.dets, "det")
        gts = load_records(args.gts, "gt")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    result = evaluate(dets, gts).to_dict()
    if args.out:
        write_atomic(Path(args.out) / "eval.json", dump_json(result))
    if args.json:
        sys.stdout.write(dump_json(result))
    else:
        for k, v in result.items():
            print(f"{k:<10}{_fmt(v)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridloc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gridloc {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_opts(p):
        p.add_argument("--config", help="JSON config file (defaults are built in)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (overrides config output_dir)")
        p.add_argument("--json", action="store_true", help="print machine-readable output")

    run_opts(sub.add_parser("simulate", help="compare grid representations on synthetic scenes"))
    run_opts(sub.add_parser("nms-bench", help="count IoU evaluations of NMS-once vs NMS-twice"))
    run_opts(sub.add_parser("sample-stats", help="batch positive-count variance per sampling mode"))

    p = sub.add_parser("flops", help="per-layer MAC ledger of the plus and original heads")
    p.add_argument("--channels", type=int, default=576)
    p.add_argument("--n-points", type=int, default=9)
    p.add_argument("--fusion-after", action="store_true", help="place depthwise fusion after the deconvs")
    p.add_argument("--out", help="also write flops.json here")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("eval", help="COCO-style AP of line-delimited JSON detections")
    p.add_argument("--dets", required=True)
    p.add_argument("--gts", required=True)
    p.add_argument("--out", help="also write eval.json here")
    p.add_argument("--json", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "flops":
            return cmd_flops(args)
        if args.command == "eval":
            return cmd_eval(args)
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        handler = {
            "simulate": cmd_simulate,
            "nms-bench": cmd_nms_bench,
            "sample-stats": cmd_sample_stats,
        }[args.command]
        return handler(cfg, args.json)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IOFailure as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
