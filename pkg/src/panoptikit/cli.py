"""Command-line interface: evaluate, fuse, and losses subcommands.

Exit codes: 0 on success, 2 for input-set problems (missing files, empty or
mismatched directories), 3 for decode and schema errors. Progress and
warnings go to stderr; machine output goes to stdout or the --out file.
Reports are byte-identical for a given input regardless of --jobs.
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .boxes import BoxError, Box
from .fusion import Detection, FusionConfig, FusionError, fuse
from .losses import LossInputError, loss_report_from_fixture
from .metrics import MetricAccumulator, MetricError, accumulate_image, finalize, merge
from .panoptic import (
    ClassTable,
    PanopticDecodeError,
    PanopticMap,
    SemanticMap,
    read_class_table,
    read_panoptic,
    write_panoptic,
)
from .tensor_ops import MaskGrid, TensorOpError

COMBINED_SIDECAR = "annotations.json"


class InputSetError(Exception):
    """Missing or mismatched input files; maps to exit code 2."""


def _read_json(path: Path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputSetError(f"missing file: {path}")
    except json.JSONDecodeError as exc:
        raise PanopticDecodeError(f"{path}: invalid JSON: {exc}") from exc


def _load_categories(path: str) -> ClassTable:
    doc = _read_json(Path(path))
    return read_class_table(doc)


def _sidecar_for(directory: Path, stem: str, combined: Optional[dict]) -> dict:
    per_image = directory / f"{stem}.json"
    if per_image.exists():
        return _read_json(per_image)
    if combined is not None and stem in combined:
        return {"segments_info": combined[stem]}
    raise PanopticDecodeError(f"no sidecar for {stem!r} in {directory}")


def _load_combined(directory: Path) -> Optional[dict]:
    """Index a COCO-panoptic style combined annotation file by image stem."""
    path = directory / COMBINED_SIDECAR
    if not path.exists():
        return None
    doc = _read_json(path)
    index: dict[str, list] = {}
    for ann in doc.get("annotations", []):
        name = ann.get("file_name")
        if name is None:
            raise PanopticDecodeError(f"{path}: annotation without file_name")
        index[Path(name).stem] = ann.get("segments_info", [])
    return index


def _read_map(directory: Path, stem: str, combined: Optional[dict], table: ClassTable) -> PanopticMap:
    png_path = directory / f"{stem}.png"
    try:
        png_bytes = png_path.read_bytes()
    except FileNotFoundError:
        raise InputSetError(f"missing file: {png_path}")
    return read_panoptic(png_bytes, _sidecar_for(directory, stem, combined), table)


def _evaluate_one(args) -> dict:
    gt_dir, pred_dir, stem, gt_combined, pred_combined, table, fn_void_rule = args
    gt = _read_map(Path(gt_dir), stem, gt_combined, table)
    pred = _read_map(Path(pred_dir), stem, pred_combined, table)
    if gt.pixels.shape != pred.pixels.shape:
        raise MetricError(f"{stem}: dimensions differ between gt and prediction")
    return dict(accumulate_image(gt, pred, table, fn_void_rule=fn_void_rule).stats)


def _discover_pairs(gt_dir: Path, pred_dir: Path) -> list[str]:
    gt_stems = sorted(p.stem for p in gt_dir.glob("*.png"))
    pred_stems = sorted(p.stem for p in pred_dir.glob("*.png"))
    if not gt_stems:
        raise InputSetError(f"no images: {gt_dir} contains no .png files")
    missing_pred = sorted(set(gt_stems) - set(pred_stems))
    missing_gt = sorted(set(pred_stems) - set(gt_stems))
    if missing_pred or missing_gt:
        parts = []
        if missing_pred:
            parts.append(f"missing predictions for: {', '.join(missing_pred)}")
        if missing_gt:
            parts.append(f"predictions without ground truth: {', '.join(missing_gt)}")
        raise InputSetError("; ".join(parts))
    return gt_stems


def _format_float(value: Optional[float]) -> str:
    return "undefined" if value is None else repr(value)


def _report_text(report, table: ClassTable) -> str:
    lines = [
        f"pq\t{_format_float(report.pq)}",
        f"pq_dagger\t{_format_float(report.pq_dagger)}",
        f"pq_stuff\t{_format_float(report.pq_stuff)}",
        f"pq_things\t{_format_float(report.pq_things)}",
        "undefined_classes\t" + ",".join(str(c) for c in report.undefined_classes),
        "",
        "class_id\tname\tkind\tpq\tpq_dagger\ttp\tfp\tfn",
    ]
    for class_id in sorted(report.per_class):
        m = report.per_class[class_id]
        info = table.entries[class_id]
        lines.append(
            "\t".join(
                [
                    str(class_id),
                    info.name,
                    info.kind.value,
                    _format_float(m.pq),
                    _format_float(m.pq_dagger),
                    str(m.tp),
                    str(m.fp),
                    str(m.fn),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def cmd_evaluate(args: argparse.Namespace) -> int:
    gt_dir = Path(args.gt_dir)
    pred_dir = Path(args.pred_dir)
    table = _load_categories(args.categories)
    stems = _discover_pairs(gt_dir, pred_dir)
    gt_combined = _load_combined(gt_dir)
    pred_combined = _load_combined(pred_dir)

    fn_void_rule = not args.no_fn_void_rule
    tasks = [
        (str(gt_dir), str(pred_dir), stem, gt_combined, pred_combined, table, fn_void_rule)
        for stem in stems
    ]
    if args.jobs <= 1:
        partials = [_evaluate_one(t) for t in tasks]
    else:
        with multiprocessing.Pool(args.jobs) as pool:
            partials = list(pool.imap(_evaluate_one, tasks, chunksize=max(1, len(tasks) // (4 * args.jobs))))

    acc = MetricAccumulator(class_table=table)
    for stats in partials:
        acc = merge(acc, MetricAccumulator(class_table=table, stats=stats))
    report = finalize(acc)

    if args.format == "json":
        text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    else:
        text = _report_text(report, table)
    _emit(text, args.out)
    if args.plot:
        from .plots import render_report_figure

        render_report_figure(report, table, args.plot)
    print(f"evaluated {len(stems)} image pairs", file=sys.stderr)
    return 0


def _parse_detection(record, index: int) -> Detection:
    try:
        box = Box(*map(float, record["box"]))
        mask = np.asarray(record["mask"], dtype=np.float64)
        if mask.ndim == 1:
            mask = mask.reshape(28, 28)
        return Detection(
            box=box,
            class_id=int(record["class_id"]),
            score=float(record["score"]),
            mask=MaskGrid(mask),
        )
    except (KeyError, TypeError, ValueError, BoxError, TensorOpError, FusionError) as exc:
        raise FusionError(f"detection record {index}: {exc}") from exc


def cmd_fuse(args: argparse.Namespace) -> int:
    table = _load_categories(args.categories)
    detections_doc = _read_json(Path(args.detections))
    if isinstance(detections_doc, dict):
        detections_doc = detections_doc.get("detections", [])
    detections = [_parse_detection(rec, i) for i, rec in enumerate(detections_doc)]

    semantic_path = Path(args.semantic)
    try:
        img = Image.open(semantic_path)
        img.load()
    except FileNotFoundError:
        raise InputSetError(f"missing file: {semantic_path}")
    except Exception as exc:
        raise PanopticDecodeError(f"cannot decode semantic PNG: {exc}") from exc
    if img.mode != "L":
        raise PanopticDecodeError(f"semantic PNG must be 8-bit single channel, got mode {img.mode}")
    semantic = SemanticMap(np.asarray(img, dtype=np.int32))

    cfg = FusionConfig(
        coverage_threshold=args.coverage_threshold,
        stuff_min_area=args.stuff_min_area,
        mask_threshold=args.mask_threshold,
    )
    result = fuse(detections, semantic, table, cfg)
    png_bytes, sidecar = write_panoptic(result)

    out = Path(args.out)
    if out.suffix != ".png":
        out = out.with_suffix(".png")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(png_bytes)
    out.with_suffix(".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
    )
    print(f"wrote {out} and {out.with_suffix('.json')}", file=sys.stderr)
    return 0


def cmd_losses(args: argparse.Namespace) -> int:
    fixture = _read_json(Path(args.fixture))
    report = loss_report_from_fixture(fixture)
    _emit(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panoptikit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("evaluate", help="score prediction maps against ground truth")
    p_eval.add_argument("--gt-dir", required=True, help="directory of ground-truth PNGs + sidecars")
    p_eval.add_argument("--pred-dir", required=True, help="directory of predicted PNGs + sidecars")
    p_eval.add_argument("--categories", required=True, help="categories JSON file")
    p_eval.add_argument("--out", default=None, help="report file (default: stdout)")
    p_eval.add_argument("--jobs", type=int, default=1, help="parallel worker count")
    p_eval.add_argument("--format", choices=("json", "text"), default="json")
    p_eval.add_argument(
        "--no-fn-void-rule",
        action="store_true",
        help="count unmatched ground-truth segments as FN even when mostly covered by predicted void",
    )
    p_eval.add_argument("--plot", default=None, help="also render a per-class score chart to this file")
    p_eval.set_defaults(func=cmd_evaluate)

    p_fuse = sub.add_parser("fuse", help="fuse detections with a semantic map into a panoptic map")
    p_fuse.add_argument("--detections", required=True, help="detections JSON file")
    p_fuse.add_argument("--semantic", required=True, help="semantic PNG (8-bit, class id per pixel)")
    p_fuse.add_argument("--categories", required=True, help="categories JSON file")
    p_fuse.add_argument("--out", required=True, help="output PNG path (sidecar written alongside)")
    p_fuse.add_argument("--coverage-threshold", type=float, default=0.5)
    p_fuse.add_argument("--stuff-min-area", type=int, default=4096)
    p_fuse.add_argument("--mask-threshold", type=float, default=0.5)
    p_fuse.set_defaults(func=cmd_fuse)

    p_loss = sub.add_parser("losses", help="compute the six forward losses from a fixture bundle")
    p_loss.add_argument("--fixture", required=True, help="fixture JSON file")
    p_loss.add_argument("--out", default=None, help="report file (default: stdout)")
    p_loss.set_defaults(func=cmd_losses)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputSetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PanopticDecodeError, LossInputError, FusionError, MetricError, BoxError, TensorOpError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
