"""Command-line front end.

Every subcommand writes the fully resolved inputs it ran with next to its
outputs. Exit codes: 0 success, 2 usage or validation error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .dataset_io import (load_cameras, load_dataset, read_png_mask, save_dataset,
                         view_name, write_mask, write_png_gray, write_png_rgb)
from .maskgen import MockScript, masks_to_dataset
from .metrics import iou, mean_acc, mean_iou
from .plyio import load_ply, save_ply
from .raster import render, set_deterministic, set_threads
from .refine import (RefineConfig, RefineLog, heldout_views, mean_psnr, multi_object_refine,
                     refine_object, segment, train_views)
from .scene import ValidationError
from .synth import VARIANTS, CorruptionSpec, SceneSpec, generate_scene, run_benchmark, write_report

log = logging.getLogger("cobsplat")


def _read_json(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise ValidationError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True, allow_nan=True)
        f.write("\n")


def _require_dir(path, what) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ValidationError(f"{what}: {p} is not a directory")
    return p


def _load_config(path, seed: int, defaults: Optional[dict] = None) -> RefineConfig:
    """Config file over ``defaults``; --seed always wins."""
    d = {} if path is None else _read_json(path)
    if "seed" in d and d["seed"] != seed:
        log.warning("config seed %s replaced by --seed %d", d["seed"], seed)
    return RefineConfig.from_json(dict(defaults or {}, **d, seed=seed))


def _scene_defaults(scene_dir: Path) -> dict:
    """Scene kind and position-rate scale of a generated scene, if recorded."""
    p = scene_dir / "scene_spec.json"
    if not p.exists():
        return {}
    spec = SceneSpec.from_json(_read_json(p))
    return {"scene_kind": spec.scene_kind, "spatial_lr_scale": spec.position_lr_scale}


def _save_masks(directory: Path, masks) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(masks):
        write_mask(directory / view_name(i), m)


def _load_mask_dir(directory) -> List[np.ndarray]:
    d = _require_dir(directory, "mask directory")
    paths = sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise ValidationError(f"{d}: no PNG masks")
    return [read_png_mask(p) for p in paths]


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    d = {} if args.spec is None else _read_json(args.spec)
    spec = SceneSpec.from_json(dict(d, seed=args.seed))
    out = Path(args.out)
    scene = generate_scene(spec)
    save_dataset(scene.dataset, out)
    save_ply(scene.cloud, out / "scene.ply")
    _write_json(out / "scene_spec.json", spec.to_json())
    _write_json(out / "membership.json", scene.membership.tolist())
    print(f"scene: {len(scene.cloud)} Gaussians, {len(scene.dataset)} views -> {out}")
    return 0


def cmd_refine(args) -> int:
    scene_dir = _require_dir(args.scene, "--scene")
    ds = load_dataset(scene_dir)
    ply = Path(args.ply) if args.ply else scene_dir / "scene.ply"
    cloud = load_ply(ply)
    cfg = _load_config(args.config, args.seed, _scene_defaults(scene_dir))
    n_train = len(train_views(len(ds), cfg.holdout_every))
    cfg = cfg.resolved(n_train)
    objects = [int(v) for v in args.objects.split(",")] if args.objects else sorted(ds.mask_sets)[:1]
    if not objects:
        raise ValidationError(f"{scene_dir}: dataset has no mask sets")
    out = Path(args.out) if args.out else scene_dir / "refined"
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", {"refine": cfg.to_json(), "objects": objects, "seed": args.seed,
                                      "scene": str(scene_dir), "ply": str(ply)})
    rlog = RefineLog()
    if len(objects) == 1:
        refined, _, removed = refine_object(cloud, ds, objects[0], cfg, rlog)
        refined.obj_ids[:] = 0
        seg = segment(refined, cfg, ds.cameras, ds.mask_sets[objects[0]])
        refined.obj_ids[seg.foreground_indices] = objects[0]
        seg_metrics = seg.metrics
        masks = seg.masks
    else:
        refined, _ = multi_object_refine(cloud, ds, objects, cfg, rlog)
        removed = np.asarray(rlog.removals, dtype=np.int64)
        seg_metrics, masks = {}, []
    save_ply(refined, out / "refined.ply")
    views_tr = train_views(len(ds), cfg.holdout_every)
    views_ho = heldout_views(len(ds), cfg.holdout_every)
    metrics = {
        "total_iters": cfg.total_iters,
        "iterations": rlog.iterations,
        "phases": rlog.phases,
        "final_mask_phase": rlog.final_mask_phase,
        "split_counts": [p["n_split"] for p in rlog.phases if "n_split" in p],
        "n_removed": int(len(removed)),
        "removed": [int(i) for i in removed],
        "conflicts": rlog.conflicts,
        "n_gaussians": int(len(refined)),
        "train_psnr": mean_psnr(refined, ds, views_tr, cfg.background),
        "heldout_psnr": mean_psnr(refined, ds, views_ho, cfg.background) if len(views_ho) else None,
        "segmentation": seg_metrics,
    }
    _write_json(out / "metrics.json", metrics)
    (out / "renders").mkdir(exist_ok=True)
    for i, cam in enumerate(ds.cameras):
        write_png_rgb(out / "renders" / view_name(i), np.clip(render(refined, cam, background=cfg.background).color, 0, 1))
    if masks:
        _save_masks(out / "masks", masks)
    print(f"refined: {len(refined)} Gaussians, {len(rlog.iterations)} iterations -> {out}")
    if seg_metrics:
        print(f"mIoU {seg_metrics['mIoU']:.4f} mAcc {seg_metrics['mAcc']:.4f}")
    return 0


def cmd_segment(args) -> int:
    cloud = load_ply(args.ply)
    cams = load_cameras(args.cameras)
    cfg = RefineConfig(seg_threshold=args.threshold, seed=args.seed)
    gt = _load_mask_dir(args.gt) if args.gt else None
    if gt is not None and len(gt) != len(cams):
        raise ValidationError(f"--gt: {len(gt)} masks for {len(cams)} cameras")
    seg = segment(cloud, cfg, cams, gt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_ply(cloud.subset(seg.foreground_indices), out / "foreground.ply")
    save_ply(cloud.subset(seg.background_indices), out / "background.ply")
    _save_masks(out / "masks", seg.masks)
    _write_json(out / "config.json", {"threshold": args.threshold, "ply": str(args.ply),
                                      "cameras": str(args.cameras), "seed": args.seed})
    _write_json(out / "metrics.json", seg.metrics)
    print(json.dumps(seg.metrics, sort_keys=True))
    return 0


def cmd_render(args) -> int:
    cloud = load_ply(args.ply)
    cams = load_cameras(args.cameras)
    try:
        bg = tuple(float(v) for v in args.background.split(","))
    except ValueError:
        bg = ()
    if len(bg) != 3:
        raise ValidationError("--background: expected r,g,b")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, cam in enumerate(cams):
        fb = render(cloud, cam, background=bg)
        write_png_rgb(out / view_name(i), np.clip(fb.color, 0, 1))
        if args.mask:
            write_png_gray(out / f"mask_{view_name(i)}", fb.mask)
    _write_json(out / "config.json", {"ply": str(args.ply), "cameras": str(args.cameras),
                                      "background": list(bg), "seed": args.seed})
    print(f"rendered {len(cams)} views -> {out}")
    return 0


def cmd_eval(args) -> int:
    pred, gt = _load_mask_dir(args.pred), _load_mask_dir(args.gt)
    if len(pred) != len(gt):
        raise ValidationError(f"{len(pred)} predicted masks for {len(gt)} ground-truth masks")
    res = {"mIoU": mean_iou(pred, gt), "mAcc": mean_acc(pred, gt),
           "per_view_iou": [iou(p, g) for p, g in zip(pred, gt)]}
    if args.out:
        _write_json(args.out, res)
    print(f"mIoU {res['mIoU']:.4f} mAcc {res['mAcc']:.4f}")
    return 0


def cmd_bench(args) -> int:
    spec = SceneSpec.from_json(dict({} if args.spec is None else _read_json(args.spec), seed=args.seed))
    cfg = _load_config(args.config, args.seed)
    cspec = None
    if args.corruption:
        cspec = CorruptionSpec.from_json(_read_json(args.corruption))
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    report = run_benchmark(spec, cspec, cfg, variants)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "report.json", out / "report.csv", out / "timing.json")
    _write_json(out / "config.json", {"scene": spec.to_json(), "refine": report["config"],
                                      "corruption": report["corruption"], "variants": variants,
                                      "seed": args.seed})
    for row in report["variants"]:
        print(f"{row['variant']:<18} mIoU {row['mIoU']:.4f} heldout PSNR {row['heldout_psnr']:.2f} "
              f"N {row['n_gaussians']}")
    return 0


def cmd_maskgen_sim(args) -> int:
    script = MockScript.load(args.script)
    res = script.run()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    masks = [res.segments.get(i, np.zeros((script.height, script.width), bool)) for i in range(script.n_frames)]
    _save_masks(out / "masks", masks)
    _write_json(out / "summary.json", {"valid": res.valid_vector, **res.coverage_summary(),
                                       "touches": [res.touches[i] for i in range(script.n_frames)]})
    _write_json(out / "config.json", {"script": str(args.script), "seed": args.seed,
                                      **dataclasses.asdict(script.config)})
    if args.scene:
        scene_dir = _require_dir(args.scene, "--scene")
        ds = masks_to_dataset(res.segments, load_dataset(scene_dir), args.object)
        save_dataset(ds, scene_dir)
    print("valid " + "".join(str(v) for v in res.valid_vector))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness (default 0)")
    common.add_argument("--threads", type=int, default=None,
                        help="rasterizer thread cap (default: COBSPLAT_THREADS or all cores)")
    common.add_argument("--deterministic", action="store_true", help="fixed-order reductions")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="cobsplat", description="Boundary-aware 3D Gaussian segmentation")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", parents=[common], help="generate a synthetic scene directory")
    s.add_argument("--spec", help="SceneSpec JSON (default: standard benchmark scene)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("refine", parents=[common], help="refine a scene for one or more objects")
    s.add_argument("--scene", required=True, help="scene directory (cameras, images, masks)")
    s.add_argument("--ply", help="input cloud (default: <scene>/scene.ply)")
    s.add_argument("--config", help="RefineConfig JSON")
    s.add_argument("--objects", help="comma-separated object ids (default: lowest mask id)")
    s.add_argument("--out", help="output directory (default: <scene>/refined)")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("segment", parents=[common], help="split a refined cloud by mask label")
    s.add_argument("--ply", required=True)
    s.add_argument("--cameras", required=True)
    s.add_argument("--gt", help="ground-truth mask directory for metrics")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("render", parents=[common], help="render a cloud from cameras")
    s.add_argument("--ply", required=True)
    s.add_argument("--cameras", required=True)
    s.add_argument("--background", default="0,0,0")
    s.add_argument("--mask", action="store_true", help="also write mask-label renders")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", parents=[common], help="score predicted masks against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", help="write metrics JSON here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", parents=[common], help="run the ablation variant grid")
    s.add_argument("--spec", help="SceneSpec JSON")
    s.add_argument("--config", help="RefineConfig JSON")
    s.add_argument("--corruption", help="CorruptionSpec JSON for the training masks")
    s.add_argument("--variants", help=f"comma-separated subset of {','.join(VARIANTS)}")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("maskgen-sim", parents=[common], help="run two-stage mask generation on a mock script")
    s.add_argument("--script", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--scene", help="install the generated masks into this scene directory")
    s.add_argument("--object", type=int, default=1)
    s.set_defaults(func=cmd_maskgen_sim)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        set_threads(args.threads)
        set_deterministic(args.deterministic)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
