"""Scene-directory layout: cameras.json, images/*.png, masks/<obj_id>/*.png."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List

import numpy as np
from PIL import Image

from .scene import Camera, Dataset, ValidationError


def read_png_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def read_png_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) >= 128).astype(np.uint8)


def write_png_rgb(path, img: np.ndarray) -> None:
    data = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, "RGB").save(path)


def write_png_gray(path, values: np.ndarray) -> None:
    """Write a [0, 1] map as 8-bit grayscale (round(255·v))."""
    data = np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, "L").save(path)


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, "L").save(path)


def view_name(i: int) -> str:
    return f"{i:04d}.png"


def load_cameras(path) -> List[Camera]:
    with open(path) as f:
        recs = json.load(f)
    if not isinstance(recs, list):
        raise ValidationError(f"{path}: expected a JSON array of camera records")
    cams = []
    for i, rec in enumerate(recs):
        try:
            cams.append(Camera.from_json(rec))
        except KeyError as exc:
            raise ValidationError(f"view {i}: camera record missing field {exc}") from None
        except ValidationError as exc:
            raise ValidationError(f"view {i}: {exc}") from None
    return cams


def save_cameras(cameras, path) -> None:
    with open(path, "w") as f:
        json.dump([c.to_json() for c in cameras], f, indent=1)


def _sorted_pngs(d: Path) -> List[Path]:
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")


def load_dataset(directory) -> Dataset:
    root = Path(directory)
    cams = load_cameras(root / "cameras.json")
    img_paths = _sorted_pngs(root / "images")
    if len(img_paths) != len(cams):
        raise ValidationError(f"{len(img_paths)} images for {len(cams)} cameras")
    images = []
    for i, (cam, p) in enumerate(zip(cams, img_paths)):
        img = read_png_rgb(p)
        if img.shape[:2] != (cam.height, cam.width):
            raise ValidationError(
                f"view {i}: image {img.shape[0]}×{img.shape[1]} vs camera {cam.height}×{cam.width}")
        images.append(img)

    mask_sets: Dict[int, List[np.ndarray]] = {}
    coverage: Dict[int, np.ndarray] = {}
    mdir = root / "masks"
    if mdir.is_dir():
        for sub in sorted(mdir.iterdir(), key=lambda p: p.name):
            if not sub.is_dir():
                continue
            try:
                oid = int(sub.name)
            except ValueError:
                raise ValidationError(f"masks/{sub.name}: object directory must be an integer id") from None
            paths = _sorted_pngs(sub)
            if len(paths) != len(cams):
                raise ValidationError(f"object {oid}: {len(paths)} masks for {len(cams)} views")
            masks = []
            for i, (cam, p) in enumerate(zip(cams, paths)):
                m = read_png_mask(p)
                if m.shape != (cam.height, cam.width):
                    raise ValidationError(
                        f"view {i}: mask {m.shape[0]}×{m.shape[1]} vs camera {cam.height}×{cam.width}")
                masks.append(m)
            mask_sets[oid] = masks
            cov_path = sub / "coverage.json"
            if cov_path.exists():
                with open(cov_path) as f:
                    coverage[oid] = np.asarray(json.load(f), dtype=bool)
    return Dataset(cams, images, mask_sets, coverage)


def save_dataset(ds: Dataset, directory) -> None:
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    save_cameras(ds.cameras, root / "cameras.json")
    for i, img in enumerate(ds.images):
        write_png_rgb(root / "images" / view_name(i), img)
    for oid, masks in ds.mask_sets.items():
        sub = root / "masks" / str(oid)
        sub.mkdir(parents=True, exist_ok=True)
        for i, m in enumerate(masks):
            write_mask(sub / view_name(i), m)
        cov = ds.mask_coverage.get(oid)
        if cov is not None and not np.all(cov):
            with open(sub / "coverage.json", "w") as f:
                json.dump([bool(c) for c in cov], f)
