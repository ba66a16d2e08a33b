"""Image and array serialisation for scenes and optimisation runs.

Depth maps are stored KITTI style: 16-bit grayscale PNG with
``depth = value / 256`` metres and 0 meaning "no measurement". The signed
depth residual is offset-encoded into 16 bits as
``round((residual + w/2) / w * 65535)``, so a zero residual is stored as
:data:`RESIDUAL_ZERO_POINT` (32768).
"""

from __future__ import annotations

import csv
import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from PIL import Image

from .field_core import FieldError

DEPTH_SCALE = 256.0
U16_MAX = 65535
RESIDUAL_ZERO_POINT = int(np.round(0.5 * U16_MAX))

SCENE_ARRAYS = ("left", "right", "gt_depth", "gt_disparity", "gt_occlusion")


def write_rgb(path, image: np.ndarray) -> None:
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(img * 255).astype(np.uint8)).save(path)


def read_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_mask(path, mask: np.ndarray) -> None:
    """8-bit grayscale; values in [0, 1] scale to 0..255."""
    m = np.clip(np.asarray(mask, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(m * 255).astype(np.uint8)).save(path)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def _write_u16(path, values: np.ndarray) -> None:
    # a 2-D uint16 array maps to mode "I;16", a 16-bit grayscale PNG
    Image.fromarray(values.astype(np.uint16)).save(path)


def _read_u16(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise FieldError(f"{path}: expected a single-channel 16-bit image")
    return arr.astype(np.float64)


def encode_depth(depth: np.ndarray) -> np.ndarray:
    d = np.asarray(depth, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise FieldError("depth map has non-finite values")
    return np.clip(np.round(d * DEPTH_SCALE), 0, U16_MAX).astype(np.uint16)


def write_depth(path, depth: np.ndarray) -> None:
    _write_u16(path, encode_depth(depth))


def read_depth(path) -> np.ndarray:
    """Depth in metres from a 16-bit PNG (value/256) or a ``.npy`` array."""
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
        if arr.ndim != 2:
            raise FieldError(f"{path}: expected a 2-D depth array, got shape {arr.shape}")
        return arr.astype(np.float64)
    try:
        return _read_u16(path) / DEPTH_SCALE
    except OSError as err:
        raise FieldError(f"cannot read depth file {path}: {err}") from None


def encode_residual(residual: np.ndarray, w: float) -> np.ndarray:
    r = np.asarray(residual, dtype=np.float64)
    return np.clip(np.round((r + 0.5 * w) / w * U16_MAX), 0, U16_MAX).astype(np.uint16)


def decode_residual(codes: np.ndarray, w: float) -> np.ndarray:
    return np.asarray(codes, dtype=np.float64) / U16_MAX * w - 0.5 * w


def write_residual(path, residual: np.ndarray, w: float) -> None:
    _write_u16(path, encode_residual(residual, w))


def read_residual(path, w: float) -> np.ndarray:
    return decode_residual(_read_u16(path), w)


def write_csv(path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_arrays(directory, arrays: dict[str, np.ndarray]) -> None:
    """Lossless float64 copies as ``<name>.npy``.

    Plain ``.npy`` rather than ``.npz`` because zip members carry a timestamp,
    which would make otherwise identical runs differ byte-wise.
    """
    for name, arr in arrays.items():
        np.save(Path(directory) / f"{name}.npy", np.asarray(arr, dtype=np.float64))


def load_scene_arrays(directory) -> dict[str, np.ndarray]:
    arrays = {}
    for name in SCENE_ARRAYS:
        path = Path(directory) / f"{name}.npy"
        try:
            arrays[name] = np.load(path)
        except (OSError, ValueError) as err:
            raise FieldError(f"cannot load scene array {path}: {err}") from None
    return arrays


@contextmanager
def atomic_directory(target):
    """Yield a scratch directory that replaces ``target`` only on success.

    The scratch directory lives next to ``target`` so the final rename stays
    on one filesystem. On any exception it is removed and ``target`` is left
    untouched.
    """
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield scratch
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    if target.exists():
        backup = Path(tempfile.mkdtemp(prefix=f".{target.name}.old.", dir=target.parent))
        os.rename(target, backup / "old")
        os.rename(scratch, target)
        shutil.rmtree(backup, ignore_errors=True)
    else:
        os.rename(scratch, target)
