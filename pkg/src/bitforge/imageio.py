"""PNG reading and writing with a plain-text bit-depth sidecar.

Samples are stored unshifted in an 8- or 16-bit container; the logical depth
lives next to the image in ``<path>.meta`` as ``bit_depth=<b>``.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from bitforge.bitcore import PlanarImage


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def read_sidecar(path) -> dict[str, str]:
    meta = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"malformed sidecar line {line!r} in {path}")
        meta[key.strip()] = value.strip()
    return meta


def write_png(path, img: PlanarImage) -> Path:
    path = Path(path)
    dtype = np.uint8 if img.bit_depth <= 8 else np.uint16
    # cv2 stores channels as BGR
    hwc = np.ascontiguousarray(img.samples.transpose(1, 2, 0)[:, :, ::-1], dtype=dtype)
    if not cv2.imwrite(str(path), hwc):
        raise OSError(f"could not write {path}")
    sidecar_path(path).write_text(f"bit_depth={img.bit_depth}\n")
    return path


def read_png(path, bit_depth: int | None = None) -> PlanarImage:
    """Load an RGB PNG; depth comes from ``bit_depth``, the sidecar, or the container."""
    path = Path(path)
    hwc = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if hwc is None:
        raise FileNotFoundError(f"could not read image {path}")
    if hwc.ndim == 2:
        hwc = np.repeat(hwc[:, :, None], 3, axis=2)
    if hwc.shape[2] == 4:
        hwc = hwc[:, :, :3]
    if bit_depth is None:
        meta = sidecar_path(path)
        if meta.exists():
            bit_depth = int(read_sidecar(meta)["bit_depth"])
        else:
            bit_depth = 8 if hwc.dtype == np.uint8 else 16
    samples = hwc[:, :, ::-1].transpose(2, 0, 1)
    return PlanarImage(samples, bit_depth)
