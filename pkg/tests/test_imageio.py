import numpy as np
import pytest

from bitforge.bitcore import PlanarImage
from bitforge.imageio import read_png, read_sidecar, sidecar_path, write_png
from conftest import random_image


@pytest.mark.parametrize("depth", [1, 4, 8, 10, 16])
def test_png_round_trip_is_bit_exact(tmp_path, rng, depth):
    img = random_image(rng, depth, 13, 17)
    path = write_png(tmp_path / "img.png", img)
    assert read_sidecar(sidecar_path(path)) == {"bit_depth": str(depth)}
    assert read_png(path) == img


def test_channel_order_is_rgb(tmp_path):
    samples = np.zeros((3, 2, 2), dtype=np.uint16)
    samples[0] = 65535
    write_png(tmp_path / "red.png", PlanarImage(samples, 16))
    import cv2

    raw = cv2.imread(str(tmp_path / "red.png"), cv2.IMREAD_UNCHANGED)
    assert raw.dtype == np.uint16
    assert raw[0, 0].tolist() == [0, 0, 65535]


def test_missing_sidecar_uses_container_depth(tmp_path, rng):
    img = random_image(rng, 8, 4, 4)
    path = write_png(tmp_path / "a.png", img)
    sidecar_path(path).unlink()
    assert read_png(path).bit_depth == 8
    assert read_png(path, bit_depth=8) == img


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_png(tmp_path / "nope.png")
