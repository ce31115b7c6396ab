"""Writes data/samples/sample_micrograph.png: a 448x448 synthetic micrograph of
oxide-on-silicon with a warm camera tint, vignetting, sensor noise and three
pre-existing thick flakes. Deterministic."""

import numpy as np
from PIL import Image, ImageDraw

from oracle import DATA, color


def encode(lin):
    lin = np.clip(lin, 0.0, 1.0)
    s = np.where(lin <= 0.0031308, 12.92 * lin, 1.055 * lin ** (1 / 2.4) - 0.055)
    return np.round(s * 255).astype(np.uint8)


def main():
    rng = np.random.default_rng(2024)
    size = 448
    tint = np.array([1.18, 1.0, 0.86])
    _, bare, _ = color(["air", "sio2", "si"], [180.0])
    _, thick, _ = color(["air", "mos2", "sio2", "si"], [13.0, 180.0])
    _, thicker, _ = color(["air", "wse2", "sio2", "si"], [40.0, 180.0])

    y, x = np.mgrid[0:size, 0:size] / (size - 1) - 0.5
    vignette = 1.0 - 0.12 * (x**2 + y**2)
    img = np.empty((size, size, 3))
    img[:] = bare * tint
    img *= vignette[..., None]

    label = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(label)
    draw.polygon([(60, 70), (120, 50), (150, 95), (110, 140), (70, 120)], fill=1)
    draw.polygon([(300, 280), (380, 300), (370, 360), (320, 390), (290, 340)], fill=2)
    draw.polygon([(330, 60), (360, 62), (362, 110), (335, 100)], fill=1)
    lab = np.asarray(label)
    img[lab == 1] = thick * tint
    img[lab == 2] = thicker * tint

    img += rng.normal(0.0, 0.004, img.shape)
    out = DATA / "samples"
    out.mkdir(exist_ok=True)
    Image.fromarray(encode(img), "RGB").save(out / "sample_micrograph.png")


if __name__ == "__main__":
    main()
