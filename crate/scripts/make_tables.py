"""Regenerate the spectral tables under data/.

CIE 1931 2-degree colour-matching functions and the D65 illuminant come from
colour-science. Fused-silica indices use the Malitson Sellmeier fit. Every
other material table is a coarse anchor-point placeholder meant to be replaced
with measured data.
"""
import json
import math
import pathlib

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent.parent / "data"
WL = np.arange(380, 801, 10)


def write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.6g}" if i else f"{v:g}" for i, v in enumerate(row)) + "\n")


def anchors(points):
    xs = [p[0] for p in points]
    n = np.interp(WL, xs, [p[1] for p in points])
    k = np.interp(WL, xs, [p[2] for p in points])
    return list(zip(WL, n, k))


def sio2(wl_nm):
    x = (wl_nm / 1000.0) ** 2
    n2 = 1 + 0.6961663 * x / (x - 0.0684043**2) + 0.4079426 * x / (x - 0.1162414**2) \
        + 0.8974794 * x / (x - 9.896161**2)
    return math.sqrt(n2)


def main():
    import colour

    cmfs = colour.MSDS_CMFS["CIE 1931 2 Degree Standard Observer"]
    d65 = colour.SDS_ILLUMINANTS["D65"]
    grid = np.arange(380, 781, 5)
    write_csv(ROOT / "cie1931_2deg.csv", "wavelength_nm,xbar,ybar,zbar",
              [(w, *(max(float(v), 0.0) for v in cmfs[w])) for w in grid])
    write_csv(ROOT / "illuminant_d65.csv", "wavelength_nm,power", [(w, d65[w]) for w in grid])
    write_csv(ROOT / "illuminant_e.csv", "wavelength_nm,power", [(w, 100.0) for w in grid])

    mats = ROOT / "materials"
    write_csv(mats / "air.csv", "wavelength_nm,n,k", [(w, 1.0, 0.0) for w in WL])
    write_csv(mats / "sio2.csv", "wavelength_nm,n,k", [(w, sio2(w), 0.0) for w in WL])
    tables = {
        "si": [(380, 6.06, 0.60), (400, 5.57, 0.387), (450, 4.67, 0.133), (500, 4.30, 0.073),
               (550, 4.08, 0.041), (600, 3.94, 0.025), (650, 3.85, 0.016), (700, 3.78, 0.011),
               (800, 3.69, 0.006)],
        "graphene": [(380, 2.6, 1.3), (800, 2.6, 1.3)],
        "hbn": [(380, 2.24, 0.0), (500, 2.19, 0.0), (700, 2.15, 0.0), (800, 2.14, 0.0)],
        "mos2": [(380, 3.9, 2.4), (420, 4.4, 2.3), (450, 5.0, 1.9), (500, 5.2, 1.2),
                 (550, 5.0, 1.0), (600, 5.2, 1.1), (620, 5.6, 0.9), (650, 5.3, 1.0),
                 (660, 5.4, 0.7), (700, 5.1, 0.4), (800, 4.6, 0.2)],
        "ws2": [(380, 3.2, 1.9), (450, 4.0, 1.4), (520, 4.2, 0.9), (580, 4.3, 0.7),
                (620, 5.0, 1.3), (650, 4.6, 0.5), (700, 4.3, 0.2), (800, 4.0, 0.05)],
        "wse2": [(380, 3.6, 2.6), (450, 4.5, 1.9), (500, 4.3, 1.5), (550, 4.3, 1.4),
                 (600, 4.6, 1.0), (680, 4.2, 0.5), (750, 5.0, 1.0), (800, 4.5, 0.3)],
        "mose2": [(380, 3.9, 2.5), (450, 4.5, 1.8), (550, 4.7, 1.5), (650, 5.0, 0.9),
                  (700, 5.1, 1.0), (790, 5.2, 0.8), (800, 5.1, 0.7)],
        "wte2": [(380, 3.0, 2.8), (500, 3.6, 2.6), (600, 4.0, 2.4), (700, 4.4, 2.3),
                 (800, 4.6, 2.2)],
    }
    for name, pts in tables.items():
        write_csv(mats / f"{name}.csv", "wavelength_nm,n,k", anchors(pts))
    mose2 = anchors(tables["mose2"])
    wse2 = anchors(tables["wse2"])
    write_csv(mats / "mowse2.csv", "wavelength_nm,n,k",
              [(a[0], (a[1] + b[1]) / 2, (a[2] + b[2]) / 2) for a, b in zip(mose2, wse2)])

    catalog = {
        "graphene": {"monolayer_nm": 0.335},
        "hbn": {"monolayer_nm": 0.333},
        "mos2": {"monolayer_nm": 0.65},
        "mose2": {"monolayer_nm": 0.65},
        "mowse2": {"monolayer_nm": 0.65},
        "ws2": {"monolayer_nm": 0.62},
        "wse2": {"monolayer_nm": 0.65},
        "wte2": {"monolayer_nm": 0.70},
    }
    (mats / "catalog.json").write_text(json.dumps(catalog, indent=2) + "\n")

    srgb = [3.2404542, -1.5371385, -0.4985314,
            -0.9692660, 1.8760108, 0.0415560,
            0.0556434, -0.2040259, 1.0572252]
    for name, illum, white in [("srgb_d65", "illuminant_d65.csv", [0.95047, 1.0, 1.08883]),
                               ("srgb_e", "illuminant_e.csv", [1.0, 1.0, 1.0])]:
        doc = {"cmf_path": "cie1931_2deg.csv", "illuminant_path": illum,
               "xyz_to_rgb": srgb, "white_point": white}
        (ROOT / f"color_system_{name}.json").write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    main()
