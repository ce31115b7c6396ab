"""Independent reference values for the frozen-value tests.

Reflectance uses the Airy recursion (bottom-up effective reflection
coefficient), colour uses a plain Riemann sum over the sampled grid. Only
numpy is needed. Prints one line per value.
"""

import csv
import json
from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parent.parent / "data"


def table(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:]])


def index(name, wl):
    t = table(DATA / "materials" / f"{name}.csv")
    return np.interp(wl, t[:, 0], t[:, 1]) + 1j * np.interp(wl, t[:, 0], t[:, 2])


def airy_r(ns, ds, wl):
    """ns = [incident, layers..., substrate], ds = layer thicknesses."""
    r = (ns[-2] - ns[-1]) / (ns[-2] + ns[-1])
    for j in range(len(ds) - 1, -1, -1):
        phase = np.exp(2j * 2 * np.pi * ns[j + 1] * ds[j] / wl)
        r01 = (ns[j] - ns[j + 1]) / (ns[j] + ns[j + 1])
        r = (r01 + r * phase) / (1 + r01 * r * phase)
    return r


def stack_R(materials, thicknesses, wl):
    ns = [index(m, wl) for m in materials]
    return abs(airy_r(ns, thicknesses, wl)) ** 2


def color(materials, thicknesses, system="color_system_srgb_d65.json"):
    doc = json.loads((DATA / system).read_text())
    wl = np.linspace(400.0, 700.0, 31)
    cmf = table(DATA / doc["cmf_path"])
    ill = table(DATA / doc["illuminant_path"])
    white = np.array(doc["white_point"]) / doc["white_point"][1]
    R = np.array([stack_R(materials, thicknesses, w) for w in wl])
    xyz = np.zeros(3)
    for c in range(3):
        w = np.interp(wl, cmf[:, 0], cmf[:, c + 1]) * np.interp(wl, ill[:, 0], ill[:, 1])
        w = w * white[c] / w.sum()
        xyz[c] = (w * R).sum()
    m = np.array(doc["xyz_to_rgb"]).reshape(3, 3)
    m = m / (m @ white)[:, None]
    rgb = np.clip(m @ xyz, 0.0, 1.0)

    def f(t):
        d = 6 / 29
        return np.cbrt(t) if t > d**3 else t / (3 * d * d) + 4 / 29

    fx, fy, fz = (f(v) for v in np.linalg.inv(m) @ rgb / white)
    lab = (116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz))
    return xyz, rgb, lab


def main():
    bare = (["air", "sio2", "si"], [180.0])
    gr = (["air", "graphene", "sio2", "si"], [0.335, 180.0])
    mos2 = (["air", "mos2", "sio2", "si"], [0.65, 180.0])
    for wl in (400.0, 450.0, 550.0, 633.0, 700.0):
        print(f"R bare {wl:.0f} = {stack_R(*bare, wl):.15e}")
        print(f"R graphene {wl:.0f} = {stack_R(*gr, wl):.15e}")
        print(f"R mos2 {wl:.0f} = {stack_R(*mos2, wl):.15e}")
    for name, s in (("bare", bare), ("graphene", gr), ("mos2", mos2)):
        xyz, rgb, lab = color(*s)
        print(f"{name} xyz = {', '.join(f'{v:.15e}' for v in xyz)}")
        print(f"{name} rgb = {', '.join(f'{v:.15e}' for v in rgb)}")
        print(f"{name} lab = {', '.join(f'{v:.15e}' for v in lab)}")


if __name__ == "__main__":
    main()
