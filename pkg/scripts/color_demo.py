"""Lightness transfer in all three modes.

Uses two images from disk when --src and --ref are given. Otherwise it
generates a smooth source image and a reference with the same chroma whose
lightness is a known function of (a, b), so the ideal output is the reference
itself and every mode gets a per-pixel lightness error. Writes the outputs,
the superpixel point cloud and per-mode channel statistics.
"""

import json
import time
from dataclasses import dataclass

import numpy as np

from cotx import color
from cotx.minimax import MinimaxConfig

from _config import parse, save


@dataclass
class Settings:
    """Lightness transfer demo."""
    src: str = ""
    ref: str = ""
    size: int = 256
    superpixels: int = 1000
    seed: int = 0
    out_dir: str = "results/color"


def generated(size, seed, gain):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    rgb = np.stack([128 + 100 * gain * np.sin(6 * xx + seed), 128 + 90 * gain * np.cos(5 * yy),
                    100 + 80 * np.sin(4 * (xx + yy))], -1) + rng.normal(0, 8, (size, size, 3))
    return color.ImageRGB(np.clip(np.rint(rgb), 0, 255).astype(np.uint8))


def relit(src):
    lab = color.srgb_to_lab(src).lab.copy()
    a, b = lab[..., 1], lab[..., 2]
    lab[..., 0] = np.clip(lab[..., 0] + 12 * np.tanh(a / 30) - 6 * np.tanh(b / 30), 0, 100)
    return color.lab_to_srgb(color.ImageLab(lab))


def main(s: Settings):
    out = save(s, s.out_dir)
    if s.src and s.ref:
        src, ref = color.read_image(s.src), color.read_image(s.ref)
    else:
        src = generated(s.size, s.seed, 1.0)
        ref = relit(src)
        color.write_image(out / "src.png", src)
        color.write_image(out / "ref.png", ref)
    stats = {}
    for mode in color.MODES:
        t0 = time.perf_counter()
        res = color.transfer_lightness_lab(src, ref, mode, MinimaxConfig(seed=s.seed), s.superpixels)
        color.write_image(out / f"{mode}.png", res.rgb)
        if mode == "cot":
            color.write_lab_points(out / "lab_points.csv", res)
        lab, ref_lab = res.lab.lab, color.srgb_to_lab(ref).lab
        stats[mode] = {"seconds": time.perf_counter() - t0,
                       "L_mean": float(lab[..., 0].mean()), "L_sd": float(lab[..., 0].std()),
                       "ref_L_mean": float(ref_lab[..., 0].mean()), "ref_L_sd": float(ref_lab[..., 0].std()),
                       "ab_changed": bool(not np.array_equal(lab[..., 1:], res.source_lab.lab[..., 1:]))}
        if not (s.src and s.ref):
            stats[mode]["L_rms_vs_ideal"] = float(np.sqrt(np.mean((lab[..., 0] - ref_lab[..., 0]) ** 2)))
        print(mode, json.dumps(stats[mode]))
    (out / "stats.json").write_text(json.dumps(stats, indent=2) + "\n")


if __name__ == "__main__":
    main(parse(Settings))
