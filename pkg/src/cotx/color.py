"""Lightness transfer between photographs in CIELAB space.

Images are reduced to superpixel means, a map is fitted between the two
point clouds and then applied to every pixel. Three modes are offered:
``ot1d`` (monotone rearrangement of L alone), ``cot`` (L transported
conditionally on (a, b), so colors are kept) and ``ot3d`` (plain transport of
the whole (L, a, b) vector).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from skimage.segmentation import slic
from skimage.util import regular_grid

from .core import ConditionedDataset, DataError, DimensionError, evaluate_map, write_csv
from .minimax import MinimaxConfig, fit, fit_unconditional
from .transport1d import MonotoneMap, apply_monotone, quantile_map

MODES = ("ot1d", "cot", "ot3d")
DEFAULT_SUPERPIXELS = 1000
DEFAULT_COMPACTNESS = 10.0
DEFAULT_SLIC_ITERS = 10

# linear sRGB -> XYZ, D65
RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)
WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
_EPS = (6.0 / 29.0) ** 3
_KAPPA = 3.0 * (6.0 / 29.0) ** 2


@dataclass(frozen=True, eq=False)
class ImageRGB:
    """8-bit image; ``pixels`` is a height x width x 3 uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] < 1 or p.shape[1] < 1:
            raise DimensionError(f"RGB image must be height x width x 3, got {p.shape}")
        if p.dtype != np.uint8:
            if np.any((p < 0) | (p > 255)) or np.any(p != np.round(p)):
                raise DataError("RGB values must be integers in [0, 255]")
            p = p.astype(np.uint8)
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class ImageLab:
    """Per-pixel (L, a, b) as a height x width x 3 float array."""

    lab: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.lab, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3:
            raise DimensionError(f"Lab image must be height x width x 3, got {p.shape}")
        object.__setattr__(self, "lab", p)

    @property
    def height(self) -> int:
        return self.lab.shape[0]

    @property
    def width(self) -> int:
        return self.lab.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.lab.shape[:2]


@dataclass(frozen=True, eq=False)
class SuperpixelSet:
    labels: np.ndarray  # height x width, ids 0..S-1
    means: np.ndarray  # S x 5: L, a, b, row, col
    sizes: np.ndarray

    @property
    def count(self) -> int:
        return self.sizes.size


# ---------------------------------------------------------------- color conversion


def _f(t):
    return np.where(t > _EPS, np.cbrt(t), t / _KAPPA + 4.0 / 29.0)


def _f_inv(s):
    return np.where(s > 6.0 / 29.0, s ** 3, _KAPPA * (s - 4.0 / 29.0))


def rgb_to_lab_array(rgb) -> np.ndarray:
    """(..., 3) 8-bit RGB values to (..., 3) Lab."""
    v = np.asarray(rgb, dtype=np.float64) / 255.0
    lin = np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)
    xyz = lin @ RGB_TO_XYZ.T / WHITE_D65
    fx, fy, fz = (_f(xyz[..., k]) for k in range(3))
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_to_rgb_array(lab) -> np.ndarray:
    """(..., 3) Lab to 8-bit RGB; out-of-gamut colors are clamped."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_f_inv(fx), _f_inv(fy), _f_inv(fz)], axis=-1) * WHITE_D65
    lin = np.clip(xyz @ XYZ_TO_RGB.T, 0.0, 1.0)
    v = np.where(lin <= 0.0031308, 12.92 * lin, 1.055 * lin ** (1.0 / 2.4) - 0.055)
    return np.rint(np.clip(v, 0.0, 1.0) * 255.0).astype(np.uint8)


def srgb_to_lab(img: ImageRGB) -> ImageLab:
    return ImageLab(rgb_to_lab_array(img.pixels))


def lab_to_srgb(img: ImageLab) -> ImageRGB:
    return ImageRGB(lab_to_rgb_array(img.lab))


# ---------------------------------------------------------------- superpixels


def _cluster_means(values: np.ndarray, labels: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Per-cluster means of the columns of ``values`` (n x c).

    Each cluster is measured relative to its first member, so a constant
    cluster returns its value exactly rather than a rounded sum over n.
    """
    count = sizes.size
    first = np.full(count, -1)
    order = np.arange(labels.size)[::-1]
    first[labels[order]] = order
    ref = values[first]
    out = np.empty((count, values.shape[1]))
    for k in range(values.shape[1]):
        out[:, k] = ref[:, k] + np.bincount(labels, values[:, k] - ref[labels, k], count) / sizes
    return out


def _seed_request(h: int, w: int, S: int) -> int:
    """Smallest n_segments whose regular seed grid holds at least S seeds.

    slic places seeds with step sqrt(pixels / n) in both axes and rounds,
    which can leave fewer seeds than asked for (one seed for S = 2 on a square).
    """
    def seeds(n):
        return math.prod(len(range(*sl.indices(d))) for sl, d in zip(regular_grid((1, h, w), n), (1, h, w)))
    n = S
    while n < h * w and seeds(n) < S:
        n += 1
    return n


def superpixels(img: ImageLab, S: int = DEFAULT_SUPERPIXELS, compactness: float = DEFAULT_COMPACTNESS,
                iters: int = DEFAULT_SLIC_ITERS) -> SuperpixelSet:
    """SLIC clustering in (L, a, b, row, col) with grid seeds and merged orphans."""
    h, w = img.shape
    if S < 1:
        raise DataError("superpixel count must be at least 1")
    if S > h * w:
        raise DataError(f"{S} superpixels requested for {h * w} pixels")
    if not compactness > 0:
        raise DataError("compactness must be positive")
    raw = slic(img.lab, n_segments=_seed_request(h, w, int(S)), compactness=float(compactness), max_num_iter=int(iters),
               convert2lab=False, enforce_connectivity=True, start_label=0, channel_axis=-1)
    _, labels = np.unique(raw.reshape(-1), return_inverse=True)
    labels = labels.reshape(-1)
    sizes = np.bincount(labels).astype(np.float64)
    rows, cols = np.divmod(np.arange(h * w), w)
    feats = np.column_stack([img.lab.reshape(-1, 3), rows, cols]).astype(np.float64)
    means = _cluster_means(feats, labels, sizes)
    return SuperpixelSet(labels.reshape(h, w), means, sizes.astype(np.int64))


# ---------------------------------------------------------------- detail restoration


def detail_filter(mapped: ImageLab, original: ImageLab, sp: SuperpixelSet) -> ImageLab:
    """Put the original within-superpixel lightness detail back on a mapped image.

    Each pixel gets the superpixel mean of the mapped L plus its own deviation
    from the original superpixel mean. a and b come from ``mapped``.
    """
    if mapped.shape != original.shape or sp.labels.shape != original.shape:
        raise DimensionError(f"image shapes differ: {mapped.shape}, {original.shape}, {sp.labels.shape}")
    labels = sp.labels.reshape(-1)
    sizes = sp.sizes.astype(np.float64)
    L_orig = original.lab[..., 0].reshape(-1)
    L_map = mapped.lab[..., 0].reshape(-1)
    mean_map = _cluster_means(L_map[:, None], labels, sizes)[:, 0][labels]
    mean_orig = _cluster_means(L_orig[:, None], labels, sizes)[:, 0][labels]
    detail = L_orig - mean_orig
    # no detail: the mapped mean itself; otherwise shift the original pixel
    L_out = np.where(detail == 0.0, mean_map, L_orig + (mean_map - mean_orig))
    out = mapped.lab.copy()
    out[..., 0] = L_out.reshape(original.shape)
    return ImageLab(out)


# ---------------------------------------------------------------- transfer


@dataclass
class TransferResult:
    lab: ImageLab
    source_lab: ImageLab
    source_superpixels: SuperpixelSet
    reference_superpixels: SuperpixelSet
    mapped_lab: ImageLab  # per-pixel map output before detail restoration
    lightness_map: MonotoneMap | None = None
    tmap: object = None
    diagnostics: object = None
    extra: dict = field(default_factory=dict)

    @property
    def rgb(self) -> ImageRGB:
        return lab_to_srgb(self.lab)


def _unique_colors(img: ImageRGB):
    """Distinct RGB triples and the index of each pixel's triple."""
    flat = img.pixels.reshape(-1, 3)
    key = (flat[:, 0].astype(np.int64) << 16) | (flat[:, 1].astype(np.int64) << 8) | flat[:, 2]
    keys, inverse = np.unique(key, return_inverse=True)
    colors = np.column_stack([keys >> 16, (keys >> 8) & 255, keys & 255])
    return colors, inverse.reshape(-1)


def transfer_lightness_lab(src: ImageRGB, ref: ImageRGB, mode: str = "cot", cfg: MinimaxConfig = MinimaxConfig(),
                           S: int = DEFAULT_SUPERPIXELS, compactness: float = DEFAULT_COMPACTNESS,
                           iters: int = DEFAULT_SLIC_ITERS) -> TransferResult:
    """Full pipeline up to, but not including, the conversion back to RGB."""
    if mode not in MODES:
        raise DataError(f"unknown mode {mode!r}; expected one of {MODES}")
    src_lab, ref_lab = srgb_to_lab(src), srgb_to_lab(ref)
    sp_src = superpixels(src_lab, min(S, src.height * src.width), compactness, iters)
    sp_ref = superpixels(ref_lab, min(S, ref.height * ref.width), compactness, iters)
    ms, mr = sp_src.means, sp_ref.means

    # the map only sees a pixel's color, so evaluate it once per distinct color
    colors, inverse = _unique_colors(src)
    col_lab = rgb_to_lab_array(colors)
    out = src_lab.lab.reshape(-1, 3).copy()
    result = TransferResult(src_lab, src_lab, sp_src, sp_ref, src_lab)
    if mode == "ot1d":
        qmap = quantile_map(ms[:, 0], mr[:, 0])
        out[:, 0] = apply_monotone(qmap, col_lab[:, 0])[inverse]
        result.lightness_map = qmap
    elif mode == "cot":
        source = ConditionedDataset(ms[:, :1], ms[:, 1:3])
        target = ConditionedDataset(mr[:, :1], mr[:, 1:3])
        tmap, diag = fit(source, target, "gaussflow", cfg)
        out[:, 0] = evaluate_map(tmap, col_lab[:, :1], col_lab[:, 1:3])[:, 0][inverse]
        result.tmap, result.diagnostics = tmap, diag
    else:
        tmap, diag = fit_unconditional(ConditionedDataset(ms[:, :3]), ConditionedDataset(mr[:, :3]),
                                       "gaussflow", cfg)
        out[:] = evaluate_map(tmap, col_lab)[inverse]
        result.tmap, result.diagnostics = tmap, diag
    mapped = ImageLab(out.reshape(src_lab.lab.shape))
    result.mapped_lab = mapped
    result.lab = detail_filter(mapped, src_lab, sp_src)
    return result


def transfer_lightness(src: ImageRGB, ref: ImageRGB, mode: str = "cot", cfg: MinimaxConfig = MinimaxConfig(),
                       S: int = DEFAULT_SUPERPIXELS, compactness: float = DEFAULT_COMPACTNESS,
                       iters: int = DEFAULT_SLIC_ITERS) -> ImageRGB:
    return transfer_lightness_lab(src, ref, mode, cfg, S, compactness, iters).rgb


def write_lab_points(path, result: TransferResult) -> None:
    """Superpixel means of both images as CSV rows (image, L, a, b)."""
    rows = [("source", *map(float, r[:3])) for r in result.source_superpixels.means]
    rows += [("reference", *map(float, r[:3])) for r in result.reference_superpixels.means]
    write_csv(path, ["image", "L", "a", "b"], rows)


# ---------------------------------------------------------------- files


def read_image(path) -> ImageRGB:
    """PNG or binary PPM; alpha is dropped, grayscale expanded."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    try:
        with Image.open(path) as im:
            return ImageRGB(np.asarray(im.convert("RGB"), dtype=np.uint8))
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read image ({exc})") from None


def write_image(path, img: ImageRGB) -> None:
    path = Path(path)
    fmt = {".png": "PNG", ".ppm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise DataError(f"{path}: output must end in .png or .ppm")
    Image.fromarray(img.pixels, "RGB").save(path, format=fmt)
