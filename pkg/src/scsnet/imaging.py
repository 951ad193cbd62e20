"""Colorspace conversion, LR/HR pair synthesis, and synthetic training data.

Images are channel-first float32 arrays. ``RgbImage`` holds sRGB in [0,1];
``LabImage`` holds network-normalized CIE Lab: L/100 in [0,1] and a,b/110
clamped to [-1,1], so every channel the network sees is O(1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DataError
from .seeding import derive_rng

# sRGB <-> XYZ (D65, 2 degree observer)
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_WHITE = np.array([0.95047, 1.0, 1.08883])

AB_SCALE = 110.0


@dataclass
class RgbImage:
    """[3,H,W] sRGB, clamped to [0,1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise DataError(f"RgbImage expects [3,H,W], got {arr.shape}")
        self.data = np.clip(arr, 0.0, 1.0)

    @property
    def size(self):
        return self.data.shape[1], self.data.shape[2]


@dataclass
class LabImage:
    """[3,H,W] normalized Lab: L in [0,1], a/b in [-1,1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise DataError(f"LabImage expects [3,H,W], got {arr.shape}")
        arr = arr.copy()
        arr[0] = np.clip(arr[0], 0.0, 1.0)
        arr[1:] = np.clip(arr[1:], -1.0, 1.0)
        self.data = arr

    @property
    def size(self):
        return self.data.shape[1], self.data.shape[2]

    def l_channel(self):
        """Luminance view, [1,H,W]."""
        return self.data[:1]


# ---------------------------------------------------------------------------
# colorspace
# ---------------------------------------------------------------------------


def _lab_f(t):
    delta = 6.0 / 29.0
    return np.where(t > delta**3, np.cbrt(t), t / (3 * delta**2) + 4.0 / 29.0)


def _lab_f_inv(f):
    delta = 6.0 / 29.0
    return np.where(f > delta, f**3, 3 * delta**2 * (f - 4.0 / 29.0))


def rgb_to_lab(img: RgbImage) -> LabImage:
    """sRGB -> XYZ (D65) -> CIE Lab, normalized to network ranges."""
    rgb = img.data.astype(np.float64)
    lin = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    xyz = np.einsum("ij,jhw->ihw", _RGB_TO_XYZ, lin)
    f = _lab_f(xyz / _WHITE[:, None, None])
    l_star = 116.0 * f[1] - 16.0
    a_star = 500.0 * (f[0] - f[1])
    b_star = 200.0 * (f[1] - f[2])
    return LabImage(np.stack([l_star / 100.0, a_star / AB_SCALE, b_star / AB_SCALE]))


def lab_to_rgb(img: LabImage) -> RgbImage:
    """Inverse conversion; out-of-gamut values clamp to [0,1]."""
    lab = img.data.astype(np.float64)
    l_star = lab[0] * 100.0
    a_star = lab[1] * AB_SCALE
    b_star = lab[2] * AB_SCALE
    fy = (l_star + 16.0) / 116.0
    fx = fy + a_star / 500.0
    fz = fy - b_star / 200.0
    xyz = np.stack([_lab_f_inv(fx), _lab_f_inv(fy), _lab_f_inv(fz)]) * _WHITE[:, None, None]
    lin = np.einsum("ij,jhw->ihw", _XYZ_TO_RGB, xyz)
    lin = np.clip(lin, 0.0, None)
    srgb = np.where(lin > 0.0031308, 1.055 * lin ** (1.0 / 2.4) - 0.055, 12.92 * lin)
    return RgbImage(srgb)


# ---------------------------------------------------------------------------
# bicubic resampling
# ---------------------------------------------------------------------------


def _cubic_kernel(u):
    """Catmull-Rom style cubic, a = -0.5."""
    a = -0.5
    u = np.abs(u)
    u2, u3 = u * u, u * u * u
    near = (a + 2) * u3 - (a + 3) * u2 + 1
    far = a * u3 - 5 * a * u2 + 8 * a * u - 4 * a
    return np.where(u <= 1, near, np.where(u < 2, far, 0.0))


def _bicubic_weights(n_in, n_out):
    """Dense [n_out, n_in] resampling matrix, antialiased when shrinking.

    Output sample i reads input coordinate (i + 0.5) * n_in/n_out - 0.5.
    When shrinking, the kernel is stretched by the shrink factor so it
    averages over the footprint instead of aliasing. Rows are normalized
    and out-of-range taps clamp to the edge pixels.
    """
    scale = n_out / n_in
    kscale = min(scale, 1.0)
    support = 2.0 / kscale
    centers = (np.arange(n_out) + 0.5) / scale - 0.5
    left = np.floor(centers - support).astype(int) + 1
    ntaps = int(math.ceil(support * 2)) + 2
    taps = left[:, None] + np.arange(ntaps)[None, :]
    weights = _cubic_kernel((centers[:, None] - taps) * kscale) * kscale
    weights /= weights.sum(axis=1, keepdims=True)
    taps = np.clip(taps, 0, n_in - 1)
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        np.add.at(mat[i], taps[i], weights[i])
    return mat


def resize_bicubic(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resize of [C,H,W]; returns float64, unclamped."""
    c, h, w = arr.shape
    mh = _bicubic_weights(h, out_h)
    mw = _bicubic_weights(w, out_w)
    return np.matmul(np.matmul(mh, arr.astype(np.float64)), mw.T)


def bicubic_downsample(img: RgbImage, factor: float) -> RgbImage:
    """Shrink by ``factor`` (> 0); output dims are floor(H/factor)."""
    h, w = img.size
    out_h, out_w = int(h / factor), int(w / factor)
    if out_h < 1 or out_w < 1:
        raise DataError(f"downsample factor {factor} empties a {h}x{w} image")
    return RgbImage(resize_bicubic(img.data, out_h, out_w))


# ---------------------------------------------------------------------------
# training pairs
# ---------------------------------------------------------------------------


@dataclass
class PairSample:
    """One LR/HR training sample at magnification ``scale``."""

    source: np.ndarray  # [1,hs,ws] luminance of the downsampled image
    reference: LabImage | None
    target: LabImage
    scale: float


@dataclass
class TrainBatch:
    """Stacked pair samples; ``reference`` present iff the mode is referential."""

    source: np.ndarray  # [B,1,hs,ws]
    reference: np.ndarray | None  # [B,3,hs,ws]
    target: np.ndarray  # [B,3,ht,wt]
    scale: float


def make_pair(hr: RgbImage, p: float, with_reference: bool = False, seed=0) -> PairSample:
    """Build (LR gray source, optional reference, HR Lab target).

    The HR image is cropped (top-left) to floor(floor(H/p) * p) so target
    dims stay consistent with the magnification for fractional p. The
    reference, when requested, is the flip/elastic-augmented Lab rendering
    of the downsampled image itself.
    """
    if p <= 1:
        raise DataError(f"magnification must exceed 1, got {p}")
    h, w = hr.size
    hs, ws = int(h / p), int(w / p)
    if hs < 1 or ws < 1:
        raise DataError(f"scale {p} empties a {h}x{w} image")
    ht, wt = int(hs * p), int(ws * p)
    cropped = RgbImage(hr.data[:, :ht, :wt])
    target = rgb_to_lab(cropped)
    lr_lab = rgb_to_lab(RgbImage(resize_bicubic(cropped.data, hs, ws)))
    reference = augment_reference(lr_lab, seed) if with_reference else None
    return PairSample(lr_lab.l_channel().copy(), reference, target, p)


def stack_pairs(pairs) -> TrainBatch:
    refs = [s.reference for s in pairs]
    with_ref = refs[0] is not None
    if any((r is not None) != with_ref for r in refs):
        raise DataError("mixed referential/automatic samples in one batch")
    return TrainBatch(
        source=np.stack([s.source for s in pairs]),
        reference=np.stack([r.data for r in refs]) if with_ref else None,
        target=np.stack([s.target.data for s in pairs]),
        scale=pairs[0].scale,
    )


# ---------------------------------------------------------------------------
# synthetic shapes dataset
# ---------------------------------------------------------------------------

MIN_CHANNEL_STD = 0.05


def _paint(img, alpha, color):
    img += alpha[None] * (color[:, None, None] - img)


def _draw_disk(img, rng, yy, xx, size):
    cy, cx = rng.uniform(0, size, 2)
    radius = rng.uniform(0.10, 0.35) * size
    color = rng.uniform(0, 1, 3)
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    _paint(img, np.clip(radius - dist + 0.5, 0.0, 1.0), color)


def _draw_rect(img, rng, yy, xx, size):
    y0, y1 = np.sort(rng.uniform(0, size, 2))
    x0, x1 = np.sort(rng.uniform(0, size, 2))
    if y1 - y0 < 0.1 * size:
        y1 = y0 + 0.1 * size
    if x1 - x0 < 0.1 * size:
        x1 = x0 + 0.1 * size
    color = rng.uniform(0, 1, 3)
    inside = np.minimum(np.minimum(yy - y0, y1 - yy), np.minimum(xx - x0, x1 - xx))
    _paint(img, np.clip(inside + 0.5, 0.0, 1.0), color)


def _draw_gradient(img, rng, yy, xx, size):
    theta = rng.uniform(0, 2 * np.pi)
    c0, c1 = rng.uniform(0, 1, (2, 3))
    opacity = rng.uniform(0.3, 0.7)
    t = (np.cos(theta) * xx + np.sin(theta) * yy) / size
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    ramp = c0[:, None, None] + t[None] * (c1 - c0)[:, None, None]
    img += opacity * (ramp - img)


def synth_dataset(seed, n, size):
    """``n`` seeded [3,size,size] images of anti-aliased colored primitives.

    Each image layers 2-6 disks/rectangles/gradients over a colored
    background. Images whose overall RGB standard deviation falls below
    MIN_CHANNEL_STD are rejected and redrawn, so every emitted image has
    usable color spread.
    """
    if n < 1:
        raise DataError(f"dataset size must be >= 1, got {n}")
    rng = derive_rng(seed, "synth")
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    painters = (_draw_disk, _draw_rect, _draw_gradient)
    images = []
    while len(images) < n:
        img = np.ones((3, size, size)) * rng.uniform(0, 1, 3)[:, None, None]
        for _ in range(int(rng.integers(2, 7))):
            painters[int(rng.integers(0, 3))](img, rng, yy, xx, size)
        img = np.clip(img, 0.0, 1.0)
        if img.std() >= MIN_CHANNEL_STD:
            images.append(RgbImage(img))
    return images


# ---------------------------------------------------------------------------
# reference augmentation
# ---------------------------------------------------------------------------

ELASTIC_ALPHA = 8.0  # displacement amplitude in px at 64-px scale
ELASTIC_SIGMA = 4.0  # smoothing radius in px at 64-px scale
ELASTIC_BASE = 64.0


def _bilinear_gather(chans, ys, xs):
    h, w = chans.shape[1:]
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)
    fx = np.clip(xs - x0, 0.0, 1.0)
    top = chans[:, y0, x0] * (1 - fx) + chans[:, y0, x1] * fx
    bot = chans[:, y1, x0] * (1 - fx) + chans[:, y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _aug_rng(seed):
    parts = (seed,) if isinstance(seed, int) else tuple(seed)
    return derive_rng(*parts, "augref")


def elastic_field(h, w, seed, alpha=ELASTIC_ALPHA, sigma=ELASTIC_SIGMA, rng=None):
    """(dy, dx) displacement fields in pixels for an h x w image.

    Uniform noise in [-1,1] per axis, Gaussian-smoothed with width ``sigma``
    and scaled to ``alpha`` pixels; both are given at 64-px scale and
    stretch proportionally with image size.
    """
    rng = rng if rng is not None else _aug_rng(seed)
    sy, sx = h / ELASTIC_BASE, w / ELASTIC_BASE
    field = rng.uniform(-1.0, 1.0, (2, h, w))
    dy = gaussian_filter(field[0], sigma=(sigma * sy, sigma * sx), mode="reflect") * alpha * sy
    dx = gaussian_filter(field[1], sigma=(sigma * sy, sigma * sx), mode="reflect") * alpha * sx
    return dy, dx


def augment_reference(
    img: LabImage,
    seed,
    alpha=ELASTIC_ALPHA,
    sigma=ELASTIC_SIGMA,
    flip_prob=0.5,
) -> LabImage:
    """Random horizontal flip followed by a seeded elastic distortion.

    The warp samples bilinearly with edge clamping; see ``elastic_field``
    for the displacement model.
    """
    rng = _aug_rng(seed)
    data = img.data.astype(np.float64)
    h, w = data.shape[1:]
    if rng.random() < flip_prob:
        data = data[:, :, ::-1]
    dy, dx = elastic_field(h, w, seed, alpha=alpha, sigma=sigma, rng=rng)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    warped = _bilinear_gather(data, np.clip(yy + dy, 0, h - 1), np.clip(xx + dx, 0, w - 1))
    return LabImage(warped)


# ---------------------------------------------------------------------------
# file formats: PNG (via Pillow), PPM P6 fallback, manifests
# ---------------------------------------------------------------------------


def save_rgb(path, img: RgbImage):
    path = Path(path)
    raw = np.clip(np.round(img.data * 255.0), 0, 255).astype(np.uint8)
    hwc = raw.transpose(1, 2, 0)
    if path.suffix.lower() == ".ppm":
        h, w = img.size
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(hwc.tobytes())
        return
    from PIL import Image

    Image.fromarray(hwc, mode="RGB").save(path, format="PNG")


def load_rgb(path) -> RgbImage:
    path = Path(path)
    if not path.exists():
        raise DataError(f"image not found: {path}")
    if path.suffix.lower() == ".ppm":
        return _load_ppm(path)
    from PIL import Image

    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except Exception as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return RgbImage(arr.transpose(2, 0, 1))


def _load_ppm(path) -> RgbImage:
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if fields[0] != b"P6":
        raise DataError(f"{path}: not a P6 PPM file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PPM supported, maxval={maxval}")
    pos += 1
    raw = np.frombuffer(blob, dtype=np.uint8, count=h * w * 3, offset=pos)
    return RgbImage(raw.reshape(h, w, 3).astype(np.float32).transpose(2, 0, 1) / 255.0)


MANIFEST_NAME = "manifest.txt"


def write_manifest(directory, names):
    directory = Path(directory)
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        for name in names:
            fh.write(f"{name}\n")


def read_manifest(directory):
    """File paths listed in a dataset directory's manifest."""
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    if not manifest.exists():
        raise DataError(f"manifest not found: {manifest}")
    with open(manifest, encoding="utf-8") as fh:
        names = [line.strip() for line in fh if line.strip()]
    return [directory / name for name in names]
