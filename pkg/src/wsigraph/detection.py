"""Nuclei detection with an oriented anisotropic Laplacian-of-Gaussian bank.

The bank sweeps `orientations` angles evenly over [0, pi) and `bandwidth`
minor-axis scales log-spaced from sigma_y up to sigma_x (the major axis stays
at sigma_x, so the shapes run from 2:1 elongated to isotropic).  Kernels are
mean-subtracted so a constant image produces zero response.  Responses are
scale-normalized by sigma_x*sigma_minor and summed across the bank; the sign
convention makes dark blobs on a light background produce positive peaks.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.signal import fftconvolve

from .points import PointSet


@dataclass
class GrayImage:
    """Grayscale image, row-major float64 intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 2 or p.size == 0:
            raise ValueError("pixels must be a non-empty 2-D array")
        if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("intensities must be finite and in [0, 1]")
        self.pixels = p

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class GLoGBank:
    """Oriented LoG kernel bank; kernel count = orientations * bandwidth."""

    sigma_x: float
    sigma_y: float
    orientations: int
    bandwidth: int
    kernels: list
    scale_weights: np.ndarray   # sigma_x * minor_sigma per kernel

    @property
    def half_width(self) -> int:
        return (self.kernels[0].shape[0] - 1) // 2

    def pooled_kernel(self) -> np.ndarray:
        """Scale-weighted sum of all kernels (response pooling is linear)."""
        out = np.zeros_like(self.kernels[0])
        for k, w in zip(self.kernels, self.scale_weights):
            out += w * k
        return out


def _anisotropic_log(sigma_major: float, sigma_minor: float, angle: float,
                     half: int) -> np.ndarray:
    """Laplacian of a rotated anisotropic Gaussian on a (2*half+1)^2 grid."""
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    u = np.cos(angle) * xx + np.sin(angle) * yy
    v = -np.sin(angle) * xx + np.cos(angle) * yy
    g = np.exp(-(u * u) / (2 * sigma_major**2) - (v * v) / (2 * sigma_minor**2))
    g /= 2.0 * np.pi * sigma_major * sigma_minor
    lap = g * (
        (u * u) / sigma_major**4 - 1.0 / sigma_major**2
        + (v * v) / sigma_minor**4 - 1.0 / sigma_minor**2
    )
    return lap - lap.mean()    # enforce zero DC on the truncated support


def build_glog_bank(sigma_x: float, sigma_y: float, orientations: int,
                    bandwidth: int) -> GLoGBank:
    """Build the oriented LoG bank for the given kernel parameters."""
    if not (sigma_x >= sigma_y > 0):
        raise ValueError("need sigma_x >= sigma_y > 0")
    if orientations < 1 or bandwidth < 1:
        raise ValueError("orientations and bandwidth must be >= 1")
    half = int(np.ceil(3.0 * max(sigma_x, sigma_y)))
    scales = np.geomspace(sigma_y, sigma_x, bandwidth)
    angles = np.arange(orientations) * (np.pi / orientations)
    kernels = []
    weights = []
    for s in scales:
        for ang in angles:
            kernels.append(_anisotropic_log(sigma_x, float(s), float(ang), half))
            weights.append(sigma_x * float(s))
    return GLoGBank(
        sigma_x=float(sigma_x),
        sigma_y=float(sigma_y),
        orientations=int(orientations),
        bandwidth=int(bandwidth),
        kernels=kernels,
        scale_weights=np.asarray(weights),
    )


def bank_response(img: GrayImage, bank: GLoGBank) -> np.ndarray:
    """Summed scale-normalized bank response (positive at dark blobs).

    Pooling is linear, so the whole bank collapses into one combined kernel
    and a single FFT convolution; the image is reflect-padded to avoid fake
    border maxima.
    """
    half = bank.half_width
    padded = np.pad(img.pixels, half, mode="reflect")
    resp = fftconvolve(padded, bank.pooled_kernel(), mode="same")
    return resp[half:-half, half:-half]


def detect_nuclei(img: GrayImage, bank: GLoGBank,
                  response_threshold: float | None = None,
                  merge_radius: float = 8.0) -> PointSet:
    """Detect nuclei centroids as thresholded regional maxima of the bank response.

    response_threshold defaults to 0.1 * the maximum response of this image;
    a blank image (max response below 1e-6) yields an empty PointSet.  Maxima
    closer than merge_radius are merged, keeping the strongest (ties resolve
    by row, then column).
    """
    resp = bank_response(img, bank)
    if response_threshold is None:
        peak = float(resp.max())
        if peak <= 1e-6:
            return PointSet(np.zeros((0, 2)), img.width, img.height)
        response_threshold = 0.1 * peak
    local_max = maximum_filter(resp, size=3, mode="nearest")
    rows, cols = np.nonzero((resp >= local_max) & (resp > response_threshold))
    if len(rows) == 0:
        return PointSet(np.zeros((0, 2)), img.width, img.height)
    values = resp[rows, cols]
    order = np.lexsort((cols, rows, -values))
    kept: list[tuple[float, float]] = []
    r2 = merge_radius * merge_radius
    for idx in order:
        x, y = float(cols[idx]), float(rows[idx])
        if any((x - kx) ** 2 + (y - ky) ** 2 < r2 for kx, ky in kept):
            continue
        kept.append((x, y))
    return PointSet(np.asarray(kept, dtype=np.float64), img.width, img.height)


# ---------------------------------------------------------------------------
# synthetic rendering (desk-scale stand-in for stained tissue patches)

def render_nuclei_image(points: PointSet, blob_sigma=5.0, amplitude=0.7,
                        background: float = 1.0) -> GrayImage:
    """Render points as dark Gaussian blobs on a light background.

    blob_sigma and amplitude may be scalars or per-point arrays; intensities
    are clipped to [0, 1].
    """
    h, w = int(round(points.patch_height)), int(round(points.patch_width))
    img = np.full((h, w), float(background))
    sigmas = np.broadcast_to(np.asarray(blob_sigma, dtype=np.float64), (len(points),))
    amps = np.broadcast_to(np.asarray(amplitude, dtype=np.float64), (len(points),))
    for (x, y), s, a in zip(points.coords, sigmas, amps):
        r = int(np.ceil(4 * s))
        x0, x1 = max(0, int(x) - r), min(w, int(x) + r + 1)
        y0, y1 = max(0, int(y) - r), min(h, int(y) + r + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        gx = np.arange(x0, x1, dtype=np.float64) - x
        gy = np.arange(y0, y1, dtype=np.float64) - y
        img[y0:y1, x0:x1] -= a * np.exp(
            -(gy[:, None] ** 2 + gx[None, :] ** 2) / (2 * s * s)
        )
    return GrayImage(np.clip(img, 0.0, 1.0))


# ---------------------------------------------------------------------------
# 8-bit binary PGM (P5) I/O

def write_pgm(img: GrayImage, path) -> None:
    data = np.round(img.pixels * 255.0).astype(np.uint8)
    with Path(path).open("wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> GrayImage:
    """Read an 8-bit binary PGM (P5) file."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # header = magic, width, height, maxval; '#' comments allowed between tokens
    tokens = []
    pos = 2
    while len(tokens) < 3:
        m = re.match(rb"(?:\s+|#[^\n]*\n)*(\d+)", raw[pos:])
        if not m:
            raise ValueError(f"{path}: malformed PGM header")
        tokens.append(int(m.group(1)))
        pos += m.end()
    width, height, maxval = tokens
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1    # single whitespace byte after maxval
    if len(raw) - pos < width * height:
        raise ValueError(f"{path}: truncated pixel data")
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=pos)
    return GrayImage(data.reshape(height, width).astype(np.float64) / 255.0)
