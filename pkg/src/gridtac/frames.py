"""Core image types and pixel-level primitives.

All detection algorithms are built from the operations here: channel
split/merge, clamped subtraction, per-pixel min intersection, separable
Gaussian blur, binarization, histogram entropy, Pearson correlation and
windowed SSIM. Everything is a pure function over immutable-by-convention
numpy arrays.

Numeric conventions (fixed so golden files stay bit-exact):
  * rounding is always round-half-away-from-zero on nonnegative values
  * entropy uses base-2 logs over the 256-bin intensity histogram
  * correlation is computed from exact integer sums (n, Sx, Sy, Sxx, Syy,
    Sxy) so the result does not depend on summation order
  * blur accumulates taps in ascending offset order, row pass then column
    pass, with a single rounding at the end
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

CHANNEL_TAGS = ("r", "g", "b", "gray")


class DimensionMismatch(ValueError):
    """Two planes/frames that must share dimensions do not."""


def round_u8(values: np.ndarray) -> np.ndarray:
    """Round nonnegative floats half-away-from-zero and clip to uint8."""
    return np.clip(np.floor(values + 0.5), 0.0, 255.0).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class Frame:
    """An H x W x 3 image of 8-bit intensities, channel order R,G,B."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"frame data must be HxWx3, got shape {self.data.shape}")
        if self.data.dtype != np.uint8:
            raise ValueError(f"frame data must be uint8, got {self.data.dtype}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class ChannelPlane:
    """A single H x W channel of 8-bit intensities."""

    data: np.ndarray
    channel_tag: str

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"plane data must be HxW, got shape {self.data.shape}")
        if self.data.dtype != np.uint8:
            raise ValueError(f"plane data must be uint8, got {self.data.dtype}")
        if self.channel_tag not in CHANNEL_TAGS:
            raise ValueError(f"unknown channel tag {self.channel_tag!r}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """An H x W mask of {0, 1} values."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"mask data must be HxW, got shape {self.data.shape}")
        if self.data.dtype != np.uint8:
            raise ValueError(f"mask data must be uint8, got {self.data.dtype}")
        if self.data.size and self.data.max() > 1:
            raise ValueError("mask values must be 0 or 1")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def on_count(self) -> int:
        return int(np.count_nonzero(self.data))


def _require_same_shape(a, b):
    if a.data.shape != b.data.shape:
        raise DimensionMismatch(f"shape {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# channel decomposition


def split_channels(f: Frame) -> tuple[ChannelPlane, ChannelPlane, ChannelPlane]:
    """Split a frame into its R, G, B planes."""
    return (
        ChannelPlane(np.ascontiguousarray(f.data[:, :, 0]), "r"),
        ChannelPlane(np.ascontiguousarray(f.data[:, :, 1]), "g"),
        ChannelPlane(np.ascontiguousarray(f.data[:, :, 2]), "b"),
    )


def merge_channels(r: ChannelPlane, g: ChannelPlane, b: ChannelPlane) -> Frame:
    """Interleave R, G, B planes back into a frame (inverse of split)."""
    if (r.channel_tag, g.channel_tag, b.channel_tag) != ("r", "g", "b"):
        raise ValueError("merge_channels expects planes tagged r, g, b in order")
    _require_same_shape(r, g)
    _require_same_shape(r, b)
    return Frame(np.stack([r.data, g.data, b.data], axis=2))


def to_gray(f: Frame) -> ChannelPlane:
    """Unweighted channel mean, rounded half-away-from-zero."""
    total = f.data.astype(np.int64).sum(axis=2)
    gray = np.floor(total / 3.0 + 0.5)
    return ChannelPlane(gray.astype(np.uint8), "gray")


# ---------------------------------------------------------------------------
# arithmetic primitives


def clamped_subtract(a: ChannelPlane, b: ChannelPlane) -> ChannelPlane:
    """Per-pixel max(a - b, 0)."""
    _require_same_shape(a, b)
    diff = a.data.astype(np.int16) - b.data.astype(np.int16)
    return ChannelPlane(np.maximum(diff, 0).astype(np.uint8), a.channel_tag)


def intersect_min(a: ChannelPlane, b: ChannelPlane) -> ChannelPlane:
    """Per-pixel minimum; on {0,255} planes this is exactly logical AND."""
    _require_same_shape(a, b)
    return ChannelPlane(np.minimum(a.data, b.data), a.channel_tag)


def binarize(p: ChannelPlane, tau: int) -> BinaryMask:
    """Threshold a plane: pixel -> 1 iff intensity >= tau (inclusive)."""
    if not 0 <= tau <= 255:
        raise ValueError(f"binarize threshold must be in [0, 255], got {tau}")
    return BinaryMask((p.data >= tau).astype(np.uint8))


# ---------------------------------------------------------------------------
# Gaussian blur


def gaussian_kernel(sigma: float) -> list[float]:
    """Normalized 1-D Gaussian taps for radius ceil(3*sigma).

    Built with math.exp and a sequential ascending sum so any transcription
    of the same formula reproduces the kernel bit-for-bit.
    """
    if sigma <= 0:
        raise ValueError(f"blur sigma must be > 0, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    raw = [math.exp(-(i * i) / (2.0 * sigma * sigma)) for i in range(-radius, radius + 1)]
    total = 0.0
    for w in raw:
        total += w
    return [w / total for w in raw]


def _convolve_rows(values: np.ndarray, kernel: list[float]) -> np.ndarray:
    radius = len(kernel) // 2
    h, w = values.shape
    padded = np.pad(values, ((0, 0), (radius, radius)), mode="edge")
    acc = np.zeros((h, w), dtype=np.float64)
    for t, weight in enumerate(kernel):
        acc += weight * padded[:, t : t + w]
    return acc


def gaussian_blur(p: ChannelPlane, sigma: float = 1.0) -> ChannelPlane:
    """Separable Gaussian blur with clamp-to-border edges.

    Row pass then column pass in float64; rounded to uint8 once at the end.
    Tap accumulation order is fixed (ascending offset) so results are
    reproducible to the bit.
    """
    kernel = gaussian_kernel(sigma)
    rows = _convolve_rows(p.data.astype(np.float64), kernel)
    cols = _convolve_rows(rows.T, kernel).T
    return ChannelPlane(round_u8(cols), p.channel_tag)


# ---------------------------------------------------------------------------
# statistics


def entropy(p: ChannelPlane) -> float:
    """Shannon entropy (bits) of the 256-bin intensity histogram.

    Defined on gray planes only; convert with to_gray first. Summation runs
    over ascending bin index so the float result is order-stable.
    """
    if p.channel_tag != "gray":
        raise ValueError("entropy is defined on gray planes; apply to_gray first")
    counts = np.bincount(p.data.ravel(), minlength=256)
    n = p.data.size
    h = 0.0
    for k in range(256):
        c = int(counts[k])
        if c:
            q = c / n
            h -= q * math.log2(q)
    return h


def correlation(a: ChannelPlane, b: ChannelPlane) -> float:
    """Pearson correlation over the flattened pixel arrays.

    Computed from exact integer sufficient statistics, so the value is
    independent of summation order. Zero variance on either side yields 0.
    """
    _require_same_shape(a, b)
    x = a.data.astype(np.int64).ravel()
    y = b.data.astype(np.int64).ravel()
    n = x.size
    sx = int(x.sum())
    sy = int(y.sum())
    sxx = int((x * x).sum())
    syy = int((y * y).sum())
    sxy = int((x * y).sum())
    var_x = n * sxx - sx * sx
    var_y = n * syy - sy * sy
    if var_x == 0 or var_y == 0:
        return 0.0
    return (n * sxy - sx * sy) / math.sqrt(var_x * var_y)


_SSIM_C1 = (0.01 * 255.0) ** 2
_SSIM_C2 = (0.03 * 255.0) ** 2
_SSIM_WINDOW = 8


def _window_means(values: np.ndarray, w: int) -> np.ndarray:
    """Mean of every w x w window fully inside the array (stride 1)."""
    s = np.cumsum(np.cumsum(values, axis=0), axis=1)
    s = np.pad(s, ((1, 0), (1, 0)))
    total = s[w:, w:] - s[:-w, w:] - s[w:, :-w] + s[:-w, :-w]
    return total / (w * w)


def ssim(a: ChannelPlane, b: ChannelPlane) -> float:
    """Mean local SSIM over 8x8 sliding windows.

    Population statistics per window with the usual stabilizers
    C1=(0.01*255)^2, C2=(0.03*255)^2. Equals 1.0 exactly when a == b.
    """
    _require_same_shape(a, b)
    if a.height < _SSIM_WINDOW or a.width < _SSIM_WINDOW:
        raise ValueError(f"ssim needs at least {_SSIM_WINDOW}x{_SSIM_WINDOW} input")
    x = a.data.astype(np.float64)
    y = b.data.astype(np.float64)
    w = _SSIM_WINDOW
    mu_x = _window_means(x, w)
    mu_y = _window_means(y, w)
    xx = _window_means(x * x, w)
    yy = _window_means(y * y, w)
    xy = _window_means(x * y, w)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# PNG I/O


def load_frame(path) -> Frame:
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return Frame(np.asarray(rgb, dtype=np.uint8))


def save_frame(f: Frame, path) -> None:
    Image.fromarray(f.data, mode="RGB").save(path, format="PNG")


def load_plane(path, channel_tag: str = "gray") -> ChannelPlane:
    with Image.open(path) as img:
        gray = img.convert("L")
        return ChannelPlane(np.asarray(gray, dtype=np.uint8), channel_tag)


def save_plane(p: ChannelPlane, path) -> None:
    Image.fromarray(p.data, mode="L").save(path, format="PNG")


def save_mask(m: BinaryMask, path) -> None:
    Image.fromarray(m.data * np.uint8(255), mode="L").save(path, format="PNG")


def load_mask(path) -> BinaryMask:
    with Image.open(path) as img:
        gray = np.asarray(img.convert("L"), dtype=np.uint8)
        return BinaryMask((gray >= 128).astype(np.uint8))
