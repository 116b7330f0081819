"""Temporal fusion: build background and grid references from start-up frames.

An N-frame initialization sequence is split into M consecutive segments.
Each segment's per-channel mean becomes one background reference; the mean
over all N frames of the blurred-then-binarized grid mask becomes a
per-channel probability map, whose majority vote (>= 0.5) is the binary
grid reference used by contact detection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frames import (
    BinaryMask,
    ChannelPlane,
    Frame,
    binarize,
    gaussian_blur,
    load_frame,
    round_u8,
    save_frame,
    save_mask,
    split_channels,
)

log = logging.getLogger("gridtac.fusion")

CHANNELS = ("r", "g", "b")


@dataclass(frozen=True)
class FusionParams:
    n_frames: int = 30
    m_backgrounds: int = 3
    tau_b: int = 35
    blur_sigma: float = 1.0

    def __post_init__(self):
        if not 1 <= self.m_backgrounds <= self.n_frames:
            raise ValueError(
                f"m_backgrounds must be in [1, n_frames], got {self.m_backgrounds}"
            )
        if self.n_frames % self.m_backgrounds != 0:
            raise ValueError(
                f"n_frames ({self.n_frames}) must divide evenly into "
                f"{self.m_backgrounds} segments"
            )
        if not 0 <= self.tau_b <= 255:
            raise ValueError(f"tau_b must be in [0, 255], got {self.tau_b}")


@dataclass(frozen=True)
class ReferenceSet:
    """Immutable output of temporal fusion; shared read-only downstream."""

    backgrounds: tuple[Frame, ...]
    grid_prob: dict[str, np.ndarray] = field(repr=False)  # channel -> float in [0,1]
    grid_ref: dict[str, BinaryMask] = field(repr=False)
    params: FusionParams = field(default_factory=FusionParams)

    @property
    def height(self) -> int:
        return self.backgrounds[0].height

    @property
    def width(self) -> int:
        return self.backgrounds[0].width

    def background_planes(self, channel: str) -> list[ChannelPlane]:
        idx = CHANNELS.index(channel)
        return [
            ChannelPlane(np.ascontiguousarray(b.data[:, :, idx]), channel)
            for b in self.backgrounds
        ]


def build_references(frames: list[Frame], params: FusionParams | None = None) -> ReferenceSet:
    """Fuse an initialization sequence into background and grid references.

    Backgrounds are plain per-pixel channel means over each consecutive
    segment of length N/M. The grid probability map averages the binarized
    blurred grid masks over all N frames; it is invariant to frame order.
    """
    params = params or FusionParams()
    if len(frames) != params.n_frames:
        raise ValueError(f"expected {params.n_frames} frames, got {len(frames)}")
    shape = frames[0].data.shape
    for i, f in enumerate(frames):
        if f.data.shape != shape:
            raise ValueError(
                f"frame {i} has shape {f.data.shape}, expected {shape}"
            )

    seg = params.n_frames // params.m_backgrounds
    backgrounds = []
    for j in range(params.m_backgrounds):
        stack = np.stack(
            [f.data.astype(np.int64) for f in frames[j * seg : (j + 1) * seg]]
        )
        mean = stack.sum(axis=0) / float(seg)
        backgrounds.append(Frame(round_u8(mean)))

    h, w = shape[0], shape[1]
    mask_sums = {c: np.zeros((h, w), dtype=np.int64) for c in CHANNELS}
    for f in frames:
        for plane in split_channels(f):
            mask = binarize(gaussian_blur(plane, params.blur_sigma), params.tau_b)
            mask_sums[plane.channel_tag] += mask.data

    grid_prob = {c: mask_sums[c] / float(params.n_frames) for c in CHANNELS}
    grid_ref = {
        c: BinaryMask((grid_prob[c] >= 0.5).astype(np.uint8)) for c in CHANNELS
    }
    for c in CHANNELS:
        log.debug("grid_ref[%s] on-pixels: %d", c, grid_ref[c].on_count())

    return ReferenceSet(
        backgrounds=tuple(backgrounds),
        grid_prob=grid_prob,
        grid_ref=grid_ref,
        params=params,
    )


# ---------------------------------------------------------------------------
# persistence: background_<j>.png, grid_prob_<c>.pgm (16-bit), grid_ref_<c>.png,
# params.txt manifest

_PROB_SCALE = 65535


def _write_pgm16(path: Path, values: np.ndarray) -> None:
    """16-bit big-endian binary PGM (maxval 65535)."""
    h, w = values.shape
    header = f"P5\n{w} {h}\n{_PROB_SCALE}\n".encode("ascii")
    path.write_bytes(header + values.astype(">u2").tobytes())


def _read_pgm16(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != _PROB_SCALE:
        raise ValueError(f"{path}: expected 16-bit maxval {_PROB_SCALE}, got {maxval}")
    data = np.frombuffer(raw[pos : pos + 2 * w * h], dtype=">u2")
    return data.reshape(h, w).astype(np.uint16)


def save_references(refs: ReferenceSet, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for j, bg in enumerate(refs.backgrounds, start=1):
        save_frame(bg, out / f"background_{j}.png")
    for c in CHANNELS:
        quantized = np.floor(refs.grid_prob[c] * _PROB_SCALE + 0.5).astype(np.uint16)
        _write_pgm16(out / f"grid_prob_{c}.pgm", quantized)
        save_mask(refs.grid_ref[c], out / f"grid_ref_{c}.png")
    p = refs.params
    manifest = (
        f"n_frames={p.n_frames}\n"
        f"m_backgrounds={p.m_backgrounds}\n"
        f"tau_b={p.tau_b}\n"
        f"blur_sigma={p.blur_sigma}\n"
    )
    (out / "params.txt").write_text(manifest)


def load_references(ref_dir) -> ReferenceSet:
    ref = Path(ref_dir)
    manifest_path = ref / "params.txt"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no reference manifest at {manifest_path}")
    kv = {}
    for line in manifest_path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    params = FusionParams(
        n_frames=int(kv["n_frames"]),
        m_backgrounds=int(kv["m_backgrounds"]),
        tau_b=int(kv["tau_b"]),
        blur_sigma=float(kv.get("blur_sigma", "1.0")),
    )
    backgrounds = tuple(
        load_frame(ref / f"background_{j}.png")
        for j in range(1, params.m_backgrounds + 1)
    )
    grid_prob = {}
    grid_ref = {}
    for c in CHANNELS:
        quantized = _read_pgm16(ref / f"grid_prob_{c}.pgm")
        grid_prob[c] = quantized.astype(np.float64) / _PROB_SCALE
        grid_ref[c] = BinaryMask((grid_prob[c] >= 0.5).astype(np.uint8))
    return ReferenceSet(
        backgrounds=backgrounds, grid_prob=grid_prob, grid_ref=grid_ref, params=params
    )
