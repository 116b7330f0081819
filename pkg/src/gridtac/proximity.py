"""Proximity classification from background-filtered channel statistics.

Each frame is background-filtered per channel by clamped subtraction
against every background reference, folded with a per-pixel min (the
cumulative intersection). Entropy of the merged residual and pairwise
correlation between the residual channels separate three states:

  Normal       low entropy: nothing beyond the references in view
  Approaching  high entropy, decorrelated channels: a real object casts
               channel-specific shadows/reflections under the three lights
  Noise        high entropy, strongly correlated channels: external light
               hits all channels with the same spatial pattern
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import (
    ChannelPlane,
    Frame,
    clamped_subtract,
    correlation,
    entropy,
    intersect_min,
    merge_channels,
    split_channels,
    to_gray,
)
from .fusion import ReferenceSet

NORMAL = "Normal"
APPROACHING = "Approaching"
NOISE = "Noise"


@dataclass(frozen=True)
class ProximityParams:
    tau_e: float = 0.5
    tau_c: float = 0.2

    def __post_init__(self):
        # both thresholds scale the proximity score, so zero is excluded
        if self.tau_e <= 0:
            raise ValueError(f"tau_e must be > 0, got {self.tau_e}")
        if not 0.0 < self.tau_c <= 1.0:
            raise ValueError(f"tau_c must be in (0, 1], got {self.tau_c}")


@dataclass(frozen=True)
class ProximityRecord:
    frame_index: int
    e_total: float
    c_rg: float
    c_rb: float
    c_gb: float
    c_total: float
    state: str


def filter_background(
    f: Frame, refs: ReferenceSet
) -> tuple[ChannelPlane, ChannelPlane, ChannelPlane, Frame]:
    """Cumulative per-channel background removal.

    For each channel, subtract (clamped at 0) every background reference
    and fold the deltas with per-pixel min, starting from the all-255
    identity. Only structure brighter than every reference survives.
    """
    if (f.height, f.width) != (refs.height, refs.width):
        raise ValueError(
            f"frame {f.data.shape[:2]} does not match references "
            f"{(refs.height, refs.width)}"
        )
    filtered = []
    for plane in split_channels(f):
        acc = ChannelPlane(
            np.full((f.height, f.width), 255, dtype=np.uint8), plane.channel_tag
        )
        for bg_plane in refs.background_planes(plane.channel_tag):
            delta = clamped_subtract(plane, bg_plane)
            acc = intersect_min(acc, delta)
        filtered.append(acc)
    r, g, b = filtered
    return r, g, b, merge_channels(r, g, b)


def decide_proximity_state(e_total: float, c_total: float,
                           params: ProximityParams | None = None) -> str:
    """The three-way decision rule on (entropy, correlation).

    Normal on low entropy regardless of correlation; otherwise correlated
    channels mean external light, decorrelated mean a real object.
    """
    params = params or ProximityParams()
    if e_total < params.tau_e:
        return NORMAL
    if c_total < params.tau_c:
        return APPROACHING
    return NOISE


def classify_proximity(
    f: Frame, refs: ReferenceSet, params: ProximityParams | None = None,
    frame_index: int = 0,
) -> ProximityRecord:
    """Classify one frame as Normal, Approaching, or Noise."""
    params = params or ProximityParams()
    r, g, b, intersection = filter_background(f, refs)
    e_total = entropy(to_gray(intersection))
    c_rg = correlation(r, g)
    c_rb = correlation(r, b)
    c_gb = correlation(g, b)
    c_total = (c_rg + c_rb + c_gb) / 3.0
    state = decide_proximity_state(e_total, c_total, params)
    return ProximityRecord(
        frame_index=frame_index,
        e_total=e_total,
        c_rg=c_rg,
        c_rb=c_rb,
        c_gb=c_gb,
        c_total=c_total,
        state=state,
    )


def proximity_score(rec: ProximityRecord, params: ProximityParams | None = None) -> float:
    """Continuous confidence in [0,1] that an object is approaching.

    Zero unless the state is Approaching; otherwise an equal-weight blend
    of how far entropy sits above its threshold and how far correlation
    sits below its threshold, each saturating at one threshold-width.
    """
    params = params or ProximityParams()
    if rec.state != APPROACHING:
        return 0.0
    e_term = min(1.0, (rec.e_total - params.tau_e) / params.tau_e)
    c_term = min(1.0, (params.tau_c - rec.c_total) / params.tau_c)
    return max(0.0, min(1.0, 0.5 * e_term + 0.5 * c_term))
