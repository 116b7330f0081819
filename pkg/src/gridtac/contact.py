"""Contact classification from grid similarity, plus slip and verdict fusion.

Contact presses the inner grid walls against the skin, cutting off their
internally reflected light; the blurred-binarized grid mask of a touched
frame covers fewer reference grid pixels. Per-channel coverage ratio
against the stored grid reference gives a similarity in [0,1]; the mean
falling below tau_g means Touched.

A slip shows up as sudden similarity recovery while an object is held.
The fused verdict combines proximity and contact with noise taking
precedence, so external light can never masquerade as a touch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .frames import Frame, binarize, gaussian_blur, split_channels
from .fusion import CHANNELS, ReferenceSet
from .proximity import APPROACHING, NOISE, ProximityRecord

TOUCHED = "Touched"
UNTOUCHED = "Untouched"

IDLE = "Idle"
OBJECT_NEAR = "ObjectNear"
IN_CONTACT = "InContact"
NOISE_SUPPRESSED = "NoiseSuppressed"


@dataclass(frozen=True)
class ContactParams:
    tau_b: int = 35
    tau_g: float = 0.6
    slip_rise: float = 0.08
    slip_window: int = 3
    blur_sigma: float = 1.0

    def __post_init__(self):
        if not 0 <= self.tau_b <= 255:
            raise ValueError(f"tau_b must be in [0, 255], got {self.tau_b}")
        if not 0.0 < self.tau_g <= 1.0:
            raise ValueError(f"tau_g must be in (0, 1], got {self.tau_g}")
        if self.slip_rise <= 0:
            raise ValueError(f"slip_rise must be > 0, got {self.slip_rise}")
        if self.slip_window < 1:
            raise ValueError(f"slip_window must be >= 1, got {self.slip_window}")
        if self.blur_sigma <= 0:
            raise ValueError(f"blur_sigma must be > 0, got {self.blur_sigma}")


@dataclass(frozen=True)
class ContactRecord:
    frame_index: int
    s_r: float
    s_g: float
    s_b: float
    s_total: float
    state: str


@dataclass(frozen=True)
class FusedState:
    proximity: ProximityRecord
    contact: ContactRecord
    verdict: str


class ReferenceUnusable(ValueError):
    """A grid reference channel has no on-pixels; similarity is undefined."""


def decide_contact_state(s_total: float, params: ContactParams | None = None) -> str:
    """Touched iff mean grid similarity fell below tau_g (boundary excluded)."""
    params = params or ContactParams()
    return TOUCHED if s_total < params.tau_g else UNTOUCHED


def grid_similarity(
    f: Frame, refs: ReferenceSet, params: ContactParams | None = None,
    frame_index: int = 0,
) -> ContactRecord:
    """Per-channel grid coverage ratio against the reference grid mask."""
    params = params or ContactParams()
    if (f.height, f.width) != (refs.height, refs.width):
        raise ValueError(
            f"frame {f.data.shape[:2]} does not match references "
            f"{(refs.height, refs.width)}"
        )
    scores = {}
    for plane in split_channels(f):
        c = plane.channel_tag
        ref_mask = refs.grid_ref[c]
        ref_on = ref_mask.on_count()
        if ref_on == 0:
            raise ReferenceUnusable(f"grid reference channel {c} has no on-pixels")
        current = binarize(gaussian_blur(plane, params.blur_sigma), params.tau_b)
        inter_on = int((ref_mask.data & current.data).sum())
        scores[c] = inter_on / ref_on
    s_total = (scores["r"] + scores["g"] + scores["b"]) / 3.0
    state = decide_contact_state(s_total, params)
    return ContactRecord(
        frame_index=frame_index,
        s_r=scores["r"],
        s_g=scores["g"],
        s_b=scores["b"],
        s_total=s_total,
        state=state,
    )


def detect_slip(
    history: Sequence[ContactRecord],
    params: ContactParams | None = None,
    holding: bool = False,
) -> bool:
    """Slip test on the latest record of an in-order contact history.

    Only meaningful while the controller holds an object (`holding`);
    an empty grip cannot slip. Fires on a Touched -> Untouched flip or on
    a similarity rise of at least slip_rise within the last slip_window
    records.
    """
    params = params or ContactParams()
    if not history:
        raise ValueError("detect_slip needs a nonempty history")
    if not holding:
        return False
    current = history[-1]
    if len(history) >= 2 and history[-2].state == TOUCHED and current.state == UNTOUCHED:
        return True
    window = history[-params.slip_window :]
    lowest = min(rec.s_total for rec in window)
    return current.s_total - lowest >= params.slip_rise


def fuse(p: ProximityRecord, c: ContactRecord) -> FusedState:
    """Single per-frame verdict; precedence Noise > Touched > Approaching."""
    if p.frame_index != c.frame_index:
        raise ValueError(
            f"frame_index mismatch: proximity {p.frame_index} vs contact {c.frame_index}"
        )
    if p.state == NOISE:
        verdict = NOISE_SUPPRESSED
    elif c.state == TOUCHED:
        verdict = IN_CONTACT
    elif p.state == APPROACHING:
        verdict = OBJECT_NEAR
    else:
        verdict = IDLE
    return FusedState(proximity=p, contact=c, verdict=verdict)
