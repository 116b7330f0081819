"""Contact detector tests: grid similarity, slip detection, fused verdicts."""

import numpy as np
import pytest

from alg_reference import ref_grid_similarity
from gridtac.contact import (
    ContactParams,
    ContactRecord,
    ReferenceUnusable,
    decide_contact_state,
    detect_slip,
    fuse,
    grid_similarity,
)
from gridtac.frames import Frame
from gridtac.fusion import FusionParams, build_references
from gridtac.proximity import ProximityRecord


def _const_frame(value, h=16, w=16):
    return Frame(np.full((h, w, 3), value, dtype=np.uint8))


@pytest.fixture(scope="module")
def bright_refs():
    """References whose grid mask covers the whole image on every channel."""
    params = FusionParams(n_frames=4, m_backgrounds=2)
    return build_references([_const_frame(200)] * 4, params)


def _prox(state, frame_index=0):
    return ProximityRecord(
        frame_index=frame_index, e_total=1.0, c_rg=0.0, c_rb=0.0, c_gb=0.0,
        c_total=0.0, state=state,
    )


def _cont(state, s=0.5, frame_index=0):
    return ContactRecord(
        frame_index=frame_index, s_r=s, s_g=s, s_b=s, s_total=s, state=state
    )


def test_params_validation():
    with pytest.raises(ValueError):
        ContactParams(tau_b=256)
    with pytest.raises(ValueError):
        ContactParams(tau_g=0.0)
    with pytest.raises(ValueError):
        ContactParams(slip_rise=0.0)
    with pytest.raises(ValueError):
        ContactParams(slip_window=0)


# ---------------------------------------------------------------------------
# grid similarity


def test_untouched_scene_scores_full_overlap(bright_refs):
    rec = grid_similarity(_const_frame(200), bright_refs)
    assert (rec.s_r, rec.s_g, rec.s_b, rec.s_total) == (1.0, 1.0, 1.0, 1.0)
    assert rec.state == "Untouched"


def test_dark_frame_scores_zero_and_touched(bright_refs):
    rec = grid_similarity(_const_frame(0), bright_refs)
    assert rec.s_total == 0.0
    assert rec.state == "Touched"


def test_half_dark_frame_scores_about_half(bright_refs):
    data = np.full((16, 16, 3), 200, dtype=np.uint8)
    data[8:, :, :] = 0  # lower half crushed below threshold
    rec = grid_similarity(Frame(data), bright_refs)
    # the blur transition band shifts the exact crossover by a row or two
    assert 0.40 < rec.s_total < 0.65
    assert rec.state == "Touched"


def test_matches_scalar_transcription(bright_refs):
    rng = np.random.default_rng(41)
    current = Frame(rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8))
    params = ContactParams()
    rec = grid_similarity(current, bright_refs, params, frame_index=3)
    grid_ref = {c: bright_refs.grid_ref[c].data.tolist() for c in "rgb"}
    oracle = ref_grid_similarity(
        current.data.tolist(), grid_ref, params.tau_b, params.tau_g, params.blur_sigma
    )
    assert (rec.s_r, rec.s_g, rec.s_b) == (oracle["s_r"], oracle["s_g"], oracle["s_b"])
    assert rec.s_total == oracle["s_total"]
    assert rec.state == oracle["state"]
    assert rec.frame_index == 3


def test_empty_reference_channel_rejected():
    params = FusionParams(n_frames=2, m_backgrounds=1)
    dark_refs = build_references([_const_frame(0)] * 2, params)
    with pytest.raises(ReferenceUnusable):
        grid_similarity(_const_frame(0), dark_refs)


def test_shape_mismatch_rejected(bright_refs):
    with pytest.raises(ValueError):
        grid_similarity(_const_frame(200, h=8, w=8), bright_refs)


def test_decision_boundary_is_strict():
    params = ContactParams(tau_g=0.6)
    assert decide_contact_state(0.59999, params) == "Touched"
    assert decide_contact_state(0.6, params) == "Untouched"
    assert decide_contact_state(0.61, params) == "Untouched"


# ---------------------------------------------------------------------------
# slip detection


def test_slip_needs_history():
    with pytest.raises(ValueError):
        detect_slip([], ContactParams())


def test_slip_gated_by_holding():
    history = [_cont("Touched", 0.3), _cont("Untouched", 0.9)]
    assert detect_slip(history, ContactParams(), holding=False) is False
    assert detect_slip(history, ContactParams(), holding=True) is True


def test_slip_on_state_flip():
    history = [_cont("Touched", 0.59), _cont("Untouched", 0.61)]
    # rise is only 0.02, the Touched -> Untouched flip alone fires
    assert detect_slip(history, ContactParams(), holding=True) is True


def test_slip_on_similarity_rise():
    base = [_cont("Touched", 0.55), _cont("Touched", 0.56)]
    assert detect_slip(base + [_cont("Touched", 0.72)], ContactParams(), holding=True)
    assert not detect_slip(base + [_cont("Touched", 0.60)], ContactParams(), holding=True)


def test_slip_window_limits_lookback():
    history = [
        _cont("Touched", 0.30),  # old dip, outside the 3-record window
        _cont("Touched", 0.56),
        _cont("Touched", 0.57),
        _cont("Touched", 0.58),
    ]
    assert detect_slip(history, ContactParams(), holding=True) is False


def test_steady_grip_no_slip():
    history = [_cont("Touched", 0.50 + 0.001 * i) for i in range(10)]
    assert detect_slip(history, ContactParams(), holding=True) is False


# ---------------------------------------------------------------------------
# fused verdict


@pytest.mark.parametrize(
    "prox_state,contact_state,verdict",
    [
        ("Normal", "Untouched", "Idle"),
        ("Normal", "Touched", "InContact"),
        ("Approaching", "Untouched", "ObjectNear"),
        ("Approaching", "Touched", "InContact"),
        ("Noise", "Untouched", "NoiseSuppressed"),
        ("Noise", "Touched", "NoiseSuppressed"),  # noise outranks contact
    ],
)
def test_fuse_precedence(prox_state, contact_state, verdict):
    fused = fuse(_prox(prox_state), _cont(contact_state))
    assert fused.verdict == verdict


def test_fuse_rejects_frame_mismatch():
    with pytest.raises(ValueError):
        fuse(_prox("Normal", frame_index=1), _cont("Untouched", frame_index=2))
