"""Scenario tests: script parsing, world compilation, controller FSM,
scenario execution, and the SSIM assembly monitor."""

import numpy as np
import pytest

from gridtac.contact import ContactRecord, FusedState
from gridtac.frames import Frame
from gridtac.lattice import LatticeConfig
from gridtac.proximity import ProximityRecord
from gridtac.scenario import (
    AssemblyEvent,
    ControllerParams,
    GripperState,
    ScriptError,
    assembly_monitor,
    compile_world,
    parse_script,
    run_scenario,
    step,
)


def _fused(verdict):
    prox = ProximityRecord(0, 1.0, 0.0, 0.0, 0.0, 0.0, "Normal")
    cont = ContactRecord(0, 1.0, 1.0, 1.0, 1.0, "Untouched")
    return FusedState(proximity=prox, contact=cont, verdict=verdict)


# ---------------------------------------------------------------------------
# script parsing


def test_parse_basic_script():
    script = parse_script(
        """
        # comment
        0 29 rest
        30 50 approach d_start=26 d_end=0.5 seed=3
        60 70 touch depth_start=0.2 depth_end=0.8 shape=sphere radius=3.5
        """
    )
    assert script.duration == 71
    kinds = [e.kind for e in script.events]
    assert kinds == ["rest", "approach", "touch"]
    assert script.events[1].params["seed"] == 3.0
    assert script.events[2].params["shape"] == "sphere"


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("0 29", "line 1"),
        ("x 29 rest", "integers"),
        ("0 29 dance", "unknown event"),
        ("5 3 rest", "start <= end"),
        ("0 9 approach d_start", "key=value"),
        ("0 9 approach d_start=26\n5 20 withdraw d_end=30", "overlap"),
    ],
)
def test_parse_errors_name_the_line(text, fragment):
    with pytest.raises(ScriptError, match=fragment):
        parse_script(text)


def test_nonoverlapping_categories_allowed():
    # distance and noise events may overlap each other freely
    script = parse_script("0 20 approach d_start=20 d_end=5\n5 15 noise boost=40")
    assert script.duration == 21


def test_withdraw_requires_prior_approach():
    script = parse_script("0 10 withdraw d_end=30")
    with pytest.raises(ScriptError, match="withdraw before any approach"):
        compile_world(script, LatticeConfig())


# ---------------------------------------------------------------------------
# world compilation


def test_compile_linear_then_hold():
    script = parse_script("0 10 approach d_start=20 d_end=10\n15 15 rest")
    world = compile_world(script, LatticeConfig())
    assert world[0].distance == 20.0
    assert world[5].distance == pytest.approx(15.0)
    assert world[10].distance == 10.0
    assert world[14].distance == 10.0  # holds after the ramp
    assert world[3].depth == 0.0


def test_compile_touch_ramp_and_shape():
    script = parse_script("0 4 touch depth_start=0.0 depth_end=0.8 shape=sphere radius=2.0")
    world = compile_world(script, LatticeConfig())
    assert world[0].depth == 0.0
    assert world[2].depth == pytest.approx(0.4)
    assert world[4].depth == pytest.approx(0.8)
    assert world[4].indenter_shape == "sphere"
    assert world[4].indenter_radius == 2.0


def test_compile_noise_span():
    script = parse_script("0 2 rest\n5 8 noise boost=70")
    world = compile_world(script, LatticeConfig())
    assert world[4].noise is None
    assert world[5].noise is not None and world[5].noise.boost == 70.0
    assert world[8].noise is not None
    assert world[3].noise is None


# ---------------------------------------------------------------------------
# controller FSM


def test_idle_needs_persistent_object_near():
    params = ControllerParams()
    state = GripperState()
    for _ in range(4):
        state = step(state, _fused("ObjectNear"), False, params)
        assert state.phase == "Idle"
    state = step(state, _fused("ObjectNear"), False, params)
    assert state.phase == "Closing"


def test_noise_resets_approach_streak():
    params = ControllerParams()
    state = GripperState()
    for _ in range(10):  # alternating near/noise never accumulates 5
        state = step(state, _fused("ObjectNear"), False, params)
        state = step(state, _fused("NoiseSuppressed"), False, params)
    assert state.phase == "Idle"


def test_closing_to_holding_needs_two_contacts():
    params = ControllerParams()
    state = GripperState(phase="Closing")
    state = step(state, _fused("InContact"), False, params)
    assert state.phase == "Closing"
    state = step(state, _fused("InContact"), False, params)
    assert state.phase == "Holding"
    state = step(state, _fused("InContact"), False, params)
    assert state.phase == "Transporting"
    assert state.position == "in-transit"


def test_closing_times_out_back_to_idle():
    params = ControllerParams()
    state = GripperState(phase="Closing")
    for _ in range(params.closing_timeout):
        state = step(state, _fused("Idle"), False, params)
    assert state.phase == "Idle"
    assert state.depth_cmd == 0.0


def test_closing_advances_angle_and_depth():
    import dataclasses

    params = ControllerParams()
    state = GripperState(phase="Closing")
    state = step(state, _fused("Idle"), False, params)
    assert state.angle == params.close_rate
    assert state.depth_cmd == params.close_depth_per_frame
    for _ in range(40):  # saturates instead of growing without bound
        state = step(state, _fused("Idle"), False, params)
        state = dataclasses.replace(state, phase="Closing", closing_elapsed=0)
    assert state.depth_cmd == params.max_depth
    assert state.angle == params.max_angle


def test_transport_completes_to_releasing_then_idle():
    params = ControllerParams(transit_frames=3)
    state = GripperState(phase="Transporting", depth_cmd=1.2)
    for _ in range(3):
        assert state.phase == "Transporting"
        state = step(state, _fused("InContact"), False, params)
    assert state.phase == "Releasing"
    assert state.position == "B"
    # depth winds down, then two non-contact frames confirm release
    while state.phase == "Releasing":
        state = step(state, _fused("Idle"), False, params)
    assert state.phase == "Idle"
    assert state.position == "A"
    assert state.depth_cmd == 0.0


def test_slip_during_transport_returns_home():
    params = ControllerParams(transit_frames=10)
    state = GripperState(phase="Transporting", depth_cmd=1.2)
    state = step(state, _fused("InContact"), False, params)
    state = step(state, _fused("ObjectNear"), True, params)
    assert state.phase == "Returning"
    assert state.depth_cmd == 0.0
    for _ in range(params.transit_frames):
        state = step(state, _fused("Idle"), False, params)
    assert state.phase == "Idle"
    assert state.position == "A"


def test_corrupt_phase_asserts():
    with pytest.raises(AssertionError):
        step(GripperState(phase="Flying"), _fused("Idle"), False, ControllerParams())


# ---------------------------------------------------------------------------
# scenario execution


def test_scenario_requires_clean_preamble():
    script = parse_script("0 40 approach d_start=20 d_end=1")
    with pytest.raises(ScriptError, match="preamble"):
        run_scenario(script)


def test_scenario_requires_minimum_duration():
    script = parse_script("0 5 rest")
    with pytest.raises(ScriptError, match="preamble"):
        run_scenario(script)


def test_empty_scene_stays_idle_fast_params():
    from gridtac.fusion import FusionParams
    from gridtac.optics import RenderConfig

    script = parse_script("0 9 rest")
    report = run_scenario(
        script,
        fusion_params=FusionParams(n_frames=6, m_backgrounds=3),
        render_cfg=RenderConfig(width=64, height=48),
    )
    assert report.grasp_attempts == 0
    assert report.slips == 0
    assert all(r.phase == "Idle" for r in report.rows)
    assert all(r.fused == "Idle" for r in report.rows)
    assert report.summary_dict()["first_approaching"] == -1


def test_open_loop_renders_without_detection():
    from gridtac.fusion import FusionParams
    from gridtac.optics import RenderConfig

    script = parse_script("0 9 rest")
    seen = []
    from gridtac.scenario import ScenarioHooks

    report = run_scenario(
        script,
        fusion_params=FusionParams(n_frames=6, m_backgrounds=3),
        render_cfg=RenderConfig(width=64, height=48),
        detect=False,
        hooks=ScenarioHooks(on_frame=lambda i, f: seen.append(i)),
    )
    assert seen == list(range(10))
    assert report.rows == []
    assert report.frames_rendered == 10


# ---------------------------------------------------------------------------
# assembly monitor


def _noisy_frame(rng, base):
    jitter = rng.integers(-2, 3, size=base.shape, dtype=np.int16)
    return Frame(np.clip(base.astype(np.int16) + jitter, 0, 255).astype(np.uint8))


def test_assembly_monitor_flags_shift_and_recovery():
    rng = np.random.default_rng(61)
    base = rng.integers(60, 200, size=(32, 32, 3), dtype=np.uint8)
    reference = Frame(base)
    steady = [_noisy_frame(rng, base) for _ in range(8)]
    shifted = Frame(np.roll(base, 6, axis=1))
    frames = steady + [shifted] * 4 + [_noisy_frame(rng, base) for _ in range(4)]
    trace, events = assembly_monitor(frames, reference, band=0.02, warmup=5)
    assert len(trace) == len(frames)
    kinds = [e.kind for e in events]
    assert kinds == ["misalignment", "recovery"]
    assert events[0].frame_index == 8
    assert events[1].frame_index == 12


def test_assembly_monitor_quiet_trace_has_no_events():
    rng = np.random.default_rng(62)
    base = rng.integers(60, 200, size=(32, 32, 3), dtype=np.uint8)
    frames = [_noisy_frame(rng, base) for _ in range(10)]
    trace, events = assembly_monitor(frames, Frame(base), band=0.05)
    assert events == []
    assert all(t > 0.9 for t in trace)


def test_assembly_monitor_empty_input():
    base = Frame(np.zeros((16, 16, 3), dtype=np.uint8))
    trace, events = assembly_monitor([], base)
    assert trace == [] and events == []
