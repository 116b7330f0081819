"""Scripted scenes, the grasp controller state machine, and the closed loop.

A scenario script is flat text, one event per line:

    frame_start frame_end event_type key=value ...

Event types:
  rest                          no-op marker (reference preamble)
  approach d_start= d_end=      object distance ramp (mm); holds after end
                                optional: seed= x= y= (texture / lateral mm)
  withdraw d_end=               distance ramp from current value to d_end
  touch depth_start= depth_end= scripted indenter depth ramp (open loop);
                                optional: shape= radius= axis= x= y=
                                shear_x= shear_y=
  noise boost=                  external light burst over the span

Distance events must not overlap each other; likewise depth events and
noise events. Values hold between events (piecewise linear-then-hold).

The controller consumes fused verdicts frame by frame:

    Idle -> Closing        after approach_persist consecutive ObjectNear
    Closing -> Holding     after touch_persist consecutive InContact
    Holding -> Transporting immediately
    Transporting -> Releasing  on arrival at B (transit timer)
    Transporting -> Returning  on slip (object lost; back to A)
    Releasing -> Idle      gripper reopened at B, delivery counted
    Returning -> Idle      arrived back at A, empty-handed

NoiseSuppressed frames reset the approach streak, so light noise can
never start a grasp.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .contact import (
    IN_CONTACT,
    NOISE_SUPPRESSED,
    OBJECT_NEAR,
    ContactParams,
    ContactRecord,
    FusedState,
    detect_slip,
    fuse,
    grid_similarity,
)
from .frames import ChannelPlane, Frame, ssim, to_gray
from .fusion import FusionParams, ReferenceSet, build_references
from .lattice import Indenter, Lattice, LatticeConfig, build_lattice, cell_strain, solve_static
from .optics import NoiseEvent, RenderConfig, Renderer, SceneObject, make_speckle_texture
from .proximity import ProximityParams, ProximityRecord, classify_proximity, proximity_score

log = logging.getLogger("gridtac.scenario")

IDLE = "Idle"
CLOSING = "Closing"
HOLDING = "Holding"
TRANSPORTING = "Transporting"
RETURNING = "Returning"
RELEASING = "Releasing"

PHASES = (IDLE, CLOSING, HOLDING, TRANSPORTING, RETURNING, RELEASING)
HOLDING_PHASES = (HOLDING, TRANSPORTING)

POSITION_A = "A"
POSITION_B = "B"
IN_TRANSIT = "in-transit"


# ---------------------------------------------------------------------------
# script parsing


@dataclass(frozen=True)
class ScriptEvent:
    start: int
    end: int
    kind: str
    params: dict[str, object]  # floats, plus symbolic shape/axis values
    line_no: int


@dataclass(frozen=True)
class ScenarioScript:
    duration: int
    events: tuple[ScriptEvent, ...]


class ScriptError(ValueError):
    pass


_EVENT_KINDS = {"rest", "approach", "withdraw", "touch", "noise"}
_CATEGORY = {"approach": "distance", "withdraw": "distance", "touch": "depth",
             "noise": "noise"}


def parse_script(text: str) -> ScenarioScript:
    """Parse flat script text; raises ScriptError naming the bad line."""
    events = []
    duration = 0
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3:
            raise ScriptError(f"line {line_no}: expected 'start end type ...', got {raw!r}")
        try:
            start, end = int(parts[0]), int(parts[1])
        except ValueError:
            raise ScriptError(f"line {line_no}: frame bounds must be integers") from None
        kind = parts[2]
        if kind not in _EVENT_KINDS:
            raise ScriptError(f"line {line_no}: unknown event type {kind!r}")
        if start < 0 or end < start:
            raise ScriptError(f"line {line_no}: need 0 <= start <= end")
        params = {}
        for tok in parts[3:]:
            key, sep, value = tok.partition("=")
            if not sep:
                raise ScriptError(f"line {line_no}: expected key=value, got {tok!r}")
            try:
                params[key] = float(value)
            except ValueError:
                # shape/axis keys carry symbolic values
                params[key] = value
        events.append(ScriptEvent(start, end, kind, params, line_no))
        duration = max(duration, end + 1)

    by_category: dict[str, list[ScriptEvent]] = {}
    for ev in events:
        cat = _CATEGORY.get(ev.kind)
        if cat:
            by_category.setdefault(cat, []).append(ev)
    for cat, evs in by_category.items():
        evs.sort(key=lambda e: e.start)
        for a, b in zip(evs, evs[1:]):
            if b.start <= a.end:
                raise ScriptError(
                    f"line {b.line_no}: {cat} events overlap "
                    f"(lines {a.line_no} and {b.line_no})"
                )
    return ScenarioScript(duration=duration, events=tuple(events))


def load_script(path) -> ScenarioScript:
    with open(path) as fh:
        return parse_script(fh.read())


# ---------------------------------------------------------------------------
# world timeline


@dataclass(frozen=True)
class FrameWorld:
    """Scene state at one frame, compiled from the script."""

    distance: float | None  # None: no object in scene
    depth: float  # scripted indenter depth (open-loop)
    indenter_shape: str
    indenter_radius: float
    indenter_axis: str
    indenter_center: tuple[float, float]
    indenter_shear: tuple[float, float]
    noise: NoiseEvent | None
    texture_seed: int
    lateral: tuple[float, float]


def compile_world(script: ScenarioScript, lattice_cfg: LatticeConfig) -> list[FrameWorld]:
    n = script.duration
    center = (
        lattice_cfg.nx * lattice_cfg.dx / 2.0,
        lattice_cfg.ny * lattice_cfg.dy / 2.0,
    )
    distance = [None] * n
    depth = [0.0] * n
    noise: list[NoiseEvent | None] = [None] * n
    shape = ["plane"] * n
    radius = [4.0] * n
    axis = ["y"] * n
    cx = [center] * n
    shear = [(0.0, 0.0)] * n
    seed = [7] * n
    lateral = [(0.0, 0.0)] * n

    last_distance: float | None = None
    last_depth = 0.0
    for ev in sorted(script.events, key=lambda e: e.start):
        p = ev.params
        span = max(ev.end - ev.start, 1)
        if ev.kind == "approach":
            d0 = float(p.get("d_start", last_distance if last_distance is not None else 30.0))
            d1 = float(p.get("d_end", 0.0))
            for f in range(ev.start, ev.end + 1):
                distance[f] = d0 + (d1 - d0) * (f - ev.start) / span
            for f in range(ev.end + 1, n):
                distance[f] = d1
            last_distance = d1
            if "seed" in p:
                for f in range(ev.start, n):
                    seed[f] = int(p["seed"])
            if "x" in p or "y" in p:
                off = (float(p.get("x", 0.0)), float(p.get("y", 0.0)))
                for f in range(ev.start, n):
                    lateral[f] = off
        elif ev.kind == "withdraw":
            if last_distance is None:
                raise ScriptError(f"line {ev.line_no}: withdraw before any approach")
            d0 = last_distance
            d1 = float(p.get("d_end", 30.0))
            for f in range(ev.start, ev.end + 1):
                distance[f] = d0 + (d1 - d0) * (f - ev.start) / span
            for f in range(ev.end + 1, n):
                distance[f] = d1
            last_distance = d1
        elif ev.kind == "touch":
            z0 = float(p.get("depth_start", last_depth))
            z1 = float(p.get("depth_end", 0.0))
            for f in range(ev.start, ev.end + 1):
                depth[f] = z0 + (z1 - z0) * (f - ev.start) / span
            for f in range(ev.end + 1, n):
                depth[f] = z1
            last_depth = z1
            sh = str(p.get("shape", "plane"))
            rad = float(p.get("radius", 4.0))
            ax = str(p.get("axis", "y"))
            ctr = (float(p.get("x", center[0])), float(p.get("y", center[1])))
            shr = (float(p.get("shear_x", 0.0)), float(p.get("shear_y", 0.0)))
            for f in range(ev.start, n):
                shape[f], radius[f], axis[f], cx[f], shear[f] = sh, rad, ax, ctr, shr
        elif ev.kind == "noise":
            evobj = NoiseEvent(ev.start, ev.end, float(p.get("boost", 60.0)))
            for f in range(ev.start, ev.end + 1):
                noise[f] = evobj

    return [
        FrameWorld(
            distance=distance[f],
            depth=depth[f],
            indenter_shape=shape[f],
            indenter_radius=radius[f],
            indenter_axis=axis[f],
            indenter_center=cx[f],
            indenter_shear=shear[f],
            noise=noise[f],
            texture_seed=seed[f],
            lateral=lateral[f],
        )
        for f in range(n)
    ]


# ---------------------------------------------------------------------------
# gripper state machine


@dataclass(frozen=True)
class ControllerParams:
    approach_persist: int = 5
    touch_persist: int = 2
    release_persist: int = 2
    close_rate: float = 8.0  # gripper degrees per frame
    close_depth_per_frame: float = 0.3  # mm of indentation per closing frame
    max_depth: float = 1.2
    max_angle: float = 60.0
    closing_timeout: int = 30
    transit_frames: int = 25
    contact_eps: float = 0.3  # mm: object close enough to be squeezed

    def __post_init__(self):
        for name in ("approach_persist", "touch_persist", "release_persist"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.close_rate <= 0 or self.close_depth_per_frame <= 0:
            raise ValueError("closing rates must be > 0")
        if self.transit_frames < 1 or self.closing_timeout < 1:
            raise ValueError("timers must be >= 1")


@dataclass(frozen=True)
class GripperState:
    phase: str = IDLE
    angle: float = 0.0
    position: str = POSITION_A
    depth_cmd: float = 0.0
    approach_streak: int = 0
    touch_streak: int = 0
    release_streak: int = 0
    closing_elapsed: int = 0
    transit_elapsed: int = 0


def step(state: GripperState, fused: FusedState, slip: bool,
         params: ControllerParams | None = None) -> GripperState:
    """One controller transition; pure in (state, inputs)."""
    params = params or ControllerParams()
    if state.phase not in PHASES:
        raise AssertionError(f"corrupt controller phase {state.phase!r}")
    v = fused.verdict

    if state.phase == IDLE:
        streak = state.approach_streak + 1 if v == OBJECT_NEAR else 0
        if streak >= params.approach_persist:
            return replace(state, phase=CLOSING, approach_streak=0,
                           touch_streak=0, closing_elapsed=0)
        return replace(state, approach_streak=streak)

    if state.phase == CLOSING:
        angle = min(state.angle + params.close_rate, params.max_angle)
        depth = min(state.depth_cmd + params.close_depth_per_frame, params.max_depth)
        streak = state.touch_streak + 1 if v == IN_CONTACT else 0
        elapsed = state.closing_elapsed + 1
        if streak >= params.touch_persist:
            return replace(state, phase=HOLDING, angle=angle, depth_cmd=depth,
                           touch_streak=0, closing_elapsed=0)
        if elapsed >= params.closing_timeout:
            # nothing graspable: reopen and give up this attempt
            return replace(state, phase=IDLE, angle=0.0, depth_cmd=0.0,
                           approach_streak=0, touch_streak=0, closing_elapsed=0)
        return replace(state, angle=angle, depth_cmd=depth,
                       touch_streak=streak, closing_elapsed=elapsed)

    if state.phase == HOLDING:
        return replace(state, phase=TRANSPORTING, position=IN_TRANSIT,
                       transit_elapsed=0)

    if state.phase == TRANSPORTING:
        if slip:
            return replace(state, phase=RETURNING, depth_cmd=0.0, angle=0.0,
                           transit_elapsed=0)
        elapsed = state.transit_elapsed + 1
        if elapsed >= params.transit_frames:
            return replace(state, phase=RELEASING, position=POSITION_B,
                           transit_elapsed=0, release_streak=0)
        return replace(state, transit_elapsed=elapsed)

    if state.phase == RELEASING:
        angle = max(state.angle - params.close_rate, 0.0)
        depth = max(state.depth_cmd - params.close_depth_per_frame, 0.0)
        streak = state.release_streak + 1 if v != IN_CONTACT else 0
        if depth == 0.0 and streak >= params.release_persist:
            return replace(state, phase=IDLE, angle=0.0, depth_cmd=0.0,
                           position=POSITION_A, release_streak=0,
                           approach_streak=0)
        return replace(state, angle=angle, depth_cmd=depth, release_streak=streak)

    # RETURNING
    elapsed = state.transit_elapsed + 1
    if elapsed >= params.transit_frames:
        return replace(state, phase=IDLE, position=POSITION_A,
                       transit_elapsed=0, approach_streak=0)
    return replace(state, transit_elapsed=elapsed)


# ---------------------------------------------------------------------------
# closed-loop scenario execution


@dataclass(frozen=True)
class FrameRow:
    frame_index: int
    proximity: ProximityRecord
    score: float
    contact: ContactRecord
    fused: str
    slip: bool
    phase: str
    position: str
    depth: float
    distance: float | None
    noise_boost: float


@dataclass(frozen=True)
class ScenarioReport:
    rows: list[FrameRow]
    frames_rendered: int
    grasp_attempts: int
    grasps_succeeded: int
    slips: int
    noise_frames: int
    noise_triggered_actions: int
    first_approaching: int | None
    first_touched: int | None

    def summary_dict(self) -> dict[str, object]:
        return {
            "frames": self.frames_rendered,
            "grasp_attempts": self.grasp_attempts,
            "grasps_succeeded": self.grasps_succeeded,
            "slips": self.slips,
            "noise_frames": self.noise_frames,
            "noise_triggered_actions": self.noise_triggered_actions,
            "first_approaching": -1 if self.first_approaching is None else self.first_approaching,
            "first_touched": -1 if self.first_touched is None else self.first_touched,
        }


@lru_cache(maxsize=16)
def _texture(seed: int) -> ChannelPlane:
    return make_speckle_texture(seed=seed)


@dataclass
class ScenarioHooks:
    """Optional per-frame callbacks (frame sink for PNG output etc.)."""

    on_frame: object = None  # callable(frame_index, Frame) or None


def run_scenario(
    script: ScenarioScript,
    fusion_params: FusionParams | None = None,
    proximity_params: ProximityParams | None = None,
    contact_params: ContactParams | None = None,
    lattice_cfg: LatticeConfig | None = None,
    render_cfg: RenderConfig | None = None,
    controller_params: ControllerParams | None = None,
    closed_loop: bool = True,
    detect: bool = True,
    hooks: ScenarioHooks | None = None,
) -> ScenarioReport:
    """Render, detect, and (optionally) control over a whole script.

    The first n_frames of the script must be an object-free rest preamble;
    references are built from them, and detection rows start after. With
    detect=False only frames are produced (open-loop rendering); the
    report then carries no rows.
    """
    fusion_params = fusion_params or FusionParams()
    proximity_params = proximity_params or ProximityParams()
    contact_params = contact_params or ContactParams()
    lattice_cfg = lattice_cfg or LatticeConfig()
    render_cfg = render_cfg or RenderConfig()
    controller_params = controller_params or ControllerParams()
    hooks = hooks or ScenarioHooks()

    world = compile_world(script, lattice_cfg)
    n_ref = fusion_params.n_frames
    if script.duration < n_ref:
        raise ScriptError(
            f"script must cover at least the {n_ref}-frame reference preamble"
        )
    for f in range(n_ref):
        w = world[f]
        if w.distance is not None or w.depth > 0 or w.noise is not None:
            raise ScriptError(
                f"frame {f}: reference preamble must be object- and noise-free"
            )

    if not detect:
        closed_loop = False
    renderer = Renderer(render_cfg, lattice_cfg)
    lat = build_lattice(lattice_cfg)

    ref_frames = []
    for f in range(n_ref):
        frame = renderer.render(frame_index=f)
        ref_frames.append(frame)
        if hooks.on_frame:
            hooks.on_frame(f, frame)
    refs = build_references(ref_frames, fusion_params) if detect else None

    state = GripperState()
    history: list[ContactRecord] = []
    rows: list[FrameRow] = []
    attempts = succeeded = slips = noise_frames = noise_actions = 0
    first_approaching = first_touched = None
    prev_field = None

    for f in range(n_ref, script.duration):
        w = world[f]
        if closed_loop:
            in_reach = (
                w.distance is not None and w.distance <= controller_params.contact_eps
            )
            depth = state.depth_cmd if in_reach else 0.0
        else:
            depth = w.depth

        indenter = None
        strain = None
        if depth > 0.0:
            indenter = Indenter(
                shape=w.indenter_shape,
                radius=w.indenter_radius,
                axis=w.indenter_axis,
                center=w.indenter_center,
                depth=depth,
                shear=w.indenter_shear,
            )
            prev_field = solve_static(lat, indenter, initial=prev_field)
            strain = cell_strain(lat, prev_field)
        else:
            prev_field = None

        obj = None
        if w.distance is not None:
            obj = SceneObject(
                texture=_texture(w.texture_seed),
                distance=0.0 if depth > 0 else w.distance,
                lateral_offset=w.lateral,
            )
        frame = renderer.render(
            strain=strain, obj=obj, noise=w.noise, indenter=indenter, frame_index=f
        )
        if hooks.on_frame:
            hooks.on_frame(f, frame)
        if not detect:
            continue

        prox = classify_proximity(frame, refs, proximity_params, frame_index=f)
        cont = grid_similarity(frame, refs, contact_params, frame_index=f)
        fused = fuse(prox, cont)
        history.append(cont)
        holding = state.phase in HOLDING_PHASES
        slip = detect_slip(history, contact_params, holding=holding)
        prev_phase = state.phase
        if closed_loop:
            state = step(state, fused, slip, controller_params)
            if prev_phase == IDLE and state.phase == CLOSING:
                attempts += 1
                if w.noise is not None:
                    noise_actions += 1
            if prev_phase == RELEASING and state.phase == IDLE:
                succeeded += 1
            if prev_phase == TRANSPORTING and state.phase == RETURNING:
                slips += 1

        if fused.verdict == NOISE_SUPPRESSED:
            noise_frames += 1
        if first_approaching is None and prox.state == "Approaching":
            first_approaching = f
        if first_touched is None and cont.state == "Touched":
            first_touched = f

        rows.append(
            FrameRow(
                frame_index=f,
                proximity=prox,
                score=proximity_score(prox, proximity_params),
                contact=cont,
                fused=fused.verdict,
                slip=slip,
                phase=state.phase,
                position=state.position,
                depth=depth,
                distance=w.distance,
                noise_boost=w.noise.boost if w.noise else 0.0,
            )
        )

    log.info(
        "scenario done: %d frames, %d attempts, %d delivered, %d slips",
        script.duration, attempts, succeeded, slips,
    )
    return ScenarioReport(
        rows=rows,
        frames_rendered=script.duration,
        grasp_attempts=attempts,
        grasps_succeeded=succeeded,
        slips=slips,
        noise_frames=noise_frames,
        noise_triggered_actions=noise_actions,
        first_approaching=first_approaching,
        first_touched=first_touched,
    )


# ---------------------------------------------------------------------------
# assembly monitoring (SSIM trace)


@dataclass(frozen=True)
class AssemblyEvent:
    frame_index: int
    kind: str  # "misalignment" | "recovery"


def assembly_monitor(
    frames: list[Frame],
    reference_frame: Frame,
    band: float = 0.02,
    warmup: int = 5,
) -> tuple[list[float], list[AssemblyEvent]]:
    """Per-frame SSIM against a reference pose, with band-crossing events.

    The steady baseline is the mean SSIM of the warmup frames; a drop of
    more than `band` below it flags a misalignment, and a recovery event
    fires when the trace climbs back above the half-band line.
    """
    ref_gray = to_gray(reference_frame)
    trace = [ssim(to_gray(f), ref_gray) for f in frames]
    if not trace:
        return [], []
    baseline = float(np.mean(trace[: max(1, warmup)]))
    events = []
    below = False
    for idx, value in enumerate(trace):
        if not below and value < baseline - band:
            events.append(AssemblyEvent(idx, "misalignment"))
            below = True
        elif below and value >= baseline - band / 2.0:
            events.append(AssemblyEvent(idx, "recovery"))
            below = False
    return trace, events
