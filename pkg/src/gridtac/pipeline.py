"""Filesystem-level jobs behind the CLI and the HTTP service.

Each job takes input paths plus a RunConfig, writes its outputs under a
caller-chosen directory, and returns a small result summary. Outputs
(PNGs, CSVs, manifests) are deterministic functions of the inputs and
the configured seed; CSV column order is frozen and documented in the
README so downstream tooling can rely on it.
"""

from __future__ import annotations

import csv
import re
import time
from pathlib import Path

from .config import RunConfig
from .contact import ContactRecord, detect_slip, fuse, grid_similarity
from .frames import Frame, load_frame, save_frame
from .fusion import ReferenceSet, build_references, load_references, save_references
from .proximity import classify_proximity, proximity_score
from .scenario import (
    ScenarioHooks,
    ScenarioReport,
    load_script,
    run_scenario,
)

__all__ = [
    "DETECT_COLUMNS",
    "REPORT_COLUMNS",
    "calibrate",
    "detect",
    "simulate",
    "bench",
    "list_frame_files",
]

# frozen CSV schemas
DETECT_COLUMNS = (
    "frame_index",
    "e_total",
    "c_rg",
    "c_rb",
    "c_gb",
    "c_total",
    "state",
    "score",
    "s_r",
    "s_g",
    "s_b",
    "s_total",
    "contact_state",
    "fused_verdict",
    "slip_flag",
)
REPORT_COLUMNS = DETECT_COLUMNS + (
    "phase",
    "position",
    "depth_mm",
    "distance_mm",
    "noise_boost",
)

_FRAME_NAME = re.compile(r"frame_(\d+)\.png$")


def list_frame_files(frames_dir) -> list[tuple[int, Path]]:
    """All frame_<n>.png files in a directory, ordered by frame number."""
    frames_dir = Path(frames_dir)
    found = []
    for path in frames_dir.iterdir() if frames_dir.is_dir() else ():
        m = _FRAME_NAME.fullmatch(path.name)
        if m:
            found.append((int(m.group(1)), path))
    if not found:
        raise FileNotFoundError(f"no frame_<n>.png files in {frames_dir}")
    return sorted(found)


def _load_sequence(entries: list[tuple[int, Path]]) -> list[Frame]:
    frames = []
    shape = None
    for _, path in entries:
        frame = load_frame(path)
        if shape is None:
            shape = frame.data.shape
        elif frame.data.shape != shape:
            raise ValueError(
                f"{path.name}: shape {frame.data.shape[:2]} does not match "
                f"the first frame's {shape[:2]}"
            )
        frames.append(frame)
    return frames


def calibrate(frames_dir, out_dir, cfg: RunConfig | None = None) -> ReferenceSet:
    """Build a reference set from a rest sequence and persist it."""
    cfg = cfg or RunConfig()
    n = cfg.fusion.n_frames
    entries = list_frame_files(frames_dir)
    if len(entries) < n:
        raise ValueError(f"expected {n} frames, found {len(entries)} in {frames_dir}")
    frames = _load_sequence(entries[:n])
    refs = build_references(frames, cfg.fusion)
    save_references(refs, out_dir)
    return refs


def _detect_rows(frames, indices, refs, cfg: RunConfig):
    """Run the full detection pipeline over an in-memory frame list."""
    history: list[ContactRecord] = []
    rows = []
    for idx, frame in zip(indices, frames):
        prox = classify_proximity(frame, refs, cfg.proximity, frame_index=idx)
        cont = grid_similarity(frame, refs, cfg.contact, frame_index=idx)
        fused = fuse(prox, cont)
        history.append(cont)
        # offline runs carry no gripper state: report the raw slip signature
        slip = detect_slip(history, cfg.contact, holding=True)
        rows.append(
            {
                "frame_index": idx,
                "e_total": prox.e_total,
                "c_rg": prox.c_rg,
                "c_rb": prox.c_rb,
                "c_gb": prox.c_gb,
                "c_total": prox.c_total,
                "state": prox.state,
                "score": proximity_score(prox, cfg.proximity),
                "s_r": cont.s_r,
                "s_g": cont.s_g,
                "s_b": cont.s_b,
                "s_total": cont.s_total,
                "contact_state": cont.state,
                "fused_verdict": fused.verdict,
                "slip_flag": int(slip),
            }
        )
    return rows


def _write_csv(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([str(row[c]) for c in columns])


def detect(frames_dir, refs_dir, out_csv, cfg: RunConfig | None = None) -> int:
    """Detection timeline over stored frames; returns the row count."""
    cfg = cfg or RunConfig()
    refs = load_references(refs_dir)
    entries = list_frame_files(frames_dir)
    frames = _load_sequence(entries)
    rows = _detect_rows(frames, [i for i, _ in entries], refs, cfg)
    _write_csv(out_csv, DETECT_COLUMNS, rows)
    return len(rows)


def _write_summary(path, summary: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for key, value in summary.items():
            fh.write(f"{key} = {value}\n")


def simulate(
    script_path, out_dir, cfg: RunConfig | None = None, closed_loop: bool = False
) -> ScenarioReport:
    """Render a scripted scene; optionally run detection + controller.

    Writes frames/frame_<n>.png (1-based), report.csv, and summary.txt
    under out_dir. Without closed_loop the scene is rendered open-loop
    and report.csv carries only its header.
    """
    cfg = cfg or RunConfig()
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)

    def sink(frame_index: int, frame: Frame) -> None:
        save_frame(frame, frames_dir / f"frame_{frame_index + 1:06d}.png")

    script = load_script(script_path)
    report = run_scenario(
        script,
        fusion_params=cfg.fusion,
        proximity_params=cfg.proximity,
        contact_params=cfg.contact,
        lattice_cfg=cfg.lattice,
        render_cfg=cfg.render,
        controller_params=cfg.controller,
        closed_loop=closed_loop,
        detect=closed_loop,
        hooks=ScenarioHooks(on_frame=sink),
    )

    rows = []
    for r in report.rows:
        rows.append(
            {
                "frame_index": r.frame_index,
                "e_total": r.proximity.e_total,
                "c_rg": r.proximity.c_rg,
                "c_rb": r.proximity.c_rb,
                "c_gb": r.proximity.c_gb,
                "c_total": r.proximity.c_total,
                "state": r.proximity.state,
                "score": r.score,
                "s_r": r.contact.s_r,
                "s_g": r.contact.s_g,
                "s_b": r.contact.s_b,
                "s_total": r.contact.s_total,
                "contact_state": r.contact.state,
                "fused_verdict": r.fused,
                "slip_flag": int(r.slip),
                "phase": r.phase,
                "position": r.position,
                "depth_mm": r.depth,
                "distance_mm": -1.0 if r.distance is None else r.distance,
                "noise_boost": r.noise_boost,
            }
        )
    _write_csv(out_dir / "report.csv", REPORT_COLUMNS, rows)
    _write_summary(out_dir / "summary.txt", report.summary_dict())
    return report


def _pct(samples: list[float], q: float) -> float:
    ordered = sorted(samples)
    pos = min(len(ordered) - 1, max(0, round(q * (len(ordered) - 1))))
    return ordered[pos]


def bench(frames_dir, refs_dir, cfg: RunConfig | None = None, iterations: int = 300) -> dict:
    """Time the full detection pipeline over pre-loaded frames."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    cfg = cfg or RunConfig()
    refs = load_references(refs_dir)
    entries = list_frame_files(frames_dir)
    frames = _load_sequence(entries)

    history: list[ContactRecord] = []
    stage_ms: dict[str, list[float]] = {"proximity": [], "contact": [], "fuse": []}
    t_start = time.perf_counter()
    for i in range(iterations):
        frame = frames[i % len(frames)]
        t0 = time.perf_counter()
        prox = classify_proximity(frame, refs, cfg.proximity, frame_index=i)
        t1 = time.perf_counter()
        cont = grid_similarity(frame, refs, cfg.contact, frame_index=i)
        t2 = time.perf_counter()
        fuse(prox, cont)
        history.append(cont)
        if len(history) > cfg.contact.slip_window + 1:
            del history[0]
        detect_slip(history, cfg.contact, holding=True)
        t3 = time.perf_counter()
        stage_ms["proximity"].append((t1 - t0) * 1e3)
        stage_ms["contact"].append((t2 - t1) * 1e3)
        stage_ms["fuse"].append((t3 - t2) * 1e3)
    elapsed = time.perf_counter() - t_start

    result = {
        "iterations": iterations,
        "elapsed_s": elapsed,
        "fps": iterations / elapsed if elapsed > 0 else float("inf"),
    }
    for stage, samples in stage_ms.items():
        result[f"{stage}_p50_ms"] = _pct(samples, 0.50)
        result[f"{stage}_p95_ms"] = _pct(samples, 0.95)
    return result
