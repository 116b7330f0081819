"""End-to-end surface tests: pipeline jobs, HTTP service, CLI client."""

import csv

import numpy as np
import pytest
from fastapi.testclient import TestClient

from gridtac.cli import main as cli_main
from gridtac.config import RunConfig
from gridtac.frames import Frame, load_frame, save_frame
from gridtac.pipeline import (
    DETECT_COLUMNS,
    REPORT_COLUMNS,
    bench,
    calibrate,
    detect,
    list_frame_files,
    simulate,
)
from gridtac.service import app


# short reference preamble at the calibrated render geometry
SIM_CFG_TEXT = "fusion.n_frames = 6\nfusion.m_backgrounds = 3\n"
# tiny raster for tests that only count rows/files
SMALL_CFG_TEXT = (
    "render.width = 64\nrender.height = 48\n"
    "fusion.n_frames = 6\nfusion.m_backgrounds = 3\n"
)


@pytest.fixture(scope="module")
def sim_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "sim.cfg"
    path.write_text(SIM_CFG_TEXT)
    return path


@pytest.fixture(scope="module")
def small_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.cfg"
    path.write_text(SMALL_CFG_TEXT)
    return path


@pytest.fixture(scope="module")
def sim_tree(tmp_path_factory, sim_cfg):
    """One simulated rest+noise scene shared by the read-only tests."""
    from gridtac.config import load_config

    out = tmp_path_factory.mktemp("sim")
    cfg = load_config(sim_cfg)
    script = out / "scene.txt"
    script.write_text("0 9 rest\n12 15 noise boost=60\n19 19 rest\n")
    simulate(script, out, cfg)
    refs_dir = out / "refs"
    calibrate(out / "frames", refs_dir, cfg)
    return {"out": out, "cfg": cfg, "script": script, "refs": refs_dir}


# ---------------------------------------------------------------------------
# pipeline jobs


def test_simulate_writes_frames_report_summary(sim_tree):
    out = sim_tree["out"]
    entries = list_frame_files(out / "frames")
    assert [i for i, _ in entries] == list(range(1, 21))
    report_header = (out / "report.csv").read_text().splitlines()[0]
    assert report_header == ",".join(REPORT_COLUMNS)
    summary = dict(
        line.split(" = ") for line in (out / "summary.txt").read_text().splitlines()
    )
    assert summary["frames"] == "20"
    assert summary["grasp_attempts"] == "0"


def test_calibrate_requires_enough_frames(tmp_path, sim_tree):
    rng = np.random.default_rng(71)
    for i in range(3):
        frame = Frame(rng.integers(0, 255, size=(16, 16, 3), dtype=np.uint8))
        save_frame(frame, tmp_path / f"frame_{i + 1:06d}.png")
    with pytest.raises(ValueError, match="expected 6 frames"):
        calibrate(tmp_path, tmp_path / "refs", sim_tree["cfg"])


def test_calibrate_rejects_mixed_dimensions(tmp_path, sim_tree):
    rng = np.random.default_rng(72)
    for i in range(6):
        h = 16 if i != 4 else 18
        frame = Frame(rng.integers(0, 255, size=(h, 16, 3), dtype=np.uint8))
        save_frame(frame, tmp_path / f"frame_{i + 1:06d}.png")
    with pytest.raises(ValueError, match="frame_000005.png"):
        calibrate(tmp_path, tmp_path / "refs", sim_tree["cfg"])


def test_detect_emits_frozen_columns(sim_tree, tmp_path):
    out_csv = tmp_path / "detect.csv"
    rows = detect(sim_tree["out"] / "frames", sim_tree["refs"], out_csv, sim_tree["cfg"])
    assert rows == 20
    with open(out_csv) as fh:
        reader = csv.DictReader(fh)
        assert tuple(reader.fieldnames) == DETECT_COLUMNS
        parsed = list(reader)
    # the rest frames at the start classify quiet, the burst as noise
    assert parsed[0]["state"] == "Normal"
    assert parsed[0]["fused_verdict"] == "Idle"
    burst = [r for r in parsed if int(r["frame_index"]) in (13, 14, 15)]
    assert all(r["state"] == "Noise" for r in burst)
    assert all(r["fused_verdict"] == "NoiseSuppressed" for r in burst)
    assert all(float(r["c_total"]) > 0.9 for r in burst)


def test_detect_missing_frames_dir(sim_tree, tmp_path):
    with pytest.raises(FileNotFoundError):
        detect(tmp_path / "nope", sim_tree["refs"], tmp_path / "x.csv", sim_tree["cfg"])


def test_bench_reports_fps_and_percentiles(sim_tree):
    metrics = bench(sim_tree["out"] / "frames", sim_tree["refs"], sim_tree["cfg"], iterations=12)
    assert metrics["iterations"] == 12
    assert metrics["fps"] > 0
    for stage in ("proximity", "contact", "fuse"):
        assert metrics[f"{stage}_p50_ms"] <= metrics[f"{stage}_p95_ms"]
    with pytest.raises(ValueError):
        bench(sim_tree["out"] / "frames", sim_tree["refs"], sim_tree["cfg"], iterations=0)


def test_closed_loop_simulate_reports_rows(tmp_path, small_cfg):
    from gridtac.config import load_config

    cfg = load_config(small_cfg)
    script = tmp_path / "scene.txt"
    script.write_text("0 9 rest\n14 14 rest\n")
    report = simulate(script, tmp_path / "run", cfg, closed_loop=True)
    assert len(report.rows) == 15 - cfg.fusion.n_frames
    lines = (tmp_path / "run" / "report.csv").read_text().splitlines()
    assert len(lines) == 1 + len(report.rows)


# ---------------------------------------------------------------------------
# HTTP service


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok"


def test_service_calibrate_detect_bench(client, sim_tree, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("svc")
    config_path = str(tmp / "svc.cfg")
    with open(config_path, "w") as fh:
        fh.write(SIM_CFG_TEXT)

    r = client.post(
        "/calibrate",
        json={
            "frames_dir": str(sim_tree["out"] / "frames"),
            "out_dir": str(tmp / "refs"),
            "config_path": config_path,
        },
    )
    assert r.status_code == 200
    body = r.json()
    assert body["height"] == 240 and body["width"] == 320
    assert set(body["grid_on_pixels"]) == {"r", "g", "b"}
    assert all(v > 0 for v in body["grid_on_pixels"].values())

    r = client.post(
        "/detect",
        json={
            "frames_dir": str(sim_tree["out"] / "frames"),
            "refs_dir": str(tmp / "refs"),
            "out_csv": str(tmp / "out.csv"),
            "config_path": config_path,
        },
    )
    assert r.status_code == 200
    assert r.json()["rows"] == 20

    r = client.post(
        "/bench",
        json={
            "frames_dir": str(sim_tree["out"] / "frames"),
            "refs_dir": str(tmp / "refs"),
            "iterations": 6,
            "config_path": config_path,
        },
    )
    assert r.status_code == 200
    assert r.json()["fps"] > 0
    assert "proximity_p50_ms" in r.json()["stage_latency_ms"]


def test_service_simulate(client, tmp_path_factory, small_cfg):
    tmp = tmp_path_factory.mktemp("svcsim")
    script = tmp / "scene.txt"
    script.write_text("0 9 rest\n14 14 rest\n")
    r = client.post(
        "/simulate",
        json={
            "script_path": str(script),
            "out_dir": str(tmp / "run"),
            "config_path": str(small_cfg),
            "closed_loop": False,
            "seed": 5,
        },
    )
    assert r.status_code == 200
    assert r.json()["summary"]["frames"] == 15
    assert (tmp / "run" / "frames" / "frame_000015.png").exists()


def test_service_maps_bad_input_to_400(client, tmp_path):
    r = client.post(
        "/detect",
        json={
            "frames_dir": str(tmp_path / "missing"),
            "refs_dir": str(tmp_path / "missing"),
            "out_csv": str(tmp_path / "x.csv"),
        },
    )
    assert r.status_code == 400
    assert "missing" in r.json()["detail"]


def test_service_rejects_bad_seed(client):
    r = client.post(
        "/simulate",
        json={"script_path": "x", "out_dir": "y", "seed": -1},
    )
    assert r.status_code == 422  # pydantic range validation


# ---------------------------------------------------------------------------
# CLI


def test_cli_calibrate_and_detect(tmp_path, capsys, sim_tree, small_cfg):
    refs_dir = tmp_path / "refs"
    code = cli_main(
        [
            "calibrate",
            str(sim_tree["out"] / "frames"),
            "--out",
            str(refs_dir),
            "--config",
            str(small_cfg),
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "grid_ref[r]" in out and "references written" in out

    csv_path = tmp_path / "d.csv"
    code = cli_main(
        [
            "detect",
            str(sim_tree["out"] / "frames"),
            str(refs_dir),
            "--out",
            str(csv_path),
            "--config",
            str(small_cfg),
        ]
    )
    assert code == 0
    assert "20 rows" in capsys.readouterr().out
    assert csv_path.exists()


def test_cli_simulate_summary(tmp_path, capsys, small_cfg):
    script = tmp_path / "s.txt"
    script.write_text("0 9 rest\n")
    code = cli_main(
        ["simulate", str(script), "--out", str(tmp_path / "run"), "--config", str(small_cfg)]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "frames = 10" in out


def test_cli_bench(tmp_path, capsys, sim_tree, small_cfg):
    refs_dir = sim_tree["refs"]
    code = cli_main(
        [
            "bench",
            str(sim_tree["out"] / "frames"),
            str(refs_dir),
            "--iterations",
            "6",
            "--config",
            str(small_cfg),
        ]
    )
    assert code == 0
    assert "fps =" in capsys.readouterr().out


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    code = cli_main(
        ["detect", str(tmp_path / "none"), str(tmp_path / "none"), "--out", str(tmp_path / "x.csv")]
    )
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_cli_rejects_bad_seed(tmp_path, capsys):
    script = tmp_path / "s.txt"
    script.write_text("0 9 rest\n")
    code = cli_main(
        ["simulate", str(script), "--out", str(tmp_path / "r"), "--seed", "-4"]
    )
    assert code == 1
    assert "--seed" in capsys.readouterr().err


def test_cli_server_flag_posts_requests(tmp_path, capsys, sim_tree, small_cfg, monkeypatch):
    """--server routes through HTTP; exercised against the app in-process."""
    import httpx

    svc = TestClient(app)

    def fake_post(url, json=None, timeout=None):
        return svc.post(url.replace("http://svc", ""), json=json)

    monkeypatch.setattr(httpx, "post", fake_post)
    code = cli_main(
        [
            "detect",
            str(sim_tree["out"] / "frames"),
            str(sim_tree["refs"]),
            "--out",
            str(tmp_path / "via_http.csv"),
            "--config",
            str(small_cfg),
            "--server",
            "http://svc",
        ]
    )
    assert code == 0
    assert '"rows": 20' in capsys.readouterr().out


def test_frame_listing_orders_numerically(tmp_path):
    rng = np.random.default_rng(73)
    frame = Frame(rng.integers(0, 255, size=(8, 8, 3), dtype=np.uint8))
    for n in (2, 10, 1):
        save_frame(frame, tmp_path / f"frame_{n:06d}.png")
    assert [i for i, _ in list_frame_files(tmp_path)] == [1, 2, 10]
    with pytest.raises(FileNotFoundError):
        list_frame_files(tmp_path / "empty")


def test_detect_numbers_rows_by_filename(sim_tree, tmp_path):
    # copy two frames with gappy numbering: indices survive into the CSV
    src = sorted((sim_tree["out"] / "frames").iterdir())
    gap_dir = tmp_path / "gappy"
    gap_dir.mkdir()
    save_frame(load_frame(src[0]), gap_dir / "frame_000003.png")
    save_frame(load_frame(src[1]), gap_dir / "frame_000009.png")
    out_csv = tmp_path / "g.csv"
    detect(gap_dir, sim_tree["refs"], out_csv, sim_tree["cfg"])
    with open(out_csv) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["frame_index"] for r in rows] == ["3", "9"]
