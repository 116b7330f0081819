"""HTTP facade over the pipeline jobs.

A stateless wrapper: each endpoint validates a pydantic request, runs
the matching pipeline job against the server's filesystem, and returns
a JSON summary. It exists so the CLI (and other tooling) can drive one
long-lived process instead of paying import and model-warmup cost per
invocation; all heavy lifting stays in :mod:`gridtac.pipeline`.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .lattice import SolveError
from .pipeline import bench, calibrate, detect, simulate

__all__ = ["app", "create_app"]


class JobRequest(BaseModel):
    """Common knobs: optional config file and seed override."""

    config_path: str | None = None
    seed: int | None = Field(default=None, ge=0, lt=2**64)

    def run_config(self) -> RunConfig:
        cfg = load_config(self.config_path) if self.config_path else RunConfig()
        if self.seed is not None:
            cfg = cfg.with_seed(self.seed)
        return cfg


class CalibrateRequest(JobRequest):
    frames_dir: str
    out_dir: str


class CalibrateResponse(BaseModel):
    out_dir: str
    height: int
    width: int
    grid_on_pixels: dict[str, int]


class DetectRequest(JobRequest):
    frames_dir: str
    refs_dir: str
    out_csv: str


class DetectResponse(BaseModel):
    out_csv: str
    rows: int


class SimulateRequest(JobRequest):
    script_path: str
    out_dir: str
    closed_loop: bool = False


class SimulateResponse(BaseModel):
    out_dir: str
    summary: dict[str, int]


class BenchRequest(JobRequest):
    frames_dir: str
    refs_dir: str
    iterations: int = Field(default=300, ge=1)


class BenchResponse(BaseModel):
    iterations: int
    elapsed_s: float
    fps: float
    stage_latency_ms: dict[str, float]


_CLIENT_ERRORS = (ValueError, ConfigError, FileNotFoundError, SolveError, OSError)


def create_app() -> FastAPI:
    app = FastAPI(title="gridtac", version=__version__)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/calibrate", response_model=CalibrateResponse)
    def calibrate_endpoint(req: CalibrateRequest) -> CalibrateResponse:
        try:
            refs = calibrate(req.frames_dir, req.out_dir, req.run_config())
        except _CLIENT_ERRORS as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return CalibrateResponse(
            out_dir=req.out_dir,
            height=refs.height,
            width=refs.width,
            grid_on_pixels={
                c: int(mask.data.sum()) for c, mask in refs.grid_ref.items()
            },
        )

    @app.post("/detect", response_model=DetectResponse)
    def detect_endpoint(req: DetectRequest) -> DetectResponse:
        try:
            rows = detect(req.frames_dir, req.refs_dir, req.out_csv, req.run_config())
        except _CLIENT_ERRORS as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return DetectResponse(out_csv=req.out_csv, rows=rows)

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate_endpoint(req: SimulateRequest) -> SimulateResponse:
        try:
            report = simulate(
                req.script_path, req.out_dir, req.run_config(), req.closed_loop
            )
        except _CLIENT_ERRORS as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return SimulateResponse(
            out_dir=req.out_dir,
            summary={k: int(v) for k, v in report.summary_dict().items()},
        )

    @app.post("/bench", response_model=BenchResponse)
    def bench_endpoint(req: BenchRequest) -> BenchResponse:
        try:
            metrics = bench(
                req.frames_dir, req.refs_dir, req.run_config(), req.iterations
            )
        except _CLIENT_ERRORS as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return BenchResponse(
            iterations=metrics["iterations"],
            elapsed_s=metrics["elapsed_s"],
            fps=metrics["fps"],
            stage_latency_ms={
                k: v for k, v in metrics.items() if k.endswith("_ms")
            },
        )

    return app


app = create_app()
