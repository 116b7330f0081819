"""Command-line surface: calibrate, detect, simulate, bench.

By default every subcommand runs in-process against the pipeline job
layer. With ``--server http://host:port`` the same request is POSTed to
a running service instead, and the JSON response is printed — the CLI
itself stays a thin client either way. Exit status is 0 only when the
command completed; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__, configure_logging
from .config import ConfigError, RunConfig, load_config
from .lattice import SolveError
from .pipeline import bench, calibrate, detect, simulate

_SEED_MAX = 2**64 - 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridtac",
        description="Grid-elastomer tactile sensing: simulate, calibrate, detect, bench.",
    )
    parser.add_argument("--version", action="version", version=f"gridtac {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat section.key=value config file")
    common.add_argument("--seed", type=int, metavar="N", help="override the render seed")
    common.add_argument(
        "--server",
        metavar="URL",
        help="send the request to a running gridtac service instead of running in-process",
    )

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", parents=[common], help="build a reference set from rest frames")
    p.add_argument("frames_dir", help="directory of frame_<n>.png rest frames")
    p.add_argument("--out", required=True, metavar="DIR", help="reference set output directory")

    p = sub.add_parser("detect", parents=[common], help="run detection over stored frames")
    p.add_argument("frames_dir", help="directory of frame_<n>.png frames")
    p.add_argument("refs_dir", help="reference set directory from calibrate")
    p.add_argument("--out", required=True, metavar="CSV", help="output CSV path")

    p = sub.add_parser("simulate", parents=[common], help="render a scripted scene")
    p.add_argument("script", help="scenario script file")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")
    p.add_argument(
        "--closed-loop",
        action="store_true",
        help="run detection and the grasp controller over the rendered frames",
    )

    p = sub.add_parser("bench", parents=[common], help="benchmark the detection pipeline")
    p.add_argument("frames_dir", help="directory of frame_<n>.png frames")
    p.add_argument("refs_dir", help="reference set directory from calibrate")
    p.add_argument("--iterations", type=int, default=300, metavar="N")

    return parser


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if not 0 <= args.seed <= _SEED_MAX:
            raise ConfigError(f"--seed must be in [0, 2**64), got {args.seed}")
        cfg = cfg.with_seed(args.seed)
    return cfg


def _remote(args) -> int:
    import httpx

    endpoint = {
        "calibrate": "/calibrate",
        "detect": "/detect",
        "simulate": "/simulate",
        "bench": "/bench",
    }[args.command]
    payload: dict[str, object] = {"config_path": args.config, "seed": args.seed}
    if args.command == "calibrate":
        payload.update(frames_dir=args.frames_dir, out_dir=args.out)
    elif args.command == "detect":
        payload.update(frames_dir=args.frames_dir, refs_dir=args.refs_dir, out_csv=args.out)
    elif args.command == "simulate":
        payload.update(script_path=args.script, out_dir=args.out, closed_loop=args.closed_loop)
    else:
        payload.update(
            frames_dir=args.frames_dir, refs_dir=args.refs_dir, iterations=args.iterations
        )
    response = httpx.post(args.server.rstrip("/") + endpoint, json=payload, timeout=600.0)
    if response.status_code != 200:
        print(f"server error {response.status_code}: {response.text}", file=sys.stderr)
        return 1
    print(json.dumps(response.json(), indent=2))
    return 0


def _local(args) -> int:
    cfg = _run_config(args)
    if args.command == "calibrate":
        refs = calibrate(args.frames_dir, args.out, cfg)
        for channel, mask in refs.grid_ref.items():
            print(f"grid_ref[{channel}]: {int(mask.data.sum())} on pixels")
        print(f"references written to {args.out}")
    elif args.command == "detect":
        rows = detect(args.frames_dir, args.refs_dir, args.out, cfg)
        print(f"{rows} rows written to {args.out}")
    elif args.command == "simulate":
        report = simulate(args.script, args.out, cfg, closed_loop=args.closed_loop)
        for key, value in report.summary_dict().items():
            print(f"{key} = {value}")
        print(f"outputs written to {args.out}")
    else:
        metrics = bench(args.frames_dir, args.refs_dir, cfg, args.iterations)
        print(f"fps = {metrics['fps']:.1f} over {metrics['iterations']} iterations")
        for key in sorted(metrics):
            if key.endswith("_ms"):
                print(f"{key} = {metrics[key]:.3f}")
    return 0


def main(argv: list[str] | None = None) -> int:
    configure_logging()
    args = _build_parser().parse_args(argv)
    try:
        if args.server:
            return _remote(args)
        return _local(args)
    except (ConfigError, ValueError, FileNotFoundError, OSError, SolveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
