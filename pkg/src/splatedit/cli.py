"""Command-line entry points: pipeline, eval, serve."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .pipeline import PipelineError, run_eval, run_pipeline

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_BAD_INPUT = 2


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splatedit",
                                description="Slider-controlled Gaussian splat editing")
    sub = p.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("pipeline", help="build a session from a scene and an edit spec")
    pp.add_argument("--scene", required=True, help="scene JSON file")
    pp.add_argument("--edit", required=True, help="edit spec JSON file")
    pp.add_argument("--out", required=True, help="session output directory")
    pp.add_argument("--config", default=None, help="optional config JSON")
    pp.add_argument("--seed", type=int, default=None, help="override config seeds")

    pe = sub.add_parser("eval", help="score a finished session into a CSV report")
    pe.add_argument("--session", required=True, help="session directory")
    pe.add_argument("--out", required=True, help="report CSV path")

    ps = sub.add_parser("serve", help="serve a session over HTTP/WebSocket")
    ps.add_argument("--session", required=True, help="session directory")
    ps.add_argument("--port", type=int, default=8000)
    ps.add_argument("--host", default="127.0.0.1")
    ps.add_argument("--frontend", default=None, help="static frontend directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "pipeline":
        for label, path in (("scene", args.scene), ("edit spec", args.edit),
                            ("config", args.config)):
            if path is not None and not Path(path).exists():
                _log(f"error: {label} file not found: {path}")
                return EXIT_BAD_INPUT
        try:
            run_pipeline(args.scene, args.edit, args.out, args.config, args.seed,
                         log=_log)
        except PipelineError as e:
            _log(f"error: pipeline failed {e}")
            return EXIT_FAILURE
        _log(f"session written to {args.out}")
        return EXIT_OK

    if args.command == "eval":
        if not Path(args.session).exists():
            _log(f"error: session directory not found: {args.session}")
            return EXIT_BAD_INPUT
        try:
            rows = run_eval(args.session, args.out, log=_log)
        except Exception as e:
            _log(f"error: eval failed: {e}")
            return EXIT_FAILURE
        _log(f"wrote {len(rows)} rows to {args.out}")
        return EXIT_OK

    if args.command == "serve":
        if not Path(args.session).exists():
            _log(f"error: session directory not found: {args.session}")
            return EXIT_BAD_INPUT
        from .service import serve
        serve(args.session, host=args.host, port=args.port,
              frontend_dir=args.frontend)
        return EXIT_OK

    return EXIT_BAD_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
