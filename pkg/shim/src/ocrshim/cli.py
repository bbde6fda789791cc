"""ocrshim command line.

serve: speak the wire protocol on stdio or a local socket.
selftest (or --selftest): run the canned protocol transcripts against a
fresh copy of this shim and report per-check pass/fail."""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .engines import EngineStartupError, ShimConfig, build_engine
from .selftest import run_selftest
from .server import serve_socket, serve_stdio


def _cmd_serve(args) -> int:
    config = ShimConfig(
        model=args.model,
        engine=args.engine,
        device=args.device,
        max_batch=args.max_batch,
        max_new_tokens=args.max_new_tokens,
        name=args.name,
    )
    try:
        engine = build_engine(config)
    except EngineStartupError as e:
        print(json.dumps({"startup_error": str(e), "model": config.model}),
              file=sys.stderr)
        return 3
    if args.transport == "stdio":
        serve_stdio(engine, config)
    else:
        serve_socket(engine, config, port=args.port)
    return 0


def _cmd_selftest(_args) -> int:
    checks = run_selftest()
    failed = 0
    for check in checks:
        status = "PASS" if check.ok else "FAIL"
        detail = f"  ({check.detail})" if check.detail else ""
        print(f"[{status}] {check.name}{detail}")
        failed += 0 if check.ok else 1
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocrshim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ocrshim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="serve the recognizer over the wire protocol")
    p.add_argument("--model", default="test",
                   help="checkpoint id or local path (trocr engine)")
    p.add_argument("--engine", choices=["test", "trocr"], default="test")
    p.add_argument("--device", default="cpu")
    p.add_argument("--max-batch", type=int, default=8)
    p.add_argument("--max-new-tokens", type=int, default=64)
    p.add_argument("--name", default="ocrshim")
    p.add_argument("--transport", choices=["stdio", "socket"], default="stdio")
    p.add_argument("--port", type=int, default=0)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("selftest", help="run the canned protocol transcripts")
    p.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--selftest" in argv:  # flag spelling of the selftest subcommand
        return _cmd_selftest(None)
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
