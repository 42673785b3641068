"""Command-line client: runs jobs in-process, or against a server with ``--server``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from pydantic import BaseModel, ValidationError

from . import __version__
from .core import SemslamError
from .service.schemas import EvalRequest, FilterMapRequest, RunRequest, SimgenRequest

SERVER_ENV = "SEMSLAM_SERVER"


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _override(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semslam", description=__doc__)
    p.add_argument("--version", action="version", version=f"semslam {__version__}")
    p.add_argument("--server", default=os.environ.get(SERVER_ENV),
                   help=f"service URL; defaults to ${SERVER_ENV}, otherwise runs in-process")
    p.add_argument("--json", action="store_true", help="print the raw JSON response")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run odometry or full SLAM over a KITTI-layout sequence")
    r.add_argument("--mode", choices=("odometry", "slam"), default="odometry")
    r.add_argument("--seq", required=True, help="sequence directory (velodyne/ or *.bin)")
    r.add_argument("--labels", help="directory of .label files")
    r.add_argument("--config", help="key=value config file")
    r.add_argument("--set", dest="overrides", action="append", type=_override, default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    r.add_argument("--out", required=True, help="output directory")

    e = sub.add_parser("eval", help="compare an estimated trajectory with ground truth")
    e.add_argument("--est", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--metrics", type=_split, default=["ate2d", "ate3d", "rte"])
    e.add_argument("--align", action="store_true", help="Umeyama-align before ATE")
    e.add_argument("--ape-csv", help="write per-pose errors to this CSV")

    f = sub.add_parser("filter-map", help="drop classes from an exported PLY map")
    f.add_argument("--in", dest="src", required=True)
    f.add_argument("--exclude", type=_split, required=True, help="class names or label ids")
    f.add_argument("--out", dest="dst", required=True)

    s = sub.add_parser("simgen", help="write a synthetic KITTI-layout sequence")
    s.add_argument("--preset", choices=("loop", "straight"), default="loop")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--scans", type=int)

    v = sub.add_parser("serve", help="start the HTTP service")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8000)
    return p


ROUTES = {
    "run": ("/run", RunRequest, "run_job"),
    "eval": ("/eval", EvalRequest, "eval_job"),
    "filter-map": ("/filter-map", FilterMapRequest, "filter_map_job"),
    "simgen": ("/simgen", SimgenRequest, "simgen_job"),
}


def _request(args: argparse.Namespace) -> BaseModel:
    _, model, _ = ROUTES[args.command]
    if args.command == "run":
        return model(mode=args.mode, seq=args.seq, labels=args.labels, config=args.config,
                     overrides=dict(args.overrides), out=args.out)
    if args.command == "eval":
        return model(est=args.est, gt=args.gt, metrics=args.metrics, align=args.align, ape_csv=args.ape_csv)
    if args.command == "filter-map":
        return model(src=args.src, exclude=args.exclude, dst=args.dst)
    return model(preset=args.preset, out=args.out, seed=args.seed, scans=args.scans)


def _absolute(req: BaseModel) -> BaseModel:
    # a server may run elsewhere on the same filesystem; send absolute paths
    keys = ("seq", "labels", "config", "out", "est", "gt", "ape_csv", "src", "dst")
    changes = {k: os.path.abspath(getattr(req, k)) for k in keys if getattr(req, k, None)}
    return req.model_copy(update=changes)


def _remote(server: str, route: str, req: BaseModel) -> dict:
    import httpx

    resp = httpx.post(server.rstrip("/") + route, json=_absolute(req).model_dump(), timeout=None)
    if resp.status_code != 200:
        detail = resp.json().get("detail", resp.text) if resp.headers.get("content-type", "").startswith(
            "application/json") else resp.text
        raise SemslamError(f"server error {resp.status_code}: {detail}")
    return resp.json()


def _local(name: str, req: BaseModel) -> dict:
    from .service import operations

    return getattr(operations, name)(req).model_dump()


def _print(command: str, res: dict) -> None:
    if command == "eval":
        for k, v in res["metrics"].items():
            print(f"{k}\t{v:.6f}")
    elif command == "run":
        print(f"{res['scans']} scans, mode {res['mode']}, {res['loop_closures']} loop closures")
        if res["degraded"]:
            print(f"degraded scans (pose = prediction): {res['degraded']}")
        for k, v in res["files"].items():
            print(f"{k}\t{v}")
    elif command == "filter-map":
        print(f"kept {res['points']} points, excluded labels {res['excluded_labels']}")
    else:
        print(f"wrote {res['scans']} scans to {res['out']} (suggested config: {res['config']})")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run("semslam.service.app:app", host=args.host, port=args.port)
        return 0
    try:
        req = _request(args)
        route, _, name = ROUTES[args.command]
        res = _remote(args.server, route, req) if args.server else _local(name, req)
    except ValidationError as e:
        parser.error("; ".join(err["msg"] for err in e.errors()))
    except FileNotFoundError as e:
        print(f"semslam: not found: {e.filename or e}", file=sys.stderr)
        return 1
    except (SemslamError, ValueError, OSError) as e:
        print(f"semslam: {e}", file=sys.stderr)
        return 1
    if args.json:
        print(json.dumps(res, indent=2))
    else:
        _print(args.command, res)
    return 0


if __name__ == "__main__":
    sys.exit(main())
