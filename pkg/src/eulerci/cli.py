"""Command line client.

Runs the service operations in-process by default; with --server URL the
same request bodies are posted to a running service instead.

    eulerci params --q 3 --set lambda0=10 --set b=1.5
    eulerci step --config demo.cfg
    eulerci verify --tuple out/level1.pfld

Exit codes: 1 config, 2 admissibility, 3 certification, 4 I/O.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources

from . import io
from .models import (BifurcateRequest, ExportRequest, ParamsRequest, SeedRequest, StepRequest,
                     VerifyRequest, load_config)
from .params import ConfigError

COMMANDS = ("params", "seed", "step", "bifurcate", "verify", "export")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eulerci", description="convex integration steps for Euler-Reynolds flows")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value config file (default: built-in demo preset with --demo)")
    p.add_argument("--q", type=int, default=0, help="level for `params`")
    p.add_argument("--tuple", help="PFLD tuple to step, verify or export")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, help="FFT worker threads")
    p.add_argument("--demo", action="store_true", help="demo mode: soft admissibility, clamped windows")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--interval", help="bifurcation interval 'a,b' in units of tau_q")
    p.add_argument("--field", default="v", help="field for `export`")
    p.add_argument("--time", type=float, default=0.0, help="sample time for `export`")
    p.add_argument("--server", help="post to a running service at this URL instead of running in-process")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args):
    over = {}
    for kv in args.set:
        if "=" not in kv:
            raise ConfigError(f"--set expects KEY=VALUE, got {kv!r}")
        k, v = kv.split("=", 1)
        over[k.strip()] = v.strip()
    if args.out:
        over["out"] = args.out
    if args.threads:
        over["threads"] = str(args.threads)
    if args.demo:
        over["demo_mode"] = "true"
    path = args.config
    if path is None and args.demo:
        path = resources.files("eulerci") / "data" / "demo.cfg"
    return load_config(path, over)


def _request(args, cfg):
    c = args.command
    if c == "params":
        return ParamsRequest(config=cfg, q=args.q)
    if c == "seed":
        return SeedRequest(config=cfg)
    if c == "step":
        return StepRequest(config=cfg, tuple_path=args.tuple)
    if c == "bifurcate":
        iv = tuple(float(x) for x in args.interval.split(",")) if args.interval else None
        return BifurcateRequest(config=cfg, tuple_path=args.tuple, interval=iv)
    if not args.tuple:
        raise ConfigError(f"`{c}` needs --tuple")
    if c == "verify":
        return VerifyRequest(tuple_path=args.tuple, config=cfg)
    return ExportRequest(tuple_path=args.tuple, out=args.out or cfg.out + "/csv", field=args.field, t=args.time)


def _remote(url: str, command: str, req) -> tuple[int, dict]:
    import httpx
    try:
        r = httpx.post(f"{url.rstrip('/')}/{command}", json=req.model_dump(mode="json"), timeout=None)
    except httpx.HTTPError as e:
        return 4, {"kind": "io", "detail": str(e)}
    body = r.json()
    return (0, body) if r.status_code == 200 else (int(body.get("exit_code", 4)), body)


def _local(command: str, req) -> tuple[int, dict]:
    from . import service
    fn = getattr(service, f"run_{command}")
    try:
        return 0, io.jsonable(service.guarded(fn, req))
    except service.EngineError as e:
        return e.exit_code, {"kind": e.kind, "exit_code": e.exit_code, "detail": e.detail}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        req = _request(args, cfg)
    except ConfigError as e:
        print(json.dumps({"kind": "config", "exit_code": 1, "detail": str(e)}), file=sys.stderr)
        return 1
    code, body = _remote(args.server, args.command, req) if args.server else _local(args.command, req)
    print(json.dumps(body, indent=1), file=sys.stdout if code == 0 else sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
