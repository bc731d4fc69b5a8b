"""HTTP front end. Every endpoint is a thin wrapper over a run_* function,
which the CLI also calls directly when it runs in-process."""
from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse

from . import io
from .errors import energy_loss_check
from .fields import ResolutionError, set_threads
from .geometry import OutsideLemmaDomain
from .iteration import (AdmissibilityError, BifurcationUnavailable, CertificationError, StepOptions,
                        bifurcated_step, seed_shear, seed_zero, step)
from .models import (BifurcateRequest, ErrorBody, ExportRequest, ParamsRequest, RunConfig, SeedRequest,
                     StepRequest, VerifyRequest)
from .params import ConfigError, LevelUnreachable, SchedulerConfig, check_admissibility, level_params
from .transport import StepInstability, WindowError
from .verify import inductive_report, residual_suite

EXIT = {"config": 1, "admissibility": 2, "certification": 3, "io": 4}


class EngineError(Exception):
    def __init__(self, kind: str, detail: str, report: dict = None):
        super().__init__(detail)
        self.kind, self.detail, self.report = kind, detail, report

    @property
    def exit_code(self) -> int:
        return EXIT[self.kind]


def _classify(e: Exception) -> EngineError:
    if isinstance(e, EngineError):
        return e
    if isinstance(e, (ConfigError, WindowError, BifurcationUnavailable, LevelUnreachable, ResolutionError)):
        return EngineError("config", str(e))
    if isinstance(e, AdmissibilityError):
        return EngineError("admissibility", str(e), e.report)
    if isinstance(e, (OutsideLemmaDomain, StepInstability)):
        return EngineError("admissibility", f"{type(e).__name__}: {e}")
    if isinstance(e, CertificationError):
        return EngineError("certification", str(e), e.report)
    if isinstance(e, OSError):
        return EngineError("io", str(e))
    raise e


def guarded(fn, req):
    try:
        return fn(req)
    except Exception as e:      # noqa: BLE001 - re-raised unless it maps to an exit code
        raise _classify(e) from e


# --- operations -----------------------------------------------------------------

def _setup(cfg: RunConfig) -> SchedulerConfig:
    set_threads(cfg.threads)
    return cfg.scheduler()


def _opts(cfg: RunConfig) -> StepOptions:
    return StepOptions(demo_mode=cfg.demo_mode, N0_phi=cfg.N0_phi, C_round=cfg.C_round)


def _seed(cfg: RunConfig, sc: SchedulerConfig):
    if cfg.seed == "shear":
        tup = seed_shear(sc, cfg.lambda_bar, n=cfg.n, divisor=cfg.dt_divisor, C=cfg.shear_C)
    else:
        tup = seed_zero(sc, n=cfg.n, divisor=cfg.dt_divisor)
    tup.meta["scheduler"] = dataclasses.asdict(sc)
    return tup


def _scheduler_of(tup, cfg: RunConfig) -> SchedulerConfig:
    d = tup.meta.get("scheduler")
    return SchedulerConfig(**d) if d else cfg.scheduler()


def run_params(req: ParamsRequest) -> dict:
    sc = req.config.scheduler()
    lp = level_params(sc, req.q)
    adm = check_admissibility(lp, 0.0, sc.demo_mode)
    return {"q": req.q, "level": lp.to_dict(), "admissibility": adm.to_dict(), "T": sc.T}


def run_seed(req: SeedRequest) -> dict:
    cfg = req.config
    sc = _setup(cfg)
    tup = _seed(cfg, sc)
    path = io.save_tuple(tup, Path(cfg.out) / "level0.pfld")
    rep = verify_tuple(tup, sc)
    io.write_json(Path(cfg.out) / "level0.verify.json", rep)
    return {"tuple": str(path), "samples": len(tup.times), "window": tup.window,
            "certified": rep["residuals"]["pass"]}


def _load_or_seed(cfg: RunConfig, sc: SchedulerConfig, path):
    return io.load_tuple(path) if path else _seed(cfg, sc)


def _level_files(out: Path, q: int, tag: str = ""):
    return out / f"level{q}{tag}.pfld", out / f"level{q}{tag}.report.json", out / f"level{q}{tag}.verify.json"


def run_step(req: StepRequest) -> dict:
    cfg = req.config
    sc = _setup(cfg)
    tup = _load_or_seed(cfg, sc, req.tuple_path)
    sc = _scheduler_of(tup, cfg)
    out = Path(cfg.out)
    summary = []
    for _ in range(cfg.q_max):
        try:
            new, rep = step(tup, sc, _opts(cfg))
        except CertificationError as e:
            q = tup.q + 1
            io.write_json(out / f"level{q}.failed.report.json", e.report)
            raise
        new.meta["scheduler"] = dataclasses.asdict(sc)
        fp, fr, fv = _level_files(out, new.q)
        io.save_tuple(new, fp)
        io.write_json(fr, rep)
        io.write_json(fv, verify_tuple(new, sc))
        summary.append({"q": new.q, "tuple": str(fp), "report": str(fr), "cauchy": rep["cauchy"],
                        "certified": rep["certification"]["pass"]})
        tup = new
    return {"steps": summary}


def run_bifurcate(req: BifurcateRequest) -> dict:
    cfg = req.config
    sc = _setup(cfg)
    tup = _load_or_seed(cfg, sc, req.tuple_path)
    sc = _scheduler_of(tup, cfg)
    iv = req.interval or cfg.bifurcation
    if iv is None:
        raise ConfigError("no bifurcation interval (key `bifurcation`, in units of tau_q)")
    tau = level_params(sc, tup.q).tau_q
    a, b, rep = bifurcated_step(tup, sc, (iv[0] * tau, iv[1] * tau), _opts(cfg))
    out = Path(cfg.out)
    paths = {}
    for tag, t in (("a", a), ("b", b)):
        t.meta["scheduler"] = dataclasses.asdict(sc)
        fp, _, fv = _level_files(out, t.q, tag)
        io.save_tuple(t, fp)
        io.write_json(fv, verify_tuple(t, sc))
        paths[tag] = str(fp)
    io.write_json(out / f"level{a.q}.bifurcation.json", rep)
    keep = ("slab", "initial_data_identical", "differences_outside_interval", "separation_L2_tubes",
            "separation_L2_mean_field", "separation_L2_grid", "delta_sqrt", "pass")
    return dict({k: rep[k] for k in keep}, tuples=paths)


def verify_tuple(tup, sc: SchedulerConfig, C_round: float = 8.0) -> dict:
    """Residuals, inductive estimates and energy bookkeeping; no timings, so reruns match."""
    res = residual_suite(tup, C_round)
    ind = inductive_report(tup, level_params(sc, tup.q))
    en = energy_loss_check(tup.v, tup.E, tup.kappa, tup.dE)
    return {"q": tup.q, "residuals": res, "inductive": ind, "energy": en,
            "pass": bool(res["pass"] and ind["pass"])}


def run_verify(req: VerifyRequest) -> dict:
    tup = io.load_tuple(req.tuple_path)
    sc = _scheduler_of(tup, req.config)
    rep = verify_tuple(tup, sc, req.config.C_round)
    if req.out:
        io.write_json(req.out, rep)
    return rep


def run_export(req: ExportRequest) -> dict:
    tup = io.load_tuple(req.tuple_path)
    out = Path(req.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise EngineError("io", str(e)) from e
    ts = tup.fields()[req.field]
    t = tup.times[int(np.argmin(np.abs(tup.times - req.t)))]
    sl = out / f"{Path(req.tuple_path).stem}_{req.field}_t{t:.6e}_ax{req.axis}_{req.index}.csv"
    io.write_slice_csv(sl, ts, t, req.axis, req.index)
    norms = out / f"{Path(req.tuple_path).stem}_norms.csv"
    with open(norms, "w") as fh:
        fh.write("t," + ",".join(tup.fields()) + ",E\n")
        for i, ti in enumerate(tup.times):
            vals = [float(np.abs(x.data[i]).max()) for x in tup.fields().values()]
            fh.write(",".join(repr(float(x)) for x in (ti, *vals, tup.E[i])) + "\n")
    return {"slice": str(sl), "norms": str(norms), "t": float(t)}


# --- HTTP -------------------------------------------------------------------------

app = FastAPI(title="eulerci", version="0.1.0")


def _respond(fn, req):
    try:
        return io.jsonable(guarded(fn, req))
    except EngineError as e:
        body = ErrorBody(kind=e.kind, exit_code=e.exit_code, detail=e.detail)
        status = {"config": 422, "admissibility": 409, "certification": 409, "io": 500}[e.kind]
        return JSONResponse(status_code=status, content=body.model_dump())


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/params")
def params(req: ParamsRequest):
    return _respond(run_params, req)


@app.post("/seed")
def seed(req: SeedRequest):
    return _respond(run_seed, req)


@app.post("/step")
def step_(req: StepRequest):
    return _respond(run_step, req)


@app.post("/bifurcate")
def bifurcate(req: BifurcateRequest):
    return _respond(run_bifurcate, req)


@app.post("/verify")
def verify(req: VerifyRequest):
    return _respond(run_verify, req)


@app.post("/export")
def export(req: ExportRequest):
    return _respond(run_export, req)
