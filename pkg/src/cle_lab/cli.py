"""Batch experiment runner: ``cle-lab run | render | validate``.

Configs are YAML or JSON with ``schema_version: 1``.  Each run writes
JSON-lines records (one config record, then results) whose bytes depend
only on the config and seed; wall-clock times go to a separate manifest.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np
import yaml

from . import __version__
from .annulus import (
    AcceptanceCollapseError,
    PartnerFamily,
    ratio_limit_corss,
    verify_boundary_limits,
)
from .estimators import Accumulator, calibrate_against_exact, continuity_probe
from .events import (
    BoundaryField,
    InvalidEpsilonError,
    canonical_json,
    compile_event,
    event_from_json,
    event_to_json,
    random_event,
    support,
    support_inside,
)
from .geometry import (
    LoopPath,
    MobiusMap,
    UnsupportedDomainError,
    domain_from_json,
    unit_disk,
)
from .lattice import LatticeSpec, Sampler, SamplerParams, extract_loops, patch_spec
from .sphere import (
    FallbackRateError,
    NuBSampler,
    SpherePlan,
    check_invariance_factorization,
    sample_nu_B,
    scale_ratio_stats,
)

log = logging.getLogger("cle_lab")

SCHEMA_VERSION = 1
KINDS = ("estimate", "continuity_probe", "nu_b", "sphere_check", "annulus_check", "corss", "oracle_calibration")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUT_ENV = "CLE_LAB_OUT"

_obj = {"type": "object"}

SCHEMA: dict = {
    "type": "object",
    "required": ["schema_version", "kind"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"enum": list(KINDS)},
        "seed": {"type": "integer", "minimum": 0},
        "model": {
            "type": "object",
            "properties": {
                "n": {"type": "number", "exclusiveMinimum": 0, "maximum": 2},
                "x": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "cells_across": {"type": "number", "exclusiveMinimum": 0},
                "sweeps": {"type": "integer", "minimum": 1},
                "thermalization": {"type": ["integer", "null"], "minimum": 0},
                "cluster": {"type": ["boolean", "null"]},
            },
            "additionalProperties": False,
        },
        "domain": _obj,
        "events": {"type": "array", "items": _obj},
        "budget": {"type": "integer", "minimum": 1},
        "chains": {"type": "integer", "minimum": 1},
        "snapshots": {"type": "integer", "minimum": 0},
        "params": _obj,
    },
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"kind": {"const": "estimate"}}},
         "then": {"required": ["events", "budget"]}},
        {"if": {"properties": {"kind": {"const": "continuity_probe"}}},
         "then": {"required": ["events", "budget", "params"],
                  "properties": {"params": {"required": ["maps"]}}}},
        {"if": {"properties": {"kind": {"const": "nu_b"}}},
         "then": {"required": ["params"], "properties": {"params": {"required": ["points", "samples"]}}}},
        {"if": {"properties": {"kind": {"const": "sphere_check"}}},
         "then": {"required": ["events", "params"], "properties": {"params": {"required": ["mode"]}}}},
        {"if": {"properties": {"kind": {"const": "annulus_check"}}},
         "then": {"required": ["events", "budget", "params"],
                  "properties": {"params": {"required": ["mode"]}}}},
        {"if": {"properties": {"kind": {"const": "corss"}}},
         "then": {"required": ["budget", "params"], "properties": {"params": {"required": ["A", "B"]}}}},
        {"if": {"properties": {"kind": {"const": "oracle_calibration"}}},
         "then": {"required": ["budget", "params"], "properties": {"params": {"required": ["cells"]}}}},
    ],
}


class ConfigError(ValueError):
    """Schema or precondition violation found while loading a config."""


# ---------------------------------------------------------------------------
# config handling


def load_config(path: str | Path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such config: {p}")
    text = p.read_text()
    try:
        cfg = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"unparsable config: {exc}") from None
    validate_config(cfg)
    return cfg


def validate_config(cfg: Any) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {where}: {exc.message}") from None
    try:
        ctx = Context.from_config(cfg)
        ctx.check_preconditions()
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError, UnsupportedDomainError) as exc:
        raise ConfigError(f"invalid geometry: {exc}") from None


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def _c(p) -> complex:
    return complex(p[0], p[1]) if isinstance(p, (list, tuple)) else complex(p)


def _map(d) -> MobiusMap:
    """Map from JSON: {"kind": identity|translate|scale|rotate|affine|disk_automorphism|inversion} or {a,b,c,d}."""
    kind = d.get("kind")
    if kind is None:
        return MobiusMap.from_json(d)
    if kind == "identity":
        return MobiusMap.identity()
    if kind == "translate":
        return MobiusMap.affine(1, _c(d["by"]))
    if kind == "scale":
        return MobiusMap.scaling(float(d["factor"]), _c(d.get("center", [0, 0])))
    if kind == "rotate":
        return MobiusMap.rotation(float(d["angle"]), _c(d.get("center", [0, 0])))
    if kind == "affine":
        return MobiusMap.affine(_c(d["scale"]), _c(d.get("shift", [0, 0])))
    if kind == "disk_automorphism":
        b = _c(d["point"])
        w = complex(np.exp(1j * float(d.get("angle", 0.0))))
        return MobiusMap(w, -w * b, -b.conjugate(), 1)
    if kind == "inversion":
        return MobiusMap.inversion()
    raise ValueError(f"unknown map kind {kind!r}")


def _field(d) -> BoundaryField:
    return BoundaryField() if d is None else BoundaryField.from_json(d)


@dataclass
class Context:
    cfg: dict
    seed: int
    n: float
    x: float | None
    cells_across: float
    sweeps: int
    thermalization: int | None
    cluster: bool | None
    domain: Any
    events: list
    budget: int
    chains: int
    params: dict

    @classmethod
    def from_config(cls, cfg: dict) -> "Context":
        m = cfg.get("model", {})
        dom = domain_from_json(cfg["domain"]) if "domain" in cfg else unit_disk()
        return cls(cfg, int(cfg.get("seed", 0)), float(m.get("n", 1.0)), m.get("x"),
                   float(m.get("cells_across", 48)), int(m.get("sweeps", 1)), m.get("thermalization"),
                   m.get("cluster"), dom, [event_from_json(e) for e in cfg.get("events", [])],
                   int(cfg.get("budget", 0)), int(cfg.get("chains", 1)), dict(cfg.get("params", {})))

    def sampler_params(self, *key: int) -> SamplerParams:
        p = SamplerParams(n=self.n, x=self.x, sweeps=self.sweeps, thermalization=self.thermalization,
                          seed=self.seed, cluster=self.cluster)
        return p.child(*key) if key else p

    def spec(self, domain=None) -> LatticeSpec:
        return LatticeSpec.for_domain(domain or self.domain, cells_across=self.cells_across)

    def check_preconditions(self) -> None:
        kind = self.cfg["kind"]
        if kind in ("estimate", "continuity_probe"):
            for e in self.events:
                if not support_inside(e, self.domain):
                    raise ConfigError("event support is not inside the domain")
        if kind == "continuity_probe":
            for d in self.params["maps"]:
                _map(d)
        if kind == "annulus_check":
            mode = self.params["mode"]
            if mode not in ("thcr1", "thcr2", "theopt", "thcr3"):
                raise ConfigError(f"unknown annulus mode {mode!r}")
            if mode != "theopt":
                domain_from_json(self.params["A"])
        if kind == "sphere_check":
            if self.params["mode"] not in ("global_invariance", "factorization", "mirror_symmetry"):
                raise ConfigError(f"unknown sphere mode {self.params['mode']!r}")
        if kind == "corss":
            domain_from_json(self.params["A"])
            domain_from_json(self.params["B"])
        if kind == "oracle_calibration":
            cells = [tuple(c) for c in self.params["cells"]]
            spec = patch_spec(cells)
            if spec.n_edges > 24:
                raise ConfigError("calibration patch exceeds 24 edges")


# ---------------------------------------------------------------------------
# experiments; each returns a list of result payloads


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if math.isfinite(v) else str(v)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    return o


def _run_chains(ctx: Context, spec: LatticeSpec, events: list, threads: int, snapshots: int = 0):
    """Indicator series per chain (chain order), plus optional snapshot loops."""
    comp = [compile_event(e, spec) for e in events]

    def one(c: int):
        s = Sampler(spec, ctx.sampler_params(c))
        X = np.zeros((ctx.budget, len(comp)))
        snaps = []
        keep = set(np.linspace(0, ctx.budget - 1, snapshots).astype(int)) if snapshots else set()
        for i, st in enumerate(s.states(ctx.budget)):
            X[i] = [f(st) for f in comp]
            if i in keep:
                snaps.append([l.to_json() for l in extract_loops(st).loops])
        return X, snaps, s.manifest()

    if threads > 1 and ctx.chains > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, range(ctx.chains)))
    return [one(c) for c in range(ctx.chains)]


def run_estimate(ctx: Context, threads: int) -> list[dict]:
    spec = ctx.spec()
    res = _run_chains(ctx, spec, ctx.events, threads, int(ctx.cfg.get("snapshots", 0)))
    out = []
    for j, e in enumerate(ctx.events):
        acc = Accumulator([r[0][:, j] for r in res])
        out.append({"type": "estimate", "event": event_to_json(e), "estimate": acc.estimate().to_json()})
    for c, r in enumerate(res):
        out.append({"type": "diagnostics", "chain": c, "sampler": r[2]})
        for k, loops in enumerate(r[1]):
            out.append({"type": "sample", "chain": c, "snapshot": k, "loops": loops})
    return out


def run_continuity(ctx: Context, threads: int) -> list[dict]:
    maps = [_map(d) for d in ctx.params["maps"]]

    def factory(d, k):
        return Sampler(ctx.spec(d), ctx.sampler_params(k))

    out = []
    for j, e in enumerate(ctx.events):
        r = continuity_probe(e, ctx.domain, maps, factory, ctx.budget, bool(ctx.params.get("lipschitz", True)))
        out.append({"type": "continuity_probe", "event": event_to_json(e), "result": r.to_json()})
    return out


def run_nu_b(ctx: Context, threads: int) -> list[dict]:
    pts = np.array([_c(p) for p in ctx.params["points"]])
    win = ctx.params.get("lambda_window")
    spec = ctx.spec(unit_disk())
    nu = NuBSampler.for_support(pts, Sampler(spec, ctx.sampler_params(1)),
                                lambda_window=None if win is None else tuple(win),
                                max_fallback_rate=float(ctx.params.get("max_fallback_rate", 0.995)),
                                min_draws=int(ctx.params.get("fallback_min_draws", 2000)))
    out = []
    for i in range(int(ctx.params["samples"])):
        smp = sample_nu_B(nu)
        out.append({"type": "nu_b_sample", "sample": i, **smp.to_json()})
    out.append({"type": "nu_b_summary", "draws": nu.draws, "fallbacks": nu.fallbacks,
                "fallback_rate": nu.fallback_rate, "radius": nu.radius, "lambda_window": list(nu.lambda_window)})
    if ctx.params.get("scale_ratios"):
        n_cfg = int(ctx.params.get("scale_ratio_states", 200))
        st = Sampler(spec, ctx.sampler_params(2)).states(n_cfg)
        srs = scale_ratio_stats(st, n_walks=int(ctx.params.get("n_walks", 200)), seed=ctx.seed)
        out.append({"type": "scale_ratios", **srs.to_json()})
    return out


def _plan(ctx: Context) -> SpherePlan:
    p = ctx.params
    win = p.get("lambda_window")
    h = _map(p["h"]) if "h" in p else MobiusMap.identity()
    return SpherePlan(ctx.spec(unit_disk()), ctx.sampler_params(), h, None if win is None else tuple(win),
                      int(p.get("n_outer", 200)), int(p.get("inner_budget", 200)), p.get("inner_thermalization"),
                      bool(p.get("condition_inner", True)),
                      max_fallback_rate=float(p.get("max_fallback_rate", 0.995)),
                      fallback_min_draws=int(p.get("fallback_min_draws", 2000)))


def run_sphere(ctx: Context, threads: int) -> list[dict]:
    p = ctx.params
    mode = p["mode"]
    plan = _plan(ctx)
    out = []
    for j, X in enumerate(ctx.events):
        inputs: dict = {"plan": plan, "X": X}
        if mode == "global_invariance":
            inputs["G"] = _map(p["G"])
        if mode == "factorization":
            inputs.update(Xp=event_from_json(p["Xp"]), spec=ctx.spec(), lambdas=p["lambdas"],
                          budget=ctx.budget or 1000)
        rep = check_invariance_factorization(mode, inputs)
        out.append({"type": "sphere_check", "event": event_to_json(X), "report": rep.to_json()})
    return out


def run_annulus(ctx: Context, threads: int) -> list[dict]:
    p = ctx.params
    mode = p["mode"]
    spec = ctx.spec()
    a = spec.spacing
    out = []
    for j, X in enumerate(ctx.events):
        inputs: dict = {"X": X, "spec": spec, "params": ctx.sampler_params(j), "budget": ctx.budget,
                        "audit": int(p.get("audit", 0))}
        if "cap" in p:
            inputs["cap"] = int(p["cap"])
        u = _field(p.get("u"))
        if mode in ("thcr1", "thcr2", "thcr3"):
            A = domain_from_json(p["A"])
            inputs["fam"] = PartnerFamily.geometric(A, float(p["eps0"]), a, u, float(p.get("min_sep", 4.0)))
        if mode == "thcr2":
            inputs["fam_C"] = PartnerFamily.geometric(spec.domain, float(p.get("eps0_C", p["eps0"])), a,
                                                      _field(p.get("u_C")), float(p.get("min_sep", 4.0)))
        if mode == "thcr3":
            inputs["g"] = _map(p["g"])
        if mode == "theopt":
            inputs.update(A=domain_from_json(p["A"]), lambdas=p["lambdas"], u=u,
                          eps_frac=float(p.get("eps_frac", 0.8)))
        rep = verify_boundary_limits(mode, inputs)
        out.append({"type": "annulus_check", "event": event_to_json(X), "report": rep.to_json()})
    return out


def run_corss(ctx: Context, threads: int) -> list[dict]:
    p = ctx.params
    spec = ctx.spec()
    a = spec.spacing
    ms = float(p.get("min_sep", 4.0))
    fA = PartnerFamily.geometric(domain_from_json(p["A"]), float(p["eps0"]), a, _field(p.get("u")), ms)
    fB = PartnerFamily.geometric(domain_from_json(p["B"]), float(p.get("eps0_B", p["eps0"])), a,
                                 _field(p.get("u_prime")), ms)
    rep = ratio_limit_corss(fA, fB, spec, ctx.sampler_params(), ctx.budget, int(p.get("cap", 200_000)))
    return [{"type": "corss", "report": rep.to_json(), "eps_A": list(fA.epsilons), "eps_B": list(fB.epsilons)}]


def run_oracle(ctx: Context, threads: int) -> list[dict]:
    p = ctx.params
    spec = patch_spec([tuple(c) for c in p["cells"]])
    rng = np.random.default_rng(ctx.seed)
    centers = spec.lattice.cell_centers()[spec.face_root]
    trials = int(p.get("trials", 5))
    n_events = int(p.get("events_per_trial", 10))
    rows = []
    for t in range(trials):
        evs = [random_event(rng, centers, spec.spacing) for _ in range(n_events)]
        for r in calibrate_against_exact(spec, ctx.sampler_params(t), evs, ctx.budget, float(p.get("k", 3.0))):
            rows.append(r)
    cov = sum(r.ok for r in rows) / len(rows)
    return [{"type": "oracle_calibration", "n_edges": spec.n_edges, "n": ctx.n, "trials": len(rows),
             "coverage": cov, "rows": [r.to_json() for r in rows]}]


RUNNERS: dict[str, Callable[[Context, int], list[dict]]] = {
    "estimate": run_estimate,
    "continuity_probe": run_continuity,
    "nu_b": run_nu_b,
    "sphere_check": run_sphere,
    "annulus_check": run_annulus,
    "corss": run_corss,
    "oracle_calibration": run_oracle,
}


def run_config(cfg: dict, threads: int = 1) -> tuple[str, list[dict]]:
    """Execute a validated config; returns (config hash, records)."""
    ctx = Context.from_config(cfg)
    h = config_hash(cfg)
    payloads = RUNNERS[cfg["kind"]](ctx, threads)
    recs = [{"record": "config", "config_hash": h, "version": __version__, "config": cfg}]
    for i, p in enumerate(payloads):
        recs.append({"record": "result", "config_hash": h, "index": i, **_jsonable(p)})
    return h, recs


def write_records(path: Path, recs: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as f:
        for r in recs:
            f.write(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n")


def read_records(path: str | Path) -> list[dict]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such record file: {p}")
    recs = [json.loads(line) for line in p.read_text().splitlines() if line.strip()]
    hashes = {r["config_hash"] for r in recs if r.get("record") == "config"}
    if not hashes:
        raise ConfigError("record file has no config record")
    for r in recs:
        if r.get("config_hash") not in hashes:
            raise ConfigError("orphan record: config hash does not match any config in the file")
    return recs


# ---------------------------------------------------------------------------
# rendering


def _svg_path(l: LoopPath, tf) -> str:
    pts = " ".join(f"{x:.4f},{y:.4f}" for x, y in (tf(z) for z in l.vertices))
    return f'<polygon points="{pts}"/>'


def render_svg(cfg: dict, loops: list[LoopPath], path: Path, size: int = 600) -> None:
    """Domain boundary, loops, and event curves of the config as overlays."""
    dom = domain_from_json(cfg["domain"]) if "domain" in cfg else unit_disk()
    bd = dom.boundary(512) if hasattr(dom, "boundary") else dom.boundary_loop
    z = bd.vertices
    x0, x1, y0, y1 = z.real.min(), z.real.max(), z.imag.min(), z.imag.max()
    s = (size - 20) / max(x1 - x0, y1 - y0)

    def tf(w):
        return 10 + (w.real - x0) * s, size - 10 - (w.imag - y0) * s

    overlays = []
    for e in cfg.get("events", []):
        ev = event_from_json(e)
        for c in support(ev).components:
            if isinstance(c, LoopPath):
                overlays.append(c)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
             f'<g fill="none" stroke="black" stroke-width="1.5">{_svg_path(bd, tf)}</g>',
             '<g fill="none" stroke="#2060c0" stroke-width="0.8">' + "".join(_svg_path(l, tf) for l in loops) + "</g>",
             '<g fill="none" stroke="#d03020" stroke-width="1" stroke-dasharray="4 2">'
             + "".join(_svg_path(l, tf) for l in overlays) + "</g>", "</svg>"]
    path.write_text("\n".join(parts) + "\n")


def _csv_rows(rec: dict) -> list[list]:
    rows = []

    def fit_rows(name, fit):
        for x, e in zip(fit["abscissae"], fit["estimates"]):
            rows.append([name, x, e["mean"], e["stderr"], e["ci95"][0], e["ci95"][1]])
        lim = fit["limit"]
        rows.append([name + ":limit", 0.0, lim["mean"], lim["stderr"], lim["ci95"][0], lim["ci95"][1]])

    def walk(name, o):
        if isinstance(o, dict):
            if {"abscissae", "estimates", "limit"} <= o.keys():
                fit_rows(name, o)
                return
            if {"mean", "stderr", "ci95"} <= o.keys():
                rows.append([name, "", o["mean"], o["stderr"], o["ci95"][0], o["ci95"][1]])
                return
            for k, v in sorted(o.items()):
                walk(f"{name}.{k}" if name else k, v)
        elif isinstance(o, list):
            for i, v in enumerate(o):
                walk(f"{name}[{i}]", v)

    walk("", {k: v for k, v in rec.items() if k not in ("record", "config_hash", "index")})
    return rows


def render(record_path: str | Path, svg: bool, csv_out: bool) -> list[Path]:
    recs = read_records(record_path)
    cfg = next(r["config"] for r in recs if r.get("record") == "config")
    base = Path(record_path)
    written = []
    if svg:
        samples = [r for r in recs if r.get("type") in ("sample", "nu_b_sample")]
        if not samples:
            p = base.with_suffix(".empty.svg")
            render_svg(cfg, [], p)
            written.append(p)
        for r in samples:
            loops = r["loops"] if "loops" in r else [r["loop"]]
            p = base.with_suffix(f".{r['index']}.svg")
            render_svg(cfg, [LoopPath.from_json(l) for l in loops], p)
            written.append(p)
    if csv_out:
        p = base.with_suffix(".csv")
        with p.open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["series", "abscissa", "mean", "stderr", "ci_lo", "ci_hi"])
            for r in recs:
                if r.get("record") == "result":
                    for row in _csv_rows(r):
                        w.writerow([f"{r['index']}:{row[0]}"] + row[1:])
        written.append(p)
    return written


# ---------------------------------------------------------------------------
# entry point


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or "cle_lab_runs")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = copy.deepcopy(cfg)
        cfg["seed"] = int(args.seed)
        validate_config(cfg)
    t0 = time.time()
    h, recs = run_config(cfg, args.threads)
    out = _out_dir(args.out)
    path = out / f"{cfg['kind']}-{h[:12]}-s{cfg.get('seed', 0)}.jsonl"
    write_records(path, recs)
    manifest = {"config_hash": h, "records": path.name, "started": t0, "finished": time.time(),
                "threads": args.threads, "version": __version__}
    (out / f"{path.stem}.manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(path)
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"ok {cfg['kind']} {config_hash(cfg)[:12]}")
    return EXIT_OK


def cmd_render(args) -> int:
    if not (args.svg or args.csv):
        raise ConfigError("choose --svg and/or --csv")
    for p in render(args.record, args.svg, args.csv):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cle-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./cle_lab_runs)")
    r.add_argument("--threads", type=int, default=1)
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a config against the schema and preconditions")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    d = sub.add_parser("render", help="SVG or CSV from a record file")
    d.add_argument("record")
    d.add_argument("--svg", action="store_true")
    d.add_argument("--csv", action="store_true")
    d.set_defaults(func=cmd_render)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, RuntimeError, AssertionError, UnsupportedDomainError, InvalidEpsilonError,
            AcceptanceCollapseError, FallbackRateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
