"""Command line harness: ``diffcover run <experiment> [--config FILE] [flags]``.

Each experiment reads a YAML config (optional) and flag overrides, calls one
library routine, writes CSV files plus ``summary.txt`` into the output
directory and exits 0 when the check passes (or is inconclusive by design),
1 when it fails and 2 on invalid input.

Config layout::

    experiment: exit-cdf
    system: bm1d                 # or {preset: sublinear, alpha: 0.5}
    cover: {mode: sublinear, alpha: 0.5, region_radius: 10000}
    compactification: sphere
    mc: {n_paths: 10000, dt: 0.0001, seed: 1, horizon: 1.0, explosion_radius: 1.0e6, workers: 1}
    out: results
    params: {region: "ball:1", t_grid: [0.02, 0.05, 0.1]}

The default output directory comes from ``$DIFFCOVER_OUT`` (else ``diffcover_out``).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import boundary as bd
from . import covers as cv
from . import exit_times as et
from . import manifolds as mf
from . import presets
from .regions import Ball
from .sde_core import RngStream, simulate, trajectory_to_csv
from .stats import Verdict

ENV_OUT = "DIFFCOVER_OUT"
TOP_KEYS = {"experiment", "system", "cover", "compactification", "mc", "out", "params"}
MC_KEYS = {"n_paths", "dt", "seed", "horizon", "explosion_radius", "workers"}
COVER_KEYS = {"mode", "alpha", "region_radius", "K", "C"}

EXPERIMENTS = {}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------- config


@dataclass
class McConfig:
    n_paths: int = 10_000
    dt: float = 1e-3
    seed: int = 0
    horizon: float = 1.0
    explosion_radius: float = 1e6
    workers: int = 1

    def validate(self):
        for k in ("n_paths", "dt", "horizon", "explosion_radius", "workers"):
            v = getattr(self, k)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
                raise ConfigError(f"mc.{k}: must be a positive number, got {v!r}")
        if int(self.n_paths) != self.n_paths or int(self.workers) != self.workers:
            raise ConfigError("mc.n_paths and mc.workers must be integers")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError(f"mc.seed: must be a non-negative integer, got {self.seed!r}")
        self.n_paths, self.workers, self.seed = int(self.n_paths), int(self.workers), int(self.seed)


@dataclass
class ExperimentConfig:
    experiment: str
    system: object = None
    cover: dict = field(default_factory=dict)
    compactification: str = "sphere"
    mc: McConfig = field(default_factory=McConfig)
    out: str = ""
    params: dict = field(default_factory=dict)

    def echo(self) -> dict:
        d = asdict(self)
        d["mc"] = asdict(self.mc)
        return d


def load_config_text(text: str, where: str = "<config>") -> dict:
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f" line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{where}{line}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: top level must be a mapping")
    return data


def build_config(raw: dict, overrides: dict, experiment: str) -> ExperimentConfig:
    bad = set(raw) - TOP_KEYS
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(bad)}")
    if raw.get("experiment", experiment) != experiment:
        raise ConfigError(f"config is for {raw['experiment']!r}, not {experiment!r}")
    mc_raw = dict(raw.get("mc") or {})
    bad = set(mc_raw) - MC_KEYS
    if bad:
        raise ConfigError(f"unknown mc keys: {sorted(bad)}")
    cover = dict(raw.get("cover") or {})
    bad = set(cover) - COVER_KEYS
    if bad:
        raise ConfigError(f"unknown cover keys: {sorted(bad)}")
    params = dict(raw.get("params") or {})
    allowed = EXPERIMENTS[experiment].params
    bad = set(params) - set(allowed)
    if bad:
        raise ConfigError(f"unknown params for {experiment}: {sorted(bad)}")
    for k, v in overrides.items():
        if k in MC_KEYS:
            mc_raw[k] = v
        elif k == "system":
            raw = {**raw, "system": v}
        elif k == "compactification":
            raw = {**raw, "compactification": v}
        elif k == "out":
            raw = {**raw, "out": v}
        elif k.startswith("cover_"):
            cover[k[6:]] = v
        else:
            params[k] = v
    mc = McConfig(**{**asdict(EXPERIMENTS[experiment].mc_defaults), **mc_raw})
    mc.validate()
    out = raw.get("out") or os.environ.get(ENV_OUT) or "diffcover_out"
    cfg = ExperimentConfig(experiment=experiment, system=raw.get("system"), cover=cover,
                           compactification=raw.get("compactification", "sphere"), mc=mc,
                           out=str(out), params={**allowed, **params})
    return cfg


def _floats(v, name) -> list:
    if isinstance(v, str):
        v = [x for x in v.split(",") if x.strip()]
    if isinstance(v, (int, float)):
        v = [v]
    try:
        return [float(x) for x in v]
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a list of numbers, got {v!r}") from None


def _split_args(s: str) -> list:
    out, depth, cur = [], 0, ""
    for ch in s:
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        if ch == "," and depth == 0:
            out.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        out.append(cur.strip())
    return out


def parse_call(spec: str):
    """``name(a, k=v)`` -> ``(name, [a], {k: v})`` with YAML-typed values."""
    m = re.fullmatch(r"\s*([A-Za-z_][\w]*)\s*(?:\((.*)\))?\s*", spec)
    if not m:
        raise ConfigError(f"cannot parse {spec!r}")
    args, kwargs = [], {}
    for tok in _split_args(m.group(2) or ""):
        if re.match(r"^[A-Za-z_]\w*\s*=", tok):
            k, v = tok.split("=", 1)
            kwargs[k.strip()] = yaml.safe_load(v)
        else:
            args.append(tok if re.fullmatch(r"[A-Za-z_]\w*(\(.*\))?", tok) else yaml.safe_load(tok))
    return m.group(1), args, kwargs


def make_warp(spec) -> mf.Warp:
    name, args, kwargs = parse_call(str(spec))
    if name not in mf.WARPS:
        raise ConfigError(f"unknown warp {name!r}; choose from {sorted(mf.WARPS)}")
    return mf.WARPS[name](*args, **kwargs)


def make_system(spec):
    if spec is None:
        raise ConfigError("system: a preset is required (use --preset)")
    if isinstance(spec, dict):
        spec = dict(spec)
        name = spec.pop("preset", None)
        args, kwargs = [], spec
    else:
        name, args, kwargs = parse_call(str(spec))
    try:
        if name == "example4":
            return presets.rotation_noise_growing()
        if name == "radial":
            warp = make_warp(args[0] if args else kwargs.pop("warp", "flat"))
            dim = int(args[1]) if len(args) > 1 else int(kwargs.pop("dim", 3))
            return mf.radial_system(mf.RotSymManifold(dim, warp))
        if name == "elliptic":
            b = kwargs.get("b", args[1] if len(args) > 1 else None)
            a = kwargs.get("a", args[0] if args else None)
            if a is None or b is None:
                raise ConfigError("elliptic needs a and b")
            if isinstance(b, dict):
                b = (b["B"], b["b0"])
            return presets.constant_elliptic(a, b)
        return presets.make(name, *args, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"system {spec!r}: {exc}") from None


def make_region(spec, x0) -> Ball:
    m = re.fullmatch(r"ball:([^@]+)(?:@(.+))?", str(spec))
    if not m:
        raise ConfigError(f"region: expected 'ball:R' or 'ball:R@c1,c2', got {spec!r}")
    c = np.asarray(_floats(m.group(2), "region centre")) if m.group(2) else np.asarray(x0)
    return Ball(c, float(m.group(1)))


def make_cover(cfg: ExperimentConfig) -> cv.GrowthCover:
    c = cfg.cover
    mode = c.get("mode", "linear")
    return cv.build_growth_cover(mode, float(c.get("region_radius", 1e4)), alpha=c.get("alpha"),
                                 dim=2, K=float(c.get("K", 1.0)))


def make_curvature(spec):
    """``r^q``, a constant, or ``warp:<warp spec>:<dim>``."""
    s = str(spec).replace(" ", "")
    if s.startswith("warp:"):
        _, w, dim = s.split(":")
        return mf.curvature_profile(mf.RotSymManifold(int(dim), make_warp(w)))
    m = re.fullmatch(r"r\^([0-9.]+)", s)
    if m:
        q = float(m.group(1))
        return mf.CurvatureProfile(lambda r: np.asarray(r, dtype=float) ** q, source=s)
    try:
        k = float(s)
    except ValueError:
        raise ConfigError(f"curvature: expected 'r^q', a constant or 'warp:...:n', got {spec!r}") from None
    return mf.CurvatureProfile(lambda r: np.full(np.shape(r), k), source=s)


# --------------------------------------------------------------------------- experiments


@dataclass
class Experiment:
    name: str
    func: object
    params: dict
    help: str
    mc_defaults: McConfig = field(default_factory=McConfig)


def experiment(name, help, mc=None, **params):
    def deco(func):
        EXPERIMENTS[name] = Experiment(name, func, params, help, mc or McConfig())
        return func
    return deco


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (Verdict, bd.CstarVerdict)):
        return v.value
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(_fmt(x) for x in (v.tolist() if isinstance(v, np.ndarray) else v))
    return str(v)


def _x0(cfg, dim):
    x0 = cfg.params.get("x0")
    if x0 is None:
        return np.zeros(dim)
    x = np.asarray(_floats(x0, "x0"))
    if x.size != dim:
        raise ConfigError(f"x0: expected {dim} coordinates, got {x.size}")
    return x


@experiment("simulate", "one trajectory; CSV t,x1..xn,status", x0=None)
def run_simulate(cfg):
    sys_ = make_system(cfg.system)
    x0 = _x0(cfg, sys_.dim_state)
    traj = simulate(sys_, x0, cfg.mc.horizon, cfg.mc.dt, RngStream(cfg.mc.seed, 0),
                    explosion_radius=cfg.mc.explosion_radius)
    return {"trajectory.csv": trajectory_to_csv(traj)}, {"path_status": str(traj.status)}, True


def _exit_cdf(cfg):
    sys_ = make_system(cfg.system)
    x0 = _x0(cfg, sys_.dim_state)
    region = make_region(cfg.params["region"], x0)
    t_grid = _floats(cfg.params["t_grid"], "t_grid")
    return et.estimate_exit_cdf(sys_, x0, region, t_grid, cfg.mc.n_paths, cfg.mc.dt, cfg.mc.seed,
                                explosion_radius=cfg.mc.explosion_radius, workers=cfg.mc.workers)


@experiment("exit-cdf", "first-exit CDF; CSV t,p_hat,ci_lo,ci_hi",
            mc=McConfig(dt=1e-4), x0=None, region="ball:1", t_grid="0.02,0.05,0.1")
def run_exit_cdf(cfg):
    cdf = _exit_cdf(cfg)
    return ({"exit_cdf.csv": cdf.to_csv()},
            {"censored_fraction": cdf.censored_fraction, "exploded_fraction": cdf.exploded_fraction}, True)


@experiment("tail-check", "exit CDF against C t^2 below delta; CSV t,p_hat,ci_lo,ci_hi",
            mc=McConfig(dt=1e-4), x0=None, region="ball:1", t_grid="0.05,0.1,0.2", delta=0.3, C=1.0)
def run_tail_check(cfg):
    cdf = _exit_cdf(cfg)
    rep = et.check_quadratic_tail(cdf, float(cfg.params["delta"]), float(cfg.params["C"]))
    return ({"tail.csv": cdf.to_csv()},
            {"verdict": "pass" if rep.passed else "fail", "max_ratio": rep.max_ratio,
             "violating_t": rep.violating_t}, rep.passed)


@experiment("chain", "exit/re-entry chain on a cover; CSV k,t,p_hat,ci_hi",
            mc=McConfig(n_paths=2000, dt=1e-2, horizon=20.0),
            x0="8,0", t_grid="0.5,1,2", delta=3.0, C=1.0, k_max=3)
def run_chain(cfg):
    sys_ = make_system(cfg.system)
    cover = cv.weak_cover_from_uniform(make_cover(cfg), float(cfg.params["C"]))
    stats = et.simulate_chain(sys_, cover, _x0(cfg, 2), cfg.mc.horizon, cfg.mc.n_paths, cfg.mc.dt,
                              cfg.mc.seed, k_max=int(cfg.params["k_max"]),
                              explosion_radius=cfg.mc.explosion_radius, workers=cfg.mc.workers)
    t_grid = _floats(cfg.params["t_grid"], "t_grid")
    delta, C = float(cfg.params["delta"]), float(cfg.params["C"])
    ok = all(et.check_quadratic_tail(c, delta, C).passed
             for c in stats.increment_tail_estimates(t_grid).values())
    summary = {"verdict": "pass" if ok else "fail", "coverage_violations": stats.coverage_violations,
               "finite_counts": stats.finite_counts, "exploded": stats.exploded}
    return {"chain.csv": stats.to_csv(t_grid)}, summary, ok


@experiment("cover-verify", "chart bounds of a growth cover; writes certificate.json and cover.csv",
            grid=9, certificate_radius=100.0, load=None)
def run_cover_verify(cfg):
    sys_ = make_system(cfg.system)
    if cfg.params.get("load"):
        weak = cv.load_certificate(Path(cfg.params["load"]).read_text())
        fam = weak.family
    else:
        fam = make_cover(cfg)
        weak = cv.weak_cover_from_uniform(fam, float(cfg.cover.get("C", 1.0)),
                                          float(cfg.params["certificate_radius"]))
    rep = cv.verify_uniform_cover(fam, sys_, grid=int(cfg.params["grid"]))
    csv = ("n_charts,worst_bound,k,worst_chart\n"
           f"{rep.n_charts},{rep.worst_bound!r},{float(rep.k)!r},{rep.worst_chart}\n")
    files = {"cover.csv": csv}
    if not cfg.params.get("load"):
        files["certificate.json"] = cv.dump_certificate(weak, float(cfg.params["certificate_radius"])) + "\n"
    return files, {"verdict": "pass" if rep.passed else "fail", "worst_bound": rep.worst_bound,
                   "k": rep.k}, rep.passed


@experiment("deltas", "delta_n = min(c1/sqrt(K(3n+1)), delta0); CSV n,delta,partial_sum,renormalized",
            curvature="r^2", c1=1.0, delta0=None, a=None, N=10000)
def run_deltas(cfg):
    p = cfg.params
    d0 = p["delta0"]
    if d0 is None:
        d0 = et.hsu_delta0(float(p["a"])) if p["a"] is not None else 1.0
    seq = et.ricci_delta_sequence(make_curvature(p["curvature"]), float(p["c1"]), float(d0), int(p["N"]))
    ren = cv.renormalize_deltas(seq.values)
    lines = ["n,delta,partial_sum,renormalized"]
    for i, (d, s, r) in enumerate(zip(seq.values, seq.partial_sums, ren), start=1):
        lines.append(f"{i},{float(d)!r},{float(s)!r},{float(r)!r}")
    return ({"deltas.csv": "\n".join(lines) + "\n"},
            {"divergence_verdict": seq.divergence_verdict, "delta0": float(d0),
             "partial_sum": float(seq.partial_sums[-1])}, True)


@experiment("nonexplosion", "certified bound on P{xi < t}; CSV eps,p,bound",
            sequence="harmonic", curvature="r^2", c1=1.0, delta0=1.0, N=100000, C=1.0,
            start_index=1, eps="0.5,0.25,0.125")
def run_nonexplosion(cfg):
    p = cfg.params
    N = int(p["N"])
    if p["sequence"] == "harmonic":
        vals = 1.0 / np.arange(1, N + 1)
    elif p["sequence"] == "ricci":
        vals = et.ricci_delta_sequence(make_curvature(p["curvature"]), float(p["c1"]),
                                       float(p["delta0"]), N).values
    else:
        raise ConfigError("sequence: 'harmonic' or 'ricci'")
    seq = et.DeltaSequence.from_values(vals)
    certs = et.nonexplosion_sweep(seq, float(p["C"]), int(p["start_index"]), cfg.mc.horizon,
                                  _floats(p["eps"], "eps"))
    lines = ["eps,p,bound"] + [f"{c.eps!r},{c.p},{c.bound!r}" for c in certs]
    return ({"certificate.csv": "\n".join(lines) + "\n"},
            {"divergence_verdict": seq.divergence_verdict, "certificates": len(certs),
             "smallest_bound": min((c.bound for c in certs), default=math.nan)}, bool(certs))


def _direction(cfg, dim):
    d = np.asarray(_floats(cfg.params.get("direction") or "1" + ",0" * (dim - 1), "direction"))
    if d.size != dim:
        raise ConfigError(f"direction: expected {dim} coordinates")
    return d / np.linalg.norm(d)


@experiment("boundary-cstar", "P_t f(x_n) - f(limit) along x_n = R_n u; one CSV radius_or_n,gap,ci per f",
            approach="100,1000,10000", direction=None, convention="kill")
def run_cstar(cfg):
    sys_ = make_system(cfg.system)
    model = bd.make_model(cfg.compactification, sys_.dim_state)
    u = _direction(cfg, sys_.dim_state)
    approach = np.array([r * u for r in _floats(cfg.params["approach"], "approach")])
    limit = model.boundary_projection(approach[-1])
    rep = bd.check_cstar(sys_, model, limit, approach, cfg.mc.horizon, cfg.mc.n_paths, cfg.mc.dt,
                         cfg.mc.seed, convention=cfg.params["convention"],
                         explosion_radius=cfg.mc.explosion_radius, workers=cfg.mc.workers)
    files = {f"cstar_{k}.csv": s.to_csv() for k, s in rep.series.items()}
    summary = {f"verdict_{k}": s.verdict for k, s in rep.series.items()}
    summary["verdict"] = rep.verdict
    return files, summary, rep.verdict is not bd.FAILS


@experiment("boundary-c0", "P{hit K by t} from |x| -> inf; CSV radius_or_n,gap,ci",
            k_radius=1.0, start_radii="4,16,64", direction=None, threshold=0.05)
def run_c0(cfg):
    sys_ = make_system(cfg.system)
    n = sys_.dim_state
    rep = bd.check_c0(sys_, Ball(np.zeros(n), float(cfg.params["k_radius"])), cfg.mc.horizon,
                      _floats(cfg.params["start_radii"], "start_radii"), cfg.mc.n_paths, cfg.mc.dt,
                      cfg.mc.seed, direction=_direction(cfg, n), threshold=float(cfg.params["threshold"]),
                      explosion_radius=cfg.mc.explosion_radius, workers=cfg.mc.workers)
    return ({"c0.csv": rep.to_csv()},
            {"verdict": "consistent" if rep.consistent else "inconsistent"}, rep.consistent)


@experiment("ball-criterion", "compactified size of B_r(x_n); CSV radius_or_n,gap,ci",
            radii="10,100,1000,10000,100000", ball_radius=1.0, angle=0.0, samples=128)
def run_ball(cfg):
    model = bd.make_model(cfg.compactification, 2)
    radii = _floats(cfg.params["radii"], "radii")
    a = float(cfg.params["angle"])
    if isinstance(model, bd.CylinderEnds):
        seq = np.array([[r, a] for r in radii])
    else:
        seq = np.array([[r * math.cos(a), r * math.sin(a)] for r in radii])
    rep = bd.check_ball_convergence(model, seq, float(cfg.params["ball_radius"]),
                                    samples=int(cfg.params["samples"]), seed=cfg.mc.seed)
    lines = ["radius_or_n,gap,ci"] + [f"{r!r},{float(v)!r},0.0" for r, v in zip(radii, rep.values)]
    return {"ball.csv": "\n".join(lines) + "\n"}, {"holds": rep.holds}, True


@experiment("counterexample", "angle law of x0 e^{iB_t + t/2}; CSV x0_modulus,angle_mean,angle_variance,modulus",
            mc=McConfig(n_paths=100_000, dt=1e-3), moduli="1,1000,1000000", cross_check_paths=8)
def run_counterexample(cfg):
    lines = ["x0_modulus,angle_mean,angle_variance,modulus"]
    worst, err = 0.0, 0.0
    t = cfg.mc.horizon
    for m in _floats(cfg.params["moduli"], "moduli"):
        law = bd.counterexample_angle_law([m, 0.0], t, cfg.mc.n_paths, cfg.mc.seed,
                                          cross_check_paths=int(cfg.params["cross_check_paths"]),
                                          dt=cfg.mc.dt)
        var = law.angle_variance
        worst = max(worst, abs(var - t) / t)
        err = max(err, law.integration_rel_error)
        lines.append(f"{m!r},{float(np.mean(law.angles))!r},{var!r},{law.modulus!r}")
    ok = worst <= 0.05
    return ({"angle.csv": "\n".join(lines) + "\n"},
            {"verdict": "pass" if ok else "fail", "max_relative_variance_error": worst,
             "integration_rel_error": err}, ok)


@experiment("manifold", "radial explosion, curvature and volume tests; CSV R,log_volume,log_comparison",
            warp="hyperbolic", dim=3, r0=1.0, r_max=1000.0, radii="1,2,5,10")
def run_manifold(cfg):
    p = cfg.params
    man = mf.RotSymManifold(int(p["dim"]), make_warp(p["warp"]))
    exp = mf.explosion_experiment(man, float(p["r0"]), cfg.mc.horizon, cfg.mc.n_paths, cfg.mc.dt,
                                  cfg.mc.seed, explosion_radius=cfg.mc.explosion_radius,
                                  workers=cfg.mc.workers)
    prof = mf.curvature_profile(man)
    aa = mf.assumption_a(prof, float(p["r_max"]))
    vp = mf.volume_profile(man, _floats(p["radii"], "radii"))
    summary = {"exploded_fraction": exp.fraction, "exploded_ci": (exp.ci_lower, exp.ci_upper),
               "assumption_a": aa.verdict, "grigoryan_verdict": vp.grigoryan_verdict,
               "comparison_pass": vp.comparison_ok}
    return {"manifold.csv": vp.to_csv()}, summary, vp.comparison_ok


# --------------------------------------------------------------------------- argparse

_COMMON = {
    "preset": ("system", str, "system preset, e.g. bm1d, sublinear(0.5), radial(hyperbolic,3)"),
    "n_paths": ("n_paths", int, "Monte-Carlo paths (alias --n)"),
    "dt": ("dt", float, "time step"),
    "seed": ("seed", int, "base seed"),
    "horizon": ("horizon", float, "time horizon (alias --t)"),
    "explosion_radius": ("explosion_radius", float, "explosion radius"),
    "workers": ("workers", int, "worker threads; results do not depend on it"),
    "compactification": ("compactification", str, "one_point, sphere or cylinder"),
    "out": ("out", str, f"output directory (default ${ENV_OUT} or diffcover_out)"),
    "cover_mode": ("cover_mode", str, "linear or sublinear"),
    "cover_alpha": ("cover_alpha", float, "sublinear exponent"),
    "cover_region_radius": ("cover_region_radius", float, "radius the cover must reach"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diffcover", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment")
    exps = run.add_subparsers(dest="experiment", required=True)
    for name, ex in EXPERIMENTS.items():
        p = exps.add_parser(name, help=ex.help, description=ex.help)
        p.add_argument("--config", help="YAML experiment file")
        for flag, (dest, typ, hlp) in _COMMON.items():
            names = ["--" + flag.replace("_", "-")]
            if flag == "n_paths":
                names.append("--n")
            if flag == "horizon":
                names.append("--t")
            p.add_argument(*names, dest=dest, type=typ, default=argparse.SUPPRESS, help=hlp)
        for key, default in ex.params.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=argparse.SUPPRESS,
                           help=f"default: {default}")
    return ap


def run(cfg: ExperimentConfig) -> int:
    ex = EXPERIMENTS[cfg.experiment]
    t0 = time.perf_counter()
    files, summary, ok = ex.func(cfg)
    elapsed = time.perf_counter() - t0
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)
    lines = [f"experiment: {cfg.experiment}", f"seed: {cfg.mc.seed}",
             f"config: {json.dumps(cfg.echo(), sort_keys=True, default=str)}"]
    lines += [f"{k}: {_fmt(v)}" for k, v in summary.items()]
    lines += [f"files: {','.join(sorted(files))}", f"runtime_s: {elapsed:.3f}",
              f"status: {'ok' if ok else 'fail'}"]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines[:1] + lines[3:]))
    return 0 if ok else 1


def main(argv: Optional[list] = None) -> int:
    args = vars(build_parser().parse_args(argv))
    name = args.pop("experiment")
    args.pop("command")
    path = args.pop("config", None)
    try:
        raw = load_config_text(Path(path).read_text(), path) if path else {}
        cfg = build_config(raw, args, name)
        return run(cfg)
    except (ConfigError, OSError) as exc:
        print(f"diffcover: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"diffcover: invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
