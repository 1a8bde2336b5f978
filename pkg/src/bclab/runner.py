"""Experiment orchestration: deterministic tasks, artifacts and the run manifest."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
import hashlib
import json
import logging
import math
from pathlib import Path
import traceback
import zlib

import numpy as np

from . import __version__
from .config import RunConfig, selected
from .cones import verify_cone_lemmas
from .dynamics import MapParams, random_points
from .ergodicity import ControlMap, Observable, correlation_decay, hopf_reports
from .io import dumps, write_csv, write_json
from .lyapunov import center_exponents_batch
from .pliss import (
    PlissParams,
    SetProxyConfig,
    estimate_set_measures,
    pliss_density_identity,
    pliss_times,
    pliss_times_bruteforce,
)
from .ucurves import (
    I_n_decomposed,
    I_n_direct,
    bounded_distortion,
    make_ucurve,
    piece_census,
    piece_count,
)

log = logging.getLogger(__name__)


def derive_key(master: int, *path) -> int:
    """128-bit Philox key for the task addressed by (master, *path)."""
    words = [int(master) & 0xFFFFFFFF, int(master) >> 32]
    for p in path:
        words.append(zlib.crc32(p.encode()) if isinstance(p, str) else int(p))
    state = np.random.SeedSequence(words).generate_state(2, np.uint64)
    return int(state[0]) | (int(state[1]) << 64)


def stream(master: int, *path) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_key(master, *path)))


def seed_points(master: int, tag: str, count: int) -> np.ndarray:
    """One uniform torus point per index, each from its own stream."""
    return np.concatenate([random_points(stream(master, tag, i), 1) for i in range(count)])


@dataclass
class ExperimentResult:
    name: str
    status: str = "passed"
    checks: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    error: str | None = None

    def check(self, name: str, ok) -> bool:
        ok = bool(ok)
        self.checks[name] = ok
        if not ok and self.status == "passed":
            self.status = "failed"
        return ok

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "checks": self.checks,
            "artifacts": self.artifacts,
            "summary": self.summary,
            "error": self.error,
        }


@dataclass
class RunManifest:
    config: dict
    tool_version: str
    run_dir: str
    started: str
    finished: str = ""
    experiments: dict = field(default_factory=dict)

    @property
    def artifacts(self) -> list:
        return [a for r in self.experiments.values() for a in r.artifacts]

    @property
    def exit_code(self) -> int:
        statuses = [r.status for r in self.experiments.values()]
        if "error" in statuses:
            return 2
        if "failed" in statuses:
            return 1
        return 0

    def to_dict(self) -> dict:
        counts = {s: sum(r.status == s for r in self.experiments.values()) for s in ("passed", "failed", "error")}
        return {
            "config": self.config,
            "tool_version": self.tool_version,
            "run_dir": self.run_dir,
            "started": self.started,
            "finished": self.finished,
            "experiments": {k: v.to_dict() for k, v in self.experiments.items()},
            "summary": counts,
            "exit_code": self.exit_code,
        }


class _Context:
    def __init__(self, cfg: RunConfig, run_dir: Path, result: ExperimentResult, prefix: str = ""):
        self.cfg = cfg
        self.dir = run_dir
        self.result = result
        self.prefix = prefix

    def csv(self, name, rows, columns=None):
        path = write_csv(self.dir / f"{self.prefix}{name}.csv", rows, columns)
        self.result.artifacts.append(path.name)

    def json(self, name, obj):
        path = write_json(self.dir / f"{self.prefix}{name}.json", obj)
        self.result.artifacts.append(path.name)


def _chunked(fn, items, threads):
    """Apply fn to index-ordered chunks of items and concatenate in order."""
    if threads <= 1 or len(items) < 2:
        return fn(items)
    chunks = np.array_split(items, min(threads, len(items)))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.concatenate(list(pool.map(fn, chunks)))


# --- experiments ---------------------------------------------------------


def _exponents(ctx: _Context, params: MapParams):
    cfg, ex = ctx.cfg, ctx.cfg.exponents
    pts = seed_points(cfg.seed, "exponents", ex.seeds)
    lam = _chunked(lambda p: center_exponents_batch(params, p, ex.n, ex.burn_in), pts, cfg.threads)
    strong = 2 * params.N * math.log(params.hyperbolic.mu)
    fiber_exact = not any(s.target >= 2 and s.eps != 0 for s in params.shears)
    rows = []
    for i, (p, (lp, lm)) in enumerate(zip(pts, lam)):
        rows.append({
            "seed_index": i, "N": params.N, "n": ex.n, "burn_in": ex.burn_in,
            "lambda1": strong if fiber_exact else float("nan"), "lambda2": lp, "lambda3": lm,
            "lambda4": -strong if fiber_exact else float("nan"),
            "center_sum_residual": abs(lp + lm),
            "x": p[0], "y": p[1], "z": p[2], "w": p[3],
        })
    ctx.csv("exponents", rows)
    bound = ex.bound_factor * math.log(params.N)
    frac = float(np.mean(lam[:, 0] >= bound))
    summary = {"N": params.N, "seeds": ex.seeds, "n": ex.n, "bound": bound, "fraction_above_bound": frac,
               "median_lambda_plus": float(np.median(lam[:, 0]))}
    ctx.result.check("fraction_above_bound", frac >= ex.min_fraction)
    if ex.trend_N:
        medians = []
        for N in ex.trend_N:
            tp = seed_points(cfg.seed, "exponents-trend", ex.trend_seeds)
            pN = replace(params, N=int(N))
            lt = _chunked(lambda p: center_exponents_batch(pN, p, ex.n, ex.burn_in), tp, cfg.threads)
            medians.append(float(np.median(lt[:, 0]) / math.log(N)))
        summary["trend"] = dict(zip((str(n) for n in ex.trend_N), medians))
        ctx.result.check("median_ratio_nondecreasing", all(b >= a for a, b in zip(medians, medians[1:])))
    ctx.json("exponents", summary)


def _pliss(ctx: _Context, params: MapParams):
    cfg, pl, sc = ctx.cfg, ctx.cfg.pliss, ctx.cfg.scales
    proxy = SetProxyConfig(sc.horizon, sc.delta, sc.n_back, sc.n_fwd)
    rep = estimate_set_measures(params, proxy, pl.samples, derive_key(cfg.seed, "pliss"))
    ctx.csv("sets", [dict(r, N=params.N, horizon=proxy.horizon) for r in rep.rows],
            ["sample_index", "z_minus", "z_plus", "z", "x", "first_failure_n", "N", "horizon",
             "x0", "y0", "z0", "w0"])
    rng = stream(cfg.seed, "pliss-oracle")
    mismatches = 0
    for _ in range(pl.sequences):
        a1 = float(rng.uniform(-4, 0))
        pp = PlissParams(float(rng.uniform(0.01, 1.0)), a1, a1 + float(rng.uniform(0.5, 3.0)))
        seq = rng.uniform(a1, a1 + 4, size=int(rng.integers(1, pl.max_length + 1)))
        seq = np.where(seq <= a1, a1 + 1e-9, seq)
        if pliss_times(seq, pp).times != pliss_times_bruteforce(seq, pp):
            mismatches += 1
    ident = pliss_density_identity(params.N, sc.delta)
    ctx.result.check("oracle_equivalence", mismatches == 0)
    ctx.result.check("density_identity_arithmetic", abs(ident["lhs"] - ident["middle"]) <= 1e-12)
    ctx.json("pliss", {
        "N": params.N, "samples": rep.sample_count, "horizon": rep.horizon, "T": rep.T,
        "z_fraction": rep.z_fraction, "x_fraction": rep.x_fraction, "measure_bound": rep.bound,
        "measure_bound_met": rep.z_fraction >= rep.bound,
        "oracle_sequences": pl.sequences, "oracle_mismatches": mismatches, "density_identity": ident,
    })


def _cones(ctx: _Context, params: MapParams):
    cfg, co = ctx.cfg, ctx.cfg.cones
    scales = cfg.scales_config(params.N)
    reports = verify_cone_lemmas(params, scales, co.samples, derive_key(cfg.seed, "cones"),
                                 lemmas=co.lemmas, z_sample_count=co.z_samples)
    for r in reports:
        ctx.result.check(r.lemma, r.passed)
    ctx.json("cones", {"N": params.N, "scales": scales.to_dict(), "reports": [r.to_dict() for r in reports]})


def _ucurve(ctx: _Context, params: MapParams):
    cfg, uc = ctx.cfg, ctx.cfg.ucurve
    scales = cfg.scales_config(params.N)
    seed = seed_points(cfg.seed, "ucurve", 1)[0]
    curve = make_ucurve(params, seed, uc.parametrization)
    census = piece_census(curve, k_max=uc.k_max, delta_tilde=scales.delta_tilde, K=scales.K,
                          mode=uc.census, samples=uc.samples, rng=stream(cfg.seed, "ucurve-census"),
                          eps2=scales.eps2, eps3=scales.eps3, cap=cfg.scales.piece_cap,
                          e_pieces=uc.e_pieces)
    ctx.csv("census", [dict(c.as_row(), N=params.N, parametrization=uc.parametrization,
                            delta_tilde=scales.delta_tilde, K=scales.K) for c in census])
    e_bound = (1 - 7 * scales.delta_tilde) * math.log(params.N)
    levels = []
    for c in census:
        lv = {"k": c.k, "good_fraction": c.good_fraction, "count_check": c.count_check,
              "weighted_check": c.weighted_check, "bracket_check": c.bracket_check, **c.extra}
        if uc.census == "sampled":
            ctx.result.check(f"good_fraction_k{c.k}", c.fraction_check)
            if "E_min_good" in c.extra:
                ctx.result.check(f"E_bound_k{c.k}", c.extra["E_min_good"] >= e_bound)
        else:
            ctx.result.check(f"count_k{c.k}", c.count_check)
            ctx.result.check(f"weighted_k{c.k}", c.weighted_check)
            ctx.result.check(f"bracket_k{c.k}", c.bracket_check)
        levels.append(lv)
    ctx.json("ucurve", {"N": params.N, "seed": seed, "parametrization": uc.parametrization,
                        "census": uc.census, "E_bound": e_bound, "K": scales.K, "levels": levels})


def _formula(ctx: _Context, params: MapParams):
    cfg, fc = ctx.cfg, ctx.cfg.formula_check
    p = MapParams(fc.N, params.A)
    seed = seed_points(cfg.seed, "formula", 1)[0]
    out = {"N": fc.N, "seed": seed, "modes": {}}
    for mode in ("fibered", "general"):
        curve = make_ucurve(p, seed, mode)
        runs = []
        for n in range(1, fc.n + 1):
            direct = I_n_direct(curve, n=n)
            dec = I_n_decomposed(curve, n=n, q=fc.q, cap=cfg.scales.piece_cap, eps1=cfg.scales.eps1)
            rel = abs(direct - dec.value) / max(abs(direct), 1e-300)
            ctx.result.check(f"{mode}_n{n}_equivalence", rel <= fc.tolerance)
            for lv in dec.levels:
                ctx.result.check(f"{mode}_n{n}_k{lv.k}_remainder", abs(lv.remainder) <= lv.remainder_bound)
                if mode == "fibered":
                    ctx.result.check(f"{mode}_n{n}_k{lv.k}_count", lv.full_pieces == piece_count(p, lv.k))
                    ctx.result.check(f"{mode}_n{n}_k{lv.k}_constant_J", lv.jacobian_spread <= 1e-12)
            runs.append({"n": n, "direct": direct, "decomposed": dec.value, "relative_difference": rel,
                         "levels": [vars(lv) for lv in dec.levels]})
        out["modes"][mode] = runs
    ctx.json("formula_check", out)


def _ergodicity(ctx: _Context, params: MapParams):
    cfg, er = ctx.cfg, ctx.cfg.ergodicity
    obs = [Observable.parse(o) for o in er.observables]
    seeds = seed_points(cfg.seed, "ergodicity", er.seeds)
    reports = hopf_reports(params, seeds, obs, er.T, er.nbatch, cfg.threads)
    rows = [dict(r, N=params.N) for rep in reports for r in rep.rows()]
    ctx.csv("birkhoff", rows)
    for rep in reports:
        ok = rep.single_cluster and rep.max_deviation <= er.tolerance and rep.max_gap <= er.tolerance
        ctx.result.check(f"consistent[{rep.observable}]", ok)
    summary = {"N": params.N, "seeds": er.seeds, "T": er.T, "tolerance": er.tolerance,
               "reports": [dict(r.to_dict(), verdict=r.verdict(er.tolerance)) for r in reports]}
    if er.control:
        ctl = hopf_reports(ControlMap(er.control_Nc), seeds, obs[:1], er.T, er.nbatch, cfg.threads)[0]
        ctx.result.check("control_detects_components", ctl.clusters >= 2)
        summary["control"] = dict(ctl.to_dict(), Nc=er.control_Nc)
    corr_rows = []
    if er.lags:
        rng = stream(cfg.seed, "correlation")
        for o in obs:
            series = correlation_decay(params, o, o, er.lags, er.correlation_samples, rng)
            corr_rows += [dict(r, observable=o.name, N=params.N) for r in series.rows()]
        ctx.csv("correlation", corr_rows)
    ctx.json("ergodicity", summary)


def _perturb(ctx: _Context, params: MapParams):
    cfg, pt = ctx.cfg, ctx.cfg.perturb
    shear = pt.shear.build()
    pert = replace(params, post_shears=params.post_shears + (shear,)) if pt.shear.where == "post" \
        else replace(params, pre_shears=params.pre_shears + (shear,))
    for name, fn in (("exponents", _exponents), ("cones", _cones), ("ergodicity", _ergodicity)):
        sub = ExperimentResult(name)
        fn(_Context(cfg, ctx.dir, sub, prefix=f"{ctx.prefix}perturb-"), pert)
        ctx.result.artifacts += sub.artifacts
        for k, v in sub.checks.items():
            ctx.result.check(f"{name}.{k}", v)
    base = MapParams(pt.distortion_N, params.A)
    dpert = replace(pert, N=pt.distortion_N)
    curve = make_ucurve(base, seed_points(cfg.seed, "distortion", 1)[0], "fibered")
    worst = {}
    for k in range(pt.distortion_k_max + 1):
        r = bounded_distortion(curve, k, pt.distortion_pairs, pt.distortion_pieces,
                               stream(cfg.seed, "distortion", k), params=dpert)
        worst[str(k)] = math.log(r)
        ctx.result.check(f"distortion_k{k}", math.log(r) <= cfg.scales.eps3)
    ctx.json("perturb", {"shear": vars(pt.shear), "N": params.N, "distortion_N": pt.distortion_N,
                         "distortion_log_ratio": worst, "eps3": cfg.scales.eps3})


RUNNERS = {
    "exponents": _exponents,
    "pliss": _pliss,
    "cones": _cones,
    "ucurve": _ucurve,
    "ergodicity": _ergodicity,
    "perturb": _perturb,
    "formula-check": _formula,
}


def config_hash(cfg: RunConfig) -> str:
    d = cfg.to_dict()
    d.pop("out", None)
    d.pop("threads", None)
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def make_run_dir(cfg: RunConfig) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    base = Path(cfg.out) / f"run-{stamp}-{config_hash(cfg)}"
    path, i = base, 1
    while path.exists():
        i += 1
        path = base.with_name(f"{base.name}-{i}")
    path.mkdir(parents=True)
    return path


def run(cfg: RunConfig, run_dir=None) -> RunManifest:
    """Execute the selected experiments; failures in one do not stop the others."""
    run_dir = Path(run_dir) if run_dir is not None else make_run_dir(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.to_dict(), __version__, str(run_dir), _now())
    params = cfg.params()
    for name in selected(cfg):
        result = ExperimentResult(name)
        log.info("running %s", name)
        try:
            RUNNERS[name](_Context(cfg, run_dir, result), params)
        except Exception as exc:  # recorded, the run continues
            result.status = "error"
            result.error = f"{type(exc).__name__}: {exc}"
            log.debug("%s failed\n%s", name, traceback.format_exc())
        manifest.experiments[name] = result
    manifest.finished = _now()
    (run_dir / "manifest.json").write_text(dumps(manifest.to_dict()), encoding="utf-8")
    return manifest
