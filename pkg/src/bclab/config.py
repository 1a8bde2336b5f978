"""Run configuration: TOML schema, defaults and validation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
import math

import tomli

from .dynamics import MapParams, ShearPerturbation
from .scales import ScalesConfig
from .torus import IntMat2

EXPERIMENTS = ("exponents", "pliss", "cones", "ucurve", "ergodicity", "perturb", "formula-check")
_AXIS = {"x": 0, "y": 1, "z": 2, "w": 3}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists one message per problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ShearSpec:
    target: str = "x"
    freq: tuple = (0, 1, 1, 0)
    eps: float = 1e-3
    where: str = "post"

    def build(self) -> ShearPerturbation:
        return ShearPerturbation(_AXIS[self.target], tuple(self.freq), self.eps)


@dataclass(frozen=True)
class MapSection:
    N: int = 100
    A: tuple = ((2, 1), (1, 1))
    shears: tuple = ()

    def build(self, N: int | None = None) -> MapParams:
        pre = tuple(s.build() for s in self.shears if s.where == "pre")
        post = tuple(s.build() for s in self.shears if s.where == "post")
        return MapParams(self.N if N is None else N, IntMat2.from_rows(self.A), pre, post)


@dataclass(frozen=True)
class ScalesSection:
    delta: float = 0.001
    delta_tilde: float = 0.1
    theta3_factor: float = 2.0
    K: float = 10.0
    eps1: float = 0.05
    eps2: float = 0.05
    eps3: float = 0.05
    beta: float = 0.01
    horizon: int = 64
    n_back: int = 32
    n_fwd: int = 32
    piece_cap: int = 10**6

    def build(self, N: int) -> ScalesConfig:
        return ScalesConfig(N, self.delta, self.delta_tilde, self.theta3_factor, self.K,
                            self.eps1, self.eps2, self.eps3, self.beta)


@dataclass(frozen=True)
class ExponentsSection:
    seeds: int = 1000
    n: int = 10_000
    burn_in: int = 100
    bound_factor: float = 0.75
    min_fraction: float = 0.99
    trend_N: tuple = ()
    trend_seeds: int = 200


@dataclass(frozen=True)
class PlissSection:
    samples: int = 2000
    sequences: int = 1000
    max_length: int = 16


@dataclass(frozen=True)
class ConesSection:
    samples: int = 100_000
    z_samples: int = 2000
    lemmas: tuple = ("cone_containment", "expansion", "good_field_angle")


@dataclass(frozen=True)
class UCurveSection:
    parametrization: str = "fibered"
    census: str = "sampled"
    k_max: int = 3
    samples: int = 10_000
    e_pieces: int = 2000


@dataclass(frozen=True)
class ErgodicitySection:
    seeds: int = 100
    T: int = 1_000_000
    observables: tuple = ("cos x", "cos z", "cos(x+y)")
    tolerance: float = 0.05
    nbatch: int = 100
    control: bool = True
    control_Nc: float = 0.5
    lags: tuple = (0, 1, 2, 3)
    correlation_samples: int = 100_000


@dataclass(frozen=True)
class PerturbSection:
    shear: ShearSpec = ShearSpec()
    distortion_N: int = 10
    distortion_k_max: int = 3
    distortion_pieces: int = 16
    distortion_pairs: int = 64


@dataclass(frozen=True)
class FormulaSection:
    N: int = 3
    n: int = 2
    q: int = 32
    tolerance: float = 1e-3


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int = 1
    out: str = "runs"
    experiments: tuple = ()
    map: MapSection = MapSection()
    scales: ScalesSection = ScalesSection()
    exponents: ExponentsSection = ExponentsSection()
    pliss: PlissSection = PlissSection()
    cones: ConesSection = ConesSection()
    ucurve: UCurveSection = UCurveSection()
    ergodicity: ErgodicitySection = ErgodicitySection()
    perturb: PerturbSection = PerturbSection()
    formula_check: FormulaSection = FormulaSection()

    def params(self, N: int | None = None) -> MapParams:
        return self.map.build(N)

    def scales_config(self, N: int | None = None) -> ScalesConfig:
        return self.scales.build(self.map.N if N is None else N)

    def to_dict(self) -> dict:
        d = _plain(asdict(self))
        d["derived"] = self.scales_config().derived()
        return d

    def with_overrides(self, **kw) -> "RunConfig":
        """Apply CLI-style overrides: seed, threads, out, N, experiments."""
        out = self
        if kw.get("N") is not None:
            out = replace(out, map=replace(out.map, N=int(kw["N"])))
        for key in ("seed", "threads", "out"):
            if kw.get(key) is not None:
                out = replace(out, **{key: kw[key]})
        if kw.get("experiments") is not None:
            out = replace(out, experiments=tuple(kw["experiments"]))
        validate(out)
        return out


_SECTIONS = {
    "map": MapSection,
    "scales": ScalesSection,
    "exponents": ExponentsSection,
    "pliss": PlissSection,
    "cones": ConesSection,
    "ucurve": UCurveSection,
    "ergodicity": ErgodicitySection,
    "perturb": PerturbSection,
    "formula_check": FormulaSection,
}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def _coerce(name, cls, raw, errors):
    if not isinstance(raw, dict):
        errors.append(f"[{name}] must be a table")
        return cls()
    known = {f.name: f for f in fields(cls)}
    kw = {}
    for key, val in raw.items():
        if key not in known:
            errors.append(f"unknown key {name}.{key}")
            continue
        if cls is MapSection and key == "shears":
            kw[key] = tuple(_coerce(f"{name}.shears[{i}]", ShearSpec, s, errors) for i, s in enumerate(val))
        elif cls is PerturbSection and key == "shear":
            kw[key] = _coerce(f"{name}.shear", ShearSpec, val, errors)
        else:
            default = known[key].default
            if isinstance(default, bool) and not isinstance(val, bool):
                errors.append(f"{name}.{key} must be a boolean")
                continue
            if isinstance(default, int) and not isinstance(default, bool) and not isinstance(val, int):
                errors.append(f"{name}.{key} must be an integer")
                continue
            if isinstance(default, float) and not isinstance(val, (int, float)):
                errors.append(f"{name}.{key} must be a number")
                continue
            if isinstance(default, float):
                val = float(val)
            kw[key] = _tuplify(val)
    return cls(**kw)


def from_dict(data: dict) -> RunConfig:
    errors = []
    kw = {}
    top = {f.name for f in fields(RunConfig)}
    for key, val in data.items():
        skey = key.replace("-", "_")
        if skey in _SECTIONS:
            kw[skey] = _coerce(key, _SECTIONS[skey], val, errors)
        elif skey in top:
            kw[skey] = _tuplify(val)
        else:
            errors.append(f"unknown key {key}")
    if errors:
        raise ConfigError(errors)
    cfg = RunConfig(**kw)
    validate(cfg)
    return cfg


def load(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror}"]) from exc
    return from_dict(data)


def loads(text: str) -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([str(exc)]) from exc
    return from_dict(data)


def _check_shear(where, s, errors):
    if s.target not in _AXIS:
        errors.append(f"{where}.target must be one of x, y, z, w")
        return
    if s.where not in ("pre", "post"):
        errors.append(f"{where}.where must be 'pre' or 'post'")
    if len(s.freq) != 4 or not all(isinstance(c, int) for c in s.freq):
        errors.append(f"{where}.freq must be four integers")
        return
    try:
        s.build()
    except ValueError as exc:
        errors.append(f"{where}: {exc}")


def validate(cfg: RunConfig) -> None:
    errors = []
    if not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        errors.append("seed must be an unsigned 64-bit integer")
    if not isinstance(cfg.threads, int) or cfg.threads < 1:
        errors.append("threads must be >= 1")
    for e in cfg.experiments:
        if e not in EXPERIMENTS and e != "all":
            errors.append(f"unknown experiment {e!r}")
    if not isinstance(cfg.map.N, int) or cfg.map.N < 1:
        errors.append("map.N must be a positive integer")
    try:
        if not IntMat2.from_rows(cfg.map.A).is_hyperbolic:
            errors.append("map.A must be hyperbolic")
    except (ValueError, TypeError) as exc:
        errors.append(f"map.A: {exc}")
    for i, s in enumerate(cfg.map.shears):
        _check_shear(f"map.shears[{i}]", s, errors)
    _check_shear("perturb.shear", cfg.perturb.shear, errors)
    if not errors:
        try:
            cfg.scales_config()
        except ValueError as exc:
            errors.append(f"scales: {exc}")
    sc = cfg.scales
    for name in ("horizon", "n_back", "n_fwd", "piece_cap"):
        v = getattr(sc, name)
        if v < (0 if name == "horizon" else 1):
            errors.append(f"scales.{name} out of range")
    ex = cfg.exponents
    if ex.seeds < 1 or ex.n < 1 or ex.burn_in < 0:
        errors.append("exponents: seeds and n must be >= 1, burn_in >= 0")
    if not 0 <= ex.min_fraction <= 1:
        errors.append("exponents.min_fraction must lie in [0, 1]")
    if cfg.pliss.samples < 1 or cfg.pliss.sequences < 0 or cfg.pliss.max_length < 1:
        errors.append("pliss: samples and max_length must be >= 1")
    if cfg.cones.samples < 1:
        errors.append("cones.samples must be >= 1")
    uc = cfg.ucurve
    if uc.parametrization not in ("fibered", "general"):
        errors.append("ucurve.parametrization must be 'fibered' or 'general'")
    if uc.census not in ("sampled", "exhaustive"):
        errors.append("ucurve.census must be 'sampled' or 'exhaustive'")
    if uc.k_max < 0 or uc.samples < 1:
        errors.append("ucurve: k_max >= 0 and samples >= 1 required")
    er = cfg.ergodicity
    if er.seeds < 2 or er.T < 1 or er.nbatch < 2:
        errors.append("ergodicity: seeds >= 2, T >= 1 and nbatch >= 2 required")
    if any(n < 0 for n in er.lags):
        errors.append("ergodicity.lags must be >= 0")
    if not er.tolerance > 0 or not math.isfinite(er.tolerance):
        errors.append("ergodicity.tolerance must be > 0")
    fc = cfg.formula_check
    if fc.N < 1 or fc.n < 1 or fc.q < 2:
        errors.append("formula_check: N, n >= 1 and q >= 2 required")
    pt = cfg.perturb
    if pt.distortion_N < 1 or pt.distortion_k_max < 0:
        errors.append("perturb: distortion_N >= 1 and distortion_k_max >= 0 required")
    if errors:
        raise ConfigError(errors)


def selected(cfg: RunConfig) -> tuple:
    if "all" in cfg.experiments:
        return EXPERIMENTS
    return tuple(e for e in EXPERIMENTS if e in cfg.experiments)
