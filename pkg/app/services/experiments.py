"""Experiment configuration and orchestration behind the command line.

Each experiment kind evaluates one family of results over a grid and writes
one or more tables plus a JSON run manifest.
"""

import json
import logging
import sys
import time
from dataclasses import dataclass, field
from enum import Enum
from importlib import metadata
from pathlib import Path
from typing import Any, Literal, Mapping, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from app.config.settings import Settings, get_settings
from app.geometry.errors import ConfigError, GreedyRoutingError
from app.geometry.model import ModelParams, PathState, PolarPoint, validate_params
from app.numerics.elliptic import carlson_rf
from app.numerics.qmc import ImportanceSampler, QmcRule, load_generating_vector
from app.services.hop import (
    hop_distribution,
    kl_divergence,
    moment_asymptotic,
    moment_numeric,
    sink_cdf,
    sink_dependence_table,
    void_probability,
)
from app.services.measure import (
    DEFAULT_MODE,
    MeasureMode,
    dependent_q,
    intersection_q,
    q_rescaled,
    region_intersection_q,
)
from app.services.multihop import PathModel, full_zn, hops_distribution, independent_zn
from app.simulation.simulator import dkw_epsilon, ensemble

PACKAGE_NAME = "greedy-routing-analysis"
INTERSECTION_DRAWS = 100


class ExperimentKind(str, Enum):
    SINGLE_HOP = "single-hop"
    MEASURE_COMPARE = "measure-compare"
    MOMENTS = "moments"
    KL = "kl"
    ZN = "zn"
    HOPS = "hops"
    SIMULATE = "simulate"
    VALIDATE = "validate"


class GridConfig(BaseModel):
    """Evaluation grids; anything left unset is derived from the parameters."""

    u: Optional[list[float]] = Field(default=None, min_length=1)
    gamma: Optional[list[float]] = Field(default=None, min_length=1)
    z: Optional[list[float]] = Field(default=None, min_length=1)
    n: Optional[list[int]] = Field(default=None, min_length=1)
    lam: Optional[list[float]] = Field(default=None, min_length=1)
    p: Optional[list[float]] = Field(default=None, min_length=1)
    n_max: int = Field(default=12, ge=1)
    points: int = Field(default=20, ge=2)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ExperimentKind
    params: ModelParams
    mode: MeasureMode = DEFAULT_MODE
    model: PathModel = PathModel.DEPENDENT
    rule: QmcRule = Field(default_factory=QmcRule)
    importance: bool = True
    grid: GridConfig = Field(default_factory=GridConfig)
    n_runs: int = Field(default=10_000, ge=1)
    empirical: bool = False
    sleep: bool = False
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    progress: bool = False
    out: Path = Path("results")
    format: Literal["csv", "json"] = "csv"
    float_format: str = "%.12g"
    dkw_level: float = Field(default=0.05, gt=0, lt=1)

    @field_validator("params", mode="before")
    @classmethod
    def _params(cls, value: Any) -> Any:
        return validate_params(value) if isinstance(value, Mapping) else value

    @model_validator(mode="before")
    @classmethod
    def _sync_rule(cls, data: Any) -> Any:
        """The QMC rule inherits the experiment seed and worker count."""
        if not isinstance(data, Mapping):
            return data
        data = dict(data)
        rule = data.get("rule") or {}
        if isinstance(rule, QmcRule):
            rule = rule.model_dump()
        data["rule"] = {**rule, "seed": data.get("seed", 0), "threads": data.get("threads", 1)}
        return data


@dataclass
class ExperimentResult:
    kind: ExperimentKind
    tables: dict[str, pd.DataFrame]
    files: list[Path] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)
    passed: Optional[bool] = None


def read_config_file(path: Union[str, Path]) -> dict[str, Any]:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read experiment config {path}: {e}") from e


def _merge(base: dict[str, Any], extra: Mapping[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in extra.items():
        if value is None:
            continue
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = _merge(dict(out[key]), value)
        else:
            out[key] = value
    return out


def _defaults(settings: Settings) -> dict[str, Any]:
    qmc = settings.qmc
    return {
        "params": {"lambda": 30.0, "r": 1.0, "ell": 10.0},
        "rule": {
            "kind": qmc.kind,
            "points": qmc.points,
            "shifts": qmc.shifts,
            "batches": qmc.batches,
            "leap": qmc.leap,
            "budget": qmc.budget,
            "generating_vector": str(qmc.generating_vector) if qmc.generating_vector else None,
        },
        "seed": settings.run.seed if settings.run.seed is not None else 0,
        "threads": settings.run.threads,
        "n_runs": settings.simulation.runs,
        "dkw_level": settings.simulation.dkw_level,
        "out": str(settings.output.directory),
        "format": settings.output.format,
        "float_format": settings.output.float_format,
    }


def _resolve_rule(raw: dict[str, Any]) -> dict[str, Any]:
    rule = dict(raw.get("rule") or {})
    vector_file = rule.pop("generating_vector", None)
    if vector_file:
        n, z = load_generating_vector(vector_file)
        rule.update({"kind": "lattice", "points": n, "z": z})
    raw["rule"] = rule
    return raw


def build_config(
    kind: Union[ExperimentKind, str],
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    settings: Optional[Settings] = None,
) -> ExperimentConfig:
    """Settings defaults, then the TOML file, then explicit overrides."""
    settings = settings or get_settings()
    raw = _defaults(settings)
    if path is not None:
        raw = _merge(raw, read_config_file(path))
    overrides = overrides or {}
    raw = _merge(raw, overrides)
    if {"lambda", "p"} & {k for k, v in (overrides.get("params") or {}).items() if v is not None}:
        raw["params"] = {k: v for k, v in raw["params"].items() if k != "alpha"}
    raw["kind"] = ExperimentKind(kind)
    raw = _resolve_rule(raw)
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def _with_lambda(params: ModelParams, lam: float) -> ModelParams:
    return validate_params({"lambda": lam, "r": params.r, "ell": params.ell, "p": params.p})


def _prob(values) -> np.ndarray:
    return np.clip(np.asarray(values, dtype=float), 0.0, 1.0)


def _single_hop(config: ExperimentConfig) -> ExperimentResult:
    params = config.params
    ell, r = params.ell, params.r
    u = np.asarray(config.grid.u or np.linspace(ell - r, ell, config.grid.points))
    df = pd.DataFrame({"u": u, "cdf": sink_cdf(ell, u, params, config.mode)})
    summary = {"void_atom": void_probability(ell, params, config.mode)}
    if config.empirical:
        ens = ensemble(params, config.n_runs, config.seed, sleep=config.sleep, max_hops=1,
                       threads=config.threads, progress=config.progress, level=config.dkw_level)
        df["empirical"] = ens.first_hop_cdf(u)
        df["dkw"] = ens.band
        summary["empirical_void_rate"] = ens.first_void_rate
        summary["sup_distance"] = float(np.max(np.abs(df["cdf"] - df["empirical"])))
    return ExperimentResult(config.kind, {"single_hop": df}, summary=summary)


def _measure_compare(config: ExperimentConfig) -> ExperimentResult:
    params = config.params
    r = params.r
    gammas = config.grid.gamma or [2 * r, 5 * r, 10 * r]
    rows = []
    for g in gammas:
        u = np.linspace(g - r, g, config.grid.points)
        values = {mode: np.asarray(q_rescaled(g, u, mode, r)) for mode in MeasureMode}
        ref = values[MeasureMode.QUADRATURE]
        for i, ui in enumerate(u):
            row = {"gamma": g, "u": ui}
            for mode, vals in values.items():
                row[f"q_{mode.value}"] = vals[i]
            for mode in (MeasureMode.EXACT_ELLIPTIC, MeasureMode.ASYMPTOTIC2, MeasureMode.ASYMPTOTIC3):
                row[f"rel_err_{mode.value}"] = abs(values[mode][i] - ref[i]) / ref[i] if ref[i] > 0 else 0.0
            rows.append(row)
    df = pd.DataFrame(rows)
    summary = {
        f"max_rel_err_{m.value}": float(df[f"rel_err_{m.value}"].max())
        for m in (MeasureMode.EXACT_ELLIPTIC, MeasureMode.ASYMPTOTIC2, MeasureMode.ASYMPTOTIC3)
    }
    return ExperimentResult(config.kind, {"measure_compare": df}, summary=summary)


def _moments(config: ExperimentConfig) -> ExperimentResult:
    params = config.params
    lams = config.grid.lam or [10.0, 30.0, 100.0, 300.0]
    gammas = config.grid.gamma or [params.ell]
    rows = []
    for g in gammas:
        for lam in lams:
            p_lam = _with_lambda(params, lam)
            row = {"gamma": g, "lam": lam}
            for m in (1, 2):
                num = moment_numeric(g, m, p_lam, config.mode)
                asym = moment_asymptotic(g, m, p_lam)
                row.update({f"m{m}_numeric": num, f"m{m}_asymptotic": asym, f"m{m}_rel_err": abs(asym - num) / abs(num)})
            rows.append(row)
    return ExperimentResult(config.kind, {"moments": pd.DataFrame(rows)})


def _kl(config: ExperimentConfig) -> ExperimentResult:
    params = config.params
    r, ell = params.r, params.ell
    gammas = config.grid.gamma or list(np.linspace(2 * r, ell, config.grid.points))
    df = pd.DataFrame(sink_dependence_table(ell, gammas, params, config.mode))
    return ExperimentResult(config.kind, {"kl": df})


def _z_grid(config: ExperimentConfig, n: int) -> np.ndarray:
    r = config.params.r
    if config.grid.z:
        z = np.asarray([v for v in config.grid.z if 0 < v <= n * r])
        if z.size:
            return z
    return np.linspace(n * r / config.grid.points, n * r, config.grid.points)


def _zn(config: ExperimentConfig) -> ExperimentResult:
    params = config.params
    ns = config.grid.n or [1, 2, 3]
    ens = None
    if config.empirical:
        ens = ensemble(params, config.n_runs, config.seed, sleep=config.sleep, max_hops=max(ns),
                       threads=config.threads, progress=config.progress, level=config.dkw_level)
    frames = []
    for n in ns:
        z = _z_grid(config, n)
        res = full_zn(z, n, params, config.model, rule=config.rule, mode=config.mode, importance=config.importance)
        ind = independent_zn(z, n, params, rule=config.rule, mode=config.mode, importance=config.importance)
        df = pd.DataFrame(
            {
                "n": n,
                "z": z,
                "conditional": _prob(res.conditional.value),
                "conditional_se": res.conditional.std_error,
                "void": _prob(np.asarray(res.void_terms.value).sum(axis=0)),
                "total": _prob(res.total.value),
                "total_se": res.total.std_error,
                "independent": _prob(ind.value),
                "samples": res.samples,
            }
        )
        if ens is not None:
            cond, kept = ens.conditional_zn_cdf(n, z)
            df["empirical_conditional"] = cond
            df["empirical_total"] = ens.zn_cdf(n, z)
            df["dkw"] = dkw_epsilon(max(kept, 1), config.dkw_level)
        frames.append(df)
    return ExperimentResult(config.kind, {"zn": pd.concat(frames, ignore_index=True)})


def _hops(config: ExperimentConfig) -> ExperimentResult:
    params = config.params
    ps = config.grid.p or [params.p]
    n_max = config.grid.n_max
    tables = {}
    for p in ps:
        p_params = params.thinned(p)
        cols: dict[str, Any] = {"n": np.arange(1, n_max + 1)}
        for model in PathModel:
            res = hops_distribution(n_max, p_params, model, rule=config.rule, mode=config.mode,
                                    importance=config.importance)
            cols[f"{model.value}_conditioned"] = _prob(res.conditioned.value)
            cols[f"{model.value}_se"] = res.conditioned.std_error
            cols[f"{model.value}_unconditioned"] = _prob(res.unconditioned.value)
        df = pd.DataFrame(cols)
        if config.empirical:
            ens = ensemble(p_params, config.n_runs, config.seed, sleep=p < 1, max_hops=n_max,
                           threads=config.threads, progress=config.progress, level=config.dkw_level)
            cond, uncond = ens.hops_cdf(df["n"].to_numpy())
            df["empirical_conditioned"] = cond
            df["empirical_unconditioned"] = uncond
            df["dkw"] = ens.band
        tables[f"hops_p{p:g}"] = df
    return ExperimentResult(config.kind, tables)


def _simulate(config: ExperimentConfig) -> ExperimentResult:
    params = config.params
    ens = ensemble(params, config.n_runs, config.seed, sleep=config.sleep, threads=config.threads,
                   progress=config.progress, level=config.dkw_level)
    n_grid = np.arange(1, config.grid.n_max + 1)
    cond, uncond = ens.hops_cdf(n_grid)
    u = np.asarray(config.grid.u or np.linspace(params.ell - params.r, params.ell, config.grid.points))
    summary = {
        "n_runs": ens.n_runs,
        "delivered_rate": ens.delivered_rate,
        "void_rate": ens.void_rate,
        "first_void_rate": ens.first_void_rate,
        "dkw": ens.band,
    }
    tables = {
        "simulate_summary": pd.DataFrame([summary]),
        "simulate_hops": pd.DataFrame({"n": n_grid, "conditioned": cond, "unconditioned": uncond}),
        "simulate_first_hop": pd.DataFrame({"u": u, "empirical": ens.first_hop_cdf(u)}),
    }
    return ExperimentResult(config.kind, tables, summary=summary)


def _validation_checks(config: ExperimentConfig) -> list[dict[str, Any]]:
    params = config.params
    r, ell, lam = params.r, params.ell, params.lam
    rng = np.random.default_rng(config.seed)
    checks: list[dict[str, Any]] = []

    def record(name: str, passed: bool, detail: str) -> None:
        checks.append({"check": name, "passed": bool(passed), "detail": detail})

    worst = 0.0
    for g in (2 * r, 5 * r, 10 * r):
        u = np.linspace(g - r, g, 50)
        exact = np.asarray(q_rescaled(g, u, MeasureMode.EXACT_ELLIPTIC, r))
        quad = np.asarray(q_rescaled(g, u, MeasureMode.QUADRATURE, r))
        pos = quad > 0
        worst = max(worst, float(np.max(np.abs(exact[pos] - quad[pos]) / quad[pos])))
    record("exact_vs_quadrature", worst <= 1e-8, f"max relative gap {worst:.3e}")

    g = 10 * r
    u = np.linspace(g - r, g, 50)[1:]
    exact = np.asarray(q_rescaled(g, u, MeasureMode.EXACT_ELLIPTIC, r))
    err2 = np.abs(np.asarray(q_rescaled(g, u, MeasureMode.ASYMPTOTIC2, r)) - exact) / exact
    err3 = np.abs(np.asarray(q_rescaled(g, u, MeasureMode.ASYMPTOTIC3, r)) - exact) / exact
    record(
        "asymptotic_expansion",
        err3.max() <= 0.01 and err3.max() <= err2.max(),
        f"max relative error three-term {err3.max():.3e}, two-term {err2.max():.3e}",
    )

    worst = 0.0
    for _ in range(INTERSECTION_DRAWS):
        g0 = rng.uniform(3 * r, ell) if ell > 3 * r else ell
        u1 = g0 - rng.uniform(0.05, 0.95) * r
        psi = float(np.arccos((u1 * u1 + g0 * g0 - r * r) / (2 * u1 * g0)))
        x0, x1 = PolarPoint(g0, 0.0), PolarPoint(u1, rng.uniform(-0.95, 0.95) * psi)
        u2 = u1 - rng.uniform(0.0, 1.0) * r
        a = intersection_q(x0, x1, u2, params, MeasureMode.EXACT_ELLIPTIC)
        b = region_intersection_q(x0, x1, u2, r)
        dep = dependent_q(PathState((x0,)).extend(x1), u2, params, MeasureMode.EXACT_ELLIPTIC)
        base = float(q_rescaled(u1, u2, MeasureMode.EXACT_ELLIPTIC, r))
        worst = max(worst, abs(a - b), abs(dep - max(base - b, 0.0)))
    record("intersection_vs_region", worst <= 1e-4, f"max absolute gap {worst:.3e}")

    sampler = ImportanceSampler.for_gamma(ell, lam, r)
    c = np.linspace(0.0, r, 101)
    gap = float(np.max(np.abs(sampler.inverse(sampler.cdf(c)) - c)))
    record("importance_round_trip", gap <= 1e-10, f"max round-trip error {gap:.3e}")

    x, y, zz = rng.uniform(0.1, 5.0, 3)
    t = rng.uniform(0.5, 4.0)
    base = complex(carlson_rf(x, y, zz))
    scaled = complex(carlson_rf(t * x, t * y, t * zz))
    rel = abs(scaled - base / np.sqrt(t)) / abs(base)
    record("carlson_homogeneity", rel <= 1e-10, f"relative gap {rel:.3e}")

    d_self = kl_divergence(ell, ell, params, config.mode)
    d_min = min(kl_divergence(ell, float(gg), params, config.mode) for gg in np.linspace(2 * r, ell, 5))
    record("kl_properties", abs(d_self) <= 1e-10 and d_min >= -1e-10, f"D(ell, ell)={d_self:.2e}, min D={d_min:.3e}")

    violations = 0
    for _ in range(50):
        g2 = rng.uniform(2 * r, ell)
        g1 = rng.uniform(g2, ell)
        cc = rng.uniform(0.0, r)
        f1 = hop_distribution(g1, params, MeasureMode.EXACT_ELLIPTIC).cdf(cc)
        f2 = hop_distribution(g2, params, MeasureMode.EXACT_ELLIPTIC).cdf(cc)
        violations += f1 < f2 - 1e-12
    record("stochastic_ordering", violations == 0, f"{violations} violations in 50 triples")

    small = config.rule.model_copy(update={"points": 512, "z": None, "tolerance": None})
    res = full_zn([r], 1, params, PathModel.DEPENDENT, rule=small, mode=MeasureMode.EXACT_ELLIPTIC)
    total = float(np.asarray(res.total.value)[-1])
    record("mass_conservation", abs(total - 1.0) <= 0.01, f"P(Z_1 <= r) = {total:.6f}")
    return checks


def _validate(config: ExperimentConfig) -> ExperimentResult:
    df = pd.DataFrame(_validation_checks(config))
    passed = bool(df["passed"].all())
    return ExperimentResult(config.kind, {"validate": df}, summary={"passed": passed}, passed=passed)


_RUNNERS = {
    ExperimentKind.SINGLE_HOP: _single_hop,
    ExperimentKind.MEASURE_COMPARE: _measure_compare,
    ExperimentKind.MOMENTS: _moments,
    ExperimentKind.KL: _kl,
    ExperimentKind.ZN: _zn,
    ExperimentKind.HOPS: _hops,
    ExperimentKind.SIMULATE: _simulate,
    ExperimentKind.VALIDATE: _validate,
}


def _json_value(v: Any, float_format: str = "%.12g") -> Any:
    """Floats rounded through ``float_format``; NaN and infinities become null."""
    if isinstance(v, (float, np.floating)):
        return float(float_format % v) if np.isfinite(v) else None
    return v


def write_table(df: pd.DataFrame, path: Path, fmt: str, float_format: str = "%.12g") -> Path:
    if fmt == "json":
        path = path.with_suffix(".json")
        records = [
            {k: _json_value(v, float_format) for k, v in row.items()}
            for row in df.to_dict(orient="records")
        ]
        path.write_text(json.dumps(records, indent=2, allow_nan=False) + "\n")
    else:
        path = path.with_suffix(".csv")
        df.to_csv(path, index=False, float_format=float_format, lineterminator="\n")
    return path


def _version() -> str:
    try:
        return metadata.version(PACKAGE_NAME)
    except metadata.PackageNotFoundError:
        return "0.1.0"


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run one experiment, write its tables and manifest, and return them."""
    logging.info(f"Starting experiment {config.kind.value} (seed={config.seed}, threads={config.threads})")
    start = time.perf_counter()
    try:
        result = _RUNNERS[config.kind](config)
    except GreedyRoutingError:
        logging.error(f"Experiment {config.kind.value} failed", exc_info=True)
        raise
    wall = time.perf_counter() - start

    if write:
        config.out.mkdir(parents=True, exist_ok=True)
        for name, df in result.tables.items():
            path = write_table(df, config.out / name, config.format, config.float_format)
            result.files.append(path)
            logging.info(f"Wrote {path}")
        manifest = {
            "config": config.model_dump(mode="json", by_alias=True),
            "seed": config.seed,
            "threads": config.threads,
            "wall_time_seconds": wall,
            "version": _version(),
            "files": [p.name for p in result.files],
            "summary": {k: _json_value(v) for k, v in result.summary.items()},
        }
        manifest_path = config.out / f"{config.kind.value}_manifest.json"
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str, allow_nan=False) + "\n")
        result.files.append(manifest_path)
    logging.info(f"Experiment {config.kind.value} finished in {wall:.2f}s")
    return result
