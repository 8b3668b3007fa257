"""End-to-end orchestration.

Every stage reads its inputs from, and writes its outputs to, files in the
run directory, so running the stages one by one yields the same files as
:func:`run_pipeline`.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import bid_map, dcfeas, disagg, geo_recon, stsample, validate
from .errors import GridSeriesError, ValidationError
from .grid_model import (
    QUANTITIES,
    RegionalSeries,
    contribution_vectors,
    load_geo_registry,
    load_offers,
    load_regional_history,
    load_snapshot,
)

log = logging.getLogger(__name__)

STAGES = ("geo", "bids", "sample", "disagg", "restore", "validate")
RENEWABLE = ("wind", "solar")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    snapshot: str
    history: str
    registry: str
    offers: str
    out: str = "run"
    seed: int = 0
    parallelism: int = 1
    derate: float = dcfeas.DEFAULT_DERATE
    granularity: int = 5  # target minutes
    source_minutes: int | None = None  # checked against the history file when given
    kernels: Mapping[str, Mapping[str, float]] = dataclasses.field(default_factory=dict)
    baseline_noise: tuple[float, ...] = (0.05, 0.10)
    km_per_ohm: float = 1.0
    known_locations: str | None = None  # CSV substation_id,location_id for calibration
    kv_classes: tuple[float, ...] = geo_recon.STANDARD_KV
    geo_budget: int = 50
    substitutes: Mapping[str, str] = dataclasses.field(default_factory=dict)
    capacity_filter: bool = False
    overlap_k: int = 5
    dump_panel: bool = False

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValidationError("seed must be a 64-bit unsigned value")
        if self.parallelism < 1:
            raise ValidationError("parallelism must be at least 1")
        if not 0 < self.derate <= 1:
            raise ValidationError("derate must lie in (0, 1]")
        if self.granularity <= 0:
            raise ValidationError("granularity must be positive")
        if self.source_minutes is not None and self.source_minutes % self.granularity:
            raise ValidationError(
                f"target granularity {self.granularity} min does not divide {self.source_minutes} min")
        for q in self.kernels:
            if q not in QUANTITIES:
                raise ValidationError(f"unknown quantity {q!r} in kernels")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], base_dir: Path | None = None) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("baseline_noise", "kv_classes"):
            if key in data:
                data[key] = tuple(data[key])
        if base_dir is not None:
            for key in ("snapshot", "history", "registry", "offers", "known_locations", "out"):
                if data.get(key) and not Path(data[key]).is_absolute():
                    data[key] = str(base_dir / data[key])
        return cls(**data)

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON config: {exc}") from exc
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(data, base_dir=path.parent)

    def kernel(self, quantity: str) -> stsample.KernelConfig:
        return stsample.KernelConfig(**self.kernels.get(quantity, {}))

    def check_paths(self) -> None:
        for key in ("snapshot", "history", "registry", "offers"):
            if not Path(getattr(self, key)).exists():
                raise ValidationError(f"{key} input not found: {getattr(self, key)}")
        if self.known_locations and not Path(self.known_locations).exists():
            raise ValidationError(f"known_locations not found: {self.known_locations}")


class StageError(GridSeriesError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _out(cfg: RunConfig) -> Path:
    d = Path(cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _read_pairs(path) -> dict[str, str]:
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return {a: b for a, b, *_ in rows[1:]}


def _histories(cfg: RunConfig, snapshot) -> dict[str, RegionalSeries]:
    hist = load_regional_history(cfg.history, regions=snapshot.regions)
    for q, s in hist.items():
        if cfg.source_minutes is not None and s.period_minutes != cfg.source_minutes:
            raise ValidationError(f"{q} history has {s.period_minutes}-minute periods, config says {cfg.source_minutes}")
        if s.period_minutes % cfg.granularity:
            raise ValidationError(f"target granularity {cfg.granularity} min does not divide {s.period_minutes} min")
    return hist


# -- stages ------------------------------------------------------------------


def stage_geo(cfg: RunConfig) -> dict:
    s = load_snapshot(cfg.snapshot)
    reg = load_geo_registry(cfg.registry)
    km = cfg.km_per_ohm
    if cfg.known_locations:
        km = geo_recon.calibrate_km_per_ohm(s, reg, _read_pairs(cfg.known_locations))
    problem = geo_recon.build_problem(s, reg, km_per_ohm=km, kv_classes=cfg.kv_classes)
    a = geo_recon.local_search(problem, seed=stsample.derive_seed(cfg.seed, "geo"), budget=cfg.geo_budget)
    out = _out(cfg)
    geo_recon.write_assignment_csv(a, problem, reg, out / "assignment.csv")
    report = {"objective_km2": a.objective, "km_per_ohm": km, "accepted_moves": len(a.history),
              "objective_history": list(a.history)}
    (out / "geo_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return {"objective_km2": a.objective, "substations": problem.n}


def stage_bids(cfg: RunConfig) -> dict:
    s = load_snapshot(cfg.snapshot)
    book = load_offers(cfg.offers)
    hist = _histories(cfg, s)
    dispatchable = [g.id for g in s.generators if g.fuel not in RENEWABLE]
    policy = bid_map.MatchPolicy(dict(cfg.substitutes), cfg.capacity_filter)
    book = bid_map.build_offer_book(book, s, policy, generators=dispatchable)
    any_series = next(iter(hist.values()))
    n_hours = max(1, (any_series.n_periods - 1) * any_series.period_minutes // 60)
    series = bid_map.offer_series(book, s, range(n_hours))
    out = _out(cfg)
    bid_map.write_assignment_csv(book, s, out / "bid_assignment.csv")
    bid_map.write_offer_series_csv(series, out / "generator_offers.csv")
    return {"generators": len(book.assignment), "participants": len(set(book.assignment.values())),
            "hours": n_hours}


def _components(snapshot, quantity):
    return contribution_vectors(snapshot, quantity=quantity)


def _component_coords(snapshot, quantity, p, bus_coords) -> np.ndarray:
    bus_of = {ld.id: ld.bus for ld in snapshot.loads} if quantity == "load" else \
        {g.id: g.bus for g in snapshot.generators}
    return np.array([bus_coords[bus_of[c]] for c in p.component_ids]).reshape(-1, 2)


def _bus_coords(cfg: RunConfig) -> dict[str, tuple[float, float]]:
    import csv

    with open(Path(cfg.out) / "assignment.csv", newline="") as fh:
        return {row["substation_id"]: (float(row["lat"]), float(row["lon"])) for row in csv.DictReader(fh)}


def stage_sample(cfg: RunConfig) -> dict:
    s = load_snapshot(cfg.snapshot)
    hist = _histories(cfg, s)
    coords = _bus_coords(cfg)
    out = _out(cfg)
    panels, summary = {}, {}
    for q in sorted(hist):
        p = _components(s, q)
        if not p.component_ids:
            continue
        D = geo_recon.haversine_matrix(_component_coords(s, q, p, coords))
        kc = cfg.kernel(q)
        panel = stsample.panel_for(D, hist[q].n_periods, kc, stsample.derive_seed(cfg.seed, "sample", q))
        panels[q] = panel.values
        summary[q] = {"mean": float(panel.values.mean()), "std": float(panel.values.std()),
                      "clip_fraction": panel.clip_fraction}
        if cfg.dump_panel:
            stsample.write_panel_csv(panel, p.component_ids, out / f"panel_{q}.csv")
    np.savez(out / "panels.npz", **panels)
    return summary


def _horizon(series_values: np.ndarray) -> np.ndarray:
    # knots are closed; the horizon is half-open, so the final knot is dropped
    return series_values[..., :-1] if series_values.shape[-1] > 1 else series_values


def stage_disagg(cfg: RunConfig) -> dict:
    s = load_snapshot(cfg.snapshot)
    hist = _histories(cfg, s)
    with np.load(Path(cfg.out) / "panels.npz") as z:
        panels = {k: z[k] for k in z.files}
    out_series, summary = [], {}
    for q in sorted(panels):
        p = _components(s, q)
        comp = disagg.disaggregate(hist[q], p, panels[q])
        fine = disagg.interpolate(comp, cfg.granularity)
        fine = dataclasses.replace(fine, values=_horizon(fine.values))
        out_series.append(fine)
        err = np.abs(comp.regional_sums(p.regions) - hist[q].values[[hist[q].regions.index(r) for r in p.regions]])
        summary[q] = {"periods": fine.n_periods, "max_conservation_error_mw": float(err.max(initial=0.0))}
    disagg.write_component_csv(out_series, Path(cfg.out) / "components.csv")
    return summary


class ModelFactory:
    """Picklable factory so worker processes can rebuild the network model."""

    def __init__(self, snapshot_path: str, derate: float):
        self.snapshot_path = snapshot_path
        self.derate = derate

    def __call__(self):
        return dcfeas.DCModel.from_snapshot(load_snapshot(self.snapshot_path), derate=self.derate)


@dataclasses.dataclass(frozen=True)
class RestoreInputs:
    factory: ModelFactory
    load: disagg.ComponentSeries
    L_hat: np.ndarray  # (N, T) in model load order
    totals: np.ndarray  # (R, T)
    regions: tuple[str, ...]
    p_min: np.ndarray  # (G, T)
    p_max: np.ndarray


def restore_inputs(cfg: RunConfig, components=None) -> RestoreInputs:
    """Per-period restoration data; renewable bounds follow their disaggregated output."""
    s = load_snapshot(cfg.snapshot)
    hist = _histories(cfg, s)
    factory = ModelFactory(cfg.snapshot, cfg.derate)
    model = factory()
    comps = disagg.read_component_csv(components or Path(cfg.out) / "components.csv")
    if "load" not in comps:
        raise ValidationError("component file has no load series")
    load = comps["load"]
    pos = {cid: k for k, cid in enumerate(load.component_ids)}
    L_hat = load.values[[pos[i] for i in model.load_ids]]
    totals = _horizon(disagg.interpolate_regional(hist["load"], cfg.granularity).values)
    if totals.shape[1] != L_hat.shape[1]:
        raise ValidationError("component and regional horizons differ")

    T = L_hat.shape[1]
    p_min = np.repeat(model.p_min[:, None], T, axis=1)
    p_max = np.repeat(model.p_max[:, None], T, axis=1)
    gpos = {g: k for k, g in enumerate(model.gen_ids)}
    for q in RENEWABLE:
        if q in comps:
            ser = comps[q]
            for cid, row in zip(ser.component_ids, ser.values):
                p_max[gpos[cid]] = np.maximum(row, 0.0)
                p_min[gpos[cid]] = 0.0
    return RestoreInputs(factory, load, L_hat, totals, hist["load"].regions, p_min, p_max)


def stage_restore(cfg: RunConfig, components=None) -> dict:
    """Restore DC feasibility of ``components`` (default: the run's components.csv)."""
    inp = restore_inputs(cfg, components)
    model = inp.factory()
    load, T = inp.load, inp.L_hat.shape[1]
    res = dcfeas.restore_horizon(inp.factory, inp.L_hat, inp.totals, inp.regions,
                                 p_min=inp.p_min, p_max=inp.p_max, parallelism=cfg.parallelism)
    restored = disagg.ComponentSeries("load", model.load_ids, model.load_region, res.restored,
                                      load.period_minutes, load.start, "restored")
    out = Path(cfg.out)
    disagg.write_component_csv([restored], out / "restored.csv")
    dcfeas.write_report_csv(res.results, out / "restoration_report.csv")
    changed = [r for r in res.results if r.status != "unchanged"]
    return {"periods": T, "restored_periods": len(changed),
            "total_l1_change_mw": float(sum(r.l1_change for r in res.results)),
            "max_single_change_mw": float(max((r.max_change for r in res.results), default=0.0))}


def correlated_regional(national: np.ndarray, ratios: np.ndarray, distances_km: np.ndarray,
                        noise: float, sigma_km: float, seed: int, theta: float = 1.0) -> np.ndarray:
    """National total split into regions with spatially correlated mean-one multipliers."""
    kc = stsample.KernelConfig(alpha=stsample.alpha_for_std(noise), sigma=sigma_km, theta=theta)
    Y = stsample.panel_for(distances_km, national.size, kc, seed).values
    w = ratios[:, None] * Y
    return national[None, :] * w / w.sum(axis=0)


def compare_regional(historical: RegionalSeries, synthetic: RegionalSeries, k: int = 5) -> tuple[dict, Any]:
    if historical.regions != synthetic.regions:
        raise ValidationError("historical and synthetic regions differ")
    rep = validate.compare(historical.values.T, synthetic.values.T, k)
    return validate.report_dict(rep, regions=list(historical.regions)), rep


def stage_validate(cfg: RunConfig) -> dict:
    """National-to-regional reconstruction experiment on the load history."""
    s = load_snapshot(cfg.snapshot)
    hist = _histories(cfg, s)
    out = _out(cfg)
    for q, series in sorted(hist.items()):
        pm = validate.pearson_matrix(series)
        validate.write_pearson_csv(pm, out / f"pearson_{q}.csv")
    load = hist["load"]
    national = load.total()
    region_nominal = np.array([sum(ld.nominal_MW for ld in s.loads if s.bus_region(ld.bus) == r)
                               for r in load.regions])
    ratios = region_nominal / region_nominal.sum()
    coords = _bus_coords(cfg)
    centroid = np.array([np.mean([coords[b.id] for b in s.buses if b.region_id == r], axis=0)
                         for r in load.regions])
    D = geo_recon.haversine_matrix(centroid)
    sigma = cfg.kernel("load").sigma
    report: dict[str, Any] = {"regions": list(load.regions), "experiments": {}}
    for noise in cfg.baseline_noise:
        runs = {
            "uniform": disagg.baseline_uniform(national, ratios, noise,
                                               stsample.derive_seed(cfg.seed, "validate", "uniform", noise)),
            "correlated": correlated_regional(national, ratios, D, noise, sigma,
                                              stsample.derive_seed(cfg.seed, "validate", "correlated", noise)),
        }
        for name, values in runs.items():
            syn = RegionalSeries("load", load.regions, values, load.period_minutes, load.start)
            rep_d, rep = compare_regional(load, syn, cfg.overlap_k)
            tag = f"{name}_{noise:g}"
            validate.write_projection_csv(rep, out / f"projection_{tag}.csv")
            report["experiments"][tag] = rep_d
    validate.write_report_json(report, out / "validation_report.json")
    return {tag: r["overlap_score"] for tag, r in report["experiments"].items()}


STAGE_FUNCS = {
    "geo": stage_geo,
    "bids": stage_bids,
    "sample": stage_sample,
    "disagg": stage_disagg,
    "restore": stage_restore,
    "validate": stage_validate,
}


def run_pipeline(cfg: RunConfig, stages=STAGES) -> dict:
    """Run the stages in order and write ``manifest.json``.

    On failure the manifest is still written, marked incomplete with the
    failing stage, and :class:`StageError` is raised.
    """
    cfg.check_paths()
    _histories(cfg, load_snapshot(cfg.snapshot))  # granularity and input checks before any stage
    out = _out(cfg)
    manifest: dict[str, Any] = {
        "seed": int(cfg.seed),
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(cfg).items()},
        "inputs": {k: file_digest(getattr(cfg, k)) for k in ("snapshot", "history", "registry", "offers")},
        "stages": {},
        "status": "running",
    }
    try:
        for name in stages:
            t0 = time.perf_counter()
            try:
                summary = STAGE_FUNCS[name](cfg)
            except Exception as exc:
                manifest["status"] = "incomplete"
                manifest["failed_stage"] = name
                manifest["error"] = f"{type(exc).__name__}: {exc}"
                raise StageError(name, exc) from exc
            manifest["stages"][name] = {"seconds": round(time.perf_counter() - t0, 4), "summary": summary}
            log.info("stage %s done in %.2fs", name, manifest["stages"][name]["seconds"])
        manifest["status"] = "complete"
    finally:
        outputs = sorted(p for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
        manifest["outputs"] = {p.name: file_digest(p) for p in outputs}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return manifest


def validate_pair(historical_path, synthetic_path, out_dir, k: int = 5, quantity: str = "load") -> dict:
    """Compare a synthetic regional history CSV against a historical one."""
    hist = load_regional_history(historical_path)
    syn = load_regional_history(synthetic_path)
    if quantity not in hist or quantity not in syn:
        raise ValidationError(f"both files need a {quantity!r} series")
    H, S = hist[quantity], syn[quantity]
    if set(H.regions) != set(S.regions):
        raise ValidationError("historical and synthetic regions differ")
    order = [S.regions.index(r) for r in H.regions]
    S = RegionalSeries(quantity, H.regions, S.values[order], S.period_minutes, S.start)
    report, rep = compare_regional(H, S, k)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    validate.write_projection_csv(rep, out / "projection.csv")
    validate.write_report_json(report, out / "validation_report.json")
    return report
