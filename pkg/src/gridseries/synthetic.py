"""Synthetic fixtures: a desk-scale grid case and a planted regional benchmark.

Neither is meant to look like a real system in detail. The desk case is
built so that every pipeline stage has something to do (radial load pockets
that congest at peak, fuels without bidders, decoy geolocations); the
benchmark plants cluster-level regional co-movement of known strength.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import math
from pathlib import Path

import numpy as np

from .grid_model import (
    Branch,
    Bus,
    GeoLocation,
    GeoRegistry,
    Generator,
    Load,
    NetworkSnapshot,
    Offer,
    RegionalSeries,
    write_geo_registry,
    write_offers,
    write_regional_history,
    write_snapshot,
)
from .geo_recon import haversine_matrix
from .stsample import make_rng

START = dt.datetime(2018, 1, 19, tzinfo=dt.timezone.utc)


@dataclasses.dataclass(frozen=True)
class DeskCase:
    snapshot: NetworkSnapshot
    registry: GeoRegistry
    history: dict[str, RegionalSeries]
    offers: tuple[Offer, ...]
    true_location: dict[str, str]  # bus id -> location id
    km_per_ohm: float
    regional_nominal: dict[str, float]  # known regional snapshot load totals

    def write(self, directory) -> dict[str, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {
            "snapshot": d / "snapshot.json",
            "history": d / "regional_history.csv",
            "registry": d / "geo_registry.csv",
            "offers": d / "offers.csv",
        }
        write_snapshot(self.snapshot, paths["snapshot"])
        write_regional_history(self.history.values(), paths["history"])
        write_geo_registry(self.registry, paths["registry"])
        write_offers(self.offers, paths["offers"])
        return paths


def _ar1(rng, n_series: int, T: int, phi: float) -> np.ndarray:
    """Unit-variance AR(1) paths, shape (n_series, T)."""
    out = np.empty((n_series, T))
    out[:, 0] = rng.standard_normal(n_series)
    c = math.sqrt(1 - phi * phi)
    for t in range(1, T):
        out[:, t] = phi * out[:, t - 1] + c * rng.standard_normal(n_series)
    return out


def daily_shape(hours: np.ndarray) -> np.ndarray:
    """Winter weekday load profile, normalized to mean ~1 (morning and evening peaks)."""
    h = np.asarray(hours, dtype=float) % 24
    morning = np.exp(-((h - 9.5) ** 2) / 8)
    evening = np.exp(-((h - 19.0) ** 2) / 5)
    night = -np.exp(-((h - 4.0) ** 2) / 6)
    return 1.0 + 0.10 * morning + 0.16 * evening + 0.14 * night - 0.03


def make_desk_case(
    seed: int = 0,
    *,
    n_bus: int = 100,
    n_regions: int = 12,
    days: int = 1,
    period_minutes: int = 30,
    n_radial: int = 12,
    decoys_per_region: int = 3,
) -> DeskCase:
    """Build a connected ``n_bus`` network over ``n_regions`` regions.

    Each region has a 400 kV meshed core and some buses are 225 kV radial
    spurs hanging off the core through a single line rated close to the
    spur's nominal load, so that peak-hour volatility congests them.
    The regional history spans ``days`` days as closed knots
    (``days * 24 * 60 / period_minutes + 1`` values).
    """
    rng = make_rng(seed)
    regions = tuple(str(r + 1) for r in range(n_regions))
    # region centres on a 4 x 3 grid roughly spanning mainland France
    cols = 4
    centre = {r: (43.5 + 1.9 * (k // cols) + rng.uniform(-0.3, 0.3),
                  -1.0 + 2.0 * (k % cols) + rng.uniform(-0.3, 0.3)) for k, r in enumerate(regions)}
    counts = np.full(n_regions, n_bus // n_regions)
    counts[: n_bus % n_regions] += 1
    radial_regions = set(rng.choice(n_regions, size=min(n_radial, n_regions), replace=False).tolist())

    buses, coords, core_of, radial = [], {}, {r: [] for r in regions}, []
    bid = 0
    for k, r in enumerate(regions):
        n_rad = 1 if k in radial_regions and counts[k] > 3 else 0
        for j in range(counts[k]):
            bid += 1
            b = str(bid)
            is_radial = j >= counts[k] - n_rad
            kv = 225.0 if is_radial else 400.0
            lat = centre[r][0] + rng.normal(0, 0.25)
            lon = centre[r][1] + rng.normal(0, 0.35)
            buses.append(Bus(b, r, kv))
            coords[b] = (float(np.clip(lat, -90, 90)), float(lon))
            if is_radial:
                radial.append((b, r))
            else:
                core_of[r].append(b)

    km_per_ohm = 2500.0  # 0.0004 pu per km
    ohm_noise = 0.05

    def dist(a, b):
        return float(haversine_matrix(np.array([coords[a], coords[b]]))[0, 1])

    branches = []

    def add_branch(a, b, limit):
        d = max(dist(a, b), 1.0)
        r_pu = d / km_per_ohm * (1 + rng.normal(0, ohm_noise))
        branches.append(Branch(f"L{len(branches) + 1}", a, b, float(max(r_pu, 1e-5)),
                               float(10 * max(r_pu, 1e-5)), float(limit)))

    for r in regions:
        core = core_of[r]
        for a, b in zip(core, core[1:] + core[:1]):
            if a != b:
                add_branch(a, b, 3000.0)
        if len(core) > 3:
            add_branch(core[0], core[len(core) // 2], 3000.0)
    # inter-regional ties between grid neighbours
    for k, r in enumerate(regions):
        for nk in (k + 1, k + cols):
            if nk < n_regions and (nk != k + 1 or (k % cols) != cols - 1):
                rn = regions[nk]
                add_branch(core_of[r][-1], core_of[rn][0], 2500.0)

    # loads: one per bus
    nominal = {}
    for b in buses:
        nominal[b.id] = float(rng.uniform(60, 160))
    # derated spur rating sits 10% above the spur's nominal load
    for b, r in radial:
        add_branch(b, core_of[r][1 % len(core_of[r])], nominal[b] * 1.10 / 0.95)
    loads = tuple(Load(f"D{b.id}", b.id, round(nominal[b.id], 3)) for b in buses)

    # generators
    fuels = ["nuclear", "gas", "coal", "hydro"]
    total_nom = sum(nominal.values())
    gens = []
    core_buses = [b for r in regions for b in core_of[r]]
    picks = rng.choice(len(core_buses), size=24, replace=False)
    for k, ix in enumerate(sorted(picks)):
        fuel = fuels[k % len(fuels)]
        gens.append(Generator(f"G{k + 1}", core_buses[ix], fuel, 0.0,
                              float(round(2.0 * total_nom / 24 * rng.uniform(0.6, 1.4), 1))))
    wind_cap, solar_cap = {}, {}
    for k, r in enumerate(regions):
        host = core_of[r][0]
        wc = float(round(rng.uniform(40, 200), 1))
        gens.append(Generator(f"W{r}", host, "wind", 0.0, wc))
        wind_cap[r] = wc
        if k % 2 == 0:
            sc = float(round(rng.uniform(30, 150), 1))
            gens.append(Generator(f"S{r}", core_of[r][-1], "solar", 0.0, sc))
            solar_cap[r] = sc

    snapshot = NetworkSnapshot(tuple(buses), tuple(branches), tuple(gens), loads, regions)

    # registry: true locations plus decoys in each (region, voltage) class
    entries, true_loc = [], {}
    for b in buses:
        lid = f"P{b.id}"
        entries.append(GeoLocation(lid, *coords[b.id], b.region_id, b.voltage_kV))
        true_loc[b.id] = lid
    n_dec = 0
    for r in regions:
        for _ in range(decoys_per_region):
            n_dec += 1
            entries.append(GeoLocation(f"X{n_dec}", float(centre[r][0] + rng.normal(0, 0.3)),
                                       float(centre[r][1] + rng.normal(0, 0.4)), r, 400.0))
    registry = GeoRegistry(tuple(entries))

    # regional history, closed knots
    per_day = 24 * 60 // period_minutes
    T = days * per_day + 1
    hours = np.arange(T) * period_minutes / 60
    reg_nom = {r: sum(nominal[b.id] for b in buses if b.region_id == r) for r in regions}
    shape = daily_shape(hours)
    drift = 0.04 * _ar1(rng, n_regions, T, math.exp(-1 / 6))
    load = np.array([reg_nom[r] * shape * np.exp(drift[k]) for k, r in enumerate(regions)])
    cf = 0.35 + 0.15 * _ar1(rng, 3, T, math.exp(-1 / 12))
    wind = np.array([wind_cap[r] * np.clip(cf[k % 3] + 0.05 * rng.standard_normal(T), 0.02, 0.95)
                     for k, r in enumerate(regions)])
    sun = np.clip(np.sin(np.pi * (hours % 24 - 8) / 9), 0, None)
    solar = np.array([solar_cap.get(r, 0.0) * 0.7 * sun for r in regions])
    history = {
        q: RegionalSeries(q, regions, v, period_minutes, START)
        for q, v in (("load", load), ("wind", wind), ("solar", solar))
    }

    # offers: gas, coal and hydro participants; nuclear has none (substituted by coal)
    offers = []
    n_hours = days * 24
    base_price = {"gas": 45.0, "coal": 30.0, "hydro": 15.0}
    pid = 0
    for fuel in ("gas", "coal", "hydro"):
        for _ in range(4):
            pid += 1
            cap = float(round(rng.uniform(0.3, 1.6) * 2.0 * total_nom / 24, 1))
            p0 = base_price[fuel] * rng.uniform(0.8, 1.2)
            walk = np.cumsum(rng.normal(0, 2.0, n_hours))
            for h in range(n_hours):
                q = cap * (0.85 + 0.15 * rng.uniform()) if h else cap
                offers.append(Offer(f"MP{pid:03d}", h, fuel, float(round(max(5.0, p0 + walk[h]), 2)),
                                    float(round(q, 1)), float(round(0.2 * q, 1)),
                                    (("min_up_h", str(int(rng.integers(1, 8)))),)))
    return DeskCase(snapshot, registry, history, tuple(offers), true_loc, km_per_ohm, reg_nom)


# -- planted regional benchmark ----------------------------------------------

CLUSTER_CENTRES_KM = np.array([[0.0, 0.0], [700.0, 0.0], [350.0, 600.0]])
CLUSTER_SPREAD_KM = 60.0
CLUSTER_LOG_STD = 0.18
IDIOSYNCRATIC_LOG_STD = 0.015
BENCHMARK_SIGMA_KM = 200.0


@dataclasses.dataclass(frozen=True)
class PlantedBenchmark:
    historical: np.ndarray  # (R, T) MW
    national: np.ndarray  # (T,)
    ratios: np.ndarray  # (R,) shares estimated from an independent earlier realization
    distances_km: np.ndarray  # (R, R)
    labels: np.ndarray  # cluster of each region
    period_minutes: int = 30


def planted_benchmark(seed: int, *, days: int = 14, n_regions: int = 12) -> PlantedBenchmark:
    """National load split into regions with cluster-level co-movement.

    Regional shares move with one slow AR(1) factor per geographic cluster
    (log-std ``CLUSTER_LOG_STD``) plus small independent noise, and are
    renormalized so the regions add up to the national total.
    """
    rng = make_rng(seed)
    per = 48
    T = days * per
    labels = np.arange(n_regions) % len(CLUSTER_CENTRES_KM)
    labels.sort()
    xy = CLUSTER_CENTRES_KM[labels] + rng.normal(0, CLUSTER_SPREAD_KM, (n_regions, 2))
    D = np.linalg.norm(xy[:, None] - xy[None], axis=2)
    t = np.arange(T)
    national = 50_000 * (1 + 0.15 * np.sin(2 * np.pi * (t / per - 0.3)) - 0.05 * ((t // per) % 7 >= 5))
    national = national * np.exp(np.cumsum(rng.normal(0, 0.003, T)))
    base = rng.uniform(0.5, 1.5, n_regions)
    base /= base.sum()
    phi = math.exp(-1 / 24)

    def realize():
        f = _ar1(rng, len(CLUSTER_CENTRES_KM), T, phi)
        e = rng.standard_normal((n_regions, T))
        w = base[:, None] * np.exp(CLUSTER_LOG_STD * f[labels] + IDIOSYNCRATIC_LOG_STD * e)
        return w / w.sum(axis=0)

    shares = realize()
    previous = realize()
    return PlantedBenchmark(national * shares, national, previous.mean(axis=1), D, labels)
