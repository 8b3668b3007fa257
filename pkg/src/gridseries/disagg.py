"""Regional-to-component disaggregation, interpolation, and the fixed-ratio baseline."""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import math

import numpy as np

from .errors import ValidationError
from .grid_model import ContributionVector, RegionalSeries, format_timestamp
from .stsample import VolatilityPanel, make_rng

DENOMINATOR_GUARD = 1e-9

LINEAGES = ("disaggregated", "restored", "baseline")


@dataclasses.dataclass(frozen=True)
class ComponentSeries:
    quantity: str
    component_ids: tuple[str, ...]
    component_regions: tuple[str, ...]
    values: np.ndarray  # (N, T) MW
    period_minutes: int
    start: dt.datetime
    lineage: str = "disaggregated"

    def __post_init__(self):
        if self.lineage not in LINEAGES:
            raise ValidationError(f"unknown lineage {self.lineage!r}")
        if self.values.shape[0] != len(self.component_ids):
            raise ValidationError("values rows do not match component ids")

    @property
    def n_periods(self) -> int:
        return self.values.shape[1]

    @property
    def timestamps(self) -> list[dt.datetime]:
        step = dt.timedelta(minutes=self.period_minutes)
        return [self.start + k * step for k in range(self.n_periods)]

    def regional_sums(self, regions) -> np.ndarray:
        reg = np.asarray(self.component_regions)
        return np.array([self.values[reg == r].sum(axis=0) for r in regions])


def disaggregate(L: RegionalSeries, p: ContributionVector, Y: VolatilityPanel | np.ndarray) -> ComponentSeries:
    """Split regional totals into components, ``L * p*y / (p·y)`` per region and period.

    ``Y`` rows follow ``p.component_ids``. Regions of ``L`` missing from
    ``p`` must carry an all-zero series.
    """
    Yv = Y.values if isinstance(Y, VolatilityPanel) else np.asarray(Y, dtype=float)
    n = len(p.component_ids)
    if Yv.shape != (n, L.n_periods):
        raise ValidationError(f"panel shape {Yv.shape} does not match ({n}, {L.n_periods})")
    out = np.zeros_like(Yv)
    slices = p.slices()
    for k, r in enumerate(L.regions):
        total = L.values[k]
        if r not in slices:
            if np.any(total > 0):
                raise ValidationError(f"region {r!r} has a nonzero {L.quantity} total but no components")
            continue
        sl = slices[r]
        weighted = p.shares[r][:, None] * Yv[sl]
        denom = weighted.sum(axis=0)
        if np.any(denom < DENOMINATOR_GUARD):
            t = int(np.argmin(denom))
            raise ValidationError(f"region {r!r}, period {t}: normalizer {denom[t]:.3g} below guard")
        out[sl] = weighted * (total / denom)
    missing = set(slices) - set(L.regions)
    if missing:
        raise ValidationError(f"contribution regions {sorted(missing)} absent from the regional series")
    return ComponentSeries(L.quantity, tuple(p.component_ids), tuple(p.component_regions), out,
                           L.period_minutes, L.start, "disaggregated")


def linear_upsample(values: np.ndarray, factor: int) -> np.ndarray:
    """Insert ``factor - 1`` linearly spaced points between consecutive columns."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    k = np.arange(factor * (n - 1) + 1)
    q, rem = np.divmod(k, factor)
    frac = rem / factor
    nxt = np.minimum(q + 1, n - 1)
    return values[..., q] * (1.0 - frac) + values[..., nxt] * frac


def _factor(source_minutes: int, target_minutes: int) -> int:
    if target_minutes <= 0 or source_minutes % target_minutes:
        raise ValidationError(f"target granularity {target_minutes} min does not divide {source_minutes} min")
    return source_minutes // target_minutes


def interpolate(series: ComponentSeries, target_minutes: int) -> ComponentSeries:
    factor = _factor(series.period_minutes, target_minutes)
    if factor == 1:
        return series
    return dataclasses.replace(series, values=linear_upsample(series.values, factor),
                               period_minutes=target_minutes)


def interpolate_regional(series: RegionalSeries, target_minutes: int) -> RegionalSeries:
    factor = _factor(series.period_minutes, target_minutes)
    if factor == 1:
        return series
    return RegionalSeries(series.quantity, series.regions, linear_upsample(series.values, factor),
                          target_minutes, series.start)


def lognormal_noise(rng: np.random.Generator, std: float, shape) -> np.ndarray:
    """Independent log-normal multipliers with mean 1 and the given std."""
    if std < 0:
        raise ValueError("noise_std must be nonnegative")
    if std == 0:
        return np.ones(shape)
    s2 = math.log1p(std * std)
    return rng.lognormal(mean=-s2 / 2, sigma=math.sqrt(s2), size=shape)


def baseline_uniform(total, ratios, noise_std: float, seed: int) -> np.ndarray:
    """Fixed-ratio scaling with independent multiplicative noise, not renormalized.

    ``total`` has shape (T,) and ``ratios`` shape (K,); the result is (K, T).
    """
    total = np.asarray(total, dtype=float)
    ratios = np.asarray(ratios, dtype=float)
    m = lognormal_noise(make_rng(seed), noise_std, (ratios.size, total.size))
    return ratios[:, None] * total[None, :] * m


def baseline_components(L: RegionalSeries, p: ContributionVector, noise_std: float, seed: int) -> ComponentSeries:
    """Baseline applied region by region to component shares."""
    slices = p.slices()
    out = np.zeros((len(p.component_ids), L.n_periods))
    for k, r in enumerate(L.regions):
        if r in slices:
            out[slices[r]] = baseline_uniform(L.values[k], p.shares[r], noise_std, seed + k)
    return ComponentSeries(L.quantity, tuple(p.component_ids), tuple(p.component_regions), out,
                           L.period_minutes, L.start, "baseline")


def write_component_csv(series_list, path) -> None:
    """Long-format CSV ``component_id,timestamp,quantity,value_mw,lineage``."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# period_minutes: {series_list[0].period_minutes}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["component_id", "timestamp", "quantity", "value_mw", "lineage"])
        for s in series_list:
            stamps = [format_timestamp(x) for x in s.timestamps]
            for cid, row in zip(s.component_ids, s.values):
                for ts, v in zip(stamps, row):
                    w.writerow([cid, ts, s.quantity, repr(float(v)), s.lineage])


def read_component_csv(path, component_regions=None) -> dict[str, ComponentSeries]:
    """Inverse of :func:`write_component_csv`; one series per quantity.

    ``component_regions`` maps component id to region (needed for regional
    sums); unknown components get region ``""``.
    """
    from .grid_model import _read_csv, parse_timestamp

    meta, rows = _read_csv(path, ("component_id", "timestamp", "quantity", "value_mw", "lineage"))
    grouped: dict[str, dict] = {}
    for lineno, row in enumerate(rows, start=2):
        q = row["quantity"]
        g = grouped.setdefault(q, {"cells": {}, "ids": [], "stamps": set(), "lineage": row["lineage"]})
        cid = row["component_id"]
        if cid not in g["cells"]:
            g["cells"][cid] = {}
            g["ids"].append(cid)
        stamp = parse_timestamp(row["timestamp"])
        g["stamps"].add(stamp)
        try:
            g["cells"][cid][stamp] = float(row["value_mw"])
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: non-numeric value_mw") from exc
    out = {}
    for q, g in grouped.items():
        stamps = sorted(g["stamps"])
        if "period_minutes" in meta:
            minutes = int(meta["period_minutes"])
        elif len(stamps) > 1:
            minutes = int((stamps[1] - stamps[0]).total_seconds() // 60)
        else:
            raise ValidationError(f"{path}: cannot determine period length")
        step = dt.timedelta(minutes=minutes)
        expected = [stamps[0] + k * step for k in range(len(stamps))]
        if stamps != expected:
            raise ValidationError(f"{path}: {q} timestamps are not equally spaced at {minutes} minutes")
        vals = np.empty((len(g["ids"]), len(stamps)))
        for i, cid in enumerate(g["ids"]):
            cells = g["cells"][cid]
            if len(cells) != len(stamps):
                raise ValidationError(f"{path}: component {cid!r} is missing periods")
            vals[i] = [cells[s] for s in stamps]
        regs = tuple((component_regions or {}).get(c, "") for c in g["ids"])
        out[q] = ComponentSeries(q, tuple(g["ids"]), regs, vals, minutes, stamps[0], g["lineage"])
    return out
