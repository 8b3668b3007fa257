"""Data model and file ingestion.

Everything here is immutable after construction so that parsed inputs can
be shared read-only between worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import functools
import json
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateRegionError, ParseError, ValidationError

QUANTITIES = ("load", "wind", "solar")

SNAPSHOT_KEYS = ("buses", "branches", "generators", "loads", "regions")
HISTORY_HEADER = ("timestamp", "region_id", "quantity", "value_mw")
REGISTRY_HEADER = ("location_id", "lat", "lon", "region_id", "voltage_kv")
OFFERS_HEADER = ("participant_id", "hour", "fuel", "price_usd_per_mw", "max_mw", "min_mw")


@dataclasses.dataclass(frozen=True)
class Bus:
    id: str
    region_id: str
    voltage_kV: float


@dataclasses.dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    resistance_pu: float
    reactance_pu: float
    thermal_limit_MW: float


@dataclasses.dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    fuel: str
    p_min_MW: float
    p_max_MW: float


@dataclasses.dataclass(frozen=True)
class Load:
    id: str
    bus: str
    nominal_MW: float


@dataclasses.dataclass(frozen=True)
class NetworkSnapshot:
    """A static description of a transmission network at one operating point.

    Construction validates every invariant; a snapshot that exists is sound.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    regions: tuple[str, ...]

    def __post_init__(self):
        _validate_snapshot(self)

    @functools.cached_property
    def bus_index(self) -> dict[str, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    def bus_region(self, bus_id: str) -> str:
        return self._bus_map[bus_id].region_id

    @functools.cached_property
    def _bus_map(self) -> dict[str, Bus]:
        return {b.id: b for b in self.buses}

    @property
    def nominal_load(self) -> np.ndarray:
        """Snapshot load values, one per entry of ``loads``."""
        return np.array([ld.nominal_MW for ld in self.loads], dtype=float)

    def load_regions(self) -> list[str]:
        bmap = self._bus_map
        return [bmap[ld.bus].region_id for ld in self.loads]


def _validate_snapshot(s: NetworkSnapshot) -> None:
    region_set = set(s.regions)
    if len(region_set) != len(s.regions):
        raise ValidationError("duplicate region ids in snapshot")
    for kind, records in (("bus", s.buses), ("branch", s.branches),
                          ("generator", s.generators), ("load", s.loads)):
        seen = set()
        for rec in records:
            if rec.id in seen:
                raise ValidationError(f"duplicate {kind} id {rec.id!r}")
            seen.add(rec.id)
    buses = {b.id for b in s.buses}
    for b in s.buses:
        if b.region_id not in region_set:
            raise ValidationError(f"bus {b.id!r} has unknown region {b.region_id!r}")
        if not b.voltage_kV > 0:
            raise ValidationError(f"bus {b.id!r} has non-positive voltage {b.voltage_kV}")
    for br in s.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in buses:
                raise ValidationError(f"branch {br.id!r} references unknown bus {end!r}")
        if br.from_bus == br.to_bus:
            raise ValidationError(f"branch {br.id!r} is a self-loop on bus {br.from_bus!r}")
        if not br.resistance_pu >= 0:
            raise ValidationError(f"branch {br.id!r} has negative resistance {br.resistance_pu}")
        if not br.reactance_pu > 0:
            raise ValidationError(f"branch {br.id!r} has non-positive reactance {br.reactance_pu}")
        if not br.thermal_limit_MW > 0:
            raise ValidationError(f"branch {br.id!r} has non-positive thermal limit {br.thermal_limit_MW}")
    for g in s.generators:
        if g.bus not in buses:
            raise ValidationError(f"generator {g.id!r} references unknown bus {g.bus!r}")
        if not g.p_min_MW <= g.p_max_MW:
            raise ValidationError(f"generator {g.id!r} has p_min_MW > p_max_MW")
    for ld in s.loads:
        if ld.bus not in buses:
            raise ValidationError(f"load {ld.id!r} references unknown bus {ld.bus!r}")
        if not ld.nominal_MW >= 0:
            raise ValidationError(f"load {ld.id!r} has negative nominal_MW {ld.nominal_MW}")


def _records(raw: Mapping, key: str, cls, path) -> tuple:
    out = []
    fields = [f.name for f in dataclasses.fields(cls)]
    for k, rec in enumerate(raw.get(key, [])):
        try:
            kwargs = {}
            for f in dataclasses.fields(cls):
                v = rec[f.name]
                kwargs[f.name] = float(v) if f.type == "float" else str(v)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: {key}[{k}] malformed, expected fields {fields}: {exc!r}") from exc
        out.append(cls(**kwargs))
    return tuple(out)


def snapshot_from_dict(raw: Mapping, source="<dict>") -> NetworkSnapshot:
    missing = [k for k in SNAPSHOT_KEYS if k not in raw]
    if missing:
        raise ParseError(f"{source}: missing top-level keys {missing}")
    regions = []
    for r in raw["regions"]:
        regions.append(str(r["id"]) if isinstance(r, Mapping) else str(r))
    return NetworkSnapshot(
        buses=_records(raw, "buses", Bus, source),
        branches=_records(raw, "branches", Branch, source),
        generators=_records(raw, "generators", Generator, source),
        loads=_records(raw, "loads", Load, source),
        regions=tuple(regions),
    )


def snapshot_to_dict(s: NetworkSnapshot) -> dict:
    """Canonical (id-sorted) dictionary form of a snapshot."""
    def rows(records):
        return [dataclasses.asdict(r) for r in sorted(records, key=lambda r: _id_key(r.id))]

    return {
        "buses": rows(s.buses),
        "branches": rows(s.branches),
        "generators": rows(s.generators),
        "loads": rows(s.loads),
        "regions": sorted(s.regions, key=_id_key),
    }


def _id_key(x: str):
    # numeric ids sort numerically, then everything else lexicographically
    return (0, int(x), "") if x.lstrip("-").isdigit() else (1, 0, x)


def load_snapshot(path) -> NetworkSnapshot:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be an object")
    return snapshot_from_dict(raw, source=path)


def write_snapshot(s: NetworkSnapshot, path) -> None:
    Path(path).write_text(json.dumps(snapshot_to_dict(s), indent=2, sort_keys=True) + "\n")


# -- contribution vectors ----------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ContributionVector:
    """Per-region component shares.

    ``members[r]`` lists the component ids of region ``r`` and
    ``shares[r]`` the matching nonnegative weights summing to one.
    """

    regions: tuple[str, ...]
    members: Mapping[str, tuple[str, ...]]
    shares: Mapping[str, np.ndarray]

    @property
    def component_ids(self) -> list[str]:
        return [c for r in self.regions for c in self.members[r]]

    @property
    def component_regions(self) -> list[str]:
        return [r for r in self.regions for _ in self.members[r]]

    def flat_shares(self) -> np.ndarray:
        return np.concatenate([self.shares[r] for r in self.regions]) if self.regions else np.zeros(0)

    def slices(self) -> dict[str, slice]:
        """Row ranges of each region in the flattened component order."""
        out, start = {}, 0
        for r in self.regions:
            n = len(self.members[r])
            out[r] = slice(start, start + n)
            start += n
        return out


def shares_from_weights(
    regions: Sequence[str],
    items: Iterable[tuple[str, str, float]],
    *,
    fallback: str | None = None,
    require_all: bool = True,
) -> ContributionVector:
    """Build shares from ``(component_id, region_id, weight)`` triples.

    ``fallback="uniform"`` replaces an all-zero region with equal shares;
    the default raises :class:`DegenerateRegionError`.
    """
    if fallback not in (None, "uniform"):
        raise ValueError(f"unknown fallback {fallback!r}")
    by_region: dict[str, list[tuple[str, float]]] = defaultdict(list)
    for cid, reg, w in items:
        by_region[reg].append((cid, float(w)))
    kept, members, shares = [], {}, {}
    for r in regions:
        entries = by_region.get(r, [])
        if not entries:
            if require_all:
                raise DegenerateRegionError(f"region {r!r} has no components")
            continue
        w = np.array([e[1] for e in entries])
        total = w.sum()
        if total <= 0:
            if fallback != "uniform":
                raise DegenerateRegionError(f"region {r!r} has zero total weight")
            p = np.full(len(w), 1.0 / len(w))
        else:
            p = w / total
        kept.append(r)
        members[r] = tuple(e[0] for e in entries)
        shares[r] = p
    return ContributionVector(tuple(kept), members, shares)


def contribution_vectors(
    s: NetworkSnapshot,
    *,
    quantity: str = "load",
    fallback: str | None = None,
    require_all: bool | None = None,
) -> ContributionVector:
    """Load shares (from nominal MW) or renewable shares (from generator p_max).

    For ``quantity`` other than ``"load"`` the components are the generators
    whose fuel equals the quantity tag, and regions without such generators
    are omitted unless ``require_all`` is set.
    """
    bmap = s._bus_map
    if quantity == "load":
        items = [(ld.id, bmap[ld.bus].region_id, ld.nominal_MW) for ld in s.loads]
        require_all = True if require_all is None else require_all
    else:
        items = [(g.id, bmap[g.bus].region_id, g.p_max_MW) for g in s.generators if g.fuel == quantity]
        require_all = False if require_all is None else require_all
    return shares_from_weights(s.regions, items, fallback=fallback, require_all=require_all)


# -- regional histories ------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class RegionalSeries:
    quantity: str
    regions: tuple[str, ...]
    values: np.ndarray  # (R, T) MW
    period_minutes: int
    start: dt.datetime

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != len(self.regions):
            raise ValidationError(f"values shape {v.shape} does not match {len(self.regions)} regions")
        if not np.all(np.isfinite(v)):
            raise ValidationError("regional values must be finite")
        if np.any(v < 0):
            r, t = np.argwhere(v < 0)[0]
            raise ValidationError(f"negative value at region {self.regions[r]!r}, period {t}")
        if self.period_minutes <= 0:
            raise ValidationError("period_minutes must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_periods(self) -> int:
        return self.values.shape[1]

    @property
    def timestamps(self) -> list[dt.datetime]:
        step = dt.timedelta(minutes=self.period_minutes)
        return [self.start + k * step for k in range(self.n_periods)]

    def total(self) -> np.ndarray:
        return self.values.sum(axis=0)


def parse_timestamp(text: str) -> dt.datetime:
    t = text.strip()
    if t.endswith("Z"):
        t = t[:-1] + "+00:00"
    try:
        stamp = dt.datetime.fromisoformat(t)
    except ValueError as exc:
        raise ParseError(f"bad timestamp {text!r}") from exc
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=dt.timezone.utc)
    return stamp.astimezone(dt.timezone.utc)


def format_timestamp(stamp: dt.datetime) -> str:
    return stamp.astimezone(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _read_csv(path, header: Sequence[str]) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Read a CSV with optional leading ``# key: value`` metadata lines."""
    meta: dict[str, str] = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if not body and line.startswith("#"):
            key, _, value = line[1:].partition(":")
            if not _:
                key, _, value = line[1:].partition("=")
            meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    if not body:
        raise ParseError(f"{path}: empty file")
    reader = csv.DictReader(body)
    missing = [h for h in header if h not in (reader.fieldnames or [])]
    if missing:
        raise ParseError(f"{path}: header missing columns {missing}")
    return meta, list(reader)


def _num(row, key, path, lineno) -> float:
    try:
        v = float(row[key])
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}:{lineno}: non-numeric {key} {row[key]!r}") from exc
    if not math.isfinite(v):
        raise ParseError(f"{path}:{lineno}: non-finite {key}")
    return v


def load_regional_history(
    path,
    *,
    regions: Sequence[str] | None = None,
    period_minutes: int | None = None,
) -> dict[str, RegionalSeries]:
    """Read ``regional_history.csv`` into one dense series per quantity.

    The period length comes from a ``# period_minutes: N`` header line
    (or the argument, when the file lacks it). Any missing
    (period, region) cell is an error; nothing is imputed.
    """
    meta, rows = _read_csv(path, HISTORY_HEADER)
    if "period_minutes" in meta:
        declared = int(meta["period_minutes"])
        if period_minutes is not None and period_minutes != declared:
            raise ValidationError(f"{path}: period_minutes {declared} conflicts with requested {period_minutes}")
        period_minutes = declared
    if period_minutes is None:
        raise ValidationError(f"{path}: period length not declared (expected '# period_minutes: N')")

    cells: dict[str, dict[tuple[dt.datetime, str], float]] = defaultdict(dict)
    for lineno, row in enumerate(rows, start=2):
        stamp = parse_timestamp(row["timestamp"])
        reg = str(row["region_id"]).strip()
        if regions is not None and reg not in regions:
            raise ValidationError(f"{path}:{lineno}: unknown region id {reg!r}")
        q = row["quantity"].strip()
        key = (stamp, reg)
        if key in cells[q]:
            raise ValidationError(f"{path}:{lineno}: duplicate row for {q} {reg} {row['timestamp']}")
        cells[q][key] = _num(row, "value_mw", path, lineno)

    step = dt.timedelta(minutes=period_minutes)
    out = {}
    for q, grid in sorted(cells.items()):
        stamps = sorted({k[0] for k in grid})
        start, end = stamps[0], stamps[-1]
        if (end - start) % step:
            raise ValidationError(f"{path}: {q} timestamps not aligned to {period_minutes}-minute periods")
        n = (end - start) // step + 1
        expected = [start + k * step for k in range(n)]
        gaps = sorted(set(expected) - set(stamps))
        if gaps:
            listed = ", ".join(format_timestamp(g) for g in gaps[:10])
            raise ValidationError(f"{path}: {q} missing periods: {listed}")
        if len(stamps) != n:
            raise ValidationError(f"{path}: {q} timestamps not aligned to {period_minutes}-minute periods")
        regs = list(regions) if regions is not None else sorted({k[1] for k in grid}, key=_id_key)
        values = np.empty((len(regs), n))
        missing = []
        for i, r in enumerate(regs):
            for t, stamp in enumerate(expected):
                v = grid.get((stamp, r))
                if v is None:
                    missing.append((r, stamp))
                    continue
                values[i, t] = v
        if missing:
            listed = ", ".join(f"{r}@{format_timestamp(s)}" for r, s in missing[:10])
            raise ValidationError(f"{path}: {q} missing cells: {listed}")
        out[q] = RegionalSeries(q, tuple(regs), values, period_minutes, start)
    return out


def write_regional_history(series: Iterable[RegionalSeries], path) -> None:
    series = list(series)
    minutes = {s.period_minutes for s in series}
    if len(minutes) != 1:
        raise ValidationError("all series in one file must share a period length")
    with open(path, "w", newline="") as fh:
        fh.write(f"# period_minutes: {minutes.pop()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for s in series:
            for t, stamp in enumerate(s.timestamps):
                ts = format_timestamp(stamp)
                for i, r in enumerate(s.regions):
                    w.writerow([ts, r, s.quantity, repr(float(s.values[i, t]))])


# -- geolocation registry ----------------------------------------------------


@dataclasses.dataclass(frozen=True)
class GeoLocation:
    location_id: str
    latitude_deg: float
    longitude_deg: float
    region_id: str
    voltage_kV: float


@dataclasses.dataclass(frozen=True)
class GeoRegistry:
    entries: tuple[GeoLocation, ...]

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.location_id in seen:
                raise ValidationError(f"duplicate location id {e.location_id!r}")
            seen.add(e.location_id)
            if not -90 <= e.latitude_deg <= 90:
                raise ValidationError(f"location {e.location_id!r}: latitude {e.latitude_deg} out of range")
            if not -180 <= e.longitude_deg <= 180:
                raise ValidationError(f"location {e.location_id!r}: longitude {e.longitude_deg} out of range")

    def __len__(self):
        return len(self.entries)

    @property
    def coordinates(self) -> np.ndarray:
        return np.array([[e.latitude_deg, e.longitude_deg] for e in self.entries]).reshape(-1, 2)


def load_geo_registry(path) -> GeoRegistry:
    _, rows = _read_csv(path, REGISTRY_HEADER)
    entries = []
    for lineno, row in enumerate(rows, start=2):
        entries.append(GeoLocation(
            location_id=row["location_id"].strip(),
            latitude_deg=_num(row, "lat", path, lineno),
            longitude_deg=_num(row, "lon", path, lineno),
            region_id=row["region_id"].strip(),
            voltage_kV=_num(row, "voltage_kv", path, lineno),
        ))
    return GeoRegistry(tuple(entries))


def write_geo_registry(g: GeoRegistry, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REGISTRY_HEADER)
        for e in g.entries:
            w.writerow([e.location_id, repr(e.latitude_deg), repr(e.longitude_deg), e.region_id, repr(e.voltage_kV)])


# -- offers ------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Offer:
    participant_id: str
    hour: int
    fuel: str
    price_usd_per_mw: float
    max_mw: float
    min_mw: float
    attributes: tuple[tuple[str, str], ...] = ()


def load_offers(path):
    """Read ``offers.csv``. Extra columns ride along as opaque attributes.

    Returns an :class:`~gridseries.bid_map.OfferBook` with participants
    inferred and no generator assignment yet.
    """
    from .bid_map import OfferBook, infer_participants

    _, rows = _read_csv(path, OFFERS_HEADER)
    offers = []
    for lineno, row in enumerate(rows, start=2):
        hour = _num(row, "hour", path, lineno)
        if hour != int(hour):
            raise ParseError(f"{path}:{lineno}: hour must be an integer")
        extra = tuple(sorted((k, v) for k, v in row.items() if k not in OFFERS_HEADER and k is not None))
        offers.append(Offer(
            participant_id=row["participant_id"].strip(),
            hour=int(hour),
            fuel=row["fuel"].strip(),
            price_usd_per_mw=_num(row, "price_usd_per_mw", path, lineno),
            max_mw=_num(row, "max_mw", path, lineno),
            min_mw=_num(row, "min_mw", path, lineno),
            attributes=extra,
        ))
    offers = tuple(offers)
    return OfferBook(offers=offers, participants=infer_participants(offers), assignment={})


def write_offers(offers: Iterable[Offer], path) -> None:
    offers = list(offers)
    extra_keys = sorted({k for o in offers for k, _ in o.attributes})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(OFFERS_HEADER) + extra_keys)
        for o in offers:
            attrs = dict(o.attributes)
            w.writerow([o.participant_id, o.hour, o.fuel, repr(o.price_usd_per_mw),
                        repr(o.max_mw), repr(o.min_mw)] + [attrs.get(k, "") for k in extra_keys])
