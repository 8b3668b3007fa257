"""Map anonymized market participants onto snapshot generators."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from collections import defaultdict
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .grid_model import NetworkSnapshot, Offer

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class Participant:
    participant_id: str
    fuel: str
    p_max_MW: float  # largest observed bid quantity
    attributes: tuple[tuple[str, str], ...] = ()


@dataclasses.dataclass(frozen=True)
class OfferBook:
    offers: tuple[Offer, ...]
    participants: Mapping[str, Participant]
    assignment: Mapping[str, str]  # generator id -> participant id


@dataclasses.dataclass(frozen=True)
class MatchPolicy:
    """How generators find participants.

    ``substitutes`` maps a generator fuel with no participants of its own to
    the fuel class whose participants should stand in for it.
    ``capacity_filter`` restricts a generator to participants whose
    capacity does not exceed the generator's own p_max.
    """

    substitutes: Mapping[str, str] = dataclasses.field(default_factory=dict)
    capacity_filter: bool = False


def infer_participants(offers: Iterable[Offer]) -> dict[str, Participant]:
    fuel: dict[str, str] = {}
    cap: dict[str, float] = defaultdict(lambda: -math.inf)
    attrs: dict[str, tuple] = {}
    for o in offers:
        if not math.isfinite(o.price_usd_per_mw):
            raise ValidationError(f"participant {o.participant_id!r}: non-finite price at hour {o.hour}")
        known = fuel.setdefault(o.participant_id, o.fuel)
        if known != o.fuel:
            raise ValidationError(
                f"participant {o.participant_id!r} declares conflicting fuels {known!r} and {o.fuel!r}")
        cap[o.participant_id] = max(cap[o.participant_id], o.max_mw)
        attrs.setdefault(o.participant_id, o.attributes)
    return {pid: Participant(pid, fuel[pid], cap[pid], attrs[pid]) for pid in sorted(fuel)}


def match(
    participants: Mapping[str, Participant],
    snapshot: NetworkSnapshot,
    policy: MatchPolicy | None = None,
    *,
    generators: Sequence[str] | None = None,
) -> dict[str, str]:
    """Nearest-capacity matching within fuel class; participants may be reused.

    Ties go to the lexicographically smallest participant id. ``generators``
    restricts the matching to a subset (e.g. dispatchable units only).
    """
    policy = policy or MatchPolicy()
    by_fuel: dict[str, list[Participant]] = defaultdict(list)
    for pid in sorted(participants):
        by_fuel[participants[pid].fuel].append(participants[pid])
    wanted = set(generators) if generators is not None else None
    out = {}
    for g in sorted(snapshot.generators, key=lambda g: g.id):
        if wanted is not None and g.id not in wanted:
            continue
        fuel = g.fuel
        if fuel not in by_fuel:
            sub = policy.substitutes.get(fuel)
            if sub is None or sub not in by_fuel:
                raise ValidationError(f"generator {g.id!r}: no participant or substitution for fuel {fuel!r}")
            log.info("generator %s: fuel %s substituted by %s", g.id, fuel, sub)
            fuel = sub
        pool = by_fuel[fuel]
        if policy.capacity_filter:
            pool = [q for q in pool if q.p_max_MW <= g.p_max_MW]
            if not pool:
                raise ValidationError(
                    f"generator {g.id!r}: no {fuel} participant with capacity <= {g.p_max_MW} MW")
        gaps = [abs(g.p_max_MW - q.p_max_MW) for q in pool]
        out[g.id] = pool[int(np.argmin(gaps))].participant_id
    return out


def scale_ratios(assignment: Mapping[str, str], participants: Mapping[str, Participant],
                 snapshot: NetworkSnapshot) -> dict[str, float]:
    pmax = {g.id: g.p_max_MW for g in snapshot.generators}
    out = {}
    for gid, pid in assignment.items():
        cap = participants[pid].p_max_MW
        out[gid] = pmax[gid] / cap if cap > 0 else 0.0
    return out


@dataclasses.dataclass(frozen=True)
class GeneratorOffers:
    """Hourly offers of one generator over a horizon."""

    generator_id: str
    hours: np.ndarray
    price: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    attributes: tuple[tuple[str, str], ...] = ()


def offer_series(
    book: OfferBook,
    snapshot: NetworkSnapshot,
    horizon: Sequence[int],
) -> dict[str, GeneratorOffers]:
    """Per-generator hourly offers inherited from the assigned participant.

    Quantities scale by p_max(generator) / capacity(participant); prices are
    copied unchanged.
    """
    hours = np.asarray(list(horizon), dtype=int)
    table: dict[str, dict[int, Offer]] = defaultdict(dict)
    for o in book.offers:
        table[o.participant_id][o.hour] = o
    ratio = scale_ratios(book.assignment, book.participants, snapshot)
    out = {}
    for gid in sorted(book.assignment):
        pid = book.assignment[gid]
        rows = table[pid]
        gap = [h for h in hours if h not in rows]
        if gap:
            raise ValidationError(f"participant {pid!r} (generator {gid!r}) has no offers for hours {gap[:10]}")
        sel = [rows[h] for h in hours]
        k = ratio[gid]
        out[gid] = GeneratorOffers(
            generator_id=gid,
            hours=hours,
            price=np.array([o.price_usd_per_mw for o in sel]),
            p_min=k * np.array([o.min_mw for o in sel]),
            p_max=k * np.array([o.max_mw for o in sel]),
            attributes=book.participants[pid].attributes,
        )
    return out


def build_offer_book(book: OfferBook, snapshot: NetworkSnapshot, policy: MatchPolicy | None = None,
                     *, generators: Sequence[str] | None = None) -> OfferBook:
    return dataclasses.replace(book, assignment=match(book.participants, snapshot, policy, generators=generators))


def write_assignment_csv(book: OfferBook, snapshot: NetworkSnapshot, path) -> None:
    ratio = scale_ratios(book.assignment, book.participants, snapshot)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generator_id", "participant_id", "scale_ratio"])
        for gid in sorted(book.assignment):
            w.writerow([gid, book.assignment[gid], repr(ratio[gid])])


def write_offer_series_csv(series: Mapping[str, GeneratorOffers], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generator_id", "hour", "price_usd_per_mw", "max_mw", "min_mw"])
        for gid in sorted(series):
            s = series[gid]
            for h, pr, hi, lo in zip(s.hours, s.price, s.p_max, s.p_min):
                w.writerow([gid, int(h), repr(float(pr)), repr(float(hi)), repr(float(lo))])
