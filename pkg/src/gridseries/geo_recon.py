"""Substation geolocation by matching line lengths.

Each snapshot bus (substation) is assigned to a distinct registry location in
its region with a compatible voltage class, so that great-circle distances
between connected substations track the lengths implied by line resistance.
The problem is a quadratic assignment; we solve it approximately with a
relocate/swap local search and exactly (for tiny instances) by enumeration.
"""

from __future__ import annotations

import dataclasses
import logging
from collections import defaultdict
from typing import Mapping, Sequence

import numpy as np

from .errors import InfeasibleError, SizeLimitError, ValidationError
from .grid_model import GeoRegistry, NetworkSnapshot

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088

#: nominal transmission voltage classes (kV); voltages are snapped to the nearest
STANDARD_KV = (20.0, 45.0, 63.0, 90.0, 150.0, 225.0, 400.0)

BRUTE_FORCE_MAX = 10


def haversine_matrix(lat_lon_deg: np.ndarray) -> np.ndarray:
    """Pairwise great-circle distances in km for an (n, 2) array of lat/lon."""
    rad = np.radians(np.asarray(lat_lon_deg, dtype=float))
    lat, lon = rad[:, 0][:, None], rad[:, 1][:, None]
    dlat = lat - lat.T
    dlon = lon - lon.T
    h = np.sin(dlat / 2) ** 2 + np.cos(lat) * np.cos(lat.T) * np.sin(dlon / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    np.fill_diagonal(d, 0.0)
    return d


def voltage_class(kv: float, classes: Sequence[float] = STANDARD_KV) -> float:
    classes = np.asarray(classes, dtype=float)
    return float(classes[np.argmin(np.abs(classes - kv))])


def implied_lengths(s: NetworkSnapshot, km_per_ohm: float) -> dict[tuple[int, int], float]:
    """Resistance-implied line lengths keyed by (bus index, bus index), i < j.

    Parallel branches collapse to their smallest resistance.
    """
    if not km_per_ohm > 0:
        raise ValueError("km_per_ohm must be positive")
    idx = s.bus_index
    out: dict[tuple[int, int], float] = {}
    for br in s.branches:
        i, j = sorted((idx[br.from_bus], idx[br.to_bus]))
        r = br.resistance_pu
        out[(i, j)] = min(out.get((i, j), np.inf), r)
    return {k: km_per_ohm * r for k, r in out.items()}


def calibrate_km_per_ohm(
    s: NetworkSnapshot,
    registry: GeoRegistry,
    known: Mapping[str, str],
) -> float:
    """Least-squares scale between resistance and distance over branches whose
    two endpoints both have a known location (``bus id -> location id``)."""
    loc = {e.location_id: k for k, e in enumerate(registry.entries)}
    coords = registry.coordinates
    r, d = [], []
    for br in s.branches:
        if br.from_bus in known and br.to_bus in known and br.resistance_pu > 0:
            pair = coords[[loc[known[br.from_bus]], loc[known[br.to_bus]]]]
            d.append(haversine_matrix(pair)[0, 1])
            r.append(br.resistance_pu)
    if not r:
        raise ValidationError("no branch has both endpoints in the known mapping")
    r, d = np.array(r), np.array(d)
    return float(r @ d / (r @ r))


@dataclasses.dataclass(frozen=True)
class AssignmentProblem:
    """Quadratic assignment instance.

    ``compatible[i]`` holds the candidate location indices of substation i;
    ``edges`` lists connected substation pairs (i, k) with their implied
    length in ``target_km``; ``distance_km`` is the location distance matrix.
    """

    substation_ids: tuple[str, ...]
    location_ids: tuple[str, ...]
    compatible: tuple[tuple[int, ...], ...]
    distance_km: np.ndarray
    edges: np.ndarray  # (m, 2) int
    target_km: np.ndarray  # (m,)

    def __post_init__(self):
        for i, cand in enumerate(self.compatible):
            if not cand:
                raise InfeasibleError(f"substation {self.substation_ids[i]!r} has no compatible location")
        d = self.distance_km
        if d.shape != (len(self.location_ids),) * 2:
            raise ValidationError("distance matrix shape does not match locations")
        if not (np.allclose(d, d.T) and np.all(np.diag(d) == 0) and np.all(d >= 0)):
            raise ValidationError("distance matrix must be symmetric, nonnegative with zero diagonal")

    @property
    def n(self) -> int:
        return len(self.substation_ids)

    def neighbors(self) -> list[list[tuple[int, float]]]:
        nb: list[list[tuple[int, float]]] = [[] for _ in range(self.n)]
        for (i, k), t in zip(self.edges, self.target_km):
            nb[i].append((int(k), float(t)))
            nb[k].append((int(i), float(t)))
        return nb

    def objective(self, loc: Sequence[int]) -> float:
        if len(self.edges) == 0:
            return 0.0
        loc = np.asarray(loc)
        d = self.distance_km[loc[self.edges[:, 0]], loc[self.edges[:, 1]]]
        return float(np.sum((d - self.target_km) ** 2))

    def is_feasible(self, loc: Sequence[int]) -> bool:
        if len(loc) != self.n or len(set(loc)) != self.n:
            return False
        return all(j in self.compatible[i] for i, j in enumerate(loc))


@dataclasses.dataclass(frozen=True)
class Assignment:
    mapping: Mapping[str, str]  # substation id -> location id
    locations: tuple[int, ...]  # location index per substation
    objective: float
    history: tuple[float, ...] = ()  # objective after each accepted move


def build_problem(
    s: NetworkSnapshot,
    g: GeoRegistry,
    *,
    km_per_ohm: float = 1.0,
    kv_classes: Sequence[float] = STANDARD_KV,
) -> AssignmentProblem:
    by_class: dict[tuple[str, float], list[int]] = defaultdict(list)
    for j, e in enumerate(g.entries):
        by_class[(e.region_id, voltage_class(e.voltage_kV, kv_classes))].append(j)
    compatible = []
    for b in s.buses:
        cand = by_class.get((b.region_id, voltage_class(b.voltage_kV, kv_classes)), [])
        if not cand:
            raise InfeasibleError(
                f"substation {b.id!r} (region {b.region_id}, {b.voltage_kV} kV) has no compatible location")
        compatible.append(tuple(cand))
    lengths = implied_lengths(s, km_per_ohm)
    edges = np.array(sorted(lengths), dtype=int).reshape(-1, 2)
    target = np.array([lengths[tuple(e)] for e in edges], dtype=float)
    return AssignmentProblem(
        substation_ids=tuple(b.id for b in s.buses),
        location_ids=tuple(e.location_id for e in g.entries),
        compatible=tuple(compatible),
        distance_km=haversine_matrix(g.coordinates) if len(g) else np.zeros((0, 0)),
        edges=edges,
        target_km=target,
    )


def _check_pigeonhole(p: AssignmentProblem) -> None:
    # substations sharing a candidate set compete for it; Hall's condition per class
    groups: dict[tuple[int, ...], int] = defaultdict(int)
    for cand in p.compatible:
        groups[cand] += 1
    for cand, count in groups.items():
        if count > len(cand):
            raise InfeasibleError(f"{count} substations share only {len(cand)} compatible locations")


def _result(p: AssignmentProblem, loc, history=()) -> Assignment:
    loc = tuple(int(j) for j in loc)
    mapping = {p.substation_ids[i]: p.location_ids[j] for i, j in enumerate(loc)}
    return Assignment(mapping, loc, p.objective(loc), tuple(history))


def brute_force(p: AssignmentProblem) -> Assignment:
    """Globally optimal assignment by depth-first enumeration.

    Partial objectives only grow, so branches whose partial cost already
    reaches the incumbent are cut.
    """
    if p.n > BRUTE_FORCE_MAX:
        raise SizeLimitError(f"brute force limited to {BRUTE_FORCE_MAX} substations, got {p.n}")
    _check_pigeonhole(p)
    nb = p.neighbors()
    order = sorted(range(p.n), key=lambda i: (len(p.compatible[i]), -len(nb[i])))
    loc = [-1] * p.n
    used: set[int] = set()
    best = [np.inf, None]
    D = p.distance_km

    def visit(depth: int, cost: float) -> None:
        if cost >= best[0]:
            return
        if depth == p.n:
            best[0], best[1] = cost, list(loc)
            return
        i = order[depth]
        for j in p.compatible[i]:
            if j in used:
                continue
            inc = sum((D[j, loc[k]] - t) ** 2 for k, t in nb[i] if loc[k] >= 0)
            loc[i] = j
            used.add(j)
            visit(depth + 1, cost + inc)
            used.discard(j)
            loc[i] = -1

    visit(0, 0.0)
    if best[1] is None:
        raise InfeasibleError("no injective compatible assignment exists")
    return _result(p, best[1])


class _Search:
    """Incremental-cost bookkeeping for the local search."""

    def __init__(self, p: AssignmentProblem):
        self.p = p
        self.nb = p.neighbors()
        self.D = p.distance_km

    def node_cost(self, i: int, j: int, loc, skip: int = -1) -> float:
        D = self.D
        return sum((D[j, loc[k]] - t) ** 2 for k, t in self.nb[i] if k != skip and loc[k] >= 0)

    def greedy(self, order) -> list[int]:
        p = self.p
        loc = [-1] * p.n
        used: set[int] = set()
        for i in order:
            free = [j for j in p.compatible[i] if j not in used]
            if not free:
                raise InfeasibleError(f"greedy construction stranded substation {p.substation_ids[i]!r}")
            costs = [self.node_cost(i, j, loc) for j in free]
            j = free[int(np.argmin(costs))]
            loc[i] = j
            used.add(j)
        return loc

    def descend(self, loc: list[int], rng: np.random.Generator, max_moves: int, history: list[float]):
        """First-improvement descent over relocate and swap moves."""
        p = self.p
        owner = {j: i for i, j in enumerate(loc)}
        obj = p.objective(loc)
        moves = 0
        improved = True
        while improved and moves < max_moves:
            improved = False
            for i in rng.permutation(p.n):
                i = int(i)
                cur = self.node_cost(i, loc[i], loc)
                # relocation to a free compatible location
                for j in p.compatible[i]:
                    if j == loc[i] or j in owner:
                        continue
                    delta = self.node_cost(i, j, loc) - cur
                    if delta < -1e-12:
                        del owner[loc[i]]
                        loc[i] = j
                        owner[j] = i
                        obj += delta
                        history.append(obj)
                        moves += 1
                        improved = True
                        break
                if improved:
                    break
                # swap with a substation whose location is mutually compatible
                for j in p.compatible[i]:
                    k = owner.get(j)
                    if k is None or k == i or loc[i] not in p.compatible[k]:
                        continue
                    before = cur + self.node_cost(k, loc[k], loc, skip=i)
                    li, lk = loc[i], loc[k]
                    loc[i], loc[k] = lk, li
                    after = self.node_cost(i, lk, loc) + self.node_cost(k, li, loc, skip=i)
                    delta = after - before
                    if delta < -1e-12:
                        owner[lk], owner[li] = i, k
                        obj += delta
                        history.append(obj)
                        moves += 1
                        improved = True
                        break
                    loc[i], loc[k] = li, lk
                if improved:
                    break
        return loc, p.objective(loc)

    def perturb(self, loc: list[int], rng: np.random.Generator, strength: int) -> list[int]:
        p = self.p
        loc = list(loc)
        owner = {j: i for i, j in enumerate(loc)}
        for _ in range(strength):
            i = int(rng.integers(p.n))
            j = int(rng.choice(p.compatible[i]))
            k = owner.get(j)
            if k is None:
                del owner[loc[i]]
                loc[i] = j
                owner[j] = i
            elif k != i and loc[i] in p.compatible[k]:
                owner[loc[i]], owner[j] = k, i
                loc[i], loc[k] = j, loc[i]
        return loc


def local_search(
    p: AssignmentProblem,
    seed: int = 0,
    budget: int = 200,
    *,
    max_moves: int = 100_000,
) -> Assignment:
    """Approximate minimizer of the squared length mismatch.

    Starts from a greedy construction (high-degree substations first, each
    taking the compatible location with least incremental cost), descends
    with relocate/swap moves, and on stagnation restarts from a random
    perturbation of the incumbent. ``budget`` bounds the number of restarts.

    The returned objective is never worse than the greedy start and the
    result depends only on ``(p, seed, budget)``.
    """
    _check_pigeonhole(p)
    rng = np.random.Generator(np.random.Philox(seed))
    search = _Search(p)
    degree = [len(x) for x in search.nb]
    order = sorted(range(p.n), key=lambda i: (-degree[i], i))
    history: list[float] = []
    loc = search.greedy(order)
    history.append(p.objective(loc))
    loc, obj = search.descend(loc, rng, max_moves, history)
    best_loc, best_obj = list(loc), obj
    strength = max(2, p.n // 10)
    for _ in range(budget):
        if best_obj <= 0.0:
            break
        cand = search.perturb(best_loc, rng, strength)
        cand, obj = search.descend(cand, rng, max_moves, [])
        if obj < best_obj - 1e-12:
            best_loc, best_obj = list(cand), obj
            history.append(best_obj)
    log.debug("local search finished: objective %.6g after %d accepted moves", best_obj, len(history))
    return _result(p, best_loc, history)


def write_assignment_csv(a: Assignment, p: AssignmentProblem, registry: GeoRegistry, path) -> None:
    import csv

    loc_index = {e.location_id: e for e in registry.entries}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["substation_id", "location_id", "lat", "lon"])
        for sid in p.substation_ids:
            e = loc_index[a.mapping[sid]]
            w.writerow([sid, e.location_id, repr(e.latitude_deg), repr(e.longitude_deg)])


def substation_coordinates(a: Assignment, s: NetworkSnapshot, registry: GeoRegistry) -> dict[str, tuple[float, float]]:
    """Latitude/longitude of each bus under the assignment."""
    loc_index = {e.location_id: e for e in registry.entries}
    return {b.id: (loc_index[a.mapping[b.id]].latitude_deg, loc_index[a.mapping[b.id]].longitude_deg)
            for b in s.buses}
