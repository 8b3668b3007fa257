"""DC feasibility checking and minimal-change load restoration.

Flows use the bus-angle form ``f = b * (theta_from - theta_to)`` with one
reference bus per connected island; a PTDF view of the same network is used
to cross-validate witness flows.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.csgraph import connected_components

from .errors import InfeasibleError, SolverError, ValidationError
from .grid_model import NetworkSnapshot

log = logging.getLogger(__name__)

FEAS_TOL_MW = 1e-6
DEFAULT_DERATE = 0.95


@dataclasses.dataclass(frozen=True, eq=False)
class DCModel:
    bus_ids: tuple[str, ...]
    branch_ids: tuple[str, ...]
    f_bus: np.ndarray
    t_bus: np.ndarray
    susceptance: np.ndarray  # 1 / reactance
    limit: np.ndarray  # derated MW
    gen_ids: tuple[str, ...]
    gen_bus: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    load_ids: tuple[str, ...]
    load_bus: np.ndarray
    load_region: tuple[str, ...]
    nominal: np.ndarray  # snapshot load, MW
    ref_buses: tuple[int, ...]  # one per island
    island: np.ndarray  # island label per bus
    derate: float = DEFAULT_DERATE

    @classmethod
    def from_snapshot(
        cls,
        s: NetworkSnapshot,
        *,
        derate: float = DEFAULT_DERATE,
        ref_bus: str | None = None,
        allow_islands: bool = False,
    ) -> "DCModel":
        if not 0 < derate <= 1:
            raise ValidationError(f"derate must lie in (0, 1], got {derate}")
        idx = s.bus_index
        nb = len(s.buses)
        f = np.array([idx[br.from_bus] for br in s.branches], dtype=int)
        t = np.array([idx[br.to_bus] for br in s.branches], dtype=int)
        adj = sp.coo_matrix((np.ones(len(f)), (f, t)), shape=(nb, nb))
        n_isl, labels = connected_components(adj, directed=False)
        if n_isl > 1 and not allow_islands:
            raise ValidationError(f"network is disconnected into {n_isl} islands")
        refs = []
        for k in range(n_isl):
            members = np.flatnonzero(labels == k)
            if ref_bus is not None and idx[ref_bus] in members:
                refs.append(idx[ref_bus])
            else:
                refs.append(int(members[0]))
        bmap = s._bus_map
        return cls(
            bus_ids=tuple(b.id for b in s.buses),
            branch_ids=tuple(br.id for br in s.branches),
            f_bus=f,
            t_bus=t,
            susceptance=np.array([1.0 / br.reactance_pu for br in s.branches]),
            limit=derate * np.array([br.thermal_limit_MW for br in s.branches]),
            gen_ids=tuple(g.id for g in s.generators),
            gen_bus=np.array([idx[g.bus] for g in s.generators], dtype=int),
            p_min=np.array([g.p_min_MW for g in s.generators]),
            p_max=np.array([g.p_max_MW for g in s.generators]),
            load_ids=tuple(ld.id for ld in s.loads),
            load_bus=np.array([idx[ld.bus] for ld in s.loads], dtype=int),
            load_region=tuple(bmap[ld.bus].region_id for ld in s.loads),
            nominal=s.nominal_load,
            ref_buses=tuple(refs),
            island=labels,
            derate=derate,
        )

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_branch(self) -> int:
        return len(self.branch_ids)

    @functools.cached_property
    def incidence(self) -> sp.csr_matrix:
        """Branch-bus incidence, +1 at the from bus and -1 at the to bus."""
        m = self.n_branch
        rows = np.r_[np.arange(m), np.arange(m)]
        return sp.csr_matrix((np.r_[np.ones(m), -np.ones(m)], (rows, np.r_[self.f_bus, self.t_bus])),
                             shape=(m, self.n_bus))

    @functools.cached_property
    def flow_matrix(self) -> sp.csr_matrix:
        """Maps bus angles to branch flows."""
        return sp.diags(self.susceptance) @ self.incidence

    @functools.cached_property
    def gen_map(self) -> sp.csr_matrix:
        g = len(self.gen_ids)
        return sp.csr_matrix((np.ones(g), (self.gen_bus, np.arange(g))), shape=(self.n_bus, g))

    @functools.cached_property
    def load_map(self) -> sp.csr_matrix:
        n = len(self.load_ids)
        return sp.csr_matrix((np.ones(n), (self.load_bus, np.arange(n))), shape=(self.n_bus, n))

    def bus_load(self, per_load: np.ndarray) -> np.ndarray:
        return self.load_map @ np.asarray(per_load, dtype=float)

    @functools.cached_property
    def ptdf(self) -> np.ndarray:
        """Dense PTDF: branch flow per unit injection at each bus (withdrawn at the island reference)."""
        B = (self.incidence.T @ self.flow_matrix).toarray()
        keep = np.setdiff1d(np.arange(self.n_bus), self.ref_buses)
        X = np.zeros((self.n_bus, self.n_bus))
        if keep.size:
            X[np.ix_(keep, keep)] = np.linalg.inv(B[np.ix_(keep, keep)])
        return self.flow_matrix @ X

    def with_bounds(self, p_min=None, p_max=None) -> "DCModel":
        return dataclasses.replace(
            self,
            p_min=self.p_min if p_min is None else np.asarray(p_min, dtype=float),
            p_max=self.p_max if p_max is None else np.asarray(p_max, dtype=float),
        )


@dataclasses.dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    dispatch: np.ndarray | None = None
    angles: np.ndarray | None = None
    flows: np.ndarray | None = None
    certificate: dict | None = None
    ptdf_discrepancy: float = 0.0


def _bounds(model: DCModel, p_min, p_max):
    lo = model.p_min if p_min is None else np.asarray(p_min, dtype=float)
    hi = model.p_max if p_max is None else np.asarray(p_max, dtype=float)
    return lo, hi


def _capacity_certificate(model: DCModel, bus_load: np.ndarray, lo, hi, tol: float):
    for k in range(len(model.ref_buses)):
        in_isl = model.island == k
        demand = float(bus_load[in_isl].sum())
        g_isl = in_isl[model.gen_bus]
        cap_hi, cap_lo = float(hi[g_isl].sum()), float(lo[g_isl].sum())
        if demand > cap_hi + tol:
            return {"kind": "capacity", "island": k, "demand_mw": demand, "capacity_mw": cap_hi}
        if demand < cap_lo - tol:
            return {"kind": "min_generation", "island": k, "demand_mw": demand, "min_output_mw": cap_lo}
    return None


def feasibility_check(
    model: DCModel,
    bus_load: np.ndarray,
    *,
    p_min=None,
    p_max=None,
    tol: float = FEAS_TOL_MW,
) -> FeasibilityResult:
    """Is there a dispatch meeting ``bus_load`` within bounds and derated limits?

    Solves a phase-one LP that minimizes total flow-limit excess. A positive
    optimum is the certificate: the branches listed cannot all be brought
    within limits by any admissible dispatch.
    """
    bus_load = np.asarray(bus_load, dtype=float)
    if bus_load.shape != (model.n_bus,):
        raise ValidationError(f"expected {model.n_bus} bus loads, got shape {bus_load.shape}")
    lo, hi = _bounds(model, p_min, p_max)
    cert = _capacity_certificate(model, bus_load, lo, hi, tol)
    if cert is not None:
        return FeasibilityResult(False, certificate=cert)

    G, nb, m = len(model.gen_ids), model.n_bus, model.n_branch
    # x = [pg (G), theta (nb), excess (m)]
    F = model.flow_matrix
    Bbus = model.incidence.T @ F
    A_eq = sp.hstack([model.gen_map, -Bbus, sp.csr_matrix((nb, m))])
    ref_rows = sp.csr_matrix((np.ones(len(model.ref_buses)),
                              (np.arange(len(model.ref_buses)), np.array(model.ref_buses) + G)),
                             shape=(len(model.ref_buses), G + nb + m))
    A_eq = sp.vstack([A_eq, ref_rows]).tocsr()
    b_eq = np.r_[bus_load, np.zeros(len(model.ref_buses))]
    I = sp.identity(m)
    zG = sp.csr_matrix((m, G))
    A_ub = sp.vstack([sp.hstack([zG, F, -I]), sp.hstack([zG, -F, -I])]).tocsr()
    b_ub = np.r_[model.limit, model.limit]
    c = np.r_[np.zeros(G + nb), np.ones(m)]
    bounds = [(l, h) for l, h in zip(lo, hi)] + [(None, None)] * nb + [(0, None)] * m
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        raise SolverError(f"feasibility LP failed: {res.message}")
    pg, theta, excess = res.x[:G], res.x[G:G + nb], res.x[G + nb:]
    flows = F @ theta
    if res.fun > tol:
        bad = np.flatnonzero(excess > tol * 1e-3)
        viol = [{"branch": model.branch_ids[k], "flow_mw": float(flows[k]),
                 "limit_mw": float(model.limit[k]), "excess_mw": float(excess[k])} for k in bad]
        return FeasibilityResult(False, pg, theta, flows,
                                 {"kind": "flow", "total_excess_mw": float(res.fun), "branches": viol})
    injection = model.gen_map @ pg - bus_load
    ptdf_flows = model.ptdf @ injection
    disc = float(np.max(np.abs(ptdf_flows - flows), initial=0.0))
    return FeasibilityResult(True, pg, theta, flows, None, disc)


# -- restoration -------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class RestorationResult:
    restored: np.ndarray  # per load, MW
    slack: np.ndarray
    objective: float
    status: str  # "unchanged" | "restored"
    delta: np.ndarray
    seconds: float = 0.0  # wall time of the solve, not part of any output file

    @property
    def l1_change(self) -> float:
        return float(np.abs(self.delta).sum())

    @property
    def max_change(self) -> float:
        return float(np.abs(self.delta).max(initial=0.0))


def _groups(model: DCModel, regions: Sequence[str]):
    """(island, region) groups of loads, in a fixed order."""
    isl = model.island[model.load_bus]
    keys = []
    for r in regions:
        for k in range(len(model.ref_buses)):
            members = np.flatnonzero((np.asarray(model.load_region) == r) & (isl == k))
            if members.size:
                keys.append((r, k, members))
    return keys


def _group_totals(groups, regions: Sequence[str], totals: np.ndarray, L_hat: np.ndarray) -> np.ndarray:
    """Split each regional total across islands in proportion to the disaggregated load."""
    rindex = {r: k for k, r in enumerate(regions)}
    out = np.empty(len(groups))
    by_region: dict[str, list[int]] = {}
    for g, (r, _, _) in enumerate(groups):
        by_region.setdefault(r, []).append(g)
    for r, gs in by_region.items():
        tot = float(totals[rindex[r]])
        parts = np.array([L_hat[groups[g][2]].sum() for g in gs])
        share = parts / parts.sum() if parts.sum() > 0 else np.full(len(gs), 1.0 / len(gs))
        out[gs] = tot * share
    return out


class Restorer:
    """Compiled restoration program for one network and region ordering.

    Per-period data (disaggregated load, bounds, totals, generator limits)
    enter as parameters, so repeated solves reuse one compiled problem.
    """

    def __init__(self, model: DCModel, regions: Sequence[str], *, linear_slack: float | None = None):
        import cvxpy as cp

        self.model = model
        self.regions = tuple(regions)
        self.groups = _groups(model, self.regions)
        covered = np.zeros(len(model.load_ids), dtype=bool)
        for _, _, members in self.groups:
            covered[members] = True
        if not covered.all():
            missing = [model.load_ids[i] for i in np.flatnonzero(~covered)][:5]
            raise ValidationError(f"loads in regions outside the restoration set: {missing}")
        n, G, nb = len(model.load_ids), len(model.gen_ids), model.n_bus
        self.L_hat = cp.Parameter(n)
        self.hi = cp.Parameter(n)
        self.lo = cp.Parameter(n)
        self.total = cp.Parameter(len(self.groups))
        self.pmin = cp.Parameter(G)
        self.pmax = cp.Parameter(G)
        self.L = cp.Variable(n, nonneg=True)
        self.s = cp.Variable(n, nonneg=True)
        up = cp.Variable(n, nonneg=True)
        down = cp.Variable(n, nonneg=True)
        self.pg = cp.Variable(G)
        self.theta = cp.Variable(nb)
        F = model.flow_matrix
        Bbus = (model.incidence.T @ F).tocsr()
        S = sp.csr_matrix((np.ones(n), (np.concatenate([np.full(len(m), g) for g, (_, _, m) in enumerate(self.groups)]),
                                        np.concatenate([m for _, _, m in self.groups]))),
                          shape=(len(self.groups), n))
        flow = F @ self.theta
        cons = [
            self.L - self.L_hat == up - down,
            model.gen_map @ self.pg - Bbus @ self.theta == model.load_map @ self.L,
            self.theta[list(model.ref_buses)] == 0,
            flow <= model.limit,
            flow >= -model.limit,
            self.pg >= self.pmin,
            self.pg <= self.pmax,
            S @ self.L == self.total,
            self.L <= self.hi + self.s,
            self.L >= self.lo - self.s,
        ]
        penalty = cp.sum_squares(self.s) if linear_slack is None else linear_slack * cp.sum(self.s)
        self.problem = cp.Problem(cp.Minimize(cp.sum(up) + cp.sum(down) + penalty), cons)
        self.linear_slack = linear_slack

    def group_totals(self, totals: np.ndarray, L_hat: np.ndarray) -> np.ndarray:
        return _group_totals(self.groups, self.regions, totals, L_hat)

    def solve(self, L_hat, totals, *, nominal=None, p_min=None, p_max=None) -> RestorationResult:
        import cvxpy as cp

        t0 = time.perf_counter()
        model = self.model
        L_hat = np.asarray(L_hat, dtype=float)
        nominal = model.nominal if nominal is None else np.asarray(nominal, dtype=float)
        lo_g, hi_g = _bounds(model, p_min, p_max)
        totals = np.asarray(totals, dtype=float)
        demand = float(totals.sum())
        if demand > hi_g.sum() + FEAS_TOL_MW:
            raise InfeasibleError(f"total demand {demand:.6g} MW exceeds generation capacity {hi_g.sum():.6g} MW",
                                  {"kind": "capacity", "demand_mw": demand, "capacity_mw": float(hi_g.sum())})
        gtot = self.group_totals(totals, L_hat)

        # a feasible, regionally exact input is its own optimum at objective zero
        if np.all(L_hat >= 0):
            sums = np.array([L_hat[m].sum() for _, _, m in self.groups])
            if np.all(np.abs(sums - gtot) <= 1e-9 * np.maximum(1.0, np.abs(gtot))):
                chk = feasibility_check(model, model.bus_load(L_hat), p_min=lo_g, p_max=hi_g)
                if chk.feasible:
                    z = np.zeros_like(L_hat)
                    return RestorationResult(L_hat.copy(), z, 0.0, "unchanged", z, time.perf_counter() - t0)

        self.L_hat.value = L_hat
        self.hi.value = np.maximum(L_hat, nominal)
        self.lo.value = np.minimum(L_hat, nominal)
        self.total.value = gtot
        self.pmin.value = lo_g
        self.pmax.value = hi_g
        try:
            # no warm start: each period's result depends only on its own data
            self.problem.solve(solver=cp.CLARABEL, warm_start=False,
                               tol_feas=1e-10, tol_gap_abs=1e-10, tol_gap_rel=1e-10)
        except cp.error.SolverError as exc:
            raise SolverError(f"restoration solve failed: {exc}") from exc
        status = self.problem.status
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            raise InfeasibleError("no DC-feasible load satisfies the regional totals",
                                  {"kind": "restoration", "status": status})
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            raise SolverError(f"restoration solver status {status}")
        L = np.maximum(self.L.value, 0.0)
        # for fixed L the optimal slack is the distance to the [lo, hi] box
        s = np.maximum.reduce([np.zeros_like(L), L - self.hi.value, self.lo.value - L])
        obj = float(np.abs(L - L_hat).sum() + (s @ s if self.linear_slack is None else self.linear_slack * s.sum()))
        return RestorationResult(L, s, obj, "restored", L - L_hat, time.perf_counter() - t0)


def restore(model: DCModel, L_hat, nominal, totals, regions: Sequence[str], *,
            p_min=None, p_max=None) -> RestorationResult:
    """One-shot restoration (builds and discards a :class:`Restorer`)."""
    return Restorer(model, regions).solve(L_hat, totals, nominal=nominal, p_min=p_min, p_max=p_max)


# -- horizon -----------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(factory, regions, linear_slack):
    _WORKER["restorer"] = Restorer(factory(), regions, linear_slack=linear_slack)


def _solve_period(args):
    t, L_hat, totals, p_min, p_max = args
    try:
        return t, _WORKER["restorer"].solve(L_hat, totals, p_min=p_min, p_max=p_max), None
    except Exception as exc:  # re-raised in the parent with the period index
        return t, None, exc


@dataclasses.dataclass(frozen=True)
class HorizonResult:
    restored: np.ndarray  # (N, T)
    results: tuple[RestorationResult, ...]


def restore_horizon(
    model_factory: Callable[[], DCModel],
    L_hat: np.ndarray,
    totals: np.ndarray,
    regions: Sequence[str],
    *,
    p_min: np.ndarray | None = None,
    p_max: np.ndarray | None = None,
    parallelism: int = 1,
    linear_slack: float | None = None,
) -> HorizonResult:
    """Restore every period independently.

    ``L_hat`` is (N, T) in model load order and ``totals`` (R, T) in
    ``regions`` order; ``p_min``/``p_max`` optionally (G, T). With
    ``parallelism > 1`` periods are farmed out to worker processes, each
    compiling its own problem from ``model_factory``; results are sorted by
    period so the degree of parallelism never changes the output.
    """
    T = L_hat.shape[1]
    jobs = [(t, L_hat[:, t], totals[:, t],
             None if p_min is None else p_min[:, t],
             None if p_max is None else p_max[:, t]) for t in range(T)]
    if parallelism > 1:
        with ProcessPoolExecutor(parallelism, initializer=_init_worker,
                                 initargs=(model_factory, tuple(regions), linear_slack)) as pool:
            outcomes = list(pool.map(_solve_period, jobs, chunksize=max(1, T // (4 * parallelism))))
    else:
        _init_worker(model_factory, tuple(regions), linear_slack)
        outcomes = [_solve_period(j) for j in jobs]
    outcomes.sort(key=lambda o: o[0])
    for t, _, exc in outcomes:
        if isinstance(exc, InfeasibleError):
            raise InfeasibleError(f"period {t}: {exc}", exc.certificate) from exc
        if exc is not None:
            raise SolverError(f"period {t}: {exc}") from exc
    results = tuple(o[1] for o in outcomes)
    return HorizonResult(np.column_stack([r.restored for r in results]) if results else L_hat.copy(), results)


def write_report_csv(results: Sequence[RestorationResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["period", "objective", "l1_change_mw", "max_single_change_mw", "status"])
        for t, r in enumerate(results):
            w.writerow([t, repr(r.objective), repr(r.l1_change), repr(r.max_change), r.status])
