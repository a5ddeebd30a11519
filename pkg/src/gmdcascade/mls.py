"""Minimum-load-shed conic programs on the lifted (SOC-relaxed) voltage space.

Steady-state mode dispatches each generator and sheds each load independently;
cascading mode freezes the previous iteration's generator and load
setpoints and scales them with one pair of global variables per connected
component, emulating participation-factor response.  Both modes share the
lifted power-flow core: W_ii is the squared voltage magnitude, (wr, wi)
the real/imag parts of the voltage cross product per branch, coupled by
the rotated cone wr^2 + wi^2 <= W_ii * W_jj.

Sign conventions: all network rows are written as
    sum(flows leaving the bus on incident branch sides)
      = generation - load - shunt - j*(GIC reactive loss),
with the GIC loss of a transformer booked at its from-side bus.  The
objective maximizes served active load, i.e. minimizes shed.

Internally everything is per-unit on the case's base_mva; the public
solution reports MW/MVar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional

import numpy as np

from . import conic
from .conic import ConicProgram, ConicSolution, ConicStatus
from .netmodel import BranchKind, NetworkCase


class MlsError(Exception):
    """Raised for snapshots that cannot be turned into a program."""


class MlsMode(Enum):
    STEADY = "steady_state"
    CASCADING = "cascading"


@dataclass(frozen=True)
class MlsSnapshot:
    """In-service view of a case plus the data the builders need.

    ``q_loss`` maps transformer branch ids to per-unit reactive losses.
    Cascading mode additionally requires the previous iteration's
    generator/load complex setpoints (MW + jMVar) and ramp-adjusted
    active-power bounds (MW).
    """

    case: NetworkCase
    q_loss: Mapping[int, float]
    mode: MlsMode = MlsMode.STEADY
    gen_setpoints: Optional[Mapping[int, complex]] = None
    load_setpoints: Optional[Mapping[int, complex]] = None
    gen_pbounds: Optional[Mapping[int, tuple[float, float]]] = None

    def __post_init__(self):
        for bid, q in self.q_loss.items():
            if q < 0:
                raise MlsError(f"negative q_loss on branch {bid}")
        cascading = self.mode is MlsMode.CASCADING
        have = self.gen_setpoints is not None and self.load_setpoints is not None
        if cascading and not have:
            raise MlsError("cascading snapshot requires previous setpoints")
        if not cascading and (self.gen_setpoints or self.load_setpoints):
            raise MlsError("steady snapshot must not carry setpoints")


@dataclass(frozen=True)
class _Component:
    ref_bus: int
    buses: frozenset[int]


@dataclass
class MlsProgram:
    """A built program plus the bookkeeping to read its solution back."""

    conic: ConicProgram
    snap: MlsSnapshot
    mode: MlsMode
    buses: list[int]
    branches: list[int]
    gens: list[int]
    loads: list[int]
    components: list[_Component]
    comp_of_bus: dict[int, int]
    var: dict[str, dict]


def _in_service(case: NetworkCase):
    buses = [b.id for b in case.buses if b.status]
    branches = [b.id for b in case.branches if case.branch_in_service(b.id)]
    gens = [g.id for g in case.generators if case.gen_in_service(g.id)]
    loads = [d.id for d in case.loads if case.load_in_service(d.id)]
    return buses, branches, gens, loads


def _connected_components(case: NetworkCase, buses, branches) -> list[frozenset[int]]:
    adj: dict[int, list[int]] = {b: [] for b in buses}
    for bid in branches:
        br = case.branch(bid)
        adj[br.from_bus].append(br.to_bus)
        adj[br.to_bus].append(br.from_bus)
    seen: set[int] = set()
    comps = []
    for start in sorted(buses):
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        seen.add(start)
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    comp.add(v)
                    stack.append(v)
        comps.append(frozenset(comp))
    return comps


def _analyze_components(case, buses, branches, gens, loads) -> list[_Component]:
    comps = []
    gen_buses = {case.generator(g).bus for g in gens}
    load_buses = {case.load(d).bus for d in loads}
    for comp in _connected_components(case, buses, branches):
        refs = [b for b in sorted(comp) if case.bus(b).is_reference]
        if not refs:
            raise MlsError(
                f"no reference bus in the component containing bus {min(comp)}"
            )
        if len(refs) > 1:
            raise MlsError(
                f"multiple reference buses ({refs}) in one connected component"
            )
        if not (comp & gen_buses) and (comp & load_buses):
            raise MlsError(
                f"component containing bus {min(comp)} has load but no generation"
            )
        comps.append(_Component(ref_bus=refs[0], buses=comp))
    return comps


def _branch_flow_coeffs(br):
    """Linear coefficients of (p_f, q_f, p_t, q_t) on (W_ii, W_jj, wr, wi)."""
    y = br.series_admittance
    g, b = y.real, y.imag
    t = abs(br.tap)
    th = math.atan2(br.tap.imag, br.tap.real)
    cs, sn = math.cos(th), math.sin(th)
    bc = br.charging_b
    a1r, a1i = g / t**2, -(b + bc / 2.0) / t**2
    b1r, b1i = (g * cs - b * sn) / t, -(g * sn + b * cs) / t
    a2r, a2i = g, -(b + bc / 2.0)
    b2r, b2i = (g * cs + b * sn) / t, (g * sn - b * cs) / t
    # p_f = a1r*Wii - b1r*wr + b1i*wi      q_f = a1i*Wii - b1i*wr - b1r*wi
    # p_t = a2r*Wjj - b2r*wr - b2i*wi      q_t = a2i*Wjj - b2i*wr + b2r*wi
    return (a1r, a1i, b1r, b1i), (a2r, a2i, b2r, b2i)


def _build(snap: MlsSnapshot) -> MlsProgram:
    case = snap.case
    base = case.base_mva
    buses, branches, gens, loads = _in_service(case)
    if not buses:
        raise MlsError("no in-service buses")
    components = _analyze_components(case, buses, branches, gens, loads)
    comp_of_bus = {}
    for ci, comp in enumerate(components):
        for b in comp.buses:
            comp_of_bus[b] = ci

    cascading = snap.mode is MlsMode.CASCADING
    p = ConicProgram()
    var: dict[str, dict] = {k: {} for k in (
        "w", "z", "wr", "wi", "pg", "qg", "zg", "zd", "zgc", "zdc", "flow",
    )}

    for bid in buses:
        # W bounds are implied by the status rows (z in [0,1] couples
        # W into [z*vmin^2, z*vmax^2]); explicit bounds would only add
        # degenerate duplicates
        var["w"][bid] = p.add_var()
        var["z"][bid] = p.add_var(lb=0.0, ub=1.0)
    for bid in branches:
        var["wr"][bid] = p.add_var(lb=0.0)
        var["wi"][bid] = p.add_var()

    if cascading:
        for ci in range(len(components)):
            var["zgc"][ci] = p.add_var(lb=0.0, ub=1.0)
            var["zdc"][ci] = p.add_var(lb=0.0, ub=1.0)
    else:
        for gid in gens:
            var["pg"][gid] = p.add_var()
            var["qg"][gid] = p.add_var()
            var["zg"][gid] = p.add_var(lb=0.0, ub=1.0)
        for did in loads:
            var["zd"][did] = p.add_var(lb=0.0, ub=1.0)

    # objective: maximize served active load
    obj: dict[int, float] = {}
    if cascading:
        for did in loads:
            ci = comp_of_bus[case.load(did).bus]
            p0 = snap.load_setpoints.get(did, 0.0)
            obj[var["zdc"][ci]] = obj.get(var["zdc"][ci], 0.0) - complex(p0).real / base
    else:
        for did in loads:
            obj[var["zd"][did]] = -case.load(did).pd / base
    p.set_objective(obj)

    # bus status coupling:  z*vmin^2 <= W <= z*vmax^2
    for bid in buses:
        bus = case.bus(bid)
        w, z = var["w"][bid], var["z"][bid]
        p.add_inequality({w: 1.0, z: -(bus.vmax**2)}, 0.0)
        p.add_inequality({w: -1.0, z: bus.vmin**2}, 0.0)

    # branch machinery: angle box, voltage cone, thermal limits.  Flows are
    # affine in (W_ii, W_jj, wr, wi) and stay substituted out of the
    # program; fewer variables and no defining equality rows
    for bid in branches:
        br = case.branch(bid)
        (a1r, a1i, b1r, b1i), (a2r, a2i, b2r, b2i) = _branch_flow_coeffs(br)
        wi_, wr_ = var["wi"][bid], var["wr"][bid]
        wf, wt = var["w"][br.from_bus], var["w"][br.to_bus]
        pf = {wf: a1r, wr_: -b1r, wi_: b1i}
        qf = {wf: a1i, wr_: -b1i, wi_: -b1r}
        pt = {wt: a2r, wr_: -b2r, wi_: -b2i}
        qt = {wt: a2i, wr_: -b2i, wi_: b2r}
        var["flow"][bid] = (pf, qf, pt, qt)
        if br.angle_limit < math.pi / 2.0 - 1e-12:
            tan = math.tan(br.angle_limit)
            p.add_inequality({wi_: 1.0}, tan)
            p.add_inequality({wi_: -1.0}, tan)
        p.add_rotated_soc(({wf: 1.0}, 0.0), ({wt: 1.0}, 0.0), [({wr_: 1.0}, 0.0), ({wi_: 1.0}, 0.0)])
        rating = br.thermal_rating / base
        p.add_soc([(pf, 0.0), (qf, 0.0)], ({}, rating))
        p.add_soc([(pt, 0.0), (qt, 0.0)], ({}, rating))

    # generator boxes
    if cascading:
        for gid in gens:
            ci = comp_of_bus[case.generator(gid).bus]
            zg = var["zgc"][ci]
            s0 = complex(snap.gen_setpoints.get(gid, 0.0))
            lo, hi = snap.gen_pbounds.get(gid, (case.generator(gid).pmin, case.generator(gid).pmax))
            g = case.generator(gid)
            p0, q0 = s0.real / base, s0.imag / base
            p.add_inequality({zg: p0}, hi / base)
            p.add_inequality({zg: -p0}, -lo / base)
            p.add_inequality({zg: q0}, g.qmax / base)
            p.add_inequality({zg: -q0}, -g.qmin / base)
    else:
        for gid in gens:
            g = case.generator(gid)
            pg, qg, zg = var["pg"][gid], var["qg"][gid], var["zg"][gid]
            p.add_inequality({pg: 1.0, zg: -g.pmax / base}, 0.0)
            p.add_inequality({pg: -1.0, zg: g.pmin / base}, 0.0)
            p.add_inequality({qg: 1.0, zg: -g.qmax / base}, 0.0)
            p.add_inequality({qg: -1.0, zg: g.qmin / base}, 0.0)

    # KCL, one complex (= two real) row per bus; GIC reactive loss enters
    # as a constant withdrawal at the transformer's from-side bus
    gens_at: dict[int, list[int]] = {}
    for gid in gens:
        gens_at.setdefault(case.generator(gid).bus, []).append(gid)
    loads_at: dict[int, list[int]] = {}
    for did in loads:
        loads_at.setdefault(case.load(did).bus, []).append(did)
    qloss_at: dict[int, float] = {}
    for bid in branches:
        ql = snap.q_loss.get(bid, 0.0)
        if ql:
            fb = case.branch(bid).from_bus
            qloss_at[fb] = qloss_at.get(fb, 0.0) + ql

    for bid in buses:
        bus = case.bus(bid)
        prow: dict[int, float] = {}
        qrow: dict[int, float] = {}

        def acc(row, key, coeff):
            row[key] = row.get(key, 0.0) + coeff

        for eb in branches:
            br = case.branch(eb)
            pf, qf, pt, qt = var["flow"][eb]
            if br.from_bus == bid:
                for j, a in pf.items():
                    acc(prow, j, a)
                for j, a in qf.items():
                    acc(qrow, j, a)
            if br.to_bus == bid:
                for j, a in pt.items():
                    acc(prow, j, a)
                for j, a in qt.items():
                    acc(qrow, j, a)
        if cascading:
            for gid in gens_at.get(bid, []):
                s0 = complex(snap.gen_setpoints.get(gid, 0.0))
                zg = var["zgc"][comp_of_bus[bid]]
                acc(prow, zg, -s0.real / base)
                acc(qrow, zg, -s0.imag / base)
            for did in loads_at.get(bid, []):
                s0 = complex(snap.load_setpoints.get(did, 0.0))
                zd = var["zdc"][comp_of_bus[bid]]
                acc(prow, zd, s0.real / base)
                acc(qrow, zd, s0.imag / base)
        else:
            for gid in gens_at.get(bid, []):
                acc(prow, var["pg"][gid], -1.0)
                acc(qrow, var["qg"][gid], -1.0)
            for did in loads_at.get(bid, []):
                d = case.load(did)
                acc(prow, var["zd"][did], d.pd / base)
                acc(qrow, var["zd"][did], d.qd / base)
        # shunt withdrawal conj(Y_s)*W = (g_s - j b_s)*W
        ys = bus.shunt_admittance
        if ys.real:
            acc(prow, var["w"][bid], ys.real)
        if ys.imag:
            acc(qrow, var["w"][bid], -ys.imag)
        p.add_equality(prow, 0.0)
        p.add_equality(qrow, -qloss_at.get(bid, 0.0))

    return MlsProgram(
        conic=p,
        snap=snap,
        mode=snap.mode,
        buses=buses,
        branches=branches,
        gens=gens,
        loads=loads,
        components=components,
        comp_of_bus=comp_of_bus,
        var=var,
    )


def build_steady_mls(snap: MlsSnapshot) -> MlsProgram:
    """Program with independent generator dispatch and per-load shedding."""
    if snap.mode is not MlsMode.STEADY:
        raise MlsError("snapshot is not in steady mode")
    return _build(snap)


def build_cascading_mls(snap: MlsSnapshot) -> MlsProgram:
    """Program with component-wide scaling of the previous setpoints."""
    if snap.mode is not MlsMode.CASCADING:
        raise MlsError("snapshot is not in cascading mode")
    return _build(snap)


@dataclass
class MlsSolution:
    """Engineering view of a solved MLS program (MW / MVar / per-unit W)."""

    status: ConicStatus
    served_fraction: dict[int, float]  # per load id
    load_served: dict[int, complex]  # MW + jMVar per load id
    gen_output: dict[int, complex]  # MW + jMVar per generator id
    gen_status: dict[int, float]  # z^g per generator (global one broadcast)
    bus_w: dict[int, float]  # lifted squared voltage per bus
    bus_z: dict[int, float]  # bus status variable
    branch_flow_from: dict[int, complex]  # MVA complex at from side
    branch_flow_to: dict[int, complex]
    global_zg: Optional[float]  # cascading mode only (largest-component value)
    global_zd: Optional[float]
    objective_mw: float  # total served active power
    worst_kcl_residual: float  # per-unit
    worst_cone_violation: float
    worst_status_bound_violation: float

    @property
    def feasible(self) -> bool:
        return self.status is ConicStatus.OPTIMAL

    def total_served_mw(self) -> float:
        return sum(s.real for s in self.load_served.values())

    def branch_loading_mva(self, branch_id: int) -> float:
        return max(
            abs(self.branch_flow_from[branch_id]), abs(self.branch_flow_to[branch_id])
        )


def extract_solution(mp: MlsProgram, csol: ConicSolution) -> MlsSolution:
    """Map conic variable values back onto network components and audit
    the power-balance, cone and status-bound residuals."""
    case = mp.snap.case
    base = case.base_mva
    x = csol.x
    cascading = mp.mode is MlsMode.CASCADING

    def val(kind, key) -> float:
        return float(x[mp.var[kind][key]])

    bus_w = {b: val("w", b) for b in mp.buses}
    bus_z = {b: val("z", b) for b in mp.buses}

    served_fraction: dict[int, float] = {}
    load_served: dict[int, complex] = {}
    gen_output: dict[int, complex] = {}
    gen_status: dict[int, float] = {}
    global_zg = global_zd = None
    if cascading:
        for did in mp.loads:
            ci = mp.comp_of_bus[case.load(did).bus]
            zd = val("zdc", ci)
            served_fraction[did] = zd
            load_served[did] = zd * complex(mp.snap.load_setpoints.get(did, 0.0))
        for gid in mp.gens:
            ci = mp.comp_of_bus[case.generator(gid).bus]
            zg = val("zgc", ci)
            gen_status[gid] = zg
            gen_output[gid] = zg * complex(mp.snap.gen_setpoints.get(gid, 0.0))
        if mp.components:
            main = max(range(len(mp.components)), key=lambda ci: len(mp.components[ci].buses))
            global_zg = val("zgc", main)
            global_zd = val("zdc", main)
    else:
        for did in mp.loads:
            d = case.load(did)
            zd = val("zd", did)
            served_fraction[did] = zd
            load_served[did] = zd * complex(d.pd, d.qd)
        for gid in mp.gens:
            gen_output[gid] = complex(val("pg", gid), val("qg", gid)) * base
            gen_status[gid] = val("zg", gid)

    def eval_expr(expr) -> float:
        return float(sum(a * x[j] for j, a in expr.items()))

    flow_from = {}
    flow_to = {}
    for bid in mp.branches:
        pf, qf, pt, qt = mp.var["flow"][bid]
        flow_from[bid] = complex(eval_expr(pf), eval_expr(qf)) * base
        flow_to[bid] = complex(eval_expr(pt), eval_expr(qt)) * base

    # residual audit straight from the extracted engineering quantities
    worst_kcl = 0.0
    qloss_at: dict[int, float] = {}
    for bid in mp.branches:
        ql = mp.snap.q_loss.get(bid, 0.0)
        if ql:
            fb = case.branch(bid).from_bus
            qloss_at[fb] = qloss_at.get(fb, 0.0) + ql
    for b in mp.buses:
        bus = case.bus(b)
        inj = 0j
        for gid in mp.gens:
            if case.generator(gid).bus == b:
                inj += gen_output[gid] / base
        for did in mp.loads:
            if case.load(did).bus == b:
                inj -= load_served[did] / base
        inj -= bus.shunt_admittance.conjugate() * bus_w[b]
        inj -= 1j * qloss_at.get(b, 0.0)
        out = 0j
        for bid in mp.branches:
            br = case.branch(bid)
            if br.from_bus == b:
                out += flow_from[bid] / base
            if br.to_bus == b:
                out += flow_to[bid] / base
        worst_kcl = max(worst_kcl, abs(out - inj))

    worst_cone = 0.0
    for bid in mp.branches:
        br = case.branch(bid)
        wr, wi = val("wr", bid), val("wi", bid)
        worst_cone = max(
            worst_cone, wr * wr + wi * wi - bus_w[br.from_bus] * bus_w[br.to_bus]
        )
    worst_status = 0.0
    for b in mp.buses:
        bus = case.bus(b)
        worst_status = max(
            worst_status,
            bus_w[b] - bus_z[b] * bus.vmax**2,
            bus_z[b] * bus.vmin**2 - bus_w[b],
        )

    return MlsSolution(
        status=csol.status,
        served_fraction=served_fraction,
        load_served=load_served,
        gen_output=gen_output,
        gen_status=gen_status,
        bus_w=bus_w,
        bus_z=bus_z,
        branch_flow_from=flow_from,
        branch_flow_to=flow_to,
        global_zg=global_zg,
        global_zd=global_zd,
        objective_mw=sum(s.real for s in load_served.values()),
        worst_kcl_residual=worst_kcl,
        worst_cone_violation=max(worst_cone, 0.0),
        worst_status_bound_violation=max(worst_status, 0.0),
    )


def solve_mls(snap: MlsSnapshot, tol: float = conic.DEFAULT_TOL) -> MlsSolution:
    """Build, solve and extract in one call."""
    mp = _build(snap)
    csol = conic.solve(mp.conic, tol=tol)
    return extract_solution(mp, csol)


def solution_to_text(sol: MlsSolution) -> str:
    """Structured text export of one solved snapshot."""
    lines = [f"status {sol.status.value}", f"served_mw {sol.objective_mw!r}"]
    lines.append("# bus W_ii z_i")
    for b in sorted(sol.bus_w):
        lines.append(f"bus {b} {sol.bus_w[b]!r} {sol.bus_z[b]!r}")
    lines.append("# load z_d served_mw served_mvar")
    for d in sorted(sol.served_fraction):
        s = sol.load_served[d]
        lines.append(f"load {d} {sol.served_fraction[d]!r} {s.real!r} {s.imag!r}")
    lines.append("# gen p_mw q_mvar z_g")
    for g in sorted(sol.gen_output):
        s = sol.gen_output[g]
        lines.append(f"gen {g} {s.real!r} {s.imag!r} {sol.gen_status[g]!r}")
    lines.append("# branch |S_from|_mva |S_to|_mva")
    for bid in sorted(sol.branch_flow_from):
        lines.append(
            f"branch {bid} {abs(sol.branch_flow_from[bid])!r} "
            f"{abs(sol.branch_flow_to[bid])!r}"
        )
    return "\n".join(lines) + "\n"
