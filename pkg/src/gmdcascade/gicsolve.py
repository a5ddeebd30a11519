"""Quasi-dc GIC network: construction, nodal solve, effective GIC, reactive loss.

The dc companion network has one node per in-service bus, one neutral
node per substation, and an earth reference.  Branch conductances are
three-phase lumped (per-phase resistance / 3) for lines and wye windings;
substation grounding enters as a single neutral-to-earth conductance.
Coupled line voltages appear as series emfs on line branches and are
converted to Norton current injections for the nodal solve.

All quantities here are SI: ohms, siemens, volts, amperes.  The only
per-unit output is the transformer reactive loss of :func:`qloss`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .netmodel import BranchKind, NetworkCase, TransformerGicModel, XfmrConfig

KCL_TOLERANCE_A = 1e-8


class GicError(Exception):
    """Raised for unsolvable or ill-formed dc networks."""


@dataclass(frozen=True)
class DcNode:
    """One node of the dc network. ``kind`` is 'bus', 'neutral' or 'ground';
    ``ref`` holds the bus or substation id (ground: -1)."""

    index: int
    kind: str
    ref: int


@dataclass(frozen=True)
class DcBranch:
    """Conductive element between two dc nodes.

    ``emf_branch`` names the ac branch whose coupled voltage drives this
    element (lines only).  ``winding`` tags transformer winding elements
    ('high', 'low', 'series', 'common') so winding currents can be read
    back; ``ac_branch`` is the owning ac branch for both lines and
    windings, None for grounding elements.
    """

    index: int
    from_node: int
    to_node: int
    conductance: float
    ac_branch: Optional[int] = None
    emf_branch: Optional[int] = None
    winding: Optional[str] = None


@dataclass(frozen=True)
class GicNetwork:
    nodes: tuple[DcNode, ...]
    branches: tuple[DcBranch, ...]
    ground: int  # node index of the earth reference

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def node_of_bus(self, bus_id: int) -> int:
        for n in self.nodes:
            if n.kind == "bus" and n.ref == bus_id:
                return n.index
        raise KeyError(f"no dc node for bus {bus_id}")

    def node_of_neutral(self, sub_id: int) -> int:
        for n in self.nodes:
            if n.kind == "neutral" and n.ref == sub_id:
                return n.index
        raise KeyError(f"no neutral node for substation {sub_id}")


@dataclass(frozen=True)
class GicSolution:
    """Nodal voltages, element currents, per-transformer winding currents,
    effective GICs and reactive losses."""

    node_voltages: np.ndarray  # volts, indexed like GicNetwork.nodes
    branch_currents: np.ndarray  # amperes, indexed like GicNetwork.branches
    winding_currents: dict[int, dict[str, float]]  # ac branch id -> winding -> A
    i_eff: dict[int, float]  # ac branch id -> effective GIC, A
    q_loss: dict[int, float]  # ac branch id -> per-unit reactive loss
    kcl_residual: float  # worst nodal current imbalance, A


def _series_resistance_ohm(case: NetworkCase, branch) -> float:
    """Per-phase series resistance of a line, ohms, from its per-unit
    admittance and the from-bus voltage base."""
    y = branch.series_admittance
    if y == 0:
        raise GicError(f"branch {branch.id}: zero series admittance")
    r_pu = (1.0 / y).real
    base_kv = case.bus(branch.from_bus).base_kv
    z_base = base_kv * base_kv / case.base_mva
    return r_pu * z_base


def build_gic_network(case: NetworkCase) -> GicNetwork:
    """Derive the dc network from the ac case.

    Deterministic: nodes are emitted buses-then-neutrals in id order, and
    elements in ac branch id order with grounding elements last.  Only
    in-service components contribute.  Series-compensated lines are
    omitted entirely (series capacitors block GIC).
    """
    nodes: list[DcNode] = []
    bus_node: dict[int, int] = {}
    for b in sorted(case.buses, key=lambda b: b.id):
        if not b.status:
            continue
        bus_node[b.id] = len(nodes)
        nodes.append(DcNode(len(nodes), "bus", b.id))
    neutral_node: dict[int, int] = {}
    for s in sorted(case.substations, key=lambda s: s.id):
        neutral_node[s.id] = len(nodes)
        nodes.append(DcNode(len(nodes), "neutral", s.id))
    ground = len(nodes)
    nodes.append(DcNode(ground, "ground", -1))

    elements: list[DcBranch] = []

    def emit(fr: int, to: int, g: float, ac=None, emf=None, winding=None):
        elements.append(DcBranch(len(elements), fr, to, g, ac, emf, winding))

    for br in sorted(case.branches, key=lambda b: b.id):
        if not case.branch_in_service(br.id):
            continue
        if br.kind is BranchKind.LINE:
            if br.series_compensated:
                continue  # blocked dc path
            r = _series_resistance_ohm(case, br)
            if r <= 0:
                raise GicError(f"branch {br.id}: non-positive line resistance {r}")
            emit(
                bus_node[br.from_bus],
                bus_node[br.to_bus],
                3.0 / r,
                ac=br.id,
                emf=br.id,
            )
            continue

        xc = br.xfmr_config
        if xc is None:
            continue  # transformer with no GIC model: no dc path
        res = xc.winding_resistances

        def winding_g(name: str) -> float:
            if name not in res:
                raise GicError(
                    f"branch {br.id}: {xc.config.value} requires winding "
                    f"resistance '{name}'"
                )
            r = res[name]
            if r <= 0:
                raise GicError(f"branch {br.id}: winding '{name}' resistance must be positive")
            return 3.0 / r

        neutral = neutral_node[xc.grounded_substation]
        if xc.config is XfmrConfig.DELTA_DELTA:
            continue
        elif xc.config is XfmrConfig.GWYE_DELTA_GSU:
            emit(bus_node[br.from_bus], neutral, winding_g("high"), ac=br.id, winding="high")
        elif xc.config is XfmrConfig.GWYE_GWYE:
            emit(bus_node[br.from_bus], neutral, winding_g("high"), ac=br.id, winding="high")
            emit(bus_node[br.to_bus], neutral, winding_g("low"), ac=br.id, winding="low")
        elif xc.config is XfmrConfig.GWYE_GWYE_AUTO:
            emit(
                bus_node[br.from_bus],
                bus_node[br.to_bus],
                winding_g("series"),
                ac=br.id,
                winding="series",
            )
            emit(bus_node[br.to_bus], neutral, winding_g("common"), ac=br.id, winding="common")
        elif xc.config is XfmrConfig.GWYE_THREE_WINDING:
            emit(bus_node[br.from_bus], neutral, winding_g("high"), ac=br.id, winding="high")
            emit(bus_node[br.to_bus], neutral, winding_g("low"), ac=br.id, winding="low")
            # tertiary is delta unless a resistance is supplied; a grounded
            # tertiary with no external terminal carries no current either way

    for s in sorted(case.substations, key=lambda s: s.id):
        if s.grounding_resistance <= 0:
            # bolted ground: model as a very large conductance
            g = 1e9
        else:
            g = 1.0 / s.grounding_resistance
        emit(neutral_node[s.id], ground, g)

    return GicNetwork(tuple(nodes), tuple(elements), ground)


def _components(net: GicNetwork) -> list[set[int]]:
    """Connected components of the dc graph (including the ground node)."""
    adj: dict[int, list[int]] = {n.index: [] for n in net.nodes}
    for e in net.branches:
        adj[e.from_node].append(e.to_node)
        adj[e.to_node].append(e.from_node)
    seen: set[int] = set()
    comps = []
    for start in range(net.num_nodes):
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
        comps.append(comp)
    return comps


def solve_gic(net: GicNetwork, emfs: Mapping[int, float], case: NetworkCase | None = None) -> GicSolution:
    """Solve the grounded nodal system for the given per-branch emfs (V).

    Each emf element becomes a Norton injection g*e; node voltages come
    from the grounded conductance Laplacian with the earth row eliminated,
    and element currents are recovered as i = g*(v_from - v_to + e).  A
    floating component is fine when every emf inside it is zero (it stays
    at 0 V); with a nonzero emf it is reported as an error.

    Passing ``case`` additionally populates effective GICs and reactive
    losses for every transformer.
    """
    n = net.num_nodes
    comps = _components(net)
    grounded = next(c for c in comps if net.ground in c)
    for comp in comps:
        if net.ground in comp:
            continue
        for e in net.branches:
            if e.from_node in comp and emfs.get(e.emf_branch, 0.0) != 0.0:
                names = sorted(net.nodes[i].kind + str(net.nodes[i].ref) for i in comp)
                raise GicError(
                    f"floating dc subnetwork with nonzero emf (nodes: {', '.join(names)})"
                )

    rows, cols, vals = [], [], []
    inj = np.zeros(n)
    for e in net.branches:
        g = e.conductance
        f, t = e.from_node, e.to_node
        rows.extend([f, f, t, t])
        cols.extend([f, t, t, f])
        vals.extend([g, -g, g, -g])
        emf = emfs.get(e.emf_branch, 0.0) if e.emf_branch is not None else 0.0
        if emf:
            inj[f] -= g * emf
            inj[t] += g * emf

    # restrict to grounded component minus the earth node; everything else is 0 V
    unknowns = sorted(grounded - {net.ground})
    v = np.zeros(n)
    if unknowns:
        pos = {u: k for k, u in enumerate(unknowns)}
        keep = [
            (pos[r], pos[c], x)
            for r, c, x in zip(rows, cols, vals)
            if r in pos and c in pos
        ]
        G = sp.csc_matrix(
            (
                [x for _, _, x in keep],
                ([r for r, _, _ in keep], [c for _, c, _ in keep]),
            ),
            shape=(len(unknowns), len(unknowns)),
        )
        rhs = inj[unknowns]
        try:
            lu = spla.splu(G)
        except RuntimeError as exc:
            raise GicError(f"singular dc network: {exc}")
        sol = lu.solve(rhs)
        # one step of iterative refinement keeps KCL residuals tight
        sol = sol + lu.solve(rhs - G @ sol)
        v[unknowns] = sol

    currents = np.empty(len(net.branches))
    residual = np.zeros(n)
    for e in net.branches:
        emf = emfs.get(e.emf_branch, 0.0) if e.emf_branch is not None else 0.0
        i = e.conductance * (v[e.from_node] - v[e.to_node] + emf)
        currents[e.index] = i
        residual[e.from_node] += i
        residual[e.to_node] -= i
    residual[net.ground] = 0.0
    # isolated never-solved nodes carry no elements, their residual is zero
    kcl = float(np.abs(residual).max()) if n else 0.0
    if kcl > KCL_TOLERANCE_A * max(1.0, float(np.abs(currents).max()) if currents.size else 1.0):
        raise GicError(f"KCL residual {kcl:.3e} A exceeds tolerance")

    winding: dict[int, dict[str, float]] = {}
    for e in net.branches:
        if e.winding is not None and e.ac_branch is not None:
            winding.setdefault(e.ac_branch, {})[e.winding] = float(currents[e.index])

    i_eff: dict[int, float] = {}
    q: dict[int, float] = {}
    if case is not None:
        for br in case.branches:
            if br.xfmr_config is None or not case.branch_in_service(br.id):
                continue
            w = winding.get(br.id, {})
            ie = effective_gic(br.xfmr_config, w)
            i_eff[br.id] = ie
            q[br.id] = qloss(br.xfmr_config, ie)

    return GicSolution(
        node_voltages=v,
        branch_currents=currents,
        winding_currents=winding,
        i_eff=i_eff,
        q_loss=q,
        kcl_residual=kcl,
    )


def effective_gic(model: TransformerGicModel, windings: Mapping[str, float]) -> float:
    """Single effective GIC (A) summarizing a transformer's winding currents.

    Piecewise by construction: gwye-delta GSU uses |I_H|; gwye-gwye uses
    |I_H + I_L/alpha|; gwye-gwye autos use |(alpha*I_S + I_C)/(alpha+1)|;
    three-winding gwye adds a tertiary term I_T/beta; anything else
    (including delta-delta) contributes nothing.
    """

    def need(name: str) -> float:
        if name not in windings:
            raise GicError(
                f"{model.config.value} effective GIC needs winding current '{name}'"
            )
        return windings[name]

    cfg = model.config
    if cfg is XfmrConfig.GWYE_DELTA_GSU:
        return abs(need("high"))
    if cfg is XfmrConfig.GWYE_GWYE:
        return abs(need("high") + need("low") / model.alpha)
    if cfg is XfmrConfig.GWYE_GWYE_AUTO:
        return abs((model.alpha * need("series") + need("common")) / (model.alpha + 1.0))
    if cfg is XfmrConfig.GWYE_THREE_WINDING:
        i_t = windings.get("tertiary", 0.0)
        beta = model.beta if model.beta is not None else 1.0
        return abs(need("high") + need("low") / model.alpha + i_t / beta)
    return 0.0


def qloss(model: TransformerGicModel, i_eff: float, v: float = 1.0) -> float:
    """Per-unit reactive loss K * |V| * I_eff / (3 * S_rated), with the
    flat-voltage assumption V = 1."""
    if i_eff < 0:
        raise GicError("effective GIC must be non-negative")
    return model.k_loss * abs(v) * i_eff / (3.0 * model.rated_power)


def dump_network(net: GicNetwork) -> str:
    """Columnar text dump of the dc network (debug aid)."""
    lines = ["# nodes: index kind ref"]
    for nd in net.nodes:
        lines.append(f"{nd.index} {nd.kind} {nd.ref}")
    lines.append("# elements: index from to conductance_S ac_branch emf_branch winding")
    for e in net.branches:
        lines.append(
            f"{e.index} {e.from_node} {e.to_node} {e.conductance!r} "
            f"{e.ac_branch if e.ac_branch is not None else '-'} "
            f"{e.emf_branch if e.emf_branch is not None else '-'} "
            f"{e.winding if e.winding is not None else '-'}"
        )
    return "\n".join(lines) + "\n"
