"""Joint ac/dc network data model, case-file I/O, GSU augmentation, contingencies.

Per-unit convention: every ac quantity (admittances, voltage bounds,
shunts) is per-unit on ``base_mva``; generator and load powers are MW /
MVar; everything on the dc/GIC side is SI (ohms, volts, amperes).  Angles
are degrees in case files and radians in memory.

A :class:`NetworkCase` is immutable.  Operations that change it
(:func:`attach_gsu_transformers`, :func:`apply_contingencies`) return new
cases.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Optional


class CaseError(Exception):
    """Base class for case-file problems."""


class CaseParseError(CaseError):
    """Raised when a case document cannot be decoded, with field context."""


class CaseValidationError(CaseError):
    """Raised when a decoded case violates a model invariant."""


class BranchKind(Enum):
    LINE = "line"
    TRANSFORMER = "transformer"


class XfmrConfig(Enum):
    DELTA_DELTA = "delta_delta"
    GWYE_DELTA_GSU = "gwye_delta_gsu"
    GWYE_GWYE = "gwye_gwye"
    GWYE_GWYE_AUTO = "gwye_gwye_auto"
    GWYE_THREE_WINDING = "gwye_three_winding"


@dataclass(frozen=True)
class Bus:
    id: int
    name: str
    base_kv: float
    vmin: float
    vmax: float
    lat: float
    lon: float
    status: bool = True
    is_reference: bool = False
    shunt_admittance: complex = 0j


@dataclass(frozen=True)
class TransformerGicModel:
    """GIC-relevant construction data of a transformer branch.

    ``alpha`` is the high/low turns ratio, ``beta`` the high/tertiary
    ratio (three-winding only).  ``k_loss`` is the reactive-loss constant
    in MVar per ampere of effective GIC.  ``winding_resistances`` holds
    per-phase ohms keyed by winding role: high/low for two-winding,
    series/common for autos, plus optional tertiary.
    """

    config: XfmrConfig
    alpha: float
    k_loss: float
    rated_power: float
    grounded_substation: int
    beta: Optional[float] = None
    winding_resistances: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "winding_resistances", dict(self.winding_resistances))

    def __hash__(self):
        return hash((self.config, self.alpha, self.k_loss, self.rated_power))


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    kind: BranchKind
    series_admittance: complex
    charging_b: float = 0.0
    tap: complex = 1.0 + 0j
    angle_limit: float = math.pi / 3.0  # radians
    thermal_rating: float = 0.0  # MVA
    status: bool = True
    series_compensated: bool = False
    xfmr_config: Optional[TransformerGicModel] = None


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    ramp_rate: float = 0.0  # MW per minute
    status: bool = True


@dataclass(frozen=True)
class Load:
    id: int
    bus: int
    pd: float
    qd: float
    status: bool = True


@dataclass(frozen=True)
class Substation:
    id: int
    lat: float
    lon: float
    grounding_resistance: float
    buses: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))


@dataclass(frozen=True)
class RelaySpec:
    branch: int
    pickup_ratio: float = 1.0
    trip_threshold: float = 600.0  # seconds of accumulated overload
    enabled: bool = True


@dataclass(frozen=True)
class NetworkCase:
    """Immutable snapshot of the joint ac/dc network."""

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    substations: tuple[Substation, ...]
    relays: tuple[RelaySpec, ...] = ()

    def __post_init__(self):
        for name in ("buses", "branches", "generators", "loads", "substations", "relays"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    # -- id lookups ---------------------------------------------------------

    @cached_property
    def _bus_by_id(self) -> dict[int, Bus]:
        return {b.id: b for b in self.buses}

    @cached_property
    def _branch_by_id(self) -> dict[int, Branch]:
        return {b.id: b for b in self.branches}

    @cached_property
    def _gen_by_id(self) -> dict[int, Generator]:
        return {g.id: g for g in self.generators}

    @cached_property
    def _load_by_id(self) -> dict[int, Load]:
        return {d.id: d for d in self.loads}

    @cached_property
    def _sub_by_id(self) -> dict[int, Substation]:
        return {s.id: s for s in self.substations}

    @cached_property
    def substation_of_bus(self) -> dict[int, int]:
        mapping: dict[int, int] = {}
        for sub in self.substations:
            for b in sub.buses:
                mapping[b] = sub.id
        return mapping

    def bus(self, bid: int) -> Bus:
        return self._bus_by_id[bid]

    def branch(self, bid: int) -> Branch:
        return self._branch_by_id[bid]

    def generator(self, gid: int) -> Generator:
        return self._gen_by_id[gid]

    def load(self, lid: int) -> Load:
        return self._load_by_id[lid]

    def substation(self, sid: int) -> Substation:
        return self._sub_by_id[sid]

    # -- service state ------------------------------------------------------

    def branch_in_service(self, bid: int) -> bool:
        br = self._branch_by_id[bid]
        return (
            br.status
            and self._bus_by_id[br.from_bus].status
            and self._bus_by_id[br.to_bus].status
        )

    def gen_in_service(self, gid: int) -> bool:
        g = self._gen_by_id[gid]
        return g.status and self._bus_by_id[g.bus].status

    def load_in_service(self, lid: int) -> bool:
        d = self._load_by_id[lid]
        return d.status and self._bus_by_id[d.bus].status

    # -- derived stats ------------------------------------------------------

    def total_load_mw(self) -> float:
        return sum(d.pd for d in self.loads if self.load_in_service(d.id))

    def total_gen_capacity_mw(self) -> float:
        return sum(g.pmax for g in self.generators if self.gen_in_service(g.id))

    # -- structural editing (returns new cases) ------------------------------

    def with_components(self, **kw) -> "NetworkCase":
        return replace(self, **kw)

    def with_bus_updates(self, updates: dict[int, dict]) -> "NetworkCase":
        buses = tuple(
            replace(b, **updates[b.id]) if b.id in updates else b for b in self.buses
        )
        return replace(self, buses=buses)

    def with_branch_updates(self, updates: dict[int, dict]) -> "NetworkCase":
        branches = tuple(
            replace(b, **updates[b.id]) if b.id in updates else b for b in self.branches
        )
        return replace(self, branches=branches)

    def with_gen_updates(self, updates: dict[int, dict]) -> "NetworkCase":
        gens = tuple(
            replace(g, **updates[g.id]) if g.id in updates else g for g in self.generators
        )
        return replace(self, generators=gens)

    def with_load_updates(self, updates: dict[int, dict]) -> "NetworkCase":
        loads = tuple(
            replace(d, **updates[d.id]) if d.id in updates else d for d in self.loads
        )
        return replace(self, loads=loads)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

_WINDING_REQUIREMENTS = {
    XfmrConfig.DELTA_DELTA: (),
    XfmrConfig.GWYE_DELTA_GSU: ("high",),
    XfmrConfig.GWYE_GWYE: ("high", "low"),
    XfmrConfig.GWYE_GWYE_AUTO: ("series", "common"),
    XfmrConfig.GWYE_THREE_WINDING: ("high", "low"),
}


def validate_case(case: NetworkCase) -> None:
    """Check every model invariant; raise CaseValidationError naming the
    violated invariant and the offending id."""
    if case.base_mva <= 0:
        raise CaseValidationError("base_mva must be positive")
    if not case.buses:
        raise CaseValidationError("no buses")

    seen: set[int] = set()
    for b in case.buses:
        if b.id in seen:
            raise CaseValidationError(f"duplicate bus id {b.id}")
        seen.add(b.id)
        if b.vmin <= 0:
            raise CaseValidationError(f"bus {b.id}: vmin must be positive")
        if b.vmax < b.vmin:
            raise CaseValidationError(f"bus {b.id}: vmax below vmin")
        if abs(b.lat) > 90.0:
            raise CaseValidationError(f"bus {b.id}: latitude out of range")
        if abs(b.lon) > 180.0:
            raise CaseValidationError(f"bus {b.id}: longitude out of range")

    bus_ids = seen
    seen = set()
    for br in case.branches:
        if br.id in seen:
            raise CaseValidationError(f"duplicate branch id {br.id}")
        seen.add(br.id)
        for side, bid in (("from_bus", br.from_bus), ("to_bus", br.to_bus)):
            if bid not in bus_ids:
                raise CaseValidationError(f"branch {br.id}: {side} references missing bus {bid}")
        if br.from_bus == br.to_bus:
            raise CaseValidationError(f"branch {br.id}: from_bus equals to_bus")
        if br.thermal_rating <= 0:
            raise CaseValidationError(f"branch {br.id}: thermal_rating must be positive")
        if br.kind is BranchKind.TRANSFORMER and br.charging_b != 0.0:
            raise CaseValidationError(f"branch {br.id}: transformer charging_b must be 0")
        if br.kind is BranchKind.LINE and br.tap != 1:
            raise CaseValidationError(f"branch {br.id}: line tap must be 1")
        if br.kind is BranchKind.LINE and br.xfmr_config is not None:
            raise CaseValidationError(f"branch {br.id}: line carries xfmr_config")
        xc = br.xfmr_config
        if xc is not None:
            if xc.alpha <= 0:
                raise CaseValidationError(f"branch {br.id}: xfmr alpha must be positive")
            if xc.beta is not None and xc.beta <= 0:
                raise CaseValidationError(f"branch {br.id}: xfmr beta must be positive")
            if xc.k_loss < 0:
                raise CaseValidationError(f"branch {br.id}: xfmr k_loss must be non-negative")
            if xc.rated_power <= 0:
                raise CaseValidationError(f"branch {br.id}: xfmr rated_power must be positive")

    sub_ids = {s.id for s in case.substations}
    if len(sub_ids) != len(case.substations):
        raise CaseValidationError("duplicate substation id")
    for br in case.branches:
        xc = br.xfmr_config
        if xc is not None and xc.grounded_substation not in sub_ids:
            raise CaseValidationError(
                f"branch {br.id}: grounded_substation {xc.grounded_substation} missing"
            )

    seen = set()
    for g in case.generators:
        if g.id in seen:
            raise CaseValidationError(f"duplicate generator id {g.id}")
        seen.add(g.id)
        if g.bus not in bus_ids:
            raise CaseValidationError(f"generator {g.id}: references missing bus {g.bus}")
        if g.pmax < g.pmin:
            raise CaseValidationError(f"generator {g.id}: pmax below pmin")
        if g.qmax < g.qmin:
            raise CaseValidationError(f"generator {g.id}: qmax below qmin")
        if g.ramp_rate < 0:
            raise CaseValidationError(f"generator {g.id}: ramp_rate must be non-negative")

    seen = set()
    for d in case.loads:
        if d.id in seen:
            raise CaseValidationError(f"duplicate load id {d.id}")
        seen.add(d.id)
        if d.bus not in bus_ids:
            raise CaseValidationError(f"load {d.id}: references missing bus {d.bus}")
        if d.pd < 0:
            raise CaseValidationError(f"load {d.id}: pd must be non-negative")

    member_of: dict[int, int] = {}
    for s in case.substations:
        if s.grounding_resistance < 0:
            raise CaseValidationError(f"substation {s.id}: grounding_resistance negative")
        for bid in s.buses:
            if bid not in bus_ids:
                raise CaseValidationError(f"substation {s.id}: member bus {bid} missing")
            if bid in member_of:
                raise CaseValidationError(
                    f"bus {bid} belongs to substations {member_of[bid]} and {s.id}"
                )
            member_of[bid] = s.id
            bus = case.bus(bid)
            if abs(bus.lat - s.lat) > 1e-6 or abs(bus.lon - s.lon) > 1e-6:
                raise CaseValidationError(
                    f"substation {s.id}: member bus {bid} not at substation location"
                )

    seen = set()
    branch_ids = {b.id for b in case.branches}
    for r in case.relays:
        if r.branch in seen:
            raise CaseValidationError(f"duplicate relay for branch {r.branch}")
        seen.add(r.branch)
        if r.branch not in branch_ids:
            raise CaseValidationError(f"relay references missing branch {r.branch}")
        if r.pickup_ratio <= 0:
            raise CaseValidationError(f"relay on branch {r.branch}: pickup_ratio must be positive")
        if r.trip_threshold <= 0:
            raise CaseValidationError(
                f"relay on branch {r.branch}: trip_threshold must be positive"
            )


# ---------------------------------------------------------------------------
# Case-file serialization (JSON document, schema per the field names above)
# ---------------------------------------------------------------------------


def _complex_out(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


def _complex_in(v, where: str) -> complex:
    if isinstance(v, (int, float)):
        return complex(v, 0.0)
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    raise CaseParseError(f"{where}: expected [re, im] pair")


def case_to_dict(case: NetworkCase) -> dict:
    def bus_out(b: Bus) -> dict:
        return {
            "id": b.id,
            "name": b.name,
            "base_kv": b.base_kv,
            "vmin": b.vmin,
            "vmax": b.vmax,
            "lat": b.lat,
            "lon": b.lon,
            "status": b.status,
            "is_reference": b.is_reference,
            "shunt_admittance": _complex_out(b.shunt_admittance),
        }

    def xfmr_out(x: TransformerGicModel) -> dict:
        out = {
            "config": x.config.value,
            "alpha": x.alpha,
            "k_loss": x.k_loss,
            "rated_power": x.rated_power,
            "grounded_substation": x.grounded_substation,
            "winding_resistances": dict(sorted(x.winding_resistances.items())),
        }
        if x.beta is not None:
            out["beta"] = x.beta
        return out

    def branch_out(b: Branch) -> dict:
        mag, ang = abs(b.tap), cmath.phase(b.tap)
        out = {
            "id": b.id,
            "from_bus": b.from_bus,
            "to_bus": b.to_bus,
            "kind": b.kind.value,
            "series_admittance": _complex_out(b.series_admittance),
            "charging_b": b.charging_b,
            "tap": {"ratio": mag, "shift_deg": math.degrees(ang)},
            "angle_limit": math.degrees(b.angle_limit),
            "thermal_rating": b.thermal_rating,
            "status": b.status,
            "series_compensated": b.series_compensated,
        }
        if b.xfmr_config is not None:
            out["xfmr_config"] = xfmr_out(b.xfmr_config)
        return out

    return {
        "base_mva": case.base_mva,
        "bus": [bus_out(b) for b in case.buses],
        "branch": [branch_out(b) for b in case.branches],
        "gen": [
            {
                "id": g.id,
                "bus": g.bus,
                "pmin": g.pmin,
                "pmax": g.pmax,
                "qmin": g.qmin,
                "qmax": g.qmax,
                "ramp_rate": g.ramp_rate,
                "status": g.status,
            }
            for g in case.generators
        ],
        "load": [
            {"id": d.id, "bus": d.bus, "pd": d.pd, "qd": d.qd, "status": d.status}
            for d in case.loads
        ],
        "substation": [
            {
                "id": s.id,
                "lat": s.lat,
                "lon": s.lon,
                "grounding_resistance": s.grounding_resistance,
                "buses": list(s.buses),
            }
            for s in case.substations
        ],
        "relay": [
            {
                "branch": r.branch,
                "pickup_ratio": r.pickup_ratio,
                "trip_threshold": r.trip_threshold,
                "enabled": r.enabled,
            }
            for r in case.relays
        ],
    }


def _need(record: dict, key: str, where: str):
    if key not in record:
        raise CaseParseError(f"{where}: missing field '{key}'")
    return record[key]


def case_from_dict(doc: dict) -> NetworkCase:
    if not isinstance(doc, dict):
        raise CaseParseError("case document must be an object")

    buses = []
    for i, rec in enumerate(doc.get("bus", [])):
        where = f"bus[{i}]"
        buses.append(
            Bus(
                id=int(_need(rec, "id", where)),
                name=str(rec.get("name", "")),
                base_kv=float(_need(rec, "base_kv", where)),
                vmin=float(_need(rec, "vmin", where)),
                vmax=float(_need(rec, "vmax", where)),
                lat=float(_need(rec, "lat", where)),
                lon=float(_need(rec, "lon", where)),
                status=bool(rec.get("status", True)),
                is_reference=bool(rec.get("is_reference", False)),
                shunt_admittance=_complex_in(
                    rec.get("shunt_admittance", 0.0), where + ".shunt_admittance"
                ),
            )
        )

    branches = []
    for i, rec in enumerate(doc.get("branch", [])):
        where = f"branch[{i}]"
        try:
            kind = BranchKind(str(_need(rec, "kind", where)))
        except ValueError:
            raise CaseParseError(f"{where}: unknown kind {rec.get('kind')!r}")
        xc = None
        if rec.get("xfmr_config") is not None:
            xrec = rec["xfmr_config"]
            xwhere = where + ".xfmr_config"
            try:
                config = XfmrConfig(str(_need(xrec, "config", xwhere)))
            except ValueError:
                raise CaseParseError(f"{xwhere}: unknown config {xrec.get('config')!r}")
            xc = TransformerGicModel(
                config=config,
                alpha=float(_need(xrec, "alpha", xwhere)),
                beta=(float(xrec["beta"]) if xrec.get("beta") is not None else None),
                k_loss=float(_need(xrec, "k_loss", xwhere)),
                rated_power=float(_need(xrec, "rated_power", xwhere)),
                grounded_substation=int(_need(xrec, "grounded_substation", xwhere)),
                winding_resistances={
                    str(k): float(v)
                    for k, v in (xrec.get("winding_resistances") or {}).items()
                },
            )
        tap = 1.0 + 0j
        if "tap" in rec and rec["tap"] is not None:
            trec = rec["tap"]
            if isinstance(trec, dict):
                ratio = float(trec.get("ratio", 1.0))
                shift = math.radians(float(trec.get("shift_deg", 0.0)))
                tap = ratio * complex(math.cos(shift), math.sin(shift))
            else:
                tap = complex(float(trec), 0.0)
        branches.append(
            Branch(
                id=int(_need(rec, "id", where)),
                from_bus=int(_need(rec, "from_bus", where)),
                to_bus=int(_need(rec, "to_bus", where)),
                kind=kind,
                series_admittance=_complex_in(
                    _need(rec, "series_admittance", where), where + ".series_admittance"
                ),
                charging_b=float(rec.get("charging_b", 0.0)),
                tap=tap,
                angle_limit=math.radians(float(rec.get("angle_limit", 60.0))),
                thermal_rating=float(_need(rec, "thermal_rating", where)),
                status=bool(rec.get("status", True)),
                series_compensated=bool(rec.get("series_compensated", False)),
                xfmr_config=xc,
            )
        )

    gens = []
    for i, rec in enumerate(doc.get("gen", [])):
        where = f"gen[{i}]"
        gens.append(
            Generator(
                id=int(_need(rec, "id", where)),
                bus=int(_need(rec, "bus", where)),
                pmin=float(_need(rec, "pmin", where)),
                pmax=float(_need(rec, "pmax", where)),
                qmin=float(_need(rec, "qmin", where)),
                qmax=float(_need(rec, "qmax", where)),
                ramp_rate=float(rec.get("ramp_rate", 0.0)),
                status=bool(rec.get("status", True)),
            )
        )

    loads = []
    for i, rec in enumerate(doc.get("load", [])):
        where = f"load[{i}]"
        loads.append(
            Load(
                id=int(_need(rec, "id", where)),
                bus=int(_need(rec, "bus", where)),
                pd=float(_need(rec, "pd", where)),
                qd=float(rec.get("qd", 0.0)),
                status=bool(rec.get("status", True)),
            )
        )

    subs = []
    for i, rec in enumerate(doc.get("substation", [])):
        where = f"substation[{i}]"
        subs.append(
            Substation(
                id=int(_need(rec, "id", where)),
                lat=float(_need(rec, "lat", where)),
                lon=float(_need(rec, "lon", where)),
                grounding_resistance=float(_need(rec, "grounding_resistance", where)),
                buses=tuple(int(b) for b in rec.get("buses", [])),
            )
        )

    relays = []
    for i, rec in enumerate(doc.get("relay", [])):
        where = f"relay[{i}]"
        relays.append(
            RelaySpec(
                branch=int(_need(rec, "branch", where)),
                pickup_ratio=float(rec.get("pickup_ratio", 1.0)),
                trip_threshold=float(rec.get("trip_threshold", 600.0)),
                enabled=bool(rec.get("enabled", True)),
            )
        )

    case = NetworkCase(
        base_mva=float(_need(doc, "base_mva", "case")),
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(gens),
        loads=tuple(loads),
        substations=tuple(subs),
        relays=tuple(relays),
    )
    validate_case(case)
    return case


def load_case(path) -> NetworkCase:
    """Parse and validate a case file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise CaseParseError(f"case file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}")
    return case_from_dict(doc)


def save_case(case: NetworkCase, path) -> None:
    with open(path, "w") as fh:
        json.dump(case_to_dict(case), fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# GSU augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GsuDefaults:
    """Parameters used when synthesizing generator step-up transformers."""

    winding_resistance_ohm: float = 0.1  # gwye side, per phase
    k_loss: float = 1.8  # MVar per ampere
    gen_base_kv: float = 22.0
    series_reactance_pu: float = 0.10  # on the xfmr rating
    series_resistance_pu: float = 0.005
    grounding_resistance_ohm: float = 0.25  # when a substation must be created


def _gen_behind_gsu(case: NetworkCase, gen: Generator) -> bool:
    """A generator counts as already behind a GSU when its bus hangs off
    exactly one branch and that branch is a GSU transformer."""
    incident = [
        br
        for br in case.branches
        if gen.bus in (br.from_bus, br.to_bus)
    ]
    if len(incident) != 1:
        return False
    br = incident[0]
    return (
        br.kind is BranchKind.TRANSFORMER
        and br.xfmr_config is not None
        and br.xfmr_config.config is XfmrConfig.GWYE_DELTA_GSU
        and br.to_bus == gen.bus
    )


def attach_gsu_transformers(
    case: NetworkCase, defaults: GsuDefaults = GsuDefaults()
) -> NetworkCase:
    """Insert a delta-gwye GSU transformer behind every directly-connected
    generator.

    Each such generator gets a new low-voltage bus at its host bus
    location and moves onto it; the new transformer runs gwye (network,
    from side) to delta (generator, to side).  Idempotent: generators
    already behind a GSU are left alone.  Total load and generation
    capacity are unchanged.
    """
    todo = [g for g in case.generators if not _gen_behind_gsu(case, g)]
    if not todo:
        return case

    next_bus = max(b.id for b in case.buses) + 1
    next_branch = max((b.id for b in case.branches), default=0) + 1
    next_sub = max((s.id for s in case.substations), default=0) + 1

    new_buses = list(case.buses)
    new_branches = list(case.branches)
    new_subs = list(case.substations)
    new_relays = list(case.relays)
    gen_moves: dict[int, dict] = {}
    sub_of_bus = dict(case.substation_of_bus)

    for g in sorted(todo, key=lambda g: g.id):
        host = case.bus(g.bus)
        if host.id in sub_of_bus:
            sub_id = sub_of_bus[host.id]
        else:
            # host bus has no substation: create one at the bus location
            sub_id = next_sub
            next_sub += 1
            new_subs.append(
                Substation(
                    id=sub_id,
                    lat=host.lat,
                    lon=host.lon,
                    grounding_resistance=defaults.grounding_resistance_ohm,
                    buses=(host.id,),
                )
            )
            sub_of_bus[host.id] = sub_id

        gen_bus = Bus(
            id=next_bus,
            name=f"{host.name}_G{g.id}" if host.name else f"GEN_{g.id}",
            base_kv=defaults.gen_base_kv,
            vmin=host.vmin,
            vmax=host.vmax,
            lat=host.lat,
            lon=host.lon,
            status=host.status,
            is_reference=False,
            shunt_admittance=0j,
        )
        next_bus += 1
        new_buses.append(gen_bus)

        rating = max(g.pmax, 1.0)
        z_pu = complex(defaults.series_resistance_pu, defaults.series_reactance_pu) * (
            rating / case.base_mva
        )
        qcap = max(abs(g.qmin), abs(g.qmax))
        xfmr = Branch(
            id=next_branch,
            from_bus=host.id,
            to_bus=gen_bus.id,
            kind=BranchKind.TRANSFORMER,
            series_admittance=1.0 / z_pu,
            charging_b=0.0,
            tap=1.0 + 0j,
            angle_limit=math.pi / 3.0,
            thermal_rating=1.2 * math.hypot(rating, qcap),
            status=True,
            xfmr_config=TransformerGicModel(
                config=XfmrConfig.GWYE_DELTA_GSU,
                alpha=max(host.base_kv / defaults.gen_base_kv, 1e-6),
                k_loss=defaults.k_loss,
                rated_power=rating,
                grounded_substation=sub_id,
                winding_resistances={"high": defaults.winding_resistance_ohm},
            ),
        )
        next_branch += 1
        new_branches.append(xfmr)
        gen_moves[g.id] = {"bus": gen_bus.id}

        # the new bus sits inside the host substation
        for i, s in enumerate(new_subs):
            if s.id == sub_id:
                new_subs[i] = replace(s, buses=s.buses + (gen_bus.id,))
                break

    out = NetworkCase(
        base_mva=case.base_mva,
        buses=tuple(new_buses),
        branches=tuple(new_branches),
        generators=tuple(
            replace(g, **gen_moves[g.id]) if g.id in gen_moves else g
            for g in case.generators
        ),
        loads=case.loads,
        substations=tuple(new_subs),
        relays=tuple(new_relays),
    )
    validate_case(out)
    return out


# ---------------------------------------------------------------------------
# Contingencies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContingencySpec:
    bus_outages: tuple[int, ...] = ()
    branch_outages: tuple[int, ...] = ()
    load_scale: float = 1.0


def apply_contingencies(case: NetworkCase, spec: ContingencySpec) -> NetworkCase:
    """Disable the listed buses and branches and scale every load."""
    bus_ids = {b.id for b in case.buses}
    branch_ids = {b.id for b in case.branches}
    for bid in spec.bus_outages:
        if bid not in bus_ids:
            raise CaseValidationError(f"contingency references missing bus {bid}")
    for bid in spec.branch_outages:
        if bid not in branch_ids:
            raise CaseValidationError(f"contingency references missing branch {bid}")

    out = case
    if spec.bus_outages:
        out = out.with_bus_updates({b: {"status": False} for b in spec.bus_outages})
    if spec.branch_outages:
        out = out.with_branch_updates({b: {"status": False} for b in spec.branch_outages})
    if spec.load_scale != 1.0:
        out = out.with_load_updates(
            {
                d.id: {"pd": d.pd * spec.load_scale, "qd": d.qd * spec.load_scale}
                for d in out.loads
            }
        )
    return out
