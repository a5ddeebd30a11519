"""Time-stepped GMD cascade loop: ramping, breakers, islanding, MLS, relays.

One run starts from a steady minimum-load-shed dispatch with no induced
voltage, then repeats until the horizon elapses or the grid is dark:

  1. ramp-limit generator active-power bounds around the previous dispatch,
  2. open generator breakers (output below the base-case minimum),
  3. open load breakers (demand reset to the previously served power),
  4. keep only the largest island, disabling everything else,
  5. solve the GIC network for the current field sample and feed the
     transformer reactive losses into a cascading MLS solve,
  6. integrate branch overcurrent relays on the resulting loadings,
  7. open branches whose relay integrator crossed the trip threshold.

A certified-infeasible cascading MLS means no operating point exists at
all (typically reactive collapse under GIC losses): the system is
declared dark.  A numerically failed solve is retried once at a relaxed
tolerance and otherwise terminates the run as a solver failure, recorded
distinctly from physical blackout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Optional

import numpy as np

from . import conic
from .coupling import CoupledVoltageSeries
from .gicsolve import build_gic_network, solve_gic
from .mls import MlsMode, MlsSnapshot, MlsSolution, solve_mls
from .netmodel import NetworkCase


class CascadeError(Exception):
    """Raised for configuration problems that prevent a run from starting."""


class TerminationCause(Enum):
    HORIZON_ELAPSED = "horizon_elapsed"
    TOTAL_BLACKOUT = "total_blackout"
    SOLVER_FAILURE = "solver_failure"


@dataclass(frozen=True)
class CascadeConfig:
    dt: float = 300.0  # seconds per iteration
    horizon: float = 3600.0  # seconds
    pickup_ratio: float = 1.0  # loading level where relays start integrating
    trip_threshold: float = 600.0  # seconds of accumulated overload
    solver_tol: float = 1e-6
    relaxed_tol_factor: float = 100.0  # retry multiplier after a failed solve
    verbosity: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise CascadeError("dt must be positive")
        if self.horizon < self.dt:
            raise CascadeError("horizon must be at least one step")

    @property
    def num_steps(self) -> int:
        return int(math.floor(self.horizon / self.dt + 1e-9))


@dataclass
class RelayState:
    branch: int
    pickup_ratio: float
    trip_threshold: float
    enabled: bool = True
    integrator: float = 0.0  # seconds of accumulated overload
    tripped: bool = False


@dataclass
class CascadeState:
    """Mutable loop state; the network itself lives in the (immutable)
    ``case`` snapshot which is replaced as components switch out."""

    case: NetworkCase
    iteration: int
    time: float
    gen_setpoints: dict[int, complex]  # effective MW + jMVar of last solve
    load_setpoints: dict[int, complex]  # demand ceiling, monotone non-increasing
    last_served: dict[int, complex]  # power actually supplied last solve
    gen_bounds: dict[int, tuple[float, float]]  # ramp-adjusted MW box
    relays: dict[int, RelayState]
    island_buses: frozenset[int]


@dataclass(frozen=True)
class CascadeEvent:
    iteration: int
    time: float
    kind: str  # trip | gen_breaker | island | voltage_collapse | solver | blackout
    message: str


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    time: float
    served_mw: float
    generation_mw: float
    online_branches: int
    trips: tuple[int, ...]
    island_sizes: tuple[int, ...]
    mean_v_dc: float
    max_v_dc: float
    solver_status: str


@dataclass
class CascadeTrace:
    records: list[IterationRecord]
    events: list[CascadeEvent]
    termination: TerminationCause
    final_case: NetworkCase

    @property
    def served_series(self) -> np.ndarray:
        return np.array([r.served_mw for r in self.records])

    @property
    def generation_series(self) -> np.ndarray:
        return np.array([r.generation_mw for r in self.records])

    def first_trip_iteration(self) -> Optional[int]:
        for r in self.records:
            if r.trips:
                return r.iteration
        return None


# ---------------------------------------------------------------------------
# The individual loop operations (pure; the engine wires them together)
# ---------------------------------------------------------------------------


def update_generator_ramp(
    case: NetworkCase,
    setpoints: Mapping[int, complex],
    dt: float,
) -> dict[int, tuple[float, float]]:
    """Ramp-limited active-power bounds around the previous dispatch.

    The window [p_prev - r*dt, p_prev + r*dt] is intersected with the
    base-case box; an empty intersection clamps to the nearest base bound.
    Ramp rates are MW/minute, dt is seconds.
    """
    bounds: dict[int, tuple[float, float]] = {}
    for g in case.generators:
        if not case.gen_in_service(g.id):
            continue
        p_prev = complex(setpoints.get(g.id, 0.0)).real
        delta = g.ramp_rate * dt / 60.0
        lo = max(g.pmin, p_prev - delta)
        hi = min(g.pmax, p_prev + delta)
        if lo > hi:
            # window misses the box entirely: pin at the violated end
            pin = g.pmax if p_prev - delta > g.pmax else g.pmin
            lo = hi = pin
        bounds[g.id] = (lo, hi)
    return bounds


def update_generator_breakers(
    case: NetworkCase, setpoints: Mapping[int, complex]
) -> set[int]:
    """Generators whose effective output fell below the base-case minimum
    (strictly) open their breakers permanently."""
    opened = set()
    for g in case.generators:
        if not case.gen_in_service(g.id):
            continue
        if complex(setpoints.get(g.id, 0.0)).real < g.pmin:
            opened.add(g.id)
    return opened


def update_load_breakers(
    case: NetworkCase,
    setpoints: Mapping[int, complex],
    served: Mapping[int, complex],
) -> dict[int, complex]:
    """New demand ceilings: each load is reset to its previously supplied
    power, so total demand never increases."""
    out = dict(setpoints)
    for d in case.loads:
        if not case.load_in_service(d.id):
            continue
        if d.id in served:
            out[d.id] = complex(served[d.id])
    return out


def connected_components(case: NetworkCase) -> list[frozenset[int]]:
    """Components of the in-service network, largest first; ties ordered
    by their lowest bus id."""
    buses = [b.id for b in case.buses if b.status]
    adj: dict[int, list[int]] = {b: [] for b in buses}
    for br in case.branches:
        if case.branch_in_service(br.id):
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
    comps.sort(key=lambda c: (-len(c), min(c)))
    return comps


def select_largest_island(case: NetworkCase) -> tuple[frozenset[int], list[frozenset[int]]]:
    """The surviving bus set and the components that must be disabled."""
    comps = connected_components(case)
    if not comps:
        return frozenset(), []
    return comps[0], comps[1:]


def update_relays(
    relays: dict[int, RelayState],
    loadings_mva: Mapping[int, float],
    ratings_mva: Mapping[int, float],
    dt: float,
) -> set[int]:
    """Advance every enabled relay's overload-time integrator and return
    the branches that tripped this step.

    The integrator gains dt*(loading/rating - pickup) seconds, decays at
    the same rate below pickup, floors at zero, and latches a permanent
    trip at the threshold.
    """
    tripped = set()
    for bid, relay in relays.items():
        if relay.tripped or not relay.enabled or bid not in loadings_mva:
            continue
        rating = ratings_mva[bid]
        if rating <= 0:
            continue
        excess = loadings_mva[bid] / rating - relay.pickup_ratio
        relay.integrator = max(0.0, relay.integrator + dt * excess)
        if relay.integrator >= relay.trip_threshold:
            relay.tripped = True
            tripped.add(bid)
    return tripped


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


def _ensure_references(case: NetworkCase) -> NetworkCase:
    """Flag the lowest bus of any reference-less island as reference and
    clear extra flags so every island carries exactly one."""
    comps = connected_components(case)
    updates: dict[int, dict] = {}
    for comp in comps:
        refs = [b for b in sorted(comp) if case.bus(b).is_reference]
        if not refs:
            updates[min(comp)] = {"is_reference": True}
        else:
            for extra in refs[1:]:
                updates[extra] = {"is_reference": False}
    return case.with_bus_updates(updates) if updates else case


def _disable_buses(case: NetworkCase, buses) -> NetworkCase:
    """Take buses (and their gens/loads) out of service."""
    buses = set(buses)
    if not buses:
        return case
    out = case.with_bus_updates({b: {"status": False} for b in buses})
    out = out.with_gen_updates(
        {g.id: {"status": False} for g in out.generators if g.bus in buses}
    )
    out = out.with_load_updates(
        {d.id: {"status": False} for d in out.loads if d.bus in buses}
    )
    return out


def _init_relays(case: NetworkCase, cfg: CascadeConfig) -> dict[int, RelayState]:
    specs = {r.branch: r for r in case.relays}
    relays = {}
    for br in case.branches:
        spec = specs.get(br.id)
        if spec is None:
            relays[br.id] = RelayState(br.id, cfg.pickup_ratio, cfg.trip_threshold)
        else:
            relays[br.id] = RelayState(
                br.id, spec.pickup_ratio, spec.trip_threshold, spec.enabled
            )
    return relays


def _scenario_sample(scenario: Mapping[int, CoupledVoltageSeries], branch: int, idx: int) -> float:
    series = scenario.get(branch)
    if series is None:
        return 0.0
    volts = series.volts
    if idx >= len(volts):
        idx = len(volts) - 1  # piecewise-constant hold past the series end
    return float(volts[idx])


def run_cascade(
    case: NetworkCase,
    scenario: Mapping[int, CoupledVoltageSeries],
    cfg: CascadeConfig,
) -> CascadeTrace:
    """Execute the cascade loop and return its full trace.

    ``scenario`` maps branch ids to coupled-voltage series sampled on the
    configuration's dt grid; missing branches couple zero volts.
    """
    n_steps = cfg.num_steps
    min_len = min((len(s.volts) for s in scenario.values()), default=n_steps)
    if scenario and min_len < n_steps:
        raise CascadeError(
            f"scenario series ({min_len} samples) shorter than horizon/dt ({n_steps})"
        )

    events: list[CascadeEvent] = []
    records: list[IterationRecord] = []

    work = _ensure_references(case)
    steady = solve_mls(MlsSnapshot(work, {}), tol=cfg.solver_tol)
    if not steady.feasible:
        raise CascadeError(
            f"initial steady MLS did not solve (status {steady.status.value})"
        )

    state = CascadeState(
        case=work,
        iteration=0,
        time=0.0,
        gen_setpoints=dict(steady.gen_output),
        load_setpoints=dict(steady.load_served),
        last_served=dict(steady.load_served),
        gen_bounds={},
        relays=_init_relays(work, cfg),
        island_buses=frozenset(b.id for b in work.buses if b.status),
    )
    records.append(
        IterationRecord(
            iteration=0,
            time=0.0,
            served_mw=steady.total_served_mw(),
            generation_mw=sum(s.real for s in steady.gen_output.values()),
            online_branches=sum(
                1 for b in work.branches if work.branch_in_service(b.id)
            ),
            trips=(),
            island_sizes=tuple(len(c) for c in connected_components(work)),
            mean_v_dc=0.0,
            max_v_dc=0.0,
            solver_status=steady.status.value,
        )
    )

    termination = TerminationCause.HORIZON_ELAPSED
    for k in range(1, n_steps + 1):
        state.iteration = k
        state.time = k * cfg.dt
        work = state.case

        # 1. ramp bounds
        state.gen_bounds = update_generator_ramp(work, state.gen_setpoints, cfg.dt)

        # 2. generator breakers
        opened = update_generator_breakers(work, state.gen_setpoints)
        if opened:
            work = work.with_gen_updates({g: {"status": False} for g in opened})
            for g in sorted(opened):
                events.append(
                    CascadeEvent(k, state.time, "gen_breaker", f"generator {g} opened")
                )

        # 3. load breakers
        state.load_setpoints = update_load_breakers(
            work, state.load_setpoints, state.last_served
        )

        # 4. largest island
        survivor, dead = select_largest_island(work)
        for comp in dead:
            work = _disable_buses(work, comp)
            events.append(
                CascadeEvent(
                    k, state.time, "island",
                    f"island of {len(comp)} buses disabled ({sorted(comp)[:8]}...)"
                    if len(comp) > 8
                    else f"island of {len(comp)} buses disabled ({sorted(comp)})",
                )
            )
        island_sizes = tuple(len(c) for c in [survivor] + list(dead)) if survivor else ()
        has_gen = any(work.gen_in_service(g.id) for g in work.generators)
        has_load = any(work.load_in_service(d.id) for d in work.loads)
        if not survivor or not has_gen or not has_load:
            work = _disable_buses(work, survivor)
            state.case = work
            events.append(
                CascadeEvent(
                    k, state.time, "blackout",
                    "surviving island has no viable generation/load; system dark",
                )
            )
            records.append(
                IterationRecord(k, state.time, 0.0, 0.0, 0, (), island_sizes, 0.0, 0.0, "n/a")
            )
            termination = TerminationCause.TOTAL_BLACKOUT
            break
        work = _ensure_references(work)
        state.island_buses = survivor

        # 5. GIC solve on the current topology, then cascading MLS
        emfs = {
            br.id: _scenario_sample(scenario, br.id, k)
            for br in work.branches
            if work.branch_in_service(br.id)
        }
        net = build_gic_network(work)
        gic = solve_gic(net, emfs, case=work)
        applied = [
            abs(_scenario_sample(scenario, br.id, k))
            for br in work.branches
            if work.branch_in_service(br.id) and br.id in scenario
        ]
        mean_v = float(np.mean(applied)) if applied else 0.0
        max_v = float(np.max(applied)) if applied else 0.0

        snap = MlsSnapshot(
            case=work,
            q_loss=gic.q_loss,
            mode=MlsMode.CASCADING,
            gen_setpoints=state.gen_setpoints,
            load_setpoints=state.load_setpoints,
            gen_pbounds=state.gen_bounds,
        )
        sol = solve_mls(snap, tol=cfg.solver_tol)
        if sol.status is conic.ConicStatus.NUMERICAL_FAILURE:
            events.append(
                CascadeEvent(k, state.time, "solver", "retrying at relaxed tolerance")
            )
            sol = solve_mls(snap, tol=cfg.solver_tol * cfg.relaxed_tol_factor)
        if sol.status is conic.ConicStatus.INFEASIBLE:
            # no feasible operating point: reactive collapse, system dark
            work = _disable_buses(work, survivor)
            state.case = work
            events.append(
                CascadeEvent(
                    k, state.time, "voltage_collapse",
                    "cascading MLS certified infeasible; all buses disabled",
                )
            )
            records.append(
                IterationRecord(
                    k, state.time, 0.0, 0.0, 0, (), island_sizes, mean_v, max_v,
                    sol.status.value,
                )
            )
            termination = TerminationCause.TOTAL_BLACKOUT
            break
        if not sol.feasible:
            state.case = work
            events.append(
                CascadeEvent(
                    k, state.time, "solver",
                    f"cascading MLS unsolvable (status {sol.status.value})",
                )
            )
            records.append(
                IterationRecord(
                    k, state.time, 0.0, 0.0,
                    sum(1 for b in work.branches if work.branch_in_service(b.id)),
                    (), island_sizes, mean_v, max_v, sol.status.value,
                )
            )
            termination = TerminationCause.SOLVER_FAILURE
            break

        state.gen_setpoints = dict(sol.gen_output)
        state.last_served = dict(sol.load_served)

        # 6 + 7. relays and trips
        loadings = {
            bid: sol.branch_loading_mva(bid) for bid in sol.branch_flow_from
        }
        ratings = {br.id: br.thermal_rating for br in work.branches}
        tripped = update_relays(state.relays, loadings, ratings, cfg.dt)
        if tripped:
            work = work.with_branch_updates({b: {"status": False} for b in tripped})
            for bid in sorted(tripped):
                events.append(
                    CascadeEvent(k, state.time, "trip", f"branch {bid} opened by relay")
                )

        state.case = work
        records.append(
            IterationRecord(
                iteration=k,
                time=state.time,
                served_mw=sol.total_served_mw(),
                generation_mw=sum(s.real for s in sol.gen_output.values()),
                online_branches=sum(
                    1 for b in work.branches if work.branch_in_service(b.id)
                ),
                trips=tuple(sorted(tripped)),
                island_sizes=island_sizes,
                mean_v_dc=mean_v,
                max_v_dc=max_v,
                solver_status=sol.status.value,
            )
        )
        if cfg.verbosity:
            print(
                f"[{k:4d}] t={state.time:7.0f}s served={sol.total_served_mw():9.2f}MW "
                f"branches={records[-1].online_branches} trips={sorted(tripped)}"
            )

        if not any(b.status for b in work.buses):
            termination = TerminationCause.TOTAL_BLACKOUT
            break

    return CascadeTrace(
        records=records,
        events=events,
        termination=termination,
        final_case=state.case,
    )


# ---------------------------------------------------------------------------
# Trace export
# ---------------------------------------------------------------------------


def trace_to_text(trace: CascadeTrace) -> str:
    """Plot-ready columnar trace: one row per iteration."""
    lines = [
        "iteration time_s mean_v_dc_volts max_v_dc_volts total_generation_mw "
        "served_mw online_branches"
    ]
    for r in trace.records:
        lines.append(
            f"{r.iteration} {r.time!r} {r.mean_v_dc!r} {r.max_v_dc!r} "
            f"{r.generation_mw!r} {r.served_mw!r} {r.online_branches}"
        )
    return "\n".join(lines) + "\n"


def events_to_text(trace: CascadeTrace) -> str:
    lines = ["iteration time_s kind message"]
    for e in trace.events:
        lines.append(f"{e.iteration} {e.time!r} {e.kind} {e.message}")
    return "\n".join(lines) + "\n"


def summary_to_text(trace: CascadeTrace) -> str:
    final = trace.final_case
    last = trace.records[-1]
    lines = [
        f"termination {trace.termination.value}",
        f"iterations {last.iteration}",
        f"final_time_s {last.time!r}",
        f"final_served_mw {last.served_mw!r}",
        f"final_generation_mw {last.generation_mw!r}",
        f"buses_online {sum(1 for b in final.buses if b.status)}",
        f"branches_online {sum(1 for b in final.branches if final.branch_in_service(b.id))}",
        f"gens_online {sum(1 for g in final.generators if final.gen_in_service(g.id))}",
        f"trips_total {sum(len(r.trips) for r in trace.records)}",
    ]
    return "\n".join(lines) + "\n"
