"""Seeded generator of geolocated synthetic transmission cases.

Stands in for unpublished storm-study networks: a two-tier (230/115 kV)
grid spread over a ~400 x 600 km mid-Atlantic window, minimum-spanning-
tree backbone plus shortcut lines, loads at most substations, generators
behind delta-gwye step-up transformers.  Proportions track a published
169-bus storm-study network (roughly 57% of buses are generator buses,
~17% of the rest carry a low-voltage tier).

Everything derives from one integer seed; identical seeds produce
byte-identical case files.
"""

from __future__ import annotations

import math

import numpy as np

from .netmodel import (
    Branch,
    BranchKind,
    Bus,
    Generator,
    GsuDefaults,
    Load,
    NetworkCase,
    RelaySpec,
    Substation,
    TransformerGicModel,
    XfmrConfig,
    attach_gsu_transformers,
    validate_case,
)

REGION_LAT = (35.5, 39.5)
REGION_LON = (-80.5, -75.5)
LOAD_MW_PER_BUS = 50.0
GEN_CAPACITY_MARGIN = 1.35


def _mst_edges(xy: np.ndarray) -> list[tuple[int, int]]:
    """Prim's algorithm on Euclidean distances, deterministic."""
    n = xy.shape[0]
    if n <= 1:
        return []
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    dist = np.linalg.norm(xy - xy[0], axis=1)
    parent = np.zeros(n, dtype=int)
    edges = []
    for _ in range(n - 1):
        cand = np.where(~in_tree, dist, np.inf)
        j = int(np.argmin(cand))
        edges.append((int(parent[j]), j))
        in_tree[j] = True
        d = np.linalg.norm(xy - xy[j], axis=1)
        closer = (~in_tree) & (d < dist)
        dist[closer] = d[closer]
        parent[closer] = j
    return edges


def synth_case(num_buses: int, seed: int, base_mva: float = 100.0) -> NetworkCase:
    """Deterministic synthetic case with exactly ``num_buses`` buses
    (generator buses included)."""
    if num_buses < 2:
        raise ValueError("synthetic case needs at least 2 buses")
    rng = np.random.default_rng(seed)

    n_gen = max(1, int(round(0.568 * num_buses)))
    rest = num_buses - n_gen
    if rest < 1:
        n_gen = num_buses - 1
        rest = 1
    n_low = int(round(0.17 * rest)) if rest >= 6 else 0
    n_net = rest - n_low

    # substation geography (one primary bus per substation)
    lat = rng.uniform(*REGION_LAT, n_net)
    lon = rng.uniform(*REGION_LON, n_net)
    km_x = (lon - np.mean(REGION_LON)) * 111.2 * math.cos(math.radians(37.5))
    km_y = (lat - np.mean(REGION_LAT)) * 111.2
    xy = np.column_stack([km_x, km_y])

    buses: list[Bus] = []
    subs: list[Substation] = []
    for i in range(n_net):
        buses.append(
            Bus(
                id=i + 1,
                name=f"SUB{i + 1:03d}_230",
                base_kv=230.0,
                vmin=0.9,
                vmax=1.1,
                lat=float(lat[i]),
                lon=float(lon[i]),
            )
        )
        subs.append(
            Substation(
                id=i + 1,
                lat=float(lat[i]),
                lon=float(lon[i]),
                grounding_resistance=float(rng.uniform(0.1, 1.0)),
                buses=(i + 1,),
            )
        )

    # backbone + shortcut lines
    edges = _mst_edges(xy)
    target_lines = max(n_net - 1, int(round(1.6 * n_net)))
    have = {tuple(sorted(e)) for e in edges}
    # candidate shortcuts: near pairs not already connected
    if n_net > 2:
        d2 = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=2)
        cand = [
            (float(d2[i, j]), i, j)
            for i in range(n_net)
            for j in range(i + 1, n_net)
            if (i, j) not in have
        ]
        cand.sort()
        # prefer short spans but skip a random fraction for variety
        for dist_km, i, j in cand:
            if len(have) >= target_lines:
                break
            if rng.random() < 0.35:
                continue
            have.add((i, j))
            edges.append((i, j))

    total_load = LOAD_MW_PER_BUS * num_buses
    n_lines = len(edges)
    rating_base = 2.0 * total_load / max(n_lines, 1)

    branches: list[Branch] = []
    bid = 1
    for i, j in edges:
        length_km = float(np.linalg.norm(xy[i] - xy[j]))
        x_pu = max(length_km, 1.0) * 9.4e-4
        r_pu = x_pu / 8.0
        y = 1.0 / complex(r_pu, x_pu)
        branches.append(
            Branch(
                id=bid,
                from_bus=i + 1,
                to_bus=j + 1,
                kind=BranchKind.LINE,
                series_admittance=complex(y.real, y.imag),
                charging_b=0.002 * max(length_km, 1.0) / 45.0,
                tap=1.0 + 0j,
                angle_limit=math.radians(60.0),
                thermal_rating=float(rating_base * rng.uniform(0.8, 1.3)),
                status=True,
            )
        )
        bid += 1

    # low-voltage tier at the busiest substations
    low_hosts = sorted(rng.choice(n_net, size=n_low, replace=False).tolist()) if n_low else []
    low_bus_of: dict[int, int] = {}
    next_bus = n_net + 1
    for host in low_hosts:
        host_id = host + 1
        low_bus_of[host_id] = next_bus
        buses.append(
            Bus(
                id=next_bus,
                name=f"SUB{host_id:03d}_115",
                base_kv=115.0,
                vmin=0.9,
                vmax=1.1,
                lat=float(lat[host]),
                lon=float(lon[host]),
            )
        )
        subs[host] = Substation(
            id=subs[host].id,
            lat=subs[host].lat,
            lon=subs[host].lon,
            grounding_resistance=subs[host].grounding_resistance,
            buses=subs[host].buses + (next_bus,),
        )
        rating = 1.8 * LOAD_MW_PER_BUS * num_buses / max(n_net, 1)
        z_pu = complex(0.01, 0.08) * (base_mva / max(rating, 1.0))
        branches.append(
            Branch(
                id=bid,
                from_bus=host_id,
                to_bus=next_bus,
                kind=BranchKind.TRANSFORMER,
                series_admittance=1.0 / z_pu,
                charging_b=0.0,
                tap=1.0 + 0j,
                angle_limit=math.radians(60.0),
                thermal_rating=float(rating),
                status=True,
                xfmr_config=TransformerGicModel(
                    config=XfmrConfig.GWYE_GWYE,
                    alpha=230.0 / 115.0,
                    k_loss=1.8,
                    rated_power=float(rating),
                    grounded_substation=host_id,
                    winding_resistances={
                        "high": float(rng.uniform(0.2, 0.5)),
                        "low": float(rng.uniform(0.1, 0.3)),
                    },
                ),
            )
        )
        bid += 1
        next_bus += 1

    # loads: every low-tier bus, plus a random subset of primary buses
    load_buses = [low_bus_of[h + 1] for h in low_hosts]
    n_primary_loads = max(1, int(round(0.7 * n_net)))
    primary_hosts = sorted(rng.choice(n_net, size=n_primary_loads, replace=False).tolist())
    load_buses += [h + 1 for h in primary_hosts]
    load_buses = sorted(set(load_buses))
    weights = rng.uniform(0.4, 1.6, len(load_buses))
    weights = weights / weights.sum()
    loads = [
        Load(
            id=i + 1,
            bus=b,
            pd=float(total_load * w),
            qd=float(total_load * w * 0.2),
        )
        for i, (b, w) in enumerate(zip(load_buses, weights))
    ]

    # generators on primary buses (some host several)
    gen_hosts = sorted(rng.integers(1, n_net + 1, size=n_gen).tolist())
    total_cap = GEN_CAPACITY_MARGIN * total_load
    gw = rng.uniform(0.5, 1.5, n_gen)
    gw = gw / gw.sum()
    gens = []
    for i, (host, w) in enumerate(zip(gen_hosts, gw)):
        pmax = float(total_cap * w)
        gens.append(
            Generator(
                id=i + 1,
                bus=host,
                pmin=float(0.1 * pmax),
                pmax=pmax,
                qmin=float(-0.3 * pmax),
                qmax=float(0.5 * pmax),
                ramp_rate=float(0.02 * pmax),
            )
        )

    # reference: the primary bus carrying the most capacity
    cap_at = {}
    for g in gens:
        cap_at[g.bus] = cap_at.get(g.bus, 0.0) + g.pmax
    ref_bus = max(sorted(cap_at), key=lambda b: cap_at[b])
    buses = [
        b if b.id != ref_bus else Bus(
            id=b.id, name=b.name, base_kv=b.base_kv, vmin=b.vmin, vmax=b.vmax,
            lat=b.lat, lon=b.lon, status=b.status, is_reference=True,
            shunt_admittance=b.shunt_admittance,
        )
        for b in buses
    ]

    relays = [RelaySpec(branch=br.id, pickup_ratio=1.0, trip_threshold=600.0) for br in branches]

    case = NetworkCase(
        base_mva=base_mva,
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(gens),
        loads=tuple(loads),
        substations=tuple(subs),
        relays=tuple(relays),
    )
    validate_case(case)
    case = attach_gsu_transformers(case, GsuDefaults())
    # GSU branches also get relays
    existing = {r.branch for r in case.relays}
    extra = tuple(
        RelaySpec(branch=br.id, pickup_ratio=1.0, trip_threshold=600.0)
        for br in case.branches
        if br.id not in existing
    )
    case = case.with_components(relays=case.relays + extra)
    validate_case(case)
    if len(case.buses) != num_buses:
        raise AssertionError(
            f"synthetic sizing bug: built {len(case.buses)} buses, wanted {num_buses}"
        )
    return case


def mean_line_length_km(case: NetworkCase) -> float:
    """Average great-circle length of the transmission lines."""
    from .geofield import great_circle_km

    lengths = []
    for br in case.branches:
        if br.kind is not BranchKind.LINE:
            continue
        f, t = case.bus(br.from_bus), case.bus(br.to_bus)
        lengths.append(great_circle_km(f.lat, f.lon, t.lat, t.lon))
    return float(np.mean(lengths)) if lengths else 0.0
