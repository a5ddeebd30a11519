"""Shared case builders for the test suite."""

import math

import numpy as np
import pytest

from gmdcascade.netmodel import (
    Branch,
    BranchKind,
    Bus,
    Generator,
    Load,
    NetworkCase,
    RelaySpec,
    Substation,
    TransformerGicModel,
    XfmrConfig,
    validate_case,
)


def make_bus(bid, lat=38.0, lon=-78.0, *, name=None, reference=False, status=True,
             base_kv=230.0, shunt=0j):
    return Bus(
        id=bid,
        name=name or f"BUS{bid}",
        base_kv=base_kv,
        vmin=0.9,
        vmax=1.1,
        lat=lat,
        lon=lon,
        status=status,
        is_reference=reference,
        shunt_admittance=shunt,
    )


def make_line(bid, f, t, *, x=0.01, r=0.0, rating=1000.0, status=True,
              compensated=False, angle_limit=math.pi / 3):
    return Branch(
        id=bid,
        from_bus=f,
        to_bus=t,
        kind=BranchKind.LINE,
        series_admittance=1.0 / complex(r, x),
        charging_b=0.0,
        tap=1.0 + 0j,
        angle_limit=angle_limit,
        thermal_rating=rating,
        status=status,
        series_compensated=compensated,
    )


def make_xfmr(bid, f, t, cfg, sub, *, x=0.05, rating=200.0,
              windings=None, alpha=2.0, beta=None, k_loss=1.8):
    return Branch(
        id=bid,
        from_bus=f,
        to_bus=t,
        kind=BranchKind.TRANSFORMER,
        series_admittance=1.0 / complex(0.0, x),
        charging_b=0.0,
        tap=1.0 + 0j,
        angle_limit=math.pi / 3,
        thermal_rating=rating,
        xfmr_config=TransformerGicModel(
            config=cfg,
            alpha=alpha,
            beta=beta,
            k_loss=k_loss,
            rated_power=rating,
            grounded_substation=sub,
            winding_resistances=windings or {},
        ),
    )


def two_bus_case(pmax=80.0, rating=1000.0, load=(100.0, 0.0), x=0.01, qmax=50.0):
    """Generator at bus 1, load at bus 2, one line."""
    case = NetworkCase(
        base_mva=100.0,
        buses=(
            make_bus(1, 38.0, -78.0, reference=True),
            make_bus(2, 38.0, -77.0),
        ),
        branches=(make_line(1, 1, 2, x=x, rating=rating),),
        generators=(Generator(1, 1, 0.0, pmax, -qmax, qmax, ramp_rate=10.0),),
        loads=(Load(1, 2, load[0], load[1]),),
        substations=(),
        relays=(),
    )
    validate_case(case)
    return case


def radial_three_bus(rating12=1000.0, rating23=1000.0, pmax=300.0):
    """gen -- bus1 --(1)-- bus2 --(2)-- bus3, loads at buses 2 and 3."""
    case = NetworkCase(
        base_mva=100.0,
        buses=(
            make_bus(1, 38.0, -78.0, reference=True),
            make_bus(2, 38.0, -77.5),
            make_bus(3, 38.0, -77.0),
        ),
        branches=(
            make_line(1, 1, 2, rating=rating12),
            make_line(2, 2, 3, rating=rating23),
        ),
        generators=(Generator(1, 1, 0.0, pmax, -150.0, 150.0, ramp_rate=50.0),),
        loads=(Load(1, 2, 100.0, 10.0), Load(2, 3, 80.0, 8.0)),
        substations=(),
        relays=(),
    )
    validate_case(case)
    return case


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
