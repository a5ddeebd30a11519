"""Line-to-field coupling: geoelectric fields to per-branch dc voltages.

A transmission line spanning two geolocated endpoints picks up a dc
electromotive force equal to the inner product of its linear displacement
(km, east/north) with the geoelectric field (V/km) sampled at the point
nearest the line midpoint.

Units: coordinates in degrees, displacements in km, fields in V/km,
coupled voltages in volts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geofield import FieldGrid

# km per degree of arc on the WGS84-derived NERC coupling model
KM_PER_DEGREE = 111.2


@dataclass(frozen=True)
class LineGeometry:
    """Endpoints of one branch, degrees. ``from``/``to`` order matters:
    reversing it negates the coupled voltage."""

    branch_id: int
    from_lat: float
    from_lon: float
    to_lat: float
    to_lon: float

    def midpoint(self) -> tuple[float, float]:
        return (
            0.5 * (self.from_lat + self.to_lat),
            0.5 * (self.from_lon + self.to_lon),
        )


@dataclass(frozen=True)
class CoupledVoltageSeries:
    """Per-timestep coupled dc voltage for one branch, volts."""

    branch_id: int
    volts: np.ndarray


def line_displacement(geom: LineGeometry) -> tuple[float, float]:
    """Linear line displacement (d_e, d_n) in km.

    d_e = 111.2 * dlon * cos(midpoint latitude), d_n = 111.2 * dlat.
    """
    dlat = geom.to_lat - geom.from_lat
    dlon = geom.to_lon - geom.from_lon
    mid_lat = 0.5 * (geom.from_lat + geom.to_lat)
    gamma = np.pi / 180.0 * mid_lat
    d_e = KM_PER_DEGREE * dlon * np.cos(gamma)
    d_n = KM_PER_DEGREE * dlat
    return float(d_e), float(d_n)


def coupled_voltage(displacement: tuple[float, float], field: tuple[float, float]) -> float:
    """Inner product of (d_e, d_n) km with (E_e, E_n) V/km, in volts."""
    d_e, d_n = displacement
    e_e, e_n = field
    return d_e * e_e + d_n * e_n


def field_at_midpoint(grid: FieldGrid, geom: LineGeometry, step: int) -> tuple[float, float]:
    """Field sample (E_e, E_n) of the grid point nearest the line midpoint.

    Ties in great-circle distance resolve to the lowest grid index.
    """
    lat, lon = geom.midpoint()
    p = grid.nearest_index(lat, lon)
    return float(grid.e_e[p, step]), float(grid.e_n[p, step])


def line_geometries(case) -> list[LineGeometry]:
    """Geometries for every in-service transmission line of a case.

    Transformers are excluded: both ends sit at the substation, so their
    displacement and coupled voltage are identically zero.
    """
    from .netmodel import BranchKind

    geoms = []
    for br in case.branches:
        if br.kind is not BranchKind.LINE:
            continue
        if not case.branch_in_service(br.id):
            continue
        f = case.bus(br.from_bus)
        t = case.bus(br.to_bus)
        geoms.append(LineGeometry(br.id, f.lat, f.lon, t.lat, t.lon))
    return geoms


def couple_case(case, grid: FieldGrid) -> dict[int, CoupledVoltageSeries]:
    """Coupled-voltage waveforms for every branch of a case.

    Lines get the Eq.-style displacement/field inner product per timestep;
    transformers get all-zero series of the same length.
    """
    nsteps = grid.num_steps
    out: dict[int, CoupledVoltageSeries] = {}
    for geom in line_geometries(case):
        d = line_displacement(geom)
        p = grid.nearest_index(*geom.midpoint())
        volts = d[0] * grid.e_e[p, :] + d[1] * grid.e_n[p, :]
        out[geom.branch_id] = CoupledVoltageSeries(geom.branch_id, np.asarray(volts, dtype=float))
    zeros = np.zeros(nsteps)
    for br in case.branches:
        if br.id not in out:
            out[br.id] = CoupledVoltageSeries(br.id, zeros.copy())
    return out


def write_branch_voltages(path, series: dict[int, CoupledVoltageSeries]) -> None:
    """Columnar text dump: branch_id followed by one voltage per timestep."""
    with open(path, "w") as fh:
        fh.write("# branch_id v[volts] per timestep\n")
        for bid in sorted(series):
            vals = " ".join(repr(float(v)) for v in series[bid].volts)
            fh.write(f"{bid} {vals}\n")


def read_branch_voltages(path) -> dict[int, CoupledVoltageSeries]:
    """Inverse of :func:`write_branch_voltages`."""
    out: dict[int, CoupledVoltageSeries] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            bid = int(parts[0])
            volts = np.array([float(p) for p in parts[1:]], dtype=float)
            out[bid] = CoupledVoltageSeries(bid, volts)
    return out
