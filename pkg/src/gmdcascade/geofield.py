"""Geomagnetic-to-geoelectric conversion via magnetotelluric transfer functions.

The surface impedance tensor Z(f) of a survey site relates the horizontal
magnetic perturbation spectrum to the geoelectric field spectrum:

    [E_n(f); E_e(f)] = [[Z_nn, Z_ne], [Z_en, Z_ee]] [B_n(f); B_e(f)]

with Z in (mV/km)/nT, B in nT, and E returned in V/km.  Processing of a
time series follows the usual MT recipe: remove the mean, apply a cosine
(Tukey) taper, FFT, multiply by Z interpolated to each bin frequency,
zero the dc bin, and inverse transform.  Conjugate symmetry of the
spectrum (rfft/irfft) keeps the output real.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal.windows import tukey

EARTH_RADIUS_KM = 6371.0


def great_circle_km(lat1, lon1, lat2, lon2) -> float:
    """Haversine great-circle distance in km. Accepts scalars or arrays."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dp = p2 - p1
    dl = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dp / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2.0) ** 2
    return EARTH_RADIUS_KM * 2.0 * np.arcsin(np.sqrt(a))


@dataclass(frozen=True)
class TransferFunction:
    """Empirical MT impedance tensor of one survey site.

    ``frequencies`` must be strictly increasing and positive; ``z`` has
    shape (nfreq, 2, 2), complex, ordered [[Z_nn, Z_ne], [Z_en, Z_ee]],
    in (mV/km)/nT.
    """

    site_lat: float
    site_lon: float
    frequencies: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        z = np.asarray(self.z, dtype=complex)
        if f.ndim != 1 or f.size < 2:
            raise ValueError("transfer function needs at least 2 tabulated frequencies")
        if np.any(f <= 0):
            raise ValueError("transfer function frequencies must be positive")
        if np.any(np.diff(f) <= 0):
            raise ValueError("transfer function frequencies must be strictly increasing")
        if z.shape != (f.size, 2, 2):
            raise ValueError(f"z must have shape ({f.size}, 2, 2), got {z.shape}")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "z", z)

    @cached_property
    def _spline(self):
        # < 4 knots: log-linear fallback, handled in interpolate()
        if self.frequencies.size < 4:
            return None
        return CubicSpline(np.log(self.frequencies), self.z, axis=0, bc_type="natural")

    def interpolate(self, freq) -> np.ndarray:
        """Z interpolated at ``freq`` (Hz, scalar or array).

        Cubic spline in log-frequency, real and imaginary parts splined
        through the same knots; queries outside the tabulated range clamp
        to the endpoint tensors.  With 2 or 3 knots the interpolant
        degrades to log-linear.
        """
        freq = np.asarray(freq, dtype=float)
        if np.any(freq <= 0):
            raise ValueError("query frequency must be positive")
        lf = np.clip(np.log(freq), np.log(self.frequencies[0]), np.log(self.frequencies[-1]))
        if self._spline is not None:
            return self._spline(lf)
        lx = np.log(self.frequencies)
        flat = self.z.reshape(self.frequencies.size, 4)
        out = np.empty(lf.shape + (4,), dtype=complex)
        for k in range(4):
            out[..., k] = np.interp(lf, lx, flat[:, k].real) + 1j * np.interp(
                lf, lx, flat[:, k].imag
            )
        return out.reshape(lf.shape + (2, 2))


def interpolate_tf(tf: TransferFunction, freq) -> np.ndarray:
    """Functional alias for :meth:`TransferFunction.interpolate`."""
    return tf.interpolate(freq)


def nearest_tf(sites, lat: float, lon: float) -> TransferFunction:
    """Site minimizing great-circle distance to (lat, lon); ties break to
    the lowest site index."""
    sites = list(sites)
    if not sites:
        raise ValueError("no transfer-function sites given")
    d = np.array([great_circle_km(s.site_lat, s.site_lon, lat, lon) for s in sites])
    return sites[int(np.argmin(d))]


@dataclass(frozen=True)
class MagneticSeries:
    """Horizontal magnetic perturbation waveforms, nT, uniform sampling."""

    t0: float
    dt: float
    b_n: np.ndarray
    b_e: np.ndarray

    def __post_init__(self):
        bn = np.asarray(self.b_n, dtype=float)
        be = np.asarray(self.b_e, dtype=float)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if bn.size == 0 or bn.shape != be.shape or bn.ndim != 1:
            raise ValueError("b_n and b_e must be non-empty 1-d arrays of equal length")
        object.__setattr__(self, "b_n", bn)
        object.__setattr__(self, "b_e", be)

    def __len__(self) -> int:
        return self.b_n.size


@dataclass(frozen=True)
class FieldSeries:
    """Horizontal geoelectric field waveforms, V/km, same clock as source."""

    t0: float
    dt: float
    e_n: np.ndarray
    e_e: np.ndarray

    def __len__(self) -> int:
        return self.e_n.size


def compute_geoelectric(
    b: MagneticSeries,
    tf: TransferFunction,
    taper_fraction: float = 0.1,
) -> FieldSeries:
    """Convert a magnetic series to the geoelectric field at a TF site.

    ``taper_fraction`` is the cosine-tapered fraction at EACH end of the
    record (0 disables the taper).  The dc bin is zeroed: the MT transfer
    function is undefined at zero frequency.
    """
    if not 0.0 <= taper_fraction < 0.5:
        raise ValueError("taper_fraction must be in [0, 0.5)")
    n = len(b)
    bn = b.b_n - b.b_n.mean()
    be = b.b_e - b.b_e.mean()
    if taper_fraction > 0.0:
        w = tukey(n, alpha=2.0 * taper_fraction)
        bn = bn * w
        be = be * w

    bn_f = np.fft.rfft(bn)
    be_f = np.fft.rfft(be)
    freqs = np.fft.rfftfreq(n, d=b.dt)

    en_f = np.zeros_like(bn_f)
    ee_f = np.zeros_like(be_f)
    if freqs.size > 1:
        zt = tf.interpolate(freqs[1:])  # (nbins-1, 2, 2)
        # (mV/km)/nT * nT = mV/km; /1000 -> V/km
        en_f[1:] = (zt[:, 0, 0] * bn_f[1:] + zt[:, 0, 1] * be_f[1:]) * 1e-3
        ee_f[1:] = (zt[:, 1, 0] * bn_f[1:] + zt[:, 1, 1] * be_f[1:]) * 1e-3

    e_n = np.fft.irfft(en_f, n)
    e_e = np.fft.irfft(ee_f, n)
    return FieldSeries(t0=b.t0, dt=b.dt, e_n=e_n, e_e=e_e)


@dataclass(frozen=True)
class FieldGrid:
    """Geoelectric field series on a set of geolocated points.

    All points share the clock (t0, dt) and sample count; ``e_n`` and
    ``e_e`` are (npoints, nsamples) arrays in V/km.
    """

    lats: np.ndarray
    lons: np.ndarray
    t0: float
    dt: float
    e_n: np.ndarray
    e_e: np.ndarray

    def __post_init__(self):
        lats = np.asarray(self.lats, dtype=float)
        lons = np.asarray(self.lons, dtype=float)
        en = np.atleast_2d(np.asarray(self.e_n, dtype=float))
        ee = np.atleast_2d(np.asarray(self.e_e, dtype=float))
        if lats.size == 0 or lats.shape != lons.shape:
            raise ValueError("lats/lons must be non-empty and congruent")
        if en.shape != ee.shape or en.shape[0] != lats.size:
            raise ValueError("field arrays must be (npoints, nsamples)")
        for name, arr in (("lats", lats), ("lons", lons), ("e_n", en), ("e_e", ee)):
            object.__setattr__(self, name, arr)

    @property
    def num_points(self) -> int:
        return self.lats.size

    @property
    def num_steps(self) -> int:
        return self.e_n.shape[1]

    def nearest_index(self, lat: float, lon: float) -> int:
        """Index of the grid point nearest (lat, lon); ties break low."""
        d = great_circle_km(self.lats, self.lons, lat, lon)
        return int(np.argmin(d))

    def series_at(self, index: int) -> FieldSeries:
        return FieldSeries(self.t0, self.dt, self.e_n[index], self.e_e[index])


def uniform_field_grid(lats, lons, t0, dt, e_e_of_t, e_n_of_t) -> FieldGrid:
    """Grid whose every point carries the same (E_e(t), E_n(t)) waveforms."""
    lats = np.asarray(lats, dtype=float).ravel()
    lons = np.asarray(lons, dtype=float).ravel()
    ee = np.asarray(e_e_of_t, dtype=float).ravel()
    en = np.asarray(e_n_of_t, dtype=float).ravel()
    return FieldGrid(
        lats=lats,
        lons=lons,
        t0=t0,
        dt=dt,
        e_n=np.tile(en, (lats.size, 1)),
        e_e=np.tile(ee, (lats.size, 1)),
    )


# ---------------------------------------------------------------------------
# File formats.  TF directory: sites.txt index (site_id lat lon filename)
# plus per-site columnar tensor tables.  Series files: "# t0 <sec>" and
# "# dt <sec>" header lines, then one sample row per line.
# ---------------------------------------------------------------------------

_TF_COLUMNS = (
    "frequency_hz re_z_nn im_z_nn re_z_ne im_z_ne re_z_en im_z_en re_z_ee im_z_ee"
)


def write_tf_site(path, tf: TransferFunction) -> None:
    with open(path, "w") as fh:
        fh.write(_TF_COLUMNS + "\n")
        for i, f in enumerate(tf.frequencies):
            zz = tf.z[i]
            row = [f]
            for r in range(2):
                for c in range(2):
                    row.extend([zz[r, c].real, zz[r, c].imag])
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_tf_site(path, site_lat: float, site_lon: float) -> TransferFunction:
    rows = []
    with open(path) as fh:
        header = fh.readline()
        if header.split() != _TF_COLUMNS.split():
            raise ValueError(f"{path}: unexpected TF column header")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rows.append([float(v) for v in line.split()])
    data = np.asarray(rows, dtype=float)
    freqs = data[:, 0]
    z = np.empty((data.shape[0], 2, 2), dtype=complex)
    z[:, 0, 0] = data[:, 1] + 1j * data[:, 2]
    z[:, 0, 1] = data[:, 3] + 1j * data[:, 4]
    z[:, 1, 0] = data[:, 5] + 1j * data[:, 6]
    z[:, 1, 1] = data[:, 7] + 1j * data[:, 8]
    return TransferFunction(site_lat=site_lat, site_lon=site_lon, frequencies=freqs, z=z)


def write_tf_dir(dirpath, sites: list[TransferFunction]) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "sites.txt", "w") as fh:
        fh.write("site_id lat lon filename\n")
        for i, tf in enumerate(sites):
            name = f"site_{i:04d}.txt"
            fh.write(f"{i} {tf.site_lat!r} {tf.site_lon!r} {name}\n")
            write_tf_site(d / name, tf)


def read_tf_dir(dirpath) -> list[TransferFunction]:
    d = Path(dirpath)
    sites = []
    with open(d / "sites.txt") as fh:
        fh.readline()
        for line in fh:
            line = line.strip()
            if not line:
                continue
            _sid, lat, lon, name = line.split()
            sites.append(read_tf_site(d / name, float(lat), float(lon)))
    return sites


def _write_series(path, t0, dt, col_names, cols) -> None:
    with open(path, "w") as fh:
        fh.write(f"# t0 {t0!r}\n# dt {dt!r}\n")
        fh.write(" ".join(col_names) + "\n")
        for row in zip(*cols):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _read_series(path, expected_cols):
    t0 = dt = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, val = line[1:].split(None, 1)
                if key == "t0":
                    t0 = float(val)
                elif key == "dt":
                    dt = float(val)
                continue
            parts = line.split()
            if parts == list(expected_cols):
                continue
            rows.append([float(v) for v in parts])
    if t0 is None or dt is None:
        raise ValueError(f"{path}: missing t0/dt header")
    data = np.asarray(rows, dtype=float)
    return t0, dt, data


def write_magnetic_series(path, b: MagneticSeries) -> None:
    _write_series(path, b.t0, b.dt, ("b_n_nt", "b_e_nt"), (b.b_n, b.b_e))


def read_magnetic_series(path) -> MagneticSeries:
    t0, dt, data = _read_series(path, ("b_n_nt", "b_e_nt"))
    return MagneticSeries(t0=t0, dt=dt, b_n=data[:, 0], b_e=data[:, 1])


def write_field_series(path, e: FieldSeries) -> None:
    _write_series(path, e.t0, e.dt, ("e_n_vkm", "e_e_vkm"), (e.e_n, e.e_e))


def read_field_series(path) -> FieldSeries:
    t0, dt, data = _read_series(path, ("e_n_vkm", "e_e_vkm"))
    return FieldSeries(t0=t0, dt=dt, e_n=data[:, 0], e_e=data[:, 1])


def write_field_grid(dirpath, grid: FieldGrid) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "grid.txt", "w") as fh:
        fh.write("point_id lat lon filename\n")
        for i in range(grid.num_points):
            name = f"field_{i:05d}.txt"
            fh.write(f"{i} {float(grid.lats[i])!r} {float(grid.lons[i])!r} {name}\n")
            write_field_series(d / name, grid.series_at(i))


def read_field_grid(dirpath) -> FieldGrid:
    d = Path(dirpath)
    lats, lons, series = [], [], []
    with open(d / "grid.txt") as fh:
        fh.readline()
        for line in fh:
            line = line.strip()
            if not line:
                continue
            _pid, lat, lon, name = line.split()
            lats.append(float(lat))
            lons.append(float(lon))
            series.append(read_field_series(d / name))
    if not series:
        raise ValueError(f"{dirpath}: empty field grid")
    t0, dt = series[0].t0, series[0].dt
    for s in series:
        if s.t0 != t0 or s.dt != dt or len(s) != len(series[0]):
            raise ValueError(f"{dirpath}: field series disagree on clock or length")
    return FieldGrid(
        lats=np.array(lats),
        lons=np.array(lons),
        t0=t0,
        dt=dt,
        e_n=np.vstack([s.e_n for s in series]),
        e_e=np.vstack([s.e_e for s in series]),
    )


def grid_from_tf_sites(
    sites: list[TransferFunction], b: MagneticSeries, taper_fraction: float = 0.1
) -> FieldGrid:
    """Field grid with one point per TF site, driven by a shared B series."""
    if not sites:
        raise ValueError("no transfer-function sites given")
    fields = [compute_geoelectric(b, tf, taper_fraction) for tf in sites]
    return FieldGrid(
        lats=np.array([s.site_lat for s in sites]),
        lons=np.array([s.site_lon for s in sites]),
        t0=b.t0,
        dt=b.dt,
        e_n=np.vstack([f.e_n for f in fields]),
        e_e=np.vstack([f.e_e for f in fields]),
    )
