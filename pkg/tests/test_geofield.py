"""Transfer-function interpolation and the B -> E spectral pipeline."""

import numpy as np
import pytest

from gmdcascade.geofield import (
    FieldGrid,
    MagneticSeries,
    TransferFunction,
    compute_geoelectric,
    grid_from_tf_sites,
    interpolate_tf,
    nearest_tf,
    read_field_grid,
    read_magnetic_series,
    read_tf_dir,
    write_field_grid,
    write_magnetic_series,
    write_tf_dir,
)


def natural_cubic_spline(xs, ys, xq):
    """Independent natural-cubic-spline oracle (tridiagonal solve)."""
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    n = xs.size
    h = np.diff(xs)
    # second derivatives from the standard tridiagonal system
    A = np.zeros((n, n))
    r = np.zeros(n)
    A[0, 0] = A[-1, -1] = 1.0
    for i in range(1, n - 1):
        A[i, i - 1] = h[i - 1]
        A[i, i] = 2.0 * (h[i - 1] + h[i])
        A[i, i + 1] = h[i]
        r[i] = 3.0 * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1])
    cs = np.linalg.solve(A, r)
    out = np.empty_like(np.atleast_1d(np.asarray(xq, float)))
    for k, x in enumerate(np.atleast_1d(xq)):
        i = min(max(np.searchsorted(xs, x) - 1, 0), n - 2)
        dx = x - xs[i]
        b = (ys[i + 1] - ys[i]) / h[i] - h[i] * (2 * cs[i] + cs[i + 1]) / 3.0
        d = (cs[i + 1] - cs[i]) / (3.0 * h[i])
        out[k] = ys[i] + b * dx + cs[i] * dx**2 + d * dx**3
    return out


def make_tf(freqs, z_of_f, lat=38.0, lon=-78.0):
    freqs = np.asarray(freqs, float)
    z = np.array([z_of_f(f) for f in freqs], dtype=complex)
    return TransferFunction(lat, lon, freqs, z)


def flat_tf(z_matrix, lat=38.0, lon=-78.0):
    return make_tf([1e-4, 1e-3, 1e-2, 1e-1, 1.0], lambda f: z_matrix, lat, lon)


class TestInterpolation:
    def test_passes_through_knots(self):
        rng = np.random.default_rng(11)
        freqs = np.logspace(-4, 0, 9)
        z = rng.normal(size=(9, 2, 2)) + 1j * rng.normal(size=(9, 2, 2))
        tf = TransferFunction(38.0, -78.0, freqs, z)
        for i, f in enumerate(freqs):
            np.testing.assert_allclose(tf.interpolate(f), z[i], rtol=0, atol=1e-12)

    def test_matches_independent_spline_oracle(self):
        rng = np.random.default_rng(5)
        freqs = np.logspace(-4, 0, 9)
        z = rng.normal(size=(9, 2, 2)) + 1j * rng.normal(size=(9, 2, 2))
        tf = TransferFunction(38.0, -78.0, freqs, z)
        # geometric midpoints of adjacent knots
        mids = np.sqrt(freqs[:-1] * freqs[1:])
        got = tf.interpolate(mids)
        lx = np.log(freqs)
        for a in range(2):
            for b in range(2):
                want_re = natural_cubic_spline(lx, z[:, a, b].real, np.log(mids))
                want_im = natural_cubic_spline(lx, z[:, a, b].imag, np.log(mids))
                np.testing.assert_allclose(got[:, a, b].real, want_re, rtol=1e-10)
                np.testing.assert_allclose(got[:, a, b].imag, want_im, rtol=1e-10)

    def test_two_knot_fallback_is_loglinear(self):
        z0 = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=complex)
        z1 = np.array([[3.0, 0.0], [0.0, 5.0]], dtype=complex)
        tf = TransferFunction(38.0, -78.0, np.array([1e-3, 1e-1]), np.array([z0, z1]))
        mid = np.sqrt(1e-3 * 1e-1)  # log-midpoint
        got = tf.interpolate(mid)
        np.testing.assert_allclose(got[0, 0], 2.0, rtol=1e-12)
        np.testing.assert_allclose(got[1, 1], 3.0, rtol=1e-12)

    def test_clamping_outside_range(self):
        tf = flat_tf(np.array([[1 + 1j, 0], [0, 2.0]]))
        lo = tf.interpolate(1e-7)
        hi = tf.interpolate(10.0)
        np.testing.assert_allclose(lo, tf.z[0], atol=1e-12)
        np.testing.assert_allclose(hi, tf.z[-1], atol=1e-12)

    def test_rejects_nonpositive_frequency(self):
        tf = flat_tf(np.eye(2))
        with pytest.raises(ValueError):
            tf.interpolate(0.0)

    def test_rejects_bad_construction(self):
        with pytest.raises(ValueError):
            TransferFunction(0, 0, np.array([1e-3]), np.zeros((1, 2, 2)))
        with pytest.raises(ValueError):
            TransferFunction(0, 0, np.array([1e-3, 1e-3]), np.zeros((2, 2, 2)))


class TestPipeline:
    def test_single_tone_flat_gain(self):
        # Z_ne = 1 (mV/km)/nT, everything else zero: a 100 nT east tone
        # becomes a 0.1 V/km north tone
        n, dt = 1024, 10.0
        t = np.arange(n) * dt
        k = 24
        f = k / (n * dt)
        b = MagneticSeries(0.0, dt, b_n=np.zeros(n), b_e=100.0 * np.sin(2 * np.pi * f * t))
        tf = flat_tf(np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex))
        e = compute_geoelectric(b, tf)
        lo, hi = int(0.1 * n), int(0.9 * n)
        want = 0.1 * np.sin(2 * np.pi * f * t)
        err = np.abs(e.e_n[lo:hi] - want[lo:hi]).max()
        assert err <= 0.02 * 0.1
        assert np.abs(e.e_e).max() <= 1e-12

    def test_zero_series_gives_zero_field(self):
        b = MagneticSeries(0.0, 60.0, np.zeros(128), np.zeros(128))
        tf = flat_tf(np.array([[1.0, 0.5], [0.25, 2.0]], dtype=complex))
        e = compute_geoelectric(b, tf)
        assert np.abs(e.e_n).max() == 0.0
        assert np.abs(e.e_e).max() == 0.0

    def test_two_tone_matches_direct_dft_oracle(self):
        rng = np.random.default_rng(17)
        n, dt = 256, 30.0
        t = np.arange(n) * dt
        b_n = 40.0 * np.sin(2 * np.pi * 5 / (n * dt) * t + 0.3)
        b_e = 25.0 * np.cos(2 * np.pi * 19 / (n * dt) * t)
        b = MagneticSeries(0.0, dt, b_n, b_e)

        freqs = np.logspace(-5, 0, 8)
        z = rng.normal(size=(8, 2, 2)) + 1j * rng.normal(size=(8, 2, 2))
        tf = TransferFunction(38.0, -78.0, freqs, z)
        got = compute_geoelectric(b, tf, taper_fraction=0.1)

        # oracle: demean + taper identically, then direct O(n^2) DFT,
        # per-bin multiply, conjugate-symmetric direct inversion
        from scipy.signal.windows import tukey

        w = tukey(n, alpha=0.2)
        xn = (b_n - b_n.mean()) * w
        xe = (b_e - b_e.mean()) * w
        karr = np.arange(n)
        e_n = np.zeros(n)
        e_e = np.zeros(n)
        for kbin in range(1, n // 2 + 1):
            ker = np.exp(-2j * np.pi * kbin * karr / n)
            bn_f = np.sum(xn * ker)
            be_f = np.sum(xe * ker)
            zz = tf.interpolate(kbin / (n * dt))
            en_f = (zz[0, 0] * bn_f + zz[0, 1] * be_f) * 1e-3
            ee_f = (zz[1, 0] * bn_f + zz[1, 1] * be_f) * 1e-3
            inv = np.exp(2j * np.pi * kbin * karr / n)
            weight = 1.0 if (kbin == n // 2 and n % 2 == 0) else 2.0
            e_n += weight * np.real(en_f * inv) / n
            e_e += weight * np.real(ee_f * inv) / n
        np.testing.assert_allclose(got.e_n, e_n, atol=1e-9)
        np.testing.assert_allclose(got.e_e, e_e, atol=1e-9)

    def test_linearity(self):
        rng = np.random.default_rng(23)
        n, dt = 128, 60.0
        tf = make_tf(
            np.logspace(-4, 0, 6),
            lambda f: np.array([[1.0 / np.sqrt(f), 0.2], [0.1j, 2.0 + 1j]]),
        )
        b1n, b1e = rng.normal(size=n), rng.normal(size=n)
        b2n, b2e = rng.normal(size=n), rng.normal(size=n)
        a, c = 2.5, -1.25
        e1 = compute_geoelectric(MagneticSeries(0, dt, b1n, b1e), tf)
        e2 = compute_geoelectric(MagneticSeries(0, dt, b2n, b2e), tf)
        e12 = compute_geoelectric(
            MagneticSeries(0, dt, a * b1n + c * b2n, a * b1e + c * b2e), tf
        )
        np.testing.assert_allclose(e12.e_n, a * e1.e_n + c * e2.e_n, atol=1e-12)
        np.testing.assert_allclose(e12.e_e, a * e1.e_e + c * e2.e_e, atol=1e-12)

    def test_parseval_with_unit_phase_tf_and_no_taper(self):
        # |Z| = 1 everywhere (pure phase), no taper, zero-mean input:
        # output energy equals input energy after the mV -> V scaling
        rng = np.random.default_rng(29)
        n, dt = 256, 20.0
        phase = lambda f: np.exp(1j * (0.3 + np.log10(f)))
        tf = make_tf(
            np.logspace(-5, 1, 7),
            lambda f: np.array([[phase(f), 0.0], [0.0, phase(f)]]),
        )
        b_n = rng.normal(size=n)
        b_n -= b_n.mean()
        b_e = rng.normal(size=n)
        b_e -= b_e.mean()
        e = compute_geoelectric(MagneticSeries(0, dt, b_n, b_e), tf, taper_fraction=0.0)
        for src, out in ((b_n, e.e_n), (b_e, e.e_e)):
            assert np.sum(out**2) == pytest.approx(1e-6 * np.sum(src**2), rel=1e-9)

    def test_output_is_real_by_construction(self):
        rng = np.random.default_rng(31)
        n = 200
        tf = flat_tf(np.array([[1 + 2j, 0.5j], [0.1, 1 - 1j]]))
        b = MagneticSeries(0, 5.0, rng.normal(size=n), rng.normal(size=n))
        e = compute_geoelectric(b, tf)
        assert e.e_n.dtype.kind == "f"
        assert np.isfinite(e.e_n).all()


class TestNearestSite:
    def test_single_site(self):
        tf = flat_tf(np.eye(2), lat=40.0, lon=-100.0)
        assert nearest_tf([tf], 0.0, 0.0) is tf

    def test_coincident_query(self):
        sites = [flat_tf(np.eye(2), lat=35.0, lon=-90.0), flat_tf(np.eye(2), lat=45.0, lon=-70.0)]
        assert nearest_tf(sites, 45.0, -70.0) is sites[1]

    def test_equidistant_tie_breaks_low(self):
        sites = [flat_tf(np.eye(2), lat=0.0, lon=-1.0), flat_tf(np.eye(2), lat=0.0, lon=1.0)]
        assert nearest_tf(sites, 0.0, 0.0) is sites[0]

    def test_empty_collection(self):
        with pytest.raises(ValueError):
            nearest_tf([], 0.0, 0.0)


class TestFiles:
    def test_tf_dir_roundtrip(self, tmp_path):
        rng = np.random.default_rng(7)
        sites = [
            TransferFunction(
                float(rng.uniform(30, 45)),
                float(rng.uniform(-90, -70)),
                np.logspace(-4, 0, 6),
                rng.normal(size=(6, 2, 2)) + 1j * rng.normal(size=(6, 2, 2)),
            )
            for _ in range(3)
        ]
        write_tf_dir(tmp_path / "tf", sites)
        back = read_tf_dir(tmp_path / "tf")
        assert len(back) == 3
        for a, b in zip(sites, back):
            assert a.site_lat == b.site_lat and a.site_lon == b.site_lon
            np.testing.assert_array_equal(a.frequencies, b.frequencies)
            np.testing.assert_array_equal(a.z, b.z)

    def test_magnetic_series_roundtrip(self, tmp_path):
        b = MagneticSeries(100.0, 60.0, np.array([1.0, -2.0, 3.5]), np.array([0.1, 0.2, 0.3]))
        write_magnetic_series(tmp_path / "b.txt", b)
        back = read_magnetic_series(tmp_path / "b.txt")
        assert back.t0 == b.t0 and back.dt == b.dt
        np.testing.assert_array_equal(back.b_n, b.b_n)
        np.testing.assert_array_equal(back.b_e, b.b_e)

    def test_field_grid_roundtrip(self, tmp_path):
        grid = FieldGrid(
            lats=np.array([36.0, 38.0]),
            lons=np.array([-79.0, -77.0]),
            t0=0.0,
            dt=300.0,
            e_n=np.array([[0.1, 0.2], [0.3, 0.4]]),
            e_e=np.array([[1.0, 2.0], [3.0, 4.0]]),
        )
        write_field_grid(tmp_path / "grid", grid)
        back = read_field_grid(tmp_path / "grid")
        np.testing.assert_array_equal(back.lats, grid.lats)
        np.testing.assert_array_equal(back.e_e, grid.e_e)

    def test_grid_from_tf_sites(self):
        rng = np.random.default_rng(13)
        sites = [
            flat_tf(np.eye(2), lat=36.0, lon=-80.0),
            flat_tf(np.eye(2), lat=39.0, lon=-76.0),
        ]
        b = MagneticSeries(0, 60.0, rng.normal(size=64), rng.normal(size=64))
        grid = grid_from_tf_sites(sites, b)
        assert grid.num_points == 2
        assert grid.num_steps == 64
