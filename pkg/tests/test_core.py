"""Domain type invariants: grids, geometry, sinograms, spectra, material tables."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsct import core
from gsct.errors import ArgumentError


class TestImageGrid:
    def test_centered_origin_formula(self):
        # center of the pixel lattice must land on the isocenter
        ox, oy = core.ImageGrid.centered_origin(5, 3, 2.0)
        assert ox == -4.0  # -(5-1)/2 * 2
        assert oy == -2.0  # -(3-1)/2 * 2

    def test_pixel_centers_oracle(self):
        g = core.ImageGrid.from_array(np.zeros((2, 3), np.float32), spacing=0.5, origin=(1.0, -2.0))
        X, Y = g.pixel_centers()
        assert X.shape == (2, 3) and Y.shape == (2, 3)
        np.testing.assert_allclose(X[0], [1.0, 1.5, 2.0])
        np.testing.assert_allclose(Y[:, 0], [-2.0, -1.5])
        # x varies along columns only, y along rows only
        assert np.array_equal(X[0], X[1])
        assert np.array_equal(Y[:, 0], Y[:, 1])

    def test_default_origin_centers_grid(self):
        g = core.ImageGrid.zeros(7, 7, 0.3)
        X, Y = g.pixel_centers()
        assert abs(X.mean()) < 1e-12 and abs(Y.mean()) < 1e-12

    def test_values_cast_and_frozen(self):
        g = core.ImageGrid.from_array(np.arange(6, dtype=np.float64).reshape(2, 3), 1.0)
        assert g.values.dtype == np.float32
        assert not g.values.flags.writeable
        with pytest.raises(ValueError):
            g.values[0, 0] = 1.0

    def test_flat_values_reshaped(self):
        g = core.ImageGrid(width=3, height=2, spacing=1.0, origin=(0.0, 0.0), values=np.arange(6, dtype=np.float32))
        assert g.values.shape == (2, 3)
        assert g.values[1, 0] == 3.0

    def test_size_mismatch_rejected(self):
        with pytest.raises(ArgumentError):
            core.ImageGrid(width=3, height=2, spacing=1.0, origin=(0.0, 0.0), values=np.zeros(5, np.float32))

    def test_non_finite_rejected(self):
        bad = np.zeros((2, 2), np.float32)
        bad[0, 0] = np.nan
        with pytest.raises(ArgumentError):
            core.ImageGrid.from_array(bad, 1.0)

    @pytest.mark.parametrize("w,h,s", [(0, 2, 1.0), (2, 0, 1.0), (2, 2, 0.0), (2, 2, -1.0)])
    def test_bad_dims_rejected(self, w, h, s):
        with pytest.raises(ArgumentError):
            core.ImageGrid.zeros(w, h, s)

    def test_with_values_keeps_frame(self):
        g = core.ImageGrid.zeros(4, 3, 0.7, origin=(1.0, 2.0))
        h = g.with_values(np.ones((3, 4), np.float32))
        assert (h.width, h.height, h.spacing, h.origin) == (4, 3, 0.7, (1.0, 2.0))
        assert h.values[0, 0] == 1.0
        assert g.values[0, 0] == 0.0

    def test_equality_semantics(self):
        a = core.ImageGrid.from_array(np.ones((2, 2), np.float32), 1.0)
        b = core.ImageGrid.from_array(np.ones((2, 2), np.float32), 1.0)
        c = b.with_values(2 * np.ones((2, 2), np.float32))
        assert a == b
        assert a != c
        assert a != core.ImageGrid.from_array(np.ones((2, 2), np.float32), 2.0)

    @given(
        w=st.integers(1, 8),
        h=st.integers(1, 8),
        spacing=st.floats(0.01, 10.0, allow_nan=False),
    )
    @settings(max_examples=40, deadline=None)
    def test_from_array_round_trip(self, w, h, spacing):
        vals = np.arange(w * h, dtype=np.float32).reshape(h, w)
        g = core.ImageGrid.from_array(vals, spacing)
        assert g.width == w and g.height == h
        assert np.array_equal(g.values, vals)
        assert g.as_float64().dtype == np.float64


class TestFanBeamGeometry:
    def test_full_scan_angles_oracle(self):
        geo = core.FanBeamGeometry.full_scan(300.0, 500.0, 16, 1.0, num_angles=8)
        np.testing.assert_allclose(geo.angles, 2 * math.pi * np.arange(8) / 8)
        assert geo.num_angles == 8

    @given(n=st.integers(1, 500))
    @settings(max_examples=50, deadline=None)
    def test_full_scan_angle_range(self, n):
        geo = core.FanBeamGeometry.full_scan(300.0, 500.0, 4, 1.0, num_angles=n)
        ang = geo.angles
        assert ang[0] == 0.0
        assert ang[-1] < 2 * math.pi
        if n > 1:
            assert np.all(np.diff(ang) > 0)

    def test_distance_ordering_enforced(self):
        with pytest.raises(ArgumentError):
            core.FanBeamGeometry.full_scan(500.0, 300.0, 4, 1.0, num_angles=4)
        with pytest.raises(ArgumentError):
            core.FanBeamGeometry.full_scan(-1.0, 500.0, 4, 1.0, num_angles=4)

    def test_angle_validation(self):
        with pytest.raises(ArgumentError):
            core.FanBeamGeometry(300.0, 500.0, 4, 1.0, np.array([0.0, 0.0]))
        with pytest.raises(ArgumentError):
            core.FanBeamGeometry(300.0, 500.0, 4, 1.0, np.array([0.0, 2 * math.pi]))
        with pytest.raises(ArgumentError):
            core.FanBeamGeometry(300.0, 500.0, 4, 1.0, np.array([-0.1, 1.0]))

    def test_matches(self):
        a = core.FanBeamGeometry.full_scan(300.0, 500.0, 8, 0.5, num_angles=4)
        b = core.FanBeamGeometry.full_scan(300.0, 500.0, 8, 0.5, num_angles=4)
        c = core.FanBeamGeometry.full_scan(300.0, 500.0, 8, 0.5, num_angles=5)
        assert a.matches(b) and a == b
        assert not a.matches(c) and a != c


class TestSinogram:
    def geo(self):
        return core.FanBeamGeometry.full_scan(300.0, 500.0, 3, 1.0, num_angles=2)

    def test_shape_and_kind(self):
        s = core.Sinogram(self.geo(), core.SinogramKind.LINE_INTEGRAL, np.zeros((2, 3), np.float32))
        assert s.values.shape == (2, 3)
        assert s.kind is core.SinogramKind.LINE_INTEGRAL

    def test_kind_coerced_from_int(self):
        s = core.Sinogram(self.geo(), 1, np.ones((2, 3), np.float32))
        assert s.kind is core.SinogramKind.INTENSITY

    def test_flat_values_reshaped(self):
        s = core.Sinogram(self.geo(), 0, np.arange(6, dtype=np.float32))
        assert s.values.shape == (2, 3)
        assert s.values[1, 2] == 5.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ArgumentError):
            core.Sinogram(self.geo(), 0, np.zeros((3, 3), np.float32))

    def test_intensity_must_be_non_negative(self):
        vals = -np.ones((2, 3), np.float32)
        core.Sinogram(self.geo(), core.SinogramKind.LINE_INTEGRAL, vals)  # allowed
        with pytest.raises(ArgumentError):
            core.Sinogram(self.geo(), core.SinogramKind.INTENSITY, vals)

    def test_with_values_kind_override(self):
        s = core.Sinogram(self.geo(), 0, np.zeros((2, 3), np.float32))
        t = s.with_values(np.ones((2, 3), np.float32), kind=core.SinogramKind.INTENSITY)
        assert t.kind is core.SinogramKind.INTENSITY
        assert s.kind is core.SinogramKind.LINE_INTEGRAL


class TestSpectrum:
    def test_summary_oracles(self):
        sp = core.Spectrum(energies=[10.0, 20.0, 40.0], weights=[1.0, 3.0, 0.0])
        assert sp.num_bins == 3
        assert sp.total_fluence() == 4.0
        # mean = (10*1 + 20*3 + 40*0) / 4
        assert sp.mean_energy() == pytest.approx(17.5)

    def test_validation(self):
        with pytest.raises(ArgumentError):
            core.Spectrum(energies=[10.0, 10.0], weights=[1.0, 1.0])
        with pytest.raises(ArgumentError):
            core.Spectrum(energies=[10.0, 20.0], weights=[1.0, -1.0])
        with pytest.raises(ArgumentError):
            core.Spectrum(energies=[10.0, 20.0], weights=[0.0, 0.0])
        with pytest.raises(ArgumentError):
            core.Spectrum(energies=[10.0, 20.0], weights=[1.0])

    @given(
        n=st.integers(1, 16),
        scale=st.floats(1e-3, 1e6, allow_nan=False),
    )
    @settings(max_examples=40, deadline=None)
    def test_mean_energy_bounded_by_support(self, n, scale):
        gen = np.random.default_rng(n)
        e = np.cumsum(gen.uniform(1.0, 5.0, n))
        w = scale * gen.uniform(0.1, 1.0, n)
        sp = core.Spectrum(energies=e, weights=w)
        assert e[0] <= sp.mean_energy() <= e[-1]
        assert sp.total_fluence() == pytest.approx(w.sum(), rel=1e-12)


class TestMaterialTable:
    def small(self):
        return core.MaterialTable(
            names=("air", "water", "bone"),
            energies=[20.0, 60.0, 100.0],
            curves=[[0.0, 0.0, 0.0], [0.03, 0.02, 0.017], [0.1, 0.05, 0.03]],
        )

    def test_lookup(self):
        t = self.small()
        assert t.num_materials == 3
        assert t.index_of("bone") == 2
        with pytest.raises(ArgumentError):
            t.index_of("steel")

    def test_air_must_be_minimal(self):
        with pytest.raises(ArgumentError):
            core.MaterialTable(
                names=("air", "water"),
                energies=[20.0, 60.0],
                curves=[[0.01, 0.0], [0.0, 0.02]],  # air above water at 20 keV
            )

    def test_duplicate_names_rejected(self):
        with pytest.raises(ArgumentError):
            core.MaterialTable(
                names=("air", "air"),
                energies=[20.0],
                curves=[[0.0], [0.1]],
            )

    def test_curve_shape_checked(self):
        with pytest.raises(ArgumentError):
            core.MaterialTable(names=("air",), energies=[20.0, 60.0], curves=[[0.0]])

    def test_equality(self):
        assert self.small() == self.small()
        other = core.MaterialTable(
            names=("air", "water", "bone"),
            energies=[20.0, 60.0, 100.0],
            curves=[[0.0, 0.0, 0.0], [0.03, 0.02, 0.017], [0.1, 0.05, 0.031]],
        )
        assert self.small() != other
