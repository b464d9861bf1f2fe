import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vlq import dispersion as dp
from vlq.phasespace import PhaseGrid, VelocityFn

# Landau roots of the unit Maxwellian (v_th = 1, omega_p = 1), frozen from
# a 40-digit complex Newton iteration on the Faddeeva form of the
# dielectric function: (k lambda_D, omega, gamma)
LANDAU_ROOTS = [
    (0.50, 1.4156618886045364, -0.15335946690960483),
    (0.35, 1.2209535061616788, -0.034318050858299781),
    (0.20, 1.0639843406877026, -5.5107414768628414e-5),
    (0.15, 1.0348298586054257, -8.553101307336596e-9),
    (0.12, 1.0220200595065153, -6.4236019496251194e-14),
    (0.10, 1.0151975255441010, -2.6120778236282868e-20),
]

# growing root of 0.9 Maxwell(0, 1) + 0.1 Maxwell(4, 0.5) at k lambda_D
# = 0.3 (core units), same oracle; phase velocity omega/k = 3.06, inside
# the positive-slope window of the bump
BUMP_ROOT = complex(0.91930401822397915, 0.17833952464206171)

# Penrose principal values, frozen from an integrated-by-parts tanh-sinh
# oracle; the naive (f - f*)/(v - v*)^2 quadrature loses everything to
# cancellation near v* and must not be used as a reference
TWO_STREAM_P = 0.32634073301443306
BUMP_MIN_V = 2.7883490040887972
BUMP_MIN_P = 0.29620770997620428

GRID = PhaseGrid(nx=4, nv=1025, vmax=9.0)
MAXW = dp.maxwellian_profile(GRID)
BUMP = dp.bump_on_tail_profile(GRID, 0.1, 4.0, 0.5)
BUMP_GRIDDED = dp.gridded_profile(BUMP.f)


def scaled(x):
    """Map a unit-Maxwellian root at k lambda_D = x onto integer k = 1:
    omega_p = 1/x leaves v_th = 1, so k lambda_D = x and the root scales
    as z = omega_p * z_ref."""
    return 1.0 / x


def two_stream(analytic):
    comps = ((0.5, -2.0, 0.5), (0.5, 2.0, 0.5))
    vals = np.zeros(GRID.nv)
    for n, u, a in comps:
        vals += n * np.exp(-((GRID.v - u) ** 2) / (2 * a * a)) / (math.sqrt(2 * math.pi) * a)
    vf = VelocityFn(grid=GRID, values=vals, time=0.0)
    return dp.VelocityProfile(f=vf, components=comps if analytic else None)


class TestVelocityProfile:
    def test_truncated_grid_fails_mass_check(self):
        narrow = PhaseGrid(nx=4, nv=257, vmax=2.0)
        vals = np.exp(-narrow.v**2 / 2) / math.sqrt(2 * math.pi)
        vf = VelocityFn(grid=narrow, values=vals, time=0.0)
        with pytest.raises(ValueError, match="widen the velocity grid"):
            dp.gridded_profile(vf)

    def test_negative_values_rejected(self):
        vals = MAXW.f.values.copy()
        vals[GRID.nv // 2] = -1e-3
        vf = VelocityFn(grid=GRID, values=vals, time=0.0)
        with pytest.raises(ValueError, match="nonnegative"):
            dp.gridded_profile(vf)

    def test_bad_component_width_rejected(self):
        with pytest.raises(ValueError, match="positive widths"):
            dp.VelocityProfile(f=MAXW.f, components=((1.0, 0.0, -1.0),))

    def test_bump_density_range(self):
        with pytest.raises(ValueError, match="bump density"):
            dp.bump_on_tail_profile(GRID, 1.2, 4.0, 0.5)

    def test_mass_and_thermal_velocity(self):
        assert MAXW.mass == pytest.approx(1.0, abs=1e-10)
        assert MAXW.v_th == pytest.approx(1.0, rel=1e-9)
        wide = dp.maxwellian_profile(PhaseGrid(nx=4, nv=2049, vmax=20.0), v_th=2.0)
        assert wide.v_th == pytest.approx(2.0, rel=1e-9)

    def test_mixture_second_moment(self):
        # 0.9 * 1 + 0.1 * (4^2 + 0.5^2) = 2.525
        assert BUMP.v_th == pytest.approx(math.sqrt(2.525), rel=1e-9)

    def test_tags(self):
        assert MAXW.tag == "maxwellian"
        assert BUMP.tag == "bump_on_tail"
        assert BUMP_GRIDDED.tag is None and BUMP_GRIDDED.components is None

    def test_value_beyond_grid(self):
        v = np.array([GRID.vmax + 3.0])
        assert BUMP_GRIDDED.value(v)[0] == 0.0
        assert BUMP.value(v)[0] > 0.0

    def test_analytic_matches_gridded_values(self):
        v = np.linspace(-8.0, 8.0, 41)
        np.testing.assert_allclose(
            BUMP.value(v), BUMP_GRIDDED.value(v), rtol=0, atol=1e-9
        )


class TestDispersionValue:
    def test_far_field_approaches_unity(self):
        for prof, k, wp in ((MAXW, 1, 1.0), (MAXW, 2, 1.0), (BUMP, 3, 10.0)):
            val = dp.dispersion_value(prof, k, 50j * wp, omega_p=wp)
            assert abs(val - 1.0) < 1e-3

    @settings(max_examples=25, deadline=None)
    @given(
        k=st.integers(1, 4),
        re=st.floats(-3.0, 3.0),
        im=st.floats(0.05, 2.0),
        lower=st.booleans(),
    )
    def test_conjugate_symmetry(self, k, re, im, lower):
        z = complex(re, -im if lower else im)
        lhs = dp.dispersion_value(BUMP, -k, -z.conjugate())
        rhs = dp.dispersion_value(BUMP, k, z).conjugate()
        assert abs(lhs - rhs) < 1e-10

    def test_vanishes_at_frozen_landau_root(self):
        x, w, g = LANDAU_ROOTS[0]
        wp = scaled(x)
        assert abs(dp.dispersion_value(MAXW, 1, wp * complex(w, g), omega_p=wp)) < 1e-8

    def test_vanishes_at_frozen_bump_root(self):
        assert abs(dp.dispersion_value(BUMP, 3, 10.0 * BUMP_ROOT, omega_p=10.0)) < 1e-8

    def test_wavenumber_validation(self):
        with pytest.raises(ValueError, match="nonzero integer"):
            dp.dispersion_value(MAXW, 0, 1.0 + 0.5j)
        with pytest.raises(ValueError, match="nonzero integer"):
            dp.dispersion_value(MAXW, 0.5, 1.0 + 0.5j)

    def test_gridded_axis_floor(self):
        with pytest.raises(dp.DispersionError, match="ill-posed"):
            dp.dispersion_value(BUMP_GRIDDED, 3, complex(9.0, 0.5e-4 * 10), omega_p=10.0)
        val = dp.dispersion_value(BUMP_GRIDDED, 3, complex(9.0, 2e-4 * 10), omega_p=10.0)
        assert np.isfinite([val.real, val.imag]).all()

    def test_gridded_matches_analytic_off_axis(self):
        for z in (complex(9.0, 0.8), complex(11.0, 1.5), complex(7.5, 2.5)):
            va = dp.dispersion_value(BUMP, 3, z, omega_p=10.0)
            vg = dp.dispersion_value(BUMP_GRIDDED, 3, z, omega_p=10.0)
            assert abs(va - vg) < 1e-5 * abs(va)

    def test_analytic_in_z(self):
        # Cauchy-Riemann: d/d(Re z) == d/d(Im z) / i for both evaluation
        # routes; the gridded route holds only because its quadrature
        # breakpoint is pinned to the fixed velocity grid
        h = 1e-6
        for prof, k, wp, pts in (
            (MAXW, 1, 1.0, (complex(1.2, 0.3), complex(0.9, -0.2), complex(2.0, 0.8))),
            (BUMP_GRIDDED, 3, 10.0, (complex(9.5, 1.0), complex(12.0, 2.2))),
        ):
            for z in pts:
                dx = (dp.dispersion_value(prof, k, z + h, omega_p=wp)
                      - dp.dispersion_value(prof, k, z - h, omega_p=wp)) / (2 * h)
                dy = (dp.dispersion_value(prof, k, z + 1j * h, omega_p=wp)
                      - dp.dispersion_value(prof, k, z - 1j * h, omega_p=wp)) / (2j * h)
                assert abs(dx - dy) < 1e-6


class TestBohmGross:
    def test_long_wavelength_limit(self):
        assert dp.bohm_gross(0, 1.0) == 1.0
        assert dp.bohm_gross(0, 1.0, omega_p=3.0) == 3.0

    def test_reference_points(self):
        assert dp.bohm_gross(1, 0.1) == pytest.approx(math.sqrt(1.03), rel=1e-14)
        assert dp.bohm_gross(1, 1.0 / math.sqrt(3.0)) == pytest.approx(
            math.sqrt(2.0), rel=1e-14
        )

    def test_within_one_percent_of_true_root(self):
        for x, w, _ in LANDAU_ROOTS:
            if x > 0.2:
                continue
            assert abs(dp.bohm_gross(1, x) / w - 1.0) < 0.01


class TestQlGrowthRate:
    def test_zero_at_symmetric_point(self):
        assert dp.ql_growth_rate(MAXW, 1, 0.0) == 0.0

    def test_damping_on_maxwellian_flank(self):
        assert dp.ql_growth_rate(MAXW, 1, 1.06) < 0.0

    def test_growth_in_bump_window(self):
        assert dp.ql_growth_rate(BUMP, 1, 3.5) > 0.0

    def test_gridded_matches_analytic_derivative(self):
        fine = PhaseGrid(nx=4, nv=32769, vmax=9.0)
        prof = dp.bump_on_tail_profile(fine, 0.1, 4.0, 0.5)
        grid_prof = dp.gridded_profile(prof.f)
        for w in (3.2, 3.5, 3.8, 1.1, 2.0):
            qa = dp.ql_growth_rate(prof, 1, w)
            qg = dp.ql_growth_rate(grid_prof, 1, w)
            assert abs(qa - qg) < 1e-6

    def test_resonance_outside_grid(self):
        with pytest.raises(dp.DispersionError, match="outside"):
            dp.ql_growth_rate(BUMP_GRIDDED, 1, 12.0)

    def test_magnitude_tracks_weakly_damped_root(self):
        # the resonant estimate is asymptotic in k lambda_D, not in
        # gamma/omega: ratios run 1.07 at 0.15 up to 1.20 at 0.22 and
        # leave the 20% band near k lambda_D = 0.25
        for x in (0.15, 0.18, 0.20, 0.22):
            wp = scaled(x)
            root = dp.solve_root(MAXW, 1, omega_p=wp)
            q = dp.ql_growth_rate(MAXW, 1, root.omega, omega_p=wp)
            assert q < 0.0
            assert 0.8 < q / root.gamma < 1.2

    def test_sign_matches_growing_root(self):
        root = dp.solve_root(BUMP, 3, omega_p=10.0, initial=10.0 * BUMP_ROOT * 1.01)
        q = dp.ql_growth_rate(BUMP, 3, root.omega, omega_p=10.0)
        assert q > 0.0 and root.gamma > 0.0


class TestSolveRoot:
    def test_landau_root_table(self):
        for x, w, g in LANDAU_ROOTS:
            wp = scaled(x)
            root = dp.solve_root(MAXW, 1, omega_p=wp)
            assert root.omega / wp == pytest.approx(w, rel=1e-9)
            assert root.gamma / wp == pytest.approx(g, rel=1e-8)
            assert root.gamma < 0.0
            assert root.residual < 1e-10

    def test_exponentially_small_damping_resolved(self):
        # gamma ~ 1e-20 sits twenty decades below the Newton residual
        # floor; only the on-axis polish step can report it
        root = dp.solve_root(MAXW, 1, omega_p=10.0)
        assert root.gamma / 10.0 == pytest.approx(-2.6120778236282868e-20, rel=1e-6)

    def test_bohm_gross_agreement_at_long_wavelength(self):
        root = dp.solve_root(MAXW, 1, omega_p=10.0)
        assert abs(root.omega / dp.bohm_gross(1, 1.0, omega_p=10.0) - 1.0) < 0.005

    def test_root_parity(self):
        plus = dp.solve_root(MAXW, 1, omega_p=2.0)
        minus = dp.solve_root(MAXW, -1, omega_p=2.0)
        assert minus.omega == pytest.approx(-plus.omega, rel=1e-12)
        assert minus.gamma == pytest.approx(plus.gamma, rel=1e-9)

    def test_bump_growing_root(self):
        root = dp.solve_root(BUMP, 3, omega_p=10.0, initial=complex(9.2, 1.7))
        assert root.gamma > 0.0
        assert root.omega == pytest.approx(10.0 * BUMP_ROOT.real, rel=1e-9)
        assert root.gamma == pytest.approx(10.0 * BUMP_ROOT.imag, rel=1e-9)

    def test_bump_default_start_lands_on_damped_branch(self):
        # the default initial guess extrapolates from the derived thermal
        # velocity, which for this profile includes the bump; it converges
        # to the damped thermal branch, so the growing mode needs an
        # informed initial guess
        root = dp.solve_root(BUMP, 3, omega_p=10.0)
        assert root.gamma < 0.0
        assert root.residual < 1e-10
        assert root.omega / 10.0 == pytest.approx(1.6943219386089794, rel=1e-6)

    def test_gridded_growing_root(self):
        root = dp.solve_root(
            BUMP_GRIDDED, 3, omega_p=10.0, initial=complex(9.2, 1.7), tol=1e-8
        )
        z = complex(root.omega, root.gamma)
        assert abs(z - 10.0 * BUMP_ROOT) < 1e-6

    def test_nonconvergence_raises(self):
        with pytest.raises(dp.DispersionError, match="no root after"):
            dp.solve_root(MAXW, 1, omega_p=2.0, initial=complex(3.5, 2.0), max_iter=2)

    def test_unphysical_branch_guard(self):
        # at k lambda_D = 2 the least-damped branch has |gamma| well above
        # omega_p and is rejected rather than reported
        with pytest.raises(dp.DispersionError, match="unphysical"):
            dp.solve_root(MAXW, 1, omega_p=0.5)


class TestPenrose:
    def test_maxwellian_stable(self):
        report = dp.penrose_check(MAXW)
        assert report.stable
        assert report.minima == ()
        assert "no interior minimum" in report.note

    def test_two_stream_unstable(self):
        report = dp.penrose_check(two_stream(analytic=True))
        assert not report.stable
        ((vstar, p),) = report.minima
        assert vstar == pytest.approx(0.0, abs=1e-9)
        assert p == pytest.approx(TWO_STREAM_P, rel=1e-8)

    def test_two_stream_gridded_route(self):
        report = dp.penrose_check(two_stream(analytic=False))
        assert not report.stable
        ((_, p),) = report.minima
        assert p == pytest.approx(TWO_STREAM_P, rel=1e-5)

    def test_bump_on_tail_unstable(self):
        report = dp.penrose_check(BUMP)
        assert not report.stable
        ((vstar, p),) = report.minima
        assert vstar == pytest.approx(BUMP_MIN_V, abs=1e-6)
        assert p == pytest.approx(BUMP_MIN_P, rel=1e-8)

    def test_gentle_bump_unstable_while_minimum_persists(self):
        gentle = dp.bump_on_tail_profile(GRID, 0.01, 4.5, 0.8)
        report = dp.penrose_check(gentle)
        assert not report.stable
        ((vstar, p),) = report.minima
        assert vstar == pytest.approx(3.4566, rel=1e-3)
        assert p > 0.0

    def test_vanishing_bump_stabilizes(self):
        # the positive-slope window closes by the minimum filling in, not
        # by the principal value changing sign
        tiny = dp.bump_on_tail_profile(GRID, 0.001, 4.5, 1.0)
        report = dp.penrose_check(tiny)
        assert report.stable
        assert report.minima == ()
        assert "no interior minimum" in report.note
