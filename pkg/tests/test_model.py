"""Unit tests for the core model types and pointwise operations."""

import math

import numpy as np
import pytest

from porefilt import (
    FeedSpec,
    GridMismatchError,
    InvalidParameterError,
    InvalidShapeError,
    PoreClosedError,
    PoreProfile,
    ScreeningParams,
    ShapeFunction,
    Species,
    concentration_profile,
    deposition_rate,
    flux_constant_pressure,
    inlet_pressure_constant_flux,
    validate_shape,
)
from porefilt.model import eval_shape, screened_lambda


# ---------------------------------------------------------------------------
# shapes
# ---------------------------------------------------------------------------

def test_shape_eval_matches_polyval():
    shape = ShapeFunction((0.8, -0.3, 0.1))
    x = np.linspace(0.0, 1.0, 17)
    expected = np.polyval(shape.coefficients[::-1], x)
    np.testing.assert_allclose(shape(x), expected, rtol=1e-14)


def test_shape_scalar_eval():
    shape = ShapeFunction((1.0, -0.6))
    assert shape(0.0) == pytest.approx(1.0)
    assert shape(1.0) == pytest.approx(0.4)
    assert shape.degree == 1


def test_shape_rejects_empty_and_nonfinite():
    with pytest.raises(InvalidShapeError):
        ShapeFunction(())
    with pytest.raises(InvalidShapeError):
        ShapeFunction((1.0, float("nan")))


def test_shape_normalizes_negative_zero():
    # bounds clipping in the search can produce -0.0; reports should print 0
    shape = ShapeFunction((1.0, -0.0))
    assert str(shape.coefficients[1]) == "0.0"


def test_validate_shape_linear():
    chk = validate_shape(ShapeFunction((1.0, -0.6)))
    assert chk.feasible
    assert chk.min_radius == pytest.approx(0.4)
    assert chk.max_radius == pytest.approx(1.0)
    assert chk.violation == 0.0


def test_validate_shape_quadratic_interior_minimum():
    # a0 = 0.5 - 0.8x + 0.8x^2 has its vertex at x = 0.5, value 0.3
    chk = validate_shape(ShapeFunction((0.5, -0.8, 0.8)))
    assert chk.feasible
    assert chk.min_x == pytest.approx(0.5)
    assert chk.min_radius == pytest.approx(0.3)


def test_validate_shape_flags_violations():
    too_wide = validate_shape(ShapeFunction((0.9, 0.4)))
    assert not too_wide.feasible
    assert too_wide.violation == pytest.approx(0.3)

    crosses_zero = validate_shape(ShapeFunction((0.5, -1.0)))
    assert not crosses_zero.feasible
    assert crosses_zero.min_radius == pytest.approx(-0.5)


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

def test_profile_from_shape_grid():
    prof = PoreProfile.from_shape(ShapeFunction((1.0, -0.5)), n_x=10)
    assert prof.n_x == 10
    assert prof.x[0] == 0.0 and prof.x[-1] == 1.0
    np.testing.assert_allclose(prof.radii, 1.0 - 0.5 * prof.x)


def test_profile_is_read_only():
    prof = PoreProfile.from_shape(ShapeFunction((1.0,)), n_x=4)
    with pytest.raises(ValueError):
        prof.radii[0] = 0.5


def test_profile_rejects_mismatched_grid():
    with pytest.raises(GridMismatchError):
        PoreProfile(x=np.linspace(0, 1, 5), radii=np.ones(6))


def test_profile_closed_at_floor():
    radii = np.full(11, 0.5)
    radii[3] = 1e-4
    prof = PoreProfile(x=np.linspace(0, 1, 11), radii=radii)
    assert prof.closed
    with pytest.raises(PoreClosedError):
        flux_constant_pressure(prof)


# ---------------------------------------------------------------------------
# feeds
# ---------------------------------------------------------------------------

def test_two_species_default_lambda_coupling():
    # lambda_i = beta_i * lam1 when no explicit lam list is given
    feed = FeedSpec.two_species(xi=0.9, beta=0.1)
    np.testing.assert_allclose(feed.fractions, [0.9, 0.1])
    np.testing.assert_allclose(feed.betas, [1.0, 0.1])
    np.testing.assert_allclose(feed.lambdas, [1.0, 0.1])


def test_feed_fraction_sum_enforced():
    with pytest.raises(InvalidParameterError):
        FeedSpec(species=(Species(xi=0.5, lam=1.0), Species(xi=0.6, lam=0.1, beta=0.1)))


def test_feed_reference_beta_enforced():
    with pytest.raises(InvalidParameterError):
        FeedSpec.from_fractions([0.5, 0.5], [0.9, 0.1])


def test_species_validation():
    with pytest.raises(InvalidParameterError):
        Species(xi=0.0, lam=1.0)
    with pytest.raises(InvalidParameterError):
        Species(xi=0.5, lam=-1.0)
    with pytest.raises(InvalidParameterError):
        Species(xi=0.5, lam=1.0, beta=0.0)
    # the inert limit lam = 0 is allowed
    Species(xi=1.0, lam=0.0)


def test_screening_limits():
    scr = ScreeningParams(lambda_clean=1.0, lambda_fouled=0.2, h0=0.05)
    assert screened_lambda(scr, 0.0) == pytest.approx(1.0)
    assert screened_lambda(scr, 100.0) == pytest.approx(0.2)
    h = np.array([0.0, 0.05, 0.1])
    lam = screened_lambda(scr, h)
    assert lam[1] == pytest.approx(0.2 + 0.8 * math.exp(-1.0))
    assert np.all(np.diff(lam) < 0.0)


def test_feed_screening_must_align():
    scr = ScreeningParams(lambda_clean=1.0, lambda_fouled=0.2, h0=0.05)
    with pytest.raises(InvalidParameterError):
        FeedSpec.from_fractions([0.5, 0.5], [1.0, 0.1], screening=[scr])
    # lambda_clean must equal the species' own lambda
    with pytest.raises(InvalidParameterError):
        FeedSpec.from_fractions([0.5, 0.5], [1.0, 0.1], screening=[None, scr])


# ---------------------------------------------------------------------------
# flux and pressure
# ---------------------------------------------------------------------------

def test_flux_uniform_pore_is_unity():
    prof = PoreProfile.from_shape(ShapeFunction((1.0,)), n_x=50)
    assert flux_constant_pressure(prof) == pytest.approx(1.0, abs=1e-14)
    assert inlet_pressure_constant_flux(prof) == pytest.approx(1.0, abs=1e-14)


def test_flux_linear_closed_form():
    # int (1 - 0.6 x)^-4 dx = ((0.4)^-3 - 1) / 1.8 = 8.125
    prof = PoreProfile.from_shape(ShapeFunction((1.0, -0.6)), n_x=2000)
    assert flux_constant_pressure(prof) == pytest.approx(1.0 / 8.125, rel=1e-6)


def test_pressure_is_reciprocal_resistance():
    prof = PoreProfile.from_shape(ShapeFunction((0.9, -0.3)), n_x=200)
    u = flux_constant_pressure(prof)
    p0 = inlet_pressure_constant_flux(prof)
    assert u * p0 == pytest.approx(1.0, rel=1e-14)


# ---------------------------------------------------------------------------
# transport and deposition
# ---------------------------------------------------------------------------

def test_concentration_profile_linear_shape_analytic():
    # trapezoidal cumulative quadrature is exact for a linear radius profile
    feed = FeedSpec.two_species(xi=0.5, beta=0.1)
    prof = PoreProfile.from_shape(ShapeFunction((1.0, -0.6)), n_x=200)
    u = flux_constant_pressure(prof)
    conc = concentration_profile(prof, feed, u)
    x = prof.x
    cum = x - 0.3 * x**2
    for i, sp in enumerate(feed.species):
        expected = feed.fractions[i] * np.exp(-math.pi * sp.lam / (4.0 * u) * cum)
        np.testing.assert_allclose(conc[i], expected, rtol=1e-12)


def test_concentration_profile_inlet_override():
    feed = FeedSpec.two_species(xi=0.5, beta=0.1)
    prof = PoreProfile.from_shape(ShapeFunction((1.0,)), n_x=20)
    conc = concentration_profile(prof, feed, 1.0, inlet_conc=[0.2, 0.01])
    np.testing.assert_allclose(conc[:, 0], [0.2, 0.01])
    # attenuation factors are inlet-independent
    base = concentration_profile(prof, feed, 1.0)
    np.testing.assert_allclose(conc[0] / 0.2, base[0] / 0.5, rtol=1e-13)


def test_concentration_profile_screening_reduces_capture():
    scr = ScreeningParams(lambda_clean=1.0, lambda_fouled=0.1, h0=0.01)
    feed = FeedSpec.from_fractions([1.0], [1.0], screening=[scr])
    prof = PoreProfile.from_shape(ShapeFunction((0.8,)), n_x=50)
    clean = concentration_profile(prof, feed, 1.0, deposit=np.zeros(51))
    fouled = concentration_profile(prof, feed, 1.0, deposit=np.full(51, 0.1))
    # a coated wall captures less, so more solute survives to the outlet
    assert fouled[0, -1] > clean[0, -1]


def test_concentration_profile_grid_mismatch():
    feed = FeedSpec.two_species(xi=0.5, beta=0.1)
    prof = PoreProfile.from_shape(ShapeFunction((1.0,)), n_x=20)
    with pytest.raises(GridMismatchError):
        concentration_profile(prof, feed, 1.0, inlet_conc=[0.5])


def test_deposition_rate_three_species_dot_product():
    feed = FeedSpec.from_fractions([0.3, 0.35, 0.35], [1.0, 0.1, 0.5])
    prof = PoreProfile.from_shape(ShapeFunction((1.0,)), n_x=10)
    conc = np.tile(feed.fractions[:, None], (1, 11))
    rate = deposition_rate(prof, conc, feed)
    # -(1*0.3 + 0.1*0.35 + 0.5*0.35) = -0.51 at every node
    np.testing.assert_allclose(rate, -0.51, rtol=1e-14)


def test_deposition_rate_shape_check():
    feed = FeedSpec.two_species(xi=0.5, beta=0.1)
    prof = PoreProfile.from_shape(ShapeFunction((1.0,)), n_x=10)
    with pytest.raises(GridMismatchError):
        deposition_rate(prof, np.ones((2, 5)), feed)
