"""Test functions, exact expectation pairing, limit measure, curve."""

import math

import numpy as np
import pytest

from zerocurrent.ensemble import EnsembleSpec
from zerocurrent.holomap import HoloMap, Window, builtin_family, unit_family
from zerocurrent.theory import (OnCurveError, SupportEscapeError, ac_density,
                                annulus_bump, curve_measure_pairing,
                                disk_bump, expectation_pairing, extract_curve,
                                family_log_ratio_sup, fd_laplacian,
                                limit_mass, limit_pairing, prop21_pairing,
                                tensor_bump, xi)

KAC = HoloMap.from_sources(["z"])
FS = HoloMap.from_sources(["z", "1"])
UNIT = unit_family()
WIN = Window(-2.0, 2.0, -2.0, 2.0)


def test_xi_frozen_values():
    assert xi(0.5) == 0.0
    assert xi(1.0) == 1.0
    assert xi(2.0) == 1.0
    assert xi(4.0) == 0.5
    got = xi(np.array([0.2, 1.0, 8.0]))
    assert np.allclose(got, [0.0, 1.0, 0.25])
    xs = np.linspace(1.01, 9.0, 50)
    assert np.allclose(xs * xi(xs), 2.0)


def test_bump_plateau_and_support():
    rho = disk_bump(0j, 1.0, 1.5)
    assert rho.rho(np.array([0j]))[0] == 1.0
    assert rho.rho(np.array([0.9 + 0j]))[0] == 1.0
    assert rho.rho(np.array([1.6 + 0j]))[0] == 0.0
    mid = rho.rho(np.array([1.25 + 0j]))[0]
    assert 0.0 < mid < 1.0
    # smoothstep pair sums to one across the ramp
    lo = rho.rho(np.array([1.1 + 0j]))[0]
    hi = rho.rho(np.array([1.4 + 0j]))[0]
    assert lo + hi == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("rho", [
    disk_bump(0.3 + 0.2j, 0.8, 1.3),
    annulus_bump(0j, (0.25, 0.5, 1.5, 1.75)),
    tensor_bump((-1.0, 1.0, -0.8, 0.8), 0.5),
], ids=["disk", "annulus", "tensor"])
def test_laplacian_matches_fd(rho):
    rng = np.random.default_rng(3)
    x0, x1, y0, y1 = rho.support_rect
    z = (rng.uniform(x0, x1, size=60)
         + 1j * rng.uniform(y0, y1, size=60))
    want = rho.laplacian(z)
    got = fd_laplacian(rho.rho, z, h=2e-5)
    assert np.max(np.abs(want - got)) < 1e-4


@pytest.mark.parametrize("rho", [
    disk_bump(0j, 1.0, 1.5),
    annulus_bump(0.1 + 0j, (0.3, 0.6, 1.2, 1.5)),
    tensor_bump((-1.0, 1.0, -1.0, 1.0), 0.4),
], ids=["disk", "annulus", "tensor"])
def test_laplacian_integrates_to_zero(rho):
    # Tensor bumps have their curvature kinks on axis-aligned lines, so the
    # midpoint rule converges slower for them; 1601 keeps all three honest.
    x0, x1, y0, y1 = rho.support_rect
    m = 1601
    hx, hy = (x1 - x0) / m, (y1 - y0) / m
    xs = x0 + (np.arange(m) + 0.5) * hx
    ys = y0 + (np.arange(m) + 0.5) * hy
    total = np.sum(rho.laplacian(xs[None, :] + 1j * ys[:, None])) * hx * hy
    assert abs(total) < 3e-3
    assert rho.abs_laplacian_integral() > 0.1


def test_radial_validation():
    with pytest.raises(ValueError):
        annulus_bump(0j, (0.0, 0.5, 1.0, 1.5))  # inner ramp from r=0
    with pytest.raises(ValueError):
        annulus_bump(0j, (0.5, 0.4, 1.0, 1.5))  # not increasing


def test_expectation_pairing_zero_degree():
    rho = disk_bump(0j, 1.0, 1.5)
    spec = EnsembleSpec(KAC, UNIT, 0, seed=0)
    out = expectation_pairing(spec, rho, WIN)
    assert out.value == 0.0


def test_expectation_pairing_kac_frozen():
    rho = disk_bump(0j, 1.2, 1.8)
    spec = EnsembleSpec(KAC, UNIT, 80, seed=0)
    out = expectation_pairing(spec, rho, WIN)
    # pilot-frozen value; the quadrature error estimate must cover a
    # change of grid
    assert out.value == pytest.approx(0.98926, abs=5e-4)
    assert out.quad_error < 1e-3


def test_expectation_equals_prop21_form():
    rho = annulus_bump(0j, (0.3, 0.6, 1.4, 1.7))
    spec = EnsembleSpec(KAC, UNIT, 40, seed=0)
    a = expectation_pairing(spec, rho, WIN)
    b = prop21_pairing(1, 40, rho, WIN)
    assert a.value == pytest.approx(b.value, abs=1e-12)


def test_support_escape_detected():
    rho = disk_bump(0j, 1.8, 2.5)  # support leaves [-2, 2]^2
    spec = EnsembleSpec(KAC, UNIT, 10, seed=0)
    with pytest.raises(SupportEscapeError):
        expectation_pairing(spec, rho, WIN)


def test_curve_kac_circle():
    win = Window(-1.6, 1.6, -1.6, 1.6, nx=361, ny=361)
    curve = extract_curve(KAC, win)
    assert len(curve.polylines) == 1
    assert curve.polylines[0].closed
    assert curve.total_length() == pytest.approx(2 * math.pi, abs=2e-4)
    assert curve_measure_pairing(curve) == pytest.approx(1.0, abs=2e-4)
    assert curve.excluded_length() == 0.0


def test_curve_scaled_circle():
    # f = 2z has |f| = 1 on |z| = 1/2; the measure is still probability
    fmap = HoloMap.from_sources(["2*z"])
    win = Window(-1.0, 1.0, -1.0, 1.0, nx=361, ny=361)
    curve = extract_curve(fmap, win)
    assert curve.total_length() == pytest.approx(math.pi, abs=2e-4)
    assert curve_measure_pairing(curve) == pytest.approx(1.0, abs=2e-4)


def test_curve_mass_elements_nonnegative():
    # f = (z, 1/2) crosses ||f|| = 1 on the circle |z|^2 = 3/4
    fmap = HoloMap.from_sources(["z", "0.5"])
    win = Window(-1.3, 1.3, -1.3, 1.3, nx=281, ny=281)
    curve = extract_curve(fmap, win)
    # pairing with the constant one function succeeds (no negative mass)
    m = curve_measure_pairing(curve)
    assert m > 0.0
    assert curve.total_length() == pytest.approx(2 * math.pi * math.sqrt(0.75),
                                                 abs=1e-3)


def test_ac_density_fubini_study():
    rng = np.random.default_rng(1)
    z = rng.normal(size=40) + 1j * rng.normal(size=40)
    z = z[np.abs(z) > 1e-3]
    # ||f|| > 1 off the origin, so the density is the full Fubini-Study
    # profile everywhere
    want = (1.0 / math.pi) / (1.0 + np.abs(z) ** 2) ** 2
    got = np.array([ac_density(FS, zi) for zi in z])
    assert np.allclose(got, want, rtol=1e-12)


def test_ac_density_scalar_map_vanishes():
    rng = np.random.default_rng(2)
    z = rng.normal(size=20, scale=1.5) + 1j * rng.normal(size=20, scale=1.5)
    z = z[np.abs(np.abs(z) - 1.0) > 1e-2]
    for zi in z:
        assert abs(ac_density(KAC, zi)) < 1e-12


def test_ac_density_on_curve_raises():
    with pytest.raises(OnCurveError):
        ac_density(KAC, 1.0 + 0j)


def test_limit_pairing_half_plane():
    # right half of the unit circle carries exactly half the Kac measure;
    # the ramp must straddle x = 0 symmetrically (plateau edge at x0 = a
    # with margin 2a) so that rho(x) + rho(-x) = 1 across the crossing.
    # a generous ramp keeps the potential-form Simpson check tight too.
    a = 0.25
    rho = tensor_bump((a, 1.05, -1.05, 1.05), 2 * a)
    win = Window(-1.6, 1.6, -1.6, 1.6, nx=481, ny=481)
    out = limit_pairing(KAC, rho, win)
    assert out.ac == 0.0
    assert out.total == pytest.approx(0.5, abs=5e-3)
    assert out.consistency_diff < 5e-3


def test_limit_pairing_fs_disk():
    rho = disk_bump(0j, 1.2, 1.8)
    win = Window(-2.2, 2.2, -2.2, 2.2, nx=301, ny=301)
    out = limit_pairing(FS, rho, win)
    assert out.ac > 0.0
    assert out.curve == 0.0
    assert out.consistency_diff < 5e-3


def test_limit_mass_fs_window():
    # ||f||^2 = 1 + |z|^2 > 1 except at the isolated origin, so the whole
    # mass is absolutely continuous
    win = Window(-6.0, 6.0, -6.0, 6.0, nx=481, ny=481)
    out = limit_mass(FS, win)
    assert out.curve == 0.0
    # reference from the radial density integrated over the square
    assert out.total == pytest.approx(0.97785, abs=1e-3)


def test_family_log_ratio_sup():
    assert family_log_ratio_sup(KAC, UNIT, 50, WIN) == 0.0
    growth = family_log_ratio_sup(KAC, builtin_family("growth"), 50, WIN)
    # sum (j+1)^2 x^j vs sum x^j: at most log of max weight squared
    assert 0.0 < growth <= 2 * math.log(51.0) + 1e-9


def test_expectation_converges_to_limit():
    rho = disk_bump(0j, 1.2, 1.8)
    win = Window(-2.0, 2.0, -2.0, 2.0, nx=241, ny=241)
    lim = limit_pairing(KAC, rho, win).total
    gaps = []
    for n in (50, 100, 200):
        ep = expectation_pairing(EnsembleSpec(KAC, UNIT, n, seed=0), rho, win)
        gaps.append(abs(ep.value - lim))
        bound = math.log(n + 1.0) / (4.0 * math.pi * n) \
            * rho.abs_laplacian_integral()
        assert gaps[-1] <= bound
    assert gaps[2] < gaps[1] < gaps[0]
