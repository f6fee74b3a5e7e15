"""Coefficient layouts, sampling, variance function, kernel identities."""

import math

import numpy as np
import pytest

from zerocurrent.ensemble import (FULL_TENSOR, SYMMETRIC, CountOverflowError,
                                  EnsembleSpec, basis_matrix, coeff_count,
                                  compositions, eval_G, eval_G_array, gamma_n,
                                  geometric_log_sum, h_n, kernel, log_h_n,
                                  multinomial_weights, phi, sample, trial_key)
from zerocurrent.holomap import HoloMap, builtin_family, unit_family

KAC = HoloMap.from_sources(["z"])
FS = HoloMap.from_sources(["z", "1"])
UNIT = unit_family()


def test_coeff_count():
    assert coeff_count(2, 3, FULL_TENSOR) == 1 + 2 + 4 + 8
    assert coeff_count(2, 3, SYMMETRIC) == math.comb(5, 2)
    assert coeff_count(1, 7, FULL_TENSOR) == 8
    with pytest.raises(CountOverflowError):
        coeff_count(2, 25, FULL_TENSOR)


def test_compositions_frozen_order():
    # descending lexicographic: the first slot drains first
    assert compositions(3, 2) == ((3, 0), (2, 1), (1, 2), (0, 3))
    assert compositions(0, 3) == ((0, 0, 0),)
    assert compositions(2, 3) == ((2, 0, 0), (1, 1, 0), (1, 0, 1),
                                  (0, 2, 0), (0, 1, 1), (0, 0, 2))


def test_multinomial_weights():
    w = multinomial_weights(3, 2)
    # sqrt(3!/(a1! a2!)) over the frozen composition order
    want = [math.sqrt(6 / (math.factorial(a) * math.factorial(b)))
            for a, b in compositions(3, 2)]
    assert np.allclose(w, want)
    # squared weights resum to ell^k, the tensor-power dimension
    assert np.sum(w ** 2) == pytest.approx(2 ** 3)


def test_sampling_reproducible_and_distinct():
    spec = EnsembleSpec(KAC, UNIT, 12, seed=3)
    a = sample(spec, 0).draw
    b = sample(spec, 0).draw
    c = sample(spec, 1).draw
    assert np.array_equal(a.coeffs, b.coeffs)
    assert not np.array_equal(a.coeffs, c.coeffs)
    assert a.coeffs.shape == (13,)
    assert trial_key(3, 0) != trial_key(3, 1)
    assert trial_key(3, 0) != trial_key(4, 0)


def test_coefficient_normalization():
    # E|a|^2 = 1 with re, im ~ N(0, 1/2)
    spec = EnsembleSpec(FS, UNIT, 15, FULL_TENSOR, seed=9)
    draws = np.concatenate([sample(spec, t).draw.coeffs for t in range(5)])
    assert draws.size >= 1e5
    m = np.mean(np.abs(draws) ** 2)
    assert 0.99 < m < 1.01
    assert abs(np.mean(draws.real)) < 5e-3
    assert abs(np.mean(draws.real * draws.imag)) < 5e-3


def test_h_n_equals_mean_square():
    fam = builtin_family("growth")
    spec = EnsembleSpec(FS, fam, 6, seed=21)
    rng = np.random.default_rng(0)
    z = rng.normal(size=20, scale=0.8) + 1j * rng.normal(size=20, scale=0.8)
    vals, _ = basis_matrix(spec, z, with_deriv=False)
    trials = 4000
    acc = np.zeros(z.shape)
    acc2 = np.zeros(z.shape)
    for t in range(trials):
        G = sample(spec, t).draw.coeffs @ vals
        g2 = np.abs(G) ** 2
        acc += g2
        acc2 += g2 ** 2
    mean = acc / trials
    se = np.sqrt((acc2 / trials - mean ** 2) / trials)
    want = h_n(FS, fam, 6, z)
    assert np.all(np.abs(mean - want) <= 3 * se + 1e-12)


def test_kernel_closed_form_and_layout_equivalence():
    fam = builtin_family("decay")
    rng = np.random.default_rng(5)
    z = rng.normal(size=10) + 1j * rng.normal(size=10)
    w = rng.normal(size=10) + 1j * rng.normal(size=10)
    sa = EnsembleSpec(FS, fam, 6, FULL_TENSOR, seed=0)
    sb = EnsembleSpec(FS, fam, 6, SYMMETRIC, seed=0)
    for zi, wi in zip(z, w):
        ka = kernel(sa, zi, wi)
        kb = kernel(sb, zi, wi)
        # closed form sum_k g_k(z) conj(g_k(w)) <f(z), f(w)>^k
        ip = zi * np.conj(wi) + 1.0
        want = sum(fam.g_scalar(k) * np.conj(fam.g_scalar(k)) * ip ** k
                   for k in range(7))
        assert abs(ka - want) <= 1e-10 * abs(want)
        assert abs(ka - kb) <= 1e-10 * abs(want)


def test_basis_diag_is_h_n():
    fam = builtin_family("exp_tilt")
    rng = np.random.default_rng(11)
    z = rng.normal(size=15) + 1j * rng.normal(size=15)
    for rep in (FULL_TENSOR, SYMMETRIC):
        spec = EnsembleSpec(FS, fam, 5, rep, seed=0)
        vals, ders = basis_matrix(spec, z)
        want = h_n(FS, fam, 5, z)
        got = np.sum(np.abs(vals) ** 2, axis=0)
        assert np.allclose(got, want, rtol=1e-12)
        # derivative columns by finite differences
        h = 1e-6
        vp, _ = basis_matrix(spec, z + h, with_deriv=False)
        vm, _ = basis_matrix(spec, z - h, with_deriv=False)
        fd = (vp - vm) / (2 * h)
        assert np.max(np.abs(ders - fd)) < 1e-5 * max(1.0, np.max(np.abs(fd)))


def test_eval_G_matches_basis_contraction():
    spec = EnsembleSpec(FS, builtin_family("growth"), 7, seed=2)
    rf = sample(spec, 3)
    rng = np.random.default_rng(1)
    z = rng.normal(size=8) + 1j * rng.normal(size=8)
    vals, ders = basis_matrix(spec, z)
    want = rf.draw.coeffs @ vals
    got, got_d = eval_G_array(rf, z)
    assert np.allclose(got, want, rtol=1e-13)
    assert np.allclose(got_d, rf.draw.coeffs @ ders, rtol=1e-13)
    jet = eval_G(rf, z[0])
    assert abs(jet.value - want[0]) < 1e-12
    assert abs(jet.deriv - rf.draw.coeffs @ ders[:, 0]) < 1e-10


def test_log_h_n_stability_extremes():
    # large |z| and large n would overflow a naive sum; the log form must not
    z = np.array([200.0 + 0j, 1e-8 + 0j, 1.0 + 0j])
    out = log_h_n(KAC, UNIT, 500, z)
    assert np.all(np.isfinite(out))
    # at |z| = 200: dominated by |z|^(2n), log h ~ 2 n log 200
    assert out[0] == pytest.approx(2 * 500 * math.log(200.0), rel=1e-6)
    # at z = 1: exactly n + 1 equal terms
    assert out[2] == pytest.approx(math.log(501.0), rel=1e-12)


def test_geometric_log_sum_against_naive():
    rng = np.random.default_rng(8)
    L = np.concatenate([rng.normal(size=6, scale=2.0),
                        np.array([0.0, 1e-12, -1e-12, 700.0, -700.0])])
    for n in (0, 1, 5, 1000):
        ks = np.arange(n + 1)
        naive = [float(np.logaddexp.reduce(k * l)) for l in L
                 for k in (ks,)]
        got = geometric_log_sum(L, n)
        assert np.allclose(got, naive, rtol=1e-10, atol=1e-12)


def test_gamma_phi_lemma_bound():
    z = np.linspace(-2, 2, 41)[None, :] + 1j * np.linspace(-2, 2, 41)[:, None]
    for fmap in (KAC, FS):
        p = phi(fmap, z)
        assert np.all(p >= 0)
        for n in (1, 10, 250):
            g = gamma_n(fmap, n, z)
            diff = g - p
            assert np.min(diff) >= -1e-13
            assert np.max(diff) <= math.log(n + 1) / n + 1e-13


def test_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec(KAC, UNIT, -1)
    with pytest.raises(ValueError):
        EnsembleSpec(KAC, UNIT, 3, "NoSuchLayout")
    with pytest.raises(CountOverflowError):
        spec = EnsembleSpec(FS, UNIT, 40, FULL_TENSOR)
        sample(spec, 0)
