"""Root finding: polynomial expansion, Aberth, winding counts, subdivision."""

import math

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from zerocurrent.ensemble import EnsembleSpec, eval_G_array, sample
from zerocurrent.holomap import HoloMap, Window, builtin_family, unit_family
from zerocurrent.zerofind import (DepthExceededError, PolyCoeffs,
                                  count_zeros_argument, expand_poly,
                                  roots_aberth, roots_companion,
                                  zeros_subdivide)

KAC = HoloMap.from_sources(["z"])
FS = HoloMap.from_sources(["z", "1"])
UNIT = unit_family()


def _match_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Max pairing distance under the optimal assignment."""
    if a.size != b.size:
        return math.inf
    if a.size == 0:
        return 0.0
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


def test_polycoeffs_basics():
    p = PolyCoeffs(np.array([-1.0, 0.0, 0.0, 1.0], dtype=complex))  # z^3 - 1
    assert p.degree == 3
    assert abs(p(2.0 + 0j) - 7.0) < 1e-14
    with pytest.raises(ValueError):
        PolyCoeffs(np.array([1.0, 0.0], dtype=complex))


def test_expand_poly_matches_evaluation():
    rng = np.random.default_rng(4)
    z = rng.normal(size=12) + 1j * rng.normal(size=12)
    for fmap, fam, n in ((KAC, UNIT, 9),
                         (FS, builtin_family("growth"), 5),
                         (FS, builtin_family("decay"), 4)):
        for rep in ("FullTensor", "SymmetricMultinomial"):
            spec = EnsembleSpec(fmap, fam, n, rep, seed=13)
            rf = sample(spec, 1)
            p = expand_poly(rf)
            direct, _ = eval_G_array(rf, z)
            scale = np.max(np.abs(direct))
            assert np.max(np.abs(p(z) - direct)) < 1e-12 * scale


def test_kac_expansion_is_identity():
    # for f = z with unit weights the basis is exactly 1, z, ..., z^n
    spec = EnsembleSpec(KAC, UNIT, 7, seed=5)
    rf = sample(spec, 2)
    p = expand_poly(rf)
    assert np.allclose(p.coeffs, rf.draw.coeffs)


def test_cube_roots():
    p = PolyCoeffs(np.array([-1.0, 0.0, 0.0, 1.0], dtype=complex))
    zl = roots_aberth(p, 1e-12)
    want = np.array([1.0, np.exp(2j * math.pi / 3), np.exp(-2j * math.pi / 3)])
    assert zl.total_count == 3
    assert _match_distance(zl.locations(), want) < 1e-12
    assert zl.max_residual() < 1e-12


def test_double_root_merges():
    # (z-1)^2: residual tolerance is reached while the two iterates are
    # still ~sqrt(tol) apart; the cluster merge must fuse them
    p = PolyCoeffs(np.array([1.0, -2.0, 1.0], dtype=complex))
    zl = roots_aberth(p, 1e-8)
    assert len(zl.items) == 1
    it = zl.items[0]
    assert it.multiplicity == 2
    assert abs(it.z - 1.0) < 1e-4
    assert it.cluster  # the reported point is a centroid


def test_origin_roots_stripped_exactly():
    # z^2 (z - 1): the origin factor comes out before iteration
    p = PolyCoeffs(np.array([0.0, 0.0, -1.0, 1.0], dtype=complex))
    zl = roots_aberth(p, 1e-12)
    by_mult = sorted((it.multiplicity, it.z) for it in zl.items)
    assert by_mult[0][0] == 1 and abs(by_mult[0][1] - 1.0) < 1e-12
    assert by_mult[1][0] == 2 and by_mult[1][1] == 0


def test_aberth_vs_companion_random():
    rng = np.random.default_rng(17)
    for deg in (4, 9, 16):
        for _ in range(7):
            c = rng.normal(size=deg + 1) + 1j * rng.normal(size=deg + 1)
            p = PolyCoeffs(np.asarray(c, dtype=complex))
            a = roots_aberth(p, 1e-11).locations(with_multiplicity=True)
            b = roots_companion(p).locations(with_multiplicity=True)
            assert _match_distance(a, b) < 1e-7


def test_wide_dynamic_range_coefficients():
    # newton-polygon starts must cope with very disparate scales
    c = np.array([1e-12, 0.0, 1.0, 0.0, 1e12], dtype=complex)
    zl = roots_aberth(PolyCoeffs(c), 1e-10)
    assert zl.total_count == 4
    assert zl.max_residual() < 1e-10


def test_winding_count_simple():
    p = PolyCoeffs(np.array([-1.0, 0.0, 0.0, 1.0], dtype=complex))
    assert count_zeros_argument(p, Window(-2, 2, -2, 2)) == 3
    assert count_zeros_argument(p, Window(0.5, 1.5, -0.5, 0.5)) == 1
    assert count_zeros_argument(p, Window(2, 3, 2, 3)) == 0


def test_winding_zero_near_boundary():
    # root at 1.0 exactly on the window edge: retries must move the
    # contour outward and still count it
    p = PolyCoeffs(np.array([0.2, -1.2, 1.0], dtype=complex))  # (z-1)(z-0.2)
    assert count_zeros_argument(p, Window(-1, 1, -1, 1)) == 2


def test_subdivide_matches_aberth():
    win = Window(-1.4, 1.4, -1.4, 1.4)
    for trial in range(5):
        spec = EnsembleSpec(KAC, UNIT, 30, seed=23)
        rf = sample(spec, trial)
        sub = zeros_subdivide(rf, win)
        direct = roots_aberth(expand_poly(rf), 1e-11).restrict(win)
        assert sub.total_count == direct.total_count
        d = _match_distance(sub.locations(with_multiplicity=True),
                            direct.locations(with_multiplicity=True))
        assert d < 1e-8


def test_subdivide_cluster_handling():
    # a double root shrinks to the cluster diameter and comes back as one
    # multiplicity-2 item; that is a result, not a failure, so strict mode
    # is happy with it too
    p = PolyCoeffs(np.array([0.25, -1.0, 1.0], dtype=complex))  # (z-1/2)^2
    win = Window(-1, 1, -1, 1)
    for strict in (False, True):
        zl = zeros_subdivide(p, win, strict=strict)
        assert zl.total_count == 2
        assert any(it.cluster and it.multiplicity == 2
                   and abs(it.z - 0.5) < 1e-6 for it in zl.items)
    # cells still multi-valued when depth runs out are a failure in strict
    # mode (the cluster diameter is not reached by depth 5)
    with pytest.raises(DepthExceededError):
        zeros_subdivide(p, win, depth_max=5, strict=True)
    loose = zeros_subdivide(p, win, depth_max=5)
    assert loose.total_count == 2


def test_zerolist_restrict_and_rows():
    p = PolyCoeffs(np.array([-1.0, 0.0, 0.0, 1.0], dtype=complex))
    zl = roots_aberth(p, 1e-12)
    win = Window(0.0, 2.0, -2.0, 2.0)
    kept = zl.restrict(win)
    assert kept.total_count == 1
    rows = kept.to_csv_rows(trial=7)
    assert rows[0][0] == 7
    assert len(rows[0]) == 5


def test_nonpolynomial_direct_route():
    # exp(z/2) - 1 has zeros at 4 pi i k; only k = 0 in the window
    target = HoloMap.from_sources(["exp(z/2) - 1"]).components[0]
    win = Window(-3.0, 3.0, -3.0, 3.0)
    zl = zeros_subdivide(target, win)
    assert zl.total_count == 1
    assert abs(zl.items[0].z) < 1e-9
