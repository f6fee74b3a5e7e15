"""Built-in consistency checks.

Each check exercises one identity that the rest of the package leans on,
using small fixed instances so the whole battery runs in seconds.  All
randomness is seeded; a check either passes or returns a message saying
which number came out wrong.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ensemble import (FULL_TENSOR, SYMMETRIC, EnsembleSpec, basis_matrix,
                       gamma_n, h_n, kernel, log_h_n, phi, sample)
from .holomap import HoloMap, Window, builtin_family, unit_family
from .theory import (ac_density, disk_bump, extract_curve, fd_laplacian,
                     curve_measure_pairing, limit_pairing)
from .zerofind import (count_zeros_argument, expand_poly, roots_aberth,
                       zeros_subdivide)

__all__ = ["SelfTestResult", "run_selftest", "CHECK_NAMES"]


@dataclass(frozen=True)
class SelfTestResult:
    name: str
    passed: bool
    detail: str


def _grid(window: Window, m: int) -> np.ndarray:
    xs = np.linspace(window.x0, window.x1, m)
    ys = np.linspace(window.y0, window.y1, m)
    return xs[None, :] + 1j * ys[:, None]


def _check_lemma1() -> SelfTestResult:
    """0 <= gamma_n - phi <= log(n+1)/n pointwise."""
    win = Window(-2.0, 2.0, -2.0, 2.0)
    z = _grid(win, 41)
    worst = []
    for srcs in (["z"], ["z", "1"], ["z*z - 1", "exp(z/4)"]):
        fmap = HoloMap.from_sources(srcs)
        for n in (1, 7, 60):
            g = gamma_n(fmap, n, z)
            p = phi(fmap, z)
            lo = float(np.min(g - p))
            hi = float(np.max(g - p)) - math.log(n + 1) / n
            worst.append((lo, hi))
    lo = min(w[0] for w in worst)
    hi = max(w[1] for w in worst)
    ok = lo >= -1e-12 and hi <= 1e-12
    return SelfTestResult("lemma1_bound", ok,
                          f"min(gamma-phi)={lo:.2e}, max excess={hi:.2e}")


def _check_unitary_invariance() -> SelfTestResult:
    """h_n depends on f only through ||f||, so a unitary mix leaves it fixed."""
    th = 0.7
    c, s = math.cos(th), math.sin(th)
    a = HoloMap.from_sources(["z", "1"])
    # rows of a fixed U(2) element applied to (z, 1)
    b = HoloMap.from_sources([f"{c}*z + {s}i", f"{s}i*z + {c}"])
    win = Window(-1.5, 1.5, -1.5, 1.5)
    z = _grid(win, 31)
    fam = unit_family()
    worst = 0.0
    for n in (3, 17):
        la = log_h_n(a, fam, n, z)
        lb = log_h_n(b, fam, n, z)
        worst = max(worst, float(np.max(np.abs(la - lb))))
    ok = worst < 1e-10
    return SelfTestResult("unitary_invariance", ok,
                          f"max |log h_n difference| = {worst:.2e}")


def _check_representation_equivalence() -> SelfTestResult:
    """Both coefficient layouts define the same Gaussian field."""
    fmap = HoloMap.from_sources(["z", "0.5*z*z - 0.25"])
    fam = builtin_family("decay")
    n = 5
    rng = np.random.default_rng(7)
    z = rng.normal(size=12) + 1j * rng.normal(size=12)
    w = rng.normal(size=12) + 1j * rng.normal(size=12)
    sa = EnsembleSpec(fmap, fam, n, FULL_TENSOR, seed=1)
    sb = EnsembleSpec(fmap, fam, n, SYMMETRIC, seed=1)
    ka = np.array([kernel(sa, zi, wi) for zi, wi in zip(z, w)])
    kb = np.array([kernel(sb, zi, wi) for zi, wi in zip(z, w)])
    dk = float(np.max(np.abs(ka - kb) / np.maximum(np.abs(ka), 1e-30)))
    # diagonal of the kernel must be h_n in either layout
    va, _ = basis_matrix(sa, z, with_deriv=False)
    vb, _ = basis_matrix(sb, z, with_deriv=False)
    hz = h_n(fmap, fam, n, z)
    da = float(np.max(np.abs(np.sum(np.abs(va) ** 2, axis=0) - hz) / hz))
    db = float(np.max(np.abs(np.sum(np.abs(vb) ** 2, axis=0) - hz) / hz))
    ok = dk < 1e-10 and da < 1e-10 and db < 1e-10
    return SelfTestResult("representation_equivalence", ok,
                          f"kernel reldiff={dk:.2e}, diag vs h_n: "
                          f"{da:.2e}/{db:.2e}")


def _check_curve_mass() -> SelfTestResult:
    """For f = (z) the limit measure is the uniform unit circle, mass 1."""
    fmap = HoloMap.from_sources(["z"])
    win = Window(-1.6, 1.6, -1.6, 1.6, nx=421, ny=421)
    curve = extract_curve(fmap, win)
    mass = curve_measure_pairing(curve)
    length = curve.total_length()
    dm = abs(mass - 1.0)
    dl = abs(length - 2.0 * math.pi)
    ok = dm < 1e-3 and dl < 1e-3 and len(curve.polylines) == 1
    return SelfTestResult("curve_mass", ok,
                          f"|mass-1|={dm:.2e}, |length-2pi|={dl:.2e}, "
                          f"{len(curve.polylines)} component(s)")


def _check_density_fd() -> SelfTestResult:
    """Smooth part of the limit density vs a finite-difference Laplacian."""
    fmap = HoloMap.from_sources(["z", "1"])

    def pot(z):
        n2 = fmap.norm_sq(np.asarray(z, dtype=complex))
        return np.log(np.maximum(n2, 1.0)) / (4.0 * math.pi)

    pts = np.array([1.3 + 0.2j, -0.9 + 1.1j, 2.0 - 0.5j, 0.4 + 1.2j])
    worst = 0.0
    for z in pts:
        want = ac_density(fmap, z)
        got = fd_laplacian(pot, z, h=2e-4)
        worst = max(worst, abs(want - got) / max(abs(want), 1e-12))
    ok = worst < 1e-4
    return SelfTestResult("density_vs_fd", ok,
                          f"max relative mismatch = {worst:.2e}")


def _check_winding_conservation() -> SelfTestResult:
    """Subdivision zero counts agree with one global winding count and with
    direct root finding."""
    fmap = HoloMap.from_sources(["z"])
    spec = EnsembleSpec(fmap, unit_family(), 24, seed=5)
    rf = sample(spec, 0)
    win = Window(-1.4, 1.4, -1.4, 1.4)
    total = int(count_zeros_argument(rf, win))
    zl = zeros_subdivide(rf, win)
    direct = roots_aberth(expand_poly(rf), 1e-11).restrict(win)
    ok = (zl.total_count == total == direct.total_count)
    return SelfTestResult("winding_conservation", ok,
                          f"winding={total}, subdivide={zl.total_count}, "
                          f"aberth={direct.total_count}")


_CHECKS = [
    _check_lemma1,
    _check_unitary_invariance,
    _check_representation_equivalence,
    _check_curve_mass,
    _check_density_fd,
    _check_winding_conservation,
]

CHECK_NAMES = [c.__name__.replace("_check_", "") for c in _CHECKS]


def run_selftest() -> list[SelfTestResult]:
    return [c() for c in _CHECKS]
