"""Deterministic side of the lab: exact finite-n expectations and the limit
measure.

The expected zero-counting measure of G_n pairs with a C^2 test function rho
through the normalizer h_n alone:

    < E Z_n, rho > = (1/(4 pi n)) integral log h_n(z) * laplacian(rho) dlambda.

Its n -> infinity limit splits into an absolutely continuous part on
{|f| > 1} with density

    (1/pi) (|f|^2 |f'|^2 - |<f', f>|^2) / |f|^4

and a singular part on the curve C = {|f| = 1},

    (1/(2 pi)) Im( sum_m conj(f_m) f'_m dz ),

with C oriented so {|f| < 1} lies on the left; that orientation makes every
mass element nonnegative.  The same limit equals the potential-form integral
(1/(4 pi)) integral log^+|f|^2 * laplacian(rho), which `limit_pairing` uses as
an internal cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .ensemble import log_h_n, phi
from .holomap import HoloMap, PerturbationFamily, Window, unit_family

__all__ = [
    "xi",
    "TestFunction",
    "disk_bump",
    "annulus_bump",
    "tensor_bump",
    "SupportEscapeError",
    "OnCurveError",
    "NegativeMassError",
    "ExpectationPairing",
    "expectation_pairing",
    "family_log_ratio_sup",
    "ac_density",
    "CurveC",
    "extract_curve",
    "curve_measure_pairing",
    "curve_segment_masses",
    "LimitPairing",
    "limit_pairing",
    "limit_mass",
    "prop21_pairing",
    "fd_laplacian",
]


class SupportEscapeError(Exception):
    """Test function support sticks out of the quadrature window."""


class OnCurveError(Exception):
    """Density requested at a point within 1e-10 of {|f| = 1}."""


class NegativeMassError(Exception):
    """A curve mass element came out below -1e-9.

    The measure normalization is (1/(2 pi)) Im(<f', f> dz) with {|f| < 1} on
    the left; a genuinely negative element means that normalization or the
    orientation was broken upstream.
    """


def xi(x):
    """Radial limit profile: 0 below 1, 1 at 1, 2/x above 1.

    Above the curve the product x*xi(x) is the constant 2, which is what
    turns the half-potential into the absolutely continuous density.
    """
    x = np.asarray(x, dtype=float)
    out = np.where(x > 1.0, 2.0 / np.maximum(x, 1.0), 0.0)
    out = np.where(x == 1.0, 1.0, out)
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Test functions: quintic-smoothstep bumps with closed-form Laplacians


def _sig(t):
    return t * t * t * (10.0 + t * (6.0 * t - 15.0))


def _sig_d1(t):
    return 30.0 * t * t * (1.0 - t) ** 2


def _sig_d2(t):
    return 60.0 * t * (2.0 * t - 1.0) * (t - 1.0)


def _profile_1d(t, a, b, c, d):
    """Plateau profile on [a, d]: rise on [a, b], 1 on [b, c], fall on [c, d].

    Returns (value, first derivative, second derivative); C^2 throughout.
    """
    t = np.asarray(t, dtype=float)
    v = np.zeros(t.shape)
    d1 = np.zeros(t.shape)
    d2 = np.zeros(t.shape)
    if b > a:
        m = (t > a) & (t < b)
        s = (t[m] - a) / (b - a)
        v[m] = _sig(s)
        d1[m] = _sig_d1(s) / (b - a)
        d2[m] = _sig_d2(s) / (b - a) ** 2
    m = (t >= b) & (t <= c)
    v[m] = 1.0
    if d > c:
        m = (t > c) & (t < d)
        s = (t[m] - c) / (d - c)
        v[m] = 1.0 - _sig(s)
        d1[m] = -_sig_d1(s) / (d - c)
        d2[m] = -_sig_d2(s) / (d - c) ** 2
    return v, d1, d2


@dataclass(frozen=True)
class TestFunction:
    """C^2 bump with closed-form Laplacian and compact support.

    kind 'radial': params = (cx, cy, r0, r1, r2, r3), profile of |z - c|;
    kind 'tensor': params = (x0, x1, y0, y1, margin), product of two 1-D
    plateau profiles.
    """

    kind: str
    params: tuple[float, ...]
    name: str = "rho"

    def __post_init__(self):
        if self.kind == "radial":
            _, _, r0, r1, r2, r3 = self.params
            if not (0.0 <= r0 <= r1 <= r2 <= r3):
                raise ValueError("radii must satisfy 0 <= r0 <= r1 <= r2 <= r3")
            if r2 >= r3:
                raise ValueError("outer fall needs r2 < r3")
            if r0 == 0.0 and r1 > 0.0:
                raise ValueError("a rise from radius 0 is not C^2; use r0 > 0 "
                                 "or r0 = r1 = 0")
        elif self.kind == "tensor":
            x0, x1, y0, y1, m = self.params
            if not (x0 < x1 and y0 < y1 and m > 0):
                raise ValueError("tensor bump needs a proper core and margin > 0")
        else:
            raise ValueError(f"unknown test function kind {self.kind!r}")

    # -- evaluation ----------------------------------------------------------

    def rho(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        if self.kind == "radial":
            cx, cy, r0, r1, r2, r3 = self.params
            r = np.abs(z - complex(cx, cy))
            v, _, _ = _profile_1d(r, r0, r1, r2, r3)
            return v
        x0, x1, y0, y1, m = self.params
        bx, _, _ = _profile_1d(z.real, x0 - m, x0, x1, x1 + m)
        by, _, _ = _profile_1d(z.imag, y0 - m, y0, y1, y1 + m)
        return bx * by

    def laplacian(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        if self.kind == "radial":
            cx, cy, r0, r1, r2, r3 = self.params
            r = np.abs(z - complex(cx, cy))
            _, d1, d2 = _profile_1d(r, r0, r1, r2, r3)
            safe = np.where(r > 0, r, 1.0)
            return d2 + np.where(r > 0, d1 / safe, 0.0)
        x0, x1, y0, y1, m = self.params
        bx, _, bx2 = _profile_1d(z.real, x0 - m, x0, x1, x1 + m)
        by, _, by2 = _profile_1d(z.imag, y0 - m, y0, y1, y1 + m)
        return bx2 * by + bx * by2

    def __call__(self, z):
        return self.rho(z)

    # -- geometry ------------------------------------------------------------

    @property
    def support_rect(self) -> tuple[float, float, float, float]:
        if self.kind == "radial":
            cx, cy, _, _, _, r3 = self.params
            return (cx - r3, cx + r3, cy - r3, cy + r3)
        x0, x1, y0, y1, m = self.params
        return (x0 - m, x1 + m, y0 - m, y1 + m)

    def abs_laplacian_integral(self, per_axis: int = 801) -> float:
        """Midpoint quadrature of |laplacian rho| over its support."""
        x0, x1, y0, y1 = self.support_rect
        hx = (x1 - x0) / per_axis
        hy = (y1 - y0) / per_axis
        xs = x0 + (np.arange(per_axis) + 0.5) * hx
        ys = y0 + (np.arange(per_axis) + 0.5) * hy
        g = xs[None, :] + 1j * ys[:, None]
        return float(np.sum(np.abs(self.laplacian(g))) * hx * hy)

    def describe(self) -> dict:
        return {"kind": self.kind, "name": self.name,
                "params": [float(p) for p in self.params]}


def disk_bump(center=0j, r_plateau: float = 1.0, r_support: float = 1.5,
              name: str = "disk") -> TestFunction:
    c = complex(center)
    return TestFunction("radial", (c.real, c.imag, 0.0, 0.0,
                                   float(r_plateau), float(r_support)), name)


def annulus_bump(center=0j, radii=(0.25, 0.5, 1.5, 1.75),
                 name: str = "annulus") -> TestFunction:
    c = complex(center)
    r0, r1, r2, r3 = (float(r) for r in radii)
    return TestFunction("radial", (c.real, c.imag, r0, r1, r2, r3), name)


def tensor_bump(core=(-1.0, 1.0, -1.0, 1.0), margin: float = 0.5,
                name: str = "tensor") -> TestFunction:
    x0, x1, y0, y1 = (float(v) for v in core)
    return TestFunction("tensor", (x0, x1, y0, y1, float(margin)), name)


def fd_laplacian(func: Callable, z, h: float = 2e-5):
    """Five-point finite-difference Laplacian of a real-valued field."""
    z = np.asarray(z, dtype=complex)
    return (func(z + h) + func(z - h) + func(z + 1j * h) + func(z - 1j * h)
            - 4.0 * func(z)) / (h * h)


# ---------------------------------------------------------------------------
# Exact finite-n pairing


def _simpson_weights(n: int) -> np.ndarray:
    # n odd node count
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def _simpson2d(F: np.ndarray, hx: float, hy: float) -> float:
    ny, nx = F.shape
    wx = _simpson_weights(nx) * hx
    wy = _simpson_weights(ny) * hy
    return float(wy @ F @ wx)


def _odd(n: int) -> int:
    return n if n % 2 == 1 else n + 1


def _check_support(rho: TestFunction, quad: Window):
    sx0, sx1, sy0, sy1 = rho.support_rect
    if sx0 < quad.x0 or sx1 > quad.x1 or sy0 < quad.y0 or sy1 > quad.y1:
        raise SupportEscapeError(
            f"support {rho.support_rect} of {rho.name!r} escapes the "
            f"quadrature window {quad.rect}")


@dataclass(frozen=True)
class ExpectationPairing:
    value: float
    quad_error: float
    n: int


def expectation_pairing(spec_or_map, rho: TestFunction, quad: Window,
                        fam: Optional[PerturbationFamily] = None,
                        n: Optional[int] = None) -> ExpectationPairing:
    """Exact expected pairing (1/(4 pi n)) integral log h_n * laplacian rho.

    Accepts either an EnsembleSpec-like object (with .fmap/.fam/.n) or an
    explicit (map, fam=..., n=...) triple.  Composite Simpson on the window
    grid plus one Richardson step; log h_n is smooth, so the extrapolated
    error estimate is honest.
    """
    if fam is None:
        fmap, fam, n = spec_or_map.fmap, spec_or_map.fam, spec_or_map.n
    else:
        fmap = spec_or_map
        if n is None:
            raise ValueError("explicit form needs n")
    _check_support(rho, quad)
    if n == 0:
        return ExpectationPairing(0.0, 0.0, 0)

    def integral(nx: int, ny: int) -> float:
        xs = np.linspace(quad.x0, quad.x1, nx)
        ys = np.linspace(quad.y0, quad.y1, ny)
        g = xs[None, :] + 1j * ys[:, None]
        F = log_h_n(fmap, fam, n, g) * rho.laplacian(g)
        return _simpson2d(F, xs[1] - xs[0], ys[1] - ys[0])

    nx, ny = _odd(quad.nx), _odd(quad.ny)
    coarse = integral(nx, ny)
    fine = integral(2 * nx - 1, 2 * ny - 1)
    extrap = fine + (fine - coarse) / 15.0
    err = abs(fine - coarse) / 15.0 + 1e-15
    c = 1.0 / (4.0 * math.pi * n)
    return ExpectationPairing(c * extrap, c * err, n)


def family_log_ratio_sup(fmap: HoloMap, fam: PerturbationFamily, n: int,
                         quad: Window) -> float:
    """sup over the window grid of |log h_n^fam - log h_n^unit|.

    This is the constant that turns the unit-family rate log(n+1) into a
    rate for an arbitrary audited family.
    """
    g = quad.grid()
    return float(np.max(np.abs(log_h_n(fmap, fam, n, g)
                               - log_h_n(fmap, unit_family(), n, g))))


# ---------------------------------------------------------------------------
# Limit measure: absolutely continuous part


def _ac_density_field(fmap: HoloMap, z: np.ndarray) -> np.ndarray:
    """Density on {|f| > 1}, 0 elsewhere; no on-curve error (measure zero)."""
    fv, fd = fmap.eval_jets(z)
    n2 = np.sum(np.abs(fv) ** 2, axis=0)
    d2 = np.sum(np.abs(fd) ** 2, axis=0)
    ip = np.sum(fd * np.conj(fv), axis=0)
    num = np.maximum(n2 * d2 - np.abs(ip) ** 2, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = num / (math.pi * n2 * n2)
    return np.where(n2 > 1.0, dens, 0.0)


def ac_density(fmap: HoloMap, z) -> float:
    """Pointwise density of the absolutely continuous part of the limit."""
    z = np.asarray(z, dtype=complex)
    if z.ndim == 0:
        nf = float(fmap.norm_f(z.reshape(1))[0])
        if abs(nf - 1.0) < 1e-10:
            raise OnCurveError(f"z = {complex(z)} lies on {{|f| = 1}}")
        return float(_ac_density_field(fmap, z.reshape(1))[0])
    return _ac_density_field(fmap, z)


# ---------------------------------------------------------------------------
# Limit measure: the curve {|f| = 1}


@dataclass
class CurvePolyline:
    vertices: np.ndarray      # complex, ordered with {|f| < 1} on the left
    closed: bool
    ip: np.ndarray            # <f', f> at the vertices
    df_norm: np.ndarray       # |f'| at the vertices
    degenerate: np.ndarray    # |f'| < 1e-8 mask

    @property
    def n_segments(self) -> int:
        return self.vertices.size - (0 if self.closed else 1)

    def segment_endpoints(self):
        v = self.vertices
        if self.closed:
            return v, np.roll(v, -1)
        return v[:-1], v[1:]

    def length(self) -> float:
        a, b = self.segment_endpoints()
        return float(np.sum(np.abs(b - a)))


@dataclass
class CurveC:
    fmap: HoloMap
    window: Window
    polylines: list[CurvePolyline]

    def total_length(self) -> float:
        return sum(p.length() for p in self.polylines)

    def excluded_length(self) -> float:
        out = 0.0
        for p in self.polylines:
            a, b = p.segment_endpoints()
            da, db = _segment_degenerate(p)
            out += float(np.sum(np.abs(b - a)[da | db]))
        return out

    def n_vertices(self) -> int:
        return sum(p.vertices.size for p in self.polylines)


def _segment_degenerate(p: CurvePolyline):
    if p.closed:
        return p.degenerate, np.roll(p.degenerate, -1)
    return p.degenerate[:-1], p.degenerate[1:]


_MS_SEGMENTS = {
    # case index bit i set means corner i has u > 0; corners ordered
    # (x, y), (x+1, y), (x+1, y+1), (x, y+1); edges b=0, r=1, t=2, l=3
    1: [(3, 0)], 2: [(0, 1)], 3: [(3, 1)], 4: [(1, 2)], 6: [(0, 2)],
    7: [(3, 2)], 8: [(2, 3)], 9: [(2, 0)], 11: [(2, 1)], 12: [(1, 3)],
    13: [(1, 0)], 14: [(0, 3)],
}


def extract_curve(fmap: HoloMap, window: Window) -> CurveC:
    """Trace {|f| = 1} by marching squares, then Newton-project each vertex.

    Ambiguous saddle cells are resolved by the sign at the cell center.
    Each polyline is oriented so {|f| < 1} lies on its left; vertices where
    |f'| < 1e-8 are flagged degenerate and their segments carry no mass.
    """
    xs, ys = window.axes()
    g = window.grid()
    u = fmap.norm_sq(g) - 1.0
    pos = u > 0.0

    # interpolated crossing point on a lattice edge, keyed by edge identity
    points: dict[tuple, complex] = {}

    def edge_point(kind: str, ix: int, iy: int) -> tuple:
        key = (kind, ix, iy)
        if key not in points:
            if kind == "h":
                u0, u1 = u[iy, ix], u[iy, ix + 1]
                t = u0 / (u0 - u1)
                points[key] = complex(xs[ix] + t * (xs[ix + 1] - xs[ix]), ys[iy])
            else:
                u0, u1 = u[iy, ix], u[iy + 1, ix]
                t = u0 / (u0 - u1)
                points[key] = complex(xs[ix], ys[iy] + t * (ys[iy + 1] - ys[iy]))
        return key

    def cell_edge(ix: int, iy: int, e: int) -> tuple:
        if e == 0:
            return edge_point("h", ix, iy)
        if e == 1:
            return edge_point("v", ix + 1, iy)
        if e == 2:
            return edge_point("h", ix, iy + 1)
        return edge_point("v", ix, iy)

    # cells containing a sign change
    cell_pos = pos[:-1, :-1].astype(int) | (pos[:-1, 1:].astype(int) << 1) \
        | (pos[1:, 1:].astype(int) << 2) | (pos[1:, :-1].astype(int) << 3)
    iy_list, ix_list = np.nonzero((cell_pos != 0) & (cell_pos != 15))

    ambiguous = [(ix, iy) for iy, ix in zip(iy_list, ix_list)
                 if cell_pos[iy, ix] in (5, 10)]
    if ambiguous:
        centers = np.array([complex((xs[ix] + xs[ix + 1]) / 2,
                                    (ys[iy] + ys[iy + 1]) / 2)
                            for ix, iy in ambiguous])
        center_pos = fmap.norm_sq(centers) > 1.0
        center_sign = dict(zip(ambiguous, center_pos))

    adjacency: dict[tuple, list[tuple]] = {}

    def add_segment(ka: tuple, kb: tuple):
        adjacency.setdefault(ka, []).append(kb)
        adjacency.setdefault(kb, []).append(ka)

    for iy, ix in zip(iy_list, ix_list):
        case = int(cell_pos[iy, ix])
        if case in (5, 10):
            # saddle: connect according to the center sample
            cpos = center_sign[(ix, iy)]
            if case == 5:
                pairs = [(3, 2), (1, 0)] if cpos else [(3, 0), (1, 2)]
            else:
                pairs = [(0, 1), (2, 3)] if cpos else [(0, 3), (2, 1)]
        else:
            pairs = _MS_SEGMENTS[case]
        for ea, eb in pairs:
            add_segment(cell_edge(ix, iy, ea), cell_edge(ix, iy, eb))

    polylines = _chain(adjacency)
    out = []
    for keys, closed in polylines:
        zs = np.array([points[k] for k in keys], dtype=complex)
        zs, ip_v, dfn = _project_to_curve(fmap, zs)
        degen = dfn < 1e-8
        poly = CurvePolyline(zs, closed, ip_v, dfn, degen)
        _orient(poly)
        out.append(poly)
    return CurveC(fmap, window, out)


def _chain(adjacency: dict):
    """Walk the edge graph into open chains (ends first) and closed loops."""
    visited: set = set()
    chains = []

    def walk(start, nxt):
        path = [start, nxt]
        visited.add((start, nxt))
        visited.add((nxt, start))
        while True:
            options = [k for k in adjacency[path[-1]]
                       if (path[-1], k) not in visited]
            if not options:
                break
            k = options[0]
            visited.add((path[-1], k))
            visited.add((k, path[-1]))
            path.append(k)
        return path

    ends = [k for k, nb in adjacency.items() if len(nb) == 1]
    done: set = set()
    for e in ends:
        if e in done:
            continue
        nb = [k for k in adjacency[e] if (e, k) not in visited]
        if not nb:
            done.add(e)
            continue
        path = walk(e, nb[0])
        done.update((path[0], path[-1]))
        chains.append((path, False))
    for k, nbs in adjacency.items():
        for nb in nbs:
            if (k, nb) not in visited:
                path = walk(k, nb)
                closed = path[0] == path[-1]
                if closed:
                    path = path[:-1]
                chains.append((path, closed))
    return chains


def _project_to_curve(fmap: HoloMap, zs: np.ndarray):
    """Newton-project marching-squares vertices onto {|f| = 1}."""
    zs = zs.copy()
    for _ in range(30):
        fv, fd = fmap.eval_jets(zs)
        n2 = np.sum(np.abs(fv) ** 2, axis=0)
        ip = np.sum(fd * np.conj(fv), axis=0)
        resid = np.abs(np.sqrt(n2) - 1.0)
        if np.all(resid < 1e-10):
            break
        grad = 2.0 * np.conj(ip)  # u_x + i u_y for u = |f|^2
        gn2 = np.abs(grad) ** 2
        ok = (gn2 > 1e-30) & (resid >= 1e-10)
        step = np.where(ok, (n2 - 1.0) * grad / np.where(gn2 > 0, gn2, 1.0), 0.0)
        zs = zs - step
    fv, fd = fmap.eval_jets(zs)
    ip = np.sum(fd * np.conj(fv), axis=0)
    dfn = np.sqrt(np.sum(np.abs(fd) ** 2, axis=0))
    return zs, ip, dfn


def _orient(poly: CurvePolyline):
    """Flip the polyline if {|f| < 1} is not on its left.

    With the correct orientation each element Im(<f',f> dz) is >= 0, so the
    majority vote over segments decides the direction.
    """
    a, b = poly.segment_endpoints()
    ipa, ipb = (poly.ip, np.roll(poly.ip, -1)) if poly.closed \
        else (poly.ip[:-1], poly.ip[1:])
    elements = np.imag((ipa + ipb) * 0.5 * (b - a))
    if np.sum(np.sign(elements)) < 0:
        poly.vertices = poly.vertices[::-1]
        poly.ip = poly.ip[::-1]
        poly.df_norm = poly.df_norm[::-1]
        poly.degenerate = poly.degenerate[::-1]
        if poly.closed:
            # keep vertex 0 fixed so closed loops stay aligned with their keys
            poly.vertices = np.roll(poly.vertices, 1)
            poly.ip = np.roll(poly.ip, 1)
            poly.df_norm = np.roll(poly.df_norm, 1)
            poly.degenerate = np.roll(poly.degenerate, 1)


def curve_segment_masses(curve: CurveC):
    """Per-polyline (midpoints, mass elements, keep mask) for inspection.

    Same midpoint elements as curve_measure_pairing; keep is False on
    segments with a degenerate endpoint.
    """
    out = []
    for p in curve.polylines:
        a, b = p.segment_endpoints()
        if a.size == 0:
            out.append((np.zeros(0, dtype=complex), np.zeros(0),
                        np.zeros(0, dtype=bool)))
            continue
        mids = 0.5 * (a + b)
        fv, fd = curve.fmap.eval_jets(mids)
        ip = np.sum(fd * np.conj(fv), axis=0)
        elements = np.imag(ip * (b - a)) / (2.0 * math.pi)
        da, db = _segment_degenerate(p)
        out.append((mids, elements, ~(da | db)))
    return out


def curve_measure_pairing(curve: CurveC, rho: Optional[Callable] = None) -> float:
    """Pair the singular part with rho by the midpoint rule per segment.

    Mass elements are (1/(2 pi)) Im(<f', f>(mid) (z1 - z0)); an element
    below -1e-9 raises NegativeMassError.  Segments with a degenerate
    endpoint are excluded (their length is reported by the curve object).
    """
    total = 0.0
    for p in curve.polylines:
        a, b = p.segment_endpoints()
        if a.size == 0:
            continue
        mids = 0.5 * (a + b)
        fv, fd = curve.fmap.eval_jets(mids)
        ip = np.sum(fd * np.conj(fv), axis=0)
        elements = np.imag(ip * (b - a)) / (2.0 * math.pi)
        da, db = _segment_degenerate(p)
        keep = ~(da | db)
        if np.any(elements[keep] < -1e-9):
            bad = mids[keep][np.argmin(elements[keep])]
            raise NegativeMassError(
                f"mass element {float(np.min(elements[keep])):.3e} < -1e-9 "
                f"near z = {complex(bad)}; check the 1/(2 pi) normalization "
                f"and the left-side orientation")
        if rho is None:
            total += float(np.sum(elements[keep]))
        else:
            total += float(np.sum(np.asarray(rho(mids))[keep] * elements[keep]))
    return total


# ---------------------------------------------------------------------------
# Limit pairing and mass


def _ac_integral(fmap: HoloMap, rho: Optional[Callable], window: Window,
                 subdiv: int = 3) -> float:
    """Midpoint rule on a subdivided lattice for the AC part.

    The density jumps across {|f| = 1}; midpoint on a 3x-refined lattice
    keeps the crossing-cell error at O(h) with a small constant without
    assuming smoothness, and is O(h^2) elsewhere.
    """
    nfx = (window.nx - 1) * subdiv
    nfy = (window.ny - 1) * subdiv
    hx = (window.x1 - window.x0) / nfx
    hy = (window.y1 - window.y0) / nfy
    xs = window.x0 + (np.arange(nfx) + 0.5) * hx
    ys = window.y0 + (np.arange(nfy) + 0.5) * hy
    g = xs[None, :] + 1j * ys[:, None]
    dens = _ac_density_field(fmap, g)
    if rho is not None:
        dens = dens * np.asarray(rho(g))
    return float(np.sum(dens) * hx * hy)


@dataclass(frozen=True)
class LimitPairing:
    ac: float
    curve: float
    total: float
    potential_form: float
    consistency_diff: float
    excluded_length: float


def limit_pairing(fmap: HoloMap, rho: TestFunction, window: Window) -> LimitPairing:
    """Pair the limit measure with rho, both directly and via the potential.

    The direct route sums the AC integral and the curve pairing; the
    potential route integrates (1/(4 pi)) log^+|f|^2 * laplacian(rho).  Their
    absolute difference is reported, not asserted.
    """
    _check_support(rho, window)
    ac = _ac_integral(fmap, rho.rho, window)
    curve = extract_curve(fmap, window)
    sing = curve_measure_pairing(curve, rho.rho)

    nx, ny = _odd(window.nx), _odd(window.ny)
    xs = np.linspace(window.x0, window.x1, nx)
    ys = np.linspace(window.y0, window.y1, ny)
    g = xs[None, :] + 1j * ys[:, None]
    F = phi(fmap, g) * rho.laplacian(g)
    pot = _simpson2d(F, xs[1] - xs[0], ys[1] - ys[0]) / (4.0 * math.pi)

    total = ac + sing
    return LimitPairing(ac=ac, curve=sing, total=total, potential_form=pot,
                        consistency_diff=abs(total - pot),
                        excluded_length=curve.excluded_length())


@dataclass(frozen=True)
class LimitMass:
    ac: float
    curve: float
    total: float


def limit_mass(fmap: HoloMap, window: Window) -> LimitMass:
    """Total limit mass inside a window (rho = 1; no potential route)."""
    ac = _ac_integral(fmap, None, window)
    curve = extract_curve(fmap, window)
    sing = curve_measure_pairing(curve, None)
    return LimitMass(ac=ac, curve=sing, total=ac + sing)


def prop21_pairing(ell: int, n: int, rho: TestFunction,
                   quad: Window) -> ExpectationPairing:
    """Expected pairing for the coordinate embedding z -> (z, 0, ..., 0)."""
    if ell < 1:
        raise ValueError("need ell >= 1")
    fmap = HoloMap.from_sources(["z"] + ["0"] * (ell - 1))
    return expectation_pairing(fmap, rho, quad, fam=unit_family(), n=n)
