"""Zero extraction for realizations G_n.

Three independent routes are kept deliberately separate so they can check
each other:

* `roots_aberth` — simultaneous Ehrlich-Aberth iteration on the expanded
  coefficient array, with Newton-polygon initial circles;
* `roots_companion` — the companion-matrix eigenvalue oracle (numpy.roots);
* `count_zeros_argument` / `zeros_subdivide` — boundary winding numbers with
  dyadic refinement, and recursive subdivision driven by those counts, which
  needs no polynomial structure at all.

Counts from subdivision always satisfy conservation: children of a split cell
sum exactly to their parent because split lines are shared edges (the split
fractions are jittered instead of perturbing child boundaries).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from numpy.polynomial import polynomial as npoly

from .expr import ExprProgram, NotPolynomialError
from .holomap import Window
from .ensemble import (FULL_TENSOR, RandomFunction, compositions,
                       eval_G_array, multinomial_weights)

__all__ = [
    "PolyCoeffs",
    "ZeroItem",
    "ZeroList",
    "ConvergenceFailure",
    "BoundaryZeroError",
    "QuadratureStallError",
    "DepthExceededError",
    "expand_poly",
    "roots_aberth",
    "roots_companion",
    "count_zeros_argument",
    "zeros_subdivide",
    "as_jet_evaluator",
]


class ConvergenceFailure(Exception):
    """Root iteration failed and the companion fallback did too."""

    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class BoundaryZeroError(Exception):
    """A zero stayed glued to the contour through all outward perturbations."""


class QuadratureStallError(Exception):
    """Winding integral refused to settle within the node budget."""


class DepthExceededError(Exception):
    def __init__(self, cells):
        super().__init__(f"{len(cells)} cells unresolved at maximum depth")
        self.cells = cells


# ---------------------------------------------------------------------------
# Polynomial representation


@dataclass(frozen=True)
class PolyCoeffs:
    """Ascending coefficient array c[0] + c[1] z + ... with c[-1] != 0."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coefficients must be a nonempty 1-D array")
        object.__setattr__(self, "coeffs", c)
        if c.size > 1 and c[-1] == 0:
            raise ValueError("leading coefficient is zero; trim first")

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, z):
        return npoly.polyval(np.asarray(z, dtype=complex), self.coeffs)

    def deriv_coeffs(self) -> np.ndarray:
        c = self.coeffs
        if c.size == 1:
            return np.zeros(1, dtype=complex)
        return c[1:] * np.arange(1, c.size)

    def jets(self, z):
        z = np.asarray(z, dtype=complex)
        return (npoly.polyval(z, self.coeffs), npoly.polyval(z, self.deriv_coeffs()))


def _trim(c: np.ndarray, rel: float = 0.0) -> np.ndarray:
    """Drop trailing coefficients at or below rel * max|c|; keep length >= 1."""
    c = np.asarray(c, dtype=complex)
    mag = np.abs(c)
    top = mag.max() if mag.size else 0.0
    thresh = rel * top
    keep = np.nonzero(mag > thresh)[0]
    if keep.size == 0:
        return np.zeros(1, dtype=complex)
    return c[: keep[-1] + 1]


def _acc(total: np.ndarray, part: np.ndarray) -> np.ndarray:
    if part.size > total.size:
        total = np.pad(total, (0, part.size - total.size))
    total[: part.size] += part
    return total


def expand_poly(rf: RandomFunction) -> PolyCoeffs:
    """Expand one realization into a coefficient array.

    Available when every map component and every weight g_k is polynomial in
    z; NotPolynomialError otherwise.  The layout ordering here mirrors
    `ensemble.basis_matrix` exactly, which is what ties the two evaluation
    routes together.
    """
    spec = rf.spec
    fpolys = [c.poly_coeffs() for c in spec.fmap.components]
    ell, n = spec.ell, spec.n
    coeffs = rf.draw.coeffs
    sizes = spec.block_sizes()
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    total = np.zeros(1, dtype=complex)
    if spec.representation == FULL_TENSOR:
        words = [np.array([1.0 + 0j])]
        for k in range(n + 1):
            a = coeffs[offsets[k]: offsets[k + 1]]
            sk = np.zeros(1, dtype=complex)
            for w, aw in zip(words, a):
                sk = _acc(sk, aw * w)
            gk = _gpoly(spec, k)
            total = _acc(total, np.convolve(gk, _trim(sk)))
            if k < n:
                words = [np.convolve(w, fp) for w in words for fp in fpolys]
    else:
        prev = {(0,) * ell: np.array([1.0 + 0j])}
        for k in range(n + 1):
            if k > 0:
                cur = {}
                for alpha in compositions(k, ell):
                    m = next(i for i, v in enumerate(alpha) if v > 0)
                    beta = list(alpha)
                    beta[m] -= 1
                    cur[alpha] = np.convolve(prev[tuple(beta)], fpolys[m])
                prev = cur
            a = coeffs[offsets[k]: offsets[k + 1]]
            w = multinomial_weights(k, ell)
            sk = np.zeros(1, dtype=complex)
            for i, alpha in enumerate(compositions(k, ell)):
                sk = _acc(sk, (a[i] * w[i]) * prev[alpha])
            gk = _gpoly(spec, k)
            total = _acc(total, np.convolve(gk, _trim(sk)))

    return PolyCoeffs(_trim(total, rel=4.0 * np.finfo(float).eps * total.size))


def _gpoly(spec, k: int) -> np.ndarray:
    fam = spec.fam
    if fam.kind == "unit":
        return np.array([1.0 + 0j])
    if fam.kind == "scalar_seq":
        return np.array([fam.g_scalar(k)])
    return fam.g.poly_coeffs(k)


# ---------------------------------------------------------------------------
# Zero lists


@dataclass(frozen=True)
class ZeroItem:
    z: complex
    multiplicity: int = 1
    residual: float = 0.0
    cluster: bool = False  # True when reported as an unresolved tight cluster


@dataclass
class ZeroList:
    items: list[ZeroItem]
    window: Optional[Window] = None  # None means the whole plane

    def __post_init__(self):
        self.items = sorted(self.items, key=lambda it: (it.z.real, it.z.imag))

    def __len__(self) -> int:
        return len(self.items)

    @property
    def total_count(self) -> int:
        return sum(it.multiplicity for it in self.items)

    def locations(self, with_multiplicity: bool = False) -> np.ndarray:
        if with_multiplicity:
            return np.array([it.z for it in self.items
                             for _ in range(it.multiplicity)], dtype=complex)
        return np.array([it.z for it in self.items], dtype=complex)

    def max_residual(self) -> float:
        return max((it.residual for it in self.items), default=0.0)

    def restrict(self, window: Window) -> "ZeroList":
        kept = [it for it in self.items if bool(window.contains(it.z))]
        return ZeroList(kept, window)

    def to_csv_rows(self, trial: int) -> list[list]:
        return [[trial, it.z.real, it.z.imag, it.multiplicity, it.residual]
                for it in self.items]


# ---------------------------------------------------------------------------
# Aberth-Ehrlich


def _newton_polygon_starts(c: np.ndarray) -> np.ndarray:
    """Initial points on circles read off the upper hull of (k, log|c_k|)."""
    D = c.size - 1
    ks = np.nonzero(c)[0]
    logs = np.log(np.abs(c[ks]))
    # upper convex hull, left to right
    hull: list[int] = []
    for i in range(ks.size):
        while len(hull) >= 2:
            i1, i2 = hull[-2], hull[-1]
            cross = ((ks[i2] - ks[i1]) * (logs[i] - logs[i1])
                     - (ks[i] - ks[i1]) * (logs[i2] - logs[i1]))
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    pts = []
    for e in range(len(hull) - 1):
        i1, i2 = hull[e], hull[e + 1]
        k1, k2 = int(ks[i1]), int(ks[i2])
        cnt = k2 - k1
        r = math.exp((logs[i1] - logs[i2]) / cnt)
        # deterministic phase scramble to break symmetric stalls
        phase = 2.0 * math.pi * (np.arange(cnt) + 0.37) / cnt + 0.61 * (e + 1)
        pts.append(r * np.exp(1j * phase))
    out = np.concatenate(pts) if pts else np.zeros(0, dtype=complex)
    if out.size != D:  # hull always spans 0..D once zero roots are stripped
        out = np.resize(out, D)
    return out


def _rel_residuals(c: np.ndarray, x: np.ndarray) -> np.ndarray:
    scale = npoly.polyval(np.abs(x), np.abs(c))
    p = npoly.polyval(x, c)
    return np.abs(p) / np.maximum(scale, np.finfo(float).tiny)


def roots_aberth(p: Union[PolyCoeffs, np.ndarray], tol: float,
                 max_sweeps: int = 500) -> ZeroList:
    """All roots by simultaneous Ehrlich-Aberth iteration.

    Roots closer than 10 * tol * max(1, |z|) are merged into one item whose
    multiplicity is the cluster size.  Falls back to the companion-matrix
    oracle when the iteration stalls; ConvergenceFailure if that fails too.
    """
    c = p.coeffs if isinstance(p, PolyCoeffs) else _trim(np.asarray(p, dtype=complex))
    if c.size < 2:
        if c[0] == 0:
            raise ValueError("the zero polynomial has no root list")
        return ZeroList([], None)

    # zeros at the origin come off as exact roots
    lead_zeros = int(np.nonzero(c)[0][0])
    core = c[lead_zeros:]
    items: list[ZeroItem] = []
    if lead_zeros:
        items.append(ZeroItem(0j, lead_zeros, 0.0))
    if core.size < 2:
        return ZeroList(items, None)

    dc = core[1:] * np.arange(1, core.size)
    x = _newton_polygon_starts(core)
    converged = np.zeros(x.size, dtype=bool)
    ok = False
    for _ in range(max_sweeps):
        res = _rel_residuals(core, x)
        converged |= res <= tol
        if converged.all():
            ok = True
            break
        pv = npoly.polyval(x, core)
        dv = npoly.polyval(x, dc)
        dv = np.where(dv == 0, np.finfo(float).tiny, dv)
        newton = pv / dv
        diff = x[:, None] - x[None, :]
        np.fill_diagonal(diff, np.inf)
        sums = np.sum(1.0 / diff, axis=1)
        corr = newton / (1.0 - newton * sums)
        corr = np.where(np.isfinite(corr), corr, newton)
        x = np.where(converged, x, x - corr)

    if not ok:
        x = np.asarray(np.roots(core[::-1]), dtype=complex)
        res = _rel_residuals(core, x)
        if np.any(res > max(tol, 1e-6)):
            raise ConvergenceFailure(
                "Aberth stalled and companion residuals stayed large",
                residuals=res)

    res = _rel_residuals(core, x)
    # Newton step length estimates the distance to the true zero; for a
    # multiple zero it underestimates by the multiplicity, hence the factor.
    pv = npoly.polyval(x, core)
    dv = npoly.polyval(x, dc)
    nstep = np.abs(pv) / np.maximum(np.abs(dv), np.finfo(float).tiny)
    items.extend(_merge_clusters(x, res, tol, nstep))
    return ZeroList(items, None)


def roots_companion(p: Union[PolyCoeffs, np.ndarray]) -> ZeroList:
    """Companion-matrix root oracle (numpy.roots), same output shape."""
    c = p.coeffs if isinstance(p, PolyCoeffs) else _trim(np.asarray(p, dtype=complex))
    if c.size < 2:
        return ZeroList([], None)
    x = np.asarray(np.roots(c[::-1]), dtype=complex)
    res = _rel_residuals(c, x)
    return ZeroList([ZeroItem(complex(z), 1, float(r)) for z, r in zip(x, res)], None)


def _merge_clusters(x: np.ndarray, res: np.ndarray, tol: float,
                    nstep=None) -> list[ZeroItem]:
    order = np.argsort(x.real, kind="stable")
    x = x[order]
    res = res[order]
    radius = 10.0 * tol * np.maximum(1.0, np.abs(x))
    if nstep is not None:
        # members of a residual-converged cluster sit within a few Newton
        # steps of each other even when far above 10*tol
        radius = np.maximum(radius, 8.0 * nstep[order])
    used = np.zeros(x.size, dtype=bool)
    items = []
    for i in range(x.size):
        if used[i]:
            continue
        members = [i]
        used[i] = True
        jj = i + 1
        while jj < x.size and x[jj].real - x[i].real <= radius[i]:
            if not used[jj] and abs(x[jj] - x[i]) <= max(radius[i], radius[jj]):
                used[jj] = True
                members.append(jj)
            jj += 1
        zc = complex(np.mean(x[members]))
        items.append(ZeroItem(zc, len(members), float(np.max(res[members])),
                              cluster=len(members) > 1))
    return items


# ---------------------------------------------------------------------------
# Winding-number counting


JetEvaluator = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]


def as_jet_evaluator(target, prefer: str = "auto") -> JetEvaluator:
    """Normalize the accepted target kinds to a (values, derivs) callable.

    prefer='poly' expands a RandomFunction first (fast, shares the expansion
    with the algebraic routes); 'direct' always evaluates through the basis
    layout (slower, fully independent of the expansion); 'auto' tries the
    polynomial route and falls back.
    """
    if isinstance(target, PolyCoeffs):
        return target.jets
    if isinstance(target, ExprProgram):
        return target.eval_jet_array
    if isinstance(target, RandomFunction):
        if prefer == "direct":
            return lambda z: eval_G_array(target, z)
        try:
            return expand_poly(target).jets
        except NotPolynomialError:
            if prefer == "poly":
                raise
            return lambda z: eval_G_array(target, z)
    if callable(target):
        return target
    raise TypeError(f"cannot evaluate jets of {type(target).__name__}")


class _BoundaryTooClose(Exception):
    pass


def _rect_path(rect, per_edge: int) -> np.ndarray:
    x0, x1, y0, y1 = rect
    t = np.arange(per_edge) / per_edge
    bottom = x0 + (x1 - x0) * t + 1j * y0
    right = x1 + 1j * (y0 + (y1 - y0) * t)
    top = x1 - (x1 - x0) * t + 1j * y1
    left = x0 + 1j * (y1 - (y1 - y0) * t)
    return np.concatenate([bottom, right, top, left])


def _winding_status(ev: JetEvaluator, rects, max_nodes: int = 1 << 16) -> list[tuple]:
    """Winding numbers for several rectangles, refined together.

    All pending rectangles are evaluated in one call per refinement level
    (cheap for vectorized evaluators).  Each count carries a two-part
    certificate: the complex winding estimate must sit within 0.25 of the
    same integer on two consecutive dyadic levels with imaginary part below
    0.1.  Per-rectangle status: ('ok', count), ('close', None) when a zero
    sits nearer to the contour than the finest resolvable width
    (closed-contour trapezoid error decays like exp(-2 pi dist / spacing)),
    or ('stall', None) when the budget ran out.
    """
    tiny = np.finfo(float).tiny
    min_dist = []
    for rect in rects:
        x0, x1, y0, y1 = rect
        perim = 2.0 * ((x1 - x0) + (y1 - y0))
        min_dist.append(max(4.0 * perim / max_nodes,
                            1e-9 * math.hypot(x1 - x0, y1 - y0)))
    status: list[tuple] = [("stall", None)] * len(rects)
    prev_round: dict[int, Optional[int]] = {i: None for i in range(len(rects))}
    pending = list(range(len(rects)))
    per_edge = 64
    while 4 * per_edge <= max_nodes and pending:
        paths = [_rect_path(rects[i], per_edge) for i in pending]
        g, dg = ev(np.concatenate(paths))
        still = []
        for slot, i in enumerate(pending):
            sl = slice(slot * 4 * per_edge, (slot + 1) * 4 * per_edge)
            gi, dgi = g[sl], dg[sl]
            dist_est = np.abs(gi) / (np.abs(dgi) + tiny)
            if np.any(np.abs(gi) == 0) or np.min(dist_est) < min_dist[i]:
                status[i] = ("close", None)
                continue
            q = dgi / gi
            zs = paths[slot]
            dz = np.roll(zs, -1) - zs
            w = complex(np.sum((q + np.roll(q, -1)) * 0.5 * dz) / (2j * math.pi))
            rounded = round(w.real)
            good = abs(w.real - rounded) < 0.25 and abs(w.imag) < 0.1
            if good and prev_round[i] == rounded:
                status[i] = ("ok", int(rounded))
            else:
                prev_round[i] = rounded if good else None
                still.append(i)
        pending = still
        per_edge *= 2
    return status


def _winding_count(ev: JetEvaluator, rect, max_nodes: int = 1 << 16) -> int:
    kind, count = _winding_status(ev, [rect], max_nodes)[0]
    if kind == "ok":
        return count
    if kind == "close":
        raise _BoundaryTooClose
    raise QuadratureStallError(
        f"winding count on {rect} did not settle within {max_nodes} nodes")


def _grow(rect, amount_frac: float):
    x0, x1, y0, y1 = rect
    gx = (x1 - x0) * amount_frac
    gy = (y1 - y0) * amount_frac
    return (x0 - gx, x1 + gx, y0 - gy, y1 + gy)


def count_zeros_argument(target, rect, max_nodes: int = 1 << 16,
                         prefer: str = "auto") -> int:
    """Number of zeros (with multiplicity) inside an axis-aligned rectangle.

    When a zero sits too close to the boundary the rectangle is grown
    outward by one part in 1e6, at most 8 times, then BoundaryZeroError.
    """
    if isinstance(rect, Window):
        rect = rect.rect
    ev = as_jet_evaluator(target, prefer)
    count, _ = _count_with_retry(ev, rect, max_nodes)
    return count


def _count_with_retry(ev: JetEvaluator, rect, max_nodes: int):
    cur = rect
    for attempt in range(9):
        try:
            return _winding_count(ev, cur, max_nodes), cur
        except _BoundaryTooClose:
            # escalate geometrically: the total growth must clear the
            # resolvable width of the node budget, not just float noise
            cur = _grow(cur, 1e-6 * 3.0 ** attempt)
    raise BoundaryZeroError(f"zero pinned to the boundary of {rect}")


# ---------------------------------------------------------------------------
# Subdivision

_SPLIT_FRACS = (0.5, 0.52, 0.48, 0.55, 0.45, 0.51, 0.49, 0.57, 0.43)


def _batch_polish(ev: JetEvaluator, cells: list[tuple], diam_w: float):
    """Newton-polish the centers of count-1 cells, all points at once.

    Returns (accepted items, rejected cells); a polish is rejected when the
    iterate escapes its cell, which sends the cell back to splitting.
    """
    if not cells:
        return [], []
    zs = np.array([complex((r[0] + r[1]) / 2, (r[2] + r[3]) / 2)
                   for r, _ in cells], dtype=complex)
    alive = np.ones(zs.size, dtype=bool)
    for _ in range(60):
        g, dg = ev(zs)
        bad = dg == 0
        step = np.where(bad, 0.0, g / np.where(bad, 1.0, dg))
        zs = zs - np.where(alive, step, 0.0)
        alive &= np.abs(step) > 1e-15 * np.maximum(1.0, np.abs(zs))
        if not alive.any():
            break
    g, dg = ev(zs)
    resid = np.abs(g) / (np.abs(dg) + np.finfo(float).tiny) / diam_w
    items, rejected = [], []
    for i, (rect, depth) in enumerate(cells):
        x0, x1, y0, y1 = rect
        pad_x = (x1 - x0) * 1e-9
        pad_y = (y1 - y0) * 1e-9
        z = complex(zs[i])
        inside = (x0 - pad_x <= z.real <= x1 + pad_x
                  and y0 - pad_y <= z.imag <= y1 + pad_y)
        # a 60-round Newton can stall in-cell on a cycle far from the zero;
        # only a genuinely converged step (well under cell scale) counts
        if inside and np.isfinite(resid[i]) and resid[i] < 1e-9:
            items.append(ZeroItem(z, 1, float(resid[i])))
        else:
            rejected.append((rect, 1, depth))
    return items, rejected


def zeros_subdivide(target, window: Window, depth_max: int = 48,
                    max_nodes: int = 1 << 16, prefer: str = "auto",
                    strict: bool = False) -> ZeroList:
    """Extract zeros by recursive quadrisection on winding counts.

    Splits share exact edges (jittered split fractions, never perturbed
    children), so child counts always sum to the parent count.  Cells with
    count 1 are polished by Newton from the center.  Cells whose diameter
    falls below 1e-7 of the window diameter are reported as clusters with
    their count as multiplicity.  With strict=True, cells still unresolved
    at depth_max raise DepthExceededError instead.

    Work is batched per depth round: one progressively refined winding pass
    over every splitting cell, one vectorized Newton pass over every
    polishable cell.
    """
    ev = as_jet_evaluator(target, prefer)
    diam_w = window.diam
    total, top = _count_with_retry(ev, window.rect, max_nodes)
    items: list[ZeroItem] = []
    unresolved: list[tuple] = []
    round_cells: list[tuple] = [(top, total, 0)]
    while round_cells:
        singles: list[tuple] = []
        to_split: list[tuple] = []
        for rect, count, depth in round_cells:
            if count == 0:
                continue
            x0, x1, y0, y1 = rect
            diam = math.hypot(x1 - x0, y1 - y0)
            if count == 1:
                singles.append((rect, depth))
            elif diam < 1e-7 * diam_w:
                items.append(ZeroItem(complex((x0 + x1) / 2, (y0 + y1) / 2),
                                      count, diam / diam_w, cluster=True))
            elif depth >= depth_max:
                unresolved.append((rect, count))
            else:
                to_split.append((rect, count, depth))

        polished, rejected = _batch_polish(ev, singles, diam_w)
        items.extend(polished)
        for rect, count, depth in rejected:
            x0, x1, y0, y1 = rect
            diam = math.hypot(x1 - x0, y1 - y0)
            if diam < 1e-7 * diam_w:
                items.append(ZeroItem(complex((x0 + x1) / 2, (y0 + y1) / 2),
                                      count, diam / diam_w, cluster=True))
            elif depth >= depth_max:
                unresolved.append((rect, count))
            else:
                to_split.append((rect, count, depth))

        next_round: list[tuple] = []
        attempt = 0
        active = list(to_split)
        while active and attempt < len(_SPLIT_FRACS):
            fx = _SPLIT_FRACS[attempt]
            fy = _SPLIT_FRACS[(attempt + 1) % len(_SPLIT_FRACS)]
            quads_all: list[tuple] = []
            for rect, _, _ in active:
                x0, x1, y0, y1 = rect
                xm = x0 + fx * (x1 - x0)
                ym = y0 + fy * (y1 - y0)
                quads_all.extend([(x0, xm, y0, ym), (xm, x1, y0, ym),
                                  (x0, xm, ym, y1), (xm, x1, ym, y1)])
            statuses = _winding_status(ev, quads_all, max_nodes)
            retry = []
            for idx, (rect, count, depth) in enumerate(active):
                st = statuses[4 * idx: 4 * idx + 4]
                if all(k == "ok" for k, _ in st) and sum(c for _, c in st) == count:
                    for q, (_, cq) in zip(quads_all[4 * idx: 4 * idx + 4], st):
                        next_round.append((q, cq, depth + 1))
                else:
                    # a zero sat on (or slipped through) the shared edge;
                    # try the next split fraction for this cell only
                    retry.append((rect, count, depth))
            active = retry
            attempt += 1
        unresolved.extend((rect, count) for rect, count, _ in active)
        round_cells = next_round

    if unresolved:
        if strict:
            raise DepthExceededError(unresolved)
        for rect, count in unresolved:
            x0, x1, y0, y1 = rect
            items.append(ZeroItem(complex((x0 + x1) / 2, (y0 + y1) / 2),
                                  count, math.hypot(x1 - x0, y1 - y0) / diam_w,
                                  cluster=True))
    return ZeroList(items, window)
