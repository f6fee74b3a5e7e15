"""Monte Carlo driver: sample realizations, extract zeros, pair the
empirical measures (1/n) sum delta_z with test functions, and aggregate.

Per-trial work is a pure function of (seed, trial), so trials can run on any
number of threads; results are always reduced in trial order, making the
aggregates bit-identical across thread counts.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats as sstats

from .ensemble import EnsembleSpec, sample
from .expr import NotPolynomialError
from .holomap import Window, audit_hypotheses
from .theory import (TestFunction, expectation_pairing, family_log_ratio_sup,
                     limit_pairing)
from .zerofind import (BoundaryZeroError, ConvergenceFailure,
                       DepthExceededError, QuadratureStallError, ZeroList,
                       expand_poly, roots_aberth, zeros_subdivide)

__all__ = [
    "Experiment",
    "EmpiricalMeasure",
    "Moments",
    "AuditFailedError",
    "RunFailedError",
    "NoZeroDataError",
    "run",
    "radial_profile",
    "radial_mass",
    "RadialProfile",
    "convergence_sweep",
    "SweepTable",
]


class AuditFailedError(Exception):
    def __init__(self, report):
        failed = [c.hypothesis for c in report.checks if not c.passed]
        super().__init__(f"hypothesis audit failed: {failed}; "
                         "pass skip_audit=True to override (recorded in output)")
        self.report = report


class RunFailedError(Exception):
    def __init__(self, failures, trials):
        super().__init__(f"{len(failures)} of {trials} trials failed "
                         f"(limit is 1%): {failures[:5]}")
        self.failures = failures


class NoZeroDataError(Exception):
    """Zero locations were not retained for this run."""


@dataclass(frozen=True)
class Moments:
    """Streaming (count, mean, M2); merge is associative and commutative."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, x: float) -> "Moments":
        return cls(1, float(x), 0.0)

    def merge(self, other: "Moments") -> "Moments":
        if self.count == 0:
            return other
        if other.count == 0:
            return self
        n = self.count + other.count
        d = other.mean - self.mean
        mean = self.mean + d * other.count / n
        m2 = self.m2 + other.m2 + d * d * self.count * other.count / n
        return Moments(n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count > 1 else 0.0


@dataclass
class Experiment:
    """One Monte Carlo campaign over a fixed ensemble."""

    spec: EnsembleSpec
    window: Window
    trials: int
    rhos: list[TestFunction]
    method: str = "auto"          # aberth | subdivide | auto
    tol: float = 1e-10
    retain_zeros: Optional[bool] = None  # default: retain when n <= 300
    skip_audit: bool = False
    audit_jmax: int = 64
    threads: int = 1
    subdivide_depth: int = 48

    def __post_init__(self):
        if self.trials < 2:
            raise ValueError("need at least 2 trials for a standard error")
        if self.method not in ("aberth", "subdivide", "auto"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.rhos:
            raise ValueError("need at least one test function")
        names = [r.name for r in self.rhos]
        if len(set(names)) != len(names):
            raise ValueError("test function names must be unique")

    @property
    def keeps_zeros(self) -> bool:
        if self.retain_zeros is None:
            return self.spec.n <= 300
        return self.retain_zeros

    def resolved_method(self) -> str:
        if self.method != "auto":
            return self.method
        spec = self.spec
        ok = all(c.is_polynomial for c in spec.fmap.components)
        if ok and spec.fam.kind == "expr":
            ok = spec.fam.g.is_polynomial
        return "aberth" if ok else "subdivide"


@dataclass
class RadialProfile:
    center: complex
    radial_edges: np.ndarray
    radial_mass: np.ndarray       # fraction of zeros per bin
    angular_edges: np.ndarray
    angular_counts: np.ndarray
    chi2_stat: float
    chi2_pvalue: float
    n_zeros: int


@dataclass
class EmpiricalMeasure:
    """Aggregated Monte Carlo pairings plus (optionally) raw zero sets."""

    experiment: Experiment
    per_trial: dict[str, np.ndarray]
    moments: dict[str, Moments]
    counts: np.ndarray
    zeros: Optional[list[ZeroList]]
    failures: list[tuple[int, str]]
    audit: Optional[object]
    method_used: str

    def mean(self, name: str) -> float:
        return self.moments[name].mean

    def stderr(self, name: str) -> float:
        return self.moments[name].stderr

    def to_json(self) -> dict:
        exp = self.experiment
        return {
            "n": exp.spec.n,
            "representation": exp.spec.representation,
            "seed": exp.spec.seed,
            "trials": exp.trials,
            "trials_failed": len(self.failures),
            "method": self.method_used,
            "skip_audit": exp.skip_audit,
            "audit_pass": None if self.audit is None else self.audit.passed,
            "window": {"x0": exp.window.x0, "x1": exp.window.x1,
                       "y0": exp.window.y0, "y1": exp.window.y1},
            "mean_count_in_window": float(np.mean(self.counts)),
            "pairings": {
                name: {"mean": m.mean, "stderr": m.stderr, "trials": m.count}
                for name, m in self.moments.items()
            },
        }


def _zeros_one_trial(exp: Experiment, trial: int, method: str) -> ZeroList:
    rf = sample(exp.spec, trial)
    if method == "aberth":
        zl = roots_aberth(expand_poly(rf), exp.tol)
        return zl.restrict(exp.window)
    zl = zeros_subdivide(rf, exp.window, depth_max=exp.subdivide_depth)
    return zl.restrict(exp.window)


_TRIAL_ERRORS = (ConvergenceFailure, BoundaryZeroError, QuadratureStallError,
                 DepthExceededError, NotPolynomialError)


def run(exp: Experiment) -> EmpiricalMeasure:
    """Run the campaign.  The audit gates the run unless skip_audit is set."""
    audit = None
    if not exp.skip_audit:
        audit = audit_hypotheses(exp.spec.fmap, exp.spec.fam, exp.window,
                                 exp.audit_jmax)
        if not audit.passed:
            raise AuditFailedError(audit)

    method = exp.resolved_method()
    n = exp.spec.n

    def one(trial: int):
        try:
            zl = _zeros_one_trial(exp, trial, method)
        except _TRIAL_ERRORS as e:
            return ("fail", type(e).__name__)
        if n == 0:
            pair = {r.name: 0.0 for r in exp.rhos}
            return ("ok", zl, pair)
        pair = {}
        locs = zl.locations(with_multiplicity=True)
        for r in exp.rhos:
            pair[r.name] = float(np.sum(r.rho(locs))) / n if locs.size else 0.0
        return ("ok", zl, pair)

    if exp.threads > 1:
        with ThreadPoolExecutor(max_workers=exp.threads) as pool:
            results = list(pool.map(one, range(exp.trials)))
    else:
        results = [one(t) for t in range(exp.trials)]

    # reduce strictly in trial order so thread scheduling cannot leak in
    per_trial = {r.name: [] for r in exp.rhos}
    moments = {r.name: Moments() for r in exp.rhos}
    counts = []
    zeros: Optional[list[ZeroList]] = [] if exp.keeps_zeros else None
    failures = []
    for trial, res in enumerate(results):
        if res[0] == "fail":
            failures.append((trial, res[1]))
            continue
        _, zl, pair = res
        counts.append(zl.total_count)
        if zeros is not None:
            zeros.append(zl)
        for name, v in pair.items():
            per_trial[name].append(v)
            moments[name] = moments[name].merge(Moments.of(v))

    if len(failures) > 0.01 * exp.trials:
        raise RunFailedError(failures, exp.trials)

    return EmpiricalMeasure(
        experiment=exp,
        per_trial={k: np.asarray(v) for k, v in per_trial.items()},
        moments=moments,
        counts=np.asarray(counts, dtype=int),
        zeros=zeros,
        failures=failures,
        audit=audit,
        method_used=method,
    )


# ---------------------------------------------------------------------------
# Zero-location statistics


def _pooled_zeros(em: EmpiricalMeasure) -> np.ndarray:
    if em.zeros is None:
        raise NoZeroDataError("run with retain_zeros=True to keep locations")
    locs = [zl.locations(with_multiplicity=True) for zl in em.zeros]
    locs = [l for l in locs if l.size]
    if not locs:
        return np.zeros(0, dtype=complex)
    return np.concatenate(locs)


def radial_mass(em: EmpiricalMeasure, r_in: float, r_out: float,
                center=0j) -> float:
    """Fraction of pooled zeros with r_in <= |z - center| <= r_out."""
    zs = _pooled_zeros(em)
    if zs.size == 0:
        return 0.0
    r = np.abs(zs - complex(center))
    return float(np.mean((r >= r_in) & (r <= r_out)))


def radial_profile(em: EmpiricalMeasure, center=0j, radial_bins: int = 24,
                   angular_bins: int = 16,
                   r_max: Optional[float] = None) -> RadialProfile:
    """Histogram the pooled zeros radially and angularly around a center.

    The angular histogram carries a chi-square uniformity statistic; for a
    rotation-invariant ensemble its p-value should not be small.
    """
    zs = _pooled_zeros(em)
    c = complex(center)
    r = np.abs(zs - c)
    if r_max is None:
        r_max = float(r.max()) * (1.0 + 1e-12) if r.size else 1.0
    redges = np.linspace(0.0, r_max, radial_bins + 1)
    rhist, _ = np.histogram(r, bins=redges)
    mass = rhist / max(zs.size, 1)

    ang = np.angle(zs - c)
    aedges = np.linspace(-math.pi, math.pi, angular_bins + 1)
    ahist, _ = np.histogram(ang, bins=aedges)
    expected = zs.size / angular_bins
    if expected > 0:
        stat = float(np.sum((ahist - expected) ** 2 / expected))
        pval = float(sstats.chi2.sf(stat, angular_bins - 1))
    else:
        stat, pval = 0.0, 1.0
    return RadialProfile(center=c, radial_edges=redges, radial_mass=mass,
                         angular_edges=aedges, angular_counts=ahist,
                         chi2_stat=stat, chi2_pvalue=pval, n_zeros=int(zs.size))


# ---------------------------------------------------------------------------
# Convergence sweep


@dataclass
class SweepTable:
    rows: list[dict]

    COLUMNS = ["n", "rho", "expectation", "quad_error", "mc_mean", "mc_stderr",
               "limit", "gap", "rate_bound", "rate_check"]

    def to_csv_rows(self) -> list[list]:
        return [[row[c] for c in self.COLUMNS] for row in self.rows]

    def column(self, rho_name: str, col: str) -> list:
        return [r[col] for r in self.rows if r["rho"] == rho_name]


def convergence_sweep(exp: Experiment, n_list: list[int],
                      quad: Optional[Window] = None,
                      include_mc: bool = True) -> SweepTable:
    """Deterministic expectations, limits, and gap rates across degrees.

    gap = |expectation - limit| must shrink like (log(n+1) + C_fam)/(4 pi n)
    times the total variation of laplacian(rho); C_fam is the realized sup of
    |log h_n^fam - log h_n^unit| on the quadrature window (0 for the unit
    family).  rate_check = gap * n / log(n+1) stays bounded when that holds.
    """
    if quad is None:
        quad = exp.window
    spec = exp.spec
    if not exp.skip_audit:
        report = audit_hypotheses(spec.fmap, spec.fam, exp.window,
                                  exp.audit_jmax)
        if not report.passed:
            raise AuditFailedError(report)
    limits = {r.name: limit_pairing(spec.fmap, r, quad) for r in exp.rhos}
    tv = {r.name: r.abs_laplacian_integral() for r in exp.rhos}

    rows = []
    for n in sorted(n_list):
        nspec = EnsembleSpec(spec.fmap, spec.fam, n, spec.representation,
                             spec.seed)
        c_fam = 0.0
        if spec.fam.kind != "unit" and n >= 1:
            c_fam = family_log_ratio_sup(spec.fmap, spec.fam, n, quad)
        em = None
        if include_mc:
            nexp = Experiment(spec=nspec, window=exp.window, trials=exp.trials,
                              rhos=exp.rhos, method=exp.method, tol=exp.tol,
                              retain_zeros=False, skip_audit=True,
                              threads=exp.threads)
            em = run(nexp)
        for r in exp.rhos:
            ep = expectation_pairing(nspec, r, quad)
            lim = limits[r.name].total
            gap = abs(ep.value - lim)
            bound = (math.log(n + 1) + c_fam) / (4.0 * math.pi * max(n, 1)) \
                * tv[r.name]
            rows.append({
                "n": n, "rho": r.name,
                "expectation": ep.value, "quad_error": ep.quad_error,
                "mc_mean": None if em is None else em.mean(r.name),
                "mc_stderr": None if em is None else em.stderr(r.name),
                "limit": lim, "gap": gap, "rate_bound": bound,
                "rate_check": gap * max(n, 1) / math.log(n + 1) if n >= 1 else 0.0,
            })
    return SweepTable(rows)
