"""Holomorphic maps f = (f_1, ..., f_ell), perturbation families g_j, and the
numerical audit of the growth hypotheses the limit theory rests on.

A perturbation family supplies the degree weights g_j(z) together with growth
certificates: integer sequences kappa_j, lambda_j, xi_j, eta_j (expressions in
j) and radial envelopes A, B (expressions evaluated at |z|) such that

    (i)    g_0 has no zeros,
    (ii)   |g_j(z)|  <=  B(z)^kappa_j * (1 + |f(z)|)^lambda_j,
    (iii)  A(z)^xi_j * (1 + |f(z)|)^eta_j * |g_j(z)|  >=  c  >  0
           for all j past a tail threshold,

with kappa_j, lambda_j bounded on compact sets after the sequences are made
monotone.  The audit checks these on a finite window and j range and reports
witnesses; it can falsify a family, not prove one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .expr import ExprProgram, parse, parse_certificate

__all__ = [
    "HoloMap",
    "Window",
    "PerturbationFamily",
    "unit_family",
    "family_growth",
    "family_decay",
    "family_exp_tilt",
    "HypothesisCheck",
    "AuditReport",
    "audit_hypotheses",
]


class HoloMapError(ValueError):
    pass


@dataclass(frozen=True)
class HoloMap:
    """A tuple of entire (or meromorphic-with-declared-poles) components."""

    components: tuple[ExprProgram, ...]

    def __post_init__(self):
        if len(self.components) < 1:
            raise HoloMapError("a map needs at least one component")
        for c in self.components:
            if c.uses_param:
                raise HoloMapError("map components may not reference j")

    @classmethod
    def from_sources(cls, sources) -> "HoloMap":
        return cls(tuple(parse(s) for s in sources))

    @property
    def ell(self) -> int:
        return len(self.components)

    def eval_components(self, z: np.ndarray) -> np.ndarray:
        """Component values, shape (ell,) + shape(z)."""
        z = np.asarray(z, dtype=complex)
        return np.stack([c.eval_array(z) for c in self.components])

    def eval_jets(self, z: np.ndarray):
        """(values, derivatives), each shape (ell,) + shape(z)."""
        z = np.asarray(z, dtype=complex)
        vals, ders = [], []
        for c in self.components:
            v, d = c.eval_jet_array(z)
            vals.append(v)
            ders.append(d)
        return np.stack(vals), np.stack(ders)

    def norm_sq(self, z: np.ndarray) -> np.ndarray:
        """|f(z)|^2 = sum_m |f_m(z)|^2, elementwise over z."""
        v = self.eval_components(z)
        return np.sum(np.abs(v) ** 2, axis=0)

    def norm_f(self, z) -> np.ndarray:
        return np.sqrt(self.norm_sq(z))

    def as_sources(self) -> list[str]:
        return [str(c) for c in self.components]


@dataclass(frozen=True)
class Window:
    """Axis-aligned rectangle with a grid resolution."""

    x0: float
    x1: float
    y0: float
    y1: float
    nx: int = 241
    ny: int = 241

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError("window must have positive extent")
        if self.nx < 3 or self.ny < 3:
            raise ValueError("window grid needs at least 3 points per axis")

    @property
    def rect(self) -> tuple[float, float, float, float]:
        return (self.x0, self.x1, self.y0, self.y1)

    @property
    def diam(self) -> float:
        return float(np.hypot(self.x1 - self.x0, self.y1 - self.y0))

    def axes(self):
        return (np.linspace(self.x0, self.x1, self.nx),
                np.linspace(self.y0, self.y1, self.ny))

    def grid(self) -> np.ndarray:
        """Complex grid of shape (ny, nx)."""
        xs, ys = self.axes()
        return xs[None, :] + 1j * ys[:, None]

    def contains(self, z: np.ndarray):
        x, y = np.real(z), np.imag(z)
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)

    def with_grid(self, nx: int, ny: Optional[int] = None) -> "Window":
        return Window(self.x0, self.x1, self.y0, self.y1, nx, ny if ny else nx)


# ---------------------------------------------------------------------------
# Perturbation families

_ZERO = parse("0")
_ONE = parse("1")


def _as_cert(text_or_prog) -> ExprProgram:
    if isinstance(text_or_prog, ExprProgram):
        return text_or_prog
    return parse_certificate(text_or_prog)


def _as_expr(text_or_prog) -> ExprProgram:
    if isinstance(text_or_prog, ExprProgram):
        return text_or_prog
    return parse(text_or_prog)


@dataclass(frozen=True)
class PerturbationFamily:
    """Degree weights g_j plus the growth certificates used by the audit.

    kind is one of 'unit' (g_j = 1), 'scalar_seq' (g_j depends on j only),
    'expr' (g_j depends on z and j).  Certificates are expressions in j; the
    envelopes env_a, env_b are radial profiles evaluated at |z|.
    """

    kind: str
    name: str = "unit"
    g: Optional[ExprProgram] = None
    kappa: ExprProgram = field(default=_ZERO)
    lam: ExprProgram = field(default=_ZERO)
    xi: ExprProgram = field(default=_ZERO)
    eta: ExprProgram = field(default=_ZERO)
    env_a: ExprProgram = field(default=_ONE)
    env_b: ExprProgram = field(default=_ONE)

    def __post_init__(self):
        if self.kind not in ("unit", "scalar_seq", "expr"):
            raise ValueError(f"unknown family kind {self.kind!r}")
        if self.kind == "unit" and self.g is not None:
            raise ValueError("unit family takes no g expression")
        if self.kind != "unit" and self.g is None:
            raise ValueError(f"{self.kind} family needs a g expression")
        if self.kind == "scalar_seq" and self.g.uses_var:
            raise ValueError("scalar_seq weights may not reference z")

    # -- weight evaluation ---------------------------------------------------

    def g_scalar(self, j: int) -> complex:
        if self.kind == "unit":
            return 1.0 + 0j
        if self.kind == "scalar_seq":
            return self.g.eval(0j, j)
        raise ValueError("z-dependent family has no scalar weight")

    def g_values(self, z: np.ndarray, j: int) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        if self.kind == "unit":
            return np.ones(z.shape, dtype=complex)
        if self.kind == "scalar_seq":
            return np.full(z.shape, self.g.eval(0j, j), dtype=complex)
        return self.g.eval_array(z, j)

    def g_jets(self, z: np.ndarray, j: int):
        z = np.asarray(z, dtype=complex)
        if self.kind == "unit":
            return np.ones(z.shape, dtype=complex), np.zeros(z.shape, dtype=complex)
        if self.kind == "scalar_seq":
            return (np.full(z.shape, self.g.eval(0j, j), dtype=complex),
                    np.zeros(z.shape, dtype=complex))
        return self.g.eval_jet_array(z, j)

    @property
    def depends_on_z(self) -> bool:
        return self.kind == "expr" and self.g.uses_var

    # -- certificates ---------------------------------------------------------

    def _cert_seq(self, prog: ExprProgram, jmax: int) -> np.ndarray:
        vals = np.empty(jmax + 1)
        for j in range(jmax + 1):
            v = prog.eval(0j, j)
            if abs(v.imag) > 1e-12:
                raise HoloMapError("certificate value must be real")
            vals[j] = v.real
        # monotone replacement: only running maxima matter for the bounds
        return np.maximum.accumulate(vals)

    def kappa_seq(self, jmax: int) -> np.ndarray:
        return self._cert_seq(self.kappa, jmax)

    def lam_seq(self, jmax: int) -> np.ndarray:
        return self._cert_seq(self.lam, jmax)

    def xi_seq(self, jmax: int) -> np.ndarray:
        return self._cert_seq(self.xi, jmax)

    def eta_seq(self, jmax: int) -> np.ndarray:
        return self._cert_seq(self.eta, jmax)

    def envelope_a(self, z: np.ndarray) -> np.ndarray:
        return self._envelope(self.env_a, z)

    def envelope_b(self, z: np.ndarray) -> np.ndarray:
        return self._envelope(self.env_b, z)

    def _envelope(self, prog: ExprProgram, z: np.ndarray) -> np.ndarray:
        # envelopes are radial profiles: the variable is bound to |z|
        r = np.abs(np.asarray(z, dtype=complex))
        vals = prog.eval_array(r.astype(complex))
        if np.max(np.abs(vals.imag)) > 1e-9 * max(1.0, np.max(np.abs(vals.real))):
            raise HoloMapError("envelope must be real valued on [0, inf)")
        out = vals.real
        if np.any(out <= 0):
            raise HoloMapError("envelope must be strictly positive")
        return out

    def describe(self) -> dict:
        d = {"kind": self.kind, "name": self.name}
        if self.g is not None:
            d["g"] = str(self.g)
        d.update(kappa=str(self.kappa), **{"lambda": str(self.lam)},
                 xi=str(self.xi), eta=str(self.eta),
                 env_a=str(self.env_a), env_b=str(self.env_b))
        return d


def unit_family() -> PerturbationFamily:
    """g_j = 1 for all j.  All certificates are trivial."""
    return PerturbationFamily(kind="unit", name="unit")


def family_growth() -> PerturbationFamily:
    """g_j = j + 1: polynomially growing scalar weights.

    |g_j| = j+1 <= 2^ceil(log2(j+1)), so B = 2 with kappa_j = ceil(log2(j+1));
    the lower bound needs nothing (g_j >= 1), xi = eta = 0.
    """
    return PerturbationFamily(
        kind="scalar_seq", name="growth", g=parse("j+1"),
        kappa=parse_certificate("log2ceil(j+1)"), lam=_ZERO,
        xi=_ZERO, eta=_ZERO,
        env_a=_ONE, env_b=parse("2"),
    )


def family_decay() -> PerturbationFamily:
    """g_j = 1/(j+1): polynomially decaying scalar weights.

    |g_j| <= 1 needs nothing; the lower bound |g_j| >= 2^-ceil(log2(j+1))
    gives A = 2 with xi_j = ceil(log2(j+1)).
    """
    return PerturbationFamily(
        kind="scalar_seq", name="decay", g=parse("1/(j+1)"),
        kappa=_ZERO, lam=_ZERO,
        xi=parse_certificate("log2ceil(j+1)"), eta=_ZERO,
        env_a=parse("2"), env_b=_ONE,
    )


def family_exp_tilt() -> PerturbationFamily:
    """g_j(z) = exp(((-1)^j/(j+1)) z): bounded oscillating exponential tilts.

    |g_j(z)| = e^{±Re z/(j+1)} lies in [e^-|z|, e^|z|], so A = B = exp(|z|)
    with kappa = xi = 1 and lambda = eta = 0.
    """
    return PerturbationFamily(
        kind="expr", name="exp_tilt", g=parse("exp(((-1)^j/(j+1))*z)"),
        kappa=_ONE, lam=_ZERO, xi=_ONE, eta=_ZERO,
        env_a=parse("exp(z)"), env_b=parse("exp(z)"),
    )


_BUILTIN_FAMILIES = {
    "unit": unit_family,
    "growth": family_growth,
    "decay": family_decay,
    "exp_tilt": family_exp_tilt,
}


def builtin_family(name: str) -> PerturbationFamily:
    try:
        return _BUILTIN_FAMILIES[name]()
    except KeyError:
        raise ValueError(f"no builtin family named {name!r}; "
                         f"choose from {sorted(_BUILTIN_FAMILIES)}") from None


def make_family(kind: str, name: str = "", g=None, kappa="0", lam="0",
                xi="0", eta="0", env_a="1", env_b="1") -> PerturbationFamily:
    return PerturbationFamily(
        kind=kind, name=name or kind,
        g=None if g is None else _as_expr(g),
        kappa=_as_cert(kappa), lam=_as_cert(lam),
        xi=_as_cert(xi), eta=_as_cert(eta),
        env_a=_as_expr(env_a), env_b=_as_expr(env_b),
    )


# ---------------------------------------------------------------------------
# Audit


@dataclass
class HypothesisCheck:
    hypothesis: str
    passed: bool
    witness: dict

    def to_json(self) -> dict:
        return {"hypothesis": self.hypothesis, "pass": self.passed,
                "witness": self.witness}


@dataclass
class AuditReport:
    checks: list[HypothesisCheck]
    c_min: float
    compact_bound: float
    jmax: int
    window: Window
    family: str

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "jmax": self.jmax,
            "window": {"x0": self.window.x0, "x1": self.window.x1,
                       "y0": self.window.y0, "y1": self.window.y1,
                       "nx": self.window.nx, "ny": self.window.ny},
            "pass": self.passed,
            "c_min": self.c_min,
            "compact_bound": self.compact_bound,
            "checks": [c.to_json() for c in self.checks],
        }


def _zstr(z: complex) -> str:
    return f"{z.real:.6g}{z.imag:+.6g}i"


def audit_hypotheses(fmap: HoloMap, fam: PerturbationFamily, window: Window,
                     jmax: int = 64) -> AuditReport:
    """Check hypotheses (i)-(iii) and the compactness bounds on a grid.

    The audit can only falsify: every check is a finite sup/inf over the
    window grid and 0 <= j <= jmax, with the witness point reported.
    """
    if jmax < 4:
        raise ValueError("audit needs jmax >= 4")
    z = window.grid().reshape(-1)
    absf = np.sqrt(fmap.norm_sq(z))
    one_plus = 1.0 + absf

    kappa = fam.kappa_seq(jmax)
    lam = fam.lam_seq(jmax)
    xi = fam.xi_seq(jmax)
    eta = fam.eta_seq(jmax)
    env_a = fam.envelope_a(z)
    env_b = fam.envelope_b(z)

    checks: list[HypothesisCheck] = []

    # precompute |g_j| on the grid; scalar families broadcast cheaply
    if fam.depends_on_z:
        absg = np.stack([np.abs(fam.g_values(z, j)) for j in range(jmax + 1)])
    else:
        scal = np.array([abs(fam.g_scalar(j)) for j in range(jmax + 1)])
        absg = scal[:, None] * np.ones((1, z.size))

    # (i) the constant block has no zeros
    g0 = absg[0]
    i0 = int(np.argmin(g0))
    ok_i = bool(g0[i0] > 1e-12)
    checks.append(HypothesisCheck(
        "i", ok_i,
        {"z": _zstr(z[i0]), "min_abs_g0": float(g0[i0]), "threshold": 1e-12}))

    # (ii) upper bound with slack for exact-equality certificates
    log_rhs = (kappa[:, None] * np.log(env_b)[None, :]
               + lam[:, None] * np.log(one_plus)[None, :])
    with np.errstate(divide="ignore"):
        log_lhs = np.log(absg)
    margin = log_rhs - log_lhs  # want >= 0
    jj, pt = np.unravel_index(np.argmin(margin), margin.shape)
    ok_ii = bool(margin[jj, pt] >= -1e-9)
    checks.append(HypothesisCheck(
        "ii", ok_ii,
        {"z": _zstr(z[pt]), "j": int(jj),
         "abs_g": float(absg[jj, pt]),
         "bound": float(np.exp(log_rhs[jj, pt])),
         "log_margin": float(margin[jj, pt])}))

    # (iii) tail lower bound; tail starts halfway through the audited range
    tail0 = jmax // 2
    log_low = (xi[tail0:, None] * np.log(env_a)[None, :]
               + eta[tail0:, None] * np.log(one_plus)[None, :]
               + log_lhs[tail0:])
    jj3, pt3 = np.unravel_index(np.argmin(log_low), log_low.shape)
    with np.errstate(over="ignore"):
        c_min = float(np.exp(log_low[jj3, pt3]))
    ok_iii = bool(np.isfinite(log_low[jj3, pt3]) and c_min > 1e-12)
    checks.append(HypothesisCheck(
        "iii", ok_iii,
        {"z": _zstr(z[pt3]), "j": int(tail0 + jj3), "tail_start": tail0,
         "c_min": c_min, "threshold": 1e-12}))

    # compactness: envelopes and exponents bounded on the window
    b_sup = float(np.max(env_b))
    a_sup = float(np.max(env_a))
    k_sup = float(kappa[-1])
    l_sup = float(lam[-1])
    vals = [a_sup, b_sup, k_sup, l_sup, float(xi[-1]), float(eta[-1])]
    ok_k = bool(all(np.isfinite(v) for v in vals))
    compact_bound = float(max(vals)) if ok_k else float("inf")
    checks.append(HypothesisCheck(
        "compactness", ok_k,
        {"sup_env_a": a_sup, "sup_env_b": b_sup,
         "kappa_max": k_sup, "lambda_max": l_sup,
         "xi_max": float(xi[-1]), "eta_max": float(eta[-1]),
         "bound": compact_bound}))

    return AuditReport(checks=checks, c_min=c_min, compact_bound=compact_bound,
                       jmax=jmax, window=window, family=fam.name)
