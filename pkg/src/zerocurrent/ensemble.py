"""Random ensembles G_n = sum_k sum_alpha a_alpha g_k(z) f^alpha(z) with iid
standard complex Gaussian coefficients.

Two coefficient layouts represent the same Gaussian process:

* FullTensor: one coefficient per word (j_1, ..., j_k) in {1..ell}^k for each
  degree block k = 0..n; block size ell^k, words ordered with the last index
  fastest (Kronecker order).
* SymmetricMultinomial: one coefficient per multi-index alpha with |alpha| = k,
  weighted by sqrt(k!/alpha!); compositions ordered lexicographically.

Both give E G_n(z) conj(G_n(w)) = sum_k g_k(z) conj(g_k(w)) <f(z), f(w)>^k,
which `kernel` computes in closed form.  The normalizer

    h_n(z) = sum_k |g_k(z)|^2 |f(z)|^(2k) = E |G_n(z)|^2

is evaluated in log space throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .expr import Jet1
from .holomap import HoloMap, PerturbationFamily

__all__ = [
    "FULL_TENSOR",
    "SYMMETRIC",
    "CountOverflowError",
    "EnsembleSpec",
    "CoefficientDraw",
    "RandomFunction",
    "coeff_count",
    "sample",
    "eval_G",
    "eval_G_array",
    "basis_matrix",
    "kernel",
    "log_h_n",
    "h_n",
    "geometric_log_sum",
    "gamma_n",
    "phi",
    "trial_key",
]

FULL_TENSOR = "FullTensor"
SYMMETRIC = "SymmetricMultinomial"

_FULL_TENSOR_MAX = 1 << 20


class CountOverflowError(Exception):
    """FullTensor layout requested with more than 2^20 coefficients."""


def coeff_count(ell: int, n: int, representation: str = SYMMETRIC) -> int:
    """Number of Gaussian coefficients for the given layout."""
    if ell < 1 or n < 0:
        raise ValueError("need ell >= 1 and n >= 0")
    if representation == FULL_TENSOR:
        total = (n + 1) if ell == 1 else (ell ** (n + 1) - 1) // (ell - 1)
        if total > _FULL_TENSOR_MAX:
            raise CountOverflowError(
                f"FullTensor would need {total} coefficients (cap {_FULL_TENSOR_MAX}); "
                f"use {SYMMETRIC}")
        return total
    if representation == SYMMETRIC:
        return math.comb(n + ell, ell)
    raise ValueError(f"unknown representation {representation!r}")


@lru_cache(maxsize=None)
def compositions(k: int, ell: int) -> tuple[tuple[int, ...], ...]:
    """All alpha in N^ell with |alpha| = k, lexicographic, first index slowest."""
    if ell == 1:
        return ((k,),)
    out = []
    for first in range(k, -1, -1):
        for rest in compositions(k - first, ell - 1):
            out.append((first,) + rest)
    return tuple(out)


@lru_cache(maxsize=None)
def multinomial_weights(k: int, ell: int) -> np.ndarray:
    """sqrt(k!/alpha!) aligned with compositions(k, ell)."""
    comps = compositions(k, ell)
    w = np.empty(len(comps))
    for i, alpha in enumerate(comps):
        m = math.factorial(k)
        for a in alpha:
            m //= math.factorial(a)
        w[i] = math.sqrt(m)
    return w


# ---------------------------------------------------------------------------
# Sampling

_SM_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + _SM_GAMMA) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def trial_key(seed: int, trial: int) -> int:
    """Independent 64-bit counter-RNG key for one trial."""
    return (seed & _MASK64) ^ _splitmix64(trial & _MASK64)


@dataclass(frozen=True)
class EnsembleSpec:
    """Frozen description of an ensemble: map, family, degree, layout, seed."""

    fmap: HoloMap
    fam: PerturbationFamily
    n: int
    representation: str = SYMMETRIC
    seed: int = 0

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("degree cutoff n must be >= 0")
        coeff_count(self.fmap.ell, self.n, self.representation)  # validates

    @property
    def ell(self) -> int:
        return self.fmap.ell

    @property
    def n_coeffs(self) -> int:
        return coeff_count(self.fmap.ell, self.n, self.representation)

    def block_sizes(self) -> list[int]:
        if self.representation == FULL_TENSOR:
            return [self.fmap.ell ** k for k in range(self.n + 1)]
        return [len(compositions(k, self.fmap.ell)) for k in range(self.n + 1)]


@dataclass(frozen=True)
class CoefficientDraw:
    trial: int
    representation: str
    coeffs: np.ndarray  # complex, one block per degree, concatenated

    def to_json_record(self) -> dict:
        return {"trial": self.trial, "representation": self.representation,
                "re": self.coeffs.real.tolist(), "im": self.coeffs.imag.tolist()}

    @classmethod
    def from_json_record(cls, rec: dict) -> "CoefficientDraw":
        c = np.asarray(rec["re"], dtype=float) + 1j * np.asarray(rec["im"], dtype=float)
        return cls(trial=int(rec["trial"]), representation=rec["representation"],
                   coeffs=c)


def sample(spec: EnsembleSpec, trial: int) -> "RandomFunction":
    """Draw the coefficient vector for one trial.

    Reproducible per (seed, trial) in isolation: the generator is keyed, not
    sequentially advanced, so trials can run in any order or in parallel.
    """
    m = spec.n_coeffs
    gen = np.random.Generator(np.random.Philox(key=trial_key(spec.seed, trial)))
    parts = gen.normal(0.0, math.sqrt(0.5), size=(m, 2))
    coeffs = parts[:, 0] + 1j * parts[:, 1]
    return RandomFunction(spec, CoefficientDraw(trial, spec.representation, coeffs))


# ---------------------------------------------------------------------------
# Evaluation


def basis_matrix(spec: EnsembleSpec, z: np.ndarray, with_deriv: bool = True):
    """Basis functions v_i(z) aligned with the coefficient layout.

    Returns (vals, ders), each of shape (n_coeffs,) + shape(z); ders is None
    when with_deriv is false.  G_n(z) = coeffs @ vals.
    """
    z = np.asarray(z, dtype=complex)
    flat = z.reshape(-1)
    npts = flat.size
    fv, fd = spec.fmap.eval_jets(flat)  # (ell, npts)
    ell, n = spec.ell, spec.n

    if ell == 1:
        # both layouts coincide: v_k = g_k(z) f(z)^k with unit weights
        vals = np.empty((n + 1, npts), dtype=complex)
        ders = np.empty((n + 1, npts), dtype=complex)
        pv = np.ones(npts, dtype=complex)
        pd = np.zeros(npts, dtype=complex)
        f1, d1 = fv[0], fd[0]
        unit = spec.fam.kind == "unit"
        for k in range(n + 1):
            if unit:
                vals[k] = pv
                ders[k] = pd
            else:
                gv, gd = spec.fam.g_jets(flat, k)
                vals[k] = gv * pv
                ders[k] = gd * pv + gv * pd
            if k < n:
                pd = pd * f1 + pv * d1
                pv = pv * f1
        vals = vals.reshape((-1,) + z.shape)
        ders = ders.reshape((-1,) + z.shape)
        return vals, (ders if with_deriv else None)

    blocks_v: list[np.ndarray] = []
    blocks_d: list[np.ndarray] = []
    if spec.representation == FULL_TENSOR:
        tv = np.ones((1, npts), dtype=complex)
        td = np.zeros((1, npts), dtype=complex)
        for k in range(n + 1):
            gv, gd = spec.fam.g_jets(flat, k)
            blocks_v.append(gv[None, :] * tv)
            blocks_d.append(gd[None, :] * tv + gv[None, :] * td)
            if k < n:
                # extend words by one letter; new index is fastest
                td = (td[:, None, :] * fv[None, :, :]
                      + tv[:, None, :] * fd[None, :, :]).reshape(-1, npts)
                tv = (tv[:, None, :] * fv[None, :, :]).reshape(-1, npts)
    else:
        # monomial jets f^alpha built per degree from the previous degree
        prev = {(0,) * ell: (np.ones(npts, dtype=complex),
                             np.zeros(npts, dtype=complex))}
        for k in range(n + 1):
            if k > 0:
                cur = {}
                for alpha in compositions(k, ell):
                    # reduce along the first positive slot
                    m = next(i for i, a in enumerate(alpha) if a > 0)
                    beta = list(alpha)
                    beta[m] -= 1
                    pv, pd = prev[tuple(beta)]
                    cur[alpha] = (pv * fv[m], pd * fv[m] + pv * fd[m])
                prev = cur
            gv, gd = spec.fam.g_jets(flat, k)
            w = multinomial_weights(k, ell)
            comps = compositions(k, ell)
            mv = np.stack([prev[a][0] for a in comps])
            md = np.stack([prev[a][1] for a in comps])
            blocks_v.append(w[:, None] * (gv[None, :] * mv))
            blocks_d.append(w[:, None] * (gd[None, :] * mv + gv[None, :] * md))

    vals = np.concatenate(blocks_v, axis=0).reshape((-1,) + z.shape)
    ders = np.concatenate(blocks_d, axis=0).reshape((-1,) + z.shape)
    return vals, (ders if with_deriv else None)


@dataclass(frozen=True)
class RandomFunction:
    """One realization G_n; evaluation goes through the basis layout."""

    spec: EnsembleSpec
    draw: CoefficientDraw

    def __post_init__(self):
        if self.draw.representation != self.spec.representation:
            raise ValueError("draw layout does not match spec layout")
        if self.draw.coeffs.shape != (self.spec.n_coeffs,):
            raise ValueError("coefficient vector has the wrong length")


def eval_G_array(rf: RandomFunction, z: np.ndarray):
    """(G(z), G'(z)) over an array of points."""
    vals, ders = basis_matrix(rf.spec, z)
    c = rf.draw.coeffs
    return np.tensordot(c, vals, axes=1), np.tensordot(c, ders, axes=1)


def eval_G(rf: RandomFunction, z: complex) -> Jet1:
    v, d = eval_G_array(rf, np.array([z], dtype=complex))
    return Jet1(complex(v[0]), complex(d[0]))


def kernel(spec: EnsembleSpec, z, w) -> complex:
    """Covariance E G_n(z) conj(G_n(w)), layout independent in exact arithmetic."""
    z = complex(z)
    w = complex(w)
    fz = spec.fmap.eval_components(np.array([z]))[:, 0]
    fw = spec.fmap.eval_components(np.array([w]))[:, 0]
    ip = np.sum(fz * np.conj(fw))
    out = 0j
    for k in range(spec.n + 1):
        gz = spec.fam.g_values(np.array([z]), k)[0]
        gw = spec.fam.g_values(np.array([w]), k)[0]
        out += gz * np.conj(gw) * ip ** k
    return complex(out)


# ---------------------------------------------------------------------------
# Normalizers, in log space


def log_h_n(fmap: HoloMap, fam: PerturbationFamily, n: int, z: np.ndarray) -> np.ndarray:
    """log h_n(z) = log sum_k |g_k(z)|^2 |f(z)|^(2k), streaming log-sum-exp."""
    z = np.asarray(z, dtype=complex)
    with np.errstate(divide="ignore"):
        log_t = np.log(fmap.norm_sq(z))  # -inf where f vanishes

    if fam.kind == "unit":
        return geometric_log_sum(log_t, n)

    acc = np.full(z.shape, -np.inf)
    for k in range(n + 1):
        if fam.depends_on_z:
            absg = np.abs(fam.g_values(z, k))
        else:
            absg = abs(fam.g_scalar(k))
        with np.errstate(divide="ignore"):
            if k == 0:
                term = 2.0 * np.log(absg) + np.zeros(z.shape)
            else:
                term = 2.0 * np.log(absg) + k * log_t
        # online logsumexp: acc = log(e^acc + e^term)
        hi = np.maximum(acc, term)
        lo = np.minimum(acc, term)
        with np.errstate(invalid="ignore"):
            acc = np.where(np.isneginf(hi), -np.inf,
                           hi + np.log1p(np.exp(np.where(np.isneginf(lo), -np.inf,
                                                         lo - hi))))
    return acc


def h_n(fmap: HoloMap, fam: PerturbationFamily, n: int, z: np.ndarray) -> np.ndarray:
    """E |G_n(z)|^2.  Overflows to inf only if the true value does."""
    return np.exp(log_h_n(fmap, fam, n, z))


def geometric_log_sum(L: np.ndarray, n: int) -> np.ndarray:
    """log(sum_{k=0}^{n} e^{kL}) elementwise, stable for all real L.

    Uses the reflection geom(L) = nL + geom(-L) and the log1p closed form for
    the decaying branch; near L = 0 a second-order expansion takes over where
    the closed form loses precision.
    """
    L = np.asarray(L, dtype=float)
    if n == 0:
        return np.zeros(L.shape)
    A = np.abs(L)
    out = np.empty(L.shape)
    tiny = A * (n + 1) < 1e-8
    # |L| small: log(n+1) + n L / 2 + O((nL)^2), applied to -|L|
    out[tiny] = math.log(n + 1) - n * A[tiny] / 2.0
    big = ~tiny
    aa = A[big]
    with np.errstate(divide="ignore"):
        out[big] = (np.log1p(-np.exp(-(n + 1) * aa))
                    - np.log1p(-np.exp(-aa)))
    # reflect where L > 0
    pos = L > 0
    out[pos] += n * L[pos]
    return out


def gamma_n(fmap: HoloMap, n: int, z: np.ndarray) -> np.ndarray:
    """(1/n) log sum_{k<=n} |f(z)|^(2k), the unit-family normalizer per degree."""
    if n < 1:
        raise ValueError("gamma_n needs n >= 1")
    z = np.asarray(z, dtype=complex)
    with np.errstate(divide="ignore"):
        log_t = np.log(fmap.norm_sq(z))
    return geometric_log_sum(log_t, n) / n


def phi(fmap: HoloMap, z: np.ndarray) -> np.ndarray:
    """log^+ |f(z)|^2, the limit of gamma_n."""
    z = np.asarray(z, dtype=complex)
    with np.errstate(divide="ignore"):
        log_t = np.log(fmap.norm_sq(z))
    return np.maximum(log_t, 0.0)
