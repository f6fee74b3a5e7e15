"""Holomorphic maps, perturbation families, hypothesis audit."""

import math

import numpy as np
import pytest

from zerocurrent.holomap import (HoloMap, Window, audit_hypotheses,
                                 builtin_family, family_decay, family_exp_tilt,
                                 family_growth, make_family, unit_family)

WIN = Window(-2.0, 2.0, -2.0, 2.0)


def test_from_sources_roundtrip():
    fmap = HoloMap.from_sources(["z", "0.5*z^2 - 1"])
    assert fmap.ell == 2
    assert HoloMap.from_sources(fmap.as_sources()) is not None
    z = np.array([0.3 + 0.4j, -1.0 + 0j])
    vals = fmap.eval_components(z)
    assert vals.shape == (2, 2)
    assert np.allclose(vals[0], z)
    assert np.allclose(vals[1], 0.5 * z ** 2 - 1)


def test_map_validation():
    with pytest.raises(ValueError):
        HoloMap.from_sources([])
    with pytest.raises(ValueError):
        HoloMap.from_sources(["z + j"])


def test_norm_sq_and_jets():
    fmap = HoloMap.from_sources(["z", "1"])
    z = np.array([1.0 + 1.0j, 0.5j])
    assert np.allclose(fmap.norm_sq(z), np.abs(z) ** 2 + 1)
    vals, ders = fmap.eval_jets(z)
    assert np.allclose(ders[0], 1.0)
    assert np.allclose(ders[1], 0.0)


def test_window():
    w = Window(-1.0, 2.0, 0.0, 1.0, nx=11, ny=5)
    assert w.grid().shape == (5, 11)
    assert w.contains(0.0 + 0.5j)
    assert not w.contains(3.0 + 0.5j)
    assert w.diam == pytest.approx(math.hypot(3.0, 1.0))
    with pytest.raises(ValueError):
        Window(1.0, -1.0, 0.0, 1.0)


def test_builtin_family_values():
    growth = family_growth()
    decay = family_decay()
    tilt = family_exp_tilt()
    unit = unit_family()
    z = 1.0 + 0j
    for j in range(6):
        assert growth.g_scalar(j) == pytest.approx(j + 1)
        assert decay.g_scalar(j) == pytest.approx(1.0 / (j + 1))
        want = np.exp(((-1.0) ** j / (j + 1)) * z)
        assert np.allclose(tilt.g_values(np.array([z]), j), want)
        assert np.allclose(unit.g_values(np.array([0.7j]), j), 1.0)
    assert not unit.depends_on_z
    assert tilt.depends_on_z


def test_builtin_family_lookup():
    for name in ("unit", "growth", "decay", "exp_tilt"):
        assert builtin_family(name).name == name
    with pytest.raises(ValueError):
        builtin_family("nope")


def test_certificate_sequences_monotone():
    fam = family_growth()
    kap = fam.kappa_seq(39)
    assert kap.size == 40
    assert np.all(np.diff(kap) >= 0)
    # running max of log2ceil(j+1): 0,1,2,2,3,...
    assert kap[0] == 0 and kap[1] == 1 and kap[2] == 2 and kap[3] == 2


def test_make_family_expr():
    fam = make_family("expr", name="lin", g="1 + z/(j + 2)",
                      kappa="log2ceil(j + 1)", env_b="1 + z*0")
    assert fam.kind == "expr"
    v = fam.g_values(np.array([0.5 + 0j]), 0)
    assert np.allclose(v, 1.25)


def test_audit_passes_builtins():
    fmap = HoloMap.from_sources(["z"])
    for name in ("unit", "growth", "decay", "exp_tilt"):
        report = audit_hypotheses(fmap, builtin_family(name), WIN, jmax=64)
        assert report.passed, f"{name}: {[c.witness for c in report.checks if not c.passed]}"
        assert report.c_min > 1e-12


def test_audit_catches_vanishing_g0():
    fmap = HoloMap.from_sources(["z"])
    bad = make_family("expr", name="vanish", g="z")
    report = audit_hypotheses(fmap, bad, WIN, jmax=32)
    assert not report.passed
    failed = {c.hypothesis for c in report.checks if not c.passed}
    assert "i" in failed


def test_audit_catches_undeclared_growth():
    # g_j = 3^j grows like B^kappa with B=3, kappa=j, but the declared
    # certificate says B=2: the margin check must fail
    fmap = HoloMap.from_sources(["z"])
    liar = make_family("scalar_seq", name="liar", g="3^j", kappa="j",
                       env_b="2")
    report = audit_hypotheses(fmap, liar, WIN, jmax=32)
    assert not report.passed
    failed = {c.hypothesis for c in report.checks if not c.passed}
    assert "ii" in failed


def test_audit_report_json():
    fmap = HoloMap.from_sources(["z"])
    report = audit_hypotheses(fmap, unit_family(), WIN, jmax=16)
    out = report.to_json()
    assert out["pass"] is True
    assert out["jmax"] == 16
    assert {c["hypothesis"] for c in out["checks"]} >= {"i", "ii", "iii"}


def test_envelope_rejects_nonpositive():
    fam = make_family("expr", name="badenv", g="1 + z*0", env_b="-1")
    fmap = HoloMap.from_sources(["z"])
    with pytest.raises(ValueError):
        audit_hypotheses(fmap, fam, WIN, jmax=8)
