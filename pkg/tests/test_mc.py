"""Monte Carlo driver: moments algebra, determinism, gates, statistics."""

import math

import numpy as np
import pytest

import zerocurrent.mc as mc_mod
from zerocurrent.ensemble import EnsembleSpec
from zerocurrent.holomap import (HoloMap, Window, builtin_family, make_family,
                                 unit_family)
from zerocurrent.mc import (AuditFailedError, Experiment, Moments,
                            NoZeroDataError, RunFailedError, convergence_sweep,
                            radial_mass, radial_profile, run)
from zerocurrent.theory import disk_bump, expectation_pairing
from zerocurrent.zerofind import ConvergenceFailure

KAC = HoloMap.from_sources(["z"])
UNIT = unit_family()
WIN = Window(-2.0, 2.0, -2.0, 2.0)
RHO = disk_bump(0j, 1.2, 1.8)


def kac_experiment(n=30, trials=40, seed=11, **kw):
    spec = EnsembleSpec(KAC, UNIT, n, seed=seed)
    return Experiment(spec=spec, window=WIN, trials=trials, rhos=[RHO], **kw)


# ---------------------------------------------------------------------------
# Moments


def test_moments_match_numpy():
    rng = np.random.default_rng(3)
    xs = rng.normal(size=57)
    m = Moments()
    for x in xs:
        m = m.merge(Moments.of(x))
    assert m.count == 57
    assert m.mean == pytest.approx(np.mean(xs), abs=1e-12)
    assert m.variance == pytest.approx(np.var(xs, ddof=1), rel=1e-12)
    assert m.stderr == pytest.approx(math.sqrt(np.var(xs, ddof=1) / 57),
                                     rel=1e-12)


def test_moments_merge_associative():
    rng = np.random.default_rng(4)
    xs = rng.normal(size=30)
    parts = [Moments() for _ in range(3)]
    for i, x in enumerate(xs):
        parts[i % 3] = parts[i % 3].merge(Moments.of(x))
    a, b, c = parts
    left = a.merge(b).merge(c)
    right = a.merge(b.merge(c))
    assert left.count == right.count == 30
    assert left.mean == pytest.approx(right.mean, rel=1e-13)
    assert left.m2 == pytest.approx(right.m2, rel=1e-12)


def test_moments_edge_cases():
    empty = Moments()
    one = Moments.of(2.5)
    assert empty.merge(one) == one
    assert one.merge(empty) == one
    assert one.variance == 0.0
    assert one.stderr == 0.0
    assert empty.stderr == 0.0


# ---------------------------------------------------------------------------
# Experiment configuration


def test_experiment_validation():
    spec = EnsembleSpec(KAC, UNIT, 10, seed=0)
    with pytest.raises(ValueError):
        Experiment(spec=spec, window=WIN, trials=1, rhos=[RHO])
    with pytest.raises(ValueError):
        Experiment(spec=spec, window=WIN, trials=4, rhos=[])
    with pytest.raises(ValueError):
        Experiment(spec=spec, window=WIN, trials=4, rhos=[RHO],
                   method="newton")
    with pytest.raises(ValueError):
        Experiment(spec=spec, window=WIN, trials=4, rhos=[RHO, RHO])


def test_retain_default_follows_degree():
    assert kac_experiment(n=300).keeps_zeros
    assert not kac_experiment(n=301).keeps_zeros
    assert kac_experiment(n=301, retain_zeros=True).keeps_zeros
    assert not kac_experiment(n=10, retain_zeros=False).keeps_zeros


def test_method_resolution():
    assert kac_experiment().resolved_method() == "aberth"
    assert kac_experiment(method="subdivide").resolved_method() == "subdivide"

    entire = HoloMap.from_sources(["exp(z/2) - 1"])
    spec = EnsembleSpec(entire, UNIT, 6, seed=0)
    exp = Experiment(spec=spec, window=WIN, trials=4, rhos=[RHO])
    assert exp.resolved_method() == "subdivide"

    tilt = EnsembleSpec(KAC, builtin_family("exp_tilt"), 6, seed=0)
    exp = Experiment(spec=tilt, window=WIN, trials=4, rhos=[RHO])
    assert exp.resolved_method() == "subdivide"


# ---------------------------------------------------------------------------
# run()


def test_run_matches_exact_expectation():
    exp = kac_experiment(n=30, trials=60)
    em = run(exp)
    assert em.method_used == "aberth"
    assert em.audit is not None and em.audit.passed
    assert not em.failures
    assert em.counts.shape == (60,)
    assert em.per_trial[RHO.name].shape == (60,)
    assert em.moments[RHO.name].count == 60

    quad = Window(-2.0, 2.0, -2.0, 2.0, nx=241, ny=241)
    exact = expectation_pairing(exp.spec, RHO, quad)
    se = em.stderr(RHO.name)
    assert abs(em.mean(RHO.name) - exact.value) <= 3.0 * se + exact.quad_error


def test_run_thread_determinism():
    a = run(kac_experiment(n=25, trials=24, threads=1))
    b = run(kac_experiment(n=25, trials=24, threads=4))
    assert np.array_equal(a.per_trial[RHO.name], b.per_trial[RHO.name])
    assert a.mean(RHO.name) == b.mean(RHO.name)
    assert a.stderr(RHO.name) == b.stderr(RHO.name)
    assert np.array_equal(a.counts, b.counts)


def test_run_audit_gate():
    liar = make_family("scalar_seq", name="liar", g="3^j", kappa="j",
                       env_b="2")
    spec = EnsembleSpec(KAC, liar, 8, seed=0)
    exp = Experiment(spec=spec, window=WIN, trials=4, rhos=[RHO])
    with pytest.raises(AuditFailedError):
        run(exp)
    em = run(Experiment(spec=spec, window=WIN, trials=4, rhos=[RHO],
                        skip_audit=True))
    assert em.audit is None
    assert em.moments[RHO.name].count == 4


def test_run_tolerates_rare_failures(monkeypatch):
    real = mc_mod._zeros_one_trial

    def flaky(exp, trial, method):
        if trial in (5, 77):
            raise ConvergenceFailure("injected")
        return real(exp, trial, method)

    monkeypatch.setattr(mc_mod, "_zeros_one_trial", flaky)
    em = run(kac_experiment(n=8, trials=200))
    assert [t for t, _ in em.failures] == [5, 77]
    assert em.moments[RHO.name].count == 198
    assert em.counts.shape == (198,)


def test_run_fails_above_threshold(monkeypatch):
    real = mc_mod._zeros_one_trial

    def flaky(exp, trial, method):
        if trial in (5, 77):
            raise ConvergenceFailure("injected")
        return real(exp, trial, method)

    monkeypatch.setattr(mc_mod, "_zeros_one_trial", flaky)
    with pytest.raises(RunFailedError) as e:
        run(kac_experiment(n=8, trials=100))
    assert len(e.value.failures) == 2


def test_to_json_shape():
    em = run(kac_experiment(n=12, trials=8))
    out = em.to_json()
    assert out["n"] == 12
    assert out["trials"] == 8
    assert out["trials_failed"] == 0
    assert out["method"] == "aberth"
    assert out["audit_pass"] is True
    p = out["pairings"][RHO.name]
    assert p["trials"] == 8
    assert p["stderr"] >= 0.0


# ---------------------------------------------------------------------------
# Zero-location statistics


def test_radial_statistics():
    em = run(kac_experiment(n=50, trials=30))
    assert em.zeros is not None and len(em.zeros) == 30
    # Kac zeros concentrate near the unit circle
    assert radial_mass(em, 0.5, 1.5) > 0.7
    assert radial_mass(em, 0.0, np.inf) == 1.0

    prof = radial_profile(em)
    assert prof.n_zeros == int(em.counts.sum())
    assert prof.radial_mass.sum() == pytest.approx(1.0, abs=1e-12)
    assert prof.chi2_pvalue > 0.01


def test_radial_requires_zeros():
    em = run(kac_experiment(n=20, trials=8, retain_zeros=False))
    assert em.zeros is None
    with pytest.raises(NoZeroDataError):
        radial_mass(em, 0.0, 1.0)
    with pytest.raises(NoZeroDataError):
        radial_profile(em)


# ---------------------------------------------------------------------------
# Convergence sweep


def test_sweep_gap_shrinks():
    exp = kac_experiment(n=10, trials=4)
    quad = Window(-2.0, 2.0, -2.0, 2.0, nx=241, ny=241)
    table = convergence_sweep(exp, [25, 50, 100], quad=quad, include_mc=False)
    assert len(table.rows) == 3
    gaps = table.column(RHO.name, "gap")
    bounds = table.column(RHO.name, "rate_bound")
    assert gaps[0] > gaps[1] > gaps[2]
    assert all(g <= b for g, b in zip(gaps, bounds))
    assert all(r["mc_mean"] is None for r in table.rows)
    assert all(r["mc_stderr"] is None for r in table.rows)
    csv_rows = table.to_csv_rows()
    assert len(csv_rows[0]) == len(table.COLUMNS)
    assert table.COLUMNS[0] == "n" and "rate_check" in table.COLUMNS


def test_sweep_with_mc_columns():
    exp = kac_experiment(n=10, trials=40)
    quad = Window(-2.0, 2.0, -2.0, 2.0, nx=241, ny=241)
    table = convergence_sweep(exp, [20], quad=quad)
    row = table.rows[0]
    assert row["n"] == 20
    assert abs(row["mc_mean"] - row["expectation"]) <= \
        3.0 * row["mc_stderr"] + row["quad_error"]
    assert row["rate_check"] == pytest.approx(
        row["gap"] * 20 / math.log(21), rel=1e-12)
