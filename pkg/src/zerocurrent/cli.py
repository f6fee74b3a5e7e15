"""Command line front end.

Subcommands: audit, theory, simulate, compare, selftest.  Configuration is
TOML plus mirrored command line overrides; every output file is stamped with
a digest of the fully resolved configuration (sha256 of canonical JSON,
first 16 hex digits) so downstream steps can refuse mismatched inputs.

Exit codes: 0 success, 1 failed verdict or hypothesis audit, 2 bad
configuration or usage, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:          # python 3.10
    import tomli as tomllib

import numpy as np

from . import __version__
from .ensemble import (FULL_TENSOR, SYMMETRIC, CountOverflowError,
                       EnsembleSpec)
from .expr import ExprError
from .holomap import (HoloMap, PerturbationFamily, Window, audit_hypotheses,
                      builtin_family, make_family, unit_family)
from .mc import (AuditFailedError, Experiment, RunFailedError,
                 convergence_sweep, run)
from .selftest import run_selftest
from .theory import (NegativeMassError, OnCurveError, SupportEscapeError,
                     TestFunction, annulus_bump, curve_measure_pairing,
                     curve_segment_masses, disk_bump, expectation_pairing,
                     extract_curve, limit_pairing, tensor_bump)
from .zerofind import (BoundaryZeroError, ConvergenceFailure,
                       DepthExceededError, QuadratureStallError)

__all__ = ["main", "config_digest", "resolve_config", "ConfigError"]

_NUMERICAL_ERRORS = (ConvergenceFailure, BoundaryZeroError,
                     QuadratureStallError, DepthExceededError,
                     RunFailedError, NegativeMassError, OnCurveError,
                     SupportEscapeError, CountOverflowError)


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# Configuration


_RUN_DEFAULTS = {
    "n": None,
    "n_list": None,
    "trials": 64,
    "seed": 0,
    "representation": SYMMETRIC,
    "method": "auto",
    "threads": 1,
    "jmax": 64,
    "skip_audit": False,
    "tol": 1e-10,
    "retain_zeros": None,
    "outdir": "out",
}

_WINDOW_DEFAULTS = {"x0": -2.0, "x1": 2.0, "y0": -2.0, "y1": 2.0,
                    "nx": 241, "ny": 241}

_FAMILY_KEYS = {"preset", "kind", "name", "g", "kappa", "lam", "xi", "eta",
                "env_a", "env_b"}

_RHO_KEYS = {"kind", "name", "center", "r_plateau", "r_support", "radii",
             "core", "margin"}


def _check_keys(section: str, table: dict, allowed) -> None:
    unknown = set(table) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: "
                          f"{', '.join(sorted(unknown))}")


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML in {path}: {e}") from None


def resolve_config(raw: dict, overrides: dict) -> dict:
    """Merge file config with CLI overrides into one canonical dict."""
    _check_keys("", raw, {"map", "family", "window", "run", "rho"})
    cfg = {}

    m = dict(raw.get("map", {}))
    _check_keys("map", m, {"components"})
    comps = overrides.get("map") or m.get("components")
    if not comps:
        raise ConfigError("no map: set [map] components or --map")
    if isinstance(comps, str):
        comps = [c.strip() for c in comps.split(";") if c.strip()]
    if not isinstance(comps, list) or not all(isinstance(c, str) for c in comps):
        raise ConfigError("[map] components must be a list of strings")
    cfg["map"] = {"components": list(comps)}

    f = dict(raw.get("family", {}))
    _check_keys("family", f, _FAMILY_KEYS)
    if overrides.get("family"):
        f = {"preset": overrides["family"]}
    if not f:
        f = {"preset": "unit"}
    if "preset" in f:
        if len(f) != 1:
            raise ConfigError("[family] preset does not mix with other keys")
        cfg["family"] = {"preset": str(f["preset"])}
    else:
        kind = f.get("kind")
        if kind not in ("unit", "scalar_seq", "expr"):
            raise ConfigError("[family] kind must be unit, scalar_seq or expr")
        fam = {"kind": kind}
        for key in ("name", "g", "kappa", "lam", "xi", "eta",
                    "env_a", "env_b"):
            if key in f:
                fam[key] = str(f[key])
        if kind != "unit" and "g" not in fam:
            raise ConfigError(f"[family] kind={kind} needs g")
        cfg["family"] = fam

    w = dict(_WINDOW_DEFAULTS)
    wt = dict(raw.get("window", {}))
    _check_keys("window", wt, _WINDOW_DEFAULTS)
    w.update(wt)
    if overrides.get("window"):
        try:
            x0, x1, y0, y1 = (float(v) for v in overrides["window"].split(","))
        except ValueError:
            raise ConfigError("--window expects x0,x1,y0,y1") from None
        w.update({"x0": x0, "x1": x1, "y0": y0, "y1": y1})
    cfg["window"] = {"x0": float(w["x0"]), "x1": float(w["x1"]),
                     "y0": float(w["y0"]), "y1": float(w["y1"]),
                     "nx": int(w["nx"]), "ny": int(w["ny"])}

    r = dict(_RUN_DEFAULTS)
    rt = dict(raw.get("run", {}))
    _check_keys("run", rt, _RUN_DEFAULTS)
    r.update(rt)
    for key in ("n", "trials", "seed", "method", "threads", "jmax",
                "skip_audit", "tol", "retain_zeros", "representation",
                "outdir", "n_list"):
        if overrides.get(key) is not None:
            r[key] = overrides[key]
    if isinstance(r["n_list"], str):
        try:
            r["n_list"] = [int(v) for v in r["n_list"].split(",")]
        except ValueError:
            raise ConfigError("--n-list expects comma separated integers") from None
    if r["representation"] not in (FULL_TENSOR, SYMMETRIC):
        raise ConfigError(f"unknown representation {r['representation']!r}")
    if r["method"] not in ("auto", "aberth", "subdivide"):
        raise ConfigError(f"unknown method {r['method']!r}")
    if r["n"] is not None and int(r["n"]) < 0:
        raise ConfigError("n must be >= 0")
    cfg["run"] = {
        "n": None if r["n"] is None else int(r["n"]),
        "n_list": None if r["n_list"] is None else [int(v) for v in r["n_list"]],
        "trials": int(r["trials"]),
        "seed": int(r["seed"]),
        "representation": str(r["representation"]),
        "method": str(r["method"]),
        "threads": int(r["threads"]),
        "jmax": int(r["jmax"]),
        "skip_audit": bool(r["skip_audit"]),
        "tol": float(r["tol"]),
        "retain_zeros": r["retain_zeros"] if r["retain_zeros"] is None
        else bool(r["retain_zeros"]),
        "outdir": str(r["outdir"]),
    }

    rhos = []
    for i, table in enumerate(raw.get("rho", [])):
        t = dict(table)
        _check_keys(f"rho #{i + 1}", t, _RHO_KEYS)
        kind = t.get("kind", "disk")
        if kind not in ("disk", "annulus", "tensor"):
            raise ConfigError(f"[[rho]] kind must be disk, annulus or tensor, "
                              f"got {kind!r}")
        entry = {"kind": kind, "name": str(t.get("name", f"{kind}{i + 1}"))}
        if kind in ("disk", "annulus"):
            c = t.get("center", [0.0, 0.0])
            if not (isinstance(c, list) and len(c) == 2):
                raise ConfigError("[[rho]] center must be [x, y]")
            entry["center"] = [float(c[0]), float(c[1])]
        if kind == "disk":
            entry["r_plateau"] = float(t.get("r_plateau", 1.0))
            entry["r_support"] = float(t.get("r_support", 1.5))
        elif kind == "annulus":
            radii = t.get("radii")
            if not (isinstance(radii, list) and len(radii) == 4):
                raise ConfigError("[[rho]] annulus needs radii = [r0,r1,r2,r3]")
            entry["radii"] = [float(v) for v in radii]
        else:
            core = t.get("core")
            if not (isinstance(core, list) and len(core) == 4):
                raise ConfigError("[[rho]] tensor needs core = [x0,x1,y0,y1]")
            entry["core"] = [float(v) for v in core]
            entry["margin"] = float(t.get("margin", 0.5))
        rhos.append(entry)
    names = [e["name"] for e in rhos]
    if len(set(names)) != len(names):
        raise ConfigError("[[rho]] names must be unique")
    cfg["rho"] = rhos
    return cfg


def config_digest(cfg: dict) -> str:
    """Digest of the scientific content; outdir and threads do not count."""
    trimmed = json.loads(json.dumps(cfg))
    trimmed.get("run", {}).pop("outdir", None)
    trimmed.get("run", {}).pop("threads", None)
    blob = json.dumps(trimmed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Builders


def build_map(cfg: dict) -> HoloMap:
    try:
        return HoloMap.from_sources(cfg["map"]["components"])
    except (ExprError, ValueError) as e:
        raise ConfigError(f"bad map: {e}") from None


def build_family(cfg: dict) -> PerturbationFamily:
    f = cfg["family"]
    try:
        if "preset" in f:
            return builtin_family(f["preset"])
        if f["kind"] == "unit":
            return unit_family()
        kw = {k: f[k] for k in ("kappa", "lam", "xi", "eta", "env_a", "env_b")
              if k in f}
        return make_family(f["kind"], name=f.get("name", ""), g=f["g"], **kw)
    except (ExprError, ValueError, KeyError) as e:
        raise ConfigError(f"bad family: {e}") from None


def build_window(cfg: dict) -> Window:
    w = cfg["window"]
    try:
        return Window(w["x0"], w["x1"], w["y0"], w["y1"], w["nx"], w["ny"])
    except ValueError as e:
        raise ConfigError(f"bad window: {e}") from None


def build_rhos(cfg: dict) -> list[TestFunction]:
    out = []
    for e in cfg["rho"]:
        try:
            if e["kind"] == "disk":
                c = complex(e["center"][0], e["center"][1])
                out.append(disk_bump(c, e["r_plateau"], e["r_support"],
                                     name=e["name"]))
            elif e["kind"] == "annulus":
                c = complex(e["center"][0], e["center"][1])
                out.append(annulus_bump(c, e["radii"], name=e["name"]))
            else:
                out.append(tensor_bump(e["core"], e["margin"], name=e["name"]))
        except ValueError as err:
            raise ConfigError(f"bad rho {e['name']!r}: {err}") from None
    return out


def _require_rhos(cfg: dict) -> list[TestFunction]:
    rhos = build_rhos(cfg)
    if not rhos:
        raise ConfigError("this subcommand needs at least one [[rho]] table")
    return rhos


# ---------------------------------------------------------------------------
# Output helpers


def _json_default(o):
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)
        fh.write("\n")


def _write_csv(path: Path, header: list, rows, digest: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header) + ["config_digest", "version"])
        for row in rows:
            w.writerow(list(row) + [digest, __version__])


def _read_json(path: Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"missing input: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}") from None


# ---------------------------------------------------------------------------
# Subcommands


def cmd_audit(cfg: dict, outdir: Path) -> int:
    fmap = build_map(cfg)
    fam = build_family(cfg)
    window = build_window(cfg)
    report = audit_hypotheses(fmap, fam, window, cfg["run"]["jmax"])
    digest = config_digest(cfg)
    out = report.to_json()
    out["config_digest"] = digest
    out["version"] = __version__
    _write_json(outdir / "audit.json", out)
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.hypothesis}")
    print(f"audit: {'PASS' if report.passed else 'FAIL'} "
          f"(c_min={report.c_min:.6g}, jmax={report.jmax}) "
          f"-> {outdir / 'audit.json'}")
    return 0 if report.passed else 1


def cmd_theory(cfg: dict, outdir: Path, curve_scale: float = 1.0) -> int:
    fmap = build_map(cfg)
    window = build_window(cfg)
    rhos = _require_rhos(cfg)
    digest = config_digest(cfg)
    n = cfg["run"]["n"]

    from .theory import _ac_density_field
    dens = _ac_density_field(fmap, window.grid())
    xs, ys = window.axes()
    rows = []
    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            rows.append([repr(float(x)), repr(float(y)),
                         repr(float(dens[iy, ix]))])
    _write_csv(outdir / "density.csv", ["x", "y", "density"], rows, digest)

    curve = extract_curve(fmap, window)
    crows = []
    for ci, (p, (mids, elems, keep)) in enumerate(
            zip(curve.polylines, curve_segment_masses(curve))):
        a, _ = p.segment_endpoints()
        for vi in range(p.vertices.size):
            seg_mass = float(elems[vi]) * curve_scale \
                if vi < elems.size and keep[vi] else 0.0
            crows.append([ci, vi, repr(float(p.vertices[vi].real)),
                          repr(float(p.vertices[vi].imag)),
                          repr(seg_mass), int(p.closed)])
    _write_csv(outdir / "curve.csv",
               ["component", "idx", "x", "y", "seg_mass", "closed"],
               crows, digest)

    spec = None
    if n is not None:
        fam = build_family(cfg)
        spec = EnsembleSpec(fmap, fam, n, cfg["run"]["representation"],
                            cfg["run"]["seed"])

    entries = []
    for rho in rhos:
        lp = limit_pairing(fmap, rho, window)
        curve_part = lp.curve * curve_scale
        total = lp.ac + curve_part
        entry = {
            "name": rho.name,
            "rho": rho.describe(),
            "limit": {
                "ac": lp.ac,
                "curve": curve_part,
                "total": total,
                "potential_form": lp.potential_form,
                "consistency_diff": abs(total - lp.potential_form),
                "excluded_length": lp.excluded_length,
            },
        }
        if spec is not None:
            ep = expectation_pairing(spec, rho, window)
            entry["expectation"] = {"n": n, "value": ep.value,
                                    "quad_error": ep.quad_error}
        entries.append(entry)

    out = {
        "config_digest": digest,
        "version": __version__,
        "window": cfg["window"],
        "map": cfg["map"]["components"],
        "family": cfg["family"],
        "curve": {
            "total_mass": curve_measure_pairing(curve) * curve_scale,
            "length": curve.total_length(),
            "excluded_length": curve.excluded_length(),
            "components": len(curve.polylines),
        },
        "rhos": entries,
    }
    if curve_scale != 1.0:
        out["debug_curve_scale"] = curve_scale
    _write_json(outdir / "pairings.json", out)

    if cfg["run"]["n_list"]:
        fam = build_family(cfg)
        base = EnsembleSpec(fmap, fam, max(cfg["run"]["n_list"]),
                            cfg["run"]["representation"], cfg["run"]["seed"])
        exp = Experiment(spec=base, window=window, trials=2, rhos=rhos,
                         skip_audit=True)
        table = convergence_sweep(exp, cfg["run"]["n_list"], include_mc=False)
        srows = [[r["n"], r["rho"], repr(r["expectation"]),
                  repr(r["quad_error"]), repr(r["limit"]), repr(r["gap"]),
                  repr(r["rate_bound"]), repr(r["rate_check"])]
                 for r in table.rows]
        _write_csv(outdir / "sweep.csv",
                   ["n", "rho", "expectation", "quad_error", "limit", "gap",
                    "rate_bound", "rate_check"], srows, digest)

    print(f"theory: wrote density.csv, curve.csv, pairings.json"
          f"{', sweep.csv' if cfg['run']['n_list'] else ''} -> {outdir}")
    return 0


def cmd_simulate(cfg: dict, outdir: Path) -> int:
    r = cfg["run"]
    if r["n"] is None:
        raise ConfigError("simulate needs [run] n (or --n)")
    fmap = build_map(cfg)
    fam = build_family(cfg)
    window = build_window(cfg)
    rhos = _require_rhos(cfg)
    digest = config_digest(cfg)

    spec = EnsembleSpec(fmap, fam, r["n"], r["representation"], r["seed"])
    exp = Experiment(spec=spec, window=window, trials=r["trials"], rhos=rhos,
                     method=r["method"], tol=r["tol"],
                     retain_zeros=r["retain_zeros"],
                     skip_audit=r["skip_audit"], audit_jmax=r["jmax"],
                     threads=r["threads"])
    em = run(exp)

    if em.audit is not None:
        aud = em.audit.to_json()
        aud["config_digest"] = digest
        aud["version"] = __version__
        _write_json(outdir / "audit.json", aud)

    out = em.to_json()
    out["config_digest"] = digest
    out["version"] = __version__
    out["per_trial"] = {k: [float(v) for v in a]
                        for k, a in em.per_trial.items()}
    _write_json(outdir / "empirical.json", out)

    if em.zeros is not None:
        zrows = []
        for trial, zl in enumerate(em.zeros):
            for row in zl.to_csv_rows(trial):
                zrows.append([row[0], repr(row[1]), repr(row[2]), row[3],
                              repr(row[4])])
        _write_csv(outdir / "zeros.csv",
                   ["trial", "x", "y", "multiplicity", "residual"],
                   zrows, digest)

    for rho in rhos:
        print(f"simulate: <{rho.name}> = {em.mean(rho.name):.6f} "
              f"+/- {em.stderr(rho.name):.2e} ({em.moments[rho.name].count} trials)")
    print(f"simulate: method={em.method_used}, "
          f"mean in-window count {float(np.mean(em.counts)):.2f} -> {outdir}")
    return 0


def cmd_compare(cfg: dict, outdir: Path, empirical_path, pairings_path) -> int:
    digest = config_digest(cfg)
    emp = _read_json(empirical_path or outdir / "empirical.json")
    pai = _read_json(pairings_path or outdir / "pairings.json")
    for label, obj in (("empirical", emp), ("pairings", pai)):
        d = obj.get("config_digest")
        if d != digest:
            raise ConfigError(
                f"config digest mismatch: {label} input has {d}, "
                f"resolved config has {digest}; refusing to compare")

    n = emp["n"]
    limit_by_name = {e["name"]: e for e in pai["rhos"]}
    rows = []
    verdict_rhos = {}
    reasons = []
    ok_all = True
    if emp.get("audit_pass") is False:
        ok_all = False
        reasons.append("hypothesis audit failed")
    for name, stats in emp["pairings"].items():
        if name not in limit_by_name:
            raise ConfigError(f"rho {name!r} missing from pairings input")
        entry = limit_by_name[name]
        if "expectation" not in entry or entry["expectation"]["n"] != n:
            raise ConfigError(
                f"pairings input has no expectation at n={n} for {name!r}; "
                "rerun the theory subcommand with [run] n set")
        ev = entry["expectation"]
        mc, se = stats["mean"], stats["stderr"]
        gap = abs(mc - ev["value"])
        tol = 3.0 * se + ev["quad_error"] + 1e-9
        cons = entry["limit"]["consistency_diff"]
        ok_mc = gap <= tol
        ok_cons = cons <= 5e-3
        ok = ok_mc and ok_cons
        if not ok_mc:
            reasons.append(f"{name}: |mc - expectation| = {gap:.3e} "
                           f"exceeds {tol:.3e}")
        if not ok_cons:
            reasons.append(f"{name}: limit consistency_diff = {cons:.3e} "
                           f"exceeds 5e-3")
        ok_all = ok_all and ok
        rows.append([name, n, repr(mc), repr(se), repr(ev["value"]),
                     repr(ev["quad_error"]), repr(entry["limit"]["total"]),
                     repr(gap), repr(tol), repr(cons), int(ok)])
        verdict_rhos[name] = {
            "mc_mean": mc, "mc_stderr": se,
            "expectation": ev["value"], "quad_error": ev["quad_error"],
            "limit": entry["limit"]["total"],
            "mc_gap": gap, "mc_tol": tol,
            "consistency_diff": cons,
            "ok": ok,
        }

    _write_csv(outdir / "compare.csv",
               ["rho", "n", "mc_mean", "mc_stderr", "expectation",
                "quad_error", "limit", "mc_gap", "mc_tol",
                "consistency_diff", "ok"], rows, digest)
    verdict = {
        "config_digest": digest,
        "version": __version__,
        "ok": ok_all,
        "n": n,
        "trials": emp["trials"],
        "audit_skipped": emp.get("audit_pass") is None,
        "rhos": verdict_rhos,
        "reasons": reasons,
    }
    _write_json(outdir / "verdict.json", verdict)
    for name, v in verdict_rhos.items():
        print(f"{'PASS' if v['ok'] else 'FAIL'}  {name}: mc={v['mc_mean']:.6f} "
              f"expectation={v['expectation']:.6f} gap={v['mc_gap']:.2e} "
              f"tol={v['mc_tol']:.2e} consistency={v['consistency_diff']:.2e}")
    print(f"verdict: {'PASS' if ok_all else 'FAIL'} -> {outdir / 'verdict.json'}")
    return 0 if ok_all else 1


def cmd_selftest(outdir) -> int:
    results = run_selftest()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:30s} {r.detail}")
    ok = all(r.passed for r in results)
    if outdir is not None:
        _write_json(Path(outdir) / "selftest.json", {
            "version": __version__,
            "ok": ok,
            "checks": [{"name": r.name, "pass": r.passed, "detail": r.detail}
                       for r in results],
        })
    print(f"selftest: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# Argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="TOML configuration file")
    p.add_argument("--outdir", help="output directory (default from config)")
    p.add_argument("--map", help="semicolon separated component expressions")
    p.add_argument("--family", help="family preset name")
    p.add_argument("--window", help="x0,x1,y0,y1")
    p.add_argument("--n", type=int)
    p.add_argument("--n-list", dest="n_list", help="comma separated degrees")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--representation", choices=[SYMMETRIC, FULL_TENSOR])
    p.add_argument("--method", choices=["auto", "aberth", "subdivide"])
    p.add_argument("--threads", type=int)
    p.add_argument("--jmax", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--skip-audit", dest="skip_audit", action="store_const",
                   const=True, default=None)
    p.add_argument("--retain-zeros", dest="retain_zeros", action="store_const",
                   const=True, default=None)
    p.add_argument("--no-retain-zeros", dest="retain_zeros",
                   action="store_const", const=False)


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="zerocurrent",
        description="zero statistics of random entire functions")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("audit", help="check the family hypotheses on a window")
    _add_common(p)

    p = sub.add_parser("theory", help="deterministic densities and pairings")
    _add_common(p)
    p.add_argument("--debug-scale-curve", dest="debug_scale_curve",
                   type=float, default=1.0, help=argparse.SUPPRESS)

    p = sub.add_parser("simulate", help="Monte Carlo zero statistics")
    _add_common(p)

    p = sub.add_parser("compare", help="verdict: simulation vs theory")
    _add_common(p)
    p.add_argument("--empirical", help="path to empirical.json")
    p.add_argument("--pairings", help="path to pairings.json")

    p = sub.add_parser("selftest", help="built-in consistency checks")
    p.add_argument("--outdir", help="also write selftest.json here")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "selftest":
        return cmd_selftest(args.outdir)

    try:
        raw = load_config(args.config) if args.config else {}
        overrides = {k: getattr(args, k, None) for k in
                     ("map", "family", "window", "n", "n_list", "trials",
                      "seed", "representation", "method", "threads", "jmax",
                      "tol", "skip_audit", "retain_zeros", "outdir")}
        cfg = resolve_config(raw, overrides)
        outdir = Path(cfg["run"]["outdir"])
        if args.command == "audit":
            return cmd_audit(cfg, outdir)
        if args.command == "theory":
            return cmd_theory(cfg, outdir, args.debug_scale_curve)
        if args.command == "simulate":
            return cmd_simulate(cfg, outdir)
        if args.command == "compare":
            return cmd_compare(
                cfg, outdir,
                Path(args.empirical) if args.empirical else None,
                Path(args.pairings) if args.pairings else None)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ExprError as e:
        print(f"error: bad expression: {e}", file=sys.stderr)
        return 2
    except AuditFailedError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except _NUMERICAL_ERRORS as e:
        print(f"numerical failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
