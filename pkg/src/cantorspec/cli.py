"""Command-line entry point: build, verify, restriction, exponents.

Every command reads one JSON config, writes its outputs atomically into
--out and is deterministic, so reruns produce byte-identical files.

Exit codes: 0 success, 2 invalid config, 3 truncation budget exceeded,
4 an asserted verification check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis
from .bumps import DEFAULT_QUADRATURE, QuadratureSpec
from .construction import (
    ConstructionParams, ScheduleConfig, StageOptions, build_schedule, build_stage, default_S_max,
)
from .errors import (
    ConfigError, DegenerateWindow, DomainError, HypothesisViolated,
    InsufficientBlocks, NoAdmissibleModulus, StrictModeInfeasible, TruncationBudgetExceeded,
)
from .spectrum import SparseSpectrum

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_ASSERT = 0, 2, 3, 4
SUITES = ("decay", "regularity", "stability", "spectra-oracle")


@dataclass(frozen=True)
class Experiment:
    k: int
    l: int
    p: tuple[float, ...]
    q: float
    # further M_lists run with the same (k, l); with two or more scales the
    # M_k-exponent of the ratio is fitted
    compare: tuple[tuple[float, ...], ...] = ()


@dataclass(frozen=True)
class RunConfig:
    params: ConstructionParams
    schedule: ScheduleConfig
    S_max: int | None = None
    quadrature: QuadratureSpec = DEFAULT_QUADRATURE
    budget: float = 1e-6
    experiment: Experiment | None = None
    verify: dict = field(default_factory=dict)

    @property
    def options(self) -> StageOptions:
        return StageOptions(quadrature=self.quadrature, budget=self.budget)


def _num(v, name: str) -> float:
    """Numbers may be given as JSON numbers or decimal strings."""
    if isinstance(v, bool):
        raise ConfigError(f"{name}: expected a number, got {v!r}")
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a number, got {v!r}") from None


def _int(v, name: str) -> int:
    x = _num(v, name)
    if not x.is_integer():
        raise ConfigError(f"{name}: expected an integer, got {v!r}")
    return int(x)


def parse_config(doc: dict) -> RunConfig:
    """Validate a config document; every failure is a ConfigError."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    p = doc.get("params")
    if not isinstance(p, dict):
        raise ConfigError("config needs a 'params' object")
    params = ConstructionParams(
        alpha=_num(p.get("alpha"), "params.alpha"),
        beta=_num(p.get("beta"), "params.beta"),
        q_exponent=_num(p.get("q_exponent", 2.0), "params.q_exponent"),
        D=_num(p.get("D", 2.0), "params.D"),
    )
    s = doc.get("schedule")
    if not isinstance(s, dict):
        raise ConfigError("config needs a 'schedule' object")
    schedule = ScheduleConfig(
        mode=s.get("mode", "relaxed"),
        M_list=tuple(_num(m, "schedule.M_list") for m in s.get("M_list", ())),
        M0=None if s.get("M0") is None else _num(s["M0"], "schedule.M0"),
        K=None if s.get("K") is None else _int(s["K"], "schedule.K"),
    )
    S_max = None if doc.get("S_max") is None else _int(doc["S_max"], "S_max")
    if S_max is not None and S_max < 1:
        raise ConfigError("S_max must be >= 1")
    quad = DEFAULT_QUADRATURE
    if "quadrature" in doc:
        qd = doc["quadrature"]
        quad = QuadratureSpec(
            nodes_per_panel=_int(qd.get("nodes_per_panel", quad.nodes_per_panel), "quadrature.nodes_per_panel"),
            panels=_int(qd.get("panels", quad.panels), "quadrature.panels"),
            target_rel_error=_num(qd.get("target_rel_error", quad.target_rel_error), "quadrature.target_rel_error"),
            max_doublings=_int(qd.get("max_doublings", quad.max_doublings), "quadrature.max_doublings"),
        )
        if quad.nodes_per_panel < 2 or quad.panels < 1 or not quad.target_rel_error > 0:
            raise ConfigError("quadrature needs nodes_per_panel >= 2, panels >= 1, target_rel_error > 0")
    budget = _num(doc.get("budget", 1e-6), "budget")
    exp = None
    if doc.get("experiment") is not None:
        e = doc["experiment"]
        ps = e.get("p")
        ps = ps if isinstance(ps, list) else [ps]
        comp = e.get("compare", [])
        if not isinstance(comp, list) or not all(isinstance(c, list) for c in comp):
            raise ConfigError("experiment.compare must be a list of M_lists")
        exp = Experiment(_int(e.get("k"), "experiment.k"), _int(e.get("l"), "experiment.l"),
                         tuple(_num(v, "experiment.p") for v in ps), _num(e.get("q"), "experiment.q"),
                         tuple(tuple(_num(m, "experiment.compare") for m in c) for c in comp))
        for c in exp.compare:
            other = ScheduleConfig(mode="relaxed", M_list=c)
            if exp.l > other.n_scales:
                raise ConfigError(f"experiment.compare schedule {list(c)} has fewer than l={exp.l} scales")
        if exp.k % 2 == 0:
            raise ConfigError(f"experiment.k must be odd, got {exp.k}")
        if exp.l <= exp.k or exp.l > schedule.n_scales:
            raise ConfigError(f"experiment.l must satisfy k < l <= {schedule.n_scales}")
        if any(not v > 1 for v in exp.p) or not exp.q >= 1:
            raise ConfigError("experiment needs p > 1 and q >= 1")
    verify = doc.get("verify", {})
    if not isinstance(verify, dict):
        raise ConfigError("'verify' must be an object")
    return RunConfig(params, schedule, S_max, quad, budget, exp, verify)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(doc)


# ---------------------------------------------------------------- output helpers


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars become Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(doc: dict) -> str:
    body = {"schema_version": SCHEMA_VERSION, **doc}
    return json.dumps(_clean(body), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_atomic(path: Path, text: str) -> None:
    """Write to a temp file in the target directory, then rename over the target."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _config_json(cfg: RunConfig) -> dict:
    return {
        "params": asdict(cfg.params),
        "schedule": {"mode": cfg.schedule.mode, "M_list": list(cfg.schedule.M_list),
                     "M0": cfg.schedule.M0, "K": cfg.schedule.K},
        "S_max": cfg.S_max,
        "quadrature": asdict(cfg.quadrature),
        "budget": cfg.budget,
        "experiment": None if cfg.experiment is None else asdict(cfg.experiment),
    }


def _schedule_json(schedule) -> list:
    return [{"k": sc.k, "M": sc.M, "primes": list(sc.window.primes), "B": sc.B,
             "N_k": sc.N_k, "N_beta": sc.N_beta, "epsilon": sc.epsilon,
             "condition_report": sc.condition_report} for sc in schedule]


def _S_for(cfg: RunConfig, schedule, l: int) -> int:
    if cfg.S_max is not None:
        return cfg.S_max
    return default_S_max(cfg.params, schedule[l - 1].M if l else 1.0)


# ---------------------------------------------------------------- commands


def cmd_build(cfg: RunConfig, out: Path) -> int:
    """One JSON snapshot and one CSV spectrum dump per stage."""
    schedule = build_schedule(cfg.params, cfg.schedule)
    stages = [build_stage(cfg.params, schedule, l, S_max=_S_for(cfg, schedule, l), opts=cfg.options)
              for l in range(1, len(schedule) + 1)]
    files = {}
    for st in stages:
        S = st.cached_spectrum
        snap = {
            "kind": "stage",
            "config": _config_json(cfg),
            "schedule": _schedule_json(schedule),
            "l": st.l,
            "mass": st.mass,
            "radii": list(st.radii),
            "ledger": st.ledger.to_json(),
            "spectrum": {**S.to_json(), "nnz": S.nnz, "csv": f"spectrum_l{st.l}.csv"},
        }
        files[f"stage_l{st.l}.json"] = dumps(snap)
        files[f"spectrum_l{st.l}.csv"] = S.to_csv()
    for name, text in files.items():
        write_atomic(out / name, text)
    print(f"built {len(stages)} stage(s) into {out}")
    return EXIT_OK


def _suite_decay(cfg: RunConfig, schedule) -> tuple[dict, list[str]]:
    v = cfg.verify.get("decay", {})
    failures = []
    half = float(v.get("half_width", 0.2))
    certs = []
    for sc in schedule:
        c = analysis.g_decay_certificate(sc, cfg.params, int(v.get("certificate_S_max", 20000)),
                                         cfg.quadrature)
        certs.append(c.to_json())
        if not c.passed:
            failures.append(f"decay certificate of g_{sc.k}")
    if "spectrum_file" in v:
        try:
            with open(v["spectrum_file"], encoding="utf-8") as fh:
                doc = json.load(fh)
            # either a bare spectrum document or a stage snapshot written by build
            S = SparseSpectrum.from_json(doc.get("spectrum", doc))
        except (OSError, ValueError, KeyError, TypeError, IndexError) as exc:
            raise ConfigError(f"cannot load spectrum_file {v['spectrum_file']}: {exc!r}") from None
        M1 = v.get("M1")
    else:
        l = len(schedule)
        S = build_stage(cfg.params, schedule, l, S_max=_S_for(cfg, schedule, l),
                        opts=cfg.options).cached_spectrum
        M1 = schedule[0].M
    try:
        rep = analysis.fit_decay(S, cfg.params, M1=M1, half_width=half)
        fit = rep.to_json()
        if rep.verdict != "pass":
            failures.append(f"decay slope {rep.fitted_slope:.4g} outside {list(rep.target_band)}")
    except InsufficientBlocks as exc:
        fit = {"error": str(exc), "verdict": "fail"}
        failures.append(f"decay fit: {exc}")
    return {"certificates": certs, "fit": fit}, failures


def _suite_regularity(cfg: RunConfig, schedule) -> tuple[dict, list[str]]:
    v = cfg.verify.get("regularity", {})
    l = len(schedule)
    st = build_stage(cfg.params, schedule, l, S_max=64, opts=cfg.options)
    rmin = schedule[-1].M ** -(2 + cfg.params.alpha)
    lengths = v.get("lengths") or list(np.geomspace(rmin * (1 + 1e-9), 1.0, int(v.get("points", 8))))
    rep = analysis.fit_regularity(st, [float(r) for r in lengths],
                                  int(v.get("translates_per_scale", 8)),
                                  float(v.get("half_width", 0.2)))
    fails = [] if rep.verdict == "pass" else [
        f"regularity slope {rep.fitted_slope:.4g} outside {list(rep.target_band)}"]
    return {"fit": rep.to_json(), "mass": st.mass}, fails


def _suite_stability(cfg: RunConfig, schedule) -> tuple[dict, list[str]]:
    v = cfg.verify.get("stability", {})
    hyp = analysis.surrogate_stability_case(cfg.params.alpha, cfg.params.beta,
                                            float(v.get("M_prev", 100.0)),
                                            int(v.get("N_surrogate", 3)))
    try:
        rep = analysis.check_stability(hyp)
    except HypothesisViolated as exc:
        return {"error": str(exc)}, [f"hypothesis {exc.predicate} fails at s={exc.witness}"]
    doc = rep.to_json()
    doc.update(M_prev=hyp.M_prev, M_cur=str(hyp.M_cur), C=hyp.C,
               C1={str(k): c for k, c in hyp.C1.items()}, C2={str(k): c for k, c in hyp.C2.items()})
    fails = []
    if rep.holds is False:
        fails = [f"stability margin above 1: {rep.margins}"]
    return doc, fails


def _suite_spectra(cfg: RunConfig, schedule) -> tuple[dict, list[str]]:
    v = cfg.verify.get("spectra-oracle", {})
    tol = float(v.get("tolerance", 1e-6))
    R = int(v.get("radius", 500))
    from .construction import spectrum_g
    s = np.arange(-R, R + 1)
    out, fails = [], []
    for sc in schedule:
        closed = np.array([spectrum_g(sc, cfg.params, int(t), cfg.quadrature) for t in s])
        quad = analysis.g_quadrature(sc, cfg.params, s, cfg.quadrature)
        err = float(np.max(np.abs(closed - quad)))
        row = {"k": sc.k, "g_max_abs_diff": err}
        if err > tol:
            fails.append(f"g_{sc.k} closed form vs quadrature: {err:.3g} > {tol}")
        if sc.odd:
            h1, h2 = analysis.spectra_h1_h2(sc, cfg.params, R, cfg.quadrature)
            t = np.arange(0, R + 1)
            e2 = float(np.max(np.abs(h1.get(t) + h2.get(t) - analysis.gf_quadrature(sc, cfg.params, t, cfg.quadrature))))
            row["h1_plus_h2_max_abs_diff"] = e2
            row["h2_decay_constant"] = analysis.h2_decay_constant(h2, sc, cfg.params)
            if e2 > tol:
                fails.append(f"h1+h2 reconstruction at k={sc.k}: {e2:.3g} > {tol}")
        out.append(row)
    return {"tolerance": tol, "radius": R, "scales": out}, fails


_SUITES = {"decay": _suite_decay, "regularity": _suite_regularity,
           "stability": _suite_stability, "spectra-oracle": _suite_spectra}


def cmd_verify(cfg: RunConfig, suite: str, out: Path) -> int:
    if suite not in _SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    schedule = build_schedule(cfg.params, cfg.schedule)
    report, fails = _SUITES[suite](cfg, schedule)
    doc = {"kind": "verify", "suite": suite, "config": _config_json(cfg),
           "schedule": _schedule_json(schedule), "report": report,
           "passed": not fails, "failures": fails}
    write_atomic(out / f"verify_{suite}.json", dumps(doc))
    if fails:
        for f in fails:
            print(f"FAIL {suite}: {f}", file=sys.stderr)
        return EXIT_ASSERT
    note = report.get("note") if isinstance(report, dict) else None
    print(f"PASS {suite}" + (f" ({note})" if note else ""))
    return EXIT_OK


def cmd_restriction(cfg: RunConfig, out: Path) -> int:
    exp = cfg.experiment
    if exp is None:
        raise ConfigError("restriction needs an 'experiment' block")
    schedule = build_schedule(cfg.params, cfg.schedule)
    a, b = cfg.params.alpha, cfg.params.beta
    crit = analysis.critical_exponents(a, b, exp.q) if exp.q > 1 else {}
    pc = crit.get("p_plus", crit.get("p_minus"))
    schedules = [schedule] + [build_schedule(cfg.params, ScheduleConfig(mode="relaxed", M_list=c))
                              for c in exp.compare]
    rows, fits = [], []
    for p in exp.p:
        group = [analysis.run_restriction(cfg.params, sch, exp.k, exp.l, p, exp.q, opts=cfg.options)
                 for sch in schedules]
        if len(group) >= 2:
            rep = analysis.fit_restriction_exponent(group, a)
            fits.append({"p": p, "q": exp.q, **rep.to_json()})
            group = [replace(e, fitted_exponent=rep.fitted_slope) for e in group]
        rows.extend(group)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "M_k", "p", "q", "ratio", "lower_bound_constant", "fitted_exponent",
                "target_exponent", "critical_p"])
    for e in rows:
        w.writerow([e.k, repr(e.M), repr(e.p), repr(e.q), repr(e.ratio), repr(e.lower_bound_constant),
                    "" if e.fitted_exponent is None else repr(e.fitted_exponent),
                    repr(analysis.restriction_target(a, b, e.p, e.q)),
                    "" if pc is None else repr(pc)])
    doc = {"kind": "restriction", "config": _config_json(cfg), "schedule": _schedule_json(schedule),
           "critical_exponents": crit, "experiments": [e.to_json() for e in rows], "fits": fits}
    write_atomic(out / "restriction.csv", buf.getvalue())
    write_atomic(out / "restriction.json", dumps(doc))
    print(buf.getvalue(), end="")
    return EXIT_OK


def cmd_exponents(cfg: RunConfig, out: Path | None) -> int:
    q = cfg.params.q_exponent if cfg.experiment is None else cfg.experiment.q
    crit = analysis.critical_exponents(cfg.params.alpha, cfg.params.beta, q)
    crit["q"] = q
    for k in sorted(crit):
        print(f"{k} = {crit[k]!r}")
    if out is not None:
        write_atomic(out / "exponents.json", dumps({"kind": "exponents", "values": crit}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cantorspec", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("build", "verify", "restriction", "exponents"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run config")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        if name == "verify":
            sp.add_argument("--suite", required=True, choices=SUITES)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        cfg = load_config(args.config)
        if args.command == "build":
            return cmd_build(cfg, out)
        if args.command == "verify":
            return cmd_verify(cfg, args.suite, out)
        if args.command == "restriction":
            return cmd_restriction(cfg, out)
        return cmd_exponents(cfg, out)
    except (ConfigError, DomainError, StrictModeInfeasible, NoAdmissibleModulus,
            DegenerateWindow) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TruncationBudgetExceeded as exc:
        print(f"truncation budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
