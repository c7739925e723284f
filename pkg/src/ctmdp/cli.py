"""Command-line front end.

    ctmdp --config experiment.json [--out result.json] [--seed N] [--threads N] [--tol X]

The configuration is a JSON document validated against
``schemas/config.schema.json``. Every default is filled in and echoed into the
result document, so feeding ``result["config"]`` back in reproduces the run.

Exit status: 0 all checks pass, 1 a check failed, 2 usage or parse error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Callable

import jsonschema
import numpy as np
from referencing import Registry, Resource

from . import __version__
from ._linalg import NumericalError
from .average import (
    VanishingDiscountError,
    acoi_residuals,
    check_acoe_conditions,
    check_assumptions,
    dynkin_residuals,
    first_passage_bound,
    interior_mask,
    vanishing_discount,
)
from .chain import check_standard, first_passage, long_run_cost, renewal_identities
from .discounted import ConvergenceError, check_monotone, evaluate_policy, solve_optimal
from .lyapunov import certify_cost_bound
from .model import (
    CtmdpModel,
    GeneratorRow,
    StationaryPolicy,
    cost_vector,
    induced_generator,
    validate,
)
from .models import (
    LyapunovSpec,
    UnstableParamsError,
    UpgradeQueueParams,
    build_mm1,
    build_upgrade_queue,
    mm1_lyapunov,
    ps_policy,
    upgrade_queue_lyapunov,
)
from .simulate import simulate_average_cost, simulate_discounted_cost, simulate_first_passage

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

TASK_STAGES = {
    "solve-discounted": ["validate", "discounted", "monotonicity"],
    "solve-average": ["validate", "average"],
    "check-standard": ["validate", "standard"],
    "check-lyapunov": ["validate", "lyapunov"],
    "check-acoe": ["validate", "average", "assumptions", "acoi", "acoe", "passage-bound"],
    "simulate": ["validate", "simulation"],
    "verify-all": [
        "validate", "discounted", "monotonicity", "standard", "lyapunov", "average",
        "assumptions", "acoi", "acoe", "passage-bound", "renewal", "optimality", "simulation",
    ],
}

DEFAULTS = {
    "alphas": [1.0, 0.1, 0.01],
    "schedule": {"alpha0": 1.0, "ratio": 0.5, "max_steps": 40},
    "limit": "poisson",
    "tol": 1e-6,
    "inner_tol": 1e-9,
    "i0": 0,
    "lyapunov": "auto",
    "seed": 0,
    "threads": 1,
    "horizon": 20000.0,
    "reps": 10,
    "sim_alpha": 0.5,
    "sim_reps": 2000,
    "ci_widths": 3.0,
}

MODEL_DEFAULTS = {
    "upgrade-queue": {
        "N": 30,
        "params": {k: v for k, v in asdict(UpgradeQueueParams()).items() if k != "N"},
    },
    "mm1": {"N": 60, "params": {"lambda": 1.0, "mu": 2.0, "h": 1.0}},
}


class ConfigError(ValueError):
    pass


def _schema(name: str) -> dict:
    return json.loads(resources.files("ctmdp").joinpath("schemas", name).read_text())


def _registry() -> Registry:
    cfg = _schema("config.schema.json")
    return Registry().with_resource(cfg["$id"], Resource.from_contents(cfg))


def parse_config(text: str) -> dict:
    """Parse and validate a configuration document; raise :class:`ConfigError` with location."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(_schema("config.schema.json"))
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"field {where}: {err.message}")
    return raw


def with_defaults(config: dict) -> dict:
    cfg = copy.deepcopy(config)
    model = cfg["model"]
    if model["kind"] in MODEL_DEFAULTS:
        base = MODEL_DEFAULTS[model["kind"]]
        model.setdefault("N", base["N"])
        model["params"] = {**base["params"], **model.get("params", {})}
    for key, value in DEFAULTS.items():
        if key == "schedule":
            cfg["schedule"] = {**value, **cfg.get("schedule", {})}
        else:
            cfg.setdefault(key, copy.deepcopy(value))
    cfg.setdefault("policy", "ps" if model["kind"] == "upgrade-queue" else "greedy")
    return cfg


def build_model(spec: dict) -> CtmdpModel:
    kind = spec["kind"]
    if kind == "upgrade-queue":
        return build_upgrade_queue(UpgradeQueueParams(N=spec["N"], **spec["params"]))
    if kind == "mm1":
        p = spec["params"]
        return build_mm1(p["lambda"], p["mu"], p["h"], spec["N"])
    states = spec["states"]
    if len(spec["actions"]) != len(states):
        raise ConfigError("field model.actions: one action list per state is required")
    gen = {}
    for row in spec["rows"]:
        gen[(row["state"], row["action"])] = GeneratorRow.from_entries(
            row["state"], [(int(j), float(r)) for j, r in row["rates"]]
        )
    cost = {(c["state"], c["action"]): float(c["cost"]) for c in spec["costs"]}
    meta = {"kind": "explicit", "boundary_rule": "as given"}
    if "box" in spec:
        meta["box"] = list(spec["box"])
    return CtmdpModel(np.array(states), spec["actions"], gen, cost, meta)


@dataclass
class Stage:
    name: str
    passed: bool
    summary: str
    data: dict = field(default_factory=dict)


class Runner:
    """Runs the stages of one configuration, caching shared intermediate results."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.model = build_model(cfg["model"])
        self.i0 = cfg["i0"]
        if self.i0 >= self.model.n_states:
            raise ConfigError(f"field i0: state index {self.i0} out of range")
        self._average = None
        self._policy = None
        self._assumptions = None
        self._acoi = None

    # shared pieces

    @property
    def average(self):
        if self._average is None:
            s = self.cfg["schedule"]
            self._average = vanishing_discount(
                self.model, s["alpha0"], s["ratio"], s["max_steps"], self.cfg["tol"],
                self.cfg["inner_tol"], self.cfg["limit"],
            )
        return self._average

    @property
    def policy(self) -> StationaryPolicy:
        if self._policy is None:
            p = self.cfg["policy"]
            if p == "ps":
                self._policy = ps_policy(self.model)
            elif p == "greedy":
                self._policy = self.average.f_star
            else:
                self._policy = StationaryPolicy(p)
                self.model.check_policy(self._policy)
        return self._policy

    @property
    def assumptions(self):
        if self._assumptions is None:
            self._assumptions = check_assumptions(self.model, self.average, self.policy, self.i0, self.cfg["tol"])
        return self._assumptions

    @property
    def acoi(self):
        if self._acoi is None:
            self._acoi = acoi_residuals(self.model, self.average, self.cfg["tol"])
        return self._acoi

    def probes(self) -> list[int]:
        if "probes" in self.cfg:
            return list(self.cfg["probes"])
        order = sorted(range(self.model.n_states), key=lambda i: (int(self.model.states[i].sum()), i))
        order = [i for i in order if i != self.i0]
        picks = [order[k] for k in (0, 1, 3, 7) if k < len(order)]
        return [self.i0] + picks

    # stages

    def stage_validate(self) -> Stage:
        v = validate(self.model)
        return Stage("validate", not v, f"{self.model.n_states} states, {len(v)} violations",
                     {"n_states": self.model.n_states, "violations": [vars(x) for x in v]})

    def stage_discounted(self) -> Stage:
        rows, ok = [], True
        for alpha in self.cfg["alphas"]:
            sol = solve_optimal(self.model, alpha, tol=self.cfg["inner_tol"])
            ok &= sol.residual <= sol.tol
            rows.append({"alpha": alpha, "residual": sol.residual, "iterations": sol.iterations,
                         "J0": float(sol.values[0]), "values": sol.values, "greedy": sol.greedy.tolist()})
        worst = max(r["residual"] for r in rows)
        return Stage("discounted", bool(ok), f"{len(rows)} discount factors, max residual {worst:.2e}",
                     {"solutions": rows})

    def stage_monotonicity(self) -> Stage:
        bad = {}
        for alpha in self.cfg["alphas"]:
            sol = solve_optimal(self.model, alpha, tol=self.cfg["inner_tol"])
            bad[str(alpha)] = check_monotone(self.model, sol.values)
        n_bad = sum(len(v) for v in bad.values())
        return Stage("monotonicity", n_bad == 0, f"{n_bad} decreasing neighbour pairs", {"violations": bad})

    def stage_standard(self) -> Stage:
        chk = check_standard(self.model, self.policy, self.i0)
        rep = chk.report
        return Stage("standard", chk.verdict,
                     f"{int(rep.reachable.sum())}/{rep.m.size} states with finite passage time and cost",
                     {"i0": self.i0, "m": rep.m, "cost": rep.cost})

    def stage_lyapunov(self) -> Stage:
        try:
            spec = self._lyapunov_spec()
        except (UnstableParamsError, ConfigError) as exc:
            return Stage("lyapunov", False, str(exc), {"error": str(exc)})
        rep = certify_cost_bound(self.model, self.policy, spec, self.i0)
        cert = rep.certificate
        passed = cert.passed and rep.holds
        return Stage(
            "lyapunov", passed,
            f"{len(cert.violations)} drift violations, {len(rep.failures)} bound failures",
            {"params": spec.params, "drift_violations": cert.violations, "F": cert.F,
             "bound_failures": rep.failures, "r_monotone": rep.r_monotone,
             "boundary_note": cert.boundary_note},
        )

    def _lyapunov_spec(self) -> LyapunovSpec:
        ly = self.cfg["lyapunov"]
        kind = self.cfg["model"]["kind"]
        n = self.model.n_states
        if ly == "auto":
            if kind == "upgrade-queue":
                p = self.cfg["model"]["params"]
                return upgrade_queue_lyapunov(UpgradeQueueParams(N=self.cfg["model"]["N"], **p))
            if kind == "mm1":
                p = self.cfg["model"]["params"]
                return mm1_lyapunov(p["lambda"], p["mu"], p["h"], self.cfg["model"]["N"])
            raise ConfigError("no automatic Lyapunov function for explicit models; give a table")
        hstar = ly.get("hstar", [self.i0])
        if "table" in ly:
            if len(ly["table"]) != n:
                raise ConfigError(f"field lyapunov.table: expected {n} values")
            return LyapunovSpec.from_values(ly["table"], hstar)
        ratios = [ly["r1"], ly.get("r2", ly["r1"])][: self.model.dim]
        logs = math.log(ly["K"]) + self.model.states @ np.log(ratios)
        return LyapunovSpec(logs, hstar, {"K": ly["K"], "r1": ly["r1"], "r2": ly.get("r2", ly["r1"])})

    def stage_average(self) -> Stage:
        sol = self.average
        trace = [{"alpha": s.alpha, "offset": s.offset, "h_sup": s.h_sup,
                  "policy_changes": s.policy_changes, "residual": s.residual, "spread": s.spread}
                 for s in sol.per_alpha]
        return Stage("average", True, f"g* = {sol.g_star:.10g} after {sol.steps} discount factors",
                     {"g_star": sol.g_star, "g_last": sol.g_last, "h_star": sol.h_star,
                      "f_star": sol.f_star.tolist(), "per_alpha": trace, "limit": sol.limit})

    def stage_assumptions(self) -> Stage:
        ev = self.assumptions
        return Stage("assumptions", ev.all_hold,
                     f"A1 {ev.A1.holds}, A2 {ev.A2.holds}, A3 {ev.A3.holds}",
                     {"A1": ev.A1.__dict__, "A2": ev.A2.__dict__, "A3": ev.A3.__dict__, "H": ev.H})

    def stage_acoi(self) -> Stage:
        r = self.acoi
        g = self.average.g_star
        interior_ok = r.max_abs_phi_interior <= 1e-4 * (1 + g)
        return Stage("acoi", r.acoi_holds and r.argmin_matches and interior_ok,
                     f"min phi {r.phi.min():.2e}, max |phi| interior {r.max_abs_phi_interior:.2e}",
                     {"phi": r.phi, "max_abs_phi": r.max_abs_phi, "argmin_matches": r.argmin_matches})

    def stage_acoe(self) -> Stage:
        cert = check_acoe_conditions(self.model, self.average, None, self.i0, self.assumptions.H, report=self.acoi)
        counts = {k: int(v.sum()) for k, v in cert.conditions.items()}
        return Stage("acoe", cert.all_certified and bool(cert.phi_ok),
                     f"{int(cert.certified.sum())}/{cert.certified.size} states certified",
                     {"condition_counts": counts, "fired": cert.fired})

    def stage_passage_bound(self) -> Stage:
        sol = self.average
        rows, ok = [], True
        for name, theta in (("reference", self.policy), ("optimal", sol.f_star)):
            for i in self.probes():
                ev = first_passage_bound(self.model, sol, theta, i, self.i0)
                ok &= ev.holds
                rows.append({"policy": name, "state": i, "lhs": ev.lhs, "rhs": ev.rhs, "holds": ev.holds})
        res = dynkin_residuals(self.model, sol, None, self.i0)
        inner = interior_mask(self.model)
        scaled = np.abs(res[inner]) / (1 + np.abs(sol.h_star[inner]))
        worst = float(scaled.max(initial=0.0))
        ok &= worst <= 1e-5
        return Stage("passage-bound", bool(ok), f"{len(rows)} bounds, max Dynkin residual {worst:.2e}",
                     {"bounds": rows, "max_dynkin_residual": worst})

    def stage_renewal(self) -> Stage:
        rep = renewal_identities(self.model, self.policy, self.i0, self.cfg["alphas"], self.probes()[:3])
        return Stage("renewal", rep.holds, f"J_R = {rep.J_R:.10g}",
                     {"J_R": rep.J_R, "ratio_errors": rep.ratio_errors, "discount_errors": rep.discount_errors})

    def stage_optimality(self) -> Stage:
        Q = induced_generator(self.model, self.policy)
        J_R = long_run_cost(Q, cost_vector(self.model, self.policy)).J_R
        g = self.average.g_star
        return Stage("optimality", g <= J_R + 1e-4, f"g* {g:.10g} vs reference {J_R:.10g}",
                     {"g_star": g, "J_R_reference": J_R})

    def stage_simulation(self) -> Stage:
        cfg, m, pol, seed = self.cfg, self.model, self.policy, self.cfg["seed"]
        k, workers = cfg["ci_widths"], cfg["threads"]
        Q = induced_generator(m, pol)
        c = cost_vector(m, pol)
        J_R = long_run_cost(Q, c).J_R
        avg = simulate_average_cost(m, pol, cfg["horizon"], cfg["reps"], seed, self.i0, workers=workers)
        J = evaluate_policy(m, pol, cfg["sim_alpha"])
        disc = simulate_discounted_cost(m, pol, cfg["sim_alpha"], cfg["sim_reps"], seed + 1, self.i0, workers=workers)
        again = simulate_discounted_cost(m, pol, cfg["sim_alpha"], cfg["sim_reps"], seed + 1, self.i0, workers=workers)
        fp = first_passage(Q, c, self.i0)
        passage = []
        ok = avg.agrees_with(J_R, k) and disc.agrees_with(J[self.i0], k)
        for n, i in enumerate(self.probes()):
            est = simulate_first_passage(m, pol, i, self.i0, cfg["sim_reps"], seed + 2 + n, workers=workers)
            good = est.time.agrees_with(fp.m[i], k) and est.cost.agrees_with(fp.cost[i], k)
            ok &= good
            passage.append({"state": i, "time": est.time.mean, "time_hw": est.time.half_width_95,
                            "m": fp.m[i], "cost": est.cost.mean, "cost_hw": est.cost.half_width_95,
                            "c": fp.cost[i], "agrees": good})
        reproducible = np.array_equal(disc.samples, again.samples)
        ok &= reproducible
        return Stage(
            "simulation", bool(ok),
            f"average {avg.mean:.4f}±{avg.half_width_95:.4f} vs {J_R:.4f}",
            {"average": {"mean": avg.mean, "hw": avg.half_width_95, "analytic": J_R},
             "discounted": {"mean": disc.mean, "hw": disc.half_width_95, "analytic": float(J[self.i0])},
             "first_passage": passage, "reproducible": reproducible},
        )

    def run(self, stages: list[str]) -> list[Stage]:
        table: dict[str, Callable[[], Stage]] = {
            "validate": self.stage_validate, "discounted": self.stage_discounted,
            "monotonicity": self.stage_monotonicity, "standard": self.stage_standard,
            "lyapunov": self.stage_lyapunov, "average": self.stage_average,
            "assumptions": self.stage_assumptions, "acoi": self.stage_acoi, "acoe": self.stage_acoe,
            "passage-bound": self.stage_passage_bound, "renewal": self.stage_renewal,
            "optimality": self.stage_optimality, "simulation": self.stage_simulation,
        }
        out = []
        for name in stages:
            st = table[name]()
            out.append(st)
            if name == "validate" and not st.passed:
                break
        return out


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    return x


def run(config: dict) -> tuple[dict, int]:
    """Execute a validated configuration; return ``(result document, exit status)``."""
    cfg = with_defaults(config)
    stages: list[Stage] = []
    error = None
    try:
        runner = Runner(cfg)
        stages = runner.run(TASK_STAGES[cfg["task"]])
        status = EXIT_OK if all(s.passed for s in stages) else EXIT_CHECK
    except ConfigError as exc:
        status, error = EXIT_USAGE, str(exc)
    except (ConvergenceError, VanishingDiscountError, NumericalError) as exc:
        status, error = EXIT_NUMERIC, f"{type(exc).__name__}: {exc}"
    except ValueError as exc:
        status, error = EXIT_USAGE, str(exc)
    doc = {
        "package": {"name": "ctmdp", "version": __version__},
        "config": cfg,
        "stages": [vars(s) for s in stages],
        "passed": status == EXIT_OK,
        "exit_status": status,
        "error": error,
    }
    return _jsonable(doc), status


def validate_result(doc: dict) -> None:
    jsonschema.Draft202012Validator(_schema("result.schema.json"), registry=_registry()).validate(doc)


def format_table(doc: dict) -> str:
    lines = [f"{'stage':<16}{'verdict':<9}summary", "-" * 72]
    for s in doc["stages"]:
        lines.append(f"{s['name']:<16}{'PASS' if s['passed'] else 'FAIL':<9}{s['summary']}")
    if doc.get("error"):
        lines.append(f"{'error':<16}{'':<9}{doc['error']}")
    lines.append("-" * 72)
    lines.append(f"{'overall':<16}{'PASS' if doc['passed'] else 'FAIL':<9}exit status {doc['exit_status']}")
    return "\n".join(lines)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="ctmdp", description="Average-cost CTMDP solver and verifier.")
    ap.add_argument("--config", required=True, help="experiment configuration (JSON)")
    ap.add_argument("--out", default="result.json", help="where to write the result document")
    ap.add_argument("--seed", type=int, help="override the simulation seed")
    ap.add_argument("--threads", type=int, help="worker processes for simulation replications")
    ap.add_argument("--tol", type=float, help="override the vanishing-discount tolerance")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        with open(args.config, encoding="utf-8") as fh:
            config = parse_config(fh.read())
        for key in ("seed", "threads", "tol"):
            value = getattr(args, key)
            if value is not None:
                config[key] = value
        parse_config(json.dumps(config))
    except (OSError, ConfigError) as exc:
        print(f"ctmdp: {exc}", file=sys.stderr)
        return EXIT_USAGE
    doc, status = run(config)
    print(format_table(doc))
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
