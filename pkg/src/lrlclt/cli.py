"""Command-line orchestration: config validation, task execution, reports, manifest and plot data.

Exit codes: 0 success, 2 validation error, 3 budget refusal, 4 bound violation.
When several apply, the largest code wins.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np

from lrlclt import __version__
from lrlclt.bounds import (a_beta, alpha_constants, beta_c_solve, cct_constants, kp_pinned_verify,
                           lemma_constants, prop_constants, series_constants)
from lrlclt.cluster import factorization_check, full_family_table, polymer_partition_function, truncated_log_series
from lrlclt.errors import BudgetExceeded, DomainError
from lrlclt.gibbs import DEFAULT_BUDGET, build_exact, derive_seeds, metropolis_run
from lrlclt.lclt import (BOUND_SLACK, charfn_bound_check, decimation_experiment, detect_span, iclt_report,
                         inner_grid, integral_decomposition, lclt_discrepancy, outer_grid, sublattice,
                         total_probability_gap)
from lrlclt.model import (Box, BoundaryCondition, PairPotential, SpinModel, SpinSpace, campanino_condition_probe,
                          geometric_potential, long_range_ising, potential_norm, table_potential, zero_potential)
from lrlclt.polymer import Polymer, make_context

EXIT_OK, EXIT_VALIDATION, EXIT_BUDGET, EXIT_VIOLATION = 0, 2, 3, 4
TASK_ORDER = ("verify-expansion", "bounds", "lclt", "charfn", "decimate", "mc")
PLOT_KINDS = {
    "charfn": ("t", "modulus", "bound", "holds"),
    "lclt": ("k", "D_k", "discrepancy"),
    "iclt": ("k", "D_k_over_n", "kolmogorov"),
    "integrals": ("k", "I1", "I2", "I3", "I4", "twoPiDiscrepancy"),
    "factorization": ("k", "beta", "t", "relError"),
    "series": ("k", "beta", "n", "absError"),
    "decimation": ("t", "supModulus", "bound", "holds"),
    "mc": ("s", "pHat", "radius", "pExact"),
}
INTEGRAL_ALLOWANCE = 1e-6
FACTORIZATION_TOL = 1e-10

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg_int = {"type": "integer", "minimum": 0}
_label = {"type": ["number", "string"]}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["potential"],
    "properties": {
        "spinSpace": {
            "type": "object",
            "additionalProperties": False,
            "required": ["labels", "weights", "f"],
            "properties": {
                "labels": {"type": "array", "items": _label, "minItems": 1},
                "weights": {"type": "array", "items": _pos, "minItems": 1},
                "f": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
            },
        },
        "potential": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": ["long_range_ising", "geometric", "table", "zero"]},
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "J": _num,
                        "alpha": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                        "amplitude": _num,
                        "base": {"type": "number", "exclusiveMinimum": 1},
                        "couplings": {"type": "array", "items": _num, "minItems": 1},
                    },
                },
                "matrix": {"type": "array", "items": {"type": "array", "items": _num}},
                "truncationRadius": {"type": "integer", "minimum": 1},
            },
        },
        "pairConvention": {"enum": ["unordered", "ordered"]},
        "boxes": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d": {"type": "integer", "minimum": 1},
                "k": {"type": "array", "items": _nonneg_int, "minItems": 1, "uniqueItems": True},
            },
        },
        "boundary": {
            "type": "object",
            "additionalProperties": False,
            "required": ["rule"],
            "properties": {
                "rule": {"enum": ["free", "constant", "explicit"]},
                "label": _label,
                "assignment": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["site", "label"],
                        "properties": {"site": {"type": "array", "items": {"type": "integer"}}, "label": _label},
                    },
                },
            },
        },
        "betas": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "parameters": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta": _pos,
                "c": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "r0": {"type": "integer", "minimum": 1},
                "C": _pos,
                "B": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "t": {"type": "array", "items": _num},
                "epsilon": {"type": ["number", "null"], "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "cutoffs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "maxBonds": {"type": "integer", "minimum": 1},
                "maxPairRange": {"type": ["integer", "null"], "minimum": 1},
                "seriesOrder": {"type": "integer", "minimum": 1, "maximum": 5},
                "enumerationBudget": {"type": "integer", "minimum": 1},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"points": {"type": "integer", "minimum": 8}},
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sweeps": {"type": "integer", "minimum": 2},
                "burnIn": _nonneg_int,
                "thinning": {"type": "integer", "minimum": 1},
            },
        },
        "decimation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"samples": {"type": "integer", "minimum": 1}},
        },
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "tasks": {"type": "array", "items": {"enum": list(TASK_ORDER)}, "uniqueItems": True},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"directory": {"type": "string", "minLength": 1}},
        },
    },
}

DEFAULTS = {
    "spinSpace": {"labels": [-1, 1], "weights": [1.0, 1.0], "f": [-1, 1]},
    "potential": {"family": "long_range_ising", "params": {"J": 1.0, "alpha": 0.5}, "truncationRadius": 6},
    "pairConvention": "unordered",
    "boxes": {"d": 1, "k": [2]},
    "boundary": {"rule": "constant", "label": 1},
    "betas": [0.1],
    "parameters": {"delta": 0.05, "c": None, "r0": 3, "C": 0.1, "B": None, "t": [0.0, 0.5], "epsilon": None},
    "cutoffs": {"maxBonds": 3, "maxPairRange": None, "seriesOrder": 4, "enumerationBudget": DEFAULT_BUDGET},
    "grid": {"points": 2048},
    "mc": {"sweeps": 100000, "burnIn": 1000, "thinning": 1},
    "decimation": {"samples": 20},
    "seed": 0,
    "tasks": ["verify-expansion"],
    "output": {"directory": "out"},
}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key not in ("params",):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate_config(raw: dict) -> dict:
    """Schema-check ``raw`` and fill defaults; errors name the offending dotted field path."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = errors[0]
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(path, err.message)
    return _merge(DEFAULTS, raw)


def reproducible_config(cfg: dict) -> dict:
    # the output location does not affect any result
    return {k: v for k, v in cfg.items() if k != "output"}


def config_hash(cfg: dict) -> str:
    canon = json.dumps(reproducible_config(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


class Setup:
    """Model objects built from a validated config."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        ss = cfg["spinSpace"]
        self.space = SpinSpace(ss["labels"], ss["weights"], ss["f"])
        if self.space.is_degenerate:
            raise ConfigError("spinSpace.f", "f is constant on the positive-weight labels")
        self.d = cfg["boxes"]["d"]
        self.potential = self._potential(cfg["potential"])
        self.model = SpinModel(self.space, self.potential, cfg["pairConvention"])
        self.bc = self._boundary(cfg["boundary"])
        self.ks = sorted(cfg["boxes"]["k"])
        self.betas = [float(b) for b in cfg["betas"]]
        p = cfg["parameters"]
        self.delta, self.C, self.r0, self.B = p["delta"], p["C"], p["r0"], p["B"]
        self.c, self.eps, self.ts = p["c"], p["epsilon"], [float(t) for t in p["t"]]
        if not self.delta * self.space.f_norm < 1:
            raise ConfigError("parameters.delta", "need delta * ||f|| < 1")
        if not self.C * math.e < 1:
            raise ConfigError("parameters.C", "need C < 1/e")
        self.span = detect_span(self.space)
        if not self.delta < math.pi / self.span.h:
            raise ConfigError("parameters.delta", f"need delta < pi/h = {math.pi / self.span.h}")
        self.budget = cfg["cutoffs"]["enumerationBudget"]

    def _potential(self, entry: dict) -> PairPotential:
        fam, params = entry["family"], entry.get("params", {})
        R = entry.get("truncationRadius", 1)
        q = self.space.q
        try:
            if fam == "long_range_ising":
                if not all(isinstance(v, (int, float)) for v in self.space.labels):
                    raise ConfigError("spinSpace.labels", "long-range Ising needs numeric spin labels")
                need = [k for k in ("J", "alpha") if k not in params]
                if need:
                    raise ConfigError(f"potential.params.{need[0]}", "required for long_range_ising")
                return long_range_ising(params["J"], params["alpha"], R, self.space.labels, self.d)
            if fam == "zero":
                return zero_potential(q, R, self.d)
            if "matrix" not in entry:
                raise ConfigError("potential.matrix", f"required for the {fam} family")
            if fam == "geometric":
                need = [k for k in ("amplitude", "base") if k not in params]
                if need:
                    raise ConfigError(f"potential.params.{need[0]}", "required for geometric")
                return geometric_potential(params["amplitude"], params["base"], R, entry["matrix"], self.d)
            if "couplings" not in params:
                raise ConfigError("potential.params.couplings", "required for table")
            return table_potential(params["couplings"], entry["matrix"], self.d)
        except DomainError as exc:
            raise ConfigError("potential", str(exc)) from exc

    def _boundary(self, entry: dict) -> BoundaryCondition:
        rule = entry["rule"]
        if rule == "free":
            return BoundaryCondition.free()
        if rule == "constant":
            if entry.get("label") not in self.space.labels:
                raise ConfigError("boundary.label", "must be one of spinSpace.labels")
            return BoundaryCondition.constant(entry["label"])
        assignment = {}
        for i, item in enumerate(entry.get("assignment", [])):
            if len(item["site"]) != self.d or item["label"] not in self.space.labels:
                raise ConfigError(f"boundary.assignment.{i}", "site dimension or label is invalid")
            assignment[tuple(item["site"])] = item["label"]
        return BoundaryCondition.explicit(assignment)

    def region(self, k: int):
        return Box(k, self.d).region()


# ----------------------------------------------------------------- serialisation

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def csv_bytes(columns, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue().encode("utf-8")


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    if isinstance(obj, complex):
        return [jsonable(obj.real), jsonable(obj.imag)]
    return obj


def json_bytes(obj) -> bytes:
    return (json.dumps(jsonable(obj), indent=1, sort_keys=True, allow_nan=False) + "\n").encode("utf-8")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ----------------------------------------------------------------- task outcome

class Outcome:
    """What one task produced: tables, a JSON summary, refusals and violations."""

    def __init__(self, name: str):
        self.name = name
        self.tables: list[dict] = []
        self.summary: dict = {}
        self.refusals: list[dict] = []
        self.violations: list[dict] = []
        self.notes: list[str] = []
        self.error: str | None = None
        self.extra_files: dict[str, bytes] = {}

    def table(self, name: str, kind: str, columns, rows):
        self.tables.append({"name": name, "kind": kind, "columns": list(columns), "rows": [list(r) for r in rows]})

    def refuse(self, item: str, exc: BudgetExceeded):
        self.refusals.append({"item": item, "what": exc.what, "needed": exc.needed, "budget": exc.budget,
                              "message": str(exc)})

    @property
    def status(self) -> str:
        if self.error:
            return "error"
        if self.violations:
            return "violation"
        if self.refusals:
            return "partial"
        return "ok"


class Runner:
    def __init__(self, setup: Setup, threads: int = 1):
        self.s = setup
        self.threads = max(1, int(threads))
        self._exact: dict = {}
        self.constants: dict = {}

    def pmap(self, fn, items):
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    def exact(self, k: int, beta: float):
        key = (k, beta)
        if key not in self._exact:
            self._exact[key] = build_exact(self.s.model, self.s.region(k), beta, self.s.bc, self.s.budget)
        return self._exact[key]

    def exact_or_refusal(self, k: int, beta: float):
        try:
            return self.exact(k, beta)
        except BudgetExceeded as exc:
            return exc

    # ---------------------------------------------------------- verify-expansion
    def verify_expansion(self, out: Outcome):
        s = self.s
        fact_rows, series_rows = [], []
        items = [(k, bi, beta) for k in s.ks for bi, beta in enumerate(s.betas)]

        def work(item):
            k, bi, beta = item
            g = self.exact_or_refusal(k, beta)
            if isinstance(g, BudgetExceeded):
                return item, g, None, None
            D = g.stats.variance
            facts = []
            for t in s.ts:
                ctx = make_context(s.model, s.region(k), beta, s.bc, t, D if t else None)
                facts.append((t, factorization_check(ctx)))
            try:
                ctx0 = make_context(s.model, s.region(k), beta, s.bc)
                table = full_family_table(ctx0)
                log_xi = complex(np.log(polymer_partition_function(table)))
                series = truncated_log_series(table, s.cfg["cutoffs"]["seriesOrder"])
            except BudgetExceeded as exc:
                return item, None, facts, exc
            return item, None, facts, (log_xi, series)

        for (k, bi, beta), refusal, facts, series in self.pmap(work, items):
            if refusal is not None:
                out.refuse(f"k={k} beta={beta}", refusal)
                continue
            for t, r in facts:
                fact_rows.append((k, len(s.region(k)), beta, t, r.lhs.real, r.lhs.imag, r.rhs.real, r.rhs.imag,
                                  r.rel_error, r.rel_error <= FACTORIZATION_TOL))
            if isinstance(series, BudgetExceeded):
                out.refuse(f"series k={k} beta={beta}", series)
                continue
            log_xi, orders = series
            for o in orders:
                series_rows.append((k, beta, o.n, o.term_count, o.increment.real, o.increment.imag,
                                    o.partial_sum.real, o.partial_sum.imag, log_xi.real, abs(o.partial_sum - log_xi)))
        out.table("factorization", "factorization",
                  ("k", "n_sites", "beta", "t", "lhsRe", "lhsIm", "rhsRe", "rhsIm", "relError", "withinTolerance"),
                  fact_rows)
        out.table("series", "series",
                  ("k", "beta", "n", "termCount", "incrementRe", "incrementIm", "partialSumRe", "partialSumIm",
                   "logXi", "absError"), series_rows)
        out.summary = {"maxRelError": max((r[8] for r in fact_rows), default=None),
                       "tolerance": FACTORIZATION_TOL}

    # ---------------------------------------------------------- bounds
    def _single_site_laws(self):
        laws = []
        for k in self.s.ks:
            for beta in self.s.betas:
                laws.extend(make_context(self.s.model, self.s.region(k), beta, self.s.bc).masses)
        return laws

    def bounds(self, out: Outcome):
        s = self.s
        phi, pf = s.potential, s.model.pair_factor
        R = phi.radius
        norm = potential_norm(phi, R)
        radii = sorted({r for r in (1, 2, 4, 8, 16, 32, 64) if r < R} | {R})
        probe = campanino_condition_probe(phi, radii)
        beta_C = beta_c_solve(s.C, phi, None, pf)
        sc = series_constants(s.delta, s.space.f_norm)
        report = {
            "inputs": {"delta": s.delta, "C": s.C, "r0": s.r0, "c": s.c, "epsilon": s.eps, "betas": s.betas,
                       "pairFactor": pf, "fNorm": s.space.f_norm, "span": {"a": s.span.a, "h": s.span.h}},
            "truncation": {"radius": R, "normPartialSum": norm.partial_sum, "normTailBound": norm.tail_bound,
                           "note": "constants use the truncated potential; tails are reported separately"},
            "campaninoProbe": {"radii": probe.radii, "sqrtPartialSums": probe.sqrt_partial_sums,
                               "tailSups": probe.tail_sups, "growthExponent": probe.growth_exponent,
                               "analytic": probe.analytic, "conditionHolds": probe.condition_holds},
            "beta_C": beta_C,
            "series": {"q": sc.q, "A_delta": sc.A_delta, "B_delta": sc.B_delta},
            "perBeta": [],
        }
        laws = self._single_site_laws()
        rows = []
        for beta in s.betas:
            prop = prop_constants(s.space, phi, beta, s.delta, s.eps, laws, pair_factor=pf, span=s.span.h)
            c = prop.c_c if s.c is None else s.c
            al = alpha_constants(s.delta, beta, c, phi, s.space.f_norm, None, pf)
            lem = lemma_constants(s.delta, beta, c, s.space, phi, s.r0, prop.c_b, pf,
                                  beta_prime=prop.beta_prime_delta)
            try:
                cct = cct_constants(z0=lem.z0_cam, phi=phi, r0=s.r0, pair_factor=pf)
                cct_d = {"K": cct.K, "z0": cct.z0, "B": cct.B, "C": cct.Cc, "PhiBar": cct.phi_bar,
                         "radius": cct.radius, "valid": cct.valid}
            except DomainError as exc:
                cct_d = {"refused": str(exc)}
            entry = {
                "beta": beta,
                "a_beta": a_beta(s.C, beta, phi, None, pf),
                "CePlusA_beta<1": s.C * math.e + a_beta(s.C, beta, phi, None, pf) < 1,
                "alpha": {"a_beta_at_delta_f": al.a_beta, "alpha_delta_beta": al.alpha_delta_beta,
                          "alpha_beta": al.alpha_beta, "alpha_bar_c_beta": al.alpha_bar_c_beta, "valid": al.valid},
                "prop": {k: getattr(prop, k) for k in prop.__dataclass_fields__},
                "lemma": {k: getattr(lem, k) for k in lem.__dataclass_fields__},
                "cct": cct_d,
                "cUsed": c,
            }
            report["perBeta"].append(entry)
            self.constants[beta] = {"prop": prop, "lemma": lem, "c": c}
            rows.append((beta, entry["a_beta"], al.alpha_delta_beta, al.alpha_beta, al.alpha_bar_c_beta,
                         prop.d_beta, lem.D_highT, lem.C_highT, lem.D_cam, lem.C_cam,
                         lem.flags["D_highT_positive"], lem.flags["C_highT_positive"],
                         lem.flags.get("D_cam_positive"), lem.flags.get("C_cam_positive")))
        out.table("bounds", "bounds",
                  ("beta", "a_beta", "alpha_delta_beta", "alpha_beta", "alpha_bar_c_beta", "d_beta", "D_highT",
                   "C_highT", "D_cam", "C_cam", "D_highT_positive", "C_highT_positive", "D_cam_positive",
                   "C_cam_positive"), rows)

        # pinned Kotecky-Preiss sum at half the convergence threshold
        if math.isfinite(beta_C):
            k0 = s.ks[0]
            origin = (0,) * s.d
            try:
                ctx = make_context(s.model, s.region(k0), beta_C / 2, s.bc)
                kp = kp_pinned_verify(ctx, s.C, Polymer(((origin,),)), s.cfg["cutoffs"]["maxBonds"],
                                      s.cfg["cutoffs"]["maxPairRange"])
                report["kpPinned"] = {"k": k0, "beta": beta_C / 2, "lhs": kp.lhs, "rhs": kp.rhs,
                                      "margin": kp.margin, "holds": kp.holds, "polymerCount": kp.polymer_count,
                                      "lowerBoundOfFullSum": True}
                if not kp.holds:
                    out.violations.append({"item": "kpPinned", "lhs": kp.lhs, "rhs": kp.rhs})
            except BudgetExceeded as exc:
                out.refuse("kpPinned", exc)
        out.summary = report
        out.extra_files = {"constants.json": json_bytes(report)}

    # ---------------------------------------------------------- lclt
    def lclt(self, out: Outcome):
        s = self.s
        lrows, irows, introws = [], [], []
        for bi, beta in enumerate(s.betas):
            runs = dict(zip(s.ks, self.pmap(lambda k: self.exact_or_refusal(k, beta), s.ks)))
            good = {}
            for k, g in runs.items():
                if isinstance(g, BudgetExceeded):
                    out.refuse(f"k={k} beta={beta}", g)
                else:
                    good[k] = g
            for row in iclt_report(good):
                irows.append((row.k, beta, row.n_sites, row.D_k, row.ratio, row.kolmogorov))
            for k, g in good.items():
                r = lclt_discrepancy(g, s.span)
                lrows.append((k, beta, r.n_sites, r.D_k, r.sup, r.argmax_b, r.method, r.radius, r.mass_total))
                out.table(f"lclt_table_b{bi}_k{k}", "lclt_table",
                          ("b", "s", "P", "scaled", "gauss", "diff", "radius"),
                          [(int(t[0]), int(t[1]), *t[2:]) for t in r.table.tolist()])
                if s.B is None:
                    continue
                try:
                    ir = integral_decomposition(g, s.span, s.B, s.delta)
                except DomainError as exc:
                    out.notes.append(f"integrals skipped at k={k} beta={beta}: {exc}")
                    continue
                lhs = 2 * math.pi * r.sup
                holds = lhs <= ir.total + INTEGRAL_ALLOWANCE
                introws.append((k, beta, ir.B, ir.delta, ir.I1, ir.I2, ir.I3, ir.I4, ir.total, lhs, ir.error,
                                ir.converged, holds))
                if not holds:
                    out.violations.append({"item": f"integrals k={k} beta={beta}", "lhs": lhs, "rhs": ir.total})
        out.table("lclt", "lclt", ("k", "beta", "n_sites", "D_k", "discrepancy", "b_star", "method", "radius",
                                   "massTotal"), lrows)
        out.table("iclt", "iclt", ("k", "beta", "n_sites", "D_k", "D_k_over_n", "kolmogorov"), irows)
        if s.B is not None:
            out.table("integrals", "integrals",
                      ("k", "beta", "B", "delta", "I1", "I2", "I3", "I4", "total", "twoPiDiscrepancy", "gridError",
                       "converged", "holds"), introws)

    # ---------------------------------------------------------- charfn
    def charfn(self, out: Outcome):
        s = self.s
        points = s.cfg["grid"]["points"]
        for bi, beta in enumerate(s.betas):
            lem = self.constants[beta]["lemma"]
            regimes = (("highT", "D_highT_positive", lem.D_highT), ("highT_tail", "C_highT_positive", lem.C_highT))
            for k in s.ks:
                g = self.exact_or_refusal(k, beta)
                if isinstance(g, BudgetExceeded):
                    out.refuse(f"k={k} beta={beta}", g)
                    continue
                for regime, flag, const in regimes:
                    if not lem.flags[flag]:
                        out.notes.append(f"{regime} at k={k} beta={beta} refused: flag {flag} is false "
                                         f"(constant {const}); see constants.json")
                        continue
                    chk = charfn_bound_check(g, regime, delta=s.delta, constant=const, span=s.span, points=points)
                    out.table(f"charfn_{regime}_b{bi}_k{k}", "charfn", ("t", "modulus", "bound", "holds"), chk.rows())
                    for t, m, b in chk.violations:
                        out.violations.append({"item": f"{regime} k={k} beta={beta}", "t": t, "modulus": m,
                                               "bound": b})

    # ---------------------------------------------------------- decimate
    def decimate(self, out: Outcome):
        s = self.s
        points = s.cfg["grid"]["points"]
        samples = s.cfg["decimation"]["samples"]
        summary = []
        for bi, beta in enumerate(s.betas):
            seeds = derive_seeds(s.cfg["seed"] + bi, len(s.ks))
            for k, seed in zip(s.ks, seeds):
                region = s.region(k)
                g = self.exact_or_refusal(k, beta)
                if isinstance(g, BudgetExceeded):
                    out.refuse(f"k={k} beta={beta}", g)
                    continue
                D = g.stats.variance
                t_in = inner_grid(s.delta, D, points)
                t_out = outer_grid(s.delta, D, s.span.h, points)
                try:
                    res = decimation_experiment(s.model, region, s.r0, beta, s.bc, np.concatenate([t_in, t_out]),
                                                samples, seed, D)
                except BudgetExceeded as exc:
                    out.refuse(f"decimation k={k} beta={beta}", exc)
                    continue
                laws = [make_context(s.model, res.sublattice, beta, BoundaryCondition.composite(w, s.bc)).masses
                        for w in res.samples]
                prop = prop_constants(s.space, s.potential, beta, s.delta, s.eps, [p for L in laws for p in L],
                                      pair_factor=s.model.pair_factor, span=s.span.h)
                c = prop.c_c if s.c is None else s.c
                lem = lemma_constants(s.delta, beta, c, s.space, s.potential, s.r0, prop.c_b, s.model.pair_factor)
                n_sub = len(res.sublattice)
                sup = res.sup_modulus
                m_in, m_out = sup[:len(t_in)], sup[len(t_in):]
                rows = []
                for regime, tt, mm, flag, const in (
                        ("decimated_inner", t_in, m_in, "D_cam_positive", lem.D_cam),
                        ("decimated_outer", t_out, m_out, "C_cam_positive", lem.C_cam)):
                    applicable = bool(lem.flags[flag])
                    if const is None:
                        bound = np.full(tt.shape, math.nan)
                    elif regime == "decimated_inner":
                        bound = np.exp(-tt * tt * const * n_sub / D)
                    else:
                        bound = np.full(tt.shape, math.exp(-const * n_sub))
                    holds = (mm <= bound + BOUND_SLACK).tolist() if const is not None else [None] * len(tt)
                    for t, m, b, h in zip(tt.tolist(), mm.tolist(), bound.tolist(), holds):
                        rows.append((regime, t, m, b, applicable, h))
                        if applicable and h is False:
                            out.violations.append({"item": f"{regime} k={k} beta={beta}", "t": t, "modulus": m,
                                                   "bound": b})
                out.table(f"decimation_b{bi}_k{k}", "decimation",
                          ("regime", "t", "supModulus", "bound", "applicable", "holds"), rows)
                try:
                    gap = total_probability_gap(s.model, region, s.r0, beta, s.bc)
                except BudgetExceeded as exc:
                    out.refuse(f"total probability k={k} beta={beta}", exc)
                    gap = None
                summary.append({"k": k, "beta": beta, "seed": seed, "sublattice": [list(x) for x in res.sublattice.sites],
                                "samples": samples, "c_b_sampled": prop.c_b, "D_cam": lem.D_cam, "C_cam": lem.C_cam,
                                "flags": lem.flags, "totalProbabilityGap": gap,
                                "supIsLowerBound": True})
        out.summary = {"runs": summary}

    # ---------------------------------------------------------- mc
    def mc(self, out: Outcome):
        s = self.s
        m = s.cfg["mc"]
        items = [(bi, beta, k) for bi, beta in enumerate(s.betas) for k in s.ks]
        seeds = derive_seeds(s.cfg["seed"], len(items))

        def work(arg):
            (bi, beta, k), seed = arg
            res = metropolis_run(s.model, s.region(k), beta, s.bc, seed, m["sweeps"], m["burnIn"], m["thinning"])
            return res, self.exact_or_refusal(k, beta)

        summary = []
        for ((bi, beta, k), seed), (res, g) in zip(zip(items, seeds), self.pmap(work, list(zip(items, seeds)))):
            exact = None if isinstance(g, BudgetExceeded) else g.stats.mass
            if exact is None:
                out.notes.append(f"mc k={k} beta={beta}: exact comparison refused ({g})")
            keys = sorted(set(res.mass) | set(exact or {}))
            rows, worst = [], 0.0
            for v in keys:
                p_hat, rad = res.mass.get(v, 0.0), res.radius.get(v, 0.0)
                p_ex = None if exact is None else exact.get(v, 0.0)
                within = None if p_ex is None else abs(p_hat - p_ex) <= rad
                if p_ex is not None and rad > 0:
                    worst = max(worst, abs(p_hat - p_ex) / rad * 3)
                rows.append((v, p_hat, rad, p_ex, within))
            out.table(f"mc_b{bi}_k{k}", "mc", ("s", "pHat", "radius", "pExact", "within"), rows)
            lr = lclt_discrepancy(res, s.span, len(s.region(k)))
            summary.append({"k": k, "beta": beta, "seed": seed, "acceptanceRate": res.acceptance_rate,
                            "tauInt": res.tau_int, "nEff": res.n_eff, "lcltDiscrepancy": lr.sup,
                            "lcltRadius": lr.radius,
                            "allWithinRadius": None if exact is None else all(r[4] for r in rows if r[4] is not None)})
        out.summary = {"runs": summary}


# ----------------------------------------------------------------- orchestration

def plan(tasks) -> list[str]:
    """Requested tasks in dependency order; constants are computed before the checks that use them."""
    want = set(tasks)
    if "charfn" in want:
        want.add("bounds")
    return [t for t in TASK_ORDER if t in want]


def execute(cfg: dict, out_dir: Path, tasks, threads: int = 1) -> tuple[int, dict]:
    """Run ``tasks``; write CSVs, report.json and manifest.json into ``out_dir``."""
    started = datetime.now(timezone.utc).isoformat()
    setup = Setup(cfg)
    runner = Runner(setup, threads)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: dict[str, bytes] = {}
    outcomes = []
    code = EXIT_OK
    methods = {"verify-expansion": runner.verify_expansion, "bounds": runner.bounds, "lclt": runner.lclt,
               "charfn": runner.charfn, "decimate": runner.decimate, "mc": runner.mc}
    for name in plan(tasks):
        oc = Outcome(name)
        try:
            methods[name](oc)
        except BudgetExceeded as exc:
            oc.refuse(name, exc)
        except DomainError as exc:
            oc.error = str(exc)
        outcomes.append(oc)
        for tb in oc.tables:
            files[f"{tb['name']}.csv"] = csv_bytes(tb["columns"], tb["rows"])
        files.update(oc.extra_files)
        if oc.error:
            code = max(code, EXIT_VALIDATION)
        if oc.refusals:
            code = max(code, EXIT_BUDGET)
        if oc.violations:
            code = max(code, EXIT_VIOLATION)

    report = {
        "configHash": config_hash(cfg),
        "toolVersion": __version__,
        "tasks": {oc.name: {"status": oc.status, "summary": oc.summary, "tables": oc.tables, "notes": oc.notes,
                            "refusals": oc.refusals, "violations": oc.violations, "error": oc.error}
                  for oc in outcomes},
    }
    files["report.json"] = json_bytes(report)
    files["config.json"] = json_bytes(reproducible_config(cfg))
    for name, data in sorted(files.items()):
        (out_dir / name).write_bytes(data)

    manifest = {
        "toolVersion": __version__,
        "configHash": config_hash(cfg),
        "startedAt": started,
        "finishedAt": datetime.now(timezone.utc).isoformat(),
        "exitCode": code,
        "tasks": [{"name": oc.name, "status": oc.status, "refusals": oc.refusals, "violationCount": len(oc.violations),
                   "notes": oc.notes, "error": oc.error} for oc in outcomes],
        "truncation": {"radius": setup.potential.radius, "enumerationBudget": setup.budget,
                       "seriesOrder": cfg["cutoffs"]["seriesOrder"], "maxBonds": cfg["cutoffs"]["maxBonds"]},
        "files": [{"path": name, "sha256": _sha256(data), "bytes": len(data)} for name, data in sorted(files.items())],
    }
    (out_dir / "manifest.json").write_bytes(json_bytes(manifest))
    return code, manifest


def emit_plot_data(report: dict, kind: str, out_dir: Path) -> list[Path]:
    """One CSV per table of ``kind`` restricted to the plot columns, plus the task-level trend tables."""
    if kind not in PLOT_KINDS:
        raise DomainError(f"unknown report kind {kind!r}; expected one of {sorted(PLOT_KINDS)}")
    cols = PLOT_KINDS[kind]
    written = []
    out_dir.mkdir(parents=True, exist_ok=True)
    for task in report.get("tasks", {}).values():
        for tb in task["tables"]:
            if tb["kind"] != kind:
                continue
            idx = [tb["columns"].index(c) for c in cols]
            rows = [[_unjson(r[i]) for i in idx] for r in tb["rows"]]
            path = out_dir / f"plot_{tb['name']}.csv"
            path.write_bytes(csv_bytes(cols, rows))
            written.append(path)
    return written


def _unjson(v):
    return float(v) if v in ("inf", "-inf", "nan") else v


def load_config(path: str | None) -> dict:
    if path is None:
        return {"potential": copy.deepcopy(DEFAULTS["potential"])}
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError("<root>", f"cannot read config: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "the config must be a JSON object")
    return raw


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrlclt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", *TASK_ORDER):
        p = sub.add_parser(name, help="run the tasks listed in the config" if name == "run" else f"run {name}")
        p.add_argument("--config", help="JSON experiment config (defaults apply when omitted)")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--seed", type=int, help="base seed (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for per-k items")
    p = sub.add_parser("emit-plot-data", help="write plot CSVs from a report.json")
    p.add_argument("--report", required=True, help="path to report.json")
    p.add_argument("--kind", required=True, help=f"one of {', '.join(sorted(PLOT_KINDS))}")
    p.add_argument("--out", help="output directory (defaults to the report's directory)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "emit-plot-data":
        try:
            report = json.loads(Path(args.report).read_text(encoding="utf-8"))
            paths = emit_plot_data(report, args.kind, Path(args.out) if args.out else Path(args.report).parent)
        except (OSError, json.JSONDecodeError, DomainError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        for p in paths:
            print(p)
        return EXIT_OK
    try:
        raw = load_config(args.config)
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.out is not None:
            raw.setdefault("output", {})["directory"] = args.out
        cfg = validate_config(raw)
        if args.threads < 1:
            raise ConfigError("--threads", "must be at least 1")
        tasks = cfg["tasks"] if args.command == "run" else [args.command]
        code, manifest = execute(cfg, Path(cfg["output"]["directory"]), tasks, args.threads)
    except ConfigError as exc:
        print(f"config error at {exc.path}: {exc.message}", file=sys.stderr)
        return EXIT_VALIDATION
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    for t in manifest["tasks"]:
        print(f"{t['name']}: {t['status']}")
    return code


if __name__ == "__main__":
    sys.exit(main())
