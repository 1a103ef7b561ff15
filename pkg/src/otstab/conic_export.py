"""Solver-agnostic conic encodings of the dual problems (piecewise losses).

The KL dual becomes an exponential-cone program and the chi-squared dual a
convex quadratically-constrained program; both minimize, so their optimal
value is the negated criterion.  Documents are emitted as JSON with every
real written as a decimal string of >= 17 significant digits, which
round-trips float64 exactly and keeps the files diff-stable.

Variables:  h >= 0 (risk multiplier), per-sample epigraph/weight variables,
and the scalars t (epigraph of the penalty term) and, for chi-squared, the
normalization multiplier alpha.  Constraints:

* piece rows (one per sample x piece):
      h^2 ||a_k o m||^2 / (4 theta1) + h (y_i a_k.x_i + b_k)  <=  p_i      (KL)
      ... + 2 theta2 alpha + 2 theta2                         <=  2 theta2 eta_i  (chi2)
* KL:   (eta_i, theta2, p_i - t) in K_exp,  (1/n) sum eta_i <= theta2,
        objective  -r h + t;
* chi2: (theta2/n) sum eta_i^2 <= t,
        objective  -r h - 2 theta2 alpha - theta2 + t.

A feasibility checker verifies assignments row by row (explicit branch for
the x2 = 0 face of the exponential cone), and certificate builders translate
a solved dual into an assignment whose objective is the negated criterion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import (Dataset, EvalConfig, InvalidCostError, LossKind, SchemaError,
                   UnsupportedLossError, is_infinite)
from .dual_solvers import DualSolution, _PiecewiseProfile, chi2_alpha_star
from .models import PiecewiseLinearModel


@dataclass(frozen=True)
class Affine:
    """constant + sum(coeffs[v] * value(v))."""

    constant: float = 0.0
    coeffs: tuple[tuple[str, float], ...] = ()

    def evaluate(self, assignment: dict[str, float]) -> float:
        return self.constant + sum(c * assignment[v] for v, c in self.coeffs)


@dataclass(frozen=True)
class Variable:
    name: str
    lower: float = -math.inf  # 0.0 for sign-constrained variables


@dataclass(frozen=True)
class LinearRow:
    name: str
    coeffs: tuple[tuple[str, float], ...]
    relation: str  # "<=" or "=="
    rhs: float

    def violation(self, assignment: dict[str, float]) -> float:
        lhs = sum(c * assignment[v] for v, c in self.coeffs)
        if self.relation == "<=":
            return max(0.0, lhs - self.rhs)
        return abs(lhs - self.rhs)


@dataclass(frozen=True)
class ExpConeRow:
    """(x1, x2, x3) in closure{x1 >= x2 exp(x3/x2), x2 > 0}."""

    name: str
    x1: Affine
    x2: Affine
    x3: Affine

    def violation(self, assignment: dict[str, float]) -> float:
        x1 = self.x1.evaluate(assignment)
        x2 = self.x2.evaluate(assignment)
        x3 = self.x3.evaluate(assignment)
        if x2 > 0.0:
            try:
                need = x2 * math.exp(x3 / x2)
            except OverflowError:
                return math.inf
            return max(0.0, need - x1)
        if x2 == 0.0:  # boundary face: x1 >= 0, x3 <= 0
            return max(0.0, -x1, x3)
        return -x2


@dataclass(frozen=True)
class QuadRow:
    """sum squares[v] v^2 + sum linear[v] v + constant <= rhs_coeff * rhs_var."""

    name: str
    squares: tuple[tuple[str, float], ...]
    linear: tuple[tuple[str, float], ...]
    constant: float
    rhs_var: str
    rhs_coeff: float

    def violation(self, assignment: dict[str, float]) -> float:
        lhs = self.constant
        lhs += sum(c * assignment[v] ** 2 for v, c in self.squares)
        lhs += sum(c * assignment[v] for v, c in self.linear)
        return max(0.0, lhs - self.rhs_coeff * assignment[self.rhs_var])


@dataclass(frozen=True)
class ConicProgram:
    variables: tuple[Variable, ...]
    objective: Affine  # minimized
    linear: tuple[LinearRow, ...] = ()
    expcone: tuple[ExpConeRow, ...] = ()
    quadratic: tuple[QuadRow, ...] = ()

    def __post_init__(self):
        declared = {v.name for v in self.variables}
        if len(declared) != len(self.variables):
            raise SchemaError("duplicate variable names in conic program")
        for name, _ in self.objective.coeffs:
            if name not in declared:
                raise SchemaError(f"objective references undeclared variable {name!r}")
        for row in self.linear:
            for name, _ in row.coeffs:
                if name not in declared:
                    raise SchemaError(f"row {row.name!r} references {name!r}")
        for row in self.expcone:
            for aff in (row.x1, row.x2, row.x3):
                for name, _ in aff.coeffs:
                    if name not in declared:
                        raise SchemaError(f"row {row.name!r} references {name!r}")
        for row in self.quadratic:
            for name, _ in list(row.squares) + list(row.linear) + [(row.rhs_var, 0)]:
                if name not in declared:
                    raise SchemaError(f"row {row.name!r} references {name!r}")


@dataclass(frozen=True)
class FeasibilityReport:
    row_violations: tuple[tuple[str, float], ...]
    max_violation: float
    worst_row: str | None
    objective_value: float

    def violation(self, name: str) -> float:
        for row, v in self.row_violations:
            if row == name:
                return v
        raise KeyError(name)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def _piece_terms(data: Dataset, model: PiecewiseLinearModel, config: EvalConfig):
    if not isinstance(model, PiecewiseLinearModel):
        raise UnsupportedLossError(
            "conic export covers piecewise-linear losses only")
    if config.loss_kind is not LossKind.PIECEWISE_LINEAR:
        raise UnsupportedLossError(
            "conic export covers piecewise-linear losses only")
    theta1, theta2 = config.cost.theta1, config.cost.theta2
    if is_infinite(theta1) or is_infinite(theta2):
        raise InvalidCostError("conic export requires finite theta1 and theta2")
    mask_vec = config.cost.mask_vector(data.n_features)
    masked = model.a * mask_vec
    gain = np.einsum("kd,kd->k", masked, masked) / (4.0 * theta1)
    yf = data.labels.astype(float)
    offsets = yf[:, None] * (data.features @ model.a.T) + model.b  # (n, K)
    return gain, offsets


def assemble_kl_program(data: Dataset, model: PiecewiseLinearModel,
                        config: EvalConfig) -> ConicProgram:
    """Exponential-cone form of the KL dual; optimum = -criterion."""
    gain, offsets = _piece_terms(data, model, config)
    n, k_pieces = offsets.shape
    theta2, r = config.cost.theta2, config.risk_threshold
    variables = [Variable("h", lower=0.0), Variable("t")]
    variables += [Variable(f"eta_{i + 1}", lower=0.0) for i in range(n)]
    variables += [Variable(f"p_{i + 1}") for i in range(n)]
    quads = []
    cones = []
    for i in range(n):
        for k in range(k_pieces):
            quads.append(QuadRow(
                name=f"piece_{i + 1}_{k + 1}",
                squares=(("h", float(gain[k])),),
                linear=(("h", float(offsets[i, k])),),
                constant=0.0, rhs_var=f"p_{i + 1}", rhs_coeff=1.0))
        cones.append(ExpConeRow(
            name=f"cone_{i + 1}",
            x1=Affine(coeffs=((f"eta_{i + 1}", 1.0),)),
            x2=Affine(constant=theta2),
            x3=Affine(coeffs=((f"p_{i + 1}", 1.0), ("t", -1.0)))))
    budget = LinearRow(
        name="weight_budget",
        coeffs=tuple((f"eta_{i + 1}", 1.0 / n) for i in range(n)),
        relation="<=", rhs=theta2)
    objective = Affine(coeffs=(("h", -r), ("t", 1.0)))
    return ConicProgram(variables=tuple(variables), objective=objective,
                        linear=(budget,), expcone=tuple(cones),
                        quadratic=tuple(quads))


def assemble_chi2_program(data: Dataset, model: PiecewiseLinearModel,
                          config: EvalConfig) -> ConicProgram:
    """Quadratic-cone form of the chi-squared dual; optimum = -criterion."""
    gain, offsets = _piece_terms(data, model, config)
    n, k_pieces = offsets.shape
    theta2, r = config.cost.theta2, config.risk_threshold
    variables = [Variable("h", lower=0.0), Variable("alpha"), Variable("t")]
    variables += [Variable(f"eta_{i + 1}", lower=0.0) for i in range(n)]
    quads = []
    for i in range(n):
        for k in range(k_pieces):
            quads.append(QuadRow(
                name=f"piece_{i + 1}_{k + 1}",
                squares=(("h", float(gain[k])),),
                linear=(("h", float(offsets[i, k])),
                        ("alpha", 2.0 * theta2)),
                constant=2.0 * theta2,
                rhs_var=f"eta_{i + 1}", rhs_coeff=2.0 * theta2))
    quads.append(QuadRow(
        name="weight_energy",
        squares=tuple((f"eta_{i + 1}", theta2 / n) for i in range(n)),
        linear=(), constant=0.0, rhs_var="t", rhs_coeff=1.0))
    objective = Affine(constant=-theta2,
                       coeffs=(("h", -r), ("alpha", -2.0 * theta2), ("t", 1.0)))
    return ConicProgram(variables=tuple(variables), objective=objective,
                        quadratic=tuple(quads))


# ---------------------------------------------------------------------------
# certificates and checking
# ---------------------------------------------------------------------------

def kl_certificate(data: Dataset, model: PiecewiseLinearModel,
                   config: EvalConfig, dual: DualSolution) -> dict[str, float]:
    """Feasible assignment of the KL program with objective -dual value."""
    theta1, theta2 = config.cost.theta1, config.cost.theta2
    if is_infinite(theta1) or is_infinite(theta2):
        raise InvalidCostError("conic certificates require finite prices")
    mask_vec = config.cost.mask_vector(data.n_features)
    profile = _PiecewiseProfile(model, data.features, data.labels, theta1,
                                mask_vec)
    values = profile.values(dual.h_star)
    z = values / theta2
    m = float(np.max(z))
    t = theta2 * (m + math.log(float(np.mean(np.exp(z - m)))))
    assignment = {"h": dual.h_star, "t": t}
    eta = theta2 * np.exp((values - t) / theta2)
    for i in range(values.size):
        assignment[f"p_{i + 1}"] = float(values[i])
        assignment[f"eta_{i + 1}"] = float(eta[i])
    return assignment


def chi2_certificate(data: Dataset, model: PiecewiseLinearModel,
                     config: EvalConfig, dual: DualSolution) -> dict[str, float]:
    """Feasible assignment of the chi-squared program, objective -dual value."""
    theta1, theta2 = config.cost.theta1, config.cost.theta2
    if is_infinite(theta1) or is_infinite(theta2):
        raise InvalidCostError("conic certificates require finite prices")
    mask_vec = config.cost.mask_vector(data.n_features)
    profile = _PiecewiseProfile(model, data.features, data.labels, theta1,
                                mask_vec)
    values = profile.values(dual.h_star)
    alpha = chi2_alpha_star(values, theta2)
    eta = np.maximum((values + alpha) / (2.0 * theta2) + 1.0, 0.0)
    assignment = {"h": dual.h_star, "alpha": alpha / (2.0 * theta2),
                  "t": float(theta2 * np.mean(eta ** 2))}
    for i in range(values.size):
        assignment[f"eta_{i + 1}"] = float(eta[i])
    return assignment


def check_feasibility(program: ConicProgram,
                      assignment: dict[str, float]) -> FeasibilityReport:
    """Evaluate every row's violation at an assignment (0 = satisfied)."""
    for var in program.variables:
        if var.name not in assignment:
            raise SchemaError(f"assignment is missing variable {var.name!r}")
    rows: list[tuple[str, float]] = []
    for var in program.variables:
        if var.lower > -math.inf:
            rows.append((f"lower({var.name})",
                         max(0.0, var.lower - assignment[var.name])))
    for row in program.linear:
        rows.append((row.name, row.violation(assignment)))
    for row in program.expcone:
        rows.append((row.name, row.violation(assignment)))
    for row in program.quadratic:
        rows.append((row.name, row.violation(assignment)))
    worst = max(rows, key=lambda rv: rv[1]) if rows else (None, 0.0)
    return FeasibilityReport(row_violations=tuple(rows),
                             max_violation=worst[1],
                             worst_row=worst[0] if worst[1] > 0.0 else None,
                             objective_value=program.objective.evaluate(assignment))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_pairs(pairs) -> dict[str, str]:
    return {name: _fmt(value) for name, value in pairs}


def _parse_pairs(obj) -> tuple[tuple[str, float], ...]:
    return tuple((name, float(value)) for name, value in obj.items())


def _affine_to_json(aff: Affine) -> dict:
    return {"constant": _fmt(aff.constant), "coeffs": _fmt_pairs(aff.coeffs)}


def _affine_from_json(obj) -> Affine:
    return Affine(constant=float(obj["constant"]),
                  coeffs=_parse_pairs(obj["coeffs"]))


def program_to_json_dict(program: ConicProgram) -> dict:
    return {
        "variables": [{"name": v.name, "lower": _fmt(v.lower)}
                      for v in program.variables],
        "objective": _affine_to_json(program.objective),
        "linear": [{"name": row.name, "coeffs": _fmt_pairs(row.coeffs),
                    "relation": row.relation, "rhs": _fmt(row.rhs)}
                   for row in program.linear],
        "expcone": [{"name": row.name, "x1": _affine_to_json(row.x1),
                     "x2": _affine_to_json(row.x2),
                     "x3": _affine_to_json(row.x3)}
                    for row in program.expcone],
        "quadratic": [{"name": row.name, "squares": _fmt_pairs(row.squares),
                       "linear": _fmt_pairs(row.linear),
                       "constant": _fmt(row.constant),
                       "rhs_var": row.rhs_var,
                       "rhs_coeff": _fmt(row.rhs_coeff)}
                      for row in program.quadratic],
    }


def program_from_json_dict(obj) -> ConicProgram:
    try:
        variables = tuple(Variable(v["name"], lower=float(v["lower"]))
                          for v in obj["variables"])
        objective = _affine_from_json(obj["objective"])
        linear = tuple(LinearRow(row["name"], _parse_pairs(row["coeffs"]),
                                 row["relation"], float(row["rhs"]))
                       for row in obj["linear"])
        expcone = tuple(ExpConeRow(row["name"], _affine_from_json(row["x1"]),
                                   _affine_from_json(row["x2"]),
                                   _affine_from_json(row["x3"]))
                        for row in obj["expcone"])
        quadratic = tuple(QuadRow(row["name"], _parse_pairs(row["squares"]),
                                  _parse_pairs(row["linear"]),
                                  float(row["constant"]), row["rhs_var"],
                                  float(row["rhs_coeff"]))
                          for row in obj["quadratic"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed conic program document: {exc}") from exc
    return ConicProgram(variables=variables, objective=objective,
                        linear=linear, expcone=expcone, quadratic=quadratic)


def save_program(program: ConicProgram, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(program_to_json_dict(program), fh, indent=2)
        fh.write("\n")


def load_program(path) -> ConicProgram:
    with open(path, encoding="utf-8") as fh:
        return program_from_json_dict(json.load(fh))
