"""Turn dual solutions into user-facing artifacts.

From the optimal multiplier h* the worst-case lift is read off sample by
sample: each point moves to its envelope maximizer and receives the penalty's
tilt weight.  The cost of that explicit coupling upper-bounds the criterion
and matches the dual value at optima where the risk constraint binds, which
is the strong-duality certificate reported as ``duality_gap``.

The excess risk of the lift splits exactly into a transport share (loss gain
from moving points, at unit weights) and a reweighting share (gain from
tilting weights on the moved points); the two channels can be priced against
each other by sweeping theta1/theta2 along a fixed budget curve.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .core import (Dataset, EvalConfig, LossKind, PhiDivergence,
                   SensitiveDistribution, StabilityReport, Status,
                   ThresholdUnreachableError, is_infinite, validate_config)
from .dual_solvers import (DualSolution, best_iterate_ascent, solve,
                           weights_from_values)
from .models import LossModel


def _row_sq(diff: np.ndarray) -> np.ndarray:
    return np.einsum("nd,nd->n", diff, diff)


def _project_fooled(model, pts, y, mask_vec):
    """Boundary projections nudged onto the misclassified side.

    The exact projection lands at margin zero, which rounding may tip either
    way; the loss only credits y * margin <= 0, so overshoot by the smallest
    factor that leaves every stored point re-evaluating as fooled.
    """
    w = model.weights * mask_vec
    nsq = float(w @ w)
    pts = np.asarray(pts, dtype=float)
    if nsq == 0.0:
        return pts.copy()
    step = ((pts @ model.weights + model.bias) / nsq)[:, None] * w
    out = pts - step
    extra = np.finfo(float).eps
    for _ in range(60):
        bad = y * (out @ model.weights + model.bias) > 0.0
        if not np.any(bad):
            return out
        out[bad] = pts[bad] - (1.0 + extra) * step[bad]
        extra *= 2.0
    return out  # unreachable for finite inputs: extra ~ 2**8 mirrors the point


def _maximizers_zero_one(model, X_hat, y, h, theta1, mask_vec):
    """Vectorized flip decisions: move strictly-profitable samples to their
    boundary projections, keep knife-edge and unprofitable ones in place."""
    dstar = model.margin_distance_batch(X_hat, y, mask_vec)
    X = np.array(X_hat, dtype=float)
    if is_infinite(theta1):
        values = np.where(dstar == 0.0, h, 0.0)
        return X, values, dstar
    move = np.isfinite(dstar) & (dstar > 0.0) & (h > theta1 * dstar)
    if np.any(move):
        X[move] = _project_fooled(model, X_hat[move], y[move], mask_vec)
    values = np.zeros_like(dstar)
    f = np.isfinite(dstar)
    values[f] = np.maximum(h - theta1 * dstar[f], 0.0)
    return X, values, dstar


def _maximizers_piecewise(model, X_hat, y, h, theta1, mask_vec):
    yf = np.asarray(y, dtype=float)
    L = yf[:, None] * (X_hat @ model.a.T) + model.b
    if is_infinite(theta1):
        ks = np.argmax(L, axis=1)
        rows = np.arange(L.shape[0])
        return np.array(X_hat, dtype=float), h * L[rows, ks]
    masked = model.a * mask_vec
    gain = np.einsum("kd,kd->k", masked, masked)
    piece = (h * h / (4.0 * theta1)) * gain + h * L
    ks = np.argmax(piece, axis=1)
    rows = np.arange(L.shape[0])
    X = X_hat + (h / (2.0 * theta1)) * yf[:, None] * masked[ks]
    return X, piece[rows, ks]


def extract_sensitive_distribution(data: Dataset, model: LossModel,
                                   config: EvalConfig,
                                   dual: DualSolution) -> SensitiveDistribution:
    """Read the worst-case lift off a dual solution.

    Labels are copied unchanged.  For smooth losses the lift reuses the
    solver's final iterates verbatim — the reported dual value was scored on
    exactly those points, so improving them here would push the primal cost
    below its own certificate.

    For the 0/1 loss the optimal multiplier can sit on a flip threshold where
    the true worst case randomizes one sample between staying and moving; the
    deterministic lift is then repaired toward feasibility by flipping the
    cheapest threshold samples until the weighted risk reaches r, which keeps
    the reported coupling a valid upper bound on the criterion.
    """
    cost = config.cost
    theta1, theta2 = cost.theta1, cost.theta2
    mask_vec = cost.mask_vector(data.n_features)
    h = dual.h_star
    X_hat, y = data.features, data.labels
    yf = y.astype(float)

    if config.loss_kind is LossKind.ZERO_ONE:
        X, values, dstar = _maximizers_zero_one(model, X_hat, yf, h, theta1,
                                                mask_vec)
        weights = weights_from_values(values, config.phi, theta2)
        X, values, weights = _repair_zero_one_feasibility(
            model, config, X_hat, yf, X, values, weights, dstar, h)
    elif config.loss_kind is LossKind.PIECEWISE_LINEAR:
        X, values = _maximizers_piecewise(model, X_hat, yf, h, theta1, mask_vec)
        weights = weights_from_values(values, config.phi, theta2)
    else:
        if is_infinite(theta1) or h == 0.0:
            X = np.array(X_hat, dtype=float)
            values = h * model.loss_batch(X_hat, yf)
        elif dual.maximizers is not None:
            X = np.array(dual.maximizers, dtype=float)
            values = h * model.loss_batch(X, yf) - theta1 * _row_sq(X - X_hat)
        else:
            values, _, X = best_iterate_ascent(model, X_hat, yf, h, theta1,
                                               mask_vec, config.solver)
        weights = weights_from_values(values, config.phi, theta2)

    if not is_infinite(theta2):
        weights = weights / float(np.mean(weights))  # defensive renormalize
    costs = _row_sq(X - X_hat)
    return SensitiveDistribution(perturbed_points=X, labels=y, weights=weights,
                                 h_star=float(h), alpha_star=dual.alpha_star,
                                 transport_costs=costs)


def _repair_zero_one_feasibility(model, config, X_hat, yf, X, values, weights,
                                 dstar, h):
    """Flip near-threshold samples until E[W * loss] >= r (see extract)."""
    r = config.risk_threshold
    theta1, theta2 = config.cost.theta1, config.cost.theta2
    if is_infinite(theta1) or h <= 0.0:
        return X, values, weights
    base = model.loss_batch(X, yf)
    risk = float(np.mean(weights * base))
    if risk >= r - config.solver.feasibility_tol:
        return X, values, weights
    slack = 1e-6 * max(1.0, h) + 4.0 * config.solver.dual_tol
    candidates = np.flatnonzero(np.isfinite(dstar) & (dstar > 0.0)
                                & (theta1 * dstar >= h)
                                & (theta1 * dstar <= h + slack))
    if candidates.size == 0:
        return X, values, weights
    mask_vec = config.cost.mask_vector(X_hat.shape[1])
    for i in candidates[np.argsort(dstar[candidates])]:
        X[i] = _project_fooled(model, X_hat[i:i + 1], yf[i:i + 1], mask_vec)[0]
        values[i] = h - theta1 * dstar[i]
        weights = weights_from_values(values, config.phi, theta2)
        base = model.loss_batch(X, yf)
        risk = float(np.mean(weights * base))
        if risk >= r - config.solver.feasibility_tol:
            break
    return X, values, weights


def primal_cost(qstar: SensitiveDistribution, config: EvalConfig) -> float:
    """Cost of the explicit coupling that built the lift.

    (1/n) sum_i [ theta1 w_i d_i + theta2 (phi(w_i))_+ ], with each infinite
    price contributing zero when its channel is unused (d_i = 0, w_i = 1) and
    infinity otherwise.
    """
    theta1, theta2 = config.cost.theta1, config.cost.theta2
    w, d = qstar.weights, qstar.transport_costs
    if is_infinite(theta1):
        transport = np.where(d == 0.0, 0.0, math.inf)
    else:
        transport = theta1 * w * d
    if is_infinite(theta2):
        penalty = np.where(w == 1.0, 0.0, math.inf)
    else:
        penalty = theta2 * np.maximum(config.phi.phi(w), 0.0)
    return float(np.mean(transport + penalty))


def decompose_excess_risk(data: Dataset, model: LossModel,
                          qstar: SensitiveDistribution,
                          ) -> tuple[float, float, float]:
    """(total, transport share, reweighting share) of the excess risk.

    Share I is the loss gain from moving points at unit weights; share II is
    the further gain from tilting weights on the moved points.  The total is
    their sum by construction, exactly.
    """
    y = data.labels
    base_orig = float(np.mean(model.loss_batch(data.features, y)))
    moved_losses = model.loss_batch(qstar.perturbed_points, y)
    base_moved = float(np.mean(moved_losses))
    weighted = float(np.mean(qstar.weights * moved_losses))
    part_i = base_moved - base_orig
    part_ii = weighted - base_moved
    return part_i + part_ii, part_i, part_ii


@dataclass(frozen=True)
class EvaluationResult:
    report: StabilityReport
    qstar: SensitiveDistribution | None
    dual: DualSolution | None


def build_report(data: Dataset, model: LossModel, config: EvalConfig,
                 dual: DualSolution,
                 qstar: SensitiveDistribution) -> StabilityReport:
    vc = validate_config(config, data, model)
    primal = primal_cost(qstar, config)
    gap = primal - dual.dual_value if math.isfinite(primal) else math.inf
    decomposition = decompose_excess_risk(data, model, qstar)
    return StabilityReport(
        criterion_value=max(dual.dual_value, 0.0),
        dual_value=dual.dual_value,
        primal_cost_of_qstar=primal,
        duality_gap=gap,
        decomposition=decomposition,
        trace=dual.trace,
        status=dual.status,
        baseline_risk=vc.baseline_risk,
        h_star=dual.h_star,
        alpha_star=dual.alpha_star,
    )


def evaluate(data: Dataset, model: LossModel,
             config: EvalConfig) -> EvaluationResult:
    """Solve, extract the lift, and assemble the report.

    An unreachable threshold is reported (criterion +inf) rather than raised;
    genuine solver non-convergence still raises.
    """
    try:
        dual = solve(data, model, config)
    except ThresholdUnreachableError:
        vc = validate_config(config, data, model)
        report = StabilityReport(
            criterion_value=math.inf, dual_value=math.inf,
            primal_cost_of_qstar=math.inf, duality_gap=math.nan,
            decomposition=(math.nan, math.nan, math.nan), trace=(),
            status=Status.THRESHOLD_UNREACHABLE,
            baseline_risk=vc.baseline_risk, h_star=math.inf,
            alpha_star=math.nan)
        return EvaluationResult(report=report, qstar=None, dual=None)
    qstar = extract_sensitive_distribution(data, model, config, dual)
    report = build_report(data, model, config, dual, qstar)
    return EvaluationResult(report=report, qstar=qstar, dual=dual)


# ---------------------------------------------------------------------------
# per-feature stability
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureStability:
    index: int
    name: str
    value: float  # +inf when the threshold is unreachable through this feature
    status: Status


@dataclass(frozen=True)
class FeatureStabilityReport:
    """Per-feature criteria under single-coordinate movement masks.

    ``ranking`` lists feature indices from most sensitive (smallest
    criterion) to most stable; unreachable features sort last.
    """

    per_feature: tuple[FeatureStability, ...]
    ranking: tuple[int, ...]


def feature_stability(data: Dataset, model: LossModel, config: EvalConfig,
                      features: tuple[int, ...] | None = None,
                      max_workers: int | None = None) -> FeatureStabilityReport:
    """Solve the criterion once per feature, movement restricted to it.

    All features share the same risk threshold, so their criteria are
    directly comparable.  Solves are independent and run on a small thread
    pool; results are assembled in feature order regardless of completion
    order, so the report is deterministic.
    """
    indices = tuple(range(data.n_features)) if features is None else \
        tuple(int(i) for i in features)
    for i in indices:
        if not 0 <= i < data.n_features:
            raise ValueError(f"feature index {i} out of range")

    def solve_one(i: int) -> FeatureStability:
        cfg = replace(config, cost=replace(config.cost,
                                           feature_mask=frozenset({i})))
        try:
            dual = solve(data, model, cfg)
        except ThresholdUnreachableError:
            return FeatureStability(index=i, name=data.feature_names[i],
                                    value=math.inf,
                                    status=Status.THRESHOLD_UNREACHABLE)
        return FeatureStability(index=i, name=data.feature_names[i],
                                value=max(dual.dual_value, 0.0),
                                status=dual.status)

    workers = max_workers or min(len(indices), 8)
    if workers > 1 and len(indices) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = tuple(pool.map(solve_one, indices))
    else:
        entries = tuple(solve_one(i) for i in indices)
    order = sorted(range(len(entries)),
                   key=lambda k: (entries[k].value, entries[k].index))
    ranking = tuple(entries[k].index for k in order)
    return FeatureStabilityReport(per_feature=entries, ranking=ranking)
