"""Domain types for transport/reweighting stability evaluation.

The central question the toolkit answers: how cheaply can an adversary push a
classifier's weighted risk up to a prescribed threshold ``r`` when it may both
*move* samples in feature space and *reweight* them?  Movement is priced at
``theta1`` per unit squared Euclidean distance (scaled by the destination
weight), reweighting at ``theta2`` through a convex divergence ``phi`` with
``phi(1) = 0``.  The minimal combined budget is the stability criterion; small
values mean the model's risk is fragile under distribution shift.

Either price may be infinite, which disables that channel entirely.  Infinite
prices are sentinels: every consumer branches on them explicitly and they never
enter arithmetic, so no inf*0 ambiguity can arise.

All types here are frozen dataclasses whose arrays are made read-only at
construction; violated invariants raise immediately rather than producing a
half-valid object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

BUDGET_TOL = 1e-12


# ---------------------------------------------------------------------------
# errors
# ---------------------------------------------------------------------------

class StabilityError(Exception):
    """Base class for every error raised by this package."""


class InvalidConfigError(StabilityError, ValueError):
    """A type invariant was violated at construction time."""


class InvalidCostError(InvalidConfigError):
    """Transport/reweighting prices are inconsistent or out of range."""


class ThresholdUnreachableError(StabilityError):
    """No admissible perturbation can raise the weighted risk to ``r``."""


class NonConvergenceError(StabilityError):
    """The iterative solver terminated away from the risk constraint."""


class DimensionMismatchError(StabilityError, ValueError):
    """Model and data disagree on the feature dimension."""


class UnsupportedLossError(StabilityError, TypeError):
    """The requested operation is undefined for this loss class."""


class ParseError(StabilityError, ValueError):
    """A delimited input file could not be parsed.

    ``row`` is the 1-based physical line number (the header is line 1) and
    ``column`` names the offending field when known.
    """

    def __init__(self, message: str, row: int | None = None,
                 column: str | None = None):
        loc = ""
        if row is not None:
            loc += f" (row {row}"
            loc += f", column {column!r})" if column is not None else ")"
        super().__init__(message + loc)
        self.row = row
        self.column = column


class LabelDomainError(ParseError):
    """Labels are outside the accepted {0,1} or {-1,+1} conventions."""


class SchemaError(StabilityError, ValueError):
    """A JSON document does not match its expected schema."""


# ---------------------------------------------------------------------------
# enums
# ---------------------------------------------------------------------------

class LossKind(Enum):
    PIECEWISE_LINEAR = "piecewise_linear"
    ZERO_ONE = "zero_one"
    SMOOTH_NONLINEAR = "smooth_nonlinear"


class PhiDivergence(Enum):
    """Convex weight penalty phi with phi(1) = 0."""

    KL = "kl"
    CHI_SQUARED = "chi2"

    def phi(self, w: np.ndarray) -> np.ndarray:
        """Evaluate phi elementwise on nonnegative weights.

        KL uses w*log(w) - w + 1 with the 0*log(0) = 0 convention, so
        phi(0) = 1; chi-squared is (w - 1)^2.
        """
        w = np.asarray(w, dtype=float)
        if self is PhiDivergence.KL:
            out = np.ones_like(w)
            pos = w > 0
            wp = w[pos]
            out[pos] = wp * np.log(wp) - wp + 1.0
            return out
        return (w - 1.0) ** 2


class Status(Enum):
    CONVERGED = "converged"
    THRESHOLD_UNREACHABLE = "threshold_unreachable"
    BASELINE_EXCEEDS_THRESHOLD = "baseline_exceeds_threshold"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _frozen_array(obj, name: str, value, dtype=np.float64) -> np.ndarray:
    """Coerce a field to a read-only contiguous ndarray."""
    arr = np.ascontiguousarray(value, dtype=dtype)
    arr.setflags(write=False)
    object.__setattr__(obj, name, arr)
    return arr


def is_infinite(theta: float) -> bool:
    """True when a price is the +inf sentinel (channel disabled)."""
    return math.isinf(theta)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """A finite sample with binary labels in {-1, +1}.

    ``features`` is (n, d) float64, ``labels`` is (n,) int, and
    ``feature_names`` has one unique name per column.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]

    def __post_init__(self):
        feats = _frozen_array(self, "features", self.features)
        labels = _frozen_array(self, "labels", self.labels,
                               dtype=np.int64)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise InvalidConfigError(
                f"features must be a non-empty 2-D array, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise InvalidConfigError("features must be finite")
        if labels.shape != (feats.shape[0],):
            raise InvalidConfigError(
                f"labels shape {labels.shape} does not match {feats.shape[0]} samples")
        if not np.all(np.isin(labels, (-1, 1))):
            raise InvalidConfigError("labels must take values in {-1, +1}")
        if len(self.feature_names) != feats.shape[1]:
            raise InvalidConfigError(
                f"{len(self.feature_names)} feature names for {feats.shape[1]} columns")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise InvalidConfigError("feature names must be unique")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostSpec:
    """Prices for the two perturbation channels.

    ``theta1`` scales squared-distance transport, ``theta2`` scales the weight
    divergence; both are strictly positive and may be ``math.inf``.  When
    ``budget_constant`` C is given the pair must satisfy
    1/theta1 + 1/theta2 = C (within 1e-12, with 1/inf = 0), which keeps
    sweeps over the two prices on a common budget curve.  ``feature_mask``
    optionally restricts movement to a subset of coordinates (0-based column
    indices); unmasked coordinates are frozen.
    """

    theta1: float
    theta2: float
    budget_constant: float | None = None
    feature_mask: frozenset[int] | None = None

    def __post_init__(self):
        for name in ("theta1", "theta2"):
            value = float(getattr(self, name))
            object.__setattr__(self, name, value)
            if math.isnan(value) or value <= 0.0:
                raise InvalidCostError(f"{name} must be > 0 or inf, got {value}")
        if self.budget_constant is not None:
            c = float(self.budget_constant)
            object.__setattr__(self, "budget_constant", c)
            if not math.isfinite(c) or c <= 0.0:
                raise InvalidCostError(f"budget_constant must be finite and > 0, got {c}")
            spent = self.inverse_theta1 + self.inverse_theta2
            if abs(spent - c) > BUDGET_TOL:
                raise InvalidCostError(
                    f"1/theta1 + 1/theta2 = {spent!r} violates the budget {c!r}")
        if self.feature_mask is not None:
            mask = frozenset(int(i) for i in self.feature_mask)
            object.__setattr__(self, "feature_mask", mask)
            if not mask:
                raise InvalidCostError("feature_mask must be non-empty when given")
            if any(i < 0 for i in mask):
                raise InvalidCostError("feature_mask indices must be >= 0")

    @property
    def inverse_theta1(self) -> float:
        return 0.0 if is_infinite(self.theta1) else 1.0 / self.theta1

    @property
    def inverse_theta2(self) -> float:
        return 0.0 if is_infinite(self.theta2) else 1.0 / self.theta2

    def mask_vector(self, n_features: int) -> np.ndarray:
        """0/1 indicator of movable coordinates, shape (n_features,)."""
        if self.feature_mask is None:
            return np.ones(n_features)
        if max(self.feature_mask) >= n_features:
            raise DimensionMismatchError(
                f"feature_mask index {max(self.feature_mask)} out of range "
                f"for {n_features} features")
        vec = np.zeros(n_features)
        vec[sorted(self.feature_mask)] = 1.0
        return vec


@dataclass(frozen=True)
class SolverOptions:
    """Numerical knobs shared by the dual solvers; defaults are load-bearing.

    ``dual_tol`` is both the golden-section interval width and the objective
    tolerance.  The bracket for the dual multiplier starts at 1 and doubles at
    most ``max_doublings`` times (cap 2**60) while the objective still slopes
    upward.  The iterative path runs ``outer_iters`` epochs of ``inner_iters``
    per-sample ascent steps each and accepts a terminal risk gap of
    ``feasibility_tol_iterative``.
    """

    dual_tol: float = 1e-9
    weight_tol: float = 1e-8
    gap_rel_tol: float = 1e-6
    slope_probe: float = 1e-6
    max_doublings: int = 60
    feasibility_tol: float = 1e-6
    feasibility_tol_iterative: float = 1e-2
    outer_iters: int = 500
    inner_iters: int = 20
    sample_lr: float = 1e-2
    h_lr: float = 5e-2

    def __post_init__(self):
        for name in ("dual_tol", "weight_tol", "gap_rel_tol", "slope_probe",
                     "feasibility_tol", "feasibility_tol_iterative",
                     "sample_lr", "h_lr"):
            if not getattr(self, name) > 0:
                raise InvalidConfigError(f"{name} must be positive")
        for name in ("max_doublings", "outer_iters", "inner_iters"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfigError(f"{name} must be a positive integer")


@dataclass(frozen=True)
class EvalConfig:
    """Everything needed to pose one stability evaluation."""

    cost: CostSpec
    phi: PhiDivergence
    risk_threshold: float
    loss_kind: LossKind
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        r = float(self.risk_threshold)
        object.__setattr__(self, "risk_threshold", r)
        if math.isnan(r) or r <= 0.0 or math.isinf(r):
            raise InvalidConfigError(f"risk_threshold must be finite and > 0, got {r}")
        if self.loss_kind is LossKind.ZERO_ONE and r >= 1.0:
            # the 0/1 loss tops out at 1, so no perturbation reaches r >= 1
            raise ThresholdUnreachableError(
                f"risk_threshold {r} is not attainable for 0/1 loss (worst case 1)")


@dataclass(frozen=True)
class ValidatedConfig:
    """An EvalConfig checked against a concrete dataset and model.

    ``baseline_risk`` is the unperturbed mean loss; when the threshold is
    already met (r <= baseline) the criterion is trivially zero.
    """

    config: EvalConfig
    baseline_risk: float

    @property
    def baseline_exceeds_threshold(self) -> bool:
        return self.config.risk_threshold <= self.baseline_risk


def validate_config(config: EvalConfig, data: Dataset, model) -> ValidatedConfig:
    """Cross-check a configuration against data and model, annotating it
    with the baseline risk.

    Raises DimensionMismatchError when model and data disagree on d or the
    feature mask points outside the columns, UnsupportedLossError when the
    configured loss kind is not the model's, and ThresholdUnreachableError
    for thresholds beyond the attainable worst case (0/1 loss, r >= 1 --
    already rejected at EvalConfig construction).
    """
    if model.n_features != data.n_features:
        raise DimensionMismatchError(
            f"model expects {model.n_features} features, data has {data.n_features}")
    if model.loss_kind is not config.loss_kind:
        raise UnsupportedLossError(
            f"config loss kind {config.loss_kind.value} does not match the "
            f"model's {model.loss_kind.value}")
    config.cost.mask_vector(data.n_features)  # raises on out-of-range indices
    baseline = float(np.mean(model.loss_batch(data.features, data.labels)))
    return ValidatedConfig(config=config, baseline_risk=baseline)


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensitiveDistribution:
    """The extracted worst-case lift: one (moved point, weight) per sample.

    Weights have mean one (the coupling marginal constraint); labels are the
    original labels, never flipped; ``transport_costs`` holds squared moving
    distances.  ``h_star``/``alpha_star`` are the dual coordinates the lift
    was read off from.
    """

    perturbed_points: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    h_star: float
    alpha_star: float
    transport_costs: np.ndarray

    def __post_init__(self):
        pts = _frozen_array(self, "perturbed_points", self.perturbed_points)
        labels = _frozen_array(self, "labels", self.labels,
                               dtype=np.int64)
        weights = _frozen_array(self, "weights", self.weights)
        costs = _frozen_array(self, "transport_costs", self.transport_costs)
        n = pts.shape[0]
        if pts.ndim != 2 or n < 1:
            raise InvalidConfigError("perturbed_points must be (n, d) with n >= 1")
        for name, arr in (("labels", labels), ("weights", weights),
                          ("transport_costs", costs)):
            if arr.shape != (n,):
                raise InvalidConfigError(f"{name} must have shape ({n},)")
        if not np.all(np.isin(labels, (-1, 1))):
            raise InvalidConfigError("labels must take values in {-1, +1}")
        if np.any(weights < 0):
            raise InvalidConfigError("weights must be nonnegative")
        mean_w = float(np.mean(weights))
        if abs(mean_w - 1.0) > 1e-8:
            raise InvalidConfigError(
                f"weights must average to 1 (got {mean_w!r})")
        if np.any(costs < 0):
            raise InvalidConfigError("transport_costs must be nonnegative")

    @property
    def n_samples(self) -> int:
        return self.perturbed_points.shape[0]


@dataclass(frozen=True)
class StabilityReport:
    """Summary of one evaluation run.

    ``criterion_value`` is the minimal perturbation budget (inf when the
    threshold is unreachable), ``duality_gap`` = primal - dual is a
    certificate of optimality when ~0, and ``decomposition`` splits the
    excess risk into (total, transport share, reweighting share).  The trace
    rows are (h, dual objective, weighted risk), in evaluation order.
    """

    criterion_value: float
    dual_value: float
    primal_cost_of_qstar: float
    duality_gap: float
    decomposition: tuple[float, float, float]
    trace: tuple[tuple[float, float, float], ...]
    status: Status
    baseline_risk: float
    h_star: float
    alpha_star: float

    def __post_init__(self):
        object.__setattr__(self, "decomposition",
                           tuple(float(v) for v in self.decomposition))
        object.__setattr__(self, "trace", tuple(
            (float(h), float(g), float(e)) for h, g, e in self.trace))
        if len(self.decomposition) != 3:
            raise InvalidConfigError("decomposition must be (total, part_i, part_ii)")
        if not (self.criterion_value >= 0.0 or math.isinf(self.criterion_value)):
            raise InvalidConfigError(
                f"criterion_value must be >= 0, got {self.criterion_value}")
        total, part_i, part_ii = self.decomposition
        if math.isfinite(total) and total != part_i + part_ii:
            raise InvalidConfigError("decomposition must satisfy total = i + ii exactly")
        if math.isfinite(self.duality_gap):
            # the gap equals h*(E - r) when primal and dual share one values
            # vector, and |E - r| is bounded by the loosest terminal risk
            # tolerance any solver path allows (1e-2, iterative smooth losses)
            tol = 1.1e-2 * max(1.0, self.h_star) + 1e-9
            if self.duality_gap < -tol:
                raise InvalidConfigError(
                    f"duality gap {self.duality_gap} below -{tol}: the extracted "
                    "distribution undercuts its own lower bound")
