"""One-dimensional concave duals of the stability problem and their solvers.

For each sample the envelope transform (dtransform module) turns the joint
transport/reweighting problem into a scalar concave maximization over the
risk multiplier h >= 0:

* KL penalty:    g(h) = h r - theta2 * log E[exp(values(h) / theta2)],
* chi-squared:   G(h) = h r + a*(h) + theta2
                        - theta2 * E[((values(h) + a*(h)) / (2 theta2) + 1)_+^2],

where a*(h) is the unique root of E[((values + a)/(2 theta2) + 1)_+] = 1 and
has an exact piecewise-linear solve.  With theta2 = +inf both collapse to
h r - E[values(h)].  The criterion itself is max(g(h*), 0).

Closed-form loss classes are maximized by bracketing (doubling the upper end
while the objective still slopes upward) followed by golden-section search.
Smooth nonlinear losses alternate blocks of per-sample ascent steps with one
ascent step on h whose exact gradient is r - E_Q[W * loss]; that path keeps a
trace of the weighted risk so convergence toward r is auditable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (Dataset, EvalConfig, LossKind, NonConvergenceError,
                   PhiDivergence, SolverOptions, Status,
                   ThresholdUnreachableError, UnsupportedLossError,
                   ValidatedConfig, is_infinite, validate_config)
from .dtransform import adam_ascent_batch, ascent_objective
from .models import LossModel

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class DualSolution:
    """Optimal dual coordinates plus solver telemetry.

    ``trace`` rows are (h, dual objective, weighted risk at that h).
    ``maximizers`` carries the iterative path's final
    per-sample ascent iterates so extraction can reuse them; closed-form
    solves leave it None.
    """

    h_star: float
    alpha_star: float
    dual_value: float
    evaluations: int
    trace: tuple[tuple[float, float, float], ...]
    status: Status
    maximizers: np.ndarray | None = None


# ---------------------------------------------------------------------------
# per-sample transform profiles (vectorized over the dataset)
# ---------------------------------------------------------------------------

class _ZeroOneProfile:
    """values(h) = (h - theta1 * dstar)_+ from precomputed flip distances."""

    def __init__(self, model, X, y, theta1, mask_vec):
        self.theta1 = theta1
        self.dstar = model.margin_distance_batch(X, y, mask_vec)
        self.finite = np.isfinite(self.dstar)
        self.fooled = self.dstar == 0.0

    def values_and_base(self, h: float):
        if is_infinite(self.theta1):
            base = self.fooled.astype(float)
            return h * base, base
        vals = np.zeros_like(self.dstar)
        f = self.finite
        vals[f] = np.maximum(h - self.theta1 * self.dstar[f], 0.0)
        flipped = self.finite & (self.dstar > 0.0) & (h > self.theta1 * self.dstar)
        base = (self.fooled | flipped).astype(float)
        return vals, base

    def values(self, h: float):
        return self.values_and_base(h)[0]


class _PiecewiseProfile:
    """Quadratic-in-h piece envelopes with the movable-coordinate gain."""

    def __init__(self, model, X, y, theta1, mask_vec):
        self.theta1 = theta1
        masked = model.a * mask_vec
        self.gain = np.einsum("kd,kd->k", masked, masked)  # ||a_k o m||^2
        self.L = np.asarray(y, dtype=float)[:, None] * (X @ model.a.T) + model.b

    def values_and_base(self, h: float):
        if is_infinite(self.theta1):
            ks = np.argmax(self.L, axis=1)
            base = np.take_along_axis(self.L, ks[:, None], axis=1)[:, 0]
            return h * base, base
        piece = (h * h / (4.0 * self.theta1)) * self.gain + h * self.L
        ks = np.argmax(piece, axis=1)
        rows = np.arange(self.L.shape[0])
        vals = piece[rows, ks]
        base = (h / (2.0 * self.theta1)) * self.gain[ks] + self.L[rows, ks]
        return vals, base

    def values(self, h: float):
        return self.values_and_base(h)[0]


class _FixedLossProfile:
    """theta1 = +inf for any loss class: values(h) = h * loss(zhat)."""

    def __init__(self, base_losses):
        self.base = np.asarray(base_losses, dtype=float)

    def values_and_base(self, h: float):
        return h * self.base, self.base

    def values(self, h: float):
        return self.values_and_base(h)[0]


def best_iterate_ascent(model: LossModel, X_hat: np.ndarray, y: np.ndarray,
                        h: float, theta1: float, mask_vec: np.ndarray,
                        opts: SolverOptions, start: np.ndarray | None = None):
    """Per-sample best-iterate ascent for smooth losses at a fixed h.

    Returns (values, base losses, points).  The unmoved points are always
    candidates, so values >= h * loss(zhat) holds sample by sample.
    """
    base_hat = model.loss_batch(X_hat, y)
    best_obj = h * base_hat
    best_X = np.array(X_hat, dtype=float)
    if h == 0.0:
        return np.zeros_like(base_hat), base_hat, best_X
    if is_infinite(theta1):
        return best_obj, base_hat, best_X
    X = best_X.copy() if start is None else np.array(start, dtype=float)
    if start is not None:
        obj = ascent_objective(model, X, X_hat, y, h, theta1)
        better = obj > best_obj
        best_obj = np.where(better, obj, best_obj)
        best_X[better] = X[better]
    state = None
    for _ in range(opts.inner_iters):
        X, state = adam_ascent_batch(model, X, X_hat, y, h, theta1,
                                     mask_vec, 1, opts.sample_lr, state)
        obj = ascent_objective(model, X, X_hat, y, h, theta1)
        better = obj > best_obj
        best_obj = np.where(better, obj, best_obj)
        best_X[better] = X[better]
    return best_obj, model.loss_batch(best_X, y), best_X


class _IterativeProfile:
    """Fresh best-iterate ascent per evaluation; smooth losses, finite theta1."""

    def __init__(self, model, X, y, theta1, mask_vec, opts):
        self.model, self.X_hat, self.y = model, X, np.asarray(y, dtype=float)
        self.theta1, self.mask_vec, self.opts = theta1, mask_vec, opts

    def values_and_base(self, h: float):
        vals, base, _ = best_iterate_ascent(self.model, self.X_hat, self.y, h,
                                            self.theta1, self.mask_vec, self.opts)
        return vals, base

    def values(self, h: float):
        return self.values_and_base(h)[0]


def _profile_for(data: Dataset, model: LossModel, config: EvalConfig):
    mask_vec = config.cost.mask_vector(data.n_features)
    theta1 = config.cost.theta1
    X, y = data.features, data.labels
    if config.loss_kind is LossKind.ZERO_ONE:
        return _ZeroOneProfile(model, X, y, theta1, mask_vec)
    if config.loss_kind is LossKind.PIECEWISE_LINEAR:
        return _PiecewiseProfile(model, X, y, theta1, mask_vec)
    if config.loss_kind is LossKind.SMOOTH_NONLINEAR:
        if is_infinite(theta1):
            return _FixedLossProfile(model.loss_batch(X, y))
        return _IterativeProfile(model, X, y, theta1, mask_vec, config.solver)
    raise UnsupportedLossError(f"no dual profile for {config.loss_kind!r}")


# ---------------------------------------------------------------------------
# objective pieces
# ---------------------------------------------------------------------------

def _logmeanexp(z: np.ndarray) -> float:
    m = float(np.max(z))
    return m + math.log(float(np.mean(np.exp(z - m))))


def chi2_alpha_star(losses: np.ndarray, theta2: float) -> float:
    """Exact root of mean(((l + a) / (2 theta2) + 1)_+) = 1 over a.

    The left side is piecewise linear and nondecreasing with breakpoints
    -l_i - 2*theta2; terms activate in decreasing order of l_i, so scanning
    the segments in that order and solving each linear piece finds the
    minimal (unique, up to flat touches) crossing exactly.
    """
    if is_infinite(theta2) or theta2 <= 0.0:
        raise ValueError("chi2_alpha_star needs a finite positive theta2")
    l = np.sort(np.asarray(losses, dtype=float))[::-1]
    n = l.size
    two_t = 2.0 * theta2
    prefix = np.cumsum(l)
    for j in range(1, n + 1):
        alpha = (two_t * (n - j) - prefix[j - 1]) / j
        lo = -l[j - 1] - two_t
        if alpha < lo - 1e-9 * max(1.0, abs(lo)):
            continue
        if j < n:
            hi = -l[j] - two_t
            if alpha > hi + 1e-9 * max(1.0, abs(hi)):
                continue
        return float(alpha)
    return float(-prefix[-1] / n)  # all breakpoints tied


def _diagnose(values: np.ndarray, base: np.ndarray, phi: PhiDivergence,
              theta2: float, h: float, r: float):
    """Objective, weighted risk, alpha and weights at one dual point."""
    if is_infinite(theta2):
        weights = np.ones_like(values)
        mean_v = float(np.mean(values))
        return h * r - mean_v, float(np.mean(base)), -mean_v, weights
    if phi is PhiDivergence.KL:
        z = values / theta2
        m = float(np.max(z))
        e = np.exp(z - m)
        lme = m + math.log(float(np.mean(e)))
        weights = e / float(np.mean(e))
        obj = h * r - theta2 * lme
        return obj, float(np.mean(weights * base)), -theta2 * lme, weights
    alpha = chi2_alpha_star(values, theta2)
    weights = np.maximum((values + alpha) / (2.0 * theta2) + 1.0, 0.0)
    obj = h * r + alpha + theta2 - theta2 * float(np.mean(weights ** 2))
    return obj, float(np.mean(weights * base)), alpha, weights


def weights_from_values(values: np.ndarray, phi: PhiDivergence, theta2: float,
                        alpha: float | None = None) -> np.ndarray:
    """Worst-case weights induced by transform values at a dual point.

    KL weights are the mean-one exponential tilt exp(values/theta2); the
    chi-squared ones are ((values + alpha)/(2 theta2) + 1)_+ with the exact
    alpha (recomputed when not supplied).  theta2 = +inf disables
    reweighting and returns unit weights.
    """
    values = np.asarray(values, dtype=float)
    if is_infinite(theta2):
        return np.ones_like(values)
    if phi is PhiDivergence.KL:
        z = values / theta2
        e = np.exp(z - float(np.max(z)))
        return e / float(np.mean(e))
    if alpha is None:
        alpha = chi2_alpha_star(values, theta2)
    return np.maximum((values + alpha) / (2.0 * theta2) + 1.0, 0.0)


def kl_dual_objective(data: Dataset, model: LossModel, config: EvalConfig,
                      h: float) -> float:
    """g(h) for the KL penalty; theta2 = +inf uses the linear limit."""
    profile = _profile_for(data, model, config)
    values, base = profile.values_and_base(h)
    obj, _, _, _ = _diagnose(values, base, PhiDivergence.KL,
                             config.cost.theta2, h, config.risk_threshold)
    return obj

def chi2_dual_objective(data: Dataset, model: LossModel, config: EvalConfig,
                        h: float) -> tuple[float, float]:
    """(G(h), alpha*(h)) for the chi-squared penalty."""
    profile = _profile_for(data, model, config)
    values, base = profile.values_and_base(h)
    obj, _, alpha, _ = _diagnose(values, base, PhiDivergence.CHI_SQUARED,
                                 config.cost.theta2, h, config.risk_threshold)
    return obj, alpha


# ---------------------------------------------------------------------------
# scalar maximization: bracket by doubling, then golden-section
# ---------------------------------------------------------------------------

class _Tracker:
    def __init__(self, fdiag: Callable[[float], tuple[float, float, float]]):
        self.fdiag = fdiag
        self.evals = 0
        self.trace: list[tuple[float, float, float]] = []
        self.best: tuple[float, float, float, float] | None = None  # (obj, h, E, alpha)

    def __call__(self, h: float) -> float:
        obj, risk, alpha = self.fdiag(h)
        self.evals += 1
        self.trace.append((float(h), obj, risk))
        if self.best is None or obj > self.best[0]:
            self.best = (obj, h, risk, alpha)
        return obj


def _maximize_concave(fdiag, opts: SolverOptions) -> _Tracker:
    """Maximize a concave objective over h >= 0.

    ``fdiag(h)`` returns (objective, weighted risk, alpha).  Raises
    ThresholdUnreachableError when the objective still slopes upward at the
    doubling cap 2**max_doublings, i.e. the dual is unbounded.
    """
    f = _Tracker(fdiag)
    f(0.0)
    hi = 1.0
    doublings = 0
    while True:
        delta = opts.slope_probe * max(1.0, hi)
        if f(hi) - f(hi - delta) <= 0.0:  # no longer increasing at hi
            break
        if doublings >= opts.max_doublings:
            raise ThresholdUnreachableError(
                "the dual objective is still increasing at the bracket cap "
                f"2**{opts.max_doublings}: no admissible perturbation attains "
                "the risk threshold")
        hi *= 2.0
        doublings += 1
    a, b = 0.0, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > opts.dual_tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return f


def _trivial_solution(vc: ValidatedConfig) -> DualSolution:
    trace = ((0.0, 0.0, vc.baseline_risk),)
    return DualSolution(h_star=0.0, alpha_star=0.0, dual_value=0.0,
                        evaluations=1, trace=trace,
                        status=Status.BASELINE_EXCEEDS_THRESHOLD)


def _solve_scalar(data: Dataset, model: LossModel, config: EvalConfig,
                  phi: PhiDivergence) -> DualSolution:
    vc = validate_config(config, data, model)
    if vc.baseline_exceeds_threshold:
        return _trivial_solution(vc)
    profile = _profile_for(data, model, config)
    theta2, r = config.cost.theta2, config.risk_threshold

    def fdiag(h: float):
        values, base = profile.values_and_base(h)
        obj, risk, alpha, _ = _diagnose(values, base, phi, theta2, h, r)
        return obj, risk, alpha

    tracker = _maximize_concave(fdiag, config.solver)
    obj, h_star, risk, alpha = tracker.best
    return DualSolution(h_star=float(h_star), alpha_star=float(alpha),
                        dual_value=float(obj), evaluations=tracker.evals,
                        trace=tuple(tracker.trace), status=Status.CONVERGED)


def solve_kl(data: Dataset, model: LossModel, config: EvalConfig) -> DualSolution:
    """Maximize the KL dual.  Closed-form loss classes only need function
    evaluations; smooth losses with finite theta1 re-run the inner ascent per
    evaluation, so prefer solve_nonlinear for those.
    """
    return _solve_scalar(data, model, config, PhiDivergence.KL)


def solve_chi2(data: Dataset, model: LossModel, config: EvalConfig) -> DualSolution:
    """Maximize the chi-squared dual with the inner alpha solved exactly."""
    return _solve_scalar(data, model, config, PhiDivergence.CHI_SQUARED)


# ---------------------------------------------------------------------------
# smooth nonlinear losses: alternating ascent
# ---------------------------------------------------------------------------

def solve_nonlinear(data: Dataset, model: LossModel,
                    config: EvalConfig) -> DualSolution:
    """Alternating ascent for smooth losses with finite transport price.

    Each epoch runs ``inner_iters`` warm-started Adam steps on every sample,
    then one Adam step on h along the exact multiplier gradient
    r - E_Q[W * loss].  The epoch budget is fixed; termination is judged by
    the terminal risk gap.  With theta1 = +inf samples cannot move, the dual
    is exactly one-dimensional, and the closed-form path solves it directly.
    """
    if config.loss_kind is not LossKind.SMOOTH_NONLINEAR:
        raise UnsupportedLossError(
            "solve_nonlinear expects a smooth nonlinear loss; closed-form "
            "classes are served by solve_kl / solve_chi2")
    vc = validate_config(config, data, model)
    if vc.baseline_exceeds_threshold:
        return _trivial_solution(vc)
    theta1, theta2 = config.cost.theta1, config.cost.theta2
    if is_infinite(theta1):
        return _solve_scalar(data, model, config, config.phi)

    opts = config.solver
    r, phi = config.risk_threshold, config.phi
    mask_vec = config.cost.mask_vector(data.n_features)
    X_hat = data.features
    y = data.labels.astype(float)
    X = np.array(X_hat, dtype=float)
    sample_state = None
    h = 1.0
    hm = hv = 0.0
    trace: list[tuple[float, float, float]] = []
    risks: list[float] = []

    def diagnose(h_now: float):
        diff = X - X_hat
        cost = np.einsum("nd,nd->n", diff, diff)
        base = model.loss_batch(X, y)
        values = h_now * base - theta1 * cost
        return _diagnose(values, base, phi, theta2, h_now, r)

    for t in range(1, opts.outer_iters + 1):
        X, sample_state = adam_ascent_batch(model, X, X_hat, y, h, theta1,
                                            mask_vec, opts.inner_iters,
                                            opts.sample_lr, sample_state)
        obj, risk, alpha, _ = diagnose(h)
        trace.append((float(h), obj, risk))
        risks.append(risk)
        grad = r - risk
        hm = _ADAM_B1 * hm + (1.0 - _ADAM_B1) * grad
        hv = _ADAM_B2 * hv + (1.0 - _ADAM_B2) * grad * grad
        m_hat = hm / (1.0 - _ADAM_B1 ** t)
        v_hat = hv / (1.0 - _ADAM_B2 ** t)
        h = max(h + opts.h_lr * m_hat / (math.sqrt(v_hat) + _ADAM_EPS), 0.0)

    obj, risk, alpha, _ = diagnose(h)
    gap = risk - r
    if abs(gap) > opts.feasibility_tol_iterative:
        if max(risks) < r:
            raise ThresholdUnreachableError(
                f"weighted risk plateaued at {max(risks):.6g} below the "
                f"threshold {r:.6g} over {opts.outer_iters} epochs")
        raise NonConvergenceError(
            f"terminal weighted risk {risk:.6g} misses the threshold "
            f"{r:.6g} by {gap:+.3g} (tolerance "
            f"{opts.feasibility_tol_iterative:g})")
    return DualSolution(h_star=float(h), alpha_star=float(alpha),
                        dual_value=float(obj), evaluations=opts.outer_iters + 1,
                        trace=tuple(trace), status=Status.CONVERGED,
                        maximizers=X)


def solve(data: Dataset, model: LossModel, config: EvalConfig) -> DualSolution:
    """Dispatch on loss class and penalty."""
    if (config.loss_kind is LossKind.SMOOTH_NONLINEAR
            and not is_infinite(config.cost.theta1)):
        return solve_nonlinear(data, model, config)
    if config.phi is PhiDivergence.KL:
        return solve_kl(data, model, config)
    return solve_chi2(data, model, config)
