"""Per-sample envelope transforms: sup_z  h * loss(z) - theta1 * d(z, zhat).

`d` is squared Euclidean distance on the movable coordinates; labels never
move (their transport price is infinite) and coordinates outside the feature
mask are frozen.  The transform and its maximizer have closed forms for the
piecewise-linear and 0/1 classes.  For smooth nonlinear losses the ascent is
first-order (Adam) with a fixed step budget, and the returned iterate is the
best one seen, so the value never falls below the h * loss(zhat) floor the
unmoved point provides.

For theta1 = +inf the transform collapses to h * loss(zhat) with the point
unmoved; h = 0 gives value 0 at the unmoved point for every loss class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SolverOptions, UnsupportedLossError, is_infinite
from .models import (LinearClassifier, LossModel, PiecewiseLinearModel,
                     LossKind)

MOVE_TOL = 1e-9

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class DTransformResult:
    value: float
    maximizer: np.ndarray
    moved: bool


def transport_cost(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Squared Euclidean moving cost between a point and its origin."""
    diff = np.asarray(x, dtype=float) - np.asarray(x_hat, dtype=float)
    return float(diff @ diff)


def _result(value: float, maximizer: np.ndarray, x_hat: np.ndarray) -> DTransformResult:
    moved = bool(np.linalg.norm(maximizer - np.asarray(x_hat, dtype=float)) > MOVE_TOL)
    return DTransformResult(value=float(value), maximizer=maximizer, moved=moved)


# ---------------------------------------------------------------------------
# piecewise-linear losses
# ---------------------------------------------------------------------------

def dtransform_piecewise(model: PiecewiseLinearModel, x_hat: np.ndarray,
                         y: float, h: float, theta1: float,
                         mask_vec: np.ndarray | None = None) -> DTransformResult:
    """Exact transform for max_k (y a_k.x + b_k).

    Per piece the supremum over x is a quadratic in h:
        h^2 ||a_k o m||^2 / (4 theta1) + h (y a_k.x_hat + b_k),
    attained at x_hat + (h y / (2 theta1)) (a_k o m); the best piece wins and
    ties go to the lowest piece index.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    if mask_vec is None:
        mask_vec = np.ones_like(x_hat)
    base = model.piece_values(x_hat, y)
    if is_infinite(theta1):
        k = int(np.argmax(base))
        return _result(h * base[k], x_hat.copy(), x_hat)
    masked = model.a * mask_vec
    gain = np.einsum("kd,kd->k", masked, masked) / (4.0 * theta1)
    vals = (h * h) * gain + h * base
    k = int(np.argmax(vals))
    maximizer = x_hat + (h * y / (2.0 * theta1)) * masked[k]
    return _result(vals[k], maximizer, x_hat)


# ---------------------------------------------------------------------------
# 0/1 loss of a linear classifier
# ---------------------------------------------------------------------------

def dtransform_zero_one(model: LinearClassifier, x_hat: np.ndarray, y: float,
                        h: float, theta1: float,
                        mask_vec: np.ndarray | None = None) -> DTransformResult:
    """Exact transform for the 0/1 loss: (h - theta1 * dstar)_+ .

    dstar is the squared flip distance.  The maximizer moves to the boundary
    projection only when flipping strictly pays (h > theta1 * dstar and
    dstar > 0); at the knife edge h = theta1 * dstar the point stays put.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    dstar = model.margin_distance(x_hat, y, mask_vec)
    if is_infinite(theta1) or math.isinf(dstar):
        # movement disabled or flip unreachable: only the unmoved point
        # remains, worth h on misclassified samples and 0 otherwise
        value = h if dstar == 0.0 else 0.0
        return _result(value, x_hat.copy(), x_hat)
    value = max(h - theta1 * dstar, 0.0)
    if h > theta1 * dstar and dstar > 0.0:
        maximizer = model.boundary_projection(x_hat, mask_vec)
    else:
        maximizer = x_hat.copy()
    return _result(value, maximizer, x_hat)


# ---------------------------------------------------------------------------
# smooth nonlinear losses
# ---------------------------------------------------------------------------

def adam_ascent_batch(model: LossModel, X: np.ndarray, X_hat: np.ndarray,
                      y: np.ndarray, h: float, theta1: float,
                      mask_vec: np.ndarray, steps: int, lr: float,
                      state: tuple[np.ndarray, np.ndarray, int] | None = None,
                      ) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray, int]]:
    """Run `steps` Adam ascent steps on h*loss - theta1*||X - X_hat||^2.

    Vectorized over samples; only masked coordinates receive updates, so
    frozen coordinates stay bitwise equal to the originals.  `state` carries
    (first moment, second moment, step count) across calls for warm restarts.
    """
    X = np.array(X, dtype=float)
    if state is None:
        state = (np.zeros_like(X), np.zeros_like(X), 0)
    m, v, t = state
    for _ in range(steps):
        g = (h * model.grad_batch(X, y) - 2.0 * theta1 * (X - X_hat)) * mask_vec
        t += 1
        m = _ADAM_B1 * m + (1.0 - _ADAM_B1) * g
        v = _ADAM_B2 * v + (1.0 - _ADAM_B2) * g * g
        m_hat = m / (1.0 - _ADAM_B1 ** t)
        v_hat = v / (1.0 - _ADAM_B2 ** t)
        X = X + lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
    return X, (m, v, t)


def ascent_objective(model: LossModel, X: np.ndarray, X_hat: np.ndarray,
                     y: np.ndarray, h: float, theta1: float) -> np.ndarray:
    """Per-sample h*loss - theta1*cost, vectorized."""
    diff = X - X_hat
    return h * model.loss_batch(X, y) - theta1 * np.einsum("nd,nd->n", diff, diff)


def dtransform_nonlinear(model: LossModel, x_hat: np.ndarray, y: float,
                         h: float, theta1: float,
                         mask_vec: np.ndarray | None = None,
                         opts: SolverOptions | None = None,
                         start: np.ndarray | None = None) -> DTransformResult:
    """Approximate transform for smooth losses by best-iterate Adam ascent."""
    opts = opts or SolverOptions()
    x_hat = np.asarray(x_hat, dtype=float)
    if mask_vec is None:
        mask_vec = np.ones_like(x_hat)
    if is_infinite(theta1) or h == 0.0:
        return _result(h * model.loss(x_hat, y), x_hat.copy(), x_hat)

    X_hat = x_hat[None, :]
    ys = np.asarray([y], dtype=float)
    X = X_hat.copy() if start is None else np.asarray(start, dtype=float)[None, :]
    best_x = x_hat.copy()
    best_val = h * model.loss(x_hat, y)  # the unmoved floor
    val0 = float(ascent_objective(model, X, X_hat, ys, h, theta1)[0])
    if val0 > best_val:
        best_val, best_x = val0, X[0].copy()
    state = None
    for _ in range(opts.inner_iters):
        X, state = adam_ascent_batch(model, X, X_hat, ys, h, theta1,
                                     mask_vec, 1, opts.sample_lr, state)
        val = float(ascent_objective(model, X, X_hat, ys, h, theta1)[0])
        if val > best_val:
            best_val, best_x = val, X[0].copy()
    return _result(best_val, best_x, x_hat)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def dtransform(model: LossModel, x_hat: np.ndarray, y: float, h: float,
               theta1: float, mask_vec: np.ndarray | None = None,
               opts: SolverOptions | None = None,
               start: np.ndarray | None = None) -> DTransformResult:
    """Route to the loss-class-appropriate transform."""
    kind = model.loss_kind
    if kind is LossKind.PIECEWISE_LINEAR:
        return dtransform_piecewise(model, x_hat, y, h, theta1, mask_vec)
    if kind is LossKind.ZERO_ONE:
        return dtransform_zero_one(model, x_hat, y, h, theta1, mask_vec)
    if kind is LossKind.SMOOTH_NONLINEAR:
        return dtransform_nonlinear(model, x_hat, y, h, theta1, mask_vec,
                                    opts, start)
    raise UnsupportedLossError(f"no transform for loss kind {kind!r}")
