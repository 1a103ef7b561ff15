"""Loss models the stability criterion can be evaluated for.

Three structural classes are supported, and every model declares which one it
belongs to so downstream solvers never guess:

* piecewise-linear losses  max_k (y * a_k.x + b_k)   (closed-form duals),
* the 0/1 loss of a linear classifier                (closed-form duals),
* smooth nonlinear margin losses (logistic, small MLP), handled iteratively.

Conventions: labels live in {-1, +1}; a point exactly on a decision boundary
counts as misclassified; ReLU'(0) = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import ClassVar, Union

import numpy as np
from scipy.special import expit

from .core import (LossKind, InvalidConfigError, UnsupportedLossError,
                   _frozen_array)


@dataclass(frozen=True)
class PiecewiseLinearModel:
    """loss(x, y) = max_k (y * a_k.x + b_k); may be negative."""

    a: np.ndarray  # (K, d) piece slopes
    b: np.ndarray  # (K,) piece offsets

    loss_kind: ClassVar[LossKind] = LossKind.PIECEWISE_LINEAR

    def __post_init__(self):
        a = _frozen_array(self, "a", self.a)
        b = _frozen_array(self, "b", self.b)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise InvalidConfigError(f"piece slopes must be (K, d), got {a.shape}")
        if b.shape != (a.shape[0],):
            raise InvalidConfigError(
                f"piece offsets shape {b.shape} does not match K={a.shape[0]}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise InvalidConfigError("piece coefficients must be finite")

    @property
    def n_features(self) -> int:
        return self.a.shape[1]

    @property
    def n_pieces(self) -> int:
        return self.a.shape[0]

    def piece_values(self, x: np.ndarray, y: float) -> np.ndarray:
        return y * (self.a @ np.asarray(x, dtype=float)) + self.b

    def loss(self, x: np.ndarray, y: float) -> float:
        return float(np.max(self.piece_values(x, y)))

    def loss_batch(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        vals = np.asarray(y, dtype=float)[:, None] * (X @ self.a.T) + self.b
        return vals.max(axis=1)

    def grad_x(self, x: np.ndarray, y: float) -> np.ndarray:
        # subgradient of the active piece; first piece wins ties
        k = int(np.argmax(self.piece_values(x, y)))
        return y * self.a[k]

    def grad_batch(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        vals = np.asarray(y, dtype=float)[:, None] * (X @ self.a.T) + self.b
        ks = np.argmax(vals, axis=1)
        return np.asarray(y, dtype=float)[:, None] * self.a[ks]


@dataclass(frozen=True)
class LinearClassifier:
    """sign(w.x + b) scored with the 0/1 loss; boundary counts as fooled."""

    weights: np.ndarray
    bias: float

    loss_kind: ClassVar[LossKind] = LossKind.ZERO_ONE

    def __post_init__(self):
        w = _frozen_array(self, "weights", self.weights)
        object.__setattr__(self, "bias", float(self.bias))
        if w.ndim != 1 or w.shape[0] < 1:
            raise InvalidConfigError("weights must be a 1-D vector")
        if not (np.all(np.isfinite(w)) and math.isfinite(self.bias)):
            raise InvalidConfigError("classifier parameters must be finite")
        if not np.any(w != 0):
            raise InvalidConfigError("weights must not be identically zero")

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def margin(self, x: np.ndarray) -> float:
        return float(self.weights @ np.asarray(x, dtype=float) + self.bias)

    def loss(self, x: np.ndarray, y: float) -> float:
        return 1.0 if y * self.margin(x) <= 0.0 else 0.0

    def loss_batch(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        margins = X @ self.weights + self.bias
        return (np.asarray(y, dtype=float) * margins <= 0.0).astype(float)

    def grad_x(self, x: np.ndarray, y: float) -> np.ndarray:
        raise UnsupportedLossError("the 0/1 loss has no usable gradient")

    def margin_distance(self, x: np.ndarray, y: float,
                        mask_vec: np.ndarray | None = None) -> float:
        """Squared distance to the nearest point classified differently,
        moving masked coordinates only.

        Zero for points already misclassified (boundary included); +inf when
        every movable coordinate has zero weight, so no movement can ever
        flip the prediction.
        """
        m = self.margin(x)
        if y * m <= 0.0:
            return 0.0
        w = self.weights if mask_vec is None else self.weights * mask_vec
        nsq = float(w @ w)
        if nsq == 0.0:
            return math.inf
        return m * m / nsq

    def margin_distance_batch(self, X: np.ndarray, y: np.ndarray,
                              mask_vec: np.ndarray | None = None) -> np.ndarray:
        margins = X @ self.weights + self.bias
        w = self.weights if mask_vec is None else self.weights * mask_vec
        nsq = float(w @ w)
        fooled = np.asarray(y, dtype=float) * margins <= 0.0
        if nsq == 0.0:
            return np.where(fooled, 0.0, math.inf)
        return np.where(fooled, 0.0, margins ** 2 / nsq)

    def boundary_projection(self, x: np.ndarray,
                            mask_vec: np.ndarray | None = None) -> np.ndarray:
        """Closest point on the decision boundary along masked coordinates."""
        x = np.asarray(x, dtype=float)
        w = self.weights if mask_vec is None else self.weights * mask_vec
        nsq = float(w @ w)
        if nsq == 0.0:
            return x.copy()
        return x - (self.margin(x) / nsq) * w


class Activation(Enum):
    RELU = "relu"
    TANH = "tanh"

    def apply(self, u: np.ndarray) -> np.ndarray:
        if self is Activation.RELU:
            return np.maximum(u, 0.0)
        return np.tanh(u)

    def derivative(self, u: np.ndarray) -> np.ndarray:
        if self is Activation.RELU:
            return (u > 0.0).astype(float)  # ReLU'(0) = 0
        t = np.tanh(u)
        return 1.0 - t * t


@dataclass(frozen=True)
class LogisticModel:
    """Margin model m(x) = w.x + b with loss log(1 + exp(-y m(x)))."""

    weights: np.ndarray
    bias: float

    loss_kind: ClassVar[LossKind] = LossKind.SMOOTH_NONLINEAR

    def __post_init__(self):
        w = _frozen_array(self, "weights", self.weights)
        object.__setattr__(self, "bias", float(self.bias))
        if w.ndim != 1 or w.shape[0] < 1:
            raise InvalidConfigError("weights must be a 1-D vector")
        if not (np.all(np.isfinite(w)) and math.isfinite(self.bias)):
            raise InvalidConfigError("model parameters must be finite")

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def margin(self, x: np.ndarray) -> float:
        return float(self.weights @ np.asarray(x, dtype=float) + self.bias)

    def loss(self, x: np.ndarray, y: float) -> float:
        return float(np.logaddexp(0.0, -y * self.margin(x)))

    def loss_batch(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        margins = X @ self.weights + self.bias
        return np.logaddexp(0.0, -np.asarray(y, dtype=float) * margins)

    def grad_x(self, x: np.ndarray, y: float) -> np.ndarray:
        # d/dx log(1+e^{-ym}) = -y sigma(-ym) w
        m = self.margin(x)
        return -y * float(expit(-y * m)) * self.weights

    def grad_batch(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        margins = X @ self.weights + self.bias
        return (-y * expit(-y * margins))[:, None] * self.weights


@dataclass(frozen=True)
class MlpModel:
    """One-hidden-layer margin model scored with the logistic loss.

    m(x) = w2 . act(W1 x + b1) + b2, loss(x, y) = log(1 + exp(-y m(x))).
    """

    w1: np.ndarray  # (hidden, d)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float
    activation: Activation = Activation.TANH

    loss_kind: ClassVar[LossKind] = LossKind.SMOOTH_NONLINEAR

    def __post_init__(self):
        w1 = _frozen_array(self, "w1", self.w1)
        b1 = _frozen_array(self, "b1", self.b1)
        w2 = _frozen_array(self, "w2", self.w2)
        object.__setattr__(self, "b2", float(self.b2))
        if not isinstance(self.activation, Activation):
            object.__setattr__(self, "activation", Activation(self.activation))
        if w1.ndim != 2 or w1.shape[0] < 1 or w1.shape[1] < 1:
            raise InvalidConfigError(f"w1 must be (hidden, d), got {w1.shape}")
        h = w1.shape[0]
        if b1.shape != (h,) or w2.shape != (h,):
            raise InvalidConfigError("b1/w2 shapes must match the hidden width")
        for arr in (w1, b1, w2):
            if not np.all(np.isfinite(arr)):
                raise InvalidConfigError("model parameters must be finite")
        if not math.isfinite(self.b2):
            raise InvalidConfigError("model parameters must be finite")

    @property
    def n_features(self) -> int:
        return self.w1.shape[1]

    def margin(self, x: np.ndarray) -> float:
        u = self.w1 @ np.asarray(x, dtype=float) + self.b1
        return float(self.w2 @ self.activation.apply(u) + self.b2)

    def loss(self, x: np.ndarray, y: float) -> float:
        return float(np.logaddexp(0.0, -y * self.margin(x)))

    def loss_batch(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        U = X @ self.w1.T + self.b1
        margins = self.activation.apply(U) @ self.w2 + self.b2
        return np.logaddexp(0.0, -np.asarray(y, dtype=float) * margins)

    def grad_x(self, x: np.ndarray, y: float) -> np.ndarray:
        u = self.w1 @ np.asarray(x, dtype=float) + self.b1
        m = float(self.w2 @ self.activation.apply(u) + self.b2)
        dm = self.w1.T @ (self.activation.derivative(u) * self.w2)
        return -y * float(expit(-y * m)) * dm

    def grad_batch(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        U = X @ self.w1.T + self.b1
        margins = self.activation.apply(U) @ self.w2 + self.b2
        dm = (self.activation.derivative(U) * self.w2) @ self.w1
        return (-y * expit(-y * margins))[:, None] * dm


LossModel = Union[PiecewiseLinearModel, LinearClassifier, LogisticModel, MlpModel]


def margin_distance(model: LinearClassifier, x: np.ndarray, y: float,
                    mask_vec: np.ndarray | None = None) -> float:
    """Squared flip distance of a linear classifier (see the method)."""
    if not isinstance(model, LinearClassifier):
        raise UnsupportedLossError(
            "margin_distance is defined for linear 0/1 classifiers only")
    return model.margin_distance(x, y, mask_vec)


def as_zero_one(model: LossModel) -> LinearClassifier:
    """View a linear-margin model through the 0/1 loss of its sign."""
    if isinstance(model, LinearClassifier):
        return model
    if isinstance(model, LogisticModel):
        return LinearClassifier(weights=model.weights, bias=model.bias)
    raise UnsupportedLossError(
        f"cannot score a {type(model).__name__} with the 0/1 loss")
