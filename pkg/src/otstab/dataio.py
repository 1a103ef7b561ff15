"""File formats: datasets (CSV), models and results (JSON), plot tables.

Every format round-trips exactly: floats are written as shortest
round-trip decimals (Python repr) inside JSON, non-finite values as the
strings "inf"/"-inf"/"nan", and documents are emitted with a fixed key
order so equal inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit, ndtri

from .core import (CostSpec, Dataset, EvalConfig, LabelDomainError, LossKind,
                   ParseError, PhiDivergence, SchemaError, SensitiveDistribution,
                   SolverOptions, StabilityReport, Status)
from .analysis import FeatureStability, FeatureStabilityReport
from .models import (Activation, LinearClassifier, LogisticModel, LossModel,
                     MlpModel, PiecewiseLinearModel)


# ---------------------------------------------------------------------------
# JSON float conventions
# ---------------------------------------------------------------------------

def _enc(x: float):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _dec(x) -> float:
    if isinstance(x, str):
        return float(x)
    return float(x)


def _dump(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _load(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def load_dataset(path, label_column: str = "y") -> Dataset:
    """Read a headed CSV of numeric features plus one label column.

    Labels may use either the {0,1} or the {-1,+1} convention; {0,1} is
    mapped to {-1,+1}.  Parse failures name the physical line (header = 1)
    and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, no header") from None
        header = [name.strip() for name in header]
        if label_column not in header:
            raise ParseError(
                f"{path}: label column {label_column!r} not in header {header}")
        label_idx = header.index(label_column)
        names = tuple(n for i, n in enumerate(header) if i != label_idx)
        if len(set(names)) != len(names):
            raise ParseError(f"{path}: duplicate feature names in header")
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: expected {len(header)} fields, "
                                 f"got {len(row)}", row=lineno)
            values = []
            for idx, cell in enumerate(row):
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(f"{path}: non-numeric value {cell!r}",
                                     row=lineno, column=header[idx]) from None
                if idx == label_idx:
                    labels.append((value, lineno))
                else:
                    values.append(value)
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no samples")
    raw = np.array([v for v, _ in labels])
    if np.all(np.isin(raw, (-1.0, 1.0))):
        mapped = raw.astype(np.int64)
    elif np.all(np.isin(raw, (0.0, 1.0))):
        mapped = np.where(raw == 0.0, -1, 1).astype(np.int64)
    else:
        bad = next((v, ln) for v, ln in labels if v not in (-1.0, 0.0, 1.0))
        raise LabelDomainError(
            f"{path}: label {bad[0]!r} outside the {{0,1}} / {{-1,+1}} "
            "conventions", row=bad[1], column=label_column)
    return Dataset(features=np.array(rows), labels=mapped, feature_names=names)


def save_dataset(data: Dataset, path, label_column: str = "y") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(data.feature_names) + [label_column])
        for x, y in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def generate_toy(seed: int, n_per_class: int = 100,
                 mean_pos: tuple[float, ...] = (2.0, 2.0),
                 mean_neg: tuple[float, ...] = (-1.0, -1.0)) -> Dataset:
    """Two spherical Gaussian blobs with unit covariance.

    The +1 block is drawn first around ``mean_pos``, then the -1 block
    around ``mean_neg``.  Normals come from PCG64 53-bit integers mapped to
    the open unit interval as (k + 0.5) / 2**53 and pushed through the
    inverse normal CDF, so a seed pins the dataset bit-for-bit across
    platforms.
    """
    mean_pos = np.asarray(mean_pos, dtype=float)
    mean_neg = np.asarray(mean_neg, dtype=float)
    if mean_pos.shape != mean_neg.shape or mean_pos.ndim != 1:
        raise ValueError("class means must be 1-D and of equal length")
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    d = mean_pos.size
    rng = np.random.Generator(np.random.PCG64(seed))
    ticks = rng.integers(0, 2 ** 53, size=(2 * n_per_class, d))
    normals = ndtri((ticks + 0.5) / 2.0 ** 53)
    features = np.vstack([mean_pos + normals[:n_per_class],
                          mean_neg + normals[n_per_class:]])
    labels = np.concatenate([np.ones(n_per_class, dtype=np.int64),
                             -np.ones(n_per_class, dtype=np.int64)])
    names = tuple(f"x{i + 1}" for i in range(d))
    return Dataset(features=features, labels=labels, feature_names=names)


def fit_toy_logistic(data: Dataset, epochs: int = 500,
                     lr: float = 0.1) -> LogisticModel:
    """Deterministic full-batch gradient descent from zero initialization."""
    X, y = data.features, data.labels.astype(float)
    w = np.zeros(data.n_features)
    b = 0.0
    n = data.n_samples
    for _ in range(epochs):
        s = expit(-y * (X @ w + b))  # d loss / d margin = -y * s
        w -= lr * (-(X.T @ (y * s)) / n)
        b -= lr * (-float(np.mean(y * s)))
    return LogisticModel(weights=w, bias=b)


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

def model_to_dict(model: LossModel) -> dict:
    if isinstance(model, PiecewiseLinearModel):
        return {"kind": "piecewise_linear",
                "pieces": [{"a": [_enc(v) for v in a], "b": _enc(b)}
                           for a, b in zip(model.a, model.b)]}
    if isinstance(model, LinearClassifier):
        return {"kind": "linear_classifier_01",
                "weights": [_enc(v) for v in model.weights],
                "bias": _enc(model.bias)}
    if isinstance(model, LogisticModel):
        return {"kind": "logistic",
                "weights": [_enc(v) for v in model.weights],
                "bias": _enc(model.bias)}
    if isinstance(model, MlpModel):
        return {"kind": "mlp", "activation": model.activation.value,
                "w1": [[_enc(v) for v in row] for row in model.w1],
                "b1": [_enc(v) for v in model.b1],
                "w2": [_enc(v) for v in model.w2],
                "b2": _enc(model.b2)}
    raise SchemaError(f"cannot serialize model of type {type(model).__name__}")


def model_from_dict(obj) -> LossModel:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise SchemaError("model document must be an object with a 'kind' tag")
    kind = obj["kind"]
    try:
        if kind == "piecewise_linear":
            pieces = obj["pieces"]
            return PiecewiseLinearModel(
                a=np.array([[_dec(v) for v in p["a"]] for p in pieces]),
                b=np.array([_dec(p["b"]) for p in pieces]))
        if kind == "linear_classifier_01":
            return LinearClassifier(
                weights=np.array([_dec(v) for v in obj["weights"]]),
                bias=_dec(obj["bias"]))
        if kind == "logistic":
            return LogisticModel(
                weights=np.array([_dec(v) for v in obj["weights"]]),
                bias=_dec(obj["bias"]))
        if kind == "mlp":
            return MlpModel(
                w1=np.array([[_dec(v) for v in row] for row in obj["w1"]]),
                b1=np.array([_dec(v) for v in obj["b1"]]),
                w2=np.array([_dec(v) for v in obj["w2"]]),
                b2=_dec(obj["b2"]),
                activation=Activation(obj["activation"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed {kind!r} model document: {exc}") from exc
    raise SchemaError(f"unknown model kind {kind!r}")


def save_model(model: LossModel, path) -> None:
    _dump(model_to_dict(model), path)


def load_model(path) -> LossModel:
    return model_from_dict(_load(path))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def config_to_dict(config: EvalConfig) -> dict:
    cost = config.cost
    return {
        "cost": {
            "theta1": _enc(cost.theta1),
            "theta2": _enc(cost.theta2),
            "budget_constant": None if cost.budget_constant is None
                               else _enc(cost.budget_constant),
            "feature_mask": None if cost.feature_mask is None
                            else sorted(cost.feature_mask),
        },
        "phi": config.phi.value,
        "risk_threshold": _enc(config.risk_threshold),
        "loss_kind": config.loss_kind.value,
        "solver": {k: _enc(v) if isinstance(v, float) else v
                   for k, v in asdict(config.solver).items()},
    }


def config_from_dict(obj) -> EvalConfig:
    try:
        cost_obj = obj["cost"]
        cost = CostSpec(
            theta1=_dec(cost_obj["theta1"]),
            theta2=_dec(cost_obj["theta2"]),
            budget_constant=None if cost_obj.get("budget_constant") is None
                            else _dec(cost_obj["budget_constant"]),
            feature_mask=None if cost_obj.get("feature_mask") is None
                         else frozenset(cost_obj["feature_mask"]))
        solver_obj = dict(obj.get("solver") or {})
        for key in ("max_doublings", "outer_iters", "inner_iters"):
            if key in solver_obj:
                solver_obj[key] = int(solver_obj[key])
        for key, value in solver_obj.items():
            if not isinstance(value, int):
                solver_obj[key] = _dec(value)
        return EvalConfig(cost=cost, phi=PhiDivergence(obj["phi"]),
                          risk_threshold=_dec(obj["risk_threshold"]),
                          loss_kind=LossKind(obj["loss_kind"]),
                          solver=SolverOptions(**solver_obj))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed config document: {exc}") from exc


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

def report_to_dict(report: StabilityReport) -> dict:
    total, transport, reweighting = report.decomposition
    return {
        "schema": "stability_report/v1",
        "status": report.status.value,
        "criterion_value": _enc(report.criterion_value),
        "dual_value": _enc(report.dual_value),
        "primal_cost_of_qstar": _enc(report.primal_cost_of_qstar),
        "duality_gap": _enc(report.duality_gap),
        "baseline_risk": _enc(report.baseline_risk),
        "h_star": _enc(report.h_star),
        "alpha_star": _enc(report.alpha_star),
        "decomposition": {"total": _enc(total), "transport": _enc(transport),
                          "reweighting": _enc(reweighting)},
        "trace": [[_enc(h), _enc(g), _enc(e)] for h, g, e in report.trace],
    }


def report_from_dict(obj) -> StabilityReport:
    try:
        dec = obj["decomposition"]
        return StabilityReport(
            criterion_value=_dec(obj["criterion_value"]),
            dual_value=_dec(obj["dual_value"]),
            primal_cost_of_qstar=_dec(obj["primal_cost_of_qstar"]),
            duality_gap=_dec(obj["duality_gap"]),
            decomposition=(_dec(dec["total"]), _dec(dec["transport"]),
                           _dec(dec["reweighting"])),
            trace=tuple((_dec(h), _dec(g), _dec(e)) for h, g, e in obj["trace"]),
            status=Status(obj["status"]),
            baseline_risk=_dec(obj["baseline_risk"]),
            h_star=_dec(obj["h_star"]),
            alpha_star=_dec(obj["alpha_star"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed report document: {exc}") from exc


def save_report(report: StabilityReport, path) -> None:
    _dump(report_to_dict(report), path)


def load_report(path) -> StabilityReport:
    return report_from_dict(_load(path))


def qstar_to_dict(qstar: SensitiveDistribution) -> dict:
    return {
        "schema": "sensitive_distribution/v1",
        "h_star": _enc(qstar.h_star),
        "alpha_star": _enc(qstar.alpha_star),
        "perturbed_points": [[_enc(v) for v in row]
                             for row in qstar.perturbed_points],
        "labels": [int(v) for v in qstar.labels],
        "weights": [_enc(v) for v in qstar.weights],
        "transport_costs": [_enc(v) for v in qstar.transport_costs],
    }


def qstar_from_dict(obj) -> SensitiveDistribution:
    try:
        return SensitiveDistribution(
            perturbed_points=np.array([[_dec(v) for v in row]
                                       for row in obj["perturbed_points"]]),
            labels=np.array(obj["labels"], dtype=np.int64),
            weights=np.array([_dec(v) for v in obj["weights"]]),
            h_star=_dec(obj["h_star"]),
            alpha_star=_dec(obj["alpha_star"]),
            transport_costs=np.array([_dec(v) for v in obj["transport_costs"]]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed distribution document: {exc}") from exc


def save_qstar(qstar: SensitiveDistribution, path) -> None:
    _dump(qstar_to_dict(qstar), path)


def load_qstar(path) -> SensitiveDistribution:
    return qstar_from_dict(_load(path))


def feature_report_to_dict(report: FeatureStabilityReport) -> dict:
    return {
        "schema": "feature_stability/v1",
        "per_feature": [{"index": e.index, "name": e.name,
                         "value": _enc(e.value), "status": e.status.value}
                        for e in report.per_feature],
        "ranking": list(report.ranking),
    }


def feature_report_from_dict(obj) -> FeatureStabilityReport:
    try:
        entries = tuple(FeatureStability(index=int(e["index"]), name=e["name"],
                                         value=_dec(e["value"]),
                                         status=Status(e["status"]))
                        for e in obj["per_feature"])
        return FeatureStabilityReport(per_feature=entries,
                                      ranking=tuple(int(i) for i in obj["ranking"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed feature report document: {exc}") from exc


def save_feature_report(report: FeatureStabilityReport, path) -> None:
    _dump(feature_report_to_dict(report), path)


def load_feature_report(path) -> FeatureStabilityReport:
    return feature_report_from_dict(_load(path))


def save_feature_csv(report: FeatureStabilityReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "name", "criterion_value", "status"])
        for e in report.per_feature:
            value = "inf" if math.isinf(e.value) else repr(e.value)
            writer.writerow([e.index, e.name, value, e.status.value])


# ---------------------------------------------------------------------------
# plot tables
# ---------------------------------------------------------------------------

def emit_plot_data(qstar: SensitiveDistribution, data: Dataset, path) -> None:
    """Write the lift as a flat CSV for external plotting.

    Two-feature data gets original and perturbed coordinates side by side;
    higher-dimensional data gets the weight/cost table only.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if data.n_features == 2:
            writer.writerow(["x1_orig", "x2_orig", "x1_pert", "x2_pert",
                             "label", "weight", "transport_cost"])
            for x0, x1, y, w, c in zip(data.features, qstar.perturbed_points,
                                       qstar.labels, qstar.weights,
                                       qstar.transport_costs):
                writer.writerow([repr(float(x0[0])), repr(float(x0[1])),
                                 repr(float(x1[0])), repr(float(x1[1])),
                                 int(y), repr(float(w)), repr(float(c))])
        else:
            writer.writerow(["label", "weight", "transport_cost"])
            for y, w, c in zip(qstar.labels, qstar.weights,
                               qstar.transport_costs):
                writer.writerow([int(y), repr(float(w)), repr(float(c))])


# ---------------------------------------------------------------------------
# run manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunManifest:
    """Record of one CLI invocation; seed + manifest pins outputs exactly."""

    config: EvalConfig
    dataset_path: str
    model_path: str
    seed: int
    outputs: tuple[tuple[str, str], ...]


def manifest_to_dict(manifest: RunManifest) -> dict:
    return {
        "schema": "run_manifest/v1",
        "config": config_to_dict(manifest.config),
        "dataset_path": manifest.dataset_path,
        "model_path": manifest.model_path,
        "seed": manifest.seed,
        "outputs": {k: v for k, v in manifest.outputs},
    }


def save_manifest(manifest: RunManifest, path) -> None:
    _dump(manifest_to_dict(manifest), path)


def load_manifest(path) -> RunManifest:
    obj = _load(path)
    try:
        return RunManifest(config=config_from_dict(obj["config"]),
                           dataset_path=obj["dataset_path"],
                           model_path=obj["model_path"], seed=int(obj["seed"]),
                           outputs=tuple(sorted(obj["outputs"].items())))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed manifest document: {exc}") from exc
