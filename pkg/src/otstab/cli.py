"""Command-line front door.

Subcommands: evaluate, sensitive, decompose, feature-rank, export-conic, toy.
Exit codes: 0 on success (including a baseline already past the threshold),
2 when the threshold is unreachable, 1 on input errors.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

from . import analysis, conic_export, dataio, figures
from .core import (CostSpec, EvalConfig, LossKind, PhiDivergence,
                   StabilityError, Status, ThresholdUnreachableError)
from .models import PiecewiseLinearModel, as_zero_one

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNREACHABLE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are input errors, not code 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _theta(text: str) -> float:
    value = float(text)
    if math.isnan(value):
        raise argparse.ArgumentTypeError("price must be a number or inf")
    return value


def _add_eval_arguments(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--data", required=True, help="dataset CSV path")
    sub.add_argument("--model", required=True, help="model JSON path")
    sub.add_argument("--label-column", default="y")
    sub.add_argument("--phi", choices=["kl", "chi2"], default="kl")
    sub.add_argument("--theta1", type=_theta, required=True,
                     help="transport price (accepts 'inf')")
    sub.add_argument("--theta2", type=_theta, required=True,
                     help="reweighting price (accepts 'inf')")
    sub.add_argument("--budget-c", type=float, default=None,
                     help="enforce 1/theta1 + 1/theta2 = C")
    sub.add_argument("--r", type=float, required=True, help="risk threshold")
    sub.add_argument("--loss", choices=["auto", "pw", "01", "smooth"],
                     default="auto")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out-dir", default=".")
    sub.add_argument("--threads", type=int, default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="otstab", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (
            ("evaluate", "criterion, dual/primal values, convergence figure"),
            ("sensitive", "evaluate plus the worst-case lift table/figure"),
            ("decompose", "split the excess risk into channel shares"),
            ("feature-rank", "per-feature criteria and a stability ranking"),
            ("export-conic", "write the dual as a conic-program document")):
        sub = subs.add_parser(name, help=helptext)
        _add_eval_arguments(sub)
        if name == "feature-rank":
            sub.add_argument("--features", default=None,
                             help="comma list of names or indices (default all)")

    toy = subs.add_parser("toy", help="generate the two-Gaussian demo dataset "
                                      "and a fitted logistic model")
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--n-per-class", type=int, default=100)
    toy.add_argument("--out-dir", default=".")
    return parser


def _load_problem(args):
    data = dataio.load_dataset(args.data, label_column=args.label_column)
    model = dataio.load_model(args.model)
    if args.loss == "auto":
        loss_kind = model.loss_kind
    elif args.loss == "01":
        model = as_zero_one(model)
        loss_kind = LossKind.ZERO_ONE
    elif args.loss == "pw":
        if not isinstance(model, PiecewiseLinearModel):
            raise StabilityError(
                "--loss pw needs a piecewise_linear model document")
        loss_kind = LossKind.PIECEWISE_LINEAR
    else:
        if model.loss_kind is not LossKind.SMOOTH_NONLINEAR:
            raise StabilityError("--loss smooth needs a logistic or mlp model")
        loss_kind = LossKind.SMOOTH_NONLINEAR
    config = EvalConfig(
        cost=CostSpec(theta1=args.theta1, theta2=args.theta2,
                      budget_constant=args.budget_c),
        phi=PhiDivergence(args.phi),
        risk_threshold=args.r,
        loss_kind=loss_kind)
    return data, model, config


def _outputs_dir(args) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return args.out_dir


def _write_manifest(args, config, outputs: dict[str, str]) -> str:
    path = os.path.join(args.out_dir, "manifest.json")
    manifest = dataio.RunManifest(config=config, dataset_path=args.data,
                                  model_path=args.model, seed=args.seed,
                                  outputs=tuple(sorted(outputs.items())))
    dataio.save_manifest(manifest, path)
    return path


def _status_code(status: Status) -> int:
    return EXIT_UNREACHABLE if status is Status.THRESHOLD_UNREACHABLE else EXIT_OK


def _cmd_evaluate(args, with_lift: bool) -> int:
    data, model, config = _load_problem(args)
    out = _outputs_dir(args)
    result = analysis.evaluate(data, model, config)
    report = result.report
    outputs = {"report": os.path.join(out, "report.json")}
    dataio.save_report(report, outputs["report"])
    if report.trace:
        outputs["convergence"] = os.path.join(out, "convergence.png")
        figures.plot_convergence(report.trace, config.risk_threshold,
                                 outputs["convergence"])
    if with_lift and result.qstar is not None:
        outputs["lift"] = os.path.join(out, "sensitive.json")
        dataio.save_qstar(result.qstar, outputs["lift"])
        outputs["lift_table"] = os.path.join(out, "sensitive_points.csv")
        dataio.emit_plot_data(result.qstar, data, outputs["lift_table"])
        if data.n_features == 2:
            outputs["lift_figure"] = os.path.join(out, "sensitive_scatter.png")
            figures.plot_sensitive_scatter(result.qstar, data,
                                           outputs["lift_figure"], model=model)
    _write_manifest(args, config, outputs)
    print(f"criterion_value = {report.criterion_value!r}")
    print(f"status = {report.status.value}")
    for key, path in sorted(outputs.items()):
        print(f"{key}: {path}")
    return _status_code(report.status)


def _cmd_decompose(args) -> int:
    data, model, config = _load_problem(args)
    out = _outputs_dir(args)
    result = analysis.evaluate(data, model, config)
    report = result.report
    total, transport, reweighting = report.decomposition
    dataio.save_report(report, os.path.join(out, "report.json"))
    print(f"excess_risk_total = {total!r}")
    print(f"excess_risk_transport = {transport!r}")
    print(f"excess_risk_reweighting = {reweighting!r}")
    return _status_code(report.status)


def _parse_features(text: str | None, data) -> tuple[int, ...] | None:
    if text is None:
        return None
    indices = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if token in data.feature_names:
            indices.append(data.feature_names.index(token))
        else:
            try:
                indices.append(int(token))
            except ValueError:
                raise StabilityError(
                    f"--features entry {token!r} is neither a feature name "
                    "nor an index") from None
    if not indices:
        raise StabilityError("--features produced an empty selection")
    return tuple(indices)


def _cmd_feature_rank(args) -> int:
    data, model, config = _load_problem(args)
    out = _outputs_dir(args)
    features = _parse_features(args.features, data)
    report = analysis.feature_stability(data, model, config, features=features,
                                        max_workers=args.threads)
    outputs = {
        "report": os.path.join(out, "feature_stability.json"),
        "table": os.path.join(out, "feature_stability.csv"),
        "figure": os.path.join(out, "feature_stability.png"),
    }
    dataio.save_feature_report(report, outputs["report"])
    dataio.save_feature_csv(report, outputs["table"])
    figures.plot_feature_ranking(report, outputs["figure"])
    _write_manifest(args, config, outputs)
    by_index = {e.index: e for e in report.per_feature}
    for rank, index in enumerate(report.ranking, start=1):
        entry = by_index[index]
        shown = "unreachable" if math.isinf(entry.value) else repr(entry.value)
        print(f"rank {rank}: {entry.name} (feature {entry.index}) "
              f"criterion = {shown}")
    return EXIT_OK


def _cmd_export_conic(args) -> int:
    data, model, config = _load_problem(args)
    out = _outputs_dir(args)
    if config.phi is PhiDivergence.KL:
        program = conic_export.assemble_kl_program(data, model, config)
    else:
        program = conic_export.assemble_chi2_program(data, model, config)
    path = os.path.join(out, "conic_program.json")
    conic_export.save_program(program, path)
    _write_manifest(args, config, {"program": path})
    print(f"program: {path}")
    return EXIT_OK


def _cmd_toy(args) -> int:
    out = _outputs_dir(args)
    data = dataio.generate_toy(seed=args.seed, n_per_class=args.n_per_class)
    model = dataio.fit_toy_logistic(data)
    data_path = os.path.join(out, "toy_data.csv")
    model_path = os.path.join(out, "toy_model.json")
    dataio.save_dataset(data, data_path)
    dataio.save_model(model, model_path)
    print(f"data: {data_path}")
    print(f"model: {model_path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "evaluate":
            return _cmd_evaluate(args, with_lift=False)
        if args.command == "sensitive":
            return _cmd_evaluate(args, with_lift=True)
        if args.command == "decompose":
            return _cmd_decompose(args)
        if args.command == "feature-rank":
            return _cmd_feature_rank(args)
        if args.command == "export-conic":
            return _cmd_export_conic(args)
        if args.command == "toy":
            return _cmd_toy(args)
    except ThresholdUnreachableError as exc:
        print(f"otstab {args.command}: {exc}", file=sys.stderr)
        return EXIT_UNREACHABLE
    except (StabilityError, OSError) as exc:
        print(f"otstab {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
