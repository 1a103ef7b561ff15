"""End-to-end acceptance checks.

One test per shipped guarantee; each prints a single PASS line with the
measured figures so a verbose run documents the whole gate.
"""

import math
import time

import numpy as np
import pytest

from otstab import analysis, cli, conic_export, dataio
from otstab.core import (CostSpec, EvalConfig, LossKind, PhiDivergence,
                         Status)
from otstab.dual_solvers import solve, solve_chi2, solve_kl
from otstab.models import LinearClassifier, LogisticModel, MlpModel, as_zero_one

from instances import make_dataset, random_piecewise_instance, \
    random_zero_one_instance
from oracles import (
    central_diff,
    chi2_grid_max,
    kl_grid_max,
    piecewise_value_curves,
    zero_one_flip_distances,
    zero_one_value_curves,
)


def _config(phi, r, theta1, theta2, loss_kind, **cost_kwargs):
    return EvalConfig(cost=CostSpec(theta1=theta1, theta2=theta2, **cost_kwargs),
                      phi=PhiDivergence(phi), risk_threshold=r,
                      loss_kind=loss_kind)


def _value_curves(data, model, config, h_grid):
    if config.loss_kind is LossKind.ZERO_ONE:
        dstars = zero_one_flip_distances(model.weights, model.bias,
                                         data.features, data.labels)
        return zero_one_value_curves(dstars, config.cost.theta1, h_grid)
    return piecewise_value_curves(model.a, model.b, data.features,
                                  data.labels, config.cost.theta1, h_grid)


@pytest.fixture(scope="module")
def toy_zero_one(toy_logistic):
    return as_zero_one(toy_logistic)


@pytest.fixture(scope="module")
def duality_batch():
    """Twenty randomized small instances with a strictly interior optimum."""
    rng = np.random.default_rng(1002)
    batch = []
    for phi in (PhiDivergence.KL, PhiDivergence.CHI_SQUARED):
        for _ in range(6):
            batch.append(random_piecewise_instance(rng, phi))
        for _ in range(4):
            batch.append(random_zero_one_instance(rng, phi))
    return batch


def test_criterion_01_threshold_feasibility(toy, toy_logistic, toy_zero_one):
    runs = [(toy_logistic, "kl", 0.5, 0.4, 0.4, LossKind.SMOOTH_NONLINEAR),
            (toy_logistic, "chi2", 0.5, 0.4, 0.4, LossKind.SMOOTH_NONLINEAR),
            (toy_zero_one, "kl", 0.3, 1.0, 0.25, LossKind.ZERO_ONE),
            (toy_zero_one, "chi2", 0.3, 1.0, 0.25, LossKind.ZERO_ONE)]
    worst_gap, worst_time = 0.0, 0.0
    for model, phi, r, theta1, theta2, kind in runs:
        start = time.perf_counter()
        report = analysis.evaluate(
            toy, model, _config(phi, r, theta1, theta2, kind)).report
        elapsed = time.perf_counter() - start
        assert report.status is Status.CONVERGED
        assert len(report.trace) <= 501
        terminal_gap = abs(report.trace[-1][2] - r)
        assert terminal_gap <= 1e-2
        assert elapsed <= 60.0
        worst_gap = max(worst_gap, terminal_gap)
        worst_time = max(worst_time, elapsed)
    print(f"criterion 1 PASS: 4 toy runs converged, worst terminal "
          f"|risk - r| = {worst_gap:.2e}, slowest run {worst_time:.2f}s")


def test_criterion_02_price_regimes(toy, toy_logistic):
    def run(theta1, theta2):
        result = analysis.evaluate(
            toy, toy_logistic,
            _config("kl", 0.5, theta1, theta2, LossKind.SMOOTH_NONLINEAR))
        assert result.report.status is Status.CONVERGED
        moved = np.linalg.norm(result.qstar.perturbed_points - toy.features,
                               axis=1)
        return moved, result.qstar.weights

    moved, weights = run(math.inf, 0.4)
    assert moved.max() == 0.0
    ratio = weights.max() / weights.min()
    assert ratio > 10.0

    moved_w, weights_w = run(0.4, math.inf)
    assert np.all(weights_w == 1.0)
    frac_moved = float(np.mean(moved_w > 1e-3))
    assert frac_moved >= 0.10

    moved_f, weights_f = run(0.4, 0.4)
    assert moved_f.max() > 1e-3
    assert weights_f.max() - weights_f.min() > 1e-3
    print(f"criterion 2 PASS: reweight-only ratio = {ratio:.1f}, "
          f"transport-only moved {frac_moved:.0%} of samples, "
          f"mixed regime does both")


def test_criterion_03_strong_duality_witness(duality_batch):
    start = time.perf_counter()
    worst = 0.0
    for data, model, config, _ in duality_batch:
        report = analysis.evaluate(data, model, config).report
        assert report.status is Status.CONVERGED
        bound = 1e-6 * max(1.0, abs(report.dual_value))
        gap = abs(report.primal_cost_of_qstar - report.dual_value)
        assert gap <= bound
        worst = max(worst, gap)
    elapsed = time.perf_counter() - start
    assert elapsed <= 5.0
    print(f"criterion 3 PASS: worst |primal - dual| = {worst:.2e} over "
          f"{len(duality_batch)} instances in {elapsed:.2f}s")


def test_criterion_04_dense_grid_equivalence():
    rng = np.random.default_rng(1004)
    checked, worst = 0, 0.0
    for phi, solver in ((PhiDivergence.KL, solve_kl),
                        (PhiDivergence.CHI_SQUARED, solve_chi2)):
        step = 1e-4 if phi is PhiDivergence.KL else 1e-3
        h_grid = np.arange(0.0, 8.0, step)
        for gen in (random_zero_one_instance, random_piecewise_instance):
            for _ in range(5):
                data, model, config, _ = gen(rng, phi, max_samples=10)
                assert data.n_samples <= 10
                sol = solver(data, model, config)
                curves = _value_curves(data, model, config, h_grid)
                if phi is PhiDivergence.KL:
                    grid_val, _ = kl_grid_max(curves, config.risk_threshold,
                                              config.cost.theta2, h_grid)
                else:
                    grid_val, _ = chi2_grid_max(curves, config.risk_threshold,
                                                config.cost.theta2, h_grid)
                diff = abs(sol.dual_value - grid_val)
                assert diff <= 1e-4
                worst = max(worst, diff)
                checked += 1
    assert checked == 20
    print(f"criterion 4 PASS: solver vs dense grid worst |difference| = "
          f"{worst:.2e} over {checked} instances")


def test_criterion_05_conic_certificates(duality_batch):
    checked, worst_violation, worst_rel = 0, 0.0, 0.0
    for data, model, config, _ in duality_batch:
        if config.loss_kind is not LossKind.PIECEWISE_LINEAR:
            continue
        dual = solve(data, model, config)
        if config.phi is PhiDivergence.KL:
            program = conic_export.assemble_kl_program(data, model, config)
            assignment = conic_export.kl_certificate(data, model, config, dual)
        else:
            program = conic_export.assemble_chi2_program(data, model, config)
            assignment = conic_export.chi2_certificate(data, model, config,
                                                       dual)
        feas = conic_export.check_feasibility(program, assignment)
        assert feas.max_violation <= 1e-6
        rel = (abs(feas.objective_value + dual.dual_value)
               / max(1.0, abs(dual.dual_value)))
        assert rel <= 1e-6
        worst_violation = max(worst_violation, feas.max_violation)
        worst_rel = max(worst_rel, rel)
        checked += 1
    assert checked >= 10
    print(f"criterion 5 PASS: {checked} certificates feasible (worst "
          f"violation {worst_violation:.2e}), objective matches -criterion "
          f"(worst relative error {worst_rel:.2e})")


def test_criterion_06_gradient_fidelity():
    rng = np.random.default_rng(1006)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 6))
        model = LogisticModel(weights=rng.normal(size=d),
                              bias=float(rng.normal()))
        x = rng.normal(size=d) * 2.0
        y = float(rng.choice([-1.0, 1.0]))
        grad = model.grad_x(x, y)
        fd = central_diff(lambda z: model.loss(z, y), x)
        rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
        assert rel <= 1e-4
        worst = max(worst, rel)
    for _ in range(100):
        d = int(rng.integers(1, 4))
        hidden = int(rng.integers(2, 9))
        model = MlpModel(w1=rng.normal(size=(hidden, d)),
                         b1=rng.normal(size=hidden),
                         w2=rng.normal(size=hidden) / math.sqrt(hidden),
                         b2=float(rng.normal()), activation="tanh")
        x = rng.normal(size=d)
        y = float(rng.choice([-1.0, 1.0]))
        grad = model.grad_x(x, y)
        fd = central_diff(lambda z: model.loss(z, y), x)
        rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
        assert rel <= 1e-4
        worst = max(worst, rel)
    print(f"criterion 6 PASS: 200 finite-difference gradient checks, worst "
          f"relative error {worst:.2e}")


def test_criterion_07_decomposition_trends(toy):
    rng = np.random.default_rng(11)
    model = MlpModel(w1=rng.normal(size=(16, 2)),
                     b1=rng.normal(size=16) * 0.5,
                     w2=rng.normal(size=16) / 4.0, b2=0.0, activation="relu")
    budget = 5.0
    sweep = []
    for theta1 in (0.25, 0.4, 1.0):
        theta2 = 1.0 / (budget - 1.0 / theta1)
        report = analysis.evaluate(
            toy, model,
            _config("kl", 3.0, theta1, theta2, LossKind.SMOOTH_NONLINEAR,
                    budget_constant=budget)).report
        assert report.status is Status.CONVERGED
        total, transport, reweighting = report.decomposition
        assert total == transport + reweighting
        sweep.append((theta1, theta2, transport, reweighting))
    transport_by_theta1 = [row[2] for row in sweep]
    assert all(a >= b for a, b in zip(transport_by_theta1,
                                      transport_by_theta1[1:]))
    reweighting_by_theta2 = [row[3] for row in sorted(sweep,
                                                      key=lambda r: r[1])]
    assert all(a >= b for a, b in zip(reweighting_by_theta2,
                                      reweighting_by_theta2[1:]))
    print(f"criterion 7 PASS: transport share falls "
          f"{transport_by_theta1[0]:.3f} -> {transport_by_theta1[-1]:.3f} as "
          f"theta1 rises, reweighting share falls "
          f"{reweighting_by_theta2[0]:.3f} -> {reweighting_by_theta2[-1]:.3f} "
          f"as theta2 rises, shares sum exactly")


def test_criterion_08_threshold_monotonicity(toy, toy_zero_one):
    values = []
    for r in (0.2, 0.3, 0.4, 0.6, 0.8):
        report = analysis.evaluate(
            toy, toy_zero_one,
            _config("kl", r, 1.0, 0.25, LossKind.ZERO_ONE)).report
        assert report.status is Status.CONVERGED
        values.append(report.criterion_value)
    assert all(a <= b for a, b in zip(values, values[1:]))
    below = analysis.evaluate(
        toy, toy_zero_one,
        _config("kl", 0.01, 1.0, 0.25, LossKind.ZERO_ONE)).report
    assert below.status is Status.BASELINE_EXCEEDS_THRESHOLD
    assert below.criterion_value == 0.0
    print(f"criterion 8 PASS: criterion nondecreasing over the r ladder "
          f"({values[0]:.4f} .. {values[-1]:.4f}), free below the baseline")


def test_criterion_09_feature_stability_sanity():
    config = _config("kl", 0.5, 1.0, 0.25, LossKind.ZERO_ONE)

    dup = make_dataset([[1.5, 1.5], [2.5, 2.5], [-1.0, -1.0], [-3.0, -3.0]],
                       [1, 1, -1, -1])
    dup_model = LinearClassifier(weights=np.array([0.7, 0.7]), bias=0.0)
    dup_report = analysis.feature_stability(dup, dup_model, config)
    v0, v1 = (e.value for e in dup_report.per_feature)
    assert abs(v0 - v1) <= 1e-8

    sep = make_dataset([[1.5, 0.3], [2.5, -1.0], [-1.0, 0.8], [-3.0, 0.1]],
                       [1, 1, -1, -1])
    sep_model = LinearClassifier(weights=np.array([1.0, 0.0]), bias=0.0)
    sep_report = analysis.feature_stability(sep, sep_model, config)
    by_index = {e.index: e for e in sep_report.per_feature}
    assert by_index[1].value == math.inf
    assert by_index[1].status is Status.THRESHOLD_UNREACHABLE
    assert sep_report.ranking[-1] == 1

    masked = analysis.evaluate(
        sep, sep_model,
        _config("kl", 0.5, 1.0, 0.25, LossKind.ZERO_ONE,
                feature_mask=frozenset({0}))).report
    assert by_index[0].value == masked.criterion_value
    print(f"criterion 9 PASS: duplicated features tie within "
          f"{abs(v0 - v1):.1e}, zero-weight feature ranked most stable, "
          f"masked run reproduces the per-feature value exactly")


def test_criterion_10_run_determinism(toy, toy_logistic, tmp_path):
    data_path = tmp_path / "data.csv"
    model_path = tmp_path / "model.json"
    dataio.save_dataset(toy, data_path)
    dataio.save_model(toy_logistic, model_path)
    reports = []
    for run_dir in ("first", "second"):
        out = tmp_path / run_dir
        code = cli.main(["evaluate", "--data", str(data_path), "--model",
                         str(model_path), "--loss", "01", "--phi", "kl",
                         "--theta1", "1.0", "--theta2", "0.25", "--r", "0.3",
                         "--seed", "5", "--out-dir", str(out)])
        assert code == cli.EXIT_OK
        reports.append((out / "report.json").read_bytes())
    assert reports[0] == reports[1]
    print(f"criterion 10 PASS: repeated runs emit byte-identical reports "
          f"({len(reports[0])} bytes)")
