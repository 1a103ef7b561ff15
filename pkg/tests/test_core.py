import math

import numpy as np
import pytest

from otstab.core import (
    BUDGET_TOL,
    CostSpec,
    Dataset,
    DimensionMismatchError,
    EvalConfig,
    InvalidConfigError,
    InvalidCostError,
    LossKind,
    PhiDivergence,
    SensitiveDistribution,
    SolverOptions,
    StabilityReport,
    Status,
    ThresholdUnreachableError,
    UnsupportedLossError,
    is_infinite,
    validate_config,
)
from otstab.models import LinearClassifier, LogisticModel

from instances import make_dataset


class TestPhiDivergence:
    def test_kl_values(self):
        w = np.array([0.0, 1.0, np.e, 0.5])
        expected = np.array([1.0, 0.0, 1.0, 0.5 * np.log(0.5) + 0.5])
        np.testing.assert_allclose(PhiDivergence.KL.phi(w), expected,
                                   rtol=0, atol=1e-15)

    def test_chi_squared_values(self):
        w = np.array([0.0, 1.0, 3.0])
        np.testing.assert_allclose(PhiDivergence.CHI_SQUARED.phi(w),
                                   [1.0, 0.0, 4.0], rtol=0, atol=0)

    def test_both_are_convex_on_a_grid(self):
        w = np.linspace(0.0, 4.0, 81)
        for phi in PhiDivergence:
            vals = phi.phi(w)
            midpoints = 0.5 * (vals[:-2] + vals[2:])
            assert np.all(vals[1:-1] <= midpoints + 1e-12)

    def test_parse_by_value(self):
        assert PhiDivergence("kl") is PhiDivergence.KL
        assert PhiDivergence("chi2") is PhiDivergence.CHI_SQUARED


class TestCostSpec:
    def test_accepts_finite_and_infinite_prices(self):
        spec = CostSpec(theta1=0.5, theta2=math.inf)
        assert spec.inverse_theta1 == 2.0
        assert spec.inverse_theta2 == 0.0
        assert is_infinite(spec.theta2) and not is_infinite(spec.theta1)

    @pytest.mark.parametrize("bad", [0.0, -1.0, math.nan])
    def test_rejects_nonpositive_prices(self, bad):
        with pytest.raises(InvalidCostError):
            CostSpec(theta1=bad, theta2=1.0)
        with pytest.raises(InvalidCostError):
            CostSpec(theta1=1.0, theta2=bad)

    def test_budget_constant_accepts_exact_pairs(self):
        CostSpec(theta1=0.4, theta2=0.4, budget_constant=5.0)
        CostSpec(theta1=0.2, theta2=math.inf, budget_constant=5.0)

    def test_budget_constant_rejects_violations(self):
        with pytest.raises(InvalidCostError):
            CostSpec(theta1=0.4, theta2=0.5, budget_constant=5.0)
        # just past the tolerance window
        with pytest.raises(InvalidCostError):
            CostSpec(theta1=0.4, theta2=1.0 / (2.5 + 10 * BUDGET_TOL),
                     budget_constant=5.0)

    @pytest.mark.parametrize("bad", [0.0, -2.0, math.inf, math.nan])
    def test_budget_constant_must_be_finite_positive(self, bad):
        with pytest.raises(InvalidCostError):
            CostSpec(theta1=1.0, theta2=1.0, budget_constant=bad)

    def test_feature_mask_validation(self):
        with pytest.raises(InvalidCostError):
            CostSpec(theta1=1.0, theta2=1.0, feature_mask=frozenset())
        with pytest.raises(InvalidCostError):
            CostSpec(theta1=1.0, theta2=1.0, feature_mask=frozenset({-1}))

    def test_mask_vector(self):
        spec = CostSpec(theta1=1.0, theta2=1.0, feature_mask=frozenset({0, 2}))
        np.testing.assert_array_equal(spec.mask_vector(4), [1.0, 0.0, 1.0, 0.0])
        np.testing.assert_array_equal(
            CostSpec(theta1=1.0, theta2=1.0).mask_vector(3), np.ones(3))
        with pytest.raises(DimensionMismatchError):
            spec.mask_vector(2)


class TestSolverOptions:
    def test_defaults_construct(self):
        opts = SolverOptions()
        assert opts.max_doublings == 60
        assert opts.feasibility_tol < opts.feasibility_tol_iterative

    @pytest.mark.parametrize("field_name", ["dual_tol", "h_lr", "sample_lr",
                                            "feasibility_tol"])
    def test_rejects_nonpositive_floats(self, field_name):
        with pytest.raises(InvalidConfigError):
            SolverOptions(**{field_name: 0.0})

    @pytest.mark.parametrize("field_name", ["max_doublings", "outer_iters",
                                            "inner_iters"])
    def test_rejects_nonpositive_counts(self, field_name):
        with pytest.raises(InvalidConfigError):
            SolverOptions(**{field_name: 0})


class TestEvalConfig:
    def _cost(self):
        return CostSpec(theta1=1.0, theta2=1.0)

    @pytest.mark.parametrize("bad", [0.0, -0.5, math.inf, math.nan])
    def test_threshold_must_be_finite_positive(self, bad):
        with pytest.raises(InvalidConfigError):
            EvalConfig(cost=self._cost(), phi=PhiDivergence.KL,
                       risk_threshold=bad, loss_kind=LossKind.SMOOTH_NONLINEAR)

    def test_zero_one_threshold_capped_at_one(self):
        with pytest.raises(ThresholdUnreachableError):
            EvalConfig(cost=self._cost(), phi=PhiDivergence.KL,
                       risk_threshold=1.0, loss_kind=LossKind.ZERO_ONE)
        EvalConfig(cost=self._cost(), phi=PhiDivergence.KL,
                   risk_threshold=0.99, loss_kind=LossKind.ZERO_ONE)

    def test_unbounded_losses_accept_large_thresholds(self):
        EvalConfig(cost=self._cost(), phi=PhiDivergence.CHI_SQUARED,
                   risk_threshold=50.0, loss_kind=LossKind.PIECEWISE_LINEAR)


class TestDataset:
    def test_valid_construction_freezes_arrays(self):
        data = make_dataset([[1.0, 2.0], [3.0, 4.0]], [1, -1])
        assert data.n_samples == 2 and data.n_features == 2
        assert not data.features.flags.writeable
        with pytest.raises(ValueError):
            data.features[0, 0] = 9.0

    def test_label_domain(self):
        with pytest.raises(InvalidConfigError):
            make_dataset([[1.0], [2.0]], [0, 1])
        with pytest.raises(InvalidConfigError):
            make_dataset([[1.0], [2.0]], [1, 2])

    def test_shape_checks(self):
        with pytest.raises(InvalidConfigError):
            make_dataset(np.empty((0, 2)), np.empty(0, dtype=int))
        with pytest.raises(InvalidConfigError):
            make_dataset([[1.0], [2.0]], [1])
        with pytest.raises(InvalidConfigError):
            make_dataset([[np.inf], [0.0]], [1, -1])

    def test_feature_names_must_be_unique_and_match(self):
        X = np.zeros((2, 2))
        y = np.array([1, -1])
        with pytest.raises(InvalidConfigError):
            Dataset(features=X, labels=y, feature_names=("a",))
        with pytest.raises(InvalidConfigError):
            Dataset(features=X, labels=y, feature_names=("a", "a"))


class TestValidateConfig:
    def _data(self):
        return make_dataset([[2.0, 0.0], [-2.0, 0.0], [0.5, 0.5]], [1, -1, -1])

    def test_baseline_risk_is_mean_loss(self):
        data = self._data()
        model = LinearClassifier(weights=np.array([1.0, 0.0]), bias=0.0)
        config = EvalConfig(cost=CostSpec(theta1=1.0, theta2=1.0),
                            phi=PhiDivergence.KL, risk_threshold=0.9,
                            loss_kind=LossKind.ZERO_ONE)
        checked = validate_config(config, data, model)
        # only the third point (label -1, positive margin) is misclassified
        np.testing.assert_allclose(checked.baseline_risk, 1.0 / 3.0)
        assert not checked.baseline_exceeds_threshold
        low = EvalConfig(cost=config.cost, phi=config.phi, risk_threshold=0.2,
                         loss_kind=LossKind.ZERO_ONE)
        assert validate_config(low, data, model).baseline_exceeds_threshold

    def test_dimension_mismatch(self):
        model = LinearClassifier(weights=np.array([1.0]), bias=0.0)
        config = EvalConfig(cost=CostSpec(theta1=1.0, theta2=1.0),
                            phi=PhiDivergence.KL, risk_threshold=0.5,
                            loss_kind=LossKind.ZERO_ONE)
        with pytest.raises(DimensionMismatchError):
            validate_config(config, self._data(), model)

    def test_loss_kind_mismatch(self):
        model = LogisticModel(weights=np.array([1.0, 0.0]), bias=0.0)
        config = EvalConfig(cost=CostSpec(theta1=1.0, theta2=1.0),
                            phi=PhiDivergence.KL, risk_threshold=0.5,
                            loss_kind=LossKind.ZERO_ONE)
        with pytest.raises(UnsupportedLossError):
            validate_config(config, self._data(), model)

    def test_mask_outside_columns(self):
        model = LinearClassifier(weights=np.array([1.0, 0.0]), bias=0.0)
        config = EvalConfig(
            cost=CostSpec(theta1=1.0, theta2=1.0, feature_mask=frozenset({5})),
            phi=PhiDivergence.KL, risk_threshold=0.5,
            loss_kind=LossKind.ZERO_ONE)
        with pytest.raises(DimensionMismatchError):
            validate_config(config, self._data(), model)


class TestSensitiveDistribution:
    def _kwargs(self, **overrides):
        base = dict(perturbed_points=np.zeros((2, 2)),
                    labels=np.array([1, -1]),
                    weights=np.array([1.5, 0.5]),
                    h_star=1.0, alpha_star=0.0,
                    transport_costs=np.array([0.0, 0.25]))
        base.update(overrides)
        return base

    def test_valid(self):
        dist = SensitiveDistribution(**self._kwargs())
        assert dist.n_samples == 2
        np.testing.assert_allclose(np.mean(dist.weights), 1.0)

    def test_weights_must_average_to_one(self):
        with pytest.raises(InvalidConfigError):
            SensitiveDistribution(**self._kwargs(weights=np.array([1.5, 0.6])))

    def test_weights_must_be_nonnegative(self):
        with pytest.raises(InvalidConfigError):
            SensitiveDistribution(**self._kwargs(weights=np.array([2.1, -0.1])))

    def test_costs_must_be_nonnegative(self):
        with pytest.raises(InvalidConfigError):
            SensitiveDistribution(
                **self._kwargs(transport_costs=np.array([-0.1, 0.0])))

    def test_labels_must_stay_in_domain(self):
        with pytest.raises(InvalidConfigError):
            SensitiveDistribution(**self._kwargs(labels=np.array([1, 0])))

    def test_shape_mismatch(self):
        with pytest.raises(InvalidConfigError):
            SensitiveDistribution(**self._kwargs(weights=np.array([1.0])))


class TestStabilityReport:
    def _kwargs(self, **overrides):
        base = dict(criterion_value=0.3, dual_value=0.3,
                    primal_cost_of_qstar=0.3, duality_gap=0.0,
                    decomposition=(0.5, 0.2, 0.3),
                    trace=((0.0, 0.0, 0.1), (1.0, 0.2, 0.4)),
                    status=Status.CONVERGED, baseline_risk=0.1,
                    h_star=1.0, alpha_star=0.0)
        base.update(overrides)
        return base

    def test_valid_report_coerces_trace(self):
        report = StabilityReport(**self._kwargs())
        assert report.trace == ((0.0, 0.0, 0.1), (1.0, 0.2, 0.4))
        assert all(isinstance(v, float) for row in report.trace for v in row)

    def test_decomposition_identity_enforced(self):
        with pytest.raises(InvalidConfigError):
            StabilityReport(**self._kwargs(decomposition=(0.5, 0.2, 0.2)))

    def test_criterion_must_be_nonnegative(self):
        with pytest.raises(InvalidConfigError):
            StabilityReport(**self._kwargs(criterion_value=-0.2))
        StabilityReport(**self._kwargs(criterion_value=math.inf,
                                       status=Status.THRESHOLD_UNREACHABLE))

    def test_large_negative_gap_rejected(self):
        with pytest.raises(InvalidConfigError):
            StabilityReport(**self._kwargs(duality_gap=-0.5))
        # small negative gaps are numerical noise and allowed
        StabilityReport(**self._kwargs(duality_gap=-1e-9))
