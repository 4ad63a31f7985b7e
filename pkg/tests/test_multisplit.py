import numpy as np
import pytest

from app.core.dataset import make_split, validate_dataset
from app.core.errors import DataValidationError, EstimationError, SplitFailureWarning
from app.modules.estimator.tsci_algo import normal_p_value
from app.modules.learners.forest_algo import BoostingSpec, ForestSpec
from app.modules.learners.hat_matrix import LearnerTag
from app.modules.learners.registry import LearnerConfig
from app.modules.multisplit import splitting
from app.modules.multisplit.splitting import (
    Aggregation,
    InferenceOptions,
    SplitFit,
    aggregate_dml,
    aggregate_fwer,
    run_splits,
    run_tsci,
)
from app.modules.selection.selection_algo import SelectionResult, classify_validity
from app.modules.violation.candidates import create_interactions, create_monomials

FAST_FOREST = LearnerConfig(learner=LearnerTag.forest, forest=ForestSpec(num_trees=20))
FAST_OPTIONS = InferenceOptions(boot_draws=200)


def make_fit(split_id, beta, se, q_comp=0, q_max=1, p=None):
    fold = make_split(60, seed=split_id)
    selection = SelectionResult(
        q_max=q_max,
        q_comp=q_comp,
        q_cons=min(q_comp + 1, q_max),
        validity=classify_validity(q_comp, q_max),
        selected_q=q_comp,
        interpret_carefully=q_comp == q_max,
    )
    return SplitFit(
        split_id=split_id,
        fold=fold,
        selection=selection,
        betas=[beta, beta],
        ses=[se, se],
        se_plugin=[se, se],
        strengths=[100.0, 80.0],
        thresholds=[40.0, 40.0],
        selected_beta=beta,
        selected_se=se,
        p_value=normal_p_value(beta, se) if p is None else p,
    )


def test_fwer_doubles_median_p():
    fits = [make_fit(j, 0.5, 0.2, p=0.01) for j in range(5)]
    result = aggregate_fwer(fits, alpha=0.05)
    assert result.p == pytest.approx(0.02)
    assert result.se is None
    assert result.aggregation == Aggregation.FWER


def test_fwer_single_split_conservative():
    result = aggregate_fwer([make_fit(0, 0.5, 0.2, p=0.3)])
    assert result.p == pytest.approx(0.6)
    assert aggregate_fwer([make_fit(0, 0.5, 0.2, p=0.8)]).p == 1.0


def test_fwer_ci_uses_half_alpha_per_split():
    result = aggregate_fwer([make_fit(0, 1.0, 0.1)], alpha=0.05)
    z = 2.241403  # 1 - 0.05 / 4 quantile
    assert result.ci[0] == pytest.approx(1.0 - z * 0.1, abs=1e-6)
    assert result.ci[1] == pytest.approx(1.0 + z * 0.1, abs=1e-6)


def test_dml_single_split_passes_through():
    result = aggregate_dml([make_fit(0, 0.7, 0.1)], alpha=0.05)
    assert result.beta == 0.7
    assert result.se == pytest.approx(0.1)
    assert result.ci[0] == pytest.approx(0.7 - 1.959964 * 0.1, abs=1e-6)


def test_dml_identical_splits_no_inflation():
    result = aggregate_dml([make_fit(j, 0.4, 0.15) for j in range(7)])
    assert result.se == pytest.approx(0.15)


def test_dml_dispersion_inflates_se():
    fits = [make_fit(j, b, 0.1) for j, b in enumerate([0.1, 0.5, 0.9, 0.45, 0.55])]
    result = aggregate_dml(fits)
    assert result.beta == 0.5
    assert result.se >= 0.1
    assert result.ci[0] <= result.beta <= result.ci[1]


def test_median_permutation_invariant():
    fits = [make_fit(j, b, 0.1) for j, b in enumerate([0.3, 0.1, 0.8, 0.2])]
    assert aggregate_dml(fits).beta == aggregate_dml(fits[::-1]).beta
    assert aggregate_fwer(fits).ci == aggregate_fwer(fits[::-1]).ci


def test_tallies_and_validity_partition():
    fits = [make_fit(0, 0.5, 0.1, q_comp=0), make_fit(1, 0.5, 0.1, q_comp=1), make_fit(2, 0.5, 0.1)]
    result = aggregate_fwer(fits)
    assert result.tallies["q_comp"] == [2, 1]
    assert result.tallies["q_cons"] == [0, 3]
    assert result.tallies["q_max"] == [0, 3]
    assert result.validity_counts == {"valid": 2, "invalid": 1, "non_testable": 0}
    assert sum(result.validity_counts.values()) == len(fits)


def test_confint_other_level():
    fits = [make_fit(j, b, 0.1) for j, b in enumerate([0.3, 0.4, 0.5])]
    dml = aggregate_dml(fits, alpha=0.05)
    wide = dml.confint(0.99)
    assert wide[0] < dml.ci[0] and wide[1] > dml.ci[1]
    assert dml.confint() == dml.ci
    fwer = aggregate_fwer(fits, alpha=0.05)
    assert fwer.confint(0.95) == fwer.ci
    assert fwer.confint(0.8)[1] < fwer.ci[1]
    assert dml.coef() == dml.beta


def test_run_tsci_forest(iv_data):
    result = run_tsci(
        iv_data, create_monomials(iv_data.z, 1), learner=FAST_FOREST,
        options=FAST_OPTIONS, nsplits=3, seed=11,
    )
    assert result.nsplits == 3
    assert result.sample_split
    assert result.n_a1 == 200 and result.n_a2 == 100
    assert len(result.candidates) == 2
    for column in result.tallies.values():
        assert sum(column) == 3
    assert 0 <= result.p <= 1
    assert result.learner_label == "Random Forest"
    for fit in result.splits:
        assert fit.selected_beta == fit.betas[fit.selection.selected_q]
        strengths = fit.strengths
        assert all(b <= a + 1e-8 for a, b in zip(strengths, strengths[1:]))


def test_run_tsci_reproducible(iv_data):
    kwargs = dict(learner=FAST_FOREST, options=FAST_OPTIONS, nsplits=2, seed=5)
    a = run_tsci(iv_data, create_monomials(iv_data.z, 1), **kwargs)
    b = run_tsci(iv_data, create_monomials(iv_data.z, 1), **kwargs)
    assert a.beta == b.beta
    assert a.ci == b.ci
    assert a.tallies == b.tallies


def test_single_split_labelled_dml(iv_data):
    result = run_tsci(
        iv_data, [], learner=FAST_FOREST, options=FAST_OPTIONS, nsplits=1,
        mult_split_method=Aggregation.FWER, seed=1,
    )
    assert result.aggregation == Aggregation.DML
    assert result.notes
    assert result.validity_counts["non_testable"] == 1


def test_polynomial_runs_once(iv_data):
    learner = LearnerConfig(learner=LearnerTag.polynomial, degree=3)
    result = run_tsci(
        iv_data, create_monomials(iv_data.z, 2), learner=learner,
        options=InferenceOptions(sd_boot=False, threshold_boot=False), nsplits=10, seed=0,
    )
    assert result.nsplits == 1
    assert not result.sample_split
    assert result.n_a1 == iv_data.n
    assert result.learner_label == "Polynomial Basis Expansion"
    fit = result.splits[0]
    assert fit.ses == fit.se_plugin


def test_all_splits_failing(iv_data):
    learner = LearnerConfig(learner=LearnerTag.user, weight_matrix=np.zeros((iv_data.n, iv_data.n)))
    with pytest.warns(SplitFailureWarning):
        with pytest.raises(EstimationError, match="All 1 data splits failed"):
            run_splits(iv_data, learner, [], FAST_OPTIONS, nsplits=1, seed=0)


def test_numerical_failure_excludes_split(iv_data, monkeypatch):
    calls = []
    fit_hat = splitting.fit_hat_matrix

    def flaky_fit(*args, **kwargs):
        calls.append(1)
        if len(calls) == 1:
            raise np.linalg.LinAlgError("Singular matrix")
        return fit_hat(*args, **kwargs)

    monkeypatch.setattr(splitting, "fit_hat_matrix", flaky_fit)
    with pytest.warns(SplitFailureWarning, match="LinAlgError"):
        fits, failures = run_splits(
            iv_data, FAST_FOREST, create_monomials(iv_data.z, 1), FAST_OPTIONS, nsplits=3, seed=2
        )
    assert len(fits) == 2
    assert [f.split_id for f in failures] == [0]


def test_nan_violation_column_fails_before_splitting(iv_data):
    element = iv_data.z[:, 0].copy()
    element[7] = np.nan
    with pytest.raises(DataValidationError, match="row 7"):
        run_tsci(iv_data, [element], learner=FAST_FOREST, options=FAST_OPTIONS, nsplits=2, seed=0)


def test_run_tsci_boosting(iv_data):
    learner = LearnerConfig(learner=LearnerTag.boosting, boosting=BoostingSpec(n_rounds=20))
    result = run_tsci(
        iv_data, create_monomials(iv_data.z, 1), learner=learner,
        options=FAST_OPTIONS, nsplits=2, seed=3,
    )
    assert result.learner_label == "Boosting"
    assert result.sample_split
    assert np.isfinite(result.beta)
    assert sum(result.tallies["q_comp"]) == 2
    for fit in result.splits:
        assert all(b <= a + 1e-8 for a, b in zip(fit.strengths, fit.strengths[1:]))


def test_interaction_design_supplied_by_user(rng):
    n, p_x = 400, 4
    z = rng.binomial(1, 0.5, n).astype(float)
    x = rng.standard_normal((n, p_x))
    errors = rng.multivariate_normal([0, 0], [[1, 0.5], [0.5, 1]], size=n)
    d = 1 + z + z * x[:, 0] - z * x[:, 1] + 0.5 * x.sum(axis=1) + errors[:, 0]
    y = 0.5 * d + 0.3 * x.sum(axis=1) + errors[:, 1]
    dataset = validate_dataset(y, d, z, x)

    (interactions,) = create_interactions(z, x)[1:]
    design = np.hstack([np.ones((n, 1)), z[:, None], interactions, x])
    learner = LearnerConfig(learner=LearnerTag.user, weight_matrix=design)
    result = run_tsci(
        dataset, [z], learner=learner,
        options=InferenceOptions(boot_draws=200), nsplits=10, seed=4,
    )
    assert not result.sample_split
    assert result.learner_label == "Specified by User"
    assert len(result.candidates) == 2
    assert result.splits[0].selection.q_max == 1
    assert abs(result.beta - 0.5) < 0.5
