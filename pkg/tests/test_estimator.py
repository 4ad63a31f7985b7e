import numpy as np
import pytest

from app.core.dataset import full_split, validate_dataset
from app.core.errors import BootstrapWarning, EstimationError
from app.modules.estimator.tsci_algo import (
    EffectEstimate,
    bootstrap_se,
    draw_multipliers,
    estimate_beta,
    normal_ci,
    normal_p_value,
    projection_context,
    sequence_rank_scale,
)
from app.modules.learners.hat_matrix import HatMatrix, LearnerTag
from app.modules.simlab.dgp import tsls_oracle
from app.modules.violation.candidates import ViolationCandidate, build_candidates


def hat_of(omega):
    return HatMatrix(omega=omega, learner_tag=LearnerTag.user)


def candidate(columns):
    return ViolationCandidate(q=0, columns=columns, label="W")


def ols_projection(design):
    return design @ np.linalg.solve(design.T @ design, design.T)


def test_identity_hat_and_intercept_centers(rng):
    n = 40
    d = rng.standard_normal(n)
    ctx = projection_context(hat_of(np.eye(n)), candidate(np.ones((n, 1))), d)
    assert ctx.dmd == pytest.approx(np.sum((d - d.mean()) ** 2), rel=1e-12)
    np.testing.assert_allclose(ctx.p_perp, np.eye(n) - np.full((n, n), 1 / n), atol=1e-12)


def test_dmd_is_projected_norm(rng):
    n = 30
    omega = rng.standard_normal((n, n))
    v = np.hstack([np.ones((n, 1)), rng.standard_normal((n, 2))])
    d = rng.standard_normal(n)
    ctx = projection_context(hat_of(omega), candidate(v), d)
    q, _ = np.linalg.qr(omega @ v)
    p_perp = np.eye(n) - q @ q.T
    assert ctx.dmd == pytest.approx(np.linalg.norm(p_perp @ omega @ d) ** 2, rel=1e-9)
    np.testing.assert_allclose(ctx.m_matrix, omega.T @ p_perp @ omega, atol=1e-9)
    np.testing.assert_allclose(ctx.m_diag, np.diag(ctx.m_matrix), atol=1e-9)
    np.testing.assert_allclose(ctx.p_perp @ ctx.p_perp, ctx.p_perp, atol=1e-8)


def test_annihilated_basis(rng):
    n = 25
    centering = np.eye(n) - np.full((n, n), 1 / n)
    with pytest.raises(EstimationError, match="annihilated"):
        projection_context(hat_of(centering), candidate(np.ones((n, 1))), rng.standard_normal(n))


def test_fully_absorbed_iv(iv_data):
    design = np.hstack([iv_data.w, iv_data.z])
    omega = ols_projection(design)
    ctx = projection_context(hat_of(omega), candidate(design), iv_data.d)
    with pytest.raises(EstimationError, match="fully absorbed"):
        estimate_beta(ctx, iv_data, full_split(iv_data.n))


def test_noiseless_outcome(rng):
    n = 50
    d = rng.standard_normal(n)
    z = d + rng.standard_normal(n)
    ds = validate_dataset(2 * d, d, z)
    omega = rng.standard_normal((n, n))
    ctx = projection_context(hat_of(omega), candidate(ds.w), ds.d)
    est = estimate_beta(ctx, ds, full_split(n))
    assert est.beta_raw == pytest.approx(2.0, abs=1e-10)
    np.testing.assert_allclose(est.residuals_eps, 0.0, atol=1e-9)
    assert est.bias_term == pytest.approx(0.0, abs=1e-9)
    assert est.beta_hat == pytest.approx(2.0, abs=1e-9)


def test_beta_raw_equals_tsls(rng):
    from tests.conftest import make_iv_data

    for _ in range(50):
        ds = make_iv_data(rng, n=500, violation=0.0)
        omega = ols_projection(np.hstack([ds.w, ds.z]))
        ctx = projection_context(hat_of(omega), candidate(ds.w), ds.d)
        est = estimate_beta(ctx, ds, full_split(ds.n))
        assert est.beta_raw == pytest.approx(tsls_oracle(ds), abs=1e-8)


def test_decomposition_identity(rng):
    for _ in range(20):
        n = 40
        z = rng.standard_normal(n)
        x = rng.standard_normal((n, 2))
        delta, eps = rng.standard_normal(n), rng.standard_normal(n)
        beta = 0.7
        d = z + z ** 2 + delta
        h, phi = 0.5 * z, x @ [0.3, -0.2]
        ds = validate_dataset(beta * d + h + phi + eps, d, z, x)
        omega = ols_projection(np.hstack([ds.w, z[:, None], z[:, None] ** 2]))
        ctx = projection_context(hat_of(omega), candidate(ds.w), ds.d)
        est = estimate_beta(ctx, ds, full_split(n))
        terms = (h @ ctx.md + phi @ ctx.md + eps @ ctx.md) / ctx.dmd
        assert est.beta_raw - beta == pytest.approx(terms, abs=1e-9)


def test_invariant_to_basis_recombination(iv_data, rng):
    n = iv_data.n
    omega = ols_projection(np.hstack([iv_data.w, iv_data.z, iv_data.z ** 2]))
    v = np.hstack([iv_data.w, iv_data.z])
    mix = rng.standard_normal((v.shape[1], v.shape[1])) + 3 * np.eye(v.shape[1])
    split = full_split(n)
    a = estimate_beta(projection_context(hat_of(omega), candidate(v), iv_data.d), iv_data, split)
    b = estimate_beta(projection_context(hat_of(omega), candidate(v @ mix), iv_data.d), iv_data, split)
    assert a.beta_hat == pytest.approx(b.beta_hat, abs=1e-9)


def test_plugin_se_identity(iv_data):
    omega = ols_projection(np.hstack([iv_data.w, iv_data.z, iv_data.z ** 2]))
    ctx = projection_context(hat_of(omega), candidate(iv_data.w), iv_data.d)
    est = estimate_beta(ctx, iv_data, full_split(iv_data.n))
    assert est.se_plugin ** 2 * ctx.dmd == pytest.approx(est.sigma_eps_hat ** 2, rel=1e-12)
    assert est.beta_hat == est.beta_raw - est.bias_term


def _fitted(iv_data):
    omega = ols_projection(np.hstack([iv_data.w, iv_data.z, iv_data.z ** 2]))
    ctx = projection_context(hat_of(omega), candidate(iv_data.w), iv_data.d)
    return ctx, estimate_beta(ctx, iv_data, full_split(iv_data.n))


def _with_eps(est, eps):
    return EffectEstimate(
        beta_hat=est.beta_hat, beta_raw=est.beta_raw, bias_term=est.bias_term,
        se_plugin=est.se_plugin, sigma_eps_hat=est.sigma_eps_hat,
        sigma_delta_hat=est.sigma_delta_hat, residuals_eps=eps,
        residuals_delta=est.residuals_delta,
    )


def test_bootstrap_zero_residuals(iv_data):
    ctx, est = _fitted(iv_data)
    draws = draw_multipliers(100, iv_data.n, seed=1)
    (se,) = bootstrap_se(_with_eps(est, np.zeros(iv_data.n)), [ctx], draws)
    assert se == 0.0


def test_bootstrap_linear_in_residual_scale(iv_data):
    ctx, est = _fitted(iv_data)
    draws = draw_multipliers(200, iv_data.n, seed=7)
    (base,) = bootstrap_se(est, [ctx], draws)
    (scaled,) = bootstrap_se(_with_eps(est, 3.5 * est.residuals_eps), [ctx], draws)
    assert scaled == pytest.approx(3.5 * base, rel=1e-12)


def test_bootstrap_deterministic_and_none_passthrough(iv_data):
    ctx, est = _fitted(iv_data)
    first = bootstrap_se(est, [ctx, None], draw_multipliers(100, iv_data.n, seed=3))
    second = bootstrap_se(est, [ctx, None], draw_multipliers(100, iv_data.n, seed=3))
    assert first == second
    assert first[1] is None
    assert first[0] > 0


def test_few_draws_warn():
    with pytest.warns(BootstrapWarning):
        draw_multipliers(20, 10, seed=0)


def test_normal_helpers():
    low, high = normal_ci(1.0, 0.5, 0.05)
    assert low == pytest.approx(1.0 - 1.959964 * 0.5, abs=1e-6)
    assert high == pytest.approx(1.0 + 1.959964 * 0.5, abs=1e-6)
    assert normal_p_value(0.0, 1.0) == pytest.approx(1.0)
    assert normal_p_value(1.959964, 1.0) == pytest.approx(0.05, abs=1e-6)


def test_shared_rank_scale_gives_nested_ranks(rng):
    n = 50
    w = np.ones((n, 1))
    elements = [1e-9 * rng.standard_normal(n), 1e3 * rng.standard_normal(n)]
    candidates = build_candidates(w, elements)
    hat = hat_of(np.eye(n))
    d = rng.standard_normal(n)
    scale = sequence_rank_scale(hat, candidates)
    ranks = [projection_context(hat, c, d, scale).rank_v for c in candidates]
    assert ranks == [1, 1, 2]
    assert [projection_context(hat, c, d).rank_v for c in candidates] == [1, 2, 2]
