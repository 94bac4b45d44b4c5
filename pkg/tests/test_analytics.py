import numpy as np
import pytest

from tlspose import analytics, kernels
from tlspose.errors import ObservabilityError
from tlspose.geometry import cross_matrix, exp_so3
from tlspose.model import NoiseModel, Pose, ProblemInstance
from tlspose.montecarlo import random_instance, sample_stream
from tlspose.solver import attitude_hessian, solve_pose

from conftest import isotropic_instance, noisy_scenario, rel_fro

# Joint covariance of the three-landmark scenario at the true pose, from the
# inverse of a central-difference Hessian of the directly evaluated cost
# (step 1e-6, relative agreement with the analytic information 3.7e-11).
P_F_ATTITUDE = np.array([
    [3.2327029721984867e-05, 2.6794808244849505e-05, 3.4679199026485672e-05],
    [2.6794808244849495e-05, 2.2602317677135403e-05, 2.8938233015078634e-05],
    [3.4679199026485665e-05, 2.8938233015078637e-05, 3.7731354876416971e-05],
])
P_F_TRANSLATION = np.array([
    [1.2633703400152216e-05, -1.7981922002377417e-06, -1.0204492109143731e-05],
    [-1.7981922002377463e-06, 6.2654442881431256e-07, 1.4458474923727196e-06],
    [-1.0204492109143731e-05, 1.4458474923727158e-06, 8.4768495172967129e-06],
])


def assert_psd(m, rtol=1e-10):
    m = np.asarray(m)
    np.testing.assert_allclose(m, np.swapaxes(m, -1, -2), rtol=0, atol=1e-14 * np.abs(m).max())
    lam = np.linalg.eigvalsh(m)
    assert np.all(lam >= -rtol * np.abs(lam).max(axis=-1, keepdims=True))


def test_scenario_joint_covariance_frozen(scenario, truth):
    P = analytics.joint_covariance(scenario, truth.attitude)
    assert rel_fro(P[:3, :3], P_F_ATTITUDE) < 1e-6
    assert rel_fro(P[3:, 3:], P_F_TRANSLATION) < 1e-6


def test_block_identities():
    rng = np.random.default_rng(0)
    for _ in range(10):
        inst, tr = random_instance(rng, int(rng.integers(3, 9)), scale=1e-6)
        rep = analytics.analyze(inst, tr)
        Hinv = np.linalg.inv(rep.H)
        np.testing.assert_allclose(rep.P_f[:3, :3], Hinv, rtol=1e-8, atol=0)
        np.testing.assert_allclose(rep.P_delta_alpha, Hinv, rtol=1e-8, atol=0)
        np.testing.assert_allclose(rep.P_f[3:, 3:], rep.cov_p, rtol=1e-8, atol=1e-8 * np.abs(rep.cov_p).max())
        np.testing.assert_allclose(rep.P_f[3:, :3], rep.A_bar @ Hinv, rtol=1e-8, atol=1e-8 * np.abs(Hinv).max())
        # Schur complement of the Fisher information
        F = rep.fim
        schur = F[:3, :3] - F[:3, 3:] @ np.linalg.solve(F[3:, 3:], F[3:, :3])
        assert rel_fro(schur, rep.H) < 1e-10
        np.testing.assert_allclose(np.linalg.inv(F[3:, 3:]), rep.S_lambda, rtol=1e-10)


def test_covariances_are_psd():
    rng = np.random.default_rng(1)
    for _ in range(10):
        inst, tr = random_instance(rng, int(rng.integers(3, 9)), scale=1e-6)
        pose = solve_pose(inst).pose
        rep = analytics.analyze(inst, pose)
        for m in (rep.P_f, rep.P_delta_alpha, rep.cov_p, rep.S_lambda):
            assert_psd(m)
        for po in rep.per_observation:
            for m in (po.P_b, po.P_r, po.cov_res_b, po.cov_res_r):
                assert_psd(m)


def test_estimates_satisfy_the_model():
    rng = np.random.default_rng(2)
    for _ in range(10):
        inst, _ = random_instance(rng, 5, scale=1e-4)
        # any pose, not only the optimum
        pose = Pose(exp_so3(rng.normal(size=3)), rng.normal(size=3))
        b_hat, r_hat = analytics.estimate_observations(inst, pose)
        np.testing.assert_allclose(b_hat, r_hat @ pose.attitude.T - pose.translation, rtol=0, atol=1e-12)


def test_noiseless_estimates_recover_measurements(scenario, truth):
    b_hat, r_hat = analytics.estimate_observations(scenario, truth)
    np.testing.assert_allclose(b_hat, scenario.b_tilde, rtol=0, atol=1e-15)
    np.testing.assert_allclose(r_hat, scenario.r_tilde, rtol=0, atol=1e-15)


def test_isotropic_closed_forms_match_general():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n = int(rng.integers(3, 9))
        inst, truth, sr, sb = isotropic_instance(rng, n)
        pose = solve_pose(inst).pose
        A = pose.attitude
        rep = analytics.analyze(inst, pose)
        H, ab, _ = analytics.isotropic_hessian(inst, A, sr, sb)
        assert rel_fro(H, rep.H) < 1e-12
        assert rel_fro(ab, rep.A_bar) < 1e-12
        assert rel_fro(analytics.isotropic_translation_covariance(inst, A, sr, sb), rep.cov_p) < 1e-12
        b_hat, r_hat = analytics.isotropic_estimates(inst, pose, sr, sb)
        for i, po in enumerate(rep.per_observation):
            np.testing.assert_allclose(b_hat[i], po.b_hat, rtol=0, atol=1e-14)
            np.testing.assert_allclose(r_hat[i], po.r_hat, rtol=0, atol=1e-14)
        crb, crr = analytics.isotropic_residual_covariances(inst, pose, rep.P_f, sr, sb)
        P_b, P_r = analytics.isotropic_estimate_covariances(inst, pose, rep.P_f, sr, sb)
        for i, po in enumerate(rep.per_observation):
            assert rel_fro(crb[i], po.cov_res_b) < 1e-10
            assert rel_fro(crr[i], po.cov_res_r) < 1e-10
            assert rel_fro(P_b[i], po.P_b) < 1e-10
            assert rel_fro(P_r[i], po.P_r) < 1e-10


def test_isotropic_hessian_is_weighted_spread():
    # For isotropic weights H equals sum w_i |c_i|^2 I - c_i c_i^T over
    # rotated references centred at their weighted mean.
    rng = np.random.default_rng(4)
    inst, truth, sr, sb = isotropic_instance(rng, 6, noisy=False)
    w = 1.0 / (sr**2 + sb**2)
    a = inst.r_tilde @ truth.attitude.T
    c = a - (w[:, None] * a).sum(axis=0) / w.sum()
    expected = sum(wi * (ci @ ci * np.eye(3) - np.outer(ci, ci)) for wi, ci in zip(w, c))
    H, _, _ = analytics.isotropic_hessian(inst, truth.attitude, sr, sb)
    assert rel_fro(H, expected) < 1e-12


def test_vanishing_reference_noise():
    # With R_r = 0 and no correlation the reference vectors are exact.
    rng = np.random.default_rng(5)
    inst, truth = random_instance(rng, 5, noisy=False)
    noises = [NoiseModel(np.zeros((3, 3)), nm.R_b, np.zeros((3, 3))) for nm in inst.noises]
    b = inst.b_tilde + rng.normal(scale=1e-3, size=(5, 3))
    exact = ProblemInstance.from_arrays(inst.r_tilde, b, noises)
    pose = solve_pose(exact).pose
    rep = analytics.analyze(exact, pose)
    for i, po in enumerate(rep.per_observation):
        np.testing.assert_array_equal(po.D, 0.0)
        np.testing.assert_array_equal(po.r_hat, exact.r_tilde[i])
        np.testing.assert_array_equal(po.P_r, 0.0)
        np.testing.assert_array_equal(po.cov_res_r, 0.0)
        np.testing.assert_allclose(po.b_hat, pose.attitude @ exact.r_tilde[i] - pose.translation, rtol=0, atol=1e-12)


def test_attitude_covariance_rejects_singular():
    with pytest.raises(ObservabilityError):
        analytics.attitude_covariance(np.diag([1.0, 1.0, 0.0]))
    with pytest.raises(ObservabilityError):
        analytics.attitude_covariance(np.diag([1.0, 1.0, 1e-13]))
    np.testing.assert_allclose(analytics.attitude_covariance(np.diag([2.0, 4.0, 5.0])), np.diag([0.5, 0.25, 0.2]))


def test_observability_check_scenario(scenario):
    diag = analytics.observability_check(scenario)
    # Centring leaves n - 1 independent directions: three landmarks give rank 2.
    assert diag.rank_of_B == 2
    assert diag.observable
    assert diag.smallest_H_eigenvalue > 0


def test_observability_check_two_observations():
    rng = np.random.default_rng(6)
    inst, truth = random_instance(rng, 2, noisy=False)
    diag = analytics.observability_check(inst, truth.attitude)
    assert diag.rank_of_B == 1
    assert not diag.observable
    d = truth.attitude @ (inst.r_tilde[0] - inst.r_tilde[1])
    assert np.linalg.norm(np.cross(diag.null_direction, d / np.linalg.norm(d))) < 1e-8


def test_observability_check_identical_vectors():
    nm = NoiseModel.isotropic(1e-3, 1e-3)
    v = np.tile([0.3, -0.2, 0.9], (4, 1))
    diag = analytics.observability_check(ProblemInstance.from_arrays(v, v, [nm] * 4))
    assert diag.rank_of_B == 0
    assert not diag.observable


def test_analyze_raises_when_unobservable():
    rng = np.random.default_rng(7)
    inst, truth = random_instance(rng, 2, noisy=False)
    with pytest.raises(ObservabilityError):
        analytics.analyze(inst, truth)


def test_batch_analysis_matches_scalar(backend):
    rng = np.random.default_rng(8)
    inst, _ = random_instance(rng, 4, scale=1e-6)
    pose = solve_pose(inst).pose
    rep = analytics.analyze(inst, pose)
    an = kernels.analyze_batch(
        pose.attitude[None], pose.translation[None], inst.r_tilde[None], inst.b_tilde[None],
        inst.R_r, inst.R_b, inst.R_rb,
    )
    assert rel_fro(an.P_f[0], rep.P_f) < 1e-10
    for i, po in enumerate(rep.per_observation):
        np.testing.assert_allclose(an.b_hat[0, i], po.b_hat, rtol=0, atol=1e-14)
        assert rel_fro(an.P_b[0, i], po.P_b) < 1e-10
        assert rel_fro(an.P_r[0, i], po.P_r) < 1e-10
        assert rel_fro(an.cov_res_b[0, i], po.cov_res_b) < 1e-10
        assert rel_fro(an.cov_res_r[0, i], po.cov_res_r) < 1e-10


def _cross_covariance_samples(template, truth, n_samples, seed):
    n = template.n
    L = np.array([np.linalg.cholesky(nm.matrix) for nm in template.noises])
    z = np.stack([sample_stream(seed, k).standard_normal((n, 6)) for k in range(n_samples)])
    x = np.einsum("nij,knj->kni", L, z)
    dr, db = x[..., :3], x[..., 3:]
    r, b = template.r_tilde + dr, template.b_tilde + db
    A0 = np.broadcast_to(truth.attitude, (n_samples, 3, 3))
    sol = kernels.solve_batch(r, b, template.R_r, template.R_b, template.R_rb, A0)
    assert np.all(sol.status == kernels.CONVERGED)
    d = sol.attitude @ truth.attitude.T
    da = -0.5 * np.stack([d[:, 2, 1] - d[:, 1, 2], d[:, 0, 2] - d[:, 2, 0], d[:, 1, 0] - d[:, 0, 1]], axis=1)
    dai = db - np.einsum("ij,knj->kni", truth.attitude, dr)
    return da, dai


def test_attitude_observation_cross_covariance(scenario, truth):
    N = 20000
    da, dai = _cross_covariance_samples(scenario, truth, N, seed=2024)
    analytic = analytics.attitude_obs_cross_covariance(scenario, truth.attitude)
    H = attitude_hessian(truth.attitude, scenario)
    ab, _ = analytics.a_bar(scenario, truth.attitude)
    for i in range(scenario.n):
        prod = da[:, :, None] * dai[:, i, None, :]
        emp = prod.mean(axis=0)
        se = np.linalg.norm(prod.std(axis=0) / np.sqrt(N))
        diff = np.linalg.norm(emp - analytic[i])
        # Relative 10%, or within four standard errors for blocks whose
        # magnitude is comparable to the sampling noise.
        assert diff < max(0.1 * np.linalg.norm(analytic[i]), 4 * se), (i, diff, se)
        # the untransposed form is clearly rejected where the block is resolved
        wrong = np.linalg.solve(H, cross_matrix(scenario.r_tilde[i] @ truth.attitude.T) - ab)
        if np.linalg.norm(analytic[i]) > 20 * se:
            assert np.linalg.norm(emp - wrong) > 0.5 * np.linalg.norm(analytic[i])


def test_cross_covariance_sums_to_zero_weighted():
    # sum_i (A_i - A_bar)^T W_i ... : the weighted deviations from A_bar cancel.
    rng = np.random.default_rng(9)
    inst, tr = random_instance(rng, 5, scale=1e-6)
    X = analytics.attitude_obs_cross_covariance(inst, tr.attitude)
    w = analytics._weights(inst, tr.attitude)
    total = sum(x @ wi for x, wi in zip(X, w))
    np.testing.assert_allclose(total, 0.0, atol=1e-10 * np.abs(X @ w).max())


def test_noisy_scenario_analysis_stable():
    inst = noisy_scenario(3)
    pose = solve_pose(inst).pose
    a = analytics.analyze(inst, pose)
    b = analytics.analyze(inst, pose)
    np.testing.assert_array_equal(a.P_f, b.P_f)
