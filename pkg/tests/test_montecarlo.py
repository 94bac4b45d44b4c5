import os

import numpy as np
import pytest

from tlspose import model
from tlspose.errors import NonSPDWeight
from tlspose.model import NoiseModel, ProblemInstance
from tlspose.montecarlo import (
    MonteCarloConfig,
    coordinate_names,
    random_instance,
    run_monte_carlo,
    sample_noise,
    sample_stream,
    write_csv_series,
)


def test_identity_noise_returns_raw_normals():
    nm = NoiseModel.from_matrix(np.eye(6))
    dr, db = sample_noise(nm, np.random.default_rng(3))
    z = np.random.default_rng(3).standard_normal(6)
    np.testing.assert_array_equal(np.concatenate([dr, db]), z)


def test_sample_noise_uses_lower_factor(scenario):
    nm = scenario.noises[0]
    L = np.linalg.cholesky(nm.matrix)
    rng_a, rng_b = sample_stream(7, 0), sample_stream(7, 0)
    for _ in range(5):
        dr, db = sample_noise(nm, rng_a)
        np.testing.assert_array_equal(np.concatenate([dr, db]), L @ rng_b.standard_normal(6))


def test_sample_covariance_converges(scenario):
    # 10^6 draws through the same lower-triangular factor.
    R = scenario.noises[0].matrix
    L = np.linalg.cholesky(R)
    x = sample_stream(11, 0).standard_normal((1_000_000, 6)) @ L.T
    emp = np.cov(x, rowvar=False)
    assert np.linalg.norm(emp - R) / np.linalg.norm(R) < 0.02
    # the correlated block keeps its sign pattern
    R_rb = scenario.noises[0].R_rb
    big = np.abs(R_rb) > 0.2 * np.abs(R_rb).max()
    np.testing.assert_array_equal(np.sign(emp[:3, 3:][big]), np.sign(R_rb[big]))


def test_sample_noise_non_spd():
    R = np.eye(6)
    R[0, 0] = -1.0
    with pytest.raises(NonSPDWeight):
        sample_noise(NoiseModel.from_matrix(R), np.random.default_rng(0))


def test_streams_are_independent_and_reproducible():
    a = sample_stream(5, 0).standard_normal(8)
    np.testing.assert_array_equal(a, sample_stream(5, 0).standard_normal(8))
    assert not np.array_equal(a, sample_stream(5, 1).standard_normal(8))
    assert not np.array_equal(a, sample_stream(6, 0).standard_normal(8))
    # negative and 64-bit seeds are accepted
    sample_stream(-1, 0)
    sample_stream(2**64 - 1, 3)


def _config(n_samples, seed, template=None, truth=None):
    return MonteCarloConfig(
        n_samples=n_samples,
        rng_seed=seed,
        truth=truth or model.scenario_truth(),
        template=template or model.scenario_instance(),
    )


def test_coordinate_names():
    names = coordinate_names(3)
    assert len(names) == 42
    assert names[:3] == ["attitude_x", "attitude_y", "attitude_z"]
    assert "obs2_r_res_z" in names
    assert len(set(names)) == len(names)


def test_degenerate_noise_gives_zero_errors():
    tpl = model.scenario_instance()
    tiny = [NoiseModel.from_matrix(1e-20 * np.eye(6))] * tpl.n
    tpl = ProblemInstance.from_arrays(tpl.r_tilde, tpl.b_tilde, tiny)
    rep = run_monte_carlo(_config(1, 0, tpl))
    assert rep.n_failed == 0
    assert np.all(np.abs(rep.errors) < 1e-9)


def test_same_seed_bit_identical():
    a = run_monte_carlo(_config(200, 42))
    b = run_monte_carlo(_config(200, 42))
    np.testing.assert_array_equal(a.errors, b.errors)
    np.testing.assert_array_equal(a.sigmas, b.sigmas)
    assert a.coverage == b.coverage
    for k in a.empirical:
        np.testing.assert_array_equal(a.empirical[k], b.empirical[k])
    c = run_monte_carlo(_config(200, 43))
    assert not np.array_equal(a.errors, c.errors)


def test_prefix_property():
    # Sample k depends only on (seed, k): a shorter run is a prefix.
    a = run_monte_carlo(_config(50, 9))
    b = run_monte_carlo(_config(120, 9))
    np.testing.assert_array_equal(a.errors, b.errors[:50])


def test_csv_export(tmp_path):
    rep = run_monte_carlo(_config(20, 1))
    paths = write_csv_series(rep, tmp_path / "a")
    assert len(paths) == 42
    with open(paths[0]) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "sample_index,error,sigma3_upper,sigma3_lower"
    assert len(lines) == 21
    idx, e, hi, lo = lines[1].split(",")
    assert float(hi) == -float(lo) and float(hi) > 0
    write_csv_series(run_monte_carlo(_config(20, 1)), tmp_path / "b")
    for p in paths:
        with open(p, "rb") as fa, open(os.path.join(tmp_path / "b", os.path.basename(p)), "rb") as fb:
            assert fa.read() == fb.read()


def test_csv_requires_samples(tmp_path):
    cfg = _config(5, 1)
    cfg.keep_samples = False
    with pytest.raises(ValueError):
        write_csv_series(run_monte_carlo(cfg), tmp_path)


def test_config_validation():
    with pytest.raises(ValueError):
        _config(0, 1)


def test_scenario_calibration():
    rep = run_monte_carlo(_config(10_000, 20240101))
    assert rep.n_failed == 0
    assert not rep.coverage_violations(), rep.coverage_violations()
    errs = rep.covariance_errors()
    assert errs["attitude"] < 0.05
    assert errs["translation"] < 0.05
    for k, v in errs.items():
        assert v < 0.05, (k, v)
    assert all(0.0 <= v <= 1.0 for v in rep.coverage.values())


@pytest.mark.slow
def test_random_noise_models_calibrate():
    rng = np.random.default_rng(77)
    for trial in range(10):
        n = int(rng.integers(3, 7))
        tpl, truth = random_instance(rng, n, scale=1e-6, noisy=False)
        rep = run_monte_carlo(_config(10_000, trial, tpl, truth))
        assert rep.calibrated, (trial, rep.coverage_violations())
        errs = rep.covariance_errors()
        assert errs["attitude"] < 0.05 and errs["translation"] < 0.05, (trial, errs)
        assert max(errs.values()) < 0.1, (trial, errs)
