import numpy as np
import pytest

from tlspose import kernels, model
from tlspose.montecarlo import random_instance, sample_noise


def rel_fro(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))


def noisy_scenario(seed):
    """One noisy draw of the three-landmark scenario."""
    inst = model.scenario_instance()
    rng = np.random.default_rng(seed)
    r, b = inst.r_tilde.copy(), inst.b_tilde.copy()
    for i, nm in enumerate(inst.noises):
        dr, db = sample_noise(nm, rng)
        r[i] += dr
        b[i] += db
    return inst.with_measurements(r, b)


def isotropic_instance(rng, n, noisy=True):
    """Random instance with per-observation isotropic noise; returns (inst, truth, sr, sb)."""
    sr = rng.uniform(1e-3, 5e-3, n)
    sb = rng.uniform(1e-3, 5e-3, n)
    inst, truth = random_instance(rng, n, noisy=False)
    noises = [model.NoiseModel.isotropic(a, c) for a, c in zip(sr, sb)]
    r, b = inst.r_tilde.copy(), inst.b_tilde.copy()
    if noisy:
        r += rng.normal(size=r.shape) * sr[:, None]
        b += rng.normal(size=b.shape) * sb[:, None]
    return model.ProblemInstance.from_arrays(r, b, noises), truth, sr, sb


@pytest.fixture
def scenario():
    return model.scenario_instance()


@pytest.fixture
def truth():
    return model.scenario_truth()


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    if request.param == "numba" and not kernels.NUMBA_AVAILABLE:
        pytest.skip("numba not installed")
    with kernels.use_backend(request.param):
        yield request.param


# Acceptance results, collected by tests/test_acceptance.py and printed as
# one line per criterion at the end of the run.
ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    def record(criterion, ok, detail):
        ACCEPTANCE[criterion] = (bool(ok), detail)
        print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[criterion]
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
