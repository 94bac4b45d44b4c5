"""Monte Carlo validation of the analytic covariances.

Each sample perturbs a noise-free template with correlated Gaussian noise,
solves for the pose and compares the estimate errors with the analytic
3-sigma bounds computed at that sample's estimate.  Sample ``k`` draws from
its own Philox stream keyed by ``(seed, k)``, so results do not depend on
batching or evaluation order.
"""

import csv
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import analytics, kernels
from .errors import NonSPDWeight
from .geometry import exp_so3, log_so3
from .model import NoiseModel, Pose, ProblemInstance, synthesize_reference_vectors
from .solver import SolverConfig

log = logging.getLogger(__name__)

COVERAGE_BOUNDS = (0.990, 1.000)
MAX_FAILURE_FRACTION = 0.01

__all__ = [
    "COVERAGE_BOUNDS",
    "MonteCarloConfig",
    "MonteCarloReport",
    "sample_stream",
    "sample_noise",
    "random_spd_noise",
    "random_instance",
    "coordinate_names",
    "run_monte_carlo",
    "write_csv_series",
]


def sample_stream(seed, index):
    """Generator for sample ``index``: Philox keyed by ``seed``, counter offset by ``index``.

    The index sits in the most significant counter word, so streams of
    different samples never overlap.
    """
    bitgen = np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF, counter=[0, 0, 0, int(index)])
    return np.random.Generator(bitgen)


def _cholesky(R, index=None):
    try:
        return np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise NonSPDWeight("noise covariance is not positive definite", index) from None


def sample_noise(noise, rng):
    """Draw ``(dr, db)`` from ``N(0, R)`` as ``L z`` with ``R = L L^T``."""
    x = _cholesky(noise.matrix) @ rng.standard_normal(6)
    return x[:3], x[3:]


def random_spd_noise(scale, rng):
    """Random joint covariance ``scale (Z Z^T + 1e-3 I)``, ``Z`` standard normal 6x6."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    z = rng.standard_normal((6, 6))
    return NoiseModel.from_matrix(scale * (z @ z.T + 1e-3 * np.eye(6)))


def random_instance(rng, n, scale=1e-9, noisy=True, spread=1.0):
    """Random pose, body vectors in a cube of half-width ``spread`` and random noise models.

    Returns
    -------
    inst : ProblemInstance
        Measured vectors (perturbed by one noise draw when ``noisy``).
    truth : Pose
    """
    truth = Pose(exp_so3(rng.uniform(-np.pi, np.pi, 3) * 0.55), rng.normal(size=3))
    b = rng.uniform(-spread, spread, (n, 3))
    r = synthesize_reference_vectors(truth, b)
    noises = [random_spd_noise(scale, rng) for _ in range(n)]
    if noisy:
        for i, nm in enumerate(noises):
            dr, db = sample_noise(nm, rng)
            r[i] += dr
            b[i] += db
    return ProblemInstance.from_arrays(r, b, noises), truth


@dataclass
class MonteCarloConfig:
    """Inputs of one calibration run.

    ``template`` holds the noise-free vectors (``b = A r - p`` under
    ``truth``) and the noise models that are sampled.
    """

    n_samples: int
    rng_seed: int
    truth: Pose
    template: ProblemInstance
    solver: SolverConfig = field(default_factory=SolverConfig)
    keep_samples: bool = True

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")


@dataclass
class MonteCarloReport:
    """Coverage and covariance comparison of one run.

    ``errors``/``sigmas`` have one column per entry of ``coordinates`` and
    one row per successful sample (original indices in ``sample_index``).
    Empirical and analytic covariances are keyed alike; the analytic ones
    are evaluated at the true pose of the noise-free template.
    """

    seed: int
    n_samples: int
    n_failed: int
    coordinates: list
    coverage: dict
    empirical: dict
    analytic: dict
    runtime_s: float
    sample_index: Optional[np.ndarray] = None
    errors: Optional[np.ndarray] = None
    sigmas: Optional[np.ndarray] = None

    @property
    def failure_fraction(self):
        return self.n_failed / self.n_samples

    @property
    def failure_budget_ok(self):
        return self.failure_fraction <= MAX_FAILURE_FRACTION

    def coverage_violations(self, bounds=COVERAGE_BOUNDS):
        lo, hi = bounds
        return {k: v for k, v in self.coverage.items() if not (lo <= v <= hi)}

    @property
    def calibrated(self):
        return self.failure_budget_ok and not self.coverage_violations()

    def covariance_errors(self):
        """Relative Frobenius error of each empirical covariance."""
        out = {}
        for k, a in self.analytic.items():
            out[k] = float(np.linalg.norm(self.empirical[k] - a) / np.linalg.norm(a))
        return out


def coordinate_names(n):
    """Scalar error coordinates: 3 attitude, 3 translation, 12 per observation."""
    names = [f"attitude_{k}" for k in "xyz"] + [f"translation_{k}" for k in "xyz"]
    for i in range(n):
        for kind in ("b_est", "r_est", "b_res", "r_res"):
            names += [f"obs{i}_{kind}_{k}" for k in "xyz"]
    return names


def _draw(template, seed, n_samples):
    n = template.n
    L = np.array([_cholesky(nm.matrix, i) for i, nm in enumerate(template.noises)])
    z = np.empty((n_samples, n, 6))
    for k in range(n_samples):
        z[k] = sample_stream(seed, k).standard_normal((n, 6))
    x = np.einsum("nij,knj->kni", L, z)
    return x[..., :3], x[..., 3:]


def _svd_start(r, b):
    rc = r - r.mean(axis=1, keepdims=True)
    bc = b - b.mean(axis=1, keepdims=True)
    B = np.einsum("kni,knj->kij", bc, rc)
    u, _, vt = np.linalg.svd(B)
    d = np.linalg.det(u) * np.linalg.det(vt)
    u[:, :, 2] *= d[:, None]
    return u @ vt


def _attitude_errors(A_hat, A):
    """``da`` with ``A_hat = expm(-[da x]) A`` for a stack of estimates."""
    d = A_hat @ A.T
    v = 0.5 * np.stack([d[:, 2, 1] - d[:, 1, 2], d[:, 0, 2] - d[:, 2, 0], d[:, 1, 0] - d[:, 0, 1]], axis=1)
    s = np.linalg.norm(v, axis=1)
    c = 0.5 * (np.trace(d, axis1=1, axis2=2) - 1.0)
    theta = np.arctan2(s, c)
    small = s < 1e-7
    factor = np.where(small, 1.0 + theta**2 / 6.0, theta / np.where(small, 1.0, s))
    out = factor[:, None] * v
    for k in np.flatnonzero(c <= -0.99):
        out[k] = log_so3(d[k])
    return -out


def _diag(m):
    return np.diagonal(m, axis1=-2, axis2=-1)


def run_monte_carlo(config):
    """Run the calibration experiment.

    Failed solves (non-convergence, lost observability) are excluded and
    counted; the run is flagged as failed if more than 1% of samples fail.
    """
    t0 = time.perf_counter()
    tpl, truth = config.template, config.truth
    n, N = tpl.n, config.n_samples
    A_true = np.asarray(truth.attitude, dtype=float)
    r_true, b_true = tpl.r_tilde, tpl.b_tilde

    dr, db = _draw(tpl, config.rng_seed, N)
    r = r_true + dr
    b = b_true + db
    sc = config.solver
    sol = kernels.solve_batch(
        r, b, tpl.R_r, tpl.R_b, tpl.R_rb, _svd_start(r, b),
        max_iterations=sc.max_iterations,
        step_tolerance=sc.step_tolerance,
        cost_tolerance=sc.cost_tolerance,
        max_halvings=sc.max_halvings,
    )
    ok = sol.status == kernels.CONVERGED
    idx = np.flatnonzero(ok)
    n_failed = int(N - idx.size)
    if n_failed:
        log.warning("%d of %d samples failed to converge and were excluded", n_failed, N)

    A_hat, p_hat = sol.attitude[idx], sol.translation[idx]
    r, b = r[idx], b[idx]
    an = kernels.analyze_batch(A_hat, p_hat, r, b, tpl.R_r, tpl.R_b, tpl.R_rb)

    da = _attitude_errors(A_hat, A_true)
    dp = p_hat - np.asarray(truth.translation, dtype=float)
    obs_err = np.stack([an.b_hat - b_true, an.r_hat - r_true, an.b_hat - b, an.r_hat - r], axis=2)
    obs_var = np.stack([_diag(an.P_b), _diag(an.P_r), _diag(an.cov_res_b), _diag(an.cov_res_r)], axis=2)
    m = idx.size
    errors = np.concatenate([da, dp, obs_err.reshape(m, -1)], axis=1)
    variances = np.concatenate([_diag(an.P_f[:, :3, :3]), _diag(an.P_f[:, 3:, 3:]), obs_var.reshape(m, -1)], axis=1)
    sigmas = np.sqrt(np.maximum(variances, 0.0))
    names = coordinate_names(n)
    inside = np.abs(errors) <= 3.0 * sigmas
    frac = inside.mean(axis=0) if m else np.zeros(len(names))
    coverage = {k: float(v) for k, v in zip(names, frac)}

    ref = analytics.analyze(tpl, truth)
    analytic = {"attitude": ref.P_delta_alpha, "translation": ref.cov_p}
    empirical = {}

    def emp(x):
        return np.cov(x, rowvar=False) if m > 1 else np.zeros((x.shape[1], x.shape[1]))

    empirical["attitude"] = emp(da)
    empirical["translation"] = emp(dp)
    for i, po in enumerate(ref.per_observation):
        for j, (kind, a) in enumerate(
            (("b_est", po.P_b), ("r_est", po.P_r), ("b_res", po.cov_res_b), ("r_res", po.cov_res_r))
        ):
            key = f"obs{i}_{kind}"
            analytic[key] = a
            empirical[key] = emp(obs_err[:, i, j])

    report = MonteCarloReport(
        seed=int(config.rng_seed),
        n_samples=N,
        n_failed=n_failed,
        coordinates=names,
        coverage=coverage,
        empirical=empirical,
        analytic=analytic,
        runtime_s=time.perf_counter() - t0,
    )
    if config.keep_samples:
        report.sample_index, report.errors, report.sigmas = idx, errors, sigmas
    return report


def _fmt(x):
    return "%.17g" % x


def write_csv_series(report, out_dir):
    """One CSV per coordinate with the error and its +/-3 sigma bounds per sample.

    Returns the list of written paths.
    """
    if report.errors is None:
        raise ValueError("report was produced with keep_samples=False")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for j, name in enumerate(report.coordinates):
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_index", "error", "sigma3_upper", "sigma3_lower"])
            for k, e, s in zip(report.sample_index, report.errors[:, j], report.sigmas[:, j]):
                w.writerow([int(k), _fmt(e), _fmt(3.0 * s), _fmt(-3.0 * s)])
        paths.append(path)
    return paths
