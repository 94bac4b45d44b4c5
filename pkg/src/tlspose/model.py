"""Problem definition: noise models, observation pairs, poses, validation."""

from dataclasses import dataclass, field

import numpy as np

from .geometry import is_rotation

RANK_RTOL = 1e-9
SPD_RTOL = 1e-15


def _mat3(x, name):
    m = np.array(x, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3, got shape {m.shape}")
    m.setflags(write=False)
    return m


def _vec3(x, name):
    v = np.array(x, dtype=float).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got {v.shape[0]}")
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class NoiseModel:
    """Joint covariance of the reference and body errors of one pair (m^2).

    The assembled 6x6 matrix is ``[[R_r, R_rb], [R_rb^T, R_b]]`` where
    ``R_rb = E{dr db^T}``.
    """

    R_r: np.ndarray
    R_b: np.ndarray
    R_rb: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R_r", _mat3(self.R_r, "R_r"))
        object.__setattr__(self, "R_b", _mat3(self.R_b, "R_b"))
        object.__setattr__(self, "R_rb", _mat3(self.R_rb, "R_rb"))

    @classmethod
    def from_matrix(cls, R):
        R = np.asarray(R, dtype=float)
        if R.shape != (6, 6):
            raise ValueError(f"joint covariance must be 6x6, got shape {R.shape}")
        return cls(R_r=R[:3, :3], R_b=R[3:, 3:], R_rb=R[:3, 3:])

    @classmethod
    def isotropic(cls, sigma_r, sigma_b):
        eye = np.eye(3)
        return cls(R_r=sigma_r**2 * eye, R_b=sigma_b**2 * eye, R_rb=np.zeros((3, 3)))

    @property
    def matrix(self):
        return np.block([[self.R_r, self.R_rb], [self.R_rb.T, self.R_b]])

    def spd_violation(self):
        """Return a description of why the model is not SPD, or ``None``."""
        if not np.all(np.isfinite(self.matrix)):
            return "covariance has non-finite entries"
        if not (np.allclose(self.R_r, self.R_r.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.R_r).max()))
                and np.allclose(self.R_b, self.R_b.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.R_b).max()))):
            return "R_r or R_b is not symmetric"
        R = self.matrix
        R = 0.5 * (R + R.T)
        lam_min = float(np.linalg.eigvalsh(R)[0])
        eps = SPD_RTOL * float(np.trace(R))
        if not lam_min > eps:
            return f"smallest eigenvalue {lam_min:.3e} is not above {eps:.3e}"
        return None

    def isotropic_sigmas(self, rtol=1e-12):
        """``(sigma_r, sigma_b)`` if the model is isotropic, else ``None``."""
        sr2 = float(np.trace(self.R_r)) / 3.0
        sb2 = float(np.trace(self.R_b)) / 3.0
        scale = max(sr2, sb2)
        atol = rtol * scale
        if (np.allclose(self.R_r, sr2 * np.eye(3), rtol=0, atol=atol)
                and np.allclose(self.R_b, sb2 * np.eye(3), rtol=0, atol=atol)
                and np.allclose(self.R_rb, 0.0, rtol=0, atol=atol)):
            return float(np.sqrt(sr2)), float(np.sqrt(sb2))
        return None


@dataclass(frozen=True)
class ObservationPair:
    r_tilde: np.ndarray
    b_tilde: np.ndarray
    noise: NoiseModel

    def __post_init__(self):
        object.__setattr__(self, "r_tilde", _vec3(self.r_tilde, "r_tilde"))
        object.__setattr__(self, "b_tilde", _vec3(self.b_tilde, "b_tilde"))


@dataclass(frozen=True)
class Pose:
    """Attitude ``A`` (reference -> body) and translation ``p`` with ``b = A r - p``."""

    attitude: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "attitude", _mat3(self.attitude, "attitude"))
        object.__setattr__(self, "translation", _vec3(self.translation, "translation"))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def is_valid(self, tol=1e-10):
        return is_rotation(self.attitude, tol)


@dataclass(frozen=True)
class ProblemInstance:
    """An ordered set of matched observation pairs.

    Stacked views (``r_tilde`` of shape ``(n, 3)``, ``R_r`` of shape
    ``(n, 3, 3)`` and so on) are computed once and cached.
    """

    observations: tuple
    _stack: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        obs = tuple(self.observations)
        for ob in obs:
            if not isinstance(ob, ObservationPair):
                raise TypeError("observations must be ObservationPair instances")
        object.__setattr__(self, "observations", obs)
        stack = {
            "r_tilde": np.array([o.r_tilde for o in obs]).reshape(-1, 3),
            "b_tilde": np.array([o.b_tilde for o in obs]).reshape(-1, 3),
            "R_r": np.array([o.noise.R_r for o in obs]).reshape(-1, 3, 3),
            "R_b": np.array([o.noise.R_b for o in obs]).reshape(-1, 3, 3),
            "R_rb": np.array([o.noise.R_rb for o in obs]).reshape(-1, 3, 3),
        }
        for arr in stack.values():
            arr.setflags(write=False)
        object.__setattr__(self, "_stack", stack)

    @classmethod
    def from_arrays(cls, r_tilde, b_tilde, noises):
        return cls(tuple(ObservationPair(r, b, nm) for r, b, nm in zip(r_tilde, b_tilde, noises)))

    def __len__(self):
        return len(self.observations)

    @property
    def n(self):
        return len(self.observations)

    @property
    def r_tilde(self):
        return self._stack["r_tilde"]

    @property
    def b_tilde(self):
        return self._stack["b_tilde"]

    @property
    def R_r(self):
        return self._stack["R_r"]

    @property
    def R_b(self):
        return self._stack["R_b"]

    @property
    def R_rb(self):
        return self._stack["R_rb"]

    @property
    def noises(self):
        return [o.noise for o in self.observations]

    def with_measurements(self, r_tilde, b_tilde):
        """Same noise models, new measured vectors."""
        return ProblemInstance.from_arrays(r_tilde, b_tilde, self.noises)


@dataclass(frozen=True)
class Violation:
    kind: str  # "count" | "spd" | "collinear" | "nonfinite"
    message: str
    index: int = None


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok

    def kinds(self):
        return {v.kind for v in self.violations}


def reference_spread_rank(r):
    """Numerical rank of the centred reference-vector matrix."""
    r = np.asarray(r, dtype=float).reshape(-1, 3)
    if r.shape[0] == 0:
        return 0
    centred = r - r.mean(axis=0)
    s = np.linalg.svd(centred, compute_uv=False)
    # Identical vectors leave only round-off in the centred matrix, so the
    # threshold also scales with the vectors' magnitude.
    scale = max(s[0], float(np.abs(r).max()))
    return int(np.sum(s > RANK_RTOL * scale)) if scale > 0 else 0


def validate_instance(inst):
    """Collect every reason the instance cannot be solved; never raises."""
    out = []
    if inst.n < 3:
        out.append(Violation("count", f"need at least 3 observation pairs for an observable pose, got {inst.n}"))
    finite = bool(np.all(np.isfinite(inst.r_tilde)) and np.all(np.isfinite(inst.b_tilde)))
    if not finite:
        out.append(Violation("nonfinite", "observation vectors contain non-finite values"))
    for i, ob in enumerate(inst.observations):
        why = ob.noise.spd_violation()
        if why is not None:
            out.append(Violation("spd", f"observation {i}: noise covariance not positive definite ({why})", i))
    if finite and inst.n >= 1 and reference_spread_rank(inst.r_tilde) < 2:
        out.append(Violation("collinear", "reference vectors are collinear; attitude about their common line is unobservable"))
    return ValidationReport(tuple(out))


def synthesize_reference_vectors(truth, b_list):
    """Reference vectors ``r = A^T (b + p)`` consistent with ``b = A r - p``."""
    b = np.asarray(b_list, dtype=float).reshape(-1, 3)
    return (b + truth.translation) @ truth.attitude


def forward_body_vectors(truth, r_list):
    r = np.asarray(r_list, dtype=float).reshape(-1, 3)
    return r @ truth.attitude.T - truth.translation


# Three-landmark simulation scenario: identity attitude, 0.3/-0.4/0.5 m offset,
# joint covariances in 1e-6 m^2 ordered (dr, db).
SCENARIO_TRANSLATION = (0.3, -0.4, 0.5)
SCENARIO_BODY_VECTORS = (
    (0.0, 9.7590e-2, -1.4833e-1),
    (0.0, 1.9518e-1, -1.2855e-2),
    (1.0, 9.7590e-1, 9.8885e-1),
)
SCENARIO_COVARIANCES = (
    (
        (0.1902, 0.0228, -0.0190, -0.0345, -0.0079, 0.0225),
        (0.0228, 0.2288, -0.0003, 0.0145, 0.0483, -0.0161),
        (-0.0190, -0.0003, 0.3554, 0.0765, -0.0180, 0.1386),
        (-0.0345, 0.0145, 0.0765, 0.2566, -0.0201, 0.0408),
        (-0.0079, 0.0483, -0.0180, -0.0201, 0.2621, -0.0800),
        (0.0225, -0.0161, 0.1386, 0.0408, -0.0800, 0.3349),
    ),
    (
        (0.1981, 0.0213, 0.0021, -0.0519, -0.0218, -0.0231),
        (0.0213, 0.1980, -0.0264, 0.0023, -0.0116, 0.0030),
        (0.0021, -0.0264, 0.2040, -0.0456, 0.0273, -0.0152),
        (-0.0519, 0.0023, -0.0456, 0.2481, 0.0025, 0.0258),
        (-0.0218, -0.0116, 0.0273, 0.0025, 0.1933, 0.0069),
        (-0.0231, 0.0030, -0.0152, 0.0258, 0.0069, 0.1851),
    ),
    (
        (0.1705, -0.0071, -0.0154, -0.0247, 0.0081, 0.0049),
        (-0.0071, 0.2036, 0.0038, 0.0259, -0.0311, 0.0064),
        (-0.0154, 0.0038, 0.1910, 0.0376, 0.0085, 0.0166),
        (-0.0247, 0.0259, 0.0376, 0.2738, -0.0153, 0.0170),
        (0.0081, -0.0311, 0.0085, -0.0153, 0.1850, -0.0114),
        (0.0049, 0.0064, 0.0166, 0.0170, -0.0114, 0.2049),
    ),
)


def scenario_truth():
    return Pose(np.eye(3), SCENARIO_TRANSLATION)


def scenario_instance():
    """Noise-free three-landmark scenario used for calibration runs."""
    truth = scenario_truth()
    b = np.array(SCENARIO_BODY_VECTORS)
    r = synthesize_reference_vectors(truth, b)
    noises = [NoiseModel.from_matrix(np.array(R) * 1e-6) for R in SCENARIO_COVARIANCES]
    return ProblemInstance.from_arrays(r, b, noises)
