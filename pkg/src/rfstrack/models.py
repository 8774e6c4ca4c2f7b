"""Declarative system models shared by the tracker, estimator and simulator.

Multiple linear-Gaussian motion models with Markov switching, a linear
position measurement model, birth/survival/detection parameters and a
uniform-over-rectangle Poisson clutter model.  Bundles are immutable
after construction and freely shareable across filter runs.
"""

from dataclasses import dataclass, replace
from math import lgamma

import numpy as np

STATE_DIM = 4  # x, y, vx, vy
MEAS_DIM = 2


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in measurement units."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def extent(self) -> tuple[float, float]:
        return (self.x_max - self.x_min, self.y_max - self.y_min)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def contains(self, z) -> bool:
        x, y = float(z[0]), float(z[1])
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


@dataclass(frozen=True)
class MotionModel:
    """One linear-Gaussian dynamic mode: x' = F x + w, w ~ N(0, Q), per frame."""

    id: int
    F: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "F", np.asarray(self.F, dtype=float))
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))


@dataclass(frozen=True)
class ModelSet:
    """Motion models with Markov switching matrix tau and birth-mode distribution pi.

    tau[i, j] is the probability of switching from model i+1 to model j+1;
    rows sum to one.  pi[j] is the probability a newborn target starts in
    model j+1.
    """

    models: tuple[MotionModel, ...]
    tau: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float))
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float).reshape(-1))

    @property
    def n_models(self) -> int:
        return len(self.models)


@dataclass(frozen=True)
class MeasurementModel:
    """Linear position measurement z = H x + v, v ~ N(0, R)."""

    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "H", np.asarray(self.H, dtype=float))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))


@dataclass(frozen=True)
class BirthModel:
    """Gaussian-mixture birth intensity and birth cardinality distribution."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    cardinality: np.ndarray  # rho_Gamma(0..support)

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float).reshape(-1))
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=float)))
        covs = np.asarray(self.covs, dtype=float)
        if covs.ndim == 2:
            covs = covs[None, :, :]
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "cardinality", np.asarray(self.cardinality, dtype=float).reshape(-1))

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class ClutterModel:
    """Poisson clutter, uniform over a rectangular region.

    The spatial density K(z) is 1/area inside the region and 0 outside;
    the intensity is lam * K(z).  ``lam`` is the bundled default rate and
    may be overridden per frame by the caller.
    """

    region: Rect
    lam: float = 0.0

    @property
    def volume(self) -> float:
        return self.region.area

    def spatial_density(self, z) -> float:
        return 1.0 / self.volume if self.region.contains(z) else 0.0


@dataclass(frozen=True)
class SurvivalDetectionParams:
    """Frame-level survival and detection probabilities (state-independent)."""

    p_S: float
    p_D: float


@dataclass(frozen=True)
class ModelBundle:
    """Everything a filter needs: dynamics, measurement, birth, clutter, rates."""

    model_set: ModelSet
    measurement: MeasurementModel
    birth: BirthModel
    clutter: ClutterModel
    survival_detection: SurvivalDetectionParams


def clutter_spatial_density(model: ClutterModel, z) -> float:
    """kappa(z)/lam: 1/V inside the region, 0 outside."""
    return model.spatial_density(z)


# ---------------------------------------------------------------------------
# Defaults
# ---------------------------------------------------------------------------

def random_walk_model(idx: int = 1, sigma_pos: float = 1.5, sigma_vel: float = 0.01) -> MotionModel:
    """Random-walk mode: position diffuses, velocity is zeroed each frame.

    The tiny velocity noise keeps Q positive definite so mixture
    covariances never go singular under repeated prediction.
    """
    F = np.zeros((STATE_DIM, STATE_DIM))
    F[0, 0] = F[1, 1] = 1.0
    Q = np.diag([sigma_pos**2, sigma_pos**2, sigma_vel**2, sigma_vel**2])
    return MotionModel(idx, F, Q)


def constant_velocity_model(idx: int = 2, sigma_acc: float = 0.5, dt: float = 1.0) -> MotionModel:
    """Near-constant-velocity mode with small white-acceleration noise."""
    F = np.eye(STATE_DIM)
    F[0, 2] = F[1, 3] = dt
    g = np.array([0.5 * dt * dt, dt])
    q_axis = sigma_acc**2 * np.outer(g, g)
    Q = np.zeros((STATE_DIM, STATE_DIM))
    for axis in (0, 1):
        Q[axis, axis] = q_axis[0, 0]
        Q[axis, axis + 2] = Q[axis + 2, axis] = q_axis[0, 1]
        Q[axis + 2, axis + 2] = q_axis[1, 1]
    # jitter keeps the DWNA covariance strictly positive definite
    Q += 1e-8 * np.eye(STATE_DIM)
    return MotionModel(idx, F, Q)


def default_model_set(
    stay_prob: float = 0.9,
    sigma_pos: float = 1.5,
    sigma_acc: float = 0.5,
) -> ModelSet:
    """Two-mode default: random walk and near-constant velocity."""
    tau = np.array([[stay_prob, 1.0 - stay_prob], [1.0 - stay_prob, stay_prob]])
    pi = np.array([0.5, 0.5])
    return ModelSet(
        (random_walk_model(1, sigma_pos), constant_velocity_model(2, sigma_acc)),
        tau,
        pi,
    )


def default_measurement_model(sigma_meas: float = 1.0) -> MeasurementModel:
    H = np.zeros((MEAS_DIM, STATE_DIM))
    H[0, 0] = H[1, 1] = 1.0
    return MeasurementModel(H, sigma_meas**2 * np.eye(MEAS_DIM))


def poisson_pmf(mean: float, support: int) -> np.ndarray:
    """Poisson pmf on 0..support, renormalized over the truncated support."""
    n = np.arange(support + 1)
    if mean <= 0:
        out = np.zeros(support + 1)
        out[0] = 1.0
        return out
    logp = -mean + n * np.log(mean) - np.array([lgamma(k + 1) for k in n])
    p = np.exp(logp - logp.max())
    return p / p.sum()


def default_birth_model(
    region: Rect,
    birth_rate: float = 1.0,
    cardinality_support: int = 8,
    sigma_vel: float = 5.0,
) -> BirthModel:
    """Single broad Gaussian centered on the region, Poisson birth cardinality.

    The position standard deviation is half the region extent, so a
    newborn component covers the whole field of view.
    """
    cx, cy = region.center
    wx, wy = region.extent
    mean = np.array([cx, cy, 0.0, 0.0])
    cov = np.diag([(0.5 * wx) ** 2, (0.5 * wy) ** 2, sigma_vel**2, sigma_vel**2])
    return BirthModel(
        weights=np.array([birth_rate]),
        means=mean[None, :],
        covs=cov[None, :, :],
        cardinality=poisson_pmf(birth_rate, cardinality_support),
    )


def default_bundle(
    region: Rect | None = None,
    p_S: float = 0.95,
    p_D: float = 0.9,
    lam: float = 10.0,
    birth_rate: float = 1.0,
    sigma_meas: float = 1.0,
    model_set: ModelSet | None = None,
) -> ModelBundle:
    region = region or Rect(0.0, 230.0, 0.0, 230.0)
    return ModelBundle(
        model_set=model_set or default_model_set(),
        measurement=default_measurement_model(sigma_meas),
        birth=default_birth_model(region, birth_rate),
        clutter=ClutterModel(region, lam),
        survival_detection=SurvivalDetectionParams(p_S, p_D),
    )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _check_covariance(name: str, mat: np.ndarray, violations: list[str], strict: bool = False):
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        violations.append(f"{name} is not square")
        return
    scale = max(np.abs(mat).max(), 1.0)
    if np.abs(mat - mat.T).max() > 1e-9 * scale:
        violations.append(f"{name} is not symmetric")
    eig = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    low = eig.min()
    if strict and low <= 0:
        violations.append(f"{name} has non-positive eigenvalue {low:.3e}")
    elif not strict and low < -1e-9 * scale:
        violations.append(f"{name} has negative eigenvalue {low:.3e}")


def validate(bundle: ModelBundle) -> list[str]:
    """Check every bundle invariant; returns all violations (empty = ok)."""
    v: list[str] = []
    ms = bundle.model_set
    R = ms.n_models
    if R == 0:
        v.append("model set is empty")
    for mm in ms.models:
        if mm.F.shape != (STATE_DIM, STATE_DIM):
            v.append(f"model {mm.id}: F shape {mm.F.shape} != ({STATE_DIM}, {STATE_DIM})")
        _check_covariance(f"model {mm.id}: Q", mm.Q, v)
    if ms.tau.shape != (R, R):
        v.append(f"tau shape {ms.tau.shape} != ({R}, {R})")
    else:
        for i, row in enumerate(ms.tau):
            if np.any(row < 0):
                v.append(f"tau row {i + 1} has negative entries")
            if abs(row.sum() - 1.0) > 1e-12:
                v.append(f"tau row {i + 1} sums to {row.sum():.12g}, expected 1")
    if ms.pi.size != R:
        v.append(f"pi length {ms.pi.size} != {R}")
    elif abs(ms.pi.sum() - 1.0) > 1e-12:
        v.append(f"pi sums to {ms.pi.sum():.12g}, expected 1")

    mm = bundle.measurement
    if mm.H.shape != (MEAS_DIM, STATE_DIM):
        v.append(f"H shape {mm.H.shape} != ({MEAS_DIM}, {STATE_DIM})")
    _check_covariance("measurement R", mm.R, v, strict=True)

    b = bundle.birth
    if np.any(b.weights < 0):
        v.append("birth mixture has negative weights")
    if b.means.shape[0] != b.weights.size or b.covs.shape[0] != b.weights.size:
        v.append("birth mixture weights/means/covs lengths disagree")
    for i in range(b.covs.shape[0]):
        _check_covariance(f"birth cov {i}", b.covs[i], v, strict=True)
    if np.any(b.cardinality < 0) or abs(b.cardinality.sum() - 1.0) > 1e-9:
        v.append(f"birth cardinality sums to {b.cardinality.sum():.12g}, expected 1")

    c = bundle.clutter
    if c.region.area <= 0:
        v.append("clutter region has non-positive area")
    if c.lam < 0:
        v.append(f"clutter rate {c.lam} is negative")

    sd = bundle.survival_detection
    if not 0.0 <= sd.p_S <= 1.0:
        v.append(f"p_S = {sd.p_S} outside [0, 1]")
    if not 0.0 <= sd.p_D <= 1.0:
        v.append(f"p_D = {sd.p_D} outside [0, 1]")
    return v


def with_rates(bundle: ModelBundle, lam: float, p_D: float) -> ModelBundle:
    """Bundle copy with a different clutter rate and detection probability."""
    return replace(
        bundle,
        clutter=replace(bundle.clutter, lam=lam),
        survival_detection=replace(bundle.survival_detection, p_D=p_D),
    )
