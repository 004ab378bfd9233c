"""Domain types: beliefs, measurement frames, nominal models, configuration.

Planar tracking throughout: extension dimension d = 2, kinematic state
[px, py, vx, vy].  All types are immutable values; belief fields may hold
either plain float64 arrays or tape ``Var`` objects (the filter is written
once over both).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import EmptyFrame

D = 2  # planar extension dimension; state dimension is 2 * D

__all__ = [
    "D",
    "TrackState",
    "ExtensionState",
    "MeasurementFrame",
    "FrameStats",
    "NominalModel",
    "Compensation",
    "ScenarioConfig",
    "cv_transition",
    "cv_transition_matrix",
    "linear_measurement",
    "MEASUREMENT_MATRIX",
    "frame_stats",
    "cv_process_noise",
    "nominal_cv_model",
]


@dataclass(frozen=True)
class TrackState:
    """Kinematic belief: mean [px, py, vx, vy] (m, m/s) and 4x4 SPD cov."""

    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class ExtensionState:
    """Inverse-Wishart extension belief.

    ``dof`` is the scalar degrees of freedom v; ``param`` the 2x2 SPD
    parameter matrix.  The point-estimate extent is param / (v - 2d - 2).
    """

    dof: float
    param: np.ndarray


@dataclass(frozen=True)
class MeasurementFrame:
    """Scatterer positions for one scan, shape (n, 2) in meters."""

    points: np.ndarray

    @property
    def count(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class FrameStats:
    """Sufficient statistics of a frame: mean, unnormalized scatter, count."""

    mean: np.ndarray     # (2,)
    scatter: np.ndarray  # (2, 2), sum of outer products around the mean
    count: int


@dataclass(frozen=True)
class Compensation:
    """Learned mismatch moments consumed by the filter.

    df / pf correct the state evolution (additive mean shift and covariance
    inflation), dh / ph the measurement prediction, and pphi the extension
    transition.  All-zero compensation reduces the filter to the classic
    random-matrix recursion.
    """

    df: np.ndarray    # (4,)
    pf: np.ndarray    # (4, 4)
    dh: np.ndarray    # (2,)
    ph: np.ndarray    # (2, 2)
    pphi: np.ndarray  # (2, 2)

    @staticmethod
    def zero() -> "Compensation":
        return Compensation(
            df=np.zeros(4),
            pf=np.zeros((4, 4)),
            dh=np.zeros(2),
            ph=np.zeros((2, 2)),
            pphi=np.zeros((2, 2)),
        )


@dataclass(frozen=True)
class NominalModel:
    """First-order nominal motion/measurement model.

    ``f`` and ``h`` must be written with tape-compatible arithmetic (array
    @ vector etc.); ``jac_f`` / ``jac_h`` return Jacobians at a plain-array
    linearization point.  ``mean_preserving_transition`` divides the
    extension-transition bracket by delta so the expected extent is carried
    over unchanged; the raw form multiplies it by delta, which compounds
    geometrically across steps (see the transition notes in filtering).
    ``feldmann_update`` switches the extension update to the classic
    Cholesky-whitened symmetric form for comparison runs.
    """

    f: Callable
    jac_f: Callable[[np.ndarray], np.ndarray]
    h: Callable
    jac_h: Callable[[np.ndarray], np.ndarray]
    q: np.ndarray            # (4, 4) process noise
    b: np.ndarray            # (2, 2) measurement distortion
    a: np.ndarray            # (2, 2) extension transition
    delta: float             # extension transition dof
    mean_preserving_transition: bool = False
    feldmann_update: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    """Benchmark scenario: CV/CT switching ellipse with Poisson scatterers."""

    steps: int = 140
    dt: float = 1.0
    sigma_w: float = 0.4
    sigma_v: float = 0.6
    axis_major: float = 10.0      # full major axis (m); semi-axis is half
    axis_minor: float = 2.0
    speed: float = 10.0           # m/s
    scatter_rate: float = 20.0    # Poisson mean per frame
    cases: int = 600
    train_fraction: float = 0.8
    turn_rate_min: float = 1.0    # deg/s
    turn_rate_max: float = 5.0    # deg/s
    segment_min: int = 10         # steps per regime segment
    segment_max: int = 40
    regimes: str = "cv_ct"        # "cv_ct" or "cv" (no turns)
    process_noise: str = "direct"  # "direct" N(0, s^2 I4) or "white_accel"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        for name in ("dt", "sigma_w", "sigma_v", "axis_major", "axis_minor",
                     "speed", "scatter_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.regimes not in ("cv_ct", "cv"):
            raise ValueError(f"unknown regimes mode {self.regimes!r}")
        if self.process_noise not in ("direct", "white_accel"):
            raise ValueError(f"unknown process_noise mode {self.process_noise!r}")


def cv_transition_matrix(dt: float) -> np.ndarray:
    return np.array([
        [1.0, 0.0, dt, 0.0],
        [0.0, 1.0, 0.0, dt],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


def cv_transition(x, dt: float):
    """Constant-velocity step: returns (F @ x, F)."""
    f = cv_transition_matrix(dt)
    return f @ x, f


MEASUREMENT_MATRIX = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
])


def linear_measurement(x):
    """Position-selector measurement: returns (H @ x, H)."""
    return MEASUREMENT_MATRIX @ x, MEASUREMENT_MATRIX


def frame_stats(frame: MeasurementFrame) -> FrameStats:
    """Mean and unnormalized scatter of a frame's points."""
    pts = np.asarray(frame.points, dtype=np.float64)
    n = pts.shape[0]
    if n < 1:
        raise EmptyFrame("frame has no points")
    mean = pts.mean(axis=0)
    centered = pts - mean
    scatter = centered.T @ centered
    return FrameStats(mean=mean, scatter=0.5 * (scatter + scatter.T), count=n)


def cv_process_noise(sigma_w: float, dt: float) -> np.ndarray:
    """Discretized white-acceleration CV noise, per-axis blocks
    [[dt^4/4, dt^3/2], [dt^3/2, dt^2]] * sigma_w^2."""
    if sigma_w <= 0:
        raise ValueError("sigma_w must be positive")
    s2 = sigma_w * sigma_w
    q = np.zeros((4, 4))
    for pos, vel in ((0, 2), (1, 3)):
        q[pos, pos] = 0.25 * dt ** 4 * s2
        q[pos, vel] = q[vel, pos] = 0.5 * dt ** 3 * s2
        q[vel, vel] = dt ** 2 * s2
    return q


def nominal_cv_model(
    sigma_w: float,
    dt: float = 1.0,
    delta: float = 7.0,
    b: np.ndarray | None = None,
    a: np.ndarray | None = None,
    mean_preserving_transition: bool = True,
    feldmann_update: bool = False,
) -> NominalModel:
    """The benchmark nominal model: CV motion, linear position measurement.

    Defaults differ from a bare NominalModel in two deliberate ways.  The
    extension transition is mean-preserving (the raw delta-scaled form
    compounds the extent estimate by a factor >1 per cycle at the default
    delta and scatter rate, which is unusable as a baseline).  And B is
    I/2: points uniform over a solid ellipse with extent X have second
    moment X/4, so B X B^T with B = I/2 is the scatter covariance that
    actually matches the extent convention (eigenvalues = squared
    semi-axes).  With B = I the extent estimate settles 4x low and any
    learned inflation would miscalibrate the innovation covariance.
    """
    fmat = cv_transition_matrix(dt)
    return NominalModel(
        f=lambda x, fmat=fmat: fmat @ x,
        jac_f=lambda x, fmat=fmat: fmat,
        h=lambda x: MEASUREMENT_MATRIX @ x,
        jac_h=lambda x: MEASUREMENT_MATRIX,
        q=cv_process_noise(sigma_w, dt),
        b=0.5 * np.eye(2) if b is None else np.asarray(b, dtype=np.float64),
        a=np.eye(2) if a is None else np.asarray(a, dtype=np.float64),
        delta=float(delta),
        mean_preserving_transition=mean_preserving_transition,
        feldmann_update=feldmann_update,
    )


def replace_model(model: NominalModel, **kw) -> NominalModel:
    return replace(model, **kw)
