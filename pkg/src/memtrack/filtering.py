"""Closed-form joint state/extension recursion.

The recursion is parameterized by a :class:`~memtrack.models.Compensation`
input, so the same code runs as the classic zero-compensation baseline and
as the filtering backbone of the learned tracker.  With zero compensation
and a linear model the state branch is algebraically a Kalman filter whose
measurement covariance is B Xhat B^T / n.

All arithmetic goes through :mod:`memtrack.ops`, so beliefs may carry tape
variables; gradients then flow through every update into upstream inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import (
    BadDof,
    NonFinite,
    SingularExtension,
    SingularInnovation,
    TooFewPoints,
)
from .models import (
    D,
    Compensation,
    ExtensionState,
    FrameStats,
    MeasurementFrame,
    NominalModel,
    TrackState,
    frame_stats,
)
from .spdmat import cholesky, inverse_spd, sym_sqrt

__all__ = [
    "TrackerConfig",
    "InnovationStats",
    "FilterDiagnostics",
    "predict_state",
    "predict_extension",
    "predict_measurement",
    "innovation",
    "update_state",
    "update_extension",
    "extension_mean",
    "init_track",
    "filter_step",
    "run_filter",
]

# Eigenvalue floor for covariance/extension projections, relative to trace.
PROJ_EPS_FACTOR = 1e-9

# Absolute floor (m^2) for extension parameter projections; stops a
# collapsing extent from driving the solves singular.
EXT_ABS_FLOOR = 1e-6

# Predicted dofs are snapped to this dyadic grid (2^-34, ~6e-11 absolute)
# so that the integer update increment v_post = v_pred + n is exact in
# float arithmetic at every step.
_DOF_GRID = 2.0 ** 34


@dataclass(frozen=True)
class TrackerConfig:
    """Initialization priors and behavior knobs for a tracker run."""

    pos_var: float = 1.0        # m^2, initial position variance
    vel_var: float = 25.0       # (m/s)^2, initial velocity variance
    init_dof: float = 10.0      # initial extension dof v0
    min_extent: float = 1.0     # m^2 eigenvalue floor for the initial param


@dataclass(frozen=True)
class InnovationStats:
    """Predicted measurement and the covariances driving both updates."""

    z_pred: np.ndarray   # (2,)
    pxz: np.ndarray      # (4, 2)
    pzz: np.ndarray      # (2, 2)
    s_inv: np.ndarray    # (2, 2) extension innovation scale
    count: int


@dataclass(frozen=True)
class FilterDiagnostics:
    """Intermediates of one step, exposed for training and tests."""

    pred_state: TrackState
    pred_ext: ExtensionState
    stats: InnovationStats
    residual: np.ndarray
    frame: FrameStats


def _proj_eps(raw) -> float:
    tr = float(np.trace(ops.value(raw)))
    return PROJ_EPS_FACTOR * abs(tr)


def predict_state(prior: TrackState, model: NominalModel, comp: Compensation) -> TrackState:
    """Evolve the kinematic belief one step.

    mean = f(x) + df;  cov = F P F^T + Q + pf, symmetrized.  Nonlinear f is
    handled by first-order linearization with the model-supplied Jacobian.
    """
    mean = model.f(prior.mean) + comp.df
    fmat = model.jac_f(ops.value(prior.mean))
    cov_raw = fmat @ prior.cov @ fmat.T + model.q + comp.pf
    cov = ops.sym_project(cov_raw, _proj_eps(cov_raw))
    if not np.all(np.isfinite(ops.value(mean))):
        raise NonFinite("predicted state mean is not finite")
    return TrackState(mean=mean, cov=cov)


def predict_extension(prior: ExtensionState, model: NominalModel, comp: Compensation) -> ExtensionState:
    """Evolve the extension belief one step.

    lambda = v - 2d - 2 must exceed 2 for the dof moment-matching formula;
    the predicted dof is

        v' = 2 delta (l+1)(l-1)(l-2) / (l^2 (l+delta)) + 2d + 4

    and the parameter matrix is scaled by (v' - 2d - 2)/lambda around the
    transition bracket delta * A X A^T + pphi (divided by delta in
    mean-preserving mode).
    """
    lam = prior.dof - 2 * D - 2
    if lam <= 2.0:
        raise BadDof(f"extension prediction needs lambda > 2, got {lam}")
    delta = model.delta
    v_pred = 2.0 * delta * (lam + 1.0) * (lam - 1.0) * (lam - 2.0) / (lam * lam * (lam + delta)) \
        + 2 * D + 4
    v_pred = float(np.round(v_pred * _DOF_GRID) / _DOF_GRID)
    bracket = delta * (model.a @ prior.param @ model.a.T) + comp.pphi
    if model.mean_preserving_transition:
        bracket = bracket / delta
    raw = ((v_pred - 2 * D - 2) / lam) * bracket
    param = ops.sym_project(raw, max(_proj_eps(raw), EXT_ABS_FLOOR))
    return ExtensionState(dof=v_pred, param=param)


def predict_measurement(pred: TrackState, model: NominalModel, comp: Compensation):
    """Predicted frame mean h(x) + dh."""
    return model.h(pred.mean) + comp.dh


def extension_mean(ext: ExtensionState):
    """Point-estimate extent: param / (dof - 2d - 2)."""
    lam = ext.dof - 2 * D - 2
    if lam <= 0.0:
        raise BadDof(f"extension mean needs dof > {2 * D + 2}, got {ext.dof}")
    return ext.param / lam


def innovation(
    pred: TrackState,
    ext_pred: ExtensionState,
    model: NominalModel,
    comp: Compensation,
    count: int,
) -> InnovationStats:
    """Cross/innovation covariances and the extension innovation scale.

    Pzz uses the lambda-scaled extent point estimate (not the raw parameter
    matrix, whose scale grows with dof).  The scalar |B|^(d/2)/n term of the
    extension scale enters as a multiple of the identity.
    """
    if count < 1:
        raise SingularInnovation("innovation needs at least one measurement")
    z_pred = predict_measurement(pred, model, comp)
    hmat = model.jac_h(ops.value(pred.mean))
    pxz = pred.cov @ hmat.T
    hph = hmat @ pxz
    xhat = extension_mean(ext_pred)
    scatter_noise = (model.b @ xhat @ model.b.T) / float(count)
    physical = hph + scatter_noise
    # The learned ph may be slightly negative; keep Pzz safely positive
    # definite by flooring its spectrum at a fraction of the
    # compensation-free part.  PSD ph never triggers the clamp, and when it
    # does trigger, the clamp blocks the gradient along the offending
    # direction, which keeps training out of the sign-flip regime.
    pzz = ops.spectrum_floor(physical + comp.ph, physical, 0.05)
    det_b = float(np.linalg.det(model.b))
    try:
        x_inv_hph = ops.solve(ext_pred.param, ops.transpose(hph))
    except np.linalg.LinAlgError as exc:
        raise SingularExtension(f"predicted extension is singular: {exc}") from exc
    s_inv = ops.transpose(x_inv_hph) + (abs(det_b) ** (D / 2.0) / float(count)) * np.eye(2) + comp.ph
    return InnovationStats(z_pred=z_pred, pxz=pxz, pzz=pzz, s_inv=s_inv, count=count)


def update_state(pred: TrackState, stats: InnovationStats, z_tilde) -> TrackState:
    """Kalman-form state update with gain Pxz Pzz^-1."""
    try:
        gain_t = ops.solve(stats.pzz, ops.transpose(stats.pxz))
    except np.linalg.LinAlgError as exc:
        raise SingularInnovation(f"innovation covariance is singular: {exc}") from exc
    gain = ops.transpose(gain_t)
    residual = z_tilde - stats.z_pred
    mean = pred.mean + gain @ residual
    cov_raw = pred.cov - gain @ ops.transpose(stats.pxz)
    cov = ops.sym_project(cov_raw, _proj_eps(cov_raw))
    if not np.all(np.isfinite(ops.value(mean))):
        raise NonFinite("updated state mean is not finite")
    return TrackState(mean=mean, cov=cov)


def update_extension(
    pred: ExtensionState,
    stats: InnovationStats,
    fs: FrameStats,
    model: NominalModel,
) -> ExtensionState:
    """Extension update: dof grows by the measurement count, and the
    parameter matrix absorbs the innovation outer product (scaled by the
    extension innovation scale) and the whitened frame scatter.

    The scatter term is computed as the literal product chain
    B^-1 Z B^-T X_pred^-1 X_pred; its asymmetry is removed by the final
    projection.  ``feldmann_update`` substitutes the classic symmetric
    Cholesky-whitened update for comparison runs (inference only).
    """
    if fs.count < 1:
        raise SingularExtension("extension update needs at least one measurement")
    dof = pred.dof + fs.count
    residual = fs.mean - stats.z_pred

    if model.feldmann_update:
        if isinstance(pred.param, ops.Var):
            raise NotImplementedError("feldmann_update is an inference-only comparison mode")
        x_half = sym_sqrt(ops.value(pred.param))
        pzz_inv_half = inverse_spd(sym_sqrt(ops.value(stats.pzz)))
        n_hat = x_half @ pzz_inv_half @ np.outer(ops.value(residual), ops.value(residual)) \
            @ pzz_inv_half.T @ x_half.T
        y = model.b @ (ops.value(pred.param) / (pred.dof - 2 * D - 2)) @ model.b.T
        y_inv_half = inverse_spd(sym_sqrt(y))
        z_hat = x_half @ y_inv_half @ fs.scatter @ y_inv_half.T @ x_half.T
        raw = ops.value(pred.param) + n_hat + z_hat
        param = ops.sym_project(raw, max(_proj_eps(raw), EXT_ABS_FLOOR))
        return ExtensionState(dof=dof, param=param)

    b_inv = inverse_spd(model.b)
    whitened_scatter = b_inv @ fs.scatter @ b_inv.T
    try:
        x_inv_ws_t = ops.solve(pred.param, whitened_scatter.T)
    except np.linalg.LinAlgError as exc:
        raise SingularExtension(f"predicted extension is singular: {exc}") from exc
    scatter_term = ops.transpose(x_inv_ws_t) @ pred.param
    raw = pred.param + stats.s_inv @ ops.outer(residual, residual) + scatter_term
    param = ops.sym_project(raw, max(_proj_eps(raw), EXT_ABS_FLOOR))
    return ExtensionState(dof=dof, param=param)


def init_track(first: MeasurementFrame, cfg: TrackerConfig) -> tuple[TrackState, ExtensionState]:
    """Initialize beliefs from the first frame.

    Position at the frame mean, zero velocity, diagonal covariance priors;
    the extension parameter matrix is the lambda-scaled sample covariance,
    floored at ``min_extent`` per eigenvalue.
    """
    if first.count < 2:
        raise TooFewPoints(f"track initialization needs >= 2 points, got {first.count}")
    fs = frame_stats(first)
    mean = np.array([fs.mean[0], fs.mean[1], 0.0, 0.0])
    cov = np.diag([cfg.pos_var, cfg.pos_var, cfg.vel_var, cfg.vel_var])
    lam0 = cfg.init_dof - 2 * D - 2
    if lam0 <= 2.0:
        raise BadDof(f"init_dof must exceed {2 * D + 4}, got {cfg.init_dof}")
    raw = lam0 * (fs.scatter / (fs.count - 1))
    param = ops.sym_project(raw, cfg.min_extent)
    return TrackState(mean=mean, cov=cov), ExtensionState(dof=cfg.init_dof, param=param)


def filter_step(
    state: TrackState,
    ext: ExtensionState,
    frame: MeasurementFrame,
    model: NominalModel,
    comp: Compensation,
) -> tuple[TrackState, ExtensionState, FilterDiagnostics]:
    """One predict/update cycle over a frame with a fixed compensation."""
    fs = frame_stats(frame)
    pred = predict_state(state, model, comp)
    ext_pred = predict_extension(ext, model, comp)
    stats = innovation(pred, ext_pred, model, comp, fs.count)
    new_state = update_state(pred, stats, fs.mean)
    new_ext = update_extension(ext_pred, stats, fs, model)
    diag = FilterDiagnostics(
        pred_state=pred,
        pred_ext=ext_pred,
        stats=stats,
        residual=fs.mean - ops.value(stats.z_pred),
        frame=fs,
    )
    return new_state, new_ext, diag


def run_filter(
    frames: list[MeasurementFrame],
    model: NominalModel,
    cfg: TrackerConfig,
    comps: list[Compensation] | None = None,
):
    """Filter a whole sequence; the first frame only initializes.

    Returns (posterior states, posterior extensions, diagnostics), each of
    length len(frames) - 1.  ``comps`` supplies one compensation per update
    step; None runs the zero-compensation baseline.
    """
    if len(frames) < 2:
        raise TooFewPoints("a sequence needs at least two frames")
    state, ext = init_track(frames[0], cfg)
    zero = Compensation.zero()
    states, exts, diags = [], [], []
    for k, frame in enumerate(frames[1:]):
        comp = zero if comps is None else comps[k]
        state, ext, diag = filter_step(state, ext, frame, model, comp)
        states.append(state)
        exts.append(ext)
        diags.append(diag)
    return states, exts, diags
