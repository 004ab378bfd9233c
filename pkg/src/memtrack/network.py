"""Deep-memory compensation network.

An LSTM cell summarizes the history of posteriors and frame statistics into
a memory state; linear heads map that memory (and the current predictions)
to the five compensation moments the filter consumes.  Heads follow a
calibrated-zero convention: softplus outputs are shifted by softplus(0) so
that all-zero weights produce exactly zero compensation, making the
untrained network bit-identical to the baseline filter.

The covariance-head shift means the diagonal entries of pf/ph can dip
slightly negative (>= -log 2); downstream sums are SPD-projected, and the
extension inflation pphi is a true Cholesky square so it stays PSD.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import LengthMismatch, NonFinite
from .filtering import (
    TrackerConfig,
    extension_mean,
    init_track,
    innovation,
    predict_extension,
    predict_state,
    update_extension,
    update_state,
)
from .models import (
    Compensation,
    ExtensionState,
    FrameStats,
    MeasurementFrame,
    NominalModel,
    TrackState,
    frame_stats,
)

__all__ = [
    "FEATURE_DIM",
    "PRED_FEATURE_DIM",
    "MemoryState",
    "NetworkParams",
    "zero_params",
    "init_params",
    "initial_memory",
    "raw_features",
    "encode_inputs",
    "mub_step",
    "jeb_heads",
    "jub_heads",
    "forward_sequence",
    "sequence_loss",
]

FEATURE_DIM = 18       # memory-update input features
PRED_FEATURE_DIM = 12  # prediction-only subset fed to the update heads
FRAME_COV_EPS = 1e-6   # floor added to the per-frame scatter covariance

_OFF_DIAG_2 = np.array([[0.0, 0.0], [1.0, 0.0]])


@dataclass(frozen=True)
class MemoryState:
    """LSTM cell/hidden vectors plus the diagonal memory uncertainty.

    The hidden vector doubles as the memory mean; ``pc`` is its learned
    diagonal covariance (entrywise nonnegative).
    """

    cell: object
    hidden: object
    pc: object


def _array_specs(memory_dim: int) -> list[tuple[str, tuple[int, ...]]]:
    h = memory_dim
    return [
        ("lstm_w", (4 * h, FEATURE_DIM + h)),
        ("lstm_b", (4 * h,)),
        ("memcov_w", (h, h)),
        ("memcov_b", (h,)),
        ("evo_shift_w", (4, 2 * h)),
        ("evo_shift_b", (4,)),
        ("evo_cov_w", (4, 2 * h)),
        ("evo_cov_b", (4,)),
        ("evo_ext_w", (3, 2 * h)),
        ("evo_ext_b", (3,)),
        ("upd_shift_w", (2, PRED_FEATURE_DIM)),
        ("upd_shift_b", (2,)),
        ("upd_cov_w", (2, PRED_FEATURE_DIM)),
        ("upd_cov_b", (2,)),
    ]


@dataclass
class NetworkParams:
    """All trainable arrays plus masks and frozen feature statistics.

    ``arrays`` iterates in the declared order used by checkpoints.  Masks
    disable whole blocks for ablations: the evolution heads (jeb), the
    update heads (jub), or the memory update itself (mub).
    """

    memory_dim: int
    arrays: dict[str, np.ndarray]
    mask_evolution: bool = False
    mask_update: bool = False
    mask_memory: bool = False
    feat_mean: np.ndarray = field(default_factory=lambda: np.zeros(FEATURE_DIM))
    feat_std: np.ndarray = field(default_factory=lambda: np.ones(FEATURE_DIM))

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            memory_dim=self.memory_dim,
            arrays={k: v.copy() for k, v in self.arrays.items()},
            mask_evolution=self.mask_evolution,
            mask_update=self.mask_update,
            mask_memory=self.mask_memory,
            feat_mean=self.feat_mean.copy(),
            feat_std=self.feat_std.copy(),
        )

    def leaves(self, tape: ops.Tape) -> dict[str, ops.Var]:
        return {k: tape.leaf(v) for k, v in self.arrays.items()}


def zero_params(memory_dim: int, **masks) -> NetworkParams:
    arrays = {name: np.zeros(shape) for name, shape in _array_specs(memory_dim)}
    return NetworkParams(memory_dim=memory_dim, arrays=arrays, **masks)


def init_params(memory_dim: int, rng: np.random.Generator, **masks) -> NetworkParams:
    """Small random LSTM weights (forget-gate bias +1), near-zero heads.

    Shift/covariance heads start at exactly zero so early training matches
    the baseline filter.  The extension-inflation head gets a tiny random
    kick: its Cholesky-square output has zero gradient at exactly zero
    weights (d(L L^T)/dL vanishes at L = 0), so a pinpoint zero start would
    never learn.
    """
    params = zero_params(memory_dim, **masks)
    h = memory_dim
    scale = 1.0 / np.sqrt(FEATURE_DIM + h)
    params.arrays["lstm_w"] = rng.uniform(-scale, scale, size=(4 * h, FEATURE_DIM + h))
    params.arrays["lstm_b"][h:2 * h] = 1.0
    params.arrays["memcov_w"] = rng.uniform(-1.0 / np.sqrt(h), 1.0 / np.sqrt(h), size=(h, h))
    params.arrays["evo_ext_w"] = 1e-2 * rng.standard_normal((3, 2 * h))
    return params


def initial_memory(memory_dim: int) -> MemoryState:
    z = np.zeros(memory_dim)
    return MemoryState(cell=z, hidden=z.copy(), pc=z.copy())


def raw_features(state: TrackState, ext: ExtensionState, fs: FrameStats):
    """Unstandardized 18-feature encoding of (posterior, current frame)."""
    pieces = list(_pred_feature_pieces(state, ext))
    pos = state.mean[0:2]
    pieces.append(fs.mean - pos)
    scatter_cov = fs.scatter / max(fs.count - 1, 1) + FRAME_COV_EPS * np.eye(2)
    pieces.append(ops.logchol2x2(scatter_cov))
    pieces.append(np.array([np.log(float(fs.count))]))
    return ops.concat(pieces)


def _pred_feature_pieces(state: TrackState, ext: ExtensionState):
    yield state.mean
    yield ops.log(ops.take_diag(state.cov))
    yield ops.logchol2x2(extension_mean(ext))
    yield np.array([np.log(float(ext.dof))])


def encode_inputs(state: TrackState, ext: ExtensionState, fs: FrameStats,
                  params: NetworkParams):
    """Standardized memory-update features (frozen per-feature statistics)."""
    raw = raw_features(state, ext, fs)
    return (raw - params.feat_mean) / params.feat_std


def _encode_predictions(pred: TrackState, ext_pred: ExtensionState, params: NetworkParams):
    raw = ops.concat(list(_pred_feature_pieces(pred, ext_pred)))
    return (raw - params.feat_mean[:PRED_FEATURE_DIM]) / params.feat_std[:PRED_FEATURE_DIM]


def mub_step(params: NetworkParams, weights, features, mem: MemoryState) -> MemoryState:
    """One LSTM memory update; masked mode freezes memory and zeroes pc."""
    h = params.memory_dim
    if params.mask_memory:
        return MemoryState(cell=mem.cell, hidden=mem.hidden, pc=np.zeros(h))
    z = ops.concat([features, mem.hidden])
    lin = weights["lstm_w"] @ z + weights["lstm_b"]
    gate_in = ops.sigmoid(lin[0:h])
    gate_forget = ops.sigmoid(lin[h:2 * h])
    gate_out = ops.sigmoid(lin[2 * h:3 * h])
    candidate = ops.tanh(lin[3 * h:4 * h])
    cell = gate_forget * mem.cell + gate_in * candidate
    hidden = gate_out * ops.tanh(cell)
    pc = ops.softplus(weights["memcov_w"] @ hidden + weights["memcov_b"])
    return MemoryState(cell=cell, hidden=hidden, pc=pc)


def jeb_heads(params: NetworkParams, weights, mem: MemoryState):
    """Evolution compensation (df, pf, pphi) from the memory state."""
    if params.mask_evolution:
        return np.zeros(4), np.zeros((4, 4)), np.zeros((2, 2))
    inp = ops.concat([mem.hidden, mem.pc])
    df = weights["evo_shift_w"] @ inp + weights["evo_shift_b"]
    pf_diag = ops.softplus(weights["evo_cov_w"] @ inp + weights["evo_cov_b"]) - ops.SOFTPLUS_ZERO
    pf = ops.diag_embed(pf_diag)
    ext_vec = weights["evo_ext_w"] @ inp + weights["evo_ext_b"]
    ldiag = ops.softplus(ext_vec[0:2]) - ops.SOFTPLUS_ZERO
    ell = ops.diag_embed(ldiag) + ext_vec[2] * _OFF_DIAG_2
    pphi = ell @ ops.transpose(ell)
    return df, pf, pphi


def jub_heads(params: NetworkParams, weights, pred: TrackState, ext_pred: ExtensionState):
    """Measurement compensation (dh, ph) from the current predictions."""
    if params.mask_update:
        return np.zeros(2), np.zeros((2, 2))
    inp = _encode_predictions(pred, ext_pred, params)
    dh = weights["upd_shift_w"] @ inp + weights["upd_shift_b"]
    ph_diag = ops.softplus(weights["upd_cov_w"] @ inp + weights["upd_cov_b"]) - ops.SOFTPLUS_ZERO
    ph = ops.diag_embed(ph_diag)
    return dh, ph


def forward_sequence(
    params: NetworkParams,
    frames: list[MeasurementFrame],
    model: NominalModel,
    tcfg: TrackerConfig | None = None,
    tape: ops.Tape | None = None,
    trace: list | None = None,
):
    """Run the memory-aided filter over a whole sequence.

    The first frame initializes the track; every later frame runs
    memory update -> evolution heads -> filter prediction -> update heads
    -> filter update.  With a tape, parameters enter as leaves and the
    returned mapping supports gradient extraction; without one this is the
    plain-inference path (identical arithmetic).  ``trace``, if given,
    receives one (Compensation, innovation residual) pair per step for
    diagnostics.

    Returns (posterior states, posterior extensions, leaves-or-None).
    """
    tcfg = tcfg or TrackerConfig()
    weights = params.leaves(tape) if tape is not None else params.arrays
    state, ext = init_track(frames[0], tcfg)
    mem = initial_memory(params.memory_dim)
    states: list[TrackState] = []
    exts: list[ExtensionState] = []
    for k, frame in enumerate(frames[1:], start=2):
        fs = frame_stats(frame)
        features = encode_inputs(state, ext, fs, params)
        mem = mub_step(params, weights, features, mem)
        df, pf, pphi = jeb_heads(params, weights, mem)
        evo_comp = Compensation(df=df, pf=pf, dh=np.zeros(2), ph=np.zeros((2, 2)), pphi=pphi)
        pred = predict_state(state, model, evo_comp)
        ext_pred = predict_extension(ext, model, evo_comp)
        dh, ph = jub_heads(params, weights, pred, ext_pred)
        comp = Compensation(df=df, pf=pf, dh=dh, ph=ph, pphi=pphi)
        stats = innovation(pred, ext_pred, model, comp, fs.count)
        state = update_state(pred, stats, fs.mean)
        ext = update_extension(ext_pred, stats, fs, model)
        if not (np.all(np.isfinite(ops.value(state.mean)))
                and np.all(np.isfinite(ops.value(ext.param)))):
            raise NonFinite(f"non-finite posterior at step {k}")
        if trace is not None:
            trace.append((comp, fs.mean - np.asarray(ops.value(stats.z_pred))))
        states.append(state)
        exts.append(ext)
    return states, exts, (weights if tape is not None else None)


def sequence_loss(states, exts, truth_states, truth_extents, weights=None, gamma: float = 0.0):
    """Joint squared-error loss against ground truth.

    (1/2K) * sum_k (||x_k - truth||^2 + ||extent_k - truth||_F^2) plus
    gamma * ||theta||^2 over the supplied weights.  The extent compared is
    the lambda-scaled posterior mean, not the raw parameter matrix.
    """
    k = len(states)
    if not (len(exts) == len(truth_states) == len(truth_extents) == k):
        raise LengthMismatch(
            f"got {k} states, {len(exts)} extensions, "
            f"{len(truth_states)}/{len(truth_extents)} truth entries")
    total = None
    for st, ex, tx, te in zip(states, exts, truth_states, truth_extents):
        term = ops.sumsq(st.mean - tx) + ops.sumsq(extension_mean(ex) - te)
        total = term if total is None else total + term
    total = total / (2.0 * k)
    if weights is not None and gamma != 0.0:
        reg = None
        for w in weights.values():
            reg = ops.sumsq(w) if reg is None else reg + ops.sumsq(w)
        total = total + gamma * reg
    return total
