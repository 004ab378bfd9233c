"""Reverse-mode differentiation tape over small numpy arrays.

Every op here dispatches on its inputs: plain ndarrays (or python floats)
flow straight through numpy, while ``Var`` operands get the identical numpy
arithmetic recorded on their tape.  Writing the filter and network once over
these ops guarantees that training-time forwards and plain inference produce
the same values bit for bit.

The tape is linear: nodes are appended in execution order, so a reversed
walk visits every node after all of its consumers.  Adjoint accumulation is
a list indexed by node position; no topological sort is needed.
"""

from __future__ import annotations

import numpy as np

from .errors import NotPositiveDefinite, TapeEmpty

# softplus(0); subtracting this constant (rather than a literal log 2) makes
# the calibrated-zero head outputs exactly 0.0 for zero weights.
SOFTPLUS_ZERO = float(np.logaddexp(0.0, 0.0))


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "idx")
    __array_ufunc__ = None  # force numpy to defer to our operators

    def __init__(self, value, tape, idx):
        self.value = value
        self.tape = tape
        self.idx = idx

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(idx={self.idx}, value={self.value!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Linear record of ops; ``entries[i]`` lists (parent_idx, vjp) pairs."""

    def __init__(self):
        self.entries = []

    def leaf(self, value) -> Var:
        self.entries.append(())
        return Var(np.asarray(value, dtype=np.float64), self, len(self.entries) - 1)

    def _node(self, value, pairs) -> Var:
        self.entries.append(tuple(pairs))
        return Var(value, self, len(self.entries) - 1)

    def backward(self, out: Var, seed: float = 1.0):
        """Adjoints of ``out`` w.r.t. every node; indexable by Var.idx."""
        if not self.entries:
            raise TapeEmpty("no operations recorded")
        grads = [None] * len(self.entries)
        grads[out.idx] = np.asarray(seed, dtype=np.float64)
        for i in range(out.idx, -1, -1):
            g = grads[i]
            if g is None:
                continue
            for pidx, vjp in self.entries[i]:
                contrib = vjp(g)
                if grads[pidx] is None:
                    grads[pidx] = contrib
                else:
                    grads[pidx] = grads[pidx] + contrib
        return grads

    def grad(self, grads, var: Var) -> np.ndarray:
        g = grads[var.idx]
        if g is None:
            return np.zeros_like(var.value)
        return np.broadcast_to(g, np.shape(var.value)).astype(np.float64, copy=True)


def value(x):
    """Underlying ndarray / float of a Var or passthrough."""
    return x.value if isinstance(x, Var) else x


def _tape(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unbroadcast(g, shape):
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    if g.shape != tuple(shape):
        g = np.reshape(g, shape)
    return g


def add(a, b):
    t = _tape(a, b)
    out = value(a) + value(b)
    if t is None:
        return out
    pairs = []
    if isinstance(a, Var):
        sa = np.shape(a.value)
        pairs.append((a.idx, lambda g: _unbroadcast(g, sa)))
    if isinstance(b, Var):
        sb = np.shape(b.value)
        pairs.append((b.idx, lambda g: _unbroadcast(g, sb)))
    return t._node(out, pairs)


def sub(a, b):
    t = _tape(a, b)
    out = value(a) - value(b)
    if t is None:
        return out
    pairs = []
    if isinstance(a, Var):
        sa = np.shape(a.value)
        pairs.append((a.idx, lambda g: _unbroadcast(g, sa)))
    if isinstance(b, Var):
        sb = np.shape(b.value)
        pairs.append((b.idx, lambda g: _unbroadcast(-g, sb)))
    return t._node(out, pairs)


def neg(a):
    t = _tape(a)
    out = -value(a)
    if t is None:
        return out
    return t._node(out, [(a.idx, lambda g: -g)])


def mul(a, b):
    t = _tape(a, b)
    av, bv = value(a), value(b)
    out = av * bv
    if t is None:
        return out
    pairs = []
    if isinstance(a, Var):
        sa = np.shape(av)
        pairs.append((a.idx, lambda g: _unbroadcast(g * bv, sa)))
    if isinstance(b, Var):
        sb = np.shape(bv)
        pairs.append((b.idx, lambda g: _unbroadcast(g * av, sb)))
    return t._node(out, pairs)


def div(a, b):
    t = _tape(a, b)
    av, bv = value(a), value(b)
    out = av / bv
    if t is None:
        return out
    pairs = []
    if isinstance(a, Var):
        sa = np.shape(av)
        pairs.append((a.idx, lambda g: _unbroadcast(g / bv, sa)))
    if isinstance(b, Var):
        sb = np.shape(bv)
        pairs.append((b.idx, lambda g: _unbroadcast(-g * av / (bv * bv), sb)))
    return t._node(out, pairs)


def matmul(a, b):
    t = _tape(a, b)
    av, bv = value(a), value(b)
    out = av @ bv
    if t is None:
        return out
    pairs = []
    if isinstance(a, Var):
        if av.ndim == 2 and bv.ndim == 2:
            pairs.append((a.idx, lambda g: g @ bv.T))
        elif av.ndim == 2 and bv.ndim == 1:
            pairs.append((a.idx, lambda g: np.outer(g, bv)))
        elif av.ndim == 1 and bv.ndim == 2:
            pairs.append((a.idx, lambda g: bv @ g))
        else:  # vector . vector
            pairs.append((a.idx, lambda g: g * bv))
    if isinstance(b, Var):
        if bv.ndim == 2 and av.ndim == 2:
            pairs.append((b.idx, lambda g: av.T @ g))
        elif bv.ndim == 2 and av.ndim == 1:
            pairs.append((b.idx, lambda g: np.outer(av, g)))
        elif bv.ndim == 1 and av.ndim == 2:
            pairs.append((b.idx, lambda g: av.T @ g))
        else:
            pairs.append((b.idx, lambda g: g * av))
    return t._node(out, pairs)


def transpose(a):
    t = _tape(a)
    out = value(a).T
    if t is None:
        return out
    return t._node(out, [(a.idx, lambda g: np.asarray(g).T)])


def outer(a, b):
    t = _tape(a, b)
    av, bv = value(a), value(b)
    out = np.outer(av, bv)
    if t is None:
        return out
    pairs = []
    if isinstance(a, Var):
        pairs.append((a.idx, lambda g: g @ bv))
    if isinstance(b, Var):
        pairs.append((b.idx, lambda g: np.asarray(g).T @ av))
    return t._node(out, pairs)


def getitem(a, key):
    t = _tape(a)
    out = value(a)[key]
    if t is None:
        return out
    av = a.value

    def vjp(g):
        z = np.zeros_like(av)
        z[key] = g
        return z

    return t._node(out, [(a.idx, vjp)])


def concat(parts):
    """Concatenate 1-d pieces (scalars allowed) into one vector."""
    t = _tape(*parts)
    vals = [np.atleast_1d(np.asarray(value(p), dtype=np.float64)) for p in parts]
    out = np.concatenate(vals)
    if t is None:
        return out
    pairs = []
    off = 0
    for p, v in zip(parts, vals):
        size = v.size
        if isinstance(p, Var):
            shape = np.shape(p.value)
            lo, hi = off, off + size
            pairs.append((p.idx, lambda g, lo=lo, hi=hi, shape=shape: np.reshape(g[lo:hi], shape)))
        off += size
    return t._node(out, pairs)


def diag_embed(v):
    t = _tape(v)
    out = np.diag(value(v))
    if t is None:
        return out
    return t._node(out, [(v.idx, lambda g: np.diagonal(g).copy())])


def take_diag(m):
    t = _tape(m)
    out = np.diagonal(value(m)).copy()
    if t is None:
        return out
    return t._node(out, [(m.idx, lambda g: np.diag(g))])


def sym(a):
    """Symmetric part 0.5 * (a + a.T)."""
    t = _tape(a)
    av = value(a)
    out = 0.5 * (av + av.T)
    if t is None:
        return out
    return t._node(out, [(a.idx, lambda g: 0.5 * (np.asarray(g) + np.asarray(g).T))])


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    t = _tape(a)
    av = np.asarray(value(a), dtype=np.float64)
    out = _sigmoid(av)
    if t is None:
        return out
    return t._node(out, [(a.idx, lambda g: g * out * (1.0 - out))])


def tanh(a):
    t = _tape(a)
    out = np.tanh(value(a))
    if t is None:
        return out
    return t._node(out, [(a.idx, lambda g: g * (1.0 - out * out))])


def softplus(a):
    t = _tape(a)
    av = np.asarray(value(a), dtype=np.float64)
    out = np.logaddexp(0.0, av)
    if t is None:
        return out
    return t._node(out, [(a.idx, lambda g: g * _sigmoid(av))])


def exp(a):
    t = _tape(a)
    out = np.exp(value(a))
    if t is None:
        return out
    return t._node(out, [(a.idx, lambda g: g * out)])


def log(a):
    t = _tape(a)
    av = value(a)
    out = np.log(av)
    if t is None:
        return out
    return t._node(out, [(a.idx, lambda g: g / av)])


def sqrt(a):
    t = _tape(a)
    out = np.sqrt(value(a))
    if t is None:
        return out
    return t._node(out, [(a.idx, lambda g: g * 0.5 / out)])


def sumsq(a):
    """Sum of squared entries (squared Frobenius / Euclidean norm)."""
    t = _tape(a)
    av = np.asarray(value(a), dtype=np.float64)
    out = np.float64(np.sum(av * av))
    if t is None:
        return out
    return t._node(out, [(a.idx, lambda g: (2.0 * g) * av)])


def solve(a, b):
    """x with a @ x = b; adjoints da = -a^-T g x^T, db = a^-T g."""
    t = _tape(a, b)
    av, bv = value(a), value(b)
    x = np.linalg.solve(av, bv)
    if t is None:
        return x
    pairs = []

    def gb_of(g):
        return np.linalg.solve(av.T, g)

    if isinstance(b, Var):
        pairs.append((b.idx, gb_of))
    if isinstance(a, Var):
        if x.ndim == 1:
            pairs.append((a.idx, lambda g: -np.outer(gb_of(g), x)))
        else:
            pairs.append((a.idx, lambda g: -gb_of(g) @ x.T))
    return t._node(x, pairs)


def _project_value(s, eps):
    w, u = np.linalg.eigh(s)
    if w[0] >= eps:
        return s, w, u, False
    wc = np.maximum(w, eps)
    out = (u * wc) @ u.T
    return 0.5 * (out + out.T), w, u, True


def sym_project(a, eps):
    """Symmetrize then clamp eigenvalues to >= eps.

    Backward is the exact adjoint of the eigenvalue clamp: it reduces to
    plain symmetrization of the incoming gradient when nothing was clamped,
    and blocks the gradient along clamped eigendirections otherwise.
    """
    t = _tape(a)
    av = value(a)
    s = 0.5 * (av + av.T)
    out, w, u, clamped = _project_value(s, eps)
    if t is None:
        return out

    if not clamped:
        return t._node(out, [(a.idx, lambda g: 0.5 * (np.asarray(g) + np.asarray(g).T))])

    wc = np.maximum(w, eps)
    gprime = (w > eps).astype(np.float64)

    def vjp(g):
        gs = 0.5 * (np.asarray(g) + np.asarray(g).T)
        tmat = u.T @ gs @ u
        dw = w[:, None] - w[None, :]
        dn = wc[:, None] - wc[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            m = np.where(dw != 0.0, dn / dw, 0.5 * (gprime[:, None] + gprime[None, :]))
        ds = u @ (m * tmat) @ u.T
        return 0.5 * (ds + ds.T)

    return t._node(out, [(a.idx, vjp)])


def spectrum_floor(a, ref, frac):
    """Symmetrize ``a`` and clamp its eigenvalues to >= frac * min-eig(ref).

    Unlike :func:`sym_project` with a fixed eps, the floor here moves with
    ``ref`` (an SPD matrix that may itself carry gradients), so the adjoint
    propagates into both arguments: clamped directions of ``a`` stop their
    own gradient but forward the floor's sensitivity onto ``ref``'s minimal
    eigendirection.
    """
    t = _tape(a, ref)
    av, rv = value(a), value(ref)
    rs = 0.5 * (rv + rv.T)
    rw, ru = np.linalg.eigh(rs)
    eps = frac * rw[0]
    s = 0.5 * (av + av.T)
    out, w, u, clamped = _project_value(s, eps)
    if t is None:
        return out

    pairs = []
    if not clamped:
        if isinstance(a, Var):
            pairs.append((a.idx, lambda g: 0.5 * (np.asarray(g) + np.asarray(g).T)))
        return t._node(out, pairs)

    wc = np.maximum(w, eps)
    gprime = (w > eps).astype(np.float64)

    if isinstance(a, Var):
        def vjp_a(g):
            gs = 0.5 * (np.asarray(g) + np.asarray(g).T)
            tmat = u.T @ gs @ u
            dw = w[:, None] - w[None, :]
            dn = wc[:, None] - wc[None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                m = np.where(dw != 0.0, dn / dw, 0.5 * (gprime[:, None] + gprime[None, :]))
            ds = u @ (m * tmat) @ u.T
            return 0.5 * (ds + ds.T)

        pairs.append((a.idx, vjp_a))

    if isinstance(ref, Var):
        umin = ru[:, 0]
        dref_dir = 0.5 * frac * (np.outer(umin, umin) + np.outer(umin, umin).T)

        def vjp_ref(g):
            gs = 0.5 * (np.asarray(g) + np.asarray(g).T)
            sens = 0.0
            for i in range(len(w)):
                if w[i] < eps:
                    sens += float(u[:, i] @ gs @ u[:, i])
            return sens * dref_dir

        pairs.append((ref.idx, vjp_ref))
    return t._node(out, pairs)


def logchol2x2(a):
    """Log-Cholesky features (log L00, log L11, L10) of a 2x2 SPD matrix."""
    t = _tape(a)
    av = value(a)
    x00, x01, x11 = av[0, 0], av[0, 1], av[1, 1]
    if x00 <= 0.0:
        raise NotPositiveDefinite("2x2 matrix has non-positive leading entry")
    l00 = np.sqrt(x00)
    l10 = x01 / l00
    l11sq = x11 - l10 * l10
    if l11sq <= 0.0:
        raise NotPositiveDefinite("2x2 matrix has non-positive Schur complement")
    out = np.array([0.5 * np.log(x00), 0.5 * np.log(l11sq), l10])
    if t is None:
        return out

    def vjp(g):
        g0, g1, g2 = g[0], g[1], g[2]
        d = np.zeros((2, 2))
        d[0, 0] = g0 / (2.0 * x00) + g1 * (l10 * l10) / (2.0 * x00 * l11sq) - g2 * l10 / (2.0 * x00)
        d[0, 1] = -g1 * x01 / (x00 * l11sq) + g2 / l00
        d[1, 1] = g1 / (2.0 * l11sq)
        return d

    return t._node(out, [(a.idx, vjp)])


def grads_by_name(tape, grads, leaves: dict) -> dict:
    """Gradient arrays for a name -> leaf-Var mapping (zeros when unused)."""
    return {name: tape.grad(grads, var) for name, var in leaves.items()}
