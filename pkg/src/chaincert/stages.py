"""Nonlinear layer stages: the a_t in phi_t = a_t o b_t, possibly composed.

A stage maps the full (batch-inclusive) state to the next one. Per-sample
stages act on contiguous per-sample blocks; batch-norm couples the batch.

Cost accounting: applying a stored operator is charged one unit per nonzero
of that operator (a multiply-accumulate ceiling), and a scalar nonlinearity
one unit per coordinate. Structured shortcuts may execute fewer scalar ops
than they are charged; the charge is the cost model the counters report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import ScalarActivation
from .errors import DimensionMismatch, SecondOrderUnavailable


@dataclass(frozen=True)
class StageConstants:
    """Global constants of a stage as a map between full states.

    m_a: sup ||a(z)|| (inf when unbounded); lip: Lipschitz bound; smooth:
    gradient-Lipschitz bound; a0_norm: ||a(0)||; slope0: upper bound on the
    operator norm of the Jacobian at 0.
    """

    m_a: float
    lip: float
    smooth: float
    a0_norm: float
    slope0: float


class StageLin:
    """Linearization of a stage at a point: adjoint/forward products."""

    def vjp(self, lam, count=None):  # grad(a) @ lam, input-dim result
        raise NotImplementedError

    def jvp(self, dz, count=None):  # Jacobian @ dz, output-dim result
        raise NotImplementedError

    def dense_jacobian(self):  # (out, in); for second-order work at toy dims
        raise NotImplementedError

    def hess_contract(self, lam):  # sum_k lam_k hess(a_k), (in, in)
        raise NotImplementedError


class Stage:
    in_total: int
    out_total: int
    second_order: bool
    name: str

    def value(self, z, count=None):
        raise NotImplementedError

    def linearize(self, z) -> StageLin:
        raise NotImplementedError

    def constants(self) -> StageConstants:
        raise NotImplementedError

    def grad_sparsity(self) -> int:
        """Nonzero count of the stored Jacobian operator (the s_a figure)."""
        raise NotImplementedError

    def _check(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.in_total,):
            raise DimensionMismatch(
                f"stage {self.name}: expected ({self.in_total},), got {z.shape}"
            )
        return z


def _charge(count, n):
    if count is not None:
        count.add(n)


# ---------------------------------------------------------------------------
# element-wise activations


class ElementwiseStage(Stage):
    def __init__(self, act: ScalarActivation, dim_total: int):
        self.act = act
        self.in_total = self.out_total = int(dim_total)
        self.second_order = act.second_order
        self.name = act.name

    def value(self, z, count=None):
        z = self._check(z)
        _charge(count, self.in_total)
        return self.act.fn(z)

    def linearize(self, z):
        z = self._check(z)
        return _ElementwiseLin(self, z)

    def constants(self) -> StageConstants:
        n = self.in_total
        rootn = float(np.sqrt(n))
        a = self.act
        return StageConstants(
            m_a=a.bound * rootn if np.isfinite(a.bound) else np.inf,
            lip=a.lip,
            smooth=a.smooth,
            a0_norm=abs(a.val0) * rootn,
            slope0=a.slope0,
        )

    def grad_sparsity(self) -> int:
        return self.in_total


class _ElementwiseLin(StageLin):
    def __init__(self, stage: ElementwiseStage, z):
        self.stage = stage
        self.z = z
        self.d1 = stage.act.d1(z)

    def vjp(self, lam, count=None):
        _charge(count, self.stage.in_total)
        return self.d1 * lam

    def jvp(self, dz, count=None):
        _charge(count, self.stage.in_total)
        return self.d1 * dz

    def dense_jacobian(self):
        return np.diag(self.d1)

    def hess_contract(self, lam):
        if not self.stage.second_order:
            raise SecondOrderUnavailable(
                f"stage {self.stage.name} has no second derivative"
            )
        return np.diag(self.stage.act.d2(self.z) * lam)


# ---------------------------------------------------------------------------
# softmax, per sample


class SoftmaxStage(Stage):
    def __init__(self, batch: int, classes: int):
        self.batch = int(batch)
        self.classes = int(classes)
        self.in_total = self.out_total = self.batch * self.classes
        self.second_order = True
        self.name = "softmax"

    def _rows(self, z):
        return z.reshape(self.batch, self.classes)

    def value(self, z, count=None):
        z = self._check(z)
        rows = self._rows(z)
        shifted = rows - rows.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=1, keepdims=True)
        _charge(count, 2 * self.in_total)
        return out.ravel()

    def linearize(self, z):
        s = self._rows(self.value(z))
        return _SoftmaxLin(self, s)

    def constants(self) -> StageConstants:
        m, q = self.batch, self.classes
        return StageConstants(
            m_a=float(np.sqrt(m)),
            lip=2.0,
            smooth=4.0,
            a0_norm=float(np.sqrt(m / q)),
            slope0=1.0 / q,
        )

    def grad_sparsity(self) -> int:
        return self.batch * self.classes**2


class _SoftmaxLin(StageLin):
    def __init__(self, stage: SoftmaxStage, s):
        self.stage = stage
        self.s = s  # (batch, q) softmax rows

    def _apply(self, v, count):
        # (diag(s) - s s^T) v, symmetric so vjp == jvp
        _charge(count, self.stage.grad_sparsity())
        rows = v.reshape(self.stage.batch, self.stage.classes)
        sv = (self.s * rows).sum(axis=1, keepdims=True)
        return (self.s * rows - self.s * sv).ravel()

    def vjp(self, lam, count=None):
        return self._apply(lam, count)

    def jvp(self, dz, count=None):
        return self._apply(dz, count)

    def dense_jacobian(self):
        m, q = self.stage.batch, self.stage.classes
        out = np.zeros((m * q, m * q))
        for i in range(m):
            s = self.s[i]
            out[i * q : (i + 1) * q, i * q : (i + 1) * q] = np.diag(s) - np.outer(s, s)
        return out

    def hess_contract(self, lam):
        m, q = self.stage.batch, self.stage.classes
        rows = lam.reshape(m, q)
        out = np.zeros((m * q, m * q))
        eye = np.eye(q)
        for i in range(m):
            s, lm = self.s[i], rows[i]
            block = -float(s @ lm) * (np.diag(s) - np.outer(s, s))
            diff = eye - s[None, :]  # row k is (e_k - s)^T
            block += (diff.T * (lm * s)) @ diff
            out[i * q : (i + 1) * q, i * q : (i + 1) * q] = block
        return out


# ---------------------------------------------------------------------------
# pooling, per sample and channel


class _PoolBase(Stage):
    def __init__(self, batch: int, channels: int, spatial_in: int, patches: np.ndarray):
        patches = np.asarray(patches, dtype=int)
        if patches.ndim != 2:
            raise DimensionMismatch("patch index set must be (n_out, patch_size)")
        if patches.size and (patches.min() < 0 or patches.max() >= spatial_in):
            raise DimensionMismatch("patch indices out of range")
        self.batch = int(batch)
        self.channels = int(channels)
        self.spatial_in = int(spatial_in)
        self.patches = patches
        self.n_out, self.patch_size = patches.shape
        self.in_total = self.batch * self.channels * self.spatial_in
        self.out_total = self.batch * self.channels * self.n_out

    def _view(self, z):
        return z.reshape(self.batch, self.channels, self.spatial_in)


class AvgPoolStage(_PoolBase):
    second_order = True
    name = "avgpool"

    def value(self, z, count=None):
        z = self._check(z)
        _charge(count, self.out_total * self.patch_size)
        return self._view(z)[:, :, self.patches].mean(axis=-1).ravel()

    def linearize(self, z):
        self._check(z)
        return _AvgPoolLin(self)

    def constants(self) -> StageConstants:
        # treated as a nonexpansive projection; slope-at-zero kept at the
        # Lipschitz bound 1 (a valid upper bound on the true 1/sqrt(patch))
        return StageConstants(m_a=np.inf, lip=1.0, smooth=0.0, a0_norm=0.0, slope0=1.0)

    def grad_sparsity(self) -> int:
        return self.out_total * self.patch_size


class _AvgPoolLin(StageLin):
    def __init__(self, stage: AvgPoolStage):
        self.stage = stage

    def vjp(self, lam, count=None):
        st = self.stage
        _charge(count, st.grad_sparsity())
        out = np.zeros((st.batch, st.channels, st.spatial_in))
        contrib = lam.reshape(st.batch, st.channels, st.n_out) / st.patch_size
        np.add.at(
            out,
            (slice(None), slice(None), st.patches),
            contrib[:, :, :, None],
        )
        return out.ravel()

    def jvp(self, dz, count=None):
        st = self.stage
        _charge(count, st.grad_sparsity())
        return st._view(dz)[:, :, st.patches].mean(axis=-1).ravel()

    def dense_jacobian(self):
        st = self.stage
        j_sp = np.zeros((st.n_out, st.spatial_in))
        for k, pat in enumerate(st.patches):
            for idx in pat:
                j_sp[k, idx] += 1.0 / st.patch_size
        return np.kron(np.eye(st.batch * st.channels), j_sp)

    def hess_contract(self, lam):
        n = self.stage.in_total
        return np.zeros((n, n))


class MaxPoolStage(_PoolBase):
    second_order = False
    name = "maxpool"

    def value(self, z, count=None):
        z = self._check(z)
        _charge(count, self.out_total)
        return self._view(z)[:, :, self.patches].max(axis=-1).ravel()

    def linearize(self, z):
        z = self._check(z)
        gathered = self._view(z)[:, :, self.patches]
        # argmax returns the first maximum: ties break toward lowest index
        arg = gathered.argmax(axis=-1)
        winners = self.patches[np.arange(self.n_out)[None, None, :], arg]
        return _MaxPoolLin(self, winners)

    def constants(self) -> StageConstants:
        return StageConstants(m_a=np.inf, lip=1.0, smooth=np.inf, a0_norm=0.0, slope0=1.0)

    def grad_sparsity(self) -> int:
        return self.out_total


class _MaxPoolLin(StageLin):
    def __init__(self, stage: MaxPoolStage, winners):
        self.stage = stage
        self.winners = winners  # (batch, channels, n_out) input spatial index

    def vjp(self, lam, count=None):
        st = self.stage
        _charge(count, st.out_total)
        out = np.zeros((st.batch, st.channels, st.spatial_in))
        contrib = lam.reshape(st.batch, st.channels, st.n_out)
        b_idx = np.arange(st.batch)[:, None, None]
        c_idx = np.arange(st.channels)[None, :, None]
        np.add.at(out, (b_idx, c_idx, self.winners), contrib)
        return out.ravel()

    def jvp(self, dz, count=None):
        st = self.stage
        _charge(count, st.out_total)
        view = st._view(dz)
        b_idx = np.arange(st.batch)[:, None, None]
        c_idx = np.arange(st.channels)[None, :, None]
        return view[b_idx, c_idx, self.winners].ravel()

    def dense_jacobian(self):
        st = self.stage
        out = np.zeros((st.out_total, st.in_total))
        flat_w = self.winners.reshape(st.batch * st.channels, st.n_out)
        for bc in range(st.batch * st.channels):
            for k in range(st.n_out):
                out[bc * st.n_out + k, bc * st.spatial_in + flat_w[bc, k]] = 1.0
        return out

    def hess_contract(self, lam):
        raise SecondOrderUnavailable("maxpool has no second derivative")


# ---------------------------------------------------------------------------
# batch normalization (couples the batch)


class BatchNormStage(Stage):
    """Center each feature over the batch, then scale rows to sigma^2/(sigma^2+eps).

    State layout is per-sample blocks; internally rows are features across the
    batch. No learned scale/offset.
    """

    second_order = True
    name = "batchnorm"

    def __init__(self, batch: int, features: int, eps: float):
        if not eps > 0:
            raise ValueError("batch-norm eps must be positive")
        self.batch = int(batch)
        self.features = int(features)
        self.eps = float(eps)
        self.in_total = self.out_total = self.batch * self.features

    def _rows(self, z):
        # (features, batch): row i = feature i across samples
        return z.reshape(self.batch, self.features).T

    def value(self, z, count=None):
        z = self._check(z)
        _charge(count, self.grad_sparsity())
        x = self._rows(z)
        xc = x - x.mean(axis=1, keepdims=True)
        f = np.sqrt(self.eps + (xc**2).sum(axis=1) / self.batch)
        return (xc / f[:, None]).T.ravel()

    def linearize(self, z):
        z = self._check(z)
        x = self._rows(z)
        xc = x - x.mean(axis=1, keepdims=True)
        f = np.sqrt(self.eps + (xc**2).sum(axis=1) / self.batch)
        return _BatchNormLin(self, xc, f)

    def constants(self) -> StageConstants:
        m, eps = self.batch, self.eps
        return StageConstants(
            m_a=float(self.features * m),
            lip=2.0 / np.sqrt(eps),
            smooth=2.0 / (np.sqrt(m) * eps),
            a0_norm=0.0,
            slope0=1.0 / np.sqrt(eps),
        )

    def grad_sparsity(self) -> int:
        return self.features * self.batch**2


class _BatchNormLin(StageLin):
    def __init__(self, stage: BatchNormStage, xc, f):
        self.stage = stage
        self.xc = xc  # (features, batch), centered
        self.f = f  # (features,)

    def _center(self, rows):
        return rows - rows.mean(axis=1, keepdims=True)

    def _g_apply(self, rows):
        # per row: (I/f - x x^T/(m f^3)) v   (symmetric)
        m = self.stage.batch
        inner = (self.xc * rows).sum(axis=1, keepdims=True)
        return rows / self.f[:, None] - self.xc * inner / (m * self.f**3)[:, None]

    def vjp(self, lam, count=None):
        _charge(count, self.stage.grad_sparsity())
        rows = self.stage._rows(lam)
        return self._center(self._g_apply(rows)).T.ravel()

    def jvp(self, dz, count=None):
        _charge(count, self.stage.grad_sparsity())
        rows = self.stage._rows(dz)
        return self._g_apply(self._center(rows)).T.ravel()

    def dense_jacobian(self):
        st = self.stage
        m, d = st.batch, st.features
        P = np.eye(m) - np.ones((m, m)) / m
        out = np.zeros((m * d, m * d))
        for i in range(d):
            x = self.xc[i]
            f = self.f[i]
            Jg = np.eye(m) / f - np.outer(x, x) / (m * f**3)
            idx = np.arange(m) * d + i
            out[np.ix_(idx, idx)] = Jg @ P
        return out

    def hess_contract(self, lam):
        st = self.stage
        m, d = st.batch, st.features
        P = np.eye(m) - np.ones((m, m)) / m
        rows = st._rows(lam)
        out = np.zeros((m * d, m * d))
        eye = np.eye(m)
        for i in range(d):
            x, lm, f = self.xc[i], rows[i], self.f[i]
            xl = float(x @ lm)
            H = 3.0 * xl * np.outer(x, x) / (m**2 * f**5)
            H -= (np.outer(x, lm) + np.outer(lm, x) + xl * eye) / (m * f**3)
            idx = np.arange(m) * d + i
            out[np.ix_(idx, idx)] = P @ H @ P
        return out


# ---------------------------------------------------------------------------
# residual pass-through wrapper


class BlockStage(Stage):
    """Apply an inner stage to the leading block of each sample, pass the rest.

    Realizes the augmented activation of the residual reformulation:
    a_bar(w1, w2) = (a(w1), w2).
    """

    def __init__(self, inner: Stage, batch: int, pass_per_sample: int):
        self.inner = inner
        self.batch = int(batch)
        self.pass_dim = int(pass_per_sample)
        if inner.in_total % self.batch or inner.out_total % self.batch:
            raise DimensionMismatch("inner stage dims must split over the batch")
        self.inner_in = inner.in_total // self.batch
        self.inner_out = inner.out_total // self.batch
        self.in_total = self.batch * (self.inner_in + self.pass_dim)
        self.out_total = self.batch * (self.inner_out + self.pass_dim)
        self.second_order = inner.second_order
        self.name = f"residual({inner.name})"

    def _split(self, z, per_sample_left):
        view = z.reshape(self.batch, -1)
        return view[:, :per_sample_left].ravel(), view[:, per_sample_left:].ravel()

    @staticmethod
    def _join(left, right, batch):
        lv = left.reshape(batch, -1)
        rv = right.reshape(batch, -1)
        return np.concatenate([lv, rv], axis=1).ravel()

    def value(self, z, count=None):
        z = self._check(z)
        left, right = self._split(z, self.inner_in)
        return self._join(self.inner.value(left, count), right, self.batch)

    def linearize(self, z):
        z = self._check(z)
        left, _ = self._split(z, self.inner_in)
        return _BlockLin(self, self.inner.linearize(left))

    def constants(self) -> StageConstants:
        c = self.inner.constants()
        return StageConstants(
            m_a=np.inf,
            lip=max(1.0, c.lip),
            smooth=c.smooth,
            a0_norm=c.a0_norm,
            slope0=max(1.0, c.slope0),
        )

    def grad_sparsity(self) -> int:
        return self.inner.grad_sparsity() + self.batch * self.pass_dim


class _BlockLin(StageLin):
    def __init__(self, stage: BlockStage, inner_lin: StageLin):
        self.stage = stage
        self.inner_lin = inner_lin

    def vjp(self, lam, count=None):
        st = self.stage
        left, right = st._split(lam, st.inner_out)
        _charge(count, st.batch * st.pass_dim)
        return st._join(self.inner_lin.vjp(left, count), right, st.batch)

    def jvp(self, dz, count=None):
        st = self.stage
        left, right = st._split(dz, st.inner_in)
        _charge(count, st.batch * st.pass_dim)
        return st._join(self.inner_lin.jvp(left, count), right, st.batch)

    def dense_jacobian(self):
        st = self.stage
        jin = self.inner_lin.dense_jacobian()
        out = np.zeros((st.out_total, st.in_total))
        for s in range(st.batch):
            ri = s * (st.inner_in + st.pass_dim)
            ro = s * (st.inner_out + st.pass_dim)
            for s2 in range(st.batch):
                ci = s2 * (st.inner_in + st.pass_dim)
                out[ro : ro + st.inner_out, ci : ci + st.inner_in] = jin[
                    s * st.inner_out : (s + 1) * st.inner_out,
                    s2 * st.inner_in : (s2 + 1) * st.inner_in,
                ]
            out[
                ro + st.inner_out : ro + st.inner_out + st.pass_dim,
                ri + st.inner_in : ri + st.inner_in + st.pass_dim,
            ] = np.eye(st.pass_dim)
        return out

    def hess_contract(self, lam):
        st = self.stage
        left, _ = st._split(lam, st.inner_out)
        hin = self.inner_lin.hess_contract(left)
        out = np.zeros((st.in_total, st.in_total))
        per = st.inner_in + st.pass_dim
        for s in range(st.batch):
            for s2 in range(st.batch):
                out[
                    s * per : s * per + st.inner_in,
                    s2 * per : s2 * per + st.inner_in,
                ] = hin[
                    s * st.inner_in : (s + 1) * st.inner_in,
                    s2 * st.inner_in : (s2 + 1) * st.inner_in,
                ]
        return out
