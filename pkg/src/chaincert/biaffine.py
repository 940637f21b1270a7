"""Bi-affine maps: the parameter-bearing half of every layer.

A map ``b(x, u) = beta(x, u) + beta_u(u) + beta_x(x) + beta_0`` with ``beta``
bilinear and the other pieces affine.  Each part knows its exact operation
counts (one unit per scalar add or multiply of an applied stored operator)
and its own norm constants:

* ``L_b``   smoothness of the bilinear term,
* ``l_u``   norm of the parameter Jacobian at the origin,
* ``l_x``   norm of the state Jacobian at the origin,
* ``b00_norm`` / ``beta0_norm``  offset norms.

State layout is sample-major throughout: a batch of ``m`` samples with
per-sample dimension ``d`` is the C-order ravel of an ``(m, d)`` array, and
per-sample layout is ``(channels, spatial)`` for convolutional maps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, SymbolicOnlyError
from .tensor3 import operator_norm

__all__ = [
    "BiAffineConstants",
    "BiAffinePart",
    "DenseBiAffinePart",
    "FCPart",
    "ConvPart",
    "SymbolicConvPart",
    "IdentityPart",
    "ResidualPart",
]


def _charge(count, n: int) -> None:
    if count is not None and n:
        count.add(n)


@dataclass(frozen=True)
class BiAffineConstants:
    """Norm data of one bi-affine map, all plain nonnegative floats."""

    L_b: float
    l_u: float
    l_x: float
    b00_norm: float
    beta0_norm: float


class BiAffinePart:
    """Interface shared by all bi-affine maps.

    Subclasses set ``d_in``, ``d_out``, ``p`` and the four sparsity figures
    ``s_beta``, ``s_beta_u``, ``s_beta_x``, ``s_beta0`` (stored nonzeros of
    the bilinear, parameter-affine, state-affine and constant pieces).
    """

    d_in: int
    d_out: int
    p: int
    s_beta: int
    s_beta_u: int
    s_beta_x: int
    s_beta0: int
    second_order: bool = True

    def value(self, x: np.ndarray, u: np.ndarray, count=None) -> np.ndarray:
        raise NotImplementedError

    def vjp_x(self, u: np.ndarray, w: np.ndarray, count=None) -> np.ndarray:
        """Transposed state Jacobian applied to ``w``."""
        raise NotImplementedError

    def vjp_u(self, x: np.ndarray, w: np.ndarray, count=None) -> np.ndarray:
        """Transposed parameter Jacobian applied to ``w``."""
        raise NotImplementedError

    def jvp(self, x, u, dx, du, count=None) -> np.ndarray:
        """Directional derivative at ``(x, u)`` along ``(dx, du)``."""
        raise NotImplementedError

    def second_cross(self, w: np.ndarray) -> np.ndarray:
        """Cross second derivative contracted with ``w``, shape (d_in, p).

        The bilinear term is the only second-order piece of a bi-affine map;
        pure state-state and parameter-parameter blocks vanish.
        """
        raise NotImplementedError

    def dense_jx(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def dense_ju(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def constants(self) -> BiAffineConstants:
        raise NotImplementedError

    # shape guards -----------------------------------------------------

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d_in,):
            raise DimensionMismatch(
                f"{type(self).__name__}: state has shape {x.shape}, expected ({self.d_in},)")
        return x

    def _check_u(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.p,):
            raise DimensionMismatch(
                f"{type(self).__name__}: params have shape {u.shape}, expected ({self.p},)")
        return u

    def _check_w(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.d_out,):
            raise DimensionMismatch(
                f"{type(self).__name__}: cotangent has shape {w.shape}, expected ({self.d_out},)")
        return w


class DenseBiAffinePart(BiAffinePart):
    """Explicitly stored bi-affine map, mainly for small problems and tests.

    ``bil`` has shape (d_out, d_in, p); ``mu`` (d_out, p); ``mx``
    (d_out, d_in); ``b0`` (d_out,).  Operation counts charge one unit per
    stored nonzero of each applied piece.
    """

    def __init__(self, bil: np.ndarray, mu: Optional[np.ndarray] = None,
                 mx: Optional[np.ndarray] = None, b0: Optional[np.ndarray] = None):
        bil = np.asarray(bil, dtype=float)
        if bil.ndim != 3:
            raise DimensionMismatch(f"bilinear tensor must be rank 3, got shape {bil.shape}")
        self.bil = bil
        self.d_out, self.d_in, self.p = bil.shape
        self.mu = np.zeros((self.d_out, self.p)) if mu is None else np.asarray(mu, dtype=float)
        self.mx = np.zeros((self.d_out, self.d_in)) if mx is None else np.asarray(mx, dtype=float)
        self.b0 = np.zeros(self.d_out) if b0 is None else np.asarray(b0, dtype=float)
        if self.mu.shape != (self.d_out, self.p) or self.mx.shape != (self.d_out, self.d_in) \
                or self.b0.shape != (self.d_out,):
            raise DimensionMismatch("affine piece shapes do not match the bilinear tensor")
        self.s_beta = int(np.count_nonzero(bil))
        self.s_beta_u = int(np.count_nonzero(self.mu))
        self.s_beta_x = int(np.count_nonzero(self.mx))
        self.s_beta0 = int(np.count_nonzero(self.b0))

    def value(self, x, u, count=None):
        x, u = self._check_x(x), self._check_u(u)
        _charge(count, self.s_beta + self.s_beta_u + self.s_beta_x + self.s_beta0)
        return (np.einsum("kij,i,j->k", self.bil, x, u)
                + self.mu @ u + self.mx @ x + self.b0)

    def vjp_x(self, u, w, count=None):
        u, w = self._check_u(u), self._check_w(w)
        _charge(count, self.s_beta + self.s_beta_x)
        return np.einsum("kij,k,j->i", self.bil, w, u) + self.mx.T @ w

    def vjp_u(self, x, w, count=None):
        x, w = self._check_x(x), self._check_w(w)
        _charge(count, self.s_beta + self.s_beta_u)
        return np.einsum("kij,k,i->j", self.bil, w, x) + self.mu.T @ w

    def jvp(self, x, u, dx, du, count=None):
        x, u = self._check_x(x), self._check_u(u)
        dx, du = self._check_x(dx), self._check_u(du)
        _charge(count, 2 * self.s_beta + self.s_beta_u + self.s_beta_x)
        return (np.einsum("kij,i,j->k", self.bil, dx, u)
                + np.einsum("kij,i,j->k", self.bil, x, du)
                + self.mx @ dx + self.mu @ du)

    def second_cross(self, w):
        w = self._check_w(w)
        return np.einsum("kij,k->ij", self.bil, w)

    def dense_jx(self, u):
        u = self._check_u(u)
        return np.einsum("kij,j->ki", self.bil, u) + self.mx

    def dense_ju(self, x):
        x = self._check_x(x)
        return np.einsum("kij,i->kj", self.bil, x) + self.mu

    def constants(self):
        # Valid bilinear norm bound: min over the three unfoldings' spectral
        # norms, each of which dominates the (2,2,2) norm.
        t = self.bil
        cands = [
            operator_norm(t.reshape(self.d_out, -1)),
            operator_norm(np.moveaxis(t, 1, 0).reshape(self.d_in, -1)),
            operator_norm(np.moveaxis(t, 2, 0).reshape(self.p, -1)),
        ]
        return BiAffineConstants(
            L_b=min(cands),
            l_u=operator_norm(self.mu),
            l_x=operator_norm(self.mx),
            b00_norm=float(np.linalg.norm(self.b0)),
            beta0_norm=float(np.linalg.norm(self.b0)),
        )


class FCPart(BiAffinePart):
    """Batched fully-connected map: per sample ``x_s -> W x_s + bias``.

    Parameters are the C-order ravel of ``W`` with shape
    (out_features, in_features), followed by the bias if present.  The
    bilinear constant is exactly 1 and the bias replication across the batch
    gives ``l_u = sqrt(m)``.
    """

    def __init__(self, batch: int, in_features: int, out_features: int, bias: bool = True):
        if batch < 1 or in_features < 1 or out_features < 1:
            raise DimensionMismatch("fully-connected dimensions must be positive")
        self.m = batch
        self.nin = in_features
        self.nout = out_features
        self.bias = bias
        self.d_in = batch * in_features
        self.d_out = batch * out_features
        self.p = out_features * in_features + (out_features if bias else 0)
        self.s_beta = batch * out_features * in_features
        self.s_beta_u = batch * out_features if bias else 0
        self.s_beta_x = 0
        self.s_beta0 = 0

    def _split(self, u):
        w = u[: self.nout * self.nin].reshape(self.nout, self.nin)
        b = u[self.nout * self.nin:] if self.bias else np.zeros(self.nout)
        return w, b

    def value(self, x, u, count=None):
        x, u = self._check_x(x), self._check_u(u)
        W, b = self._split(u)
        _charge(count, self.s_beta + self.s_beta_u)
        return (x.reshape(self.m, self.nin) @ W.T + b).ravel()

    def vjp_x(self, u, w, count=None):
        u, w = self._check_u(u), self._check_w(w)
        W, _ = self._split(u)
        _charge(count, self.s_beta)
        return (w.reshape(self.m, self.nout) @ W).ravel()

    def vjp_u(self, x, w, count=None):
        x, w = self._check_x(x), self._check_w(w)
        xv = x.reshape(self.m, self.nin)
        wv = w.reshape(self.m, self.nout)
        _charge(count, self.s_beta + self.s_beta_u)
        gw = wv.T @ xv
        if self.bias:
            return np.concatenate([gw.ravel(), wv.sum(axis=0)])
        return gw.ravel()

    def jvp(self, x, u, dx, du, count=None):
        x, u = self._check_x(x), self._check_u(u)
        dx, du = self._check_x(dx), self._check_u(du)
        W, _ = self._split(u)
        dW, db = self._split(du)
        _charge(count, 2 * self.s_beta + self.s_beta_u)
        xv = x.reshape(self.m, self.nin)
        dxv = dx.reshape(self.m, self.nin)
        return (dxv @ W.T + xv @ dW.T + db).ravel()

    def second_cross(self, w):
        w = self._check_w(w)
        wv = w.reshape(self.m, self.nout)
        out = np.zeros((self.d_in, self.p))
        s = np.arange(self.m)[:, None, None]
        f = np.arange(self.nout)[None, :, None]
        l = np.arange(self.nin)[None, None, :]
        rows = s * self.nin + l
        cols = f * self.nin + l
        np.add.at(out, (np.broadcast_to(rows, (self.m, self.nout, self.nin)),
                        np.broadcast_to(cols, (self.m, self.nout, self.nin))),
                  wv[:, :, None])
        return out

    def dense_jx(self, u):
        u = self._check_u(u)
        W, _ = self._split(u)
        return np.kron(np.eye(self.m), W)

    def dense_ju(self, x):
        x = self._check_x(x)
        xv = x.reshape(self.m, self.nin)
        J = np.zeros((self.d_out, self.p))
        for s in range(self.m):
            for f in range(self.nout):
                row = s * self.nout + f
                J[row, f * self.nin:(f + 1) * self.nin] = xv[s]
                if self.bias:
                    J[row, self.nout * self.nin + f] = 1.0
        return J

    def constants(self):
        return BiAffineConstants(
            L_b=1.0,
            l_u=float(np.sqrt(self.m)) if self.bias else 0.0,
            l_x=0.0,
            b00_norm=0.0,
            beta0_norm=0.0,
        )


class ConvPart(BiAffinePart):
    """Batched cross-correlation over an explicit patch table.

    ``patches`` has shape (n_patches, patch_len) and lists, per output
    position, the flat spatial input indices it reads; this covers any
    dimensionality, stride and padding scheme that keeps indices in range.
    Parameters are the ravel of filters (n_filters, channels, patch_len),
    then the per-filter bias if present.
    """

    def __init__(self, batch: int, channels: int, spatial: int, patches: np.ndarray,
                 n_filters: int, bias: bool = False,
                 kernel_shape: tuple = (), stride: tuple = ()):
        patches = np.asarray(patches)
        if patches.ndim != 2 or not np.issubdtype(patches.dtype, np.integer):
            raise DimensionMismatch("patch table must be a 2-d integer array")
        if patches.size and (patches.min() < 0 or patches.max() >= spatial):
            raise DimensionMismatch("patch indices out of spatial range")
        self.m = batch
        self.C = channels
        self.n_sp = spatial
        self.patches = patches
        self.n_p, self.k_sp = patches.shape
        self.n_f = n_filters
        self.bias = bias
        self.kernel_shape = tuple(kernel_shape)
        self.stride = tuple(stride)
        self.d_in = batch * channels * spatial
        self.d_out = batch * n_filters * self.n_p
        self.p = n_filters * channels * self.k_sp + (n_filters if bias else 0)
        sf = channels * self.k_sp
        self.s_beta = batch * self.n_p * n_filters * sf
        self.s_beta_u = batch * n_filters * self.n_p if bias else 0
        self.s_beta_x = 0
        self.s_beta0 = 0

    def _split(self, u):
        nfil = self.n_f * self.C * self.k_sp
        F = u[:nfil].reshape(self.n_f, self.C, self.k_sp)
        b = u[nfil:] if self.bias else np.zeros(self.n_f)
        return F, b

    def _gather(self, x):
        return x.reshape(self.m, self.C, self.n_sp)[:, :, self.patches]

    def value(self, x, u, count=None):
        x, u = self._check_x(x), self._check_u(u)
        F, b = self._split(u)
        _charge(count, self.s_beta + self.s_beta_u)
        out = np.einsum("fck,mcpk->mfp", F, self._gather(x))
        if self.bias:
            out = out + b[None, :, None]
        return out.ravel()

    def vjp_x(self, u, w, count=None):
        u, w = self._check_u(u), self._check_w(w)
        F, _ = self._split(u)
        wv = w.reshape(self.m, self.n_f, self.n_p)
        _charge(count, self.s_beta)
        contrib = np.einsum("fck,mfp->mcpk", F, wv)
        gx = np.zeros((self.m, self.C, self.n_sp))
        np.add.at(gx, (slice(None), slice(None), self.patches), contrib)
        return gx.ravel()

    def vjp_u(self, x, w, count=None):
        x, w = self._check_x(x), self._check_w(w)
        wv = w.reshape(self.m, self.n_f, self.n_p)
        _charge(count, self.s_beta + self.s_beta_u)
        gF = np.einsum("mcpk,mfp->fck", self._gather(x), wv)
        if self.bias:
            return np.concatenate([gF.ravel(), wv.sum(axis=(0, 2))])
        return gF.ravel()

    def jvp(self, x, u, dx, du, count=None):
        x, u = self._check_x(x), self._check_u(u)
        dx, du = self._check_x(dx), self._check_u(du)
        F, _ = self._split(u)
        dF, db = self._split(du)
        _charge(count, 2 * self.s_beta + self.s_beta_u)
        out = (np.einsum("fck,mcpk->mfp", F, self._gather(dx))
               + np.einsum("fck,mcpk->mfp", dF, self._gather(x)))
        if self.bias:
            out = out + db[None, :, None]
        return out.ravel()

    def second_cross(self, w):
        w = self._check_w(w)
        wv = w.reshape(self.m, self.n_f, self.n_p)
        M = np.zeros((self.d_in, self.p))
        s = np.arange(self.m)[:, None, None]
        f = np.arange(self.n_f)[None, :, None]
        c = np.arange(self.C)[None, None, :]
        for pi in range(self.n_p):
            for k in range(self.k_sp):
                rows = (s * self.C + c) * self.n_sp + self.patches[pi, k]
                cols = (f * self.C + c) * self.k_sp + k
                np.add.at(M, (np.broadcast_to(rows, (self.m, self.n_f, self.C)),
                              np.broadcast_to(cols, (self.m, self.n_f, self.C))),
                          wv[:, :, pi][:, :, None])
        return M

    def dense_jx(self, u):
        u = self._check_u(u)
        F, _ = self._split(u)
        Js = np.zeros((self.n_f * self.n_p, self.C * self.n_sp))
        for pi in range(self.n_p):
            for k in range(self.k_sp):
                rows = np.arange(self.n_f) * self.n_p + pi
                cols = np.arange(self.C) * self.n_sp + self.patches[pi, k]
                Js[rows[:, None], cols[None, :]] += F[:, :, k]
        return np.kron(np.eye(self.m), Js)

    def dense_ju(self, x):
        x = self._check_x(x)
        xg = self._gather(x)
        J = np.zeros((self.d_out, self.p))
        for f in range(self.n_f):
            rows = (np.arange(self.m)[:, None] * self.n_f + f) * self.n_p \
                + np.arange(self.n_p)[None, :]
            cols = (f * self.C + np.arange(self.C)[:, None]) * self.k_sp \
                + np.arange(self.k_sp)[None, :]
            vals = xg.transpose(0, 2, 1, 3).reshape(self.m * self.n_p, self.C * self.k_sp)
            J[rows.ravel()[:, None], cols.ravel()[None, :]] = vals
            if self.bias:
                J[rows.ravel(), self.n_f * self.C * self.k_sp + f] = 1.0
        return J

    def constants(self):
        if self.patches.size:
            mult = int(np.bincount(self.patches.ravel(), minlength=self.n_sp).max())
        else:
            mult = 0
        return BiAffineConstants(
            L_b=float(np.sqrt(mult)),
            l_u=float(np.sqrt(self.m * self.n_p)) if self.bias else 0.0,
            l_x=0.0,
            b00_norm=0.0,
            beta0_norm=0.0,
        )


class SymbolicConvPart(BiAffinePart):
    """Convolution declared by hyperparameters only, without a patch table.

    Used for architectures whose stated patch counts do not correspond to a
    materialisable index table here (e.g. padded convolutions declared by
    output size alone).  Constants, dimensions and sparsity figures are
    available; numeric evaluation is not.
    """

    def __init__(self, batch: int, channels: int, spatial: int, n_patches: int,
                 kernel_shape: tuple, stride: tuple, n_filters: int, bias: bool = False):
        self.m = batch
        self.C = channels
        self.n_sp = spatial
        self.n_p = int(n_patches)
        self.kernel_shape = tuple(int(k) for k in kernel_shape)
        self.stride = tuple(int(s) for s in stride)
        if len(self.kernel_shape) != len(self.stride):
            raise DimensionMismatch("kernel and stride ranks differ")
        self.n_f = n_filters
        self.bias = bias
        self.k_sp = int(np.prod(self.kernel_shape)) if self.kernel_shape else 1
        self.d_in = batch * channels * spatial
        self.d_out = batch * n_filters * self.n_p
        self.p = n_filters * channels * self.k_sp + (n_filters if bias else 0)
        sf = channels * self.k_sp
        self.s_beta = batch * self.n_p * n_filters * sf
        self.s_beta_u = batch * n_filters * self.n_p if bias else 0
        self.s_beta_x = 0
        self.s_beta0 = 0

    def _no_numeric(self):
        raise SymbolicOnlyError(
            "this convolution is declared symbolically (patch count only); "
            "numeric evaluation needs an explicit patch table")

    def value(self, x, u, count=None):
        self._no_numeric()

    def vjp_x(self, u, w, count=None):
        self._no_numeric()

    def vjp_u(self, x, w, count=None):
        self._no_numeric()

    def jvp(self, x, u, dx, du, count=None):
        self._no_numeric()

    def second_cross(self, w):
        self._no_numeric()

    def dense_jx(self, u):
        self._no_numeric()

    def dense_ju(self, x):
        self._no_numeric()

    def constants(self):
        # A spatial position is read by at most ceil(k/s) windows per axis,
        # for any padding scheme.
        mult = 1
        for k, s in zip(self.kernel_shape, self.stride):
            mult *= -(-k // s)
        return BiAffineConstants(
            L_b=float(np.sqrt(mult)),
            l_u=float(np.sqrt(self.m * self.n_p)) if self.bias else 0.0,
            l_x=0.0,
            b00_norm=0.0,
            beta0_norm=0.0,
        )


class IdentityPart(BiAffinePart):
    """Parameter-free identity; carries pure-nonlinearity layers."""

    def __init__(self, dim: int):
        self.d_in = dim
        self.d_out = dim
        self.p = 0
        self.s_beta = 0
        self.s_beta_u = 0
        self.s_beta_x = 0
        self.s_beta0 = 0

    def value(self, x, u, count=None):
        x = self._check_x(x)
        self._check_u(u)
        return x.copy()

    def vjp_x(self, u, w, count=None):
        self._check_u(u)
        return self._check_w(w).copy()

    def vjp_u(self, x, w, count=None):
        self._check_x(x)
        self._check_w(w)
        return np.zeros(0)

    def jvp(self, x, u, dx, du, count=None):
        return self._check_x(dx).copy()

    def second_cross(self, w):
        self._check_w(w)
        return np.zeros((self.d_in, 0))

    def dense_jx(self, u):
        self._check_u(u)
        return np.eye(self.d_in)

    def dense_ju(self, x):
        self._check_x(x)
        return np.zeros((self.d_out, 0))

    def constants(self):
        return BiAffineConstants(L_b=0.0, l_u=0.0, l_x=1.0, b00_norm=0.0, beta0_norm=0.0)


class ResidualPart(BiAffinePart):
    """Skip wrapper around an inner part.

    Per sample, the input stacks the inner input ``x1`` and a carried block
    ``x2`` of the inner's per-sample output size; the output is
    ``(b(x1, u) + x2, x1)``, again stacked per sample so the state stays
    sample-major.  Routing additions are charged honestly, on top of the
    inner part's stored-operator figures.
    """

    def __init__(self, inner: BiAffinePart, batch: int):
        if inner.d_in % batch or inner.d_out % batch:
            raise DimensionMismatch("inner part dimensions must split over the batch")
        self.inner = inner
        self.m = batch
        self.da = inner.d_in // batch
        self.db = inner.d_out // batch
        self.d_in = inner.d_in + inner.d_out
        self.d_out = inner.d_out + inner.d_in
        self.p = inner.p
        self.s_beta = inner.s_beta
        self.s_beta_u = inner.s_beta_u
        self.s_beta_x = inner.s_beta_x
        self.s_beta0 = inner.s_beta0
        self.second_order = inner.second_order

    def _split_in(self, x):
        xv = x.reshape(self.m, self.da + self.db)
        return xv[:, : self.da].ravel(), xv[:, self.da:]

    def value(self, x, u, count=None):
        x = self._check_x(x)
        x1, x2 = self._split_in(x)
        top = self.inner.value(x1, u, count).reshape(self.m, self.db) + x2
        _charge(count, self.m * self.db)
        out = np.concatenate([top, x1.reshape(self.m, self.da)], axis=1)
        return out.ravel()

    def vjp_x(self, u, w, count=None):
        w = self._check_w(w)
        wv = w.reshape(self.m, self.db + self.da)
        w1 = wv[:, : self.db].ravel()
        g1 = self.inner.vjp_x(u, w1, count).reshape(self.m, self.da) + wv[:, self.db:]
        _charge(count, self.m * self.da)
        return np.concatenate([g1, wv[:, : self.db]], axis=1).ravel()

    def vjp_u(self, x, w, count=None):
        x, w = self._check_x(x), self._check_w(w)
        x1, _ = self._split_in(x)
        w1 = w.reshape(self.m, self.db + self.da)[:, : self.db].ravel()
        return self.inner.vjp_u(x1, w1, count)

    def jvp(self, x, u, dx, du, count=None):
        x, dx = self._check_x(x), self._check_x(dx)
        x1, _ = self._split_in(x)
        dx1, dx2 = self._split_in(dx)
        top = self.inner.jvp(x1, u, dx1, du, count).reshape(self.m, self.db) + dx2
        _charge(count, self.m * self.db)
        return np.concatenate([top, dx1.reshape(self.m, self.da)], axis=1).ravel()

    def _rows_x1(self):
        return (np.arange(self.m)[:, None] * (self.da + self.db)
                + np.arange(self.da)[None, :]).ravel()

    def _rows_x2(self):
        return (np.arange(self.m)[:, None] * (self.da + self.db)
                + self.da + np.arange(self.db)[None, :]).ravel()

    def _rows_top(self):
        return (np.arange(self.m)[:, None] * (self.db + self.da)
                + np.arange(self.db)[None, :]).ravel()

    def _rows_bot(self):
        return (np.arange(self.m)[:, None] * (self.db + self.da)
                + self.db + np.arange(self.da)[None, :]).ravel()

    def second_cross(self, w):
        w = self._check_w(w)
        w1 = w.reshape(self.m, self.db + self.da)[:, : self.db].ravel()
        out = np.zeros((self.d_in, self.p))
        out[self._rows_x1()] = self.inner.second_cross(w1)
        return out

    def dense_jx(self, u):
        J = np.zeros((self.d_out, self.d_in))
        J[np.ix_(self._rows_top(), self._rows_x1())] = self.inner.dense_jx(u)
        J[self._rows_top(), self._rows_x2()] += 1.0
        J[self._rows_bot(), self._rows_x1()] = 1.0
        return J

    def dense_ju(self, x):
        x = self._check_x(x)
        x1, _ = self._split_in(x)
        J = np.zeros((self.d_out, self.p))
        J[self._rows_top()] = self.inner.dense_ju(x1)
        return J

    def constants(self):
        c = self.inner.constants()
        # The state Jacobian at the origin stacks the inner one with two
        # identity blocks; its norm is at most l_x + 1.
        return BiAffineConstants(
            L_b=c.L_b,
            l_u=c.l_u,
            l_x=c.l_x + 1.0,
            b00_norm=c.b00_norm,
            beta0_norm=c.beta0_norm,
        )
