"""Independent oracles and builders shared by the test suite.

Everything here is deliberately written with different algorithms from the
package under test: Jacobi SVD instead of LAPACK-backed norms, direct
nested-loop convolution instead of gathered einsums, componentwise central
differences instead of reverse mode.  These are the reference values the
tests freeze against.
"""

from __future__ import annotations

import numpy as np

import chaincert as cc


# ---------------------------------------------------------------- linear algebra

def jacobi_largest_sv(mat: np.ndarray, sweeps: int = 60) -> float:
    """Largest singular value via one-sided Jacobi rotations.

    Orthogonalizes column pairs of a working copy until convergence; the
    largest column norm is then the largest singular value.
    """
    a = np.atleast_2d(np.asarray(mat, dtype=float)).copy()
    if a.size == 0:
        return 0.0
    if a.shape[0] < a.shape[1]:
        a = a.T.copy()
    n = a.shape[1]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p] @ a[:, q]
                app = a[:, p] @ a[:, p]
                aqq = a[:, q] @ a[:, q]
                off = max(off, abs(apq) / max(np.sqrt(app * aqq), 1e-300))
                if abs(apq) < 1e-15 * np.sqrt(app * aqq + 1e-300):
                    continue
                zeta = (aqq - app) / (2.0 * apq)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                ap = a[:, p].copy()
                a[:, p] = c * ap - s * a[:, q]
                a[:, q] = s * ap + c * a[:, q]
        if off < 1e-14:
            break
    return float(np.sqrt(max((a * a).sum(axis=0).max(), 0.0)))


def fd_grad(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Componentwise central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = eps
        g.flat[i] = (fn(x + e) - fn(x - e)) / (2.0 * eps)
    return g


def fd_jacobian(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Componentwise central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = eps
        cols.append((fn(x + e) - fn(x - e)) / (2.0 * eps))
    return np.stack(cols, axis=-1)


def flat(u: cc.ParamVector) -> np.ndarray:
    return np.concatenate([b for b in u.blocks]) if u.dim else np.zeros(0)


def unflat(dims, vec: np.ndarray) -> cc.ParamVector:
    return cc.ParamVector.from_flat(tuple(dims), np.asarray(vec, dtype=float))


# ---------------------------------------------------------------- hand convolution

def direct_conv(x, weights, patches, channels, spatial, bias=None):
    """Direct nested-loop 'im2col-free' convolution per sample.

    ``x`` is (m, channels*spatial) sample-major, ``weights`` is
    (filters, channels, k); returns (m, filters*n_patches) sample-major.
    """
    x = np.asarray(x, dtype=float)
    m = x.shape[0]
    nf, nc, k = weights.shape
    npat = patches.shape[0]
    out = np.zeros((m, nf, npat))
    for s in range(m):
        xim = x[s].reshape(channels, spatial)
        for f in range(nf):
            for p in range(npat):
                acc = 0.0
                for c in range(channels):
                    for j in range(k):
                        acc += weights[f, c, j] * xim[c, patches[p, j]]
                if bias is not None:
                    acc += bias[f]
                out[s, f, p] = acc
    return out.reshape(m, nf * npat)


# ---------------------------------------------------------------- chain builders

def random_catalog_chain(rng, tau=None, dim_max=8, smooth_only=True,
                         batch=None, with_softmax=False):
    """Random chain out of catalogue layers at toy dimensions."""
    tau = int(tau if tau is not None else rng.integers(1, 5))
    m = int(batch if batch is not None else rng.integers(1, 4))
    smooth_acts = ["softplus", "sigmoid", "softplus-centered", "identity"]
    acts = smooth_acts if smooth_only else smooth_acts + ["relu"]
    layers = []
    # image head with probability 1/2, otherwise flat
    if rng.random() < 0.5:
        C = int(rng.integers(1, 3))
        H = W = int(rng.integers(3, 5))
        k = 2
        f = int(rng.integers(1, 3))
        layers.append(cc.conv2d(m, C, H, W, f, k, stride=1,
                                activation=str(rng.choice(acts)),
                                bias=bool(rng.random() < 0.5)))
        oh, ow = H - k + 1, W - k + 1
        if rng.random() < 0.5:
            pool = cc.avgpool2d if smooth_only or rng.random() < 0.5 else cc.maxpool2d
            layers.append(pool(m, f, oh, ow, 2, stride=1))
            oh, ow = oh - 1, ow - 1
        feat = f * oh * ow
    else:
        feat = int(rng.integers(2, dim_max + 1))
    while len(layers) < tau:
        left = tau - len(layers)
        r = rng.random()
        if r < 0.2 and left >= 1:
            layers.append(cc.batchnorm_layer(m, feat, float(rng.uniform(0.05, 1.0))))
        elif r < 0.35 and left >= 1:
            layers.append(cc.activation_layer(m, feat, str(rng.choice(acts))))
        else:
            out = int(rng.integers(2, dim_max + 1))
            layers.append(cc.fully_connected(m, feat, out,
                                             activation=str(rng.choice(acts)),
                                             bias=bool(rng.random() < 0.7)))
            feat = out
    if with_softmax:
        layers.append(cc.softmax_layer(m, feat))
    return cc.ChainSpec(tuple(layers))


def chain_objective_instance(rng, kind="squared", tau=2, width=4, batch=1):
    """Small smooth chain plus a matching objective and sampled point."""
    layers = []
    feat = width
    for t in range(tau):
        act = "softplus" if t + 1 < tau else "identity"
        layers.append(cc.fully_connected(batch, feat, width, activation=act,
                                         bias=True))
        feat = width
    chain = cc.ChainSpec(tuple(layers))
    u = cc.sample_params(chain.param_dims, 1.0, rng)
    x0 = cc.sample_state(chain.d0, 1.0, rng)
    q = chain.d_out // batch
    if kind == "squared":
        h = cc.Objective("squared", batch, q, rng.standard_normal((batch, q)))
    else:
        y = np.zeros((batch, q))
        y[np.arange(batch), rng.integers(0, q, size=batch)] = 1.0
        h = cc.Objective("logistic", batch, q, y)
    return chain, u, x0, h


# ---------------------------------------------------------------- closed forms

def cluster_two_points(yhat: np.ndarray):
    """Closed-form convex clustering for n = 2 points in R^q.

    Minimizes 0.5*||y - yhat||^2 + ||y1 - y2||.  With d = yhat1 - yhat2 the
    difference shrinks to max(||d|| - 2, 0); value and gradient follow.
    """
    y1, y2 = yhat[0], yhat[1]
    d = y1 - y2
    nd = float(np.linalg.norm(d))
    if nd <= 2.0:
        val = 0.25 * nd * nd
        grad = np.stack([0.5 * d, -0.5 * d])
    else:
        val = nd - 1.0
        dh = d / nd
        grad = np.stack([dh, -dh])
    return val, grad
