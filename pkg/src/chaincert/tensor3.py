"""Dense order-3 tensors with the contraction and norm calculus used throughout.

Conventions. A tensor ``T`` of dims ``(d, n, p)`` is a list of ``p`` matrices of
shape ``(d, n)``; contracting with vectors/matrices follows

    T[P, Q, R] = (sum_k R[k, 1] P^T A_k Q, ..., sum_k R[k, p'] P^T A_k Q),

where a hole (``None``) stands for the identity. Flat rules: contracting a slot
with a vector removes that axis, so ``T[x, y, None]`` is the length-p vector of
``x^T A_k y`` and ``T[None, None, z]`` is the matrix ``sum_k z_k A_k``.

Gradients in this package follow the transpose-of-Jacobian convention: for
``f: R^n -> R^m``, ``grad f`` has shape ``(n, m)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Matrix = np.ndarray  # 2-D float array; kept as a plain ndarray on purpose


@dataclass(frozen=True)
class Tensor3:
    """Order-3 tensor stored as ``slices[k] = A_k`` with shape ``(p, d, n)``."""

    slices: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.slices, dtype=float)
        if arr.ndim != 3:
            raise ValueError(f"Tensor3 needs a (p, d, n) array, got ndim={arr.ndim}")
        object.__setattr__(self, "slices", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        p, d, n = self.slices.shape
        return (d, n, p)

    @classmethod
    def zero(cls, d: int, n: int, p: int) -> "Tensor3":
        return cls(np.zeros((p, d, n)))

    @classmethod
    def outer(cls, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> "Tensor3":
        """Rank-one tensor x ⊠ y ⊠ z with (x ⊠ y ⊠ z)[a, b, c] = (x·a)(y·b)(z·c)."""
        x, y, z = (np.asarray(v, dtype=float) for v in (x, y, z))
        return cls(np.einsum("k,i,j->kij", z, x, y))

    def transpose_xy(self) -> "Tensor3":
        """Swap the first two axes (each slice transposed)."""
        return Tensor3(np.transpose(self.slices, (0, 2, 1)))

    def bilinear(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """T[x, y, None] as a length-p vector."""
        return np.einsum("kij,i,j->k", self.slices, x, y)

    def weighted_slice(self, z: np.ndarray) -> np.ndarray:
        """T[None, None, z] = sum_k z_k A_k as a (d, n) matrix."""
        return np.einsum("kij,k->ij", self.slices, z)


def _as_slot(v):
    if v is None:
        return None, None
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 1:
        return "vec", arr
    if arr.ndim == 2:
        return "mat", arr
    raise ValueError("contraction slots take a vector, a matrix, or None")


def tensor_contract(t: Tensor3, p=None, q=None, r=None):
    """Contract ``t`` against up to three slots, with ``None`` meaning identity.

    Vector slots flatten their axis away; matrix slots compose. The result is a
    scalar, vector, matrix, or Tensor3 depending on how many axes survive. A
    surviving pair of axes is returned as a plain matrix when exactly one axis
    was flattened by a vector.
    """
    kp, P = _as_slot(p)
    kq, Q = _as_slot(q)
    kr, R = _as_slot(r)
    arr = t.slices  # (p, d, n)
    d_dim, n_dim, p_dim = t.dims
    for kind, M, axis_len, name in ((kp, P, d_dim, "p"), (kq, Q, n_dim, "q"), (kr, R, p_dim, "r")):
        if kind is not None and M.shape[0] != axis_len:
            raise ValueError(f"slot {name}: leading dim {M.shape[0]} != tensor axis {axis_len}")

    # Contract in index form; vector slots drop the axis, matrix slots keep it.
    out = arr
    if kr == "vec":
        out = np.einsum("kij,k->ij", out, R)[None, :, :]  # keep layout, mark axis dead
        r_alive = False
    elif kr == "mat":
        out = np.einsum("kij,kl->lij", out, R)
        r_alive = True
    else:
        r_alive = True

    if kp == "vec":
        out = np.einsum("kij,i->kj", out, P)[:, None, :]
        p_alive = False
    elif kp == "mat":
        out = np.einsum("kij,il->klj", out, P)
        p_alive = True
    else:
        p_alive = True

    if kq == "vec":
        out = np.einsum("kij,j->ki", out, Q)[:, :, None]
        q_alive = False
    elif kq == "mat":
        out = np.einsum("kij,jl->kil", out, Q)
        q_alive = True
    else:
        q_alive = True

    alive = (p_alive, q_alive, r_alive)
    if alive == (True, True, True):
        return Tensor3(out)
    if alive == (False, False, False):
        return float(out[0, 0, 0])
    if alive == (True, False, False):
        return out[0, :, 0]  # length d'
    if alive == (False, True, False):
        return out[0, 0, :]  # length n'
    if alive == (False, False, True):
        return out[:, 0, 0]  # length p'
    if alive == (True, True, False):
        return out[0]  # (d', n')
    if alive == (True, False, True):
        return out[:, :, 0].T  # (d', p')
    return out[:, 0, :].T  # (n', p')


def operator_norm(m: Matrix) -> float:
    """Largest singular value ‖m‖_{2,2}."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        return 0.0
    return float(np.linalg.norm(m, 2))


def tensor_norm_222(
    t: Tensor3,
    restarts: int = 100,
    tol: float = 1e-10,
    max_iter: int = 200,
    seed: int = 0,
) -> tuple[float, bool]:
    """Best value of T[x,y,z]/(‖x‖‖y‖‖z‖) found by alternating maximization.

    Returns ``(value, certified)``. When one axis is trivial the norm reduces
    to a matrix operator norm and the value is exact (certified=True);
    otherwise it is a heuristic lower bound on the true ‖T‖_{2,2,2}
    (certified=False). Restarts draw fresh random unit z's.
    """
    arr = t.slices
    d_dim, n_dim, p_dim = t.dims
    if p_dim == 1:
        return operator_norm(arr[0]), True
    if d_dim == 1:
        # T[x,y,z] = x * z^T M y with M[k, j] = A_k[0, j]
        return operator_norm(arr[:, 0, :]), True
    if n_dim == 1:
        return operator_norm(arr[:, :, 0]), True

    best = 0.0
    rng = np.random.default_rng(seed)
    for _ in range(max(1, restarts)):
        z = rng.standard_normal(p_dim)
        z /= np.linalg.norm(z)
        prev = -np.inf
        for _ in range(max_iter):
            mz = np.einsum("kij,k->ij", arr, z)
            u, s, vt = np.linalg.svd(mz)
            if s[0] <= 0:
                break
            x, y = u[:, 0], vt[0]
            zy = np.einsum("kij,i,j->k", arr, x, y)
            nz = np.linalg.norm(zy)
            if nz == 0:
                break
            z = zy / nz
            val = nz  # = T[x, y, z] at the updated z
            if val - prev <= tol * max(1.0, val):
                prev = val
                break
            prev = val
        if np.isfinite(prev):
            best = max(best, prev)
    return float(best), False
