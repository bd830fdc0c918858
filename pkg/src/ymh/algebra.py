"""Structure-group kernels for so(r) and its defining representation.

Conventions used throughout the package:

* algebra elements are real antisymmetric r x r matrices with the trace
  pairing <a, b> = 1/2 Tr(a^T b);
* fiber vectors live in R^r with the pairing <u, w> = 1/2 u.w, which is the
  normalization under which <mu(u, p), m> = -<p, m u> holds exactly;
* every kernel broadcasts over leading axes, so a stack of elements of shape
  (..., r, r) or vectors of shape (..., r) is handled in one call.
"""
from __future__ import annotations

import numpy as np

ANTISYM_TOL = 1e-13


class AlgebraError(ValueError):
    pass


def inner(a, b):
    """<a, b> = 1/2 Tr(a^T b) over the trailing two axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-2:] != b.shape[-2:]:
        raise AlgebraError(f"dimension mismatch: {a.shape[-2:]} vs {b.shape[-2:]}")
    return 0.5 * np.sum(a * b, axis=(-2, -1))


def norm2(a):
    return inner(a, a)


def fiber_inner(u, w):
    """<u, w> = 1/2 u.w on the fiber R^r."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if u.shape[-1] != w.shape[-1]:
        raise AlgebraError(f"dimension mismatch: {u.shape[-1]} vs {w.shape[-1]}")
    return 0.5 * np.sum(u * w, axis=-1)


def fiber_norm2(u):
    return fiber_inner(u, u)


def outer(u, p):
    """u (x) p^*, i.e. the matrix u p^T."""
    return np.asarray(u, dtype=float)[..., :, None] * np.asarray(p, dtype=float)[..., None, :]


def mu(u, p):
    """1/2 (u (x) p^* - p (x) u^*), an so(r) element."""
    u = np.asarray(u, dtype=float)
    p = np.asarray(p, dtype=float)
    if u.shape[-1] != p.shape[-1]:
        raise AlgebraError(f"dimension mismatch: {u.shape[-1]} vs {p.shape[-1]}")
    m = outer(u, p)
    return 0.5 * (m - np.swapaxes(m, -1, -2))


def bracket(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-2:] != b.shape[-2:]:
        raise AlgebraError(f"dimension mismatch: {a.shape[-2:]} vs {b.shape[-2:]}")
    return a @ b - b @ a


def apply(a, u):
    """Action of an so(r) element on a fiber vector."""
    a = np.asarray(a, dtype=float)
    u = np.asarray(u, dtype=float)
    if a.shape[-1] != u.shape[-1]:
        raise AlgebraError(f"dimension mismatch: {a.shape[-1]} vs {u.shape[-1]}")
    return np.einsum("...ij,...j->...i", a, u)


def is_antisymmetric(a, tol=ANTISYM_TOL):
    a = np.asarray(a, dtype=float)
    return bool(np.all(np.abs(a + np.swapaxes(a, -1, -2)) <= tol))


def antisym(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a - np.swapaxes(a, -1, -2))


def basis(r: int = 3) -> np.ndarray:
    """Orthonormal basis of so(r) for the trace pairing: E_ij - E_ji, i < j."""
    out = []
    for i in range(r):
        for j in range(i + 1, r):
            m = np.zeros((r, r))
            m[i, j] = 1.0
            m[j, i] = -1.0
            out.append(m)
    return np.array(out)


def so3_generators() -> np.ndarray:
    """L_a with (L_a)_bc = -eps_abc, so [L_a, L_b] = eps_abc L_c and L_a e_b = eps_abc e_c."""
    eps = np.zeros((3, 3, 3))
    for (a, b, c), s in {(0, 1, 2): 1, (1, 2, 0): 1, (2, 0, 1): 1,
                         (0, 2, 1): -1, (2, 1, 0): -1, (1, 0, 2): -1}.items():
        eps[a, b, c] = s
    return -eps


_L = so3_generators()


def hat(x):
    """R^3 -> so(3), x -> sum x_a L_a (so hat(x) v = x cross v)."""
    return np.einsum("...a,abc->...bc", np.asarray(x, dtype=float), _L)


def vee(m):
    """Inverse of hat on so(3)."""
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def random_element(rng: np.random.Generator, r: int = 3, size=()) -> np.ndarray:
    size = (size,) if isinstance(size, int) else tuple(size)
    return antisym(rng.standard_normal(size + (r, r)))


def expm_so(a):
    """Matrix exponential of a stack of so(r) elements (result in SO(r))."""
    from scipy.linalg import expm

    a = np.asarray(a, dtype=float)
    if a.ndim == 2:
        return expm(a)
    flat = a.reshape(-1, a.shape[-2], a.shape[-1])
    if a.shape[-1] == 3:
        return _rodrigues(flat).reshape(a.shape)
    return np.array([expm(m) for m in flat]).reshape(a.shape)


def _rodrigues(a):
    w = vee(a)
    th = np.linalg.norm(w, axis=-1)
    small = th < 1e-8
    ths = np.where(small, 1.0, th)
    s = np.where(small, 1.0 - th**2 / 6.0, np.sin(ths) / ths)
    c = np.where(small, 0.5 - th**2 / 24.0, (1.0 - np.cos(ths)) / ths**2)
    eye = np.eye(3)
    return eye + s[:, None, None] * a + c[:, None, None] * (a @ a)
