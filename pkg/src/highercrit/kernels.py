"""Hot numeric kernels: banded Cholesky, banded triangular solves, refit rows.

Each kernel has a numba implementation (``*_nb``) and a NumPy/SciPy one
(``*_np``); the public names dispatch on :func:`highercrit.backend.numba_enabled`.

Banded storage convention (LAPACK lower form): ``ab[k, i] == A[i + k, i]``
for ``0 <= k <= w``, where ``w`` is the number of sub-diagonals. The Cholesky
factor L of A = L L' is returned in the same layout.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .backend import HAVE_NUMBA, njit, numba_enabled


class NotPositiveDefiniteError(ValueError):
    """Cholesky breakdown; ``minor`` is the 1-based order of the failing minor."""

    def __init__(self, message: str, minor: int | None = None):
        super().__init__(message)
        self.minor = minor


class SingularRowError(ValueError):
    """A refit row system A_i eta = xi_i was singular; ``row`` names i."""

    def __init__(self, message: str, row: int):
        super().__init__(message)
        self.row = row


# ---------------------------------------------------------------------------
# banded Cholesky
# ---------------------------------------------------------------------------


def _banded_cholesky_loops(ab):
    p = ab.shape[1]
    w = ab.shape[0] - 1
    c = ab.copy()
    for j in range(p):
        s = c[0, j]
        kmax = min(w, j)
        for k in range(1, kmax + 1):
            s -= c[k, j - k] * c[k, j - k]
        if s <= 0.0:
            return c, j + 1
        c[0, j] = np.sqrt(s)
        imax = min(w, p - 1 - j)
        for i in range(1, imax + 1):
            s2 = c[i, j]
            for k in range(1, min(w - i, j) + 1):
                s2 -= c[k + i, j - k] * c[k, j - k]
            c[i, j] = s2 / c[0, j]
    return c, 0


if HAVE_NUMBA:
    _banded_cholesky_jit = njit(cache=True, nogil=True)(_banded_cholesky_loops)


def banded_cholesky_nb(ab: np.ndarray) -> np.ndarray:
    c, info = _banded_cholesky_jit(np.ascontiguousarray(ab, dtype=np.float64))
    if info:
        raise NotPositiveDefiniteError(
            f"banded Cholesky failed at leading minor {info}", minor=info
        )
    return c


def banded_cholesky_np(ab: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.cholesky_banded(ab, lower=True)
    except scipy.linalg.LinAlgError as exc:
        minor = None
        msg = str(exc)
        for tok in msg.replace("-", " ").split():
            if tok.isdigit():
                minor = int(tok)
                break
        raise NotPositiveDefiniteError(msg, minor=minor) from exc


def banded_cholesky(ab: np.ndarray) -> np.ndarray:
    """Cholesky factor (lower banded layout) of an SPD banded matrix."""
    if numba_enabled():
        return banded_cholesky_nb(ab)
    return banded_cholesky_np(ab)


# ---------------------------------------------------------------------------
# banded triangular solves (multiple right-hand sides)
# ---------------------------------------------------------------------------


def _solve_banded_lower_loops(c, b):
    p, m = b.shape
    w = c.shape[0] - 1
    x = np.empty_like(b)
    for j in range(p):
        kmax = min(w, j)
        d = c[0, j]
        for t in range(m):
            s = b[j, t]
            for k in range(1, kmax + 1):
                s -= c[k, j - k] * x[j - k, t]
            x[j, t] = s / d
    return x


def _solve_banded_lower_t_loops(c, b):
    p, m = b.shape
    w = c.shape[0] - 1
    x = np.empty_like(b)
    for j in range(p - 1, -1, -1):
        kmax = min(w, p - 1 - j)
        d = c[0, j]
        for t in range(m):
            s = b[j, t]
            for k in range(1, kmax + 1):
                s -= c[k, j] * x[j + k, t]
            x[j, t] = s / d
    return x


if HAVE_NUMBA:
    _solve_banded_lower_jit = njit(cache=True, nogil=True)(_solve_banded_lower_loops)
    _solve_banded_lower_t_jit = njit(cache=True, nogil=True)(_solve_banded_lower_t_loops)


def _as_2d(b):
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 1:
        return np.ascontiguousarray(b[:, None]), True
    return np.ascontiguousarray(b), False


def solve_banded_lower_nb(c, b):
    b2, squeeze = _as_2d(b)
    x = _solve_banded_lower_jit(np.ascontiguousarray(c), b2)
    return x[:, 0] if squeeze else x


def solve_banded_lower_t_nb(c, b):
    b2, squeeze = _as_2d(b)
    x = _solve_banded_lower_t_jit(np.ascontiguousarray(c), b2)
    return x[:, 0] if squeeze else x


def solve_banded_lower_np(c, b):
    w = c.shape[0] - 1
    return scipy.linalg.solve_banded((w, 0), c, b)


def solve_banded_lower_t_np(c, b):
    # L' is upper banded; rebuild it in (0, w) storage for scipy.
    w = c.shape[0] - 1
    p = c.shape[1]
    ub = np.zeros_like(c)
    for k in range(w + 1):
        ub[w - k, k:] = c[k, : p - k]
    return scipy.linalg.solve_banded((0, w), ub, b)


def solve_banded_lower(c, b):
    """Solve L x = b with L the banded Cholesky factor."""
    if numba_enabled():
        return solve_banded_lower_nb(c, b)
    return solve_banded_lower_np(c, b)


def solve_banded_lower_t(c, b):
    """Solve L' x = b with L the banded Cholesky factor."""
    if numba_enabled():
        return solve_banded_lower_t_nb(c, b)
    return solve_banded_lower_t_np(c, b)


# ---------------------------------------------------------------------------
# refit row solves
# ---------------------------------------------------------------------------


def _refit_rows_loops(sigma, mask):
    # For each row i: S_i = {j : mask[i, j]}, A = sigma[S_i, S_i],
    # solve A eta = e_i|S_i by Gaussian elimination with partial pivoting.
    p = sigma.shape[0]
    out = np.zeros((p, p))
    for i in range(p):
        idx = np.where(mask[i])[0]
        k = idx.size
        a = np.empty((k, k))
        scale = 0.0
        for r in range(k):
            for s in range(k):
                v = sigma[idx[r], idx[s]]
                a[r, s] = v
                if abs(v) > scale:
                    scale = abs(v)
        rhs = np.zeros(k)
        for r in range(k):
            if idx[r] == i:
                rhs[r] = 1.0
        tol = 1e-13 * scale * k if scale > 0.0 else 0.0
        # forward elimination
        ok = True
        for col in range(k):
            piv = col
            big = abs(a[col, col])
            for r in range(col + 1, k):
                if abs(a[r, col]) > big:
                    big = abs(a[r, col])
                    piv = r
            if big <= tol:
                ok = False
                break
            if piv != col:
                for s in range(k):
                    a[col, s], a[piv, s] = a[piv, s], a[col, s]
                rhs[col], rhs[piv] = rhs[piv], rhs[col]
            for r in range(col + 1, k):
                f = a[r, col] / a[col, col]
                if f != 0.0:
                    for s in range(col, k):
                        a[r, s] -= f * a[col, s]
                    rhs[r] -= f * rhs[col]
        if not ok:
            return out, i
        for col in range(k - 1, -1, -1):
            s = rhs[col]
            for r in range(col + 1, k):
                s -= a[col, r] * rhs[r]
            rhs[col] = s / a[col, col]
        for r in range(k):
            out[i, idx[r]] = rhs[r]
    return out, -1


if HAVE_NUMBA:
    _refit_rows_jit = njit(cache=True, nogil=True)(_refit_rows_loops)


def refit_rows_nb(sigma, mask):
    out, bad = _refit_rows_jit(
        np.ascontiguousarray(sigma, dtype=np.float64), np.ascontiguousarray(mask)
    )
    if bad >= 0:
        raise SingularRowError(f"singular restricted system in row {bad}", row=bad)
    return out


def refit_rows_np(sigma, mask):
    p = sigma.shape[0]
    out = np.zeros((p, p))
    for i in range(p):
        idx = np.flatnonzero(mask[i])
        a = sigma[np.ix_(idx, idx)]
        rhs = (idx == i).astype(np.float64)
        try:
            eta = np.linalg.solve(a, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularRowError(
                f"singular restricted system in row {i}", row=i
            ) from exc
        out[i, idx] = eta
    return out


def refit_rows(sigma, mask):
    """Per-row restricted inverse columns: row i solves sigma[S_i,S_i] eta = e_i|S_i."""
    if numba_enabled():
        return refit_rows_nb(sigma, mask)
    return refit_rows_np(sigma, mask)
