"""Dense real linear algebra: products, Jacobi eigen/SVD, least squares.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The
factorizations are implemented here with Jacobi rotations applied in
round-robin (parallel) order, so each sweep is a sequence of vectorized
updates over disjoint index pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, ShapeError

SYMMETRY_TOL = 1e-9
MAX_SWEEPS = 60
RANK_RTOL = 1e-12
COND_RTOL = 1e-14


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _round_robin(n: int):
    """Yield rounds of disjoint (p, q) index arrays covering all pairs once.

    Classic tournament schedule: with an even number of players, player 0 is
    fixed and the rest rotate. A dummy player pads odd ``n``.
    """
    m = n + (n % 2)
    players = list(range(m))
    for _ in range(m - 1):
        ps, qs = [], []
        for k in range(m // 2):
            p, q = players[k], players[m - 1 - k]
            if p < n and q < n:
                ps.append(min(p, q))
                qs.append(max(p, q))
        yield np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)
        players = [players[0], players[-1]] + players[1:-1]


def _offdiag_norm(a: np.ndarray) -> float:
    off = a - np.diag(np.diag(a))
    return float(np.sqrt(np.sum(off * off)))


def _rotation_tangent(theta: np.ndarray) -> np.ndarray:
    """Smaller root of ``t^2 + 2 theta t - 1 = 0``; ``1/(2 theta)`` when huge."""
    big = np.abs(theta) > 1e150
    th = np.where(big, 1.0, theta)
    t = np.sign(th) / (np.abs(th) + np.sqrt(th * th + 1.0))
    t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
    return np.where(theta == 0, 1.0, t)


def sym_eig(s, tol: float = 1e-15, max_sweeps: int = MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues sorted in
    descending order and eigenvectors stored as columns. Each eigenvector is
    signed so that its largest-magnitude entry is positive.
    """
    a = as_matrix(s, "s")
    n, m = a.shape
    if n != m:
        raise ShapeError(f"sym_eig needs a square matrix, got {a.shape}")
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if scale > 0 and np.max(np.abs(a - a.T)) > SYMMETRY_TOL * max(scale, 1.0):
        raise ShapeError("sym_eig needs a symmetric matrix")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n > 1 and scale > 0:
        rounds = list(_round_robin(n))
        total = np.linalg.norm(a)
        for _ in range(max_sweeps):
            if _offdiag_norm(a) <= tol * total:
                break
            for p, q in rounds:
                apq = a[p, q]
                active = np.abs(apq) > 1e-300
                if not active.any():
                    continue
                p, q, apq = p[active], q[active], apq[active]
                t = _rotation_tangent((a[q, q] - a[p, p]) / (2.0 * apq))
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c[:, None] * rp - sn[:, None] * rq
                a[q, :] = sn[:, None] * rp + c[:, None] * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = cp * c - cq * sn
                a[:, q] = cp * sn + cq * c
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = vp * c - vq * sn
                v[:, q] = vp * sn + vq * c
        else:
            if _offdiag_norm(a) > tol * total * 1e3:
                raise ConvergenceError(f"Jacobi eigen did not converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    return w, _fix_signs(v)


def _fix_signs(cols: np.ndarray) -> np.ndarray:
    if cols.size == 0:
        return cols
    idx = np.argmax(np.abs(cols), axis=0)
    signs = np.sign(cols[idx, np.arange(cols.shape[1])])
    signs[signs == 0] = 1.0
    return cols * signs


def _complete_orthonormal(u: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace columns of ``u`` not flagged in ``keep`` with an orthonormal
    completion of the kept ones."""
    m, k = u.shape
    basis = [u[:, j] for j in range(k) if keep[j]]
    out = u.copy()
    cand = iter(np.eye(m).T)
    for j in range(k):
        if keep[j]:
            continue
        while True:
            e = next(cand).copy()
            for b in basis:
                e -= (b @ e) * b
            for b in basis:
                e -= (b @ e) * b
            nrm = np.linalg.norm(e)
            if nrm > 1e-8:
                e /= nrm
                break
        basis.append(e)
        out[:, j] = e
    return out


def svd(m, tol: float = 1e-15, max_sweeps: int = MAX_SWEEPS):
    """Thin SVD by one-sided (Hestenes) Jacobi.

    Returns ``(U, sigma, V)`` with ``m = U @ diag(sigma) @ V.T``, singular
    values descending and nonnegative, ``U`` of shape (rows, k) and ``V`` of
    shape (cols, k) where ``k = min(rows, cols)``.
    """
    a = as_matrix(m, "m")
    rows, cols = a.shape
    if rows < cols:
        v, s, u = svd(a.T, tol=tol, max_sweeps=max_sweeps)
        return u, s, v
    u = a.copy()
    v = np.eye(cols)
    if cols > 1:
        rounds = list(_round_robin(cols))
        for _ in range(max_sweeps):
            worst = 0.0
            for p, q in rounds:
                up, uq = u[:, p], u[:, q]
                alpha = np.einsum("ij,ij->j", up, up)
                beta = np.einsum("ij,ij->j", uq, uq)
                gamma = np.einsum("ij,ij->j", up, uq)
                denom = np.sqrt(alpha * beta)
                with np.errstate(invalid="ignore", divide="ignore"):
                    rel = np.where(denom > 0, np.abs(gamma) / denom, 0.0)
                worst = max(worst, float(rel.max(initial=0.0)))
                active = rel > tol
                if not active.any():
                    continue
                p, q = p[active], q[active]
                alpha, beta, gamma = alpha[active], beta[active], gamma[active]
                t = _rotation_tangent((beta - alpha) / (2.0 * gamma))
                c = 1.0 / np.sqrt(1.0 + t * t)
                sn = c * t
                up, uq = u[:, p].copy(), u[:, q].copy()
                u[:, p] = up * c - uq * sn
                u[:, q] = up * sn + uq * c
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = vp * c - vq * sn
                v[:, q] = vp * sn + vq * c
            if worst <= tol:
                break
        else:
            raise ConvergenceError(f"one-sided Jacobi SVD did not converge in {max_sweeps} sweeps")
    sigma = np.linalg.norm(u, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, u, v = sigma[order], u[:, order], v[:, order]
    smax = sigma[0] if sigma.size else 0.0
    keep = sigma > max(smax * 1e-14, 1e-300)
    u = np.where(keep, u / np.where(keep, sigma, 1.0), 0.0)
    if not keep.all():
        u = _complete_orthonormal(u, keep)
    return u, sigma, v


def condition_number(m) -> float:
    a = as_matrix(m, "m")
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"condition_number needs a square matrix, got {a.shape}")
    _, s, _ = svd(a)
    if s[-1] < COND_RTOL * s[0] or s[0] == 0:
        return float("inf")
    return float(s[0] / s[-1])


def clamp_singular_values(m, lo: float, hi: float) -> np.ndarray:
    """Rebuild ``m`` with its singular values clipped into ``[lo, hi]``."""
    u, s, v = svd(m)
    return (u * np.clip(s, lo, hi)) @ v.T


@dataclass(frozen=True)
class LeastSquaresFit:
    """Affine least-squares fit ``y ~ [x, 1] @ coef``.

    ``coef`` has shape (p + 1, q); its last row is the intercept.
    """

    coef: np.ndarray
    rank: int
    rank_deficient: bool

    @property
    def slopes(self) -> np.ndarray:
        return self.coef[:-1]

    @property
    def intercept(self) -> np.ndarray:
        return self.coef[-1]

    def predict(self, x) -> np.ndarray:
        x = as_matrix(x, "x")
        return x @ self.coef[:-1] + self.coef[-1]


def least_squares(x, y) -> LeastSquaresFit:
    """Fit ``y`` on ``x`` plus a constant column through a pseudo-inverse
    built from the Jacobi SVD; rank deficiency is reported, not raised."""
    x = as_matrix(x, "x")
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"x has {x.shape[0]} rows, y has {y.shape[0]}")
    n, p = x.shape
    design = np.hstack([x, np.ones((n, 1))])
    u, s, v = svd(design)
    cutoff = RANK_RTOL * max(design.shape) * (s[0] if s.size else 0.0)
    keep = s > cutoff
    rank = int(keep.sum())
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    coef = v @ (inv[:, None] * (u.T @ y))
    return LeastSquaresFit(coef=coef, rank=rank, rank_deficient=rank < p + 1)
