"""Identifiability metrics: affine-fit R^2 and mean correlation coefficient."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PreconditionError, ShapeError, UndefinedCorrelationError
from .linalg import least_squares


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError("pearson needs two 1-D vectors of equal length")
    if x.size < 2:
        raise PreconditionError("pearson needs at least two observations")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx == 0 or sy == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant series")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def correlation_matrix(a, b) -> np.ndarray:
    """Pearson correlations ``C[i, j] = corr(a[:, i], b[:, j])``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"cannot correlate shapes {a.shape} and {b.shape}")
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    sa = np.sqrt(np.sum(ac * ac, axis=0))
    sb = np.sqrt(np.sum(bc * bc, axis=0))
    for name, s in (("z_true", sa), ("z_hat", sb)):
        bad = np.flatnonzero(s == 0)
        if bad.size:
            raise UndefinedCorrelationError(f"{name} column {int(bad[0])} is constant")
    return np.clip((ac.T @ bc) / np.outer(sa, sb), -1.0, 1.0)


def linear_sum_assignment(cost, maximize: bool = False) -> np.ndarray:
    """Optimal assignment for a square cost matrix.

    Shortest augmenting paths with dual potentials (the O(n^3) Hungarian
    method). Returns ``perm`` such that row ``i`` is assigned column
    ``perm[i]``.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ShapeError(f"assignment needs a square matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise PreconditionError("assignment cost must be finite")
    if maximize:
        c = -c
    n = c.shape[0]
    # 1-based potentials/matching; column 0 is the virtual root
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=np.intp)
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cols = np.flatnonzero(free) + 1
            cur = c[i0 - 1, cols - 1] - u[i0] - v[cols]
            better = cur < minv[cols]
            minv[cols[better]] = cur[better]
            way[cols[better]] = j0
            j1 = cols[np.argmin(minv[cols])]
            delta = minv[j1]
            u[match[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.intp)
    for j in range(1, n + 1):
        perm[match[j] - 1] = j - 1
    return perm


@dataclass(frozen=True)
class R2Result:
    value: float
    rank_deficient: bool


def r_squared_detail(z_true, z_hat) -> R2Result:
    """Affine fit ``z_hat ~ A z_true + c``; R^2 against deviations of ``z_hat``
    from its own mean."""
    z_true = np.asarray(z_true, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    if z_true.ndim != 2 or z_hat.ndim != 2 or z_true.shape[0] != z_hat.shape[0]:
        raise ShapeError(f"r_squared needs conforming matrices, got {z_true.shape} and {z_hat.shape}")
    n, d = z_true.shape
    if n <= d + 1:
        raise PreconditionError("r_squared needs more rows than latent dims + 1")
    fit = least_squares(z_true, z_hat)
    resid = z_hat - fit.predict(z_true)
    dev = z_hat - z_hat.mean(axis=0)
    total = float(np.sum(dev * dev))
    if total == 0:
        raise UndefinedCorrelationError("z_hat is constant; R^2 is undefined")
    return R2Result(1.0 - float(np.sum(resid * resid)) / total, fit.rank_deficient)


def r_squared(z_true, z_hat) -> float:
    return r_squared_detail(z_true, z_hat).value


def mcc(z_true, z_hat):
    """Mean absolute Pearson correlation under the optimal one-to-one
    matching of true and estimated components.

    Returns ``(mcc, assignment, signed_corr)`` where ``assignment[i]`` is the
    column of ``z_hat`` matched to true component ``i``.
    """
    z_true = np.asarray(z_true, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    if z_true.shape[0] < 3:
        raise PreconditionError("mcc needs at least three rows")
    if z_true.shape[1] != z_hat.shape[1]:
        raise ShapeError("mcc needs the same number of true and estimated components")
    corr = correlation_matrix(z_true, z_hat)
    perm = linear_sum_assignment(np.abs(corr), maximize=True)
    value = float(np.mean(np.abs(corr[np.arange(len(perm)), perm])))
    return value, perm, corr


@dataclass
class EvalReport:
    r2: float
    mcc: float
    assignment: np.ndarray
    signed_corr: np.ndarray
    final_loss: float = float("nan")
    r2_t: float | None = None
    mcc_t: float | None = None
    rank_deficient: bool = False
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "r2": self.r2,
            "mcc": self.mcc,
            "r2_t": self.r2_t,
            "mcc_t": self.mcc_t,
            "final_loss": self.final_loss,
            "assignment": [int(i) for i in self.assignment],
            "signed_corr": self.signed_corr.tolist(),
            "rank_deficient": self.rank_deficient,
            "meta": self.meta,
        }

    def save_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def evaluate_run(dataset, pair, final_loss: float = float("nan"), symmetric: bool = False, meta=None) -> EvalReport:
    """Encode ``dataset.X`` and score it against the true ``dataset.Zx``."""
    from .contrastive import encode

    zh = encode(pair, "x", dataset.X)
    r2 = r_squared_detail(dataset.Zx, zh)
    value, perm, corr = mcc(dataset.Zx, zh)
    rep = EvalReport(r2.value, value, perm, corr, final_loss, rank_deficient=r2.rank_deficient, meta=dict(meta or {}))
    if symmetric:
        zt = encode(pair, "t", dataset.T)
        rep.r2_t = r_squared(dataset.Zt, zt)
        rep.mcc_t = mcc(dataset.Zt, zt)[0]
    return rep
