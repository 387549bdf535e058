"""PCA/whitening and symmetric FastICA for any embedding matrix."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PreconditionError, ShapeError
from .linalg import sym_eig
from .matio import load_matrix, save_matrix
from .rand import RngState


class Nonlinearity(str, enum.Enum):
    LOGCOSH = "logcosh"
    CUBE = "cube"


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # k x D, orthonormal rows
    eigenvalues: np.ndarray
    whiten: bool

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def in_dim(self) -> int:
        return self.components.shape[1]

    def transform(self, data) -> np.ndarray:
        data = _as_data(data, self.in_dim)
        out = (data - self.mean) @ self.components.T
        if self.whiten:
            out = out / np.sqrt(self.eigenvalues)
        return out

    def inverse_transform(self, scores) -> np.ndarray:
        scores = np.asarray(scores, dtype=np.float64)
        if self.whiten:
            scores = scores * np.sqrt(self.eigenvalues)
        return scores @ self.components + self.mean


@dataclass
class IcaModel:
    unmixing: np.ndarray  # k x k, acts on whitened scores
    pca: PcaModel
    nonlinearity: Nonlinearity
    iterations_used: int
    converged: bool

    @property
    def in_dim(self) -> int:
        return self.pca.in_dim

    def transform(self, data) -> np.ndarray:
        return self.pca.transform(data) @ self.unmixing.T


def _as_data(data, cols: int | None = None) -> np.ndarray:
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D data matrix, got shape {a.shape}")
    if cols is not None and a.shape[1] != cols:
        raise ShapeError(f"model expects {cols} columns, got {a.shape[1]}")
    return a


def fit_pca(data, k: int, whiten: bool = False) -> PcaModel:
    """Top-``k`` principal axes of the sample covariance (ddof=1)."""
    x = _as_data(data)
    n, dim = x.shape
    if not 1 <= k <= min(n - 1, dim):
        raise PreconditionError(f"k must lie in [1, {min(n - 1, dim)}], got {k}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (n - 1)
    w, v = sym_eig(cov)
    w = np.maximum(w[:k], 0.0)
    if whiten and np.any(w <= 0):
        raise PreconditionError("cannot whiten: a retained component has zero variance")
    return PcaModel(mean, v[:, :k].T.copy(), w, whiten)


def transform(model, data) -> np.ndarray:
    return model.transform(data)


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    """``(W W^T)^{-1/2} W``."""
    s, u = sym_eig(w @ w.T)
    return (u / np.sqrt(np.maximum(s, 1e-300))) @ u.T @ w


def _contrast(nonlin: Nonlinearity, u: np.ndarray):
    if nonlin is Nonlinearity.LOGCOSH:
        g = np.tanh(u)
        return g, 1.0 - g * g
    return u**3, 3.0 * u * u


def fit_fastica(
    data,
    k: int,
    nonlinearity: Nonlinearity | str = Nonlinearity.LOGCOSH,
    max_iter: int = 500,
    tol: float = 1e-6,
    rng: RngState | None = None,
    pca: PcaModel | None = None,
) -> IcaModel:
    """Symmetric (parallel) FastICA on PCA-whitened data.

    Non-convergence is reported through ``converged=False`` rather than
    raised.
    """
    x = _as_data(data)
    nonlin = Nonlinearity(nonlinearity)
    n = x.shape[0]
    if pca is None:
        if n < 10 * k:
            raise PreconditionError(f"FastICA needs N >= 10k rows ({10 * k}), got {n}")
        pca = fit_pca(x, k, whiten=True)
    y = pca.transform(x)
    rng = rng or RngState(0)
    w = _sym_decorrelate(rng.generator.standard_normal((k, k)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g, gp = _contrast(nonlin, y @ w.T)
        w_new = _sym_decorrelate((g.T @ y) / n - gp.mean(axis=0)[:, None] * w)
        lim = float(np.max(np.abs(np.abs(np.sum(w_new * w, axis=1)) - 1.0)))
        w = w_new
        if lim < tol:
            converged = True
            break
    idx = np.argmax(np.abs(w), axis=1)
    signs = np.sign(w[np.arange(k), idx])
    signs[signs == 0] = 1.0
    return IcaModel(w * signs[:, None], pca, nonlin, it, converged)


@dataclass
class Pipeline:
    """Optional unwhitened PCA reduction followed by FastICA."""

    ica: IcaModel
    pre: PcaModel | None = None

    def transform(self, data) -> np.ndarray:
        if self.pre is not None:
            data = self.pre.transform(data)
        return self.ica.transform(data)

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        man = {
            "mode": "pca_ica" if self.pre is not None else "ica",
            "nonlinearity": self.ica.nonlinearity.value,
            "iterations_used": self.ica.iterations_used,
            "converged": self.ica.converged,
        }
        stages = [("ica_pca", self.ica.pca)]
        if self.pre is not None:
            stages.insert(0, ("pre_pca", self.pre))
        for tag, p in stages:
            save_matrix(out / f"{tag}_mean.midl", p.mean[None, :])
            save_matrix(out / f"{tag}_components.midl", p.components)
            save_matrix(out / f"{tag}_eigenvalues.midl", p.eigenvalues[None, :])
            man[f"{tag}_whiten"] = p.whiten
        save_matrix(out / "unmixing.midl", self.ica.unmixing)
        (out / "model.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
        return out

    @classmethod
    def load(cls, in_dir) -> "Pipeline":
        src = Path(in_dir)
        man = json.loads((src / "model.json").read_text())

        def pca(tag):
            return PcaModel(
                load_matrix(src / f"{tag}_mean.midl")[0],
                load_matrix(src / f"{tag}_components.midl"),
                load_matrix(src / f"{tag}_eigenvalues.midl")[0],
                bool(man[f"{tag}_whiten"]),
            )

        ica = IcaModel(
            load_matrix(src / "unmixing.midl"),
            pca("ica_pca"),
            Nonlinearity(man["nonlinearity"]),
            int(man["iterations_used"]),
            bool(man["converged"]),
        )
        return cls(ica, pca("pre_pca") if man["mode"] == "pca_ica" else None)


def fit_pipeline_ica(embeddings, k: int, rng: RngState | None = None, **kw) -> Pipeline:
    return Pipeline(fit_fastica(embeddings, k, rng=rng, **kw))


def fit_pipeline_pca_ica(embeddings, k_pca: int, k_ica: int, rng: RngState | None = None, **kw) -> Pipeline:
    if k_ica > k_pca:
        raise PreconditionError("k_ica cannot exceed k_pca")
    pre = fit_pca(embeddings, k_pca, whiten=False)
    return Pipeline(fit_fastica(pre.transform(embeddings), k_ica, rng=rng, **kw), pre)


def pipeline_ica(embeddings, k: int, rng: RngState | None = None, **kw) -> np.ndarray:
    return fit_pipeline_ica(embeddings, k, rng, **kw).transform(embeddings)


def pipeline_pca_ica(embeddings, k_pca: int, k_ica: int, rng: RngState | None = None, **kw) -> np.ndarray:
    return fit_pipeline_pca_ica(embeddings, k_pca, k_ica, rng, **kw).transform(embeddings)
