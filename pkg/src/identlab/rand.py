"""Seeded random streams and the samplers used by the generative model.

Every stream is a numpy ``Generator`` driven by the Philox4x64 counter-based bit generator,
seeded through ``SeedSequence``. Child streams are derived from the parent
seed and a text label, so a given ``(seed, label)`` always reproduces the
same numbers regardless of the order in which children are created.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ConvergenceError, PreconditionError

VMF_MAX_PROPOSALS = 1_000_000
GENNORM_MAX_PROPOSALS = 1_000_000


class RngState:
    """A reproducible random stream identified by a seed and a label path."""

    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self.path = tuple(path)
        words = [self.seed & 0xFFFF_FFFF, self.seed >> 32]
        for label in self.path:
            digest = hashlib.sha256(label.encode("utf-8")).digest()
            words.extend(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
        self.generator = np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))

    def derive_child(self, label: str) -> "RngState":
        return RngState(self.seed, self.path + (str(label),))

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, path={self.path!r})"


class Family(str, enum.Enum):
    VMF = "vmf"
    LAPLACE = "laplace"
    NORMAL = "normal"
    GENNORM = "gennorm"


@dataclass(frozen=True)
class ConditionalFamily:
    """Conditional law of ``z_t`` given ``z_x``.

    ``param`` is kappa for VMF, the scale for LAPLACE/NORMAL/GENNORM;
    ``beta`` is only used by GENNORM.
    """

    kind: Family
    param: float
    beta: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Family(self.kind))
        if self.kind is Family.VMF:
            if self.param < 0:
                raise PreconditionError("vMF concentration must be >= 0")
        elif self.param <= 0:
            raise PreconditionError(f"{self.kind.value} scale must be > 0")
        if self.kind is Family.GENNORM and self.beta < 1:
            raise PreconditionError("GenNorm beta must be >= 1")

    @classmethod
    def vmf(cls, kappa: float) -> "ConditionalFamily":
        return cls(Family.VMF, kappa)

    @classmethod
    def laplace(cls, scale: float) -> "ConditionalFamily":
        return cls(Family.LAPLACE, scale)

    @classmethod
    def normal(cls, sigma: float) -> "ConditionalFamily":
        return cls(Family.NORMAL, sigma)

    @classmethod
    def gennorm(cls, beta: float, scale: float) -> "ConditionalFamily":
        return cls(Family.GENNORM, scale, beta)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "param": self.param}
        if self.kind is Family.GENNORM:
            d["beta"] = self.beta
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionalFamily":
        return cls(Family(d["kind"]), float(d["param"]), float(d.get("beta", 2.0)))


def _gen(rng) -> np.random.Generator:
    return rng.generator if isinstance(rng, RngState) else rng


def _check_count(n: int) -> None:
    if n < 1:
        raise PreconditionError(f"sample count must be >= 1, got {n}")


def sample_gaussian(rng: RngState, n: int) -> np.ndarray:
    _check_count(n)
    return _gen(rng).standard_normal(n)


def sample_uniform_sphere(rng: RngState, dim: int, n: int | None = None) -> np.ndarray:
    """Uniform draw(s) on the unit sphere in R^dim (Gaussian, then normalize)."""
    if dim < 2:
        raise PreconditionError("sphere dimension must be >= 2")
    shape = (dim,) if n is None else (n, dim)
    if n is not None:
        _check_count(n)
    g = _gen(rng).standard_normal(shape)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def _vmf_cosines(gen: np.random.Generator, kappa: float, dim: int, n: int) -> np.ndarray:
    """Wood's rejection sampler for w = mu . z."""
    b = (-2.0 * kappa + np.sqrt(4.0 * kappa**2 + (dim - 1.0) ** 2)) / (dim - 1.0)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (dim - 1.0) * np.log(1.0 - x0 * x0)
    a = (dim - 1.0) / 2.0
    out = np.empty(n)
    pending = np.arange(n)
    tries = 0
    while pending.size:
        tries += 1
        if tries > VMF_MAX_PROPOSALS:
            raise ConvergenceError(f"vMF rejection exceeded {VMF_MAX_PROPOSALS} proposals")
        z = gen.beta(a, a, pending.size)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = gen.uniform(size=pending.size)
        ok = kappa * w + (dim - 1.0) * np.log(1.0 - x0 * w) - c >= np.log(u)
        out[pending[ok]] = w[ok]
        pending = pending[~ok]
    return out


def _householder_to(mu: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Reflect rows of ``x`` by the map sending e_1 to the matching row of ``mu``."""
    e1 = np.zeros_like(mu)
    e1[:, 0] = 1.0
    u = e1 - mu
    nrm = np.linalg.norm(u, axis=1, keepdims=True)
    trivial = nrm[:, 0] < 1e-12
    u = np.where(trivial[:, None], 0.0, u / np.where(trivial[:, None], 1.0, nrm))
    return x - 2.0 * u * np.sum(u * x, axis=1, keepdims=True)


def sample_vmf(rng: RngState, mu, kappa: float, n: int | None = None) -> np.ndarray:
    """von Mises-Fisher draw(s) with mean direction(s) ``mu``.

    ``mu`` may be one unit vector (with optional ``n`` draws) or an (n, dim)
    array of unit vectors, one draw per row.
    """
    mu = np.asarray(mu, dtype=np.float64)
    single = mu.ndim == 1
    if single:
        mu = np.tile(mu, (1 if n is None else n, 1))
    elif n is not None and n != mu.shape[0]:
        raise PreconditionError("n must match the number of mean directions")
    if np.any(np.abs(np.linalg.norm(mu, axis=1) - 1.0) > 1e-9):
        raise PreconditionError("vMF mean direction must be unit norm")
    if kappa < 0:
        raise PreconditionError("vMF concentration must be >= 0")
    rows, dim = mu.shape
    if kappa == 0:
        out = sample_uniform_sphere(rng, dim, rows)
    else:
        gen = _gen(rng)
        w = _vmf_cosines(gen, kappa, dim, rows)
        tangent = sample_uniform_sphere(gen, dim - 1, rows)
        pole = np.hstack([w[:, None], np.sqrt(np.clip(1.0 - w * w, 0.0, None))[:, None] * tangent])
        out = _householder_to(mu, pole)
        out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out[0] if single and n is None else out


def sample_uniform_box(rng: RngState, lo, hi, n: int | None = None) -> np.ndarray:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise PreconditionError("box needs lo < hi in every coordinate")
    shape = lo.shape if n is None else (n,) + lo.shape
    return _gen(rng).uniform(lo, hi, size=shape)


def _truncated_laplace(gen, center, scale, lo, hi):
    def cdf(x):
        d = (x - center) / scale
        return np.where(d < 0, 0.5 * np.exp(np.minimum(d, 0.0)), 1.0 - 0.5 * np.exp(-np.maximum(d, 0.0)))

    flo, fhi = cdf(lo), cdf(hi)
    u = flo + gen.uniform(size=center.shape) * (fhi - flo)
    lower = u < 0.5
    with np.errstate(divide="ignore"):
        x = np.where(
            lower,
            center + scale * np.log(2.0 * np.where(lower, u, 0.5)),
            center - scale * np.log(2.0 * (1.0 - np.where(lower, 0.5, u))),
        )
    return np.clip(x, lo, hi)


def _truncated_normal(gen, center, scale, lo, hi):
    a = (lo - center) / scale
    b = (hi - center) / scale
    u = gen.uniform(size=center.shape)
    x = center + scale * stats.truncnorm.ppf(u, a, b)
    return np.clip(x, lo, hi)


def _truncated_gennorm(gen, center, beta, scale, lo, hi):
    out = np.empty_like(center)
    flat_c, flat_lo, flat_hi = center.ravel(), lo.ravel(), hi.ravel()
    res = out.ravel()
    pending = np.arange(flat_c.size)
    tries = 0
    while pending.size:
        tries += 1
        if tries > GENNORM_MAX_PROPOSALS:
            raise ConvergenceError("GenNorm truncation rejection did not terminate")
        x = flat_c[pending] + sample_gennorm(gen, beta, scale, pending.size)
        ok = (x >= flat_lo[pending]) & (x <= flat_hi[pending])
        res[pending[ok]] = x[ok]
        pending = pending[~ok]
    return res.reshape(center.shape)


def sample_conditional_box(rng: RngState, center, family: ConditionalFamily, lo, hi) -> np.ndarray:
    """Draw ``z_t`` from the box-truncated conditional around ``center``.

    ``center`` may be a single point or an (n, dim) array (one draw per row).
    All three families factorize over coordinates, so coordinates are drawn
    independently from their truncated 1-D laws.
    """
    center = np.asarray(center, dtype=np.float64)
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), center.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), center.shape)
    if np.any(hi <= lo):
        raise PreconditionError("box needs lo < hi in every coordinate")
    if np.any(center < lo) or np.any(center > hi):
        raise PreconditionError("conditional center lies outside the box")
    gen = _gen(rng)
    if family.kind is Family.LAPLACE:
        return _truncated_laplace(gen, center, family.param, lo, hi)
    if family.kind is Family.NORMAL:
        return _truncated_normal(gen, center, family.param, lo, hi)
    if family.kind is Family.GENNORM:
        return _truncated_gennorm(gen, center, family.beta, family.param, lo, hi)
    raise PreconditionError(f"{family.kind.value} is not a box conditional")


def sample_laplace(rng: RngState, scale: float, n: int) -> np.ndarray:
    _check_count(n)
    if scale <= 0:
        raise PreconditionError("Laplace scale must be > 0")
    return _gen(rng).laplace(0.0, scale, n)


def sample_normal(rng: RngState, sigma: float, n: int) -> np.ndarray:
    _check_count(n)
    if sigma <= 0:
        raise PreconditionError("Normal sigma must be > 0")
    return sigma * _gen(rng).standard_normal(n)


def sample_gennorm(rng: RngState, beta: float, scale: float, n: int) -> np.ndarray:
    """Draws with density proportional to exp(-|x/scale|^beta)."""
    _check_count(n)
    if beta < 1 or scale <= 0:
        raise PreconditionError("GenNorm needs beta >= 1 and scale > 0")
    gen = _gen(rng)
    g = gen.gamma(1.0 / beta, 1.0, n)
    sign = np.where(gen.uniform(size=n) < 0.5, -1.0, 1.0)
    return scale * sign * g ** (1.0 / beta)


def sample_noise(rng: RngState, family: ConditionalFamily, shape) -> np.ndarray:
    """Untruncated additive noise of the given family, any shape."""
    n = int(np.prod(shape))
    if family.kind is Family.LAPLACE:
        x = sample_laplace(rng, family.param, n)
    elif family.kind is Family.NORMAL:
        x = sample_normal(rng, family.param, n)
    elif family.kind is Family.GENNORM:
        x = sample_gennorm(rng, family.beta, family.param, n)
    else:
        raise PreconditionError(f"{family.kind.value} has no additive-noise form")
    return x.reshape(shape)
