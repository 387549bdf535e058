"""Latent partial causal generative process.

Coupled latents ``z_x, z_t`` live on a declared geometry; modality-specific
latents ``m_x, m_t`` are standard normal. Observations are produced by two
independent random leaky-ReLU MLPs applied to ``[z, m]``.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rand
from .errors import ConfigError, PreconditionError, ShapeError
from .linalg import clamp_singular_values, condition_number
from .matio import load_matrix, save_matrix
from .rand import ConditionalFamily, Family, RngState


class Geometry(str, enum.Enum):
    SPHERE = "sphere"
    BOX = "box"
    UNBOUNDED = "unbounded"


class PriorKind(str, enum.Enum):
    UNIFORM = "uniform"
    LAPLACE = "laplace"
    NORMAL = "normal"


@dataclass(frozen=True)
class Prior:
    kind: PriorKind = PriorKind.UNIFORM
    param: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PriorKind(self.kind))
        if self.kind is not PriorKind.UNIFORM and self.param <= 0:
            raise ConfigError(f"{self.kind.value} prior scale must be > 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "param": self.param}

    @classmethod
    def from_dict(cls, d: dict) -> "Prior":
        return cls(PriorKind(d["kind"]), float(d.get("param", 1.0)))


@dataclass(frozen=True)
class LatentSpaceSpec:
    """Geometry, prior and conditional family of the coupled latents.

    Allowed combinations:

    * SPHERE: prior UNIFORM, or NORMAL(sigma) meaning a Gaussian around a
      fixed pole projected onto the sphere; any conditional family (non-vMF
      families perturb in the ambient space and re-project).
    * BOX: prior UNIFORM; conditional LAPLACE, NORMAL or GENNORM, truncated
      to the box.
    * UNBOUNDED: prior LAPLACE or NORMAL per coordinate; additive,
      untruncated LAPLACE, NORMAL or GENNORM conditional.
    """

    geometry: Geometry
    dim: int
    prior: Prior
    conditional: ConditionalFamily
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "geometry", Geometry(self.geometry))
        self.validate()

    def validate(self) -> None:
        g, p, c = self.geometry, self.prior.kind, self.conditional.kind
        if self.dim < 1:
            raise ConfigError("latent dim must be >= 1")
        if g is Geometry.SPHERE:
            if self.dim < 2:
                raise ConfigError("sphere geometry needs dim >= 2")
            if p not in (PriorKind.UNIFORM, PriorKind.NORMAL):
                raise ConfigError("rule: SPHERE prior must be uniform or normal (projected)")
        elif g is Geometry.BOX:
            if p is not PriorKind.UNIFORM:
                raise ConfigError("rule: BOX prior must be uniform")
            if c is Family.VMF:
                raise ConfigError("rule: BOX conditional cannot be vMF")
            if not self.lo < self.hi:
                raise ConfigError("rule: BOX needs lo < hi")
        else:
            if p not in (PriorKind.LAPLACE, PriorKind.NORMAL):
                raise ConfigError("rule: UNBOUNDED prior must be laplace or normal")
            if c is Family.VMF:
                raise ConfigError("rule: UNBOUNDED conditional cannot be vMF")

    def to_dict(self) -> dict:
        d = {
            "geometry": self.geometry.value,
            "dim": self.dim,
            "prior": self.prior.to_dict(),
            "conditional": self.conditional.to_dict(),
        }
        if self.geometry is Geometry.BOX:
            d["lo"], d["hi"] = self.lo, self.hi
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LatentSpaceSpec":
        return cls(
            geometry=Geometry(d["geometry"]),
            dim=int(d["dim"]),
            prior=Prior.from_dict(d.get("prior", {"kind": "uniform"})),
            conditional=ConditionalFamily.from_dict(d["conditional"]),
            lo=float(d.get("lo", -1.0)),
            hi=float(d.get("hi", 1.0)),
        )

    def contains(self, z: np.ndarray, atol: float = 1e-9) -> np.ndarray:
        """Row-wise geometry membership test."""
        z = np.atleast_2d(z)
        if self.geometry is Geometry.SPHERE:
            return np.abs(np.linalg.norm(z, axis=1) - 1.0) <= atol
        if self.geometry is Geometry.BOX:
            return np.all((z >= self.lo) & (z <= self.hi), axis=1)
        return np.all(np.isfinite(z), axis=1)

    def sample_prior(self, rng: RngState, n: int) -> np.ndarray:
        g = rng.generator
        if self.geometry is Geometry.SPHERE:
            if self.prior.kind is PriorKind.UNIFORM:
                return rand.sample_uniform_sphere(rng, self.dim, n)
            pole = np.zeros(self.dim)
            pole[0] = 1.0
            z = pole + self.prior.param * g.standard_normal((n, self.dim))
            return z / np.linalg.norm(z, axis=1, keepdims=True)
        if self.geometry is Geometry.BOX:
            return rand.sample_uniform_box(rng, np.full(self.dim, self.lo), np.full(self.dim, self.hi), n)
        if self.prior.kind is PriorKind.LAPLACE:
            return rand.sample_laplace(rng, self.prior.param, n * self.dim).reshape(n, self.dim)
        return rand.sample_normal(rng, self.prior.param, n * self.dim).reshape(n, self.dim)

    def sample_conditional(self, rng: RngState, zx: np.ndarray) -> np.ndarray:
        fam = self.conditional
        if self.geometry is Geometry.SPHERE:
            if fam.kind is Family.VMF:
                return rand.sample_vmf(rng, zx, fam.param)
            z = zx + rand.sample_noise(rng, fam, zx.shape)
            return z / np.linalg.norm(z, axis=1, keepdims=True)
        if self.geometry is Geometry.BOX:
            return rand.sample_conditional_box(rng, zx, fam, self.lo, self.hi)
        return zx + rand.sample_noise(rng, fam, zx.shape)


@dataclass
class MixerMlp:
    """Square leaky-ReLU MLP: affine layers with activations between them.

    ``weights[i]`` has shape (out, in) and is applied as ``h @ W.T + b``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    leak: float

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("mixer needs matching, nonempty weight and bias lists")
        if self.leak <= 0:
            raise PreconditionError("leak must be > 0 for the mixer to be injective")

    @property
    def dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def layers(self) -> int:
        return len(self.weights)

    def __call__(self, u) -> np.ndarray:
        return mixer_forward(self, u)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.float64(self.leak).tobytes())
        for w, b in zip(self.weights, self.biases):
            h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
            h.update(np.ascontiguousarray(b, dtype="<f8").tobytes())
        return h.hexdigest()


def leaky_relu(x: np.ndarray, leak: float) -> np.ndarray:
    return np.where(x > 0, x, leak * x)


def mixer_forward(m: MixerMlp, u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    single = u.ndim == 1
    h = np.atleast_2d(u)
    if h.shape[1] != m.dim:
        raise ShapeError(f"mixer expects {m.dim} inputs, got {h.shape[1]}")
    last = len(m.weights) - 1
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        h = h @ w.T + b
        if i < last:
            h = leaky_relu(h, m.leak)
    return h[0] if single else h


def build_mixer(
    rng: RngState,
    latent_dim: int,
    specific_dim: int,
    layers: int = 3,
    leak: float = 0.2,
    cond_max: float = 10.0,
    bias_scale: float = 0.1,
) -> MixerMlp:
    """Random invertible mixer on ``latent_dim + specific_dim`` inputs.

    Each Gaussian weight matrix has its singular values clipped into
    ``[1, cond_max]``, so every layer is invertible with bounded condition
    number.
    """
    if latent_dim < 1 or specific_dim < 0 or layers < 1:
        raise PreconditionError("mixer needs latent_dim >= 1, specific_dim >= 0, layers >= 1")
    if not 0 < leak <= 1:
        raise PreconditionError("leak must lie in (0, 1]")
    if cond_max <= 1:
        raise PreconditionError("cond_max must be > 1")
    d = latent_dim + specific_dim
    g = rng.generator
    weights, biases = [], []
    for _ in range(layers):
        w = clamp_singular_values(g.standard_normal((d, d)), 1.0, cond_max)
        if condition_number(w) > cond_max + 1e-6:
            raise AssertionError("singular-value clamp failed")
        weights.append(w)
        biases.append(bias_scale * g.standard_normal(d))
    return MixerMlp(weights, biases, leak)


_DATASET_FILES = ("Zx", "Zt", "Mx", "Mt", "X", "T")


@dataclass
class PairedDataset:
    Zx: np.ndarray
    Zt: np.ndarray
    Mx: np.ndarray
    Mt: np.ndarray
    X: np.ndarray
    T: np.ndarray
    spec: LatentSpaceSpec
    seed: int
    mixer_hashes: tuple[str, str] = ("", "")
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.Zx.shape[0]
        for name in _DATASET_FILES:
            if getattr(self, name).shape[0] != n:
                raise ShapeError(f"{name} row count differs from Zx")

    @property
    def n(self) -> int:
        return self.Zx.shape[0]

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "n": self.n,
            "spec": self.spec.to_dict(),
            "mixer_hashes": list(self.mixer_hashes),
            "files": {k: f"{k}.midl" for k in _DATASET_FILES},
            **self.extra,
        }

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in _DATASET_FILES:
            save_matrix(out / f"{name}.midl", getattr(self, name))
        (out / "manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return out

    @classmethod
    def load(cls, in_dir) -> "PairedDataset":
        src = Path(in_dir)
        man = json.loads((src / "manifest.json").read_text())
        mats = {k: load_matrix(src / man["files"][k]) for k in _DATASET_FILES}
        known = {"seed", "n", "spec", "mixer_hashes", "files"}
        return cls(
            **mats,
            spec=LatentSpaceSpec.from_dict(man["spec"]),
            seed=int(man["seed"]),
            mixer_hashes=tuple(man.get("mixer_hashes", ("", ""))),
            extra={k: v for k, v in man.items() if k not in known},
        )


def generate_pairs(
    rng: RngState,
    spec: LatentSpaceSpec,
    mixer_x: MixerMlp,
    mixer_t: MixerMlp,
    n: int,
    specific_dim: int | None = None,
) -> PairedDataset:
    if n < 1:
        raise PreconditionError("n must be >= 1")
    if specific_dim is None:
        specific_dim = mixer_x.dim - spec.dim
    for m in (mixer_x, mixer_t):
        if m.dim != spec.dim + specific_dim:
            raise ShapeError(f"mixer input dim {m.dim} != {spec.dim} + {specific_dim}")
    zx = spec.sample_prior(rng.derive_child("prior"), n)
    zt = spec.sample_conditional(rng.derive_child("conditional"), zx)
    g_m = rng.derive_child("specific").generator
    mx = g_m.standard_normal((n, specific_dim))
    mt = g_m.standard_normal((n, specific_dim))
    x = mixer_forward(mixer_x, np.hstack([zx, mx]))
    t = mixer_forward(mixer_t, np.hstack([zt, mt]))
    return PairedDataset(zx, zt, mx, mt, x, t, spec, rng.seed, (mixer_x.digest(), mixer_t.digest()))
