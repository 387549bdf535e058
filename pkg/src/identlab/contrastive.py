"""Symmetric multimodal contrastive learning with hand-written gradients.

Two leaky-ReLU MLP encoders map paired observations into a shared output
space (sphere, box or unbounded). The loss is the two-directional in-batch
softmax cross-entropy over similarities ``k(a_i, b_j) / tau``, where
``k = -d`` for a distance ``d``. Backpropagation is written out by hand and
checked against central finite differences in the test suite.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .errors import PreconditionError, ShapeError, TrainingError
from .matio import load_matrix, save_matrix
from .rand import RngState

log = logging.getLogger(__name__)

LOG_TAU_MIN = math.log(1e-3)
LOG_TAU_MAX = math.log(1e3)
_PAIRWISE_CHUNK = 2_000_000


class KernelKind(str, enum.Enum):
    DOT = "dot"
    NEG_L1 = "neg_l1"
    NEG_L2SQ = "neg_l2sq"
    NEG_LBETA = "neg_lbeta"


@dataclass(frozen=True)
class SimilarityKernel:
    kind: KernelKind = KernelKind.DOT
    beta: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if self.kind is KernelKind.NEG_LBETA and self.beta < 1:
            raise PreconditionError("NEG_LBETA needs beta >= 1")

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value}
        if self.kind is KernelKind.NEG_LBETA:
            d["beta"] = self.beta
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimilarityKernel":
        return cls(KernelKind(d["kind"]), float(d.get("beta", 3.0)))


class SpaceKind(str, enum.Enum):
    SPHERE = "sphere"
    BOX = "box"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class OutputSpace:
    kind: SpaceKind
    dim: int
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SpaceKind(self.kind))
        if self.dim < 1:
            raise PreconditionError("output dim must be >= 1")
        if self.kind is SpaceKind.BOX and not self.lo < self.hi:
            raise PreconditionError("output box needs lo < hi")

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "dim": self.dim}
        if self.kind is SpaceKind.BOX:
            d["lo"], d["hi"] = self.lo, self.hi
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OutputSpace":
        return cls(SpaceKind(d["kind"]), int(d["dim"]), float(d.get("lo", -1.0)), float(d.get("hi", 1.0)))

    def project(self, h: np.ndarray) -> np.ndarray:
        return self.project_with_cache(h)[0]

    def project_with_cache(self, h: np.ndarray):
        if self.kind is SpaceKind.SPHERE:
            nrm = np.linalg.norm(h, axis=1, keepdims=True)
            y = h / nrm
            return y, (y, nrm)
        if self.kind is SpaceKind.BOX:
            half = 0.5 * (self.hi - self.lo)
            th = np.tanh(h)
            return self.lo + half * (th + 1.0), (th, half)
        return h, None

    def project_backward(self, dy: np.ndarray, cache) -> np.ndarray:
        if self.kind is SpaceKind.SPHERE:
            y, nrm = cache
            return (dy - y * np.sum(y * dy, axis=1, keepdims=True)) / nrm
        if self.kind is SpaceKind.BOX:
            th, half = cache
            return dy * half * (1.0 - th * th)
        return dy


# -- similarities -----------------------------------------------------------


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"embedding shapes {a.shape} and {b.shape} do not conform")


def similarity(a, b, kernel: SimilarityKernel) -> np.ndarray:
    """Matrix ``S[i, j] = k(a_i, b_j)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    kind = kernel.kind
    if kind is KernelKind.DOT:
        return a @ b.T
    if kind is KernelKind.NEG_L2SQ:
        sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
        return -np.maximum(sq, 0.0)
    power = 1.0 if kind is KernelKind.NEG_L1 else kernel.beta
    out = np.empty((a.shape[0], b.shape[0]))
    step = max(1, _PAIRWISE_CHUNK // max(1, b.shape[0] * a.shape[1]))
    for s in range(0, a.shape[0], step):
        diff = np.abs(a[s : s + step, None, :] - b[None, :, :])
        out[s : s + step] = -np.sum(diff if power == 1.0 else diff**power, axis=2)
    return out


def similarity_backward(a: np.ndarray, b: np.ndarray, g: np.ndarray, kernel: SimilarityKernel):
    """Given ``g = dL/dS``, return ``(dL/da, dL/db)``."""
    kind = kernel.kind
    if kind is KernelKind.DOT:
        return g @ b, g.T @ a
    if kind is KernelKind.NEG_L2SQ:
        da = -2.0 * (g.sum(axis=1)[:, None] * a - g @ b)
        db = -2.0 * (g.sum(axis=0)[:, None] * b - g.T @ a)
        return da, db
    da = np.empty_like(a)
    db = np.zeros_like(b)
    step = max(1, _PAIRWISE_CHUNK // max(1, b.shape[0] * a.shape[1]))
    for s in range(0, a.shape[0], step):
        diff = a[s : s + step, None, :] - b[None, :, :]
        if kind is KernelKind.NEG_L1:
            dsd = -np.sign(diff)
        else:
            dsd = -kernel.beta * np.abs(diff) ** (kernel.beta - 1.0) * np.sign(diff)
        gs = g[s : s + step, :, None]
        da[s : s + step] = np.sum(gs * dsd, axis=1)
        db -= np.sum(gs * dsd, axis=0)
    return da, db


# -- loss -------------------------------------------------------------------


def _loss_from_logits(logits: np.ndarray):
    n = logits.shape[0]
    diag = np.diag(logits)
    lse_row = special.logsumexp(logits, axis=1)
    lse_col = special.logsumexp(logits, axis=0)
    loss = float(np.mean(lse_row - diag) + np.mean(lse_col - diag))
    p_row = np.exp(logits - lse_row[:, None])
    p_col = np.exp(logits - lse_col[None, :])
    grad = (p_row + p_col) / n
    grad[np.diag_indices(n)] -= 2.0 / n
    return loss, grad


def contrastive_loss(emb_x, emb_t, kernel: SimilarityKernel, tau: float) -> float:
    """Symmetric in-batch contrastive loss (x-to-t plus t-to-x)."""
    emb_x = np.asarray(emb_x, dtype=np.float64)
    emb_t = np.asarray(emb_t, dtype=np.float64)
    if emb_x.shape != emb_t.shape:
        raise ShapeError(f"embedding shapes differ: {emb_x.shape} vs {emb_t.shape}")
    if emb_x.shape[0] < 1:
        raise PreconditionError("need at least one pair")
    if not tau > 0:
        raise PreconditionError("tau must be > 0")
    return _loss_from_logits(similarity(emb_x, emb_t, kernel) / tau)[0]


def contrastive_loss_and_grad(emb_x, emb_t, kernel: SimilarityKernel, tau: float):
    """Return ``(loss, d_emb_x, d_emb_t, d_log_tau)``."""
    if emb_x.shape != emb_t.shape:
        raise ShapeError(f"embedding shapes differ: {emb_x.shape} vs {emb_t.shape}")
    sim = similarity(emb_x, emb_t, kernel)
    logits = sim / tau
    loss, g_logits = _loss_from_logits(logits)
    d_log_tau = -float(np.sum(g_logits * logits))
    da, db = similarity_backward(emb_x, emb_t, g_logits / tau, kernel)
    return loss, da, db, d_log_tau


def asymptotic_loss_estimate(emb_x, emb_t, kernel: SimilarityKernel, tau: float) -> float:
    """Plug-in estimate of the large-N limit of ``loss - 2 log N``.

    The alignment term averages matched-pair distances; the two log-mean-exp
    terms average over off-diagonal pairs, which are draws from the product
    of the two empirical marginals.
    """
    emb_x = np.asarray(emb_x, dtype=np.float64)
    emb_t = np.asarray(emb_t, dtype=np.float64)
    if emb_x.shape != emb_t.shape:
        raise ShapeError(f"embedding shapes differ: {emb_x.shape} vs {emb_t.shape}")
    n = emb_x.shape[0]
    if n < 2:
        raise PreconditionError("need at least two pairs")
    logits = similarity(emb_x, emb_t, kernel) / tau
    align = -2.0 * float(np.mean(np.diag(logits)))
    off = logits.copy()
    off[np.diag_indices(n)] = -np.inf
    row = special.logsumexp(off, axis=1) - math.log(n - 1)
    col = special.logsumexp(off, axis=0) - math.log(n - 1)
    return align + float(np.mean(row) + np.mean(col))


@dataclass(frozen=True)
class UniformityGap:
    """Reference entropy minus KDE entropy estimate.

    ``flagged`` is set when the output space has no finite reference
    entropy (unbounded); ``value`` is then NaN.
    """

    value: float
    kde_entropy: float
    reference_entropy: float
    flagged: bool = False


def _log_kernel_normalizer(kernel: SimilarityKernel, space: OutputSpace, tau: float, centers: np.ndarray):
    """Log of the integral of ``exp(k(x, c) / tau)`` over the output space,
    for every center ``c`` (a scalar on the sphere, per-row in a box)."""
    d = space.dim
    kind = kernel.kind
    if space.kind is SpaceKind.SPHERE:
        if kind is not KernelKind.DOT:
            raise PreconditionError("sphere KDE is only defined for the DOT (vMF) kernel")
        kappa = 1.0 / tau
        nu = d / 2.0 - 1.0
        log_c = nu * math.log(kappa) - (d / 2.0) * math.log(2 * math.pi) - math.log(special.ive(nu, kappa)) - kappa
        return -log_c
    if kind is KernelKind.DOT:
        raise PreconditionError("DOT kernel defines a density only on the sphere")
    # every box kernel is exp(-|u|^b / tau) per coordinate, truncated to [lo, hi]
    b = {KernelKind.NEG_L1: 1.0, KernelKind.NEG_L2SQ: 2.0}.get(kind, kernel.beta)
    a = 1.0 / b
    left = special.gammainc(a, (centers - space.lo) ** b / tau)
    right = special.gammainc(a, (space.hi - centers) ** b / tau)
    per_dim = a * math.log(tau) + special.gammaln(a) - math.log(b) + np.log(left + right)
    return np.sum(per_dim, axis=1)


def uniformity_gap(emb, kernel: SimilarityKernel, tau: float, space: OutputSpace) -> UniformityGap:
    """How far a cloud of embeddings is from the uniform law on its space.

    Entropy is estimated by leave-one-out kernel density estimation with
    the kernel ``exp(k(a, b) / tau)`` normalized to a density on the output
    space (truncated at the faces for a box). The reference is the
    log-volume of the output space (surface area for the sphere).
    """
    emb = np.asarray(emb, dtype=np.float64)
    n = emb.shape[0]
    if n < 10:
        raise PreconditionError("uniformity_gap needs at least 10 embeddings")
    if space.kind is SpaceKind.UNBOUNDED:
        return UniformityGap(float("nan"), float("nan"), float("nan"), flagged=True)
    if space.kind is SpaceKind.SPHERE:
        m = space.dim
        ref = math.log(2.0) + (m / 2.0) * math.log(math.pi) - special.gammaln(m / 2.0)
    else:
        ref = space.dim * math.log(space.hi - space.lo)
    log_z = _log_kernel_normalizer(kernel, space, tau, emb)
    log_p = np.empty(n)
    step = max(1, _PAIRWISE_CHUNK // max(1, n * emb.shape[1]))
    for s in range(0, n, step):
        logits = similarity(emb[s : s + step], emb, kernel) / tau - log_z
        rows = np.arange(logits.shape[0])
        logits[rows, s + rows] = -np.inf
        log_p[s : s + step] = special.logsumexp(logits, axis=1)
    log_p -= math.log(n - 1)
    h = -float(np.mean(log_p))
    return UniformityGap(ref - h, h, ref)


# -- encoders ---------------------------------------------------------------


@dataclass
class Mlp:
    """Leaky-ReLU MLP with fixed input standardization.

    Weights are stored input-major: a layer computes ``h @ W + b``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    leak: float = 0.2
    in_mean: np.ndarray | None = None
    in_scale: np.ndarray | None = None

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def _standardize(self, x: np.ndarray) -> np.ndarray:
        if self.in_mean is not None:
            x = (x - self.in_mean) / self.in_scale
        return x

    def forward(self, x: np.ndarray, keep: bool = False):
        h = self._standardize(np.asarray(x, dtype=np.float64))
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inp = h
            pre = h @ w + b
            h = pre if i == last else np.where(pre > 0, pre, self.leak * pre)
            if keep:
                cache.append((inp, pre))
        return (h, cache) if keep else h

    def backward(self, dout: np.ndarray, cache) -> list[np.ndarray]:
        grads = [None] * (2 * len(self.weights))
        g = dout
        for i in range(len(self.weights) - 1, -1, -1):
            inp, pre = cache[i]
            if i != len(self.weights) - 1:
                g = np.where(pre > 0, g, self.leak * g)
            grads[2 * i] = inp.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i:
                g = g @ self.weights[i].T
        return grads


def init_mlp(rng: RngState, in_dim: int, out_dim: int, width: int, hidden_layers: int, leak: float = 0.2) -> Mlp:
    """Weights and biases uniform in ``±1/sqrt(fan_in)``.

    The small output scale keeps a tanh box head out of saturation at the
    start of training.
    """
    gen = rng.generator
    dims = [in_dim] + [width] * hidden_layers + [out_dim]
    weights, biases = [], []
    for i, o in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(i)
        weights.append(gen.uniform(-bound, bound, (i, o)))
        biases.append(gen.uniform(-bound, bound, o))
    return Mlp(weights, biases, leak)


@dataclass
class EncoderPair:
    f_x: Mlp
    f_t: Mlp
    output_space: OutputSpace
    kernel: SimilarityKernel
    log_tau: float = 0.0
    learn_tau: bool = True
    seed: int = 0

    @property
    def tau(self) -> float:
        return math.exp(self.log_tau)

    def params(self) -> list[np.ndarray]:
        return self.f_x.params() + self.f_t.params()

    def manifest(self) -> dict:
        return {
            "arch": {
                "in_dim_x": self.f_x.in_dim,
                "in_dim_t": self.f_t.in_dim,
                "layers": len(self.f_x.weights),
                "leak": self.f_x.leak,
            },
            "kernel": self.kernel.to_dict(),
            "output_space": self.output_space.to_dict(),
            "log_tau": self.log_tau,
            "learn_tau": self.learn_tau,
            "seed": self.seed,
        }

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for tag, net in (("fx", self.f_x), ("ft", self.f_t)):
            for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                save_matrix(out / f"{tag}_W{i}.midl", w)
                save_matrix(out / f"{tag}_b{i}.midl", b[None, :])
            if net.in_mean is not None:
                save_matrix(out / f"{tag}_in.midl", np.vstack([net.in_mean, net.in_scale]))
        (out / "encoder.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return out

    @classmethod
    def load(cls, in_dir) -> "EncoderPair":
        src = Path(in_dir)
        man = json.loads((src / "encoder.json").read_text())
        layers = man["arch"]["layers"]
        nets = []
        for tag in ("fx", "ft"):
            ws = [load_matrix(src / f"{tag}_W{i}.midl") for i in range(layers)]
            bs = [load_matrix(src / f"{tag}_b{i}.midl")[0] for i in range(layers)]
            net = Mlp(ws, bs, man["arch"]["leak"])
            if (src / f"{tag}_in.midl").exists():
                st = load_matrix(src / f"{tag}_in.midl")
                net.in_mean, net.in_scale = st[0], st[1]
            nets.append(net)
        return cls(
            nets[0],
            nets[1],
            OutputSpace.from_dict(man["output_space"]),
            SimilarityKernel.from_dict(man["kernel"]),
            man["log_tau"],
            man.get("learn_tau", True),
            man.get("seed", 0),
        )


def encode(pair: EncoderPair, which: str, data) -> np.ndarray:
    net = {"x": pair.f_x, "t": pair.f_t}[which.lower()]
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != net.in_dim:
        raise ShapeError(f"encoder expects {net.in_dim} columns, got shape {data.shape}")
    return pair.output_space.project(net.forward(data))


def pair_loss_and_grads(pair: EncoderPair, xb: np.ndarray, tb: np.ndarray):
    """Loss on one batch plus gradients for every parameter and ``log_tau``."""
    hx, cx = pair.f_x.forward(xb, keep=True)
    ht, ct = pair.f_t.forward(tb, keep=True)
    ex, px = pair.output_space.project_with_cache(hx)
    et, pt = pair.output_space.project_with_cache(ht)
    loss, dex, det, dlt = contrastive_loss_and_grad(ex, et, pair.kernel, pair.tau)
    gx = pair.f_x.backward(pair.output_space.project_backward(dex, px), cx)
    gt = pair.f_t.backward(pair.output_space.project_backward(det, pt), ct)
    return loss, gx + gt, dlt


# -- training ---------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 512
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    temperature_mode: str = "learnable"
    tau: float = 1.0
    hidden_width: int = 128
    hidden_layers: int = 3
    leak: float = 0.2
    seed: int = 0
    grad_check: bool = False
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.batch_size < 2:
            raise PreconditionError("batch_size must be >= 2 (a contrastive batch needs negatives)")
        if self.epochs < 0:
            raise PreconditionError("epochs must be >= 0")
        if self.temperature_mode not in ("fixed", "learnable"):
            raise PreconditionError("temperature_mode must be 'fixed' or 'learnable'")
        if self.lr_schedule not in ("constant", "cosine"):
            raise PreconditionError("lr_schedule must be 'constant' or 'cosine'")
        if not self.tau > 0:
            raise PreconditionError("tau must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1: float, beta2: float, eps: float):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray], lr: float | None = None) -> None:
        self.t += 1
        lr = self.lr if lr is None else lr
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def init_pair(
    rng: RngState, in_x: int, in_t: int, cfg: TrainConfig, output_space: OutputSpace, kernel: SimilarityKernel
) -> EncoderPair:
    fx = init_mlp(rng.derive_child("f_x"), in_x, output_space.dim, cfg.hidden_width, cfg.hidden_layers, cfg.leak)
    ft = init_mlp(rng.derive_child("f_t"), in_t, output_space.dim, cfg.hidden_width, cfg.hidden_layers, cfg.leak)
    return EncoderPair(
        fx, ft, output_space, kernel, math.log(cfg.tau), cfg.temperature_mode == "learnable", cfg.seed
    )


def _standardizer(x: np.ndarray):
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    return mean, np.where(scale > 0, scale, 1.0)


@dataclass
class TrainResult:
    pair: EncoderPair
    loss_history: np.ndarray
    grad_check_error: float | None = None
    steps: int = 0
    extra: dict = field(default_factory=dict)


def train(
    X,
    T,
    cfg: TrainConfig,
    output_space: OutputSpace,
    kernel: SimilarityKernel,
    rng: RngState | None = None,
    callback=None,
) -> TrainResult:
    """Minibatch Adam on the symmetric contrastive loss.

    ``X`` and ``T`` are paired observation matrices (a ``PairedDataset``
    provides them as ``.X`` and ``.T``). Returns the trained encoders and
    the mean batch loss of every epoch.
    """
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if X.shape[0] != T.shape[0] or X.shape[0] < 2:
        raise PreconditionError("need at least two paired rows")
    rng = rng or RngState(cfg.seed)
    pair = init_pair(rng.derive_child("init"), X.shape[1], T.shape[1], cfg, output_space, kernel)
    pair.f_x.in_mean, pair.f_x.in_scale = _standardizer(X)
    pair.f_t.in_mean, pair.f_t.in_scale = _standardizer(T)

    grad_err = None
    if cfg.grad_check:
        from .gradcheck import check_pair_gradients

        k = min(8, X.shape[0])
        grad_err = check_pair_gradients(pair, X[:k], T[:k])

    params = pair.params()
    tau_box = [np.array([pair.log_tau])]
    opt = Adam(params + (tau_box if pair.learn_tau else []), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    gen = rng.derive_child("batches").generator
    n = X.shape[0]
    bs = min(cfg.batch_size, n)
    per_epoch = max(1, n // bs)
    total = cfg.epochs * per_epoch
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = gen.permutation(n)
        losses = []
        for k in range(per_epoch):
            idx = order[k * bs : (k + 1) * bs]
            loss, grads, dlt = pair_loss_and_grads(pair, X[idx], T[idx])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {k} (lr={cfg.learning_rate}, batch_size={bs})"
                )
            lr = cfg.learning_rate
            if cfg.lr_schedule == "cosine" and total > 1:
                lr = cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * step / total))
            if pair.learn_tau:
                opt.step(grads + [np.array([dlt])], lr)
                tau_box[0][0] = min(max(tau_box[0][0], LOG_TAU_MIN), LOG_TAU_MAX)
                pair.log_tau = float(tau_box[0][0])
            else:
                opt.step(grads, lr)
            losses.append(loss)
            step += 1
        history.append(float(np.mean(losses)))
        if callback is not None:
            callback(epoch, history[-1], pair)
    log.debug("trained %d steps, final loss %.4f, tau %.4g", step, history[-1] if history else float("nan"), pair.tau)
    return TrainResult(pair, np.array(history), grad_err, step)
