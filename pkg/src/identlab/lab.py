"""Experiment specs, suite execution, persistence and Table-style reports.

A suite file is JSON::

    {"suite": "table1a", "experiments": [<experiment>, ...]}

and an experiment is::

    {
      "name": "sp_u_vmf__sp_vmf",
      "generative": {"geometry": "sphere", "dim": 10,
                     "prior": {"kind": "uniform"},
                     "conditional": {"kind": "vmf", "param": 1.0},
                     "specific_dim": 5,
                     "mixer": {"layers": 3, "leak": 0.2, "cond_max": 10.0}},
      "model": {"space": {"kind": "sphere"}, "kernel": {"kind": "dot"},
                "train": {<TrainConfig fields except seed>}},
      "n_samples": 5000, "n_eval": 5000, "seeds": [0, 1, 2],
      "metrics": ["R2", "MCC"], "pipelines": []
    }

Unknown keys are rejected at every level.
"""

from __future__ import annotations

import concurrent.futures as cf
import copy
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from .contrastive import OutputSpace, SimilarityKernel, TrainConfig, encode, train
from .disentangle import pipeline_ica, pipeline_pca_ica
from .errors import ConfigError
from .genmodel import LatentSpaceSpec, PairedDataset, build_mixer, generate_pairs
from .metrics import evaluate_run, mcc
from .rand import RngState

log = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "run_id",
    "spec_name",
    "seed",
    "geometry",
    "prior",
    "conditional",
    "model_space",
    "model_kernel",
    "n",
    "r2",
    "mcc",
    "final_loss",
    "wall_time_s",
]
NUMERIC_COLUMNS = ["seed", "n", "r2", "mcc", "final_loss"]

_TOP_KEYS = {"name", "generative", "model", "n_samples", "n_eval", "seeds", "metrics", "pipelines"}
_GEN_KEYS = {"geometry", "dim", "prior", "conditional", "lo", "hi", "specific_dim", "mixer"}
_MIXER_KEYS = {"layers", "leak", "cond_max"}
_MODEL_KEYS = {"space", "kernel", "train"}
_SPACE_KEYS = {"kind", "dim", "lo", "hi"}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}
_METRICS = {"R2", "MCC"}
_PIPELINES = {"ICA", "PCA_ICA"}


def default_data_dir() -> Path:
    return Path(os.environ.get("LAB_DATA_DIR", "lab_data"))


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}")


@dataclass
class MixerParams:
    layers: int = 3
    leak: float = 0.2
    cond_max: float = 10.0


@dataclass
class ExperimentSpec:
    name: str
    latent: LatentSpaceSpec
    specific_dim: int
    mixer: MixerParams
    space: OutputSpace
    kernel: SimilarityKernel
    train: TrainConfig
    n_samples: int
    n_eval: int
    seeds: list[int]
    metrics: list[str] = field(default_factory=lambda: ["R2", "MCC"])
    pipelines: list[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict, where: str = "experiment") -> "ExperimentSpec":
        _reject_unknown(d, _TOP_KEYS, where)
        for key in ("name", "generative", "model", "seeds"):
            if key not in d:
                raise ConfigError(f"{where}: missing required key '{key}'")
        where = f"{where} '{d['name']}'"
        gen = d["generative"]
        _reject_unknown(gen, _GEN_KEYS, f"{where}.generative")
        mix = gen.get("mixer", {})
        _reject_unknown(mix, _MIXER_KEYS, f"{where}.generative.mixer")
        model = d["model"]
        _reject_unknown(model, _MODEL_KEYS, f"{where}.model")
        space = dict(model.get("space", {}))
        _reject_unknown(space, _SPACE_KEYS, f"{where}.model.space")
        tr = model.get("train", {})
        _reject_unknown(tr, _TRAIN_KEYS, f"{where}.model.train")
        _reject_unknown(gen.get("prior", {}), {"kind", "param"}, f"{where}.generative.prior")
        _reject_unknown(gen.get("conditional", {}), {"kind", "param", "beta"}, f"{where}.generative.conditional")
        _reject_unknown(model.get("kernel", {}), {"kind", "beta"}, f"{where}.model.kernel")
        for key in ("geometry", "dim", "conditional"):
            if key not in gen:
                raise ConfigError(f"{where}.generative: missing required key '{key}'")
        try:
            latent = LatentSpaceSpec.from_dict({k: v for k, v in gen.items() if k not in ("specific_dim", "mixer")})
            space.setdefault("dim", latent.dim)
            out = cls(
                name=str(d["name"]),
                latent=latent,
                specific_dim=int(gen.get("specific_dim", 5)),
                mixer=MixerParams(**mix),
                space=OutputSpace.from_dict(space),
                kernel=SimilarityKernel.from_dict(model.get("kernel", {"kind": "dot"})),
                train=TrainConfig(**tr),
                n_samples=int(d.get("n_samples", 5000)),
                n_eval=int(d.get("n_eval", d.get("n_samples", 5000))),
                seeds=[int(s) for s in d["seeds"]],
                metrics=list(d.get("metrics", ["R2", "MCC"])),
                pipelines=list(d.get("pipelines", [])),
            )
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
        if not out.seeds:
            raise ConfigError(f"{where}: seeds must be nonempty")
        if set(out.metrics) - _METRICS:
            raise ConfigError(f"{where}: metrics must be a subset of {sorted(_METRICS)}")
        if set(out.pipelines) - _PIPELINES:
            raise ConfigError(f"{where}: pipelines must be a subset of {sorted(_PIPELINES)}")
        if out.n_samples < 2 or out.n_eval < out.latent.dim + 2:
            raise ConfigError(f"{where}: n_samples/n_eval too small")
        return out

    def semantic_dict(self) -> dict:
        """Every field that influences the numbers; excludes name and seeds."""
        tr = self.train.to_dict()
        tr.pop("seed")
        return {
            "generative": {
                **self.latent.to_dict(),
                "specific_dim": self.specific_dim,
                "mixer": dataclasses.asdict(self.mixer),
            },
            "model": {"space": self.space.to_dict(), "kernel": self.kernel.to_dict(), "train": tr},
            "n_samples": self.n_samples,
            "n_eval": self.n_eval,
            "metrics": sorted(self.metrics),
            "pipelines": sorted(self.pipelines),
        }

    def to_dict(self) -> dict:
        d = self.semantic_dict()
        return {"name": self.name, **d, "seeds": list(self.seeds)}

    @property
    def spec_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def label(self, part: str) -> str:
        if part == "conditional":
            c = self.latent.conditional
            return f"{c.kind.value}({c.param:g}" + (f",beta={c.beta:g})" if c.kind.value == "gennorm" else ")")
        if part == "prior":
            p = self.latent.prior
            return p.kind.value if p.kind.value == "uniform" else f"{p.kind.value}({p.param:g})"
        if part == "kernel":
            k = self.kernel
            return k.kind.value + (f"({k.beta:g})" if k.kind.value == "neg_lbeta" else "")
        raise KeyError(part)


def load_suite(path) -> tuple[str, list[ExperimentSpec]]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if "experiments" not in raw:
        return raw.get("name", path.stem), [ExperimentSpec.from_dict(raw, f"{path}")]
    _reject_unknown(raw, {"suite", "experiments", "description"}, str(path))
    specs = [ExperimentSpec.from_dict(e, f"{path}: experiments[{i}]") for i, e in enumerate(raw["experiments"])]
    names = [s.name for s in specs]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise ConfigError(f"{path}: duplicate experiment name(s) {sorted(dup)}")
    return raw.get("suite", path.stem), specs


def bundled_suite(name: str) -> Path:
    """Path of a suite file shipped with the package (e.g. ``table1a``)."""
    res = resources.files("identlab") / "suites" / f"{name}.json"
    with resources.as_file(res) as p:
        return Path(p)


def resolve_suite(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    try:
        b = bundled_suite(arg)
    except (FileNotFoundError, ModuleNotFoundError):
        b = None
    if b is not None and b.exists():
        return b
    raise ConfigError(f"no such suite file or bundled suite: {arg}")


# -- single runs ------------------------------------------------------------


@dataclass
class CellArtifacts:
    train: PairedDataset
    test: PairedDataset


def make_datasets(spec: ExperimentSpec, seed: int) -> CellArtifacts:
    root = RngState(seed).derive_child(spec.spec_hash)
    mx = build_mixer(root.derive_child("mixer_x"), spec.latent.dim, spec.specific_dim, **dataclasses.asdict(spec.mixer))
    mt = build_mixer(root.derive_child("mixer_t"), spec.latent.dim, spec.specific_dim, **dataclasses.asdict(spec.mixer))
    tr = generate_pairs(root.derive_child("train_data"), spec.latent, mx, mt, spec.n_samples, spec.specific_dim)
    te = generate_pairs(root.derive_child("eval_data"), spec.latent, mx, mt, spec.n_eval, spec.specific_dim)
    tr.seed = te.seed = seed
    return CellArtifacts(tr, te)


@dataclass
class RunRecord:
    run_id: str
    spec_name: str
    seed: int
    geometry: str
    prior: str
    conditional: str
    model_space: str
    model_kernel: str
    n: int
    r2: float
    mcc: float
    final_loss: float
    wall_time_s: float
    spec_hash: str = ""
    started: str = ""
    finished: str = ""
    error: str = ""
    extra: dict = field(default_factory=dict)

    def csv_row(self) -> list[str]:
        out = []
        for col in RESULT_COLUMNS:
            v = getattr(self, col)
            out.append(repr(float(v)) if isinstance(v, float) else str(v))
        return out


def run_id(spec: ExperimentSpec, seed: int) -> str:
    return f"{spec.name}-{spec.spec_hash[:10]}-s{seed}"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_cell(spec: ExperimentSpec, seed: int, save_dir: Path | None = None) -> RunRecord:
    """Generate, train and evaluate one (spec, seed) cell.

    Errors are captured into the record instead of propagating.
    """
    t0 = time.perf_counter()
    started = _now()
    rec = RunRecord(
        run_id=run_id(spec, seed),
        spec_name=spec.name,
        seed=seed,
        geometry=spec.latent.geometry.value,
        prior=spec.label("prior"),
        conditional=spec.label("conditional"),
        model_space=spec.space.kind.value,
        model_kernel=spec.label("kernel"),
        n=spec.n_samples,
        r2=float("nan"),
        mcc=float("nan"),
        final_loss=float("nan"),
        wall_time_s=0.0,
        spec_hash=spec.spec_hash,
        started=started,
    )
    try:
        data = make_datasets(spec, seed)
        cfg = dataclasses.replace(spec.train, seed=seed)
        rng = RngState(seed).derive_child(spec.spec_hash).derive_child("train")
        result = train(data.train.X, data.train.T, cfg, spec.space, spec.kernel, rng)
        final = float(result.loss_history[-1]) if len(result.loss_history) else float("nan")
        rep = evaluate_run(data.test, result.pair, final_loss=final, meta={"run_id": rec.run_id})
        rec.r2, rec.mcc, rec.final_loss = rep.r2, rep.mcc, final
        rec.extra["tau"] = result.pair.tau
        if spec.pipelines:
            zh = encode(result.pair, "x", data.test.X)
            k = spec.latent.dim
            prng = RngState(seed).derive_child(spec.spec_hash).derive_child("pipeline")
            if "ICA" in spec.pipelines:
                rec.extra["mcc_ica"] = mcc(data.test.Zx, pipeline_ica(zh, k, prng.derive_child("ica")))[0]
            if "PCA_ICA" in spec.pipelines:
                rec.extra["mcc_pca_ica"] = mcc(data.test.Zx, pipeline_pca_ica(zh, k, k, prng.derive_child("pca_ica")))[0]
        if save_dir is not None:
            cell = Path(save_dir) / rec.run_id
            result.pair.save(cell / "encoder")
            rep.save_json(cell / "eval.json")
            np.savetxt(cell / "loss_history.txt", result.loss_history)
    except Exception as exc:  # a failing cell must not abort the suite
        log.warning("cell %s failed: %s", rec.run_id, exc)
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.wall_time_s = time.perf_counter() - t0
    rec.finished = _now()
    return rec


def _run_cell_args(args):
    spec_dict, seed, save_dir = args
    return run_cell(ExperimentSpec.from_dict(spec_dict), seed, save_dir)


def run_suite(specs: list[ExperimentSpec], parallel: int = 1, save_dir: Path | None = None) -> list[RunRecord]:
    """Run every (spec, seed) cell; result order follows the suite, not
    completion order."""
    cells = [(s, seed) for s in specs for seed in s.seeds]
    if parallel <= 1 or len(cells) <= 1:
        return [run_cell(s, seed, save_dir) for s, seed in cells]
    jobs = [(s.to_dict(), seed, save_dir) for s, seed in cells]
    with cf.ProcessPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(_run_cell_args, jobs))


def write_results(records: list[RunRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in records:
            w.writerow(r.csv_row())
    side = {
        r.run_id: {
            "spec_hash": r.spec_hash,
            "started": r.started,
            "finished": r.finished,
            "error": r.error,
            **r.extra,
        }
        for r in records
    }
    path.with_suffix(".runs.json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path


def write_results_json(records: list[RunRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for r in records:
        d = dataclasses.asdict(r)
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = None
        rows.append(d)
    path.write_text(json.dumps(rows, indent=2) + "\n")
    return path


# -- reporting --------------------------------------------------------------


def format_mean_std(values: list[float]) -> str:
    """``mean ± sample-std`` in percent with one decimal."""
    arr = np.asarray(values, dtype=np.float64) * 100.0
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    text = f"{mean:.1f} ± {std:.1f}"
    return text + " (n=1)" if arr.size == 1 else text


def read_results(path) -> list[dict]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in RESULT_COLUMNS if c not in header]
        if missing:
            raise ConfigError(f"{path}: results CSV is missing column(s) {missing}")
        return list(reader)


def summarize(rows: list[dict]) -> list[dict]:
    groups: dict[str, list[dict]] = {}
    for r in rows:
        groups.setdefault(r["spec_name"], []).append(r)
    out = []
    for name, rs in groups.items():
        entry = {"spec_name": name, "n_runs": len(rs)}
        any_metric = False
        for metric in ("r2", "mcc"):
            vals = [float(r[metric]) for r in rs if r[metric] not in ("", None) and math.isfinite(float(r[metric]))]
            entry[f"{metric}_values"] = vals
            entry[metric] = format_mean_std(vals) if vals else ""
            any_metric = any_metric or bool(vals)
        if not any_metric:
            log.warning("group %s has no finite results; omitted", name)
            continue
        first = rs[0]
        entry.update({k: first[k] for k in ("geometry", "prior", "conditional", "model_space", "model_kernel")})
        out.append(entry)
    return out


def render_report(summary: list[dict]) -> str:
    cols = ["spec_name", "geometry", "prior", "conditional", "model_space", "model_kernel", "n_runs", "r2", "mcc"]
    heads = ["spec", "S", "p(z_x)", "p(z_t|z_x)", "model S", "kernel", "runs", "R2", "MCC"]
    table = [heads] + [[str(e[c]) for c in cols] for e in summary]
    widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def spec_template(name: str = "experiment") -> dict:
    """A complete experiment object with defaults filled in."""
    base = {
        "name": name,
        "generative": {
            "geometry": "sphere",
            "dim": 10,
            "prior": {"kind": "uniform"},
            "conditional": {"kind": "vmf", "param": 1.0},
            "specific_dim": 5,
            "mixer": dataclasses.asdict(MixerParams()),
        },
        "model": {"space": {"kind": "sphere"}, "kernel": {"kind": "dot"}, "train": {}},
        "n_samples": 5000,
        "seeds": [0, 1, 2],
    }
    return copy.deepcopy(base)
