"""Command-line entry point: ``identlab <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import lab
from .contrastive import EncoderPair, train
from .disentangle import Pipeline, fit_pipeline_ica, fit_pipeline_pca_ica
from .errors import ConfigError, LabError
from .genmodel import PairedDataset
from .matio import MatrixFormatError, load_matrix, save_matrix
from .metrics import evaluate_run
from .rand import RngState

log = logging.getLogger("identlab")


def _pick_spec(config: str, name: str | None) -> lab.ExperimentSpec:
    _, specs = lab.load_suite(lab.resolve_suite(config))
    if name is None:
        if len(specs) > 1:
            log.info("config holds %d experiments; using the first (%s)", len(specs), specs[0].name)
        return specs[0]
    for s in specs:
        if s.name == name:
            return s
    raise ConfigError(f"{config}: no experiment named '{name}' (have {[s.name for s in specs]})")


def _seed(spec: lab.ExperimentSpec, seed: int | None) -> int:
    return spec.seeds[0] if seed is None else seed


def cmd_generate(args) -> int:
    spec = _pick_spec(args.config, args.spec)
    seed = _seed(spec, args.seed)
    out = Path(args.out) if args.out else lab.default_data_dir() / "datasets" / spec.name / f"seed_{seed}"
    data = lab.make_datasets(spec, seed).train
    data.extra["spec_name"] = spec.name
    data.extra["spec_hash"] = spec.spec_hash
    data.save(out)
    print(out)
    return 0


def cmd_train(args) -> int:
    spec = _pick_spec(args.config, args.spec)
    seed = _seed(spec, args.seed)
    data = PairedDataset.load(args.data)
    out = Path(args.out) if args.out else lab.default_data_dir() / "encoders" / spec.name / f"seed_{seed}"
    cfg = dataclasses.replace(spec.train, seed=seed)
    rng = RngState(seed).derive_child(spec.spec_hash).derive_child("train")
    t0 = time.perf_counter()
    res = train(data.X, data.T, cfg, spec.space, spec.kernel, rng)
    res.pair.save(out)
    np.savetxt(out / "loss_history.txt", res.loss_history)
    log.info("trained in %.1fs, final loss %.4f", time.perf_counter() - t0, res.loss_history[-1])
    print(out)
    return 0


def cmd_evaluate(args) -> int:
    data = PairedDataset.load(args.data)
    pair = EncoderPair.load(args.encoder)
    hist = Path(args.encoder) / "loss_history.txt"
    final = float(np.atleast_1d(np.loadtxt(hist))[-1]) if hist.exists() else float("nan")
    rep = evaluate_run(data, pair, final_loss=final, symmetric=args.symmetric)
    if args.format == "json":
        text = json.dumps(rep.to_dict(), indent=2, sort_keys=True)
    else:
        text = "r2,mcc,final_loss\n" + f"{rep.r2!r},{rep.mcc!r},{final!r}"
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_run(args) -> int:
    suite_name, specs = lab.load_suite(lab.resolve_suite(args.config))
    if args.seed is not None:
        specs = [dataclasses.replace(s, seeds=[args.seed]) for s in specs]
    out = Path(args.out) if args.out else lab.default_data_dir() / "runs" / suite_name
    out.mkdir(parents=True, exist_ok=True)
    records = lab.run_suite(specs, args.parallel, out / "cells" if args.save_models else None)
    if args.format == "json":
        path = lab.write_results_json(records, out / "results.json")
    else:
        path = lab.write_results(records, out / "results.csv")
    failed = [r for r in records if r.error]
    for r in failed:
        print(f"cell {r.run_id} failed: {r.error}", file=sys.stderr)
    print(path)
    return 1 if failed and len(failed) == len(records) else 0


def cmd_report(args) -> int:
    summary = lab.summarize(lab.read_results(args.config))
    if args.format == "json":
        print(json.dumps(summary, indent=2))
    else:
        print(lab.render_report(summary))
    return 0


def cmd_ica(args) -> int:
    data = load_matrix(args.input)
    if args.model:
        pipe = Pipeline.load(args.model)
    else:
        rng = RngState(args.seed if args.seed is not None else 0).derive_child("ica")
        k = args.k if args.k is not None else data.shape[1]
        if args.mode == "PCA_ICA":
            k_pca = args.k_pca if args.k_pca is not None else k
            pipe = fit_pipeline_pca_ica(data, k_pca, k, rng, nonlinearity=args.nonlinearity)
        else:
            pipe = fit_pipeline_ica(data, k, rng, nonlinearity=args.nonlinearity)
        if not pipe.ica.converged:
            log.warning("FastICA did not converge in %d iterations", pipe.ica.iterations_used)
        pipe.save(args.model_out or f"{args.out}.model")
    save_matrix(args.out, pipe.transform(data))
    print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="identlab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_help="experiment or suite JSON (path or bundled suite name)"):
        sp.add_argument("--config", required=True, help=config_help)
        sp.add_argument("--out", help="output path (defaults under $LAB_DATA_DIR)")
        sp.add_argument("--seed", type=int, help="override the seed")
        return sp

    g = common(sub.add_parser("generate", help="sample and save a paired dataset"))
    g.add_argument("--spec", help="experiment name inside a suite")
    g.set_defaults(func=cmd_generate)

    t = common(sub.add_parser("train", help="train an encoder pair on a saved dataset"))
    t.add_argument("--spec", help="experiment name inside a suite")
    t.add_argument("--data", required=True, help="dataset directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score saved encoders against a dataset's true latents")
    e.add_argument("--encoder", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.add_argument("--symmetric", action="store_true", help="also score the t-side encoder")
    e.add_argument("--format", choices=["csv", "json"], default="json")
    e.set_defaults(func=cmd_evaluate)

    r = common(sub.add_parser("run", help="run every (experiment, seed) cell of a suite"))
    r.add_argument("--parallel", type=int, default=1)
    r.add_argument("--format", choices=["csv", "json"], default="csv")
    r.add_argument("--save-models", action="store_true")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="summarize a results CSV as mean ± std per experiment")
    rep.add_argument("--config", required=True, help="results CSV")
    rep.add_argument("--format", choices=["csv", "json"], default="csv", help="csv prints a text table")
    rep.set_defaults(func=cmd_report)

    i = sub.add_parser("ica", help="FastICA (optionally after PCA) on an embedding matrix")
    i.add_argument("--input", required=True, help="MIDL or CSV matrix")
    i.add_argument("--out", required=True, help="output matrix (.csv or MIDL)")
    i.add_argument("--mode", choices=["ICA", "PCA_ICA"], default="ICA")
    i.add_argument("--k", type=int, help="number of components")
    i.add_argument("--k-pca", type=int, help="PCA dimension before ICA")
    i.add_argument("--nonlinearity", choices=["logcosh", "cube"], default="logcosh")
    i.add_argument("--seed", type=int)
    i.add_argument("--model", help="apply a saved model instead of fitting")
    i.add_argument("--model-out", help="where to save the fitted model (default <out>.model)")
    i.set_defaults(func=cmd_ica)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (LabError, MatrixFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
