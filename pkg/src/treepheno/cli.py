"""``treepheno`` command line: synth, preprocess, train, finetune, encode,
cluster, evaluate, reproduce (and ``all`` to chain them)."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import synthtree, voxform
from .autoenc.checkpoint import load_checkpoint, save_checkpoint
from .autoenc.model import Architecture
from .autoenc.train import encode, fine_tune, train
from .cluster.io import read_assignments, read_features_bin, write_assignments, write_features_bin, write_features_csv
from .cluster.ksweep import write_sweep_csv
from .cluster.pca import FeatureMatrix
from .cluster.repro import ClusterRun, cluster_features, reproducibility_suite
from .cluster.louvain import Clustering
from .config import FINE_TUNED, PipelineConfig, sub_seed
from .errors import EmptyReference, MissingArtifact, PipelineError
from .evalmetrics import (ReconReport, adjusted_rand_index, fold_summary, mean_report, rand_index,
                          recon_metrics, threshold, write_json, write_recon_csv)
from .skel2d import skeletonize
from .volume import read_lvol, write_lvol

log = logging.getLogger("treepheno")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_PARTIAL, EXIT_MISSING = 0, 1, 2, 3, 4


class Workspace:
    """Artifact paths under the output directory."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = Path(cfg.out)
        self.hash = cfg.config_hash()

    @property
    def cohort(self) -> Path:
        return self.root / "cohort"

    @property
    def manifest(self) -> Path:
        return self.cohort / "manifest.csv"

    def mips(self, variant: str) -> Path:
        return self.root / "mips" / variant

    def models(self, label: str) -> Path:
        return self.root / "models" / label

    def features(self, variant: str) -> Path:
        return self.root / "features" / f"{variant}.feat"

    def clusters(self, variant: str) -> Path:
        return self.root / "clusters" / variant

    def meta(self, path: Path, command: str, **extra) -> None:
        """Sidecar ``<stem>.meta.json`` carrying the config hash."""
        payload = {"config_hash": self.hash, "command": command, "seed": self.cfg.seed, **extra}
        write_json(path.with_name(path.stem + ".meta.json"), payload)

    def require(self, path: Path, command: str) -> Path:
        if not path.exists():
            raise MissingArtifact(path, command)
        return path


def _csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _architecture(cfg: PipelineConfig) -> Architecture:
    return Architecture(input_size=cfg.preprocess.mip_size, channels=tuple(cfg.model.channels))


def _manifest(ws: Workspace) -> list[tuple[str, int, int]]:
    return synthtree.read_manifest(ws.require(ws.manifest, "synth"))


def load_variant(ws: Workspace, variant: str) -> tuple[list[str], np.ndarray, np.ndarray]:
    """All preprocessed stacks of one variant in manifest order: ids, (N,3,S,S), labels."""
    directory = ws.require(ws.mips(variant), f"preprocess --variants {variant}")
    ids, stacks, labels = [], [], []
    for sid, label, _ in _manifest(ws):
        if not voxform.stack_paths(directory, sid)[1].exists():
            log.warning("%s has no %s stack; skipped", sid, variant)
            continue
        ids.append(sid)
        stacks.append(voxform.read_mipstack(directory, sid).views)
        labels.append(label)
    if not ids:
        raise MissingArtifact(directory, f"preprocess --variants {variant}")
    return ids, np.stack(stacks), np.array(labels)


# -- synth -------------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig, args) -> int:
    ws = Workspace(cfg)
    ws.cohort.mkdir(parents=True, exist_ok=True)
    rows = []
    base = cfg.seeds()["synth"]
    for sid, spec, vol in synthtree.iter_cohort(cfg.synth.n_per_class, base,
                                                volume_dims=tuple(cfg.synth.volume_dims)):
        write_lvol(ws.cohort / f"{sid}.lvol", vol)
        rows.append((sid, spec.shape_class, spec.seed))
    synthtree.write_manifest(ws.manifest, rows)
    ws.meta(ws.manifest, "synth", base_seed=base, columns=["subject_id", "class_label", "seed"])
    log.info("wrote %d volumes to %s", len(rows), ws.cohort)
    return EXIT_OK


# -- preprocess --------------------------------------------------------------

def _preprocess_subject(job) -> dict | None:
    root, sid, label, variants, size, chash = job
    try:
        vol = read_lvol(Path(root) / "cohort" / f"{sid}.lvol")
        aligned = voxform.apply_alignment(vol, voxform.compute_alignment(vol))
    except (PipelineError, OSError) as exc:
        return {"subject_id": sid, "variant": "*", "error": f"{type(exc).__name__}: {exc}"}
    failures = []
    for v in variants:
        try:
            stack = voxform.preprocess(vol, v, size, sid, aligned=aligned)
            voxform.write_mipstack(Path(root) / "mips" / v, stack,
                                   {"config_hash": chash, "class_label": label})
        except (PipelineError, OSError) as exc:
            failures.append({"subject_id": sid, "variant": v, "error": f"{type(exc).__name__}: {exc}"})
    return failures or None


def cmd_preprocess(cfg: PipelineConfig, args) -> int:
    ws = Workspace(cfg)
    variants = args.variants or cfg.preprocess.variants
    for v in variants:
        voxform.parse_variant(v)
        ws.mips(v).mkdir(parents=True, exist_ok=True)
    jobs = [(str(ws.root), sid, label, variants, cfg.preprocess.mip_size, ws.hash)
            for sid, label, _ in _manifest(ws)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_preprocess_subject, jobs))
    else:
        results = [_preprocess_subject(j) for j in jobs]
    errors = []
    for r in results:
        if isinstance(r, dict):
            errors.append(r)
        elif r:
            errors.extend(r)
    write_json(ws.root / "mips" / "errors.json", {"config_hash": ws.hash, "errors": errors})
    for e in errors:
        log.error("%s [%s]: %s", e["subject_id"], e["variant"], e["error"])
    log.info("preprocessed %d subjects x %d variants, %d errors", len(jobs), len(variants), len(errors))
    return EXIT_PARTIAL if errors else EXIT_OK


# -- train / finetune --------------------------------------------------------

def _write_curve(ws: Workspace, path: Path, history, command: str) -> None:
    _csv(path, ["fold", "epoch", "lr", "train_loss", "val_loss"],
         [(r.fold, r.epoch, f"{r.lr:.10g}", f"{r.train_loss:.10g}", f"{r.val_loss:.10g}") for r in history])
    ws.meta(path, command)


def cmd_train(cfg: PipelineConfig, args) -> int:
    ws = Workspace(cfg)
    seeds = cfg.seeds()
    for variant in ([args.variant] if args.variant else cfg.model.train_variants):
        ids, x, labels = load_variant(ws, variant)
        out = ws.models(variant)
        out.mkdir(parents=True, exist_ok=True)
        result = train(x, labels, cfg.train, _architecture(cfg), seed=seeds["init"], fold_seed=seeds["folds"])
        for f in result.folds:
            save_checkpoint(out / f"fold{f.fold}.ckpt", f.model, epoch=f.best_epoch, loss=f.best_val_loss,
                            config_hash=ws.hash, variant=variant, fold=f.fold)
        b = result.best
        save_checkpoint(out / "best.ckpt", b.model, epoch=b.best_epoch, loss=b.best_val_loss,
                        config_hash=ws.hash, variant=variant, fold=b.fold)
        fold_of = {ids[i]: f.fold for f in result.folds for i in f.val_idx}
        write_json(out / "summary.json", {
            "config_hash": ws.hash, "variant": variant, "best_fold": result.best_fold,
            "folds": [{"fold": f.fold, "best_val_loss": f.best_val_loss, "best_epoch": f.best_epoch,
                       "epochs_run": f.epochs_run} for f in result.folds],
            "validation_fold": fold_of,
        })
        _write_curve(ws, out / "loss_curve.csv", result.history, "train")
        log.info("%s: best fold %d (val loss %.5f)", variant, result.best_fold, b.best_val_loss)
    return EXIT_OK


def cmd_finetune(cfg: PipelineConfig, args) -> int:
    """Fine-tune the best model on the training subjects of its fold only."""
    ws = Workspace(cfg)
    base = cfg.model.train_variants[0]
    src = ws.models(base)
    model, header = load_checkpoint(ws.require(src / "best.ckpt", f"train --variant {base}"))
    summary = json.loads((src / "summary.json").read_text())
    best = summary["best_fold"]
    ids, x, _ = load_variant(ws, cfg.model.finetune_variant)
    held_out = {sid for sid, f in summary["validation_fold"].items() if f == best}
    rows = [i for i, sid in enumerate(ids) if sid not in held_out]
    tuned, history = fine_tune(model, x[rows], cfg.train, seed=sub_seed(cfg.seed, "finetune"))
    out = ws.models(FINE_TUNED)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("best.ckpt", f"fold{best}.ckpt"):
        save_checkpoint(out / name, tuned, epoch=len(history), loss=history[-1].train_loss,
                        config_hash=ws.hash, variant=cfg.model.finetune_variant, base=base, fold=best)
    write_json(out / "summary.json", {
        "config_hash": ws.hash, "variant": cfg.model.finetune_variant, "base": base, "best_fold": best,
        "epochs": len(history), "initial_lr": history[0].lr,
        "validation_fold": summary["validation_fold"],
    })
    _write_curve(ws, out / "finetune_curve.csv", history, "finetune")
    log.info("fine-tuned %s on %s for %d epochs", base, cfg.model.finetune_variant, len(history))
    return EXIT_OK


# -- encode / cluster / reproduce ---------------------------------------------

def _encoder_for(ws: Workspace, variant: str):
    cfg = ws.cfg
    if variant == cfg.model.finetune_variant:
        path, command = ws.models(FINE_TUNED) / "best.ckpt", "finetune"
    else:
        base = cfg.model.train_variants[0]
        path, command = ws.models(base) / "best.ckpt", f"train --variant {base}"
    return load_checkpoint(ws.require(path, command))[0]


def cmd_encode(cfg: PipelineConfig, args) -> int:
    ws = Workspace(cfg)
    for variant in ([args.variant] if args.variant else cfg.cluster_variants):
        model = _encoder_for(ws, variant)
        ids, x, _ = load_variant(ws, variant)
        feats = encode(model, x, cfg.model.encode_batch)
        fm = FeatureMatrix(feats.reshape(len(feats), -1), ids,
                           {"kind": "bottleneck", "shape": list(feats.shape[1:])})
        path = ws.features(variant)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_features_bin(path, fm, config_hash=ws.hash, variant=variant)
        if args.csv:
            write_features_csv(path.with_suffix(".csv"), fm)
            ws.meta(path.with_suffix(".csv"), "encode", variant=variant)
        log.info("%s: %d x %d features", variant, fm.n, fm.d)
    return EXIT_OK


def _planted(ws: Workspace, ids: list[str]) -> np.ndarray:
    labels = {sid: c for sid, c, _ in _manifest(ws)}
    return np.array([labels[s] for s in ids])


def cmd_cluster(cfg: PipelineConfig, args) -> int:
    ws = Workspace(cfg)
    ccfg = cfg.cluster if args.k is None else cfg.override("cluster.k", args.k).cluster
    for variant in ([args.variant] if args.variant else cfg.cluster_variants):
        fm = read_features_bin(ws.require(ws.features(variant), f"encode --variant {variant}"))
        run = cluster_features(fm, ccfg, seed=cfg.seeds()["louvain"])
        out = ws.clusters(variant)
        out.mkdir(parents=True, exist_ok=True)
        write_assignments(out / "assignments.csv", run.ids, run.clustering.labels)
        ws.meta(out / "assignments.csv", "cluster", variant=variant, columns=["subject_id", "label"])
        if run.curve is not None:
            write_sweep_csv(out / "ksweep.csv", run.curve)
            ws.meta(out / "ksweep.csv", "cluster", variant=variant, columns=["k", "n_clusters", "modularity"])
        planted = _planted(ws, run.ids)
        summary = {
            "config_hash": ws.hash, "variant": variant, "k": run.k,
            "n_clusters": run.clustering.n_clusters, "modularity": run.clustering.modularity,
            "pca_components": run.pca_components, "variance_explained": run.variance_explained,
            "ri_vs_planted": rand_index(run.clustering.labels, planted),
            "ari_vs_planted": adjusted_rand_index(run.clustering.labels, planted),
        }
        write_json(out / "summary.json", summary)
        print(f"C({variant}): k={run.k} clusters={summary['n_clusters']} "
              f"ARI vs planted={summary['ari_vs_planted']:.3f}")
    return EXIT_OK


def cmd_reproduce(cfg: PipelineConfig, args) -> int:
    ws = Workspace(cfg)
    for variant in ([args.variant] if args.variant else cfg.cluster_variants):
        fm = read_features_bin(ws.require(ws.features(variant), f"encode --variant {variant}"))
        out = ws.clusters(variant)
        ids, labels = read_assignments(ws.require(out / "assignments.csv", f"cluster --variant {variant}"))
        summary = json.loads((out / "summary.json").read_text())
        if ids != fm.ids:
            raise PipelineError(f"{out / 'assignments.csv'} does not match {ws.features(variant)}")
        reference = ClusterRun(Clustering(labels, summary["k"], cfg.seeds()["louvain"], summary["modularity"]),
                               ids, summary["k"], summary["pca_components"], summary["variance_explained"])
        report = reproducibility_suite(fm, reference, cfg.cluster, seed=cfg.seeds()["louvain"])
        report["config_hash"] = ws.hash
        write_json(out / "reproducibility.json", report)
        _csv(out / "ari_vs_k.csv", ["k", "n_clusters", "ri", "ari"],
             [(r["k"], r["n_clusters"], f"{r['ri']:.10g}", f"{r['ari']:.10g}") for r in report["k_curve"]])
        ws.meta(out / "ari_vs_k.csv", "reproduce", variant=variant)
        print(f"C({variant}) reproducibility (RI / ARI vs reference):")
        print(f"  subsets        {report['subsets_mean_ri']:.3f} / {report['subsets_mean_ari']:.3f}")
        print(f"  {report['alt_metric']['metric']:<14} {report['alt_metric']['ri']:.3f} / "
              f"{report['alt_metric']['ari']:.3f}")
        print(f"  pca {report['alt_dim']['pca_components']:<10} {report['alt_dim']['ri']:.3f} / "
              f"{report['alt_dim']['ari']:.3f}")
    return EXIT_OK


# -- evaluate -----------------------------------------------------------------

def _view_reports(truth: np.ndarray, pred: np.ndarray) -> list[ReconReport | None]:
    out = []
    for m, m_hat in zip(truth > 0.5, pred):
        try:
            out.append(recon_metrics(m, m_hat, skeletonize(m), skeletonize(m_hat)))
        except EmptyReference:
            out.append(None)
    return out


def _evaluate_pair(ws: Workspace, model_label: str, data_variant: str, identity: bool, rows: list) -> dict:
    ids, x, _ = load_variant(ws, data_variant)
    if identity:
        folds = {0: (None, list(range(len(ids))))}
    else:
        mdir = ws.models(model_label)
        command = "finetune" if model_label == FINE_TUNED else f"train --variant {model_label}"
        summary = json.loads(ws.require(mdir / "summary.json", command).read_text())
        fold_of = summary["validation_fold"]
        folds = {}
        for ckpt in sorted(mdir.glob("fold*.ckpt")):
            k = int(ckpt.stem[4:])
            folds[k] = (ckpt, [i for i, s in enumerate(ids) if fold_of.get(s) == k])
    per_fold = []
    for k, (ckpt, members) in sorted(folds.items()):
        if not members:
            continue
        model = None if identity else load_checkpoint(ckpt)[0]
        reports = []
        for start in range(0, len(members), ws.cfg.model.encode_batch):
            idx = members[start:start + ws.cfg.model.encode_batch]
            batch = x[idx]
            pred = batch > 0.5 if identity else threshold(model.forward(batch)[0])
            for j, i in enumerate(idx):
                for view, r in zip(voxform.VIEW_ORDER, _view_reports(batch[j], pred[j])):
                    if r is None:
                        continue
                    reports.append(r)
                    rows.append({"train_data": "identity" if identity else model_label,
                                 "eval_data": data_variant, "fold": k, "subject_id": ids[i], "view": view,
                                 "dice": r.dice, "fpr": r.fpr, "tl": r.tl, "cl": r.cl})
        per_fold.append(mean_report(reports))
    return fold_summary(per_fold)


def cmd_evaluate(cfg: PipelineConfig, args) -> int:
    ws = Workspace(cfg)
    identity = args.identity_model or cfg.evaluate.identity_model
    out = ws.root / "eval"
    out.mkdir(parents=True, exist_ok=True)
    rows, table = [], []
    for model_label, data_variant in cfg.evaluate.pairs:
        summary = _evaluate_pair(ws, model_label, data_variant, identity, rows)
        table.append({"train_data": "identity" if identity else model_label, "eval_data": data_variant,
                      **summary})
    write_recon_csv(out / "recon.csv", rows)
    ws.meta(out / "recon.csv", "evaluate", identity_model=identity)
    write_json(out / "summary.json", {"config_hash": ws.hash, "identity_model": identity, "table": table})
    print(f"{'train/eval':<22}{'Dice':>16}{'FPR':>16}{'TL':>16}{'CL':>16}")
    for t in table:
        cells = "".join(f"{t[m]['mean']:>9.3f}±{t[m]['sd']:<6.3f}" for m in ("dice", "fpr", "tl", "cl"))
        print(f"{t['train_data'] + '/' + t['eval_data']:<22}{cells}")
    return EXIT_OK


def cmd_all(cfg: PipelineConfig, args) -> int:
    code = EXIT_OK
    for step in (cmd_synth, cmd_preprocess, cmd_train, cmd_finetune, cmd_encode, cmd_cluster,
                 cmd_evaluate, cmd_reproduce):
        rc = step(cfg, args)
        if rc not in (EXIT_OK, EXIT_PARTIAL):
            return rc
        code = max(code, rc)
    return code


def cmd_config(cfg: PipelineConfig, args) -> int:
    print(json.dumps({**cfg.to_dict(), "config_hash": cfg.config_hash()}, indent=2, sort_keys=True))
    return EXIT_OK


# -- argument handling ----------------------------------------------------------

COMMANDS = {
    "synth": (cmd_synth, "generate the synthetic cohort"),
    "preprocess": (cmd_preprocess, "volumes to MIP stacks (D/ND x T/NT)"),
    "train": (cmd_train, "cross-validated autoencoder training"),
    "finetune": (cmd_finetune, "fine-tune the best model on trachea-masked stacks"),
    "encode": (cmd_encode, "bottleneck features"),
    "cluster": (cmd_cluster, "PCA, kNN graph, Louvain, k selection"),
    "evaluate": (cmd_evaluate, "reconstruction metrics across folds"),
    "reproduce": (cmd_reproduce, "cluster reproducibility variants"),
    "all": (cmd_all, "run every step in order"),
    "config": (cmd_config, "print the resolved configuration"),
}


def _json_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config (default: <out>/config.json if present)")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out", type=Path)
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set train.max_epochs=30")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="treepheno", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, parents=[common], help=text) for name, (_, text) in COMMANDS.items()}
    for name in ("synth", "all"):
        parsers[name].add_argument("--n-per-class", type=int)
    for name in ("preprocess", "all"):
        parsers[name].add_argument("--variants", nargs="+")
    for name in ("train", "encode", "cluster", "reproduce", "all"):
        parsers[name].add_argument("--variant")
    for name in ("encode", "all"):
        parsers[name].add_argument("--csv", action="store_true", help="also write features as CSV")
    for name in ("cluster", "all"):
        parsers[name].add_argument("--k", type=int, help="fixed k instead of the plateau rule")
    for name in ("evaluate", "all"):
        parsers[name].add_argument("--identity-model", action="store_true",
                                   help="use ground truth as prediction (metric pipeline check)")
    return parser


def resolve_config(args) -> PipelineConfig:
    path = args.config
    if path is None and args.out is not None and (args.out / "config.json").exists():
        path = args.out / "config.json"
    cfg = PipelineConfig.load(path) if path else PipelineConfig()
    overrides = [item.split("=", 1) for item in args.set]
    if any(len(o) != 2 for o in overrides):
        raise ValueError("--set expects KEY=VALUE")
    for key, value in overrides:
        cfg = cfg.override(key, _json_value(value))
    for key, attr in (("seed", "seed"), ("jobs", "jobs"), ("out", "out")):
        if getattr(args, attr) is not None:
            cfg = cfg.override(key, str(args.out) if key == "out" else getattr(args, attr))
    if getattr(args, "n_per_class", None) is not None:
        cfg = cfg.override("synth.n_per_class", args.n_per_class)
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("variants", "variant", "csv", "k", "identity_model"):
        if not hasattr(args, name):
            setattr(args, name, None)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        for v in (args.variants or []) + ([args.variant] if args.variant else []):
            voxform.parse_variant(v)
    except (ValueError, TypeError, OSError) as exc:
        parser.error(str(exc))
    if args.command != "config":
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        cfg.save(Path(cfg.out) / "config.json")
    handler = COMMANDS[args.command][0]
    try:
        code = handler(cfg, args)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except PipelineError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if code == EXIT_PARTIAL:
        print("completed with per-subject errors; see the errors.json report", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
