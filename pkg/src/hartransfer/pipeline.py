"""Experiment runner: stage orchestration, artifact caching, manifests.

Artifacts live under `<run_dir>/<stage>/`; each artifact has a sidecar
`<name>.manifest.json` recording the stage config hash, seed, fold and
input artifact hashes. A stage is skipped when its manifest matches the
current config (cache hit); changing any upstream hyperparameter changes
the stage hash and invalidates the stage and everything downstream.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import synthetic
from .augment import augment_source
from .config import stage_hash
from .data import (
    DatasetBundle,
    FoldSpec,
    fit_stats,
    ingest,
    load_bundle,
    make_folds,
    normalize_bundle,
    save_bundle,
)
from .errors import ConfigurationError, DependencyError
from .models import Checkpoint
from .reporting import MetricsReport, RunRecord
from .training import (
    LossWeights,
    PseudoLabelEntry,
    PseudoLabelSet,
    TrainHP,
    fewshot_finetune,
    naive_transfer,
    pretrain_cpc,
    pretrain_simclr,
    pseudo_label,
    train_student,
    train_teacher,
)

logger = logging.getLogger(__name__)

METHODS = ("crossdomain", "naive", "simclr", "cpc", "supervised")


# ---------------------------------------------------------------------------
# Bundle preparation
# ---------------------------------------------------------------------------


def prepare_bundles(config: dict) -> tuple[DatasetBundle, DatasetBundle]:
    source = _prepare_bundle(config, config["source"])
    target = _prepare_bundle(config, config["target"])
    return source, target


def _prepare_bundle(config: dict, name: str) -> DatasetBundle:
    syn = config.get("synthetic", {})
    if name == "synthetic_source":
        return synthetic.synthetic_source_bundle(**syn.get("source", {}))
    if name == "synthetic_target":
        return synthetic.synthetic_target_bundle(**syn.get("target", {}))
    root = Path(config["datasets_root"])
    window = config["window"]
    cache = root / f"{name}_w{window['length']}_o{window['overlap']}_r{window['rate_hz']}.npz"
    if cache.exists():
        bundle = load_bundle(cache)
    else:
        bundle = ingest(root / name)
        if not bundle.folds:
            bundle.folds = make_folds(set(bundle.users), seed=0)
        save_bundle(bundle, cache)
    if not bundle.folds:
        bundle.folds = make_folds(set(bundle.users), seed=0)
    return bundle


_FOLD_CACHE: dict[tuple, dict] = {}


def prepare_fold(
    config: dict,
    source: DatasetBundle,
    target: DatasetBundle,
    fold_id: int,
    seed: int,
) -> dict:
    """Normalize both bundles with the fold's *source* train statistics and
    build the (optionally augmented) source training bundle."""
    key = (id(source), id(target), fold_id, seed, config["ablation"]["source_augmentation"])
    if key in _FOLD_CACHE:
        return _FOLD_CACHE[key]
    src_fold = source.folds[fold_id]
    tgt_fold = target.folds[fold_id]
    stats = fit_stats(source.split_windows(src_fold, "train"))
    src_norm = normalize_bundle(source, stats)
    tgt_norm = normalize_bundle(target, stats)
    if config["ablation"]["source_augmentation"]:
        src_train = augment_source(src_norm, seed=np.random.SeedSequence([seed, 0xA9]).generate_state(1)[0])
    else:
        src_train = src_norm
    fold_data = {
        "source": src_norm,
        "source_train": src_train,
        "target": tgt_norm,
        "src_fold": src_fold,
        "tgt_fold": tgt_fold,
        "stats": stats,
    }
    if len(_FOLD_CACHE) > 8:
        _FOLD_CACHE.clear()
    _FOLD_CACHE[key] = fold_data
    return fold_data


# ---------------------------------------------------------------------------
# Manifest-based caching
# ---------------------------------------------------------------------------


def _artifact_paths(run_dir: Path, stage: str, name: str) -> tuple[Path, Path]:
    stage_dir = Path(run_dir) / stage
    stage_dir.mkdir(parents=True, exist_ok=True)
    return stage_dir / name, stage_dir / f"{name}.manifest.json"


def _manifest_matches(manifest_path: Path, expected_hash: str) -> bool:
    if not manifest_path.exists():
        return False
    try:
        return json.loads(manifest_path.read_text()).get("stage_hash") == expected_hash
    except (json.JSONDecodeError, OSError):
        return False


def _write_manifest(manifest_path: Path, stage: str, expected_hash: str,
                    seed: int, fold: int, inputs: dict | None = None) -> None:
    manifest_path.write_text(
        json.dumps(
            {"stage": stage, "stage_hash": expected_hash, "seed": seed,
             "fold": fold, "inputs": inputs or {}},
            indent=2,
        )
    )


def _require_upstream(run_dir: Path | None, stage: str, name: str, expected_hash: str) -> Path:
    if run_dir is None:
        raise DependencyError(f"stage {stage!r} must be run first")
    artifact, manifest = _artifact_paths(run_dir, stage, name)
    if not artifact.exists() or not _manifest_matches(manifest, expected_hash):
        raise DependencyError(
            f"missing or stale {stage} artifact {artifact.name}; rerun stage {stage!r}"
        )
    return artifact


# ---------------------------------------------------------------------------
# Stage runners
# ---------------------------------------------------------------------------


def run_teacher_stage(
    config: dict, source: DatasetBundle, target: DatasetBundle,
    fold_id: int, seed: int, run_dir: Path | None = None,
) -> Checkpoint:
    h = stage_hash(config, "teacher", seed=seed, fold=fold_id)
    name = f"teacher_fold{fold_id}_seed{seed}.pt"
    if run_dir is not None:
        artifact, manifest = _artifact_paths(run_dir, "teacher", name)
        if artifact.exists() and _manifest_matches(manifest, h):
            logger.info("teacher cache hit: %s", artifact.name)
            return Checkpoint.load(artifact)
    fold_data = prepare_fold(config, source, target, fold_id, seed)
    result = train_teacher(
        fold_data["source_train"], fold_data["src_fold"],
        TrainHP.from_dict(config["teacher"]), seed, encoder_arch=config["encoder"],
    )
    ckpt = result.checkpoint
    ckpt.config_hash = h
    if run_dir is not None:
        artifact, manifest = _artifact_paths(run_dir, "teacher", name)
        ckpt.save(artifact)
        _write_manifest(manifest, "teacher", h, seed, fold_id)
        _save_curves(run_dir, "teacher", name, result)
    return ckpt


def _save_curves(run_dir: Path, stage: str, name: str, result) -> None:
    path = Path(run_dir) / stage / f"{name}.curves.csv"
    lines = ["epoch,train_loss,val_loss,val_f1"]
    for i, tl in enumerate(result.train_loss):
        vl = result.val_loss[i] if i < len(result.val_loss) else ""
        vf = result.val_f1[i] if i < len(result.val_f1) else ""
        lines.append(f"{i},{tl},{vl},{vf}")
    path.write_text("\n".join(lines) + "\n")


def run_pseudolabel_stage(
    config: dict, source: DatasetBundle, target: DatasetBundle,
    fold_id: int, seed: int, run_dir: Path | None = None,
) -> PseudoLabelSet:
    h = stage_hash(config, "pseudolabel", seed=seed, fold=fold_id)
    name = f"pseudo_fold{fold_id}_seed{seed}.npz"
    if run_dir is not None:
        artifact, manifest = _artifact_paths(run_dir, "pseudolabel", name)
        if artifact.exists() and _manifest_matches(manifest, h):
            logger.info("pseudolabel cache hit: %s", artifact.name)
            return _load_pseudo(artifact)

    teacher_hash = stage_hash(config, "teacher", seed=seed, fold=fold_id)
    if run_dir is not None:
        teacher_path = _require_upstream(run_dir, "teacher", f"teacher_fold{fold_id}_seed{seed}.pt", teacher_hash)
        teacher = Checkpoint.load(teacher_path)
    else:
        teacher = run_teacher_stage(config, source, target, fold_id, seed)

    fold_data = prepare_fold(config, source, target, fold_id, seed)
    pseudo = pseudo_label(
        teacher,
        fold_data["target"],
        threshold=config["pseudo_label_threshold"],
        seed=seed,
        fold=fold_data["tgt_fold"],
        weak=config["ablation"]["consistency"],
    )
    if run_dir is not None:
        artifact, manifest = _artifact_paths(run_dir, "pseudolabel", name)
        _save_pseudo(pseudo, artifact)
        _write_manifest(manifest, "pseudolabel", h, seed, fold_id, inputs={"teacher": teacher_hash})
    return pseudo


def _save_pseudo(pseudo: PseudoLabelSet, path: Path) -> None:
    np.savez_compressed(
        path,
        indices=np.array([e.window_index for e in pseudo.entries], dtype=np.int64),
        soft=np.stack([e.soft_label for e in pseudo.entries]) if pseudo.entries else np.zeros((0, 0)),
        threshold=np.array(pseudo.threshold),
        n_excluded=np.array(pseudo.n_excluded),
    )


def _load_pseudo(path: Path) -> PseudoLabelSet:
    with np.load(path) as blob:
        entries = [
            PseudoLabelEntry(
                window_index=int(i), soft_label=s, max_prob=float(s.max())
            )
            for i, s in zip(blob["indices"], blob["soft"])
        ]
        return PseudoLabelSet(
            entries=entries,
            threshold=float(blob["threshold"]),
            n_excluded=int(blob["n_excluded"]),
        )


def run_student_stage(
    config: dict, source: DatasetBundle, target: DatasetBundle,
    fold_id: int, seed: int, run_dir: Path | None = None,
) -> Checkpoint:
    h = stage_hash(config, "student", seed=seed, fold=fold_id)
    name = f"student_fold{fold_id}_seed{seed}.pt"
    if run_dir is not None:
        artifact, manifest = _artifact_paths(run_dir, "student", name)
        if artifact.exists() and _manifest_matches(manifest, h):
            logger.info("student cache hit: %s", artifact.name)
            return Checkpoint.load(artifact)

    teacher_hash = stage_hash(config, "teacher", seed=seed, fold=fold_id)
    pseudo_hash = stage_hash(config, "pseudolabel", seed=seed, fold=fold_id)
    if run_dir is not None:
        teacher = Checkpoint.load(
            _require_upstream(run_dir, "teacher", f"teacher_fold{fold_id}_seed{seed}.pt", teacher_hash)
        )
        pseudo = _load_pseudo(
            _require_upstream(run_dir, "pseudolabel", f"pseudo_fold{fold_id}_seed{seed}.npz", pseudo_hash)
        )
    else:
        teacher = run_teacher_stage(config, source, target, fold_id, seed)
        pseudo = run_pseudolabel_stage(config, source, target, fold_id, seed)

    fold_data = prepare_fold(config, source, target, fold_id, seed)
    weights = LossWeights(
        lambda1=config["loss_weights"]["lambda1"],
        lambda2=config["loss_weights"]["lambda2"] if config["ablation"]["simclr_loss"] else 0.0,
    )
    result = train_student(
        teacher,
        fold_data["source_train"],
        fold_data["target"],
        pseudo,
        weights,
        TrainHP.from_dict(config["student"]),
        seed,
        fold_data["src_fold"],
        fold_data["tgt_fold"],
        nt_xent_temperature=config["nt_xent_temperature"],
        kl_direction=config["kl_direction"],
        consistency=config["ablation"]["consistency"],
    )
    ckpt = result.checkpoint
    ckpt.config_hash = h
    if run_dir is not None:
        artifact, manifest = _artifact_paths(run_dir, "student", name)
        ckpt.save(artifact)
        _write_manifest(manifest, "student", h, seed, fold_id,
                        inputs={"teacher": teacher_hash, "pseudolabel": pseudo_hash})
        _save_curves(run_dir, "student", name, result)
    return ckpt


def upstream_checkpoint(
    config: dict, source: DatasetBundle, target: DatasetBundle,
    method: str, fold_id: int, seed: int, run_dir: Path | None = None,
) -> Checkpoint | None:
    """Train (or load) the encoder-producing stage for a method."""
    if method == "crossdomain":
        return run_student_stage(config, source, target, fold_id, seed, run_dir)
    if method == "supervised":
        return None  # trained end-to-end per n inside the protocol

    h = stage_hash(config, "baseline", seed=seed, fold=fold_id)
    name = f"{method}_fold{fold_id}_seed{seed}.pt"
    if run_dir is not None:
        artifact, manifest = _artifact_paths(run_dir, "baseline", name)
        if artifact.exists() and _manifest_matches(manifest, h):
            logger.info("baseline cache hit: %s", artifact.name)
            return Checkpoint.load(artifact)

    fold_data = prepare_fold(config, source, target, fold_id, seed)
    if method == "naive":
        result = naive_transfer(
            fold_data["source_train"], fold_data["src_fold"],
            TrainHP.from_dict(config["teacher"]), seed, encoder_arch=config["encoder"],
        )
    elif method == "simclr":
        # the pretext task augments on the fly; use the raw source bundle
        result = pretrain_simclr(
            fold_data["source"], TrainHP.from_dict(config["simclr"]), seed,
            fold=fold_data["src_fold"], encoder_arch=config["encoder"],
            temperature=config["nt_xent_temperature"],
        )
    elif method == "cpc":
        result = pretrain_cpc(
            fold_data["source_train"], TrainHP.from_dict(config["cpc"]), seed,
            fold=fold_data["src_fold"],
            prediction_steps=config["cpc"]["prediction_steps"],
        )
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    ckpt = result.checkpoint
    ckpt.config_hash = h
    if run_dir is not None:
        artifact, manifest = _artifact_paths(run_dir, "baseline", name)
        ckpt.save(artifact)
        _write_manifest(manifest, "baseline", h, seed, fold_id)
    return ckpt


def run_method(
    config: dict,
    source: DatasetBundle,
    target: DatasetBundle,
    method: str = "crossdomain",
    run_dir: Path | None = None,
) -> MetricsReport:
    """The few-shot protocol: per (seed, fold, n) sample labeled target
    windows, fine-tune a head, and evaluate on the untouched fold test set."""
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {METHODS}")
    from .config import config_hash as _config_hash

    records = []
    fewshot_hp = TrainHP.from_dict(config["fewshot"])
    for seed in config["seeds"]:
        for fold_id in config["folds"]:
            ckpt = upstream_checkpoint(config, source, target, method, fold_id, seed, run_dir)
            fold_data = prepare_fold(config, source, target, fold_id, seed)
            for n in config["n_per_class"]:
                if method == "supervised":
                    f1 = _supervised_run(config, fold_data, n, seed)
                else:
                    result = fewshot_finetune(
                        ckpt, fold_data["target"], n, fold_data["tgt_fold"], seed, fewshot_hp
                    )
                    f1 = result.test_f1
                records.append(RunRecord(seed=seed, fold=fold_id, n_per_class=n, f1=f1))
                logger.info("%s seed=%d fold=%d n=%d -> F1 %.4f", method, seed, fold_id, n, f1)

    report = MetricsReport(
        method=method,
        target=target.name,
        n_values=list(config["n_per_class"]),
        seeds=list(config["seeds"]),
        records=records,
        config_hash=_config_hash(config),
        metadata={
            "macro_f1_convention": "classes absent from truth and prediction contribute 0 "
                                   "and count toward |C|",
        },
    )
    if run_dir is not None:
        report.save(Path(run_dir) / "results" / method / target.name)
    return report


def _supervised_run(config: dict, fold_data: dict, n: int, seed: int) -> float:
    """End-to-end classifier trained only on the n sampled target windows."""
    import torch

    from .data import DatasetBundle as _DB
    from .metrics import ConfusionMatrix, macro_f1
    from .training import _eval_classifier, sample_fewshot_windows  # noqa: F401
    from .training import ClassifierModel, _to_tensor
    from .models import encoder_spec, mlp_head_spec
    import torch.nn.functional as F

    target = fold_data["target"]
    fold = fold_data["tgt_fold"]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF5]))
    train_windows = sample_fewshot_windows(target, fold, n, rng)
    test_windows = [w for w in target.split_windows(fold, "test") if w.label is not None]

    torch.manual_seed(seed)
    T, C = train_windows[0].samples.shape
    model = ClassifierModel(encoder_spec(config["encoder"], (T, C)), mlp_head_spec(128, target.n_classes))
    hp = TrainHP.from_dict(config["fewshot"])
    batch_size = hp.batch_size if hp.batch_size else max(2, min(64, len(train_windows) // 3))
    opt = torch.optim.AdamW(model.parameters(), lr=hp.lr, weight_decay=hp.weight_decay)
    Xtr, ytr = _to_tensor(train_windows)
    Xte, yte = _to_tensor(test_windows)
    batch_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE2E]))
    model.train()
    for _epoch in range(hp.epochs):
        perm = batch_rng.permutation(len(Xtr))
        for start in range(0, len(perm), batch_size):
            idx = perm[start : start + batch_size]
            if len(idx) < 2:
                continue
            loss = F.cross_entropy(model(Xtr[idx]), ytr[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    model.eval()
    with torch.no_grad():
        preds = model(Xte).argmax(dim=1).numpy()
    cm = ConfusionMatrix.from_predictions(yte.numpy(), preds, target.n_classes)
    return macro_f1(cm)
