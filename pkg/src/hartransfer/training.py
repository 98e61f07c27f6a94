"""The four pipeline stages plus the self-supervised baseline pre-training.

Stages: teacher training on augmented source data, confidence-filtered
pseudo-label generation, student training with the combined
CE + consistency (KL) + contrastive (NT-Xent) loss, and few-shot
fine-tuning of a fresh head on the frozen encoder.

Every stage is deterministic given (config, seed): model construction is
seeded through torch, batch order through numpy, and on-the-fly
augmentation through per-window seed streams.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import augment
from .data import DatasetBundle, FoldSpec, SensorWindow, as_arrays
from .errors import ConfigurationError, FoldError, TrainingError
from .losses import kl_consistency_loss, nt_xent_loss
from .metrics import ConfusionMatrix, macro_f1
from .models import (
    Checkpoint,
    CPCModule,
    ModelGraphSpec,
    build_module,
    cpc_stack_spec,
    encoder_spec,
    mlp_head_spec,
    projection_head_spec,
    weight_hash,
)

logger = logging.getLogger(__name__)


@dataclass
class LossWeights:
    lambda1: float = 0.7  # KL consistency term
    lambda2: float = 0.8  # SimCLR term


@dataclass
class PseudoLabelEntry:
    window_index: int
    soft_label: np.ndarray
    max_prob: float


@dataclass
class PseudoLabelSet:
    entries: list[PseudoLabelEntry]
    threshold: float
    n_excluded: int = 0


@dataclass
class TrainHP:
    lr: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 256
    epochs: int = 100
    patience: int = 15

    @classmethod
    def from_dict(cls, blob: dict) -> "TrainHP":
        known = {k: blob[k] for k in ("lr", "weight_decay", "batch_size", "epochs", "patience") if k in blob}
        return cls(**known)


@dataclass
class StageResult:
    checkpoint: Checkpoint
    train_loss: list[float]
    val_loss: list[float]
    val_f1: list[float]
    step_records: list[dict]
    wall_time: float
    seed: int
    test_f1: float | None = None
    extra: dict = field(default_factory=dict)


class ClassifierModel(nn.Module):
    """Encoder + MLP classifier head, checkpointable as one unit."""

    def __init__(self, enc_spec: ModelGraphSpec, head_spec: ModelGraphSpec):
        super().__init__()
        self.enc_spec = enc_spec
        self.head_spec = head_spec
        self.encoder = build_module(enc_spec)
        self.head = build_module(head_spec)
        self.fingerprint = hashlib.sha256(
            (self.encoder.fingerprint + self.head.fingerprint).encode()
        ).hexdigest()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(x))


def classifier_checkpoint(model: ClassifierModel, stage: str, seed: int, config_hash: str = "") -> Checkpoint:
    return Checkpoint.from_module(
        model, stage=stage, seed=seed, config_hash=config_hash,
        extra={"encoder_spec": model.enc_spec.to_dict(), "head_spec": model.head_spec.to_dict()},
    )


def classifier_from_checkpoint(ckpt: Checkpoint) -> ClassifierModel:
    model = ClassifierModel(
        ModelGraphSpec.from_dict(ckpt.extra["encoder_spec"]),
        ModelGraphSpec.from_dict(ckpt.extra["head_spec"]),
    )
    ckpt.load_into(model)
    return model


class FrozenEncoder:
    """Frozen embedding function recovered from a stage checkpoint."""

    def __init__(self, module: nn.Module, dim: int):
        self.module = module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.dim = dim

    def __call__(self, X: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            if isinstance(self.module, CPCModule):
                return self.module.embed(X)
            return self.module(X)

    def weight_hash(self) -> str:
        return weight_hash(self.module)


def encoder_from_checkpoint(ckpt: Checkpoint) -> FrozenEncoder:
    spec = ModelGraphSpec.from_dict(ckpt.extra["encoder_spec"])
    module = build_module(spec)
    prefix = ckpt.extra.get("encoder_prefix", "encoder.")
    state = {
        k[len(prefix):]: torch.as_tensor(v)
        for k, v in ckpt.weights.items()
        if k.startswith(prefix)
    }
    if not state:  # checkpoint holds the bare encoder
        state = {k: torch.as_tensor(v) for k, v in ckpt.weights.items()}
    module.load_state_dict(state)
    dim = spec.meta.get("embed_dim", spec.output_dim)
    return FrozenEncoder(module, dim)


# ---------------------------------------------------------------------------
# Shared training loop
# ---------------------------------------------------------------------------


def _to_tensor(windows: list[SensorWindow]) -> tuple[torch.Tensor, torch.Tensor]:
    X, y = as_arrays(windows)
    return torch.from_numpy(X), torch.from_numpy(y)


def _check_finite(value: float, context: str) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss ({value}) during {context}")


def _eval_classifier(model: nn.Module, X: torch.Tensor, y: torch.Tensor,
                     n_classes: int, batch_size: int = 512) -> tuple[float, float]:
    model.eval()
    losses, preds = [], []
    with torch.no_grad():
        for start in range(0, len(X), batch_size):
            logits = model(X[start : start + batch_size])
            losses.append(F.cross_entropy(logits, y[start : start + batch_size], reduction="sum").item())
            preds.append(logits.argmax(dim=1))
    model.train()
    y_pred = torch.cat(preds).numpy()
    cm = ConfusionMatrix.from_predictions(y.numpy(), y_pred, n_classes)
    return sum(losses) / len(X), macro_f1(cm)


def _train_classifier_loop(
    model: ClassifierModel,
    train: tuple[torch.Tensor, torch.Tensor],
    val: tuple[torch.Tensor, torch.Tensor],
    hp: TrainHP,
    seed: int,
    n_classes: int,
    stage: str,
    extra_step=None,
    extra_params=(),
) -> StageResult:
    """Cross-entropy training with optional per-step extra loss terms.

    `extra_step(step_index) -> (extra_loss, record)` is consulted once per
    optimizer step; when it is None the loop degrades to plain source CE
    training with an identical random stream.
    """
    t0 = time.time()
    Xtr, ytr = train
    Xval, yval = val
    opt = torch.optim.AdamW(
        list(model.parameters()) + list(extra_params), lr=hp.lr, weight_decay=hp.weight_decay
    )
    batch_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A1]))

    best_state = copy.deepcopy(model.state_dict())
    best_f1 = -1.0
    bad_epochs = 0
    train_curve, val_curve, f1_curve, step_records = [], [], [], []
    step_index = 0

    model.train()
    for epoch in range(hp.epochs):
        perm = batch_rng.permutation(len(Xtr))
        epoch_losses = []
        for start in range(0, len(perm), hp.batch_size):
            idx = perm[start : start + hp.batch_size]
            logits = model(Xtr[idx])
            ce = F.cross_entropy(logits, ytr[idx])
            record = {"ce": float(ce.item())}
            loss = ce
            if extra_step is not None:
                extra_loss, extra_record = extra_step(step_index)
                loss = loss + extra_loss
                record.update(extra_record)
            record["total"] = float(loss.item())
            _check_finite(record["total"], f"{stage} epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(record["total"])
            step_records.append(record)
            step_index += 1

        train_curve.append(float(np.mean(epoch_losses)))
        val_loss, val_f1 = _eval_classifier(model, Xval, yval, n_classes)
        val_curve.append(val_loss)
        f1_curve.append(val_f1)
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_state = copy.deepcopy(model.state_dict())
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= hp.patience:
                logger.info("%s: early stop at epoch %d (best val F1 %.4f)", stage, epoch, best_f1)
                break

    model.load_state_dict(best_state)
    ckpt = classifier_checkpoint(model, stage=stage, seed=seed)
    return StageResult(
        checkpoint=ckpt,
        train_loss=train_curve,
        val_loss=val_curve,
        val_f1=f1_curve,
        step_records=step_records,
        wall_time=time.time() - t0,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Stage 1: teacher
# ---------------------------------------------------------------------------


def train_teacher(
    source: DatasetBundle,
    fold: FoldSpec,
    hp: TrainHP,
    seed: int,
    encoder_arch: str = "conv",
    init_encoder: Checkpoint | None = None,
    stage: str = "teacher",
) -> StageResult:
    """Supervised training on the (augmented) source bundle.

    Selects the best-validation-F1 epoch; with a zero epoch budget the
    initial weights are checkpointed unchanged.
    """
    torch.manual_seed(seed)
    train_windows = source.split_windows(fold, "train")
    val_windows = source.split_windows(fold, "val")
    if not train_windows or not val_windows:
        raise FoldError(f"fold {fold.fold_id} has an empty train or val split")
    T, C = train_windows[0].samples.shape
    model = ClassifierModel(encoder_spec(encoder_arch, (T, C)), mlp_head_spec(128, source.n_classes))
    if init_encoder is not None:
        _load_encoder_weights(model, init_encoder)
    return _train_classifier_loop(
        model,
        _to_tensor(train_windows),
        _to_tensor(val_windows),
        hp,
        seed,
        source.n_classes,
        stage=stage,
    )


def _load_encoder_weights(model: ClassifierModel, ckpt: Checkpoint) -> None:
    state = {
        k[len("encoder."):]: torch.as_tensor(v)
        for k, v in ckpt.weights.items()
        if k.startswith("encoder.")
    }
    if not state:
        raise ConfigurationError("checkpoint contains no encoder weights")
    model.encoder.load_state_dict(state)


def naive_transfer(
    source: DatasetBundle, fold: FoldSpec, hp: TrainHP, seed: int, encoder_arch: str = "conv"
) -> StageResult:
    """Supervised source training whose encoder is frozen for downstream
    few-shot evaluation; identical to teacher training by construction."""
    return train_teacher(source, fold, hp, seed, encoder_arch, stage="naive")


# ---------------------------------------------------------------------------
# Stage 2: pseudo-labels
# ---------------------------------------------------------------------------


def pseudo_label(
    teacher: Checkpoint,
    target: DatasetBundle,
    threshold: float = 0.30,
    seed: int = 0,
    fold: FoldSpec | None = None,
    weak: bool = True,
    expected_classes: int | None = None,
) -> PseudoLabelSet:
    """Soft teacher labels on weakly augmented target windows, filtered by
    the maximum-probability threshold. Exclusion counts are reported.

    With `weak=False` (consistency ablation) the original, unperturbed
    windows are used instead.
    """
    model = classifier_from_checkpoint(teacher)
    n_classes = model.head_spec.output_dim
    if expected_classes is not None and expected_classes != n_classes:
        raise ConfigurationError(
            f"teacher predicts {n_classes} classes, expected {expected_classes}"
        )
    model.eval()

    if fold is not None:
        pool = [
            (i, w) for i, w in enumerate(target.windows)
            if w.user in fold.train_users or w.user in fold.val_users
        ]
    else:
        pool = list(enumerate(target.windows))

    seeds = np.random.SeedSequence([seed, 0x3E4]).generate_state(max(1, len(pool)))
    augmented = []
    for k, (_, w) in enumerate(pool):
        augmented.append(augment.weak_augment(w, int(seeds[k])) if weak else w)

    X, _ = as_arrays(augmented)
    probs = []
    with torch.no_grad():
        for start in range(0, len(X), 512):
            logits = model(torch.from_numpy(X[start : start + 512]))
            probs.append(F.softmax(logits, dim=1).numpy())
    probs = np.concatenate(probs) if probs else np.zeros((0, n_classes))

    entries = []
    excluded = 0
    for (index, _), p in zip(pool, probs):
        top = float(p.max())
        if top >= threshold:
            entries.append(PseudoLabelEntry(window_index=index, soft_label=p.astype(np.float64), max_prob=top))
        else:
            excluded += 1
    logger.info("pseudo-label filter: kept %d, excluded %d (threshold %.2f)",
                len(entries), excluded, threshold)
    return PseudoLabelSet(entries=entries, threshold=threshold, n_excluded=excluded)


# ---------------------------------------------------------------------------
# Stage 3: student
# ---------------------------------------------------------------------------


def train_student(
    teacher: Checkpoint,
    source: DatasetBundle,
    target: DatasetBundle,
    pseudo: PseudoLabelSet | None,
    weights: LossWeights,
    hp: TrainHP,
    seed: int,
    source_fold: FoldSpec,
    target_fold: FoldSpec | None = None,
    nt_xent_temperature: float = 0.1,
    kl_direction: str = "pseudo_to_student",
    consistency: bool = True,
) -> StageResult:
    """Student training with loss = CE(source) + lambda1*KL + lambda2*NT-Xent.

    The student encoder starts from the teacher's encoder weights; the
    classifier head is fresh. Loss terms with a zero weight are skipped
    entirely, so a lambda1=lambda2=0 run consumes the same random stream
    as plain source CE training.
    """
    if weights.lambda1 > 0:
        if pseudo is None or not pseudo.entries:
            raise TrainingError(
                "pseudo-label set is empty; reduce pseudo_label_threshold and regenerate"
            )
    torch.manual_seed(seed)

    train_windows = source.split_windows(source_fold, "train")
    val_windows = source.split_windows(source_fold, "val")
    T, C = train_windows[0].samples.shape
    enc_spec = ModelGraphSpec.from_dict(teacher.extra["encoder_spec"])
    model = ClassifierModel(enc_spec, mlp_head_spec(128, source.n_classes))
    _load_encoder_weights(model, teacher)

    projection = None
    extra_params: list = []
    if weights.lambda2 > 0:
        projection = build_module(projection_head_spec(enc_spec.output_dim))
        extra_params = list(projection.parameters())

    if target_fold is not None:
        target_pool = [
            w for w in target.windows
            if w.user in target_fold.train_users or w.user in target_fold.val_users
        ]
    else:
        target_pool = list(target.windows)
    if weights.lambda2 > 0 and len(target_pool) < 2:
        raise TrainingError("need at least 2 target windows for the contrastive term")

    kl_windows = [target.windows[e.window_index] for e in (pseudo.entries if pseudo else [])]
    kl_soft = (
        np.stack([e.soft_label for e in pseudo.entries]).astype(np.float32)
        if pseudo and pseudo.entries
        else None
    )

    aug_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x57A6]))
    kl_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1D1]))
    sim_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x51B]))

    def sample_kl_batch():
        idx = kl_rng.choice(len(kl_windows), size=min(hp.batch_size, len(kl_windows)), replace=False)
        if consistency:
            batch = [
                augment.strong_augment(kl_windows[i], int(aug_rng.integers(2**31 - 1)))
                for i in idx
            ]
        else:
            batch = [kl_windows[i] for i in idx]
        X, _ = as_arrays(batch)
        return torch.from_numpy(X), torch.from_numpy(kl_soft[idx])

    def sample_sim_batch():
        idx = sim_rng.choice(len(target_pool), size=min(hp.batch_size, len(target_pool)), replace=False)
        views = []
        for i in idx:
            if consistency:
                a, b = augment.simclr_views(target_pool[i], int(aug_rng.integers(2**31 - 1)))
            else:
                a = b = target_pool[i]
            views.extend([a, b])
        X, _ = as_arrays(views)
        return torch.from_numpy(X)

    def extra_step(step_index: int):
        record = {}
        loss = torch.zeros(())
        if weights.lambda1 > 0:
            Xk, soft = sample_kl_batch()
            logits = model(Xk)
            if kl_direction == "pseudo_to_student":
                kl = kl_consistency_loss(logits, soft)
            elif kl_direction == "student_to_pseudo":
                log_q = F.log_softmax(logits, dim=1)
                q = log_q.exp()
                log_p = torch.log(soft.clamp_min(1e-12))
                kl = (q * (log_q - log_p)).sum(dim=1).mean()
            else:
                raise ConfigurationError(f"unknown kl_direction {kl_direction!r}")
            record["kl"] = float(kl.item())
            loss = loss + weights.lambda1 * kl
        if weights.lambda2 > 0:
            Xs = sample_sim_batch()
            emb = projection(model.encoder(Xs))
            sim = nt_xent_loss(emb, nt_xent_temperature)
            record["sim"] = float(sim.item())
            loss = loss + weights.lambda2 * sim
        return loss, record

    use_extra = extra_step if (weights.lambda1 > 0 or weights.lambda2 > 0) else None
    result = _train_classifier_loop(
        model,
        _to_tensor(train_windows),
        _to_tensor(val_windows),
        hp,
        seed,
        source.n_classes,
        stage="student",
        extra_step=use_extra,
        extra_params=extra_params,
    )
    result.extra["lambda1"] = weights.lambda1
    result.extra["lambda2"] = weights.lambda2
    return result


# ---------------------------------------------------------------------------
# Stage 4: few-shot fine-tuning
# ---------------------------------------------------------------------------


def sample_fewshot_windows(
    target: DatasetBundle, fold: FoldSpec, n_per_class: int, rng: np.random.Generator
) -> list[SensorWindow]:
    """Draw up to n labeled windows per class from the fold's train split."""
    pool = [w for w in target.split_windows(fold, "train") if w.label is not None]
    by_class: dict[int, list[SensorWindow]] = {}
    for w in pool:
        by_class.setdefault(w.label, []).append(w)

    missing = [c for c in range(target.n_classes) if c not in by_class]
    if missing:
        raise FoldError(
            f"fold {fold.fold_id}: classes {missing} absent from the train split"
        )
    sampled = []
    for label in sorted(by_class):
        windows = by_class[label]
        if len(windows) < n_per_class:
            logger.warning(
                "class %d has only %d windows (< n=%d); using all of them",
                label, len(windows), n_per_class,
            )
            sampled.extend(windows)
        else:
            idx = rng.choice(len(windows), size=n_per_class, replace=False)
            sampled.extend(windows[i] for i in idx)
    return sampled


def _auto_batch_size(n_windows: int) -> int:
    # Scale with the sampled set so each epoch makes a couple of passes.
    return int(np.clip(n_windows // 3, 2, 64))


def fewshot_finetune(
    student: Checkpoint,
    target: DatasetBundle,
    n_per_class: int,
    fold: FoldSpec,
    seed: int,
    hp: TrainHP,
    eval_split: str = "test",
) -> StageResult:
    """Train a fresh MLP head on n labeled target windows per class.

    The encoder is fully frozen (weights and normalization statistics);
    this is asserted by hashing its weights before and after. The fold's
    test split is only used for the final evaluation; model selection
    passes `eval_split="val"` to keep the test users untouched.
    """
    t0 = time.time()
    torch.manual_seed(seed)
    encoder = encoder_from_checkpoint(student)
    hash_before = encoder.weight_hash()

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF5]))
    train_windows = sample_fewshot_windows(target, fold, n_per_class, rng)
    test_windows = [w for w in target.split_windows(fold, eval_split) if w.label is not None]
    if not test_windows:
        raise FoldError(f"fold {fold.fold_id} has no labeled {eval_split} windows")

    head = build_module(mlp_head_spec(encoder.dim, target.n_classes))
    Xtr, ytr = _to_tensor(train_windows)
    Xte, yte = _to_tensor(test_windows)
    Etr = encoder(Xtr)
    Ete = encoder(Xte)

    batch_size = hp.batch_size if hp.batch_size else _auto_batch_size(len(train_windows))
    opt = torch.optim.AdamW(head.parameters(), lr=hp.lr, weight_decay=hp.weight_decay)
    batch_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB4]))

    train_curve = []
    head.train()
    for _epoch in range(hp.epochs):
        perm = batch_rng.permutation(len(Etr))
        losses = []
        for start in range(0, len(perm), batch_size):
            idx = perm[start : start + batch_size]
            if len(idx) < 2:  # batch-norm needs more than one row
                continue
            loss = F.cross_entropy(head(Etr[idx]), ytr[idx])
            _check_finite(loss.item(), "fewshot")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        train_curve.append(float(np.mean(losses)) if losses else float("nan"))

    head.eval()
    with torch.no_grad():
        preds = head(Ete).argmax(dim=1).numpy()
    cm = ConfusionMatrix.from_predictions(yte.numpy(), preds, target.n_classes)
    test_f1 = macro_f1(cm)

    hash_after = encoder.weight_hash()
    if hash_before != hash_after:
        raise TrainingError("encoder weights changed during few-shot fine-tuning")

    ckpt = Checkpoint.from_module(head, stage="fewshot", seed=seed,
                                  extra={"n_per_class": n_per_class, "fold": fold.fold_id})
    return StageResult(
        checkpoint=ckpt,
        train_loss=train_curve,
        val_loss=[],
        val_f1=[],
        step_records=[],
        wall_time=time.time() - t0,
        seed=seed,
        test_f1=test_f1,
        extra={"confusion": cm.counts.tolist(), "encoder_hash": hash_after},
    )


# ---------------------------------------------------------------------------
# Self-supervised baselines
# ---------------------------------------------------------------------------


def pretrain_simclr(
    bundle: DatasetBundle,
    hp: TrainHP,
    seed: int,
    fold: FoldSpec | None = None,
    encoder_arch: str = "conv",
    temperature: float = 0.1,
) -> StageResult:
    """Contrastive pre-training on two augmented views per window.

    Uses the raw (not pre-augmented) bundle: the pretext task already
    applies random transforms from the eight-transform pool.
    """
    torch.manual_seed(seed)
    windows = (
        [w for w in bundle.windows if w.user not in fold.test_users] if fold else list(bundle.windows)
    )
    if len(windows) < 2:
        raise TrainingError("need at least 2 windows for contrastive pre-training")
    T, C = windows[0].samples.shape
    enc_spec = encoder_spec(encoder_arch, (T, C))
    model = _SimCLRModel(enc_spec)
    opt = torch.optim.AdamW(model.parameters(), lr=hp.lr, weight_decay=hp.weight_decay)
    batch_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x51]))
    aug_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA6]))

    t0 = time.time()
    curve = []
    batch_size = min(hp.batch_size, len(windows))
    model.train()
    for _epoch in range(hp.epochs):
        perm = batch_rng.permutation(len(windows))
        losses = []
        for start in range(0, len(perm), batch_size):
            idx = perm[start : start + batch_size]
            if len(idx) < 2:
                continue
            views = []
            for i in idx:
                a, b = augment.simclr_views(windows[i], int(aug_rng.integers(2**31 - 1)))
                views.extend([a, b])
            X, _ = as_arrays(views)
            loss = nt_xent_loss(model(torch.from_numpy(X)), temperature)
            _check_finite(loss.item(), "simclr")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        curve.append(float(np.mean(losses)))

    ckpt = Checkpoint.from_module(model, stage="simclr", seed=seed,
                                  extra={"encoder_spec": enc_spec.to_dict()})
    return StageResult(checkpoint=ckpt, train_loss=curve, val_loss=[], val_f1=[],
                       step_records=[], wall_time=time.time() - t0, seed=seed)


class _SimCLRModel(nn.Module):
    def __init__(self, enc_spec: ModelGraphSpec):
        super().__init__()
        self.encoder = build_module(enc_spec)
        self.projection = build_module(projection_head_spec(enc_spec.output_dim))
        self.fingerprint = hashlib.sha256(
            (self.encoder.fingerprint + self.projection.fingerprint).encode()
        ).hexdigest()

    def forward(self, x):
        return self.projection(self.encoder(x))


def pretrain_cpc(
    bundle: DatasetBundle,
    hp: TrainHP,
    seed: int,
    fold: FoldSpec | None = None,
    prediction_steps: int = 28,
) -> StageResult:
    """Future-timestep contrastive prediction on per-timestep conv features."""
    torch.manual_seed(seed)
    windows = (
        [w for w in bundle.windows if w.user not in fold.test_users] if fold else list(bundle.windows)
    )
    if len(windows) < 2:
        raise TrainingError("need at least 2 windows for CPC pre-training")
    T, C = windows[0].samples.shape
    spec = cpc_stack_spec((T, C), prediction_steps)
    model = CPCModule(spec)
    with torch.no_grad():
        t_latent = model.encoder(torch.zeros(1, T, C)).shape[1]
    if t_latent <= prediction_steps + 1:
        raise ConfigurationError(
            f"{prediction_steps} prediction steps do not fit in {t_latent} latent steps"
        )
    opt = torch.optim.AdamW(model.parameters(), lr=hp.lr, weight_decay=hp.weight_decay)
    batch_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC9]))
    X_all, _ = as_arrays(windows)
    X_all = torch.from_numpy(X_all)

    t0 = time.time()
    curve = []
    batch_size = min(hp.batch_size, len(windows))
    model.train()
    for _epoch in range(hp.epochs):
        perm = batch_rng.permutation(len(windows))
        losses = []
        for start in range(0, len(perm), batch_size):
            idx = perm[start : start + batch_size]
            if len(idx) < 2:
                continue
            z, c = model(X_all[idx])
            t_ctx = int(batch_rng.integers(0, t_latent - prediction_steps - 1))
            context = c[:, t_ctx]
            loss = torch.zeros(())
            for step, headmod in enumerate(model.prediction_heads, start=1):
                pred = headmod(context)  # (B, z_dim)
                targets = z[:, t_ctx + step]  # (B, z_dim)
                scores = pred @ targets.T
                labels = torch.arange(len(idx))
                loss = loss + F.cross_entropy(scores, labels)
            loss = loss / prediction_steps
            _check_finite(loss.item(), "cpc")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        curve.append(float(np.mean(losses)))

    enc_spec_blob = spec.to_dict()
    enc_spec_blob["meta"]["embed_dim"] = spec.output_dim
    ckpt = Checkpoint.from_module(model, stage="cpc", seed=seed,
                                  extra={"encoder_spec": enc_spec_blob, "encoder_prefix": ""})
    return StageResult(checkpoint=ckpt, train_loss=curve, val_loss=[], val_f1=[],
                       step_records=[], wall_time=time.time() - t0, seed=seed)


# ---------------------------------------------------------------------------
# Hyperparameter search
# ---------------------------------------------------------------------------


def hyperparameter_search(
    space: dict[str, list],
    budget: int,
    seed: int,
    eval_fn,
) -> tuple[dict, list[tuple[dict, float]]]:
    """Random search: sample `budget` configs uniformly from the declared
    value lists and pick the one with the highest eval_fn score."""
    if not space or any(not values for values in space.values()):
        raise ConfigurationError("search space is empty")
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(budget):
        candidate = {key: values[rng.integers(len(values))] for key, values in space.items()}
        results.append((candidate, float(eval_fn(candidate))))
    best = max(results, key=lambda pair: pair[1])
    return best[0], results
