"""Random hyperparameter search for the student and few-shot stages.

Candidates are sampled uniformly from declared value lists (budget 50
for the student stage, 15 for few-shot) and scored by validation macro
F1 after head fine-tuning with 25 labeled target windows per class on a
single fold, so the test splits stay untouched during model selection.
"""

from __future__ import annotations

import copy
import logging

import numpy as np

from .data import DatasetBundle
from .errors import ConfigurationError
from .metrics import ConfusionMatrix, macro_f1
from .pipeline import prepare_bundles, prepare_fold, run_student_stage
from .training import (
    TrainHP,
    encoder_from_checkpoint,
    fewshot_finetune,
    hyperparameter_search,
)

logger = logging.getLogger(__name__)

SELECTION_N_PER_CLASS = 25

STUDENT_SPACE: dict[str, list] = {
    "student.lr": [1e-4, 3e-4, 5e-4, 1e-3],
    "student.weight_decay": [1e-6, 1e-5, 1e-4],
    "student.batch_size": [64, 128, 256],
    "loss_weights.lambda1": [0.3, 0.5, 0.7, 0.9],
    "loss_weights.lambda2": [0.4, 0.6, 0.8, 1.0],
    "pseudo_label_threshold": [0.2, 0.3, 0.4, 0.5],
}

FEWSHOT_SPACE: dict[str, list] = {
    "fewshot.lr": [1e-4, 3e-4, 1e-3, 3e-3],
    "fewshot.weight_decay": [0.0, 1e-5, 1e-4],
    "fewshot.epochs": [30, 60, 100],
}

DEFAULT_BUDGETS = {"student": 50, "fewshot": 15}


def _set_dotted(config: dict, key: str, value) -> None:
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        node = node[part]
    node[parts[-1]] = value


def _apply_candidate(config: dict, candidate: dict) -> dict:
    out = copy.deepcopy(config)
    for key, value in candidate.items():
        _set_dotted(out, key, value)
    return out


def _validation_f1(
    config: dict, source: DatasetBundle, target: DatasetBundle, seed: int
) -> float:
    """Fine-tune a head on 25 windows/class of fold 0 and score the fold's
    *validation* users, never its test users."""
    fold_id = config["folds"][0]
    ckpt = run_student_stage(config, source, target, fold_id, seed, run_dir=None)
    fold_data = prepare_fold(config, source, target, fold_id, seed)
    result = fewshot_finetune(
        ckpt,
        fold_data["target"],
        SELECTION_N_PER_CLASS,
        fold_data["tgt_fold"],
        seed,
        TrainHP.from_dict(config["fewshot"]),
        eval_split="val",
    )
    return result.test_f1


def run_search(
    config: dict,
    stage: str = "student",
    budget: int | None = None,
    source: DatasetBundle | None = None,
    target: DatasetBundle | None = None,
) -> tuple[dict, list[tuple[dict, float]]]:
    """Search one stage's hyperparameters; returns (best candidate, all scored
    candidates)."""
    if stage not in DEFAULT_BUDGETS:
        raise ConfigurationError(f"unknown search stage {stage!r}")
    if budget is None:
        budget = DEFAULT_BUDGETS[stage]
    space = STUDENT_SPACE if stage == "student" else FEWSHOT_SPACE
    if source is None or target is None:
        source, target = prepare_bundles(config)
    seed = config["seeds"][0]

    def evaluate(candidate: dict) -> float:
        variant = _apply_candidate(config, candidate)
        score = _validation_f1(variant, source, target, seed)
        logger.info("candidate %s -> val F1 %.4f", candidate, score)
        return score

    best, results = hyperparameter_search(space, budget=budget, seed=seed, eval_fn=evaluate)
    return best, results
