"""Shared fixtures: small synthetic bundles and a cached trained teacher."""

from __future__ import annotations

import pytest

from hartransfer import config as cfg
from hartransfer import synthetic
from hartransfer.pipeline import prepare_fold
from hartransfer.training import TrainHP, train_teacher


@pytest.fixture(scope="session")
def small_source():
    return synthetic.synthetic_source_bundle(n_users=6, windows_per_class=4)


@pytest.fixture(scope="session")
def small_target():
    return synthetic.synthetic_target_bundle(n_users=6, windows_per_class=6)


@pytest.fixture()
def tiny_config():
    c = cfg.default_config()
    c["seeds"] = [0]
    c["folds"] = [0]
    c["n_per_class"] = [2, 5]
    c["teacher"].update(epochs=15, patience=15, batch_size=32)
    c["student"].update(epochs=4, patience=4, batch_size=64)
    c["fewshot"].update(epochs=10)
    c["simclr"].update(epochs=2, batch_size=64)
    c["cpc"].update(epochs=2, batch_size=32)
    c["synthetic"] = {
        "source": {"n_users": 6, "windows_per_class": 4},
        "target": {"n_users": 6, "windows_per_class": 6},
    }
    return c


@pytest.fixture(scope="session")
def fold_data(small_source, small_target):
    """Fold 0 of the small bundles, normalized and 9x-augmented."""
    c = cfg.default_config()
    return prepare_fold(c, small_source, small_target, fold_id=0, seed=0)


@pytest.fixture(scope="session")
def trained_teacher(fold_data):
    """A teacher trained well enough to emit confident pseudo-labels."""
    hp = TrainHP(lr=1e-3, weight_decay=1e-5, batch_size=128, epochs=12, patience=12)
    result = train_teacher(fold_data["source_train"], fold_data["src_fold"], hp, seed=0)
    return result
