"""Seeded synthetic source/target datasets for desk-scale verification.

Each activity class is an oscillatory tri-axial signal with a
class-specific frequency and channel direction; users contribute small
DC offsets and gain differences. The target dataset reuses a subset of
the source classes but applies a per-user sensor rotation and a global
rescaling, emulating a different on-body placement.
"""

from __future__ import annotations

import numpy as np

from .augment import random_rotation_matrix
from .data import CANONICAL_WINDOW_LEN, DatasetBundle, SensorWindow, make_folds

SAMPLE_RATE_HZ = 50.0


def _class_basis(n_classes: int, seed: int = 1234) -> tuple[np.ndarray, np.ndarray]:
    """Shared class frequencies and channel directions; the same basis is
    used for source and target so the domains are related."""
    rng = np.random.default_rng(seed)
    freqs = 1.0 + 2.0 * np.arange(n_classes)  # 1, 3, 5, ... Hz
    directions = rng.normal(size=(n_classes, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return freqs, directions


def _make_window(
    rng: np.random.Generator,
    freq: float,
    direction: np.ndarray,
    user_offset: np.ndarray,
    scale: float,
    noise: float,
    T: int = CANONICAL_WINDOW_LEN,
) -> np.ndarray:
    t = np.arange(T) / SAMPLE_RATE_HZ
    phase = rng.uniform(0, 2 * np.pi)
    base = np.sin(2 * np.pi * freq * t + phase)
    second = 0.3 * np.sin(2 * np.pi * 2 * freq * t + phase * 1.7)
    ortho = np.cross(direction, [0.0, 0.0, 1.0])
    if np.linalg.norm(ortho) < 1e-6:
        ortho = np.cross(direction, [0.0, 1.0, 0.0])
    ortho /= np.linalg.norm(ortho)
    x = np.outer(base, direction) + np.outer(second, ortho)
    x = scale * x + user_offset
    x += rng.normal(0, noise, size=x.shape)
    return x.astype(np.float32)


def synthetic_source_bundle(
    n_classes: int = 6,
    n_users: int = 10,
    windows_per_class: int = 12,
    seed: int = 0,
    noise: float = 0.1,
) -> DatasetBundle:
    freqs, directions = _class_basis(max(n_classes, 6))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x50C]))
    windows = []
    for u in range(n_users):
        user = f"s{u:02d}"
        offset = rng.normal(0, 0.2, size=3)
        gain = rng.normal(1.0, 0.05)
        for c in range(n_classes):
            for _ in range(windows_per_class):
                x = _make_window(rng, freqs[c], directions[c], offset, gain, noise)
                windows.append(SensorWindow(samples=x, label=c, user=user, dataset="synthetic_source"))
    bundle = DatasetBundle(
        name="synthetic_source",
        windows=windows,
        class_map={f"act{c}": c for c in range(n_classes)},
    )
    bundle.folds = make_folds(set(bundle.users), seed=0)
    return bundle


def synthetic_target_bundle(
    n_classes: int = 4,
    n_users: int = 6,
    windows_per_class: int = 20,
    seed: int = 1,
    scale: float = 0.6,
    noise: float = 0.1,
    gain_sigma: float = 0.0,
    offset_sigma: float = 0.2,
) -> DatasetBundle:
    """Shifted-distribution target: per-user sensor rotation, per-user
    log-normal channel gains (`gain_sigma` > 0 emulates device/placement
    differences the source augmentations do not cover) and a global
    rescaling."""
    freqs, directions = _class_basis(max(n_classes, 6))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A6]))
    windows = []
    for u in range(n_users):
        user = f"t{u:02d}"
        offset = rng.normal(0, offset_sigma, size=3)
        rotation = random_rotation_matrix(rng)
        gains = np.exp(rng.normal(0, gain_sigma, size=3)) if gain_sigma > 0 else np.ones(3)
        for c in range(n_classes):
            for _ in range(windows_per_class):
                x = _make_window(rng, freqs[c], directions[c], offset, scale, noise)
                x = ((x @ rotation.T) * gains).astype(np.float32)
                windows.append(SensorWindow(samples=x, label=c, user=user, dataset="synthetic_target"))
    bundle = DatasetBundle(
        name="synthetic_target",
        windows=windows,
        class_map={f"act{c}": c for c in range(n_classes)},
    )
    bundle.folds = make_folds(set(bundle.users), seed=0)
    return bundle


def write_synthetic_dataset(root, kind: str = "source", seed: int = 0) -> None:
    """Write a synthetic dataset in the raw CSV layout, for exercising ingest."""
    from pathlib import Path

    bundle = synthetic_source_bundle(seed=seed) if kind == "source" else synthetic_target_bundle(seed=seed)
    root = Path(root) / bundle.name
    root.mkdir(parents=True, exist_ok=True)
    classes = sorted(bundle.class_map, key=bundle.class_map.get)
    (root / "manifest.txt").write_text(
        f"rate_hz={SAMPLE_RATE_HZ}\nclasses={','.join(classes)}\n"
    )
    inverse = {v: k for k, v in bundle.class_map.items()}
    by_user: dict[str, list[SensorWindow]] = {}
    for w in bundle.windows:
        by_user.setdefault(w.user, []).append(w)
    for user, windows in by_user.items():
        lines = ["t,ax,ay,az,activity"]
        t = 0
        for w in windows:
            for row in w.samples:
                lines.append(f"{t / SAMPLE_RATE_HZ:.3f},{row[0]:.6f},{row[1]:.6f},{row[2]:.6f},{inverse[w.label]}")
                t += 1
        (root / f"{user}.csv").write_text("\n".join(lines) + "\n")
