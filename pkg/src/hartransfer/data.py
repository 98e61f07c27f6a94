"""Dataset ingestion, resampling, windowing, fold construction and normalization.

Expected on-disk layout for a raw dataset::

    <root>/<dataset>/
        manifest.txt        # key=value lines: rate_hz=<float>, classes=<a,b,c>
        <user_id>.csv       # header: t,ax,ay,az,activity

All windows are normalized with statistics computed from the *source*
train split only; target data is never used to fit statistics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FoldError, IngestionError, SchemaError, StatsError

logger = logging.getLogger(__name__)

CANONICAL_RATE_HZ = 50.0
CANONICAL_WINDOW_LEN = 50
CANONICAL_OVERLAP = 0.5
STD_FLOOR = 1e-8

REQUIRED_COLUMNS = ("t", "ax", "ay", "az", "activity")


@dataclass
class SensorWindow:
    """One fixed-length segment of tri-axial accelerometer samples."""

    samples: np.ndarray  # (T, C) float32
    label: int | None
    user: str
    dataset: str


@dataclass
class ChannelStats:
    """Per-channel mean/std fitted on the source train split."""

    mean: np.ndarray  # (C,)
    std: np.ndarray  # (C,), floored at STD_FLOOR


@dataclass
class FoldSpec:
    fold_id: int
    test_users: frozenset[str]
    val_users: frozenset[str]
    train_users: frozenset[str]

    def role_of(self, user: str) -> str:
        if user in self.test_users:
            return "test"
        if user in self.val_users:
            return "val"
        if user in self.train_users:
            return "train"
        raise FoldError(f"user {user!r} is not assigned to any split")


@dataclass
class DatasetBundle:
    """A dataset's windows plus fold assignments and channel statistics."""

    name: str
    windows: list[SensorWindow]
    folds: list[FoldSpec] = field(default_factory=list)
    stats: ChannelStats | None = None
    class_map: dict[str, int] = field(default_factory=dict)
    rejected_rows: dict[str, int] = field(default_factory=dict)

    @property
    def users(self) -> list[str]:
        return sorted({w.user for w in self.windows})

    @property
    def n_classes(self) -> int:
        return len(self.class_map)

    def split_windows(self, fold: FoldSpec, role: str) -> list[SensorWindow]:
        users = {"train": fold.train_users, "val": fold.val_users, "test": fold.test_users}[role]
        return [w for w in self.windows if w.user in users]


def as_arrays(windows: list[SensorWindow]) -> tuple[np.ndarray, np.ndarray]:
    """Stack windows into (X, y). Unlabeled windows get label -1."""
    X = np.stack([w.samples for w in windows]).astype(np.float32)
    y = np.array([-1 if w.label is None else w.label for w in windows], dtype=np.int64)
    return X, y


@dataclass
class IngestionSchema:
    """Declared layout of a raw dataset directory."""

    rate_hz: float
    classes: list[str]
    window_len: int = CANONICAL_WINDOW_LEN
    overlap: float = CANONICAL_OVERLAP
    target_rate_hz: float = CANONICAL_RATE_HZ


def read_manifest(dataset_dir: Path) -> IngestionSchema:
    path = Path(dataset_dir) / "manifest.txt"
    if not path.exists():
        raise IngestionError(f"no manifest.txt in {dataset_dir}")
    entries = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    if "rate_hz" not in entries or "classes" not in entries:
        raise IngestionError(f"manifest {path} must declare rate_hz and classes")
    return IngestionSchema(
        rate_hz=float(entries["rate_hz"]),
        classes=[c.strip() for c in entries["classes"].split(",") if c.strip()],
    )


def resample(series: np.ndarray, f_in: float, f_out: float) -> np.ndarray:
    """Resample a (N, C) series from f_in to f_out Hz by linear interpolation.

    Only downsampling (or the identity) is supported; output length is
    round(N * f_out / f_in). Constant signals pass through unchanged.
    """
    if f_out <= 0:
        raise ConfigurationError(f"output rate must be positive, got {f_out}")
    if f_in < f_out:
        raise ConfigurationError(f"upsampling not supported ({f_in} Hz -> {f_out} Hz)")
    series = np.asarray(series, dtype=np.float64)
    n_in = series.shape[0]
    if f_in == f_out:
        return series.copy()
    n_out = int(round(n_in * f_out / f_in))
    t_in = np.arange(n_in) / f_in
    t_out = np.arange(n_out) / f_out
    out = np.empty((n_out, series.shape[1]), dtype=np.float64)
    for c in range(series.shape[1]):
        out[:, c] = np.interp(t_out, t_in, series[:, c])
    return out


def resample_labels(labels: np.ndarray, n_out: int) -> np.ndarray:
    """Nearest-neighbour label track for a resampled series."""
    n_in = len(labels)
    idx = np.clip(np.round(np.arange(n_out) * (n_in / n_out)).astype(int), 0, n_in - 1)
    return labels[idx]


def segment_starts(n_samples: int, window_len: int, overlap: float) -> list[int]:
    if not 0 <= overlap < 1:
        raise ConfigurationError(f"overlap must be in [0, 1), got {overlap}")
    stride = max(1, int(round(window_len * (1 - overlap))))
    if n_samples < window_len:
        return []
    return list(range(0, n_samples - window_len + 1, stride))


def segment(
    series: np.ndarray,
    window_len: int,
    overlap: float,
    labels: np.ndarray | None = None,
    user: str = "",
    dataset: str = "",
) -> list[SensorWindow]:
    """Slide a window over a (N, C) series; trailing partial windows are dropped.

    When a per-sample label track is given, each window is labeled with the
    majority activity; windows with a tied majority are dropped.
    """
    series = np.asarray(series)
    windows = []
    for start in segment_starts(series.shape[0], window_len, overlap):
        chunk = series[start : start + window_len].astype(np.float32)
        label = None
        if labels is not None:
            span = labels[start : start + window_len]
            values, counts = np.unique(span, return_counts=True)
            top = counts.max()
            if (counts == top).sum() > 1:
                continue  # no majority across an activity boundary
            label = values[counts.argmax()]
        windows.append(SensorWindow(samples=chunk, label=label, user=user, dataset=dataset))
    return windows


def ingest(dataset_dir: Path, schema: IngestionSchema | None = None) -> DatasetBundle:
    """Ingest one raw dataset directory into a DatasetBundle.

    Rows that fail to parse are rejected and counted per user (never
    silently dropped); the counts are logged and kept on the bundle.
    """
    dataset_dir = Path(dataset_dir)
    if schema is None:
        schema = read_manifest(dataset_dir)
    user_files = sorted(p for p in dataset_dir.glob("*.csv"))
    if not user_files:
        raise IngestionError(f"no user recordings found in {dataset_dir}")

    class_map = {name: i for i, name in enumerate(schema.classes)}
    bundle = DatasetBundle(name=dataset_dir.name, windows=[], class_map=class_map)

    for path in user_files:
        user = path.stem
        signal, activities, rejected = _parse_user_file(path)
        if rejected:
            logger.warning("%s: rejected %d unparseable rows", path.name, rejected)
            bundle.rejected_rows[user] = rejected
        if signal.shape[0] == 0:
            continue
        resampled = resample(signal, schema.rate_hz, schema.target_rate_hz)
        labels = resample_labels(activities, resampled.shape[0])
        label_ids = np.array([class_map.get(a, -1) for a in labels])
        windows = segment(
            resampled,
            schema.window_len,
            schema.overlap,
            labels=label_ids,
            user=user,
            dataset=dataset_dir.name,
        )
        for w in windows:
            if w.label == -1:
                w.label = None
        bundle.windows.extend(windows)

    if not bundle.windows:
        raise IngestionError(f"{dataset_dir} produced no windows")
    return bundle


def _parse_user_file(path: Path) -> tuple[np.ndarray, np.ndarray, int]:
    lines = path.read_text().splitlines()
    if not lines:
        raise SchemaError(f"{path} is empty")
    header = tuple(h.strip() for h in lines[0].split(","))
    if header != REQUIRED_COLUMNS:
        raise SchemaError(f"{path} header {header} != required {REQUIRED_COLUMNS}")
    rows = []
    activities = []
    rejected = 0
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 5:
            rejected += 1
            continue
        try:
            rows.append([float(parts[1]), float(parts[2]), float(parts[3])])
        except ValueError:
            rejected += 1
            continue
        activities.append(parts[4].strip())
    return np.array(rows, dtype=np.float64).reshape(-1, 3), np.array(activities), rejected


def make_folds(
    users: set[str],
    n_folds: int = 5,
    val_frac: float = 0.2,
    seed: int = 0,
) -> list[FoldSpec]:
    """Build user-disjoint folds: every user appears in exactly one test set.

    The shuffled user list is partitioned into n_folds test groups; per
    fold the remaining users are split (1 - val_frac):val_frac into
    train:val. Deterministic for a given seed.
    """
    users = sorted(users)
    if len(users) < n_folds:
        raise ConfigurationError(f"need at least {n_folds} users, got {len(users)}")
    rng = np.random.default_rng(seed)
    order = [users[i] for i in rng.permutation(len(users))]
    test_groups = [list(g) for g in np.array_split(np.array(order, dtype=object), n_folds)]

    folds = []
    for fold_id, test_users in enumerate(test_groups):
        rest = [u for u in order if u not in test_users]
        fold_rng = np.random.default_rng((seed, fold_id))
        shuffled = [rest[i] for i in fold_rng.permutation(len(rest))]
        n_val = max(1, int(round(val_frac * len(shuffled))))
        folds.append(
            FoldSpec(
                fold_id=fold_id,
                test_users=frozenset(test_users),
                val_users=frozenset(shuffled[:n_val]),
                train_users=frozenset(shuffled[n_val:]),
            )
        )
    return folds


def fit_stats(train_windows: list[SensorWindow]) -> ChannelStats:
    """Fit per-channel mean/std. Must only ever see the source train split."""
    if not train_windows:
        raise StatsError("cannot fit statistics on an empty window set")
    X = np.concatenate([w.samples for w in train_windows], axis=0).astype(np.float64)
    if X.shape[0] < 2:
        raise StatsError(f"need at least 2 samples to fit statistics, got {X.shape[0]}")
    std = X.std(axis=0)
    return ChannelStats(mean=X.mean(axis=0), std=np.maximum(std, STD_FLOOR))


def normalize(window: SensorWindow, stats: ChannelStats) -> SensorWindow:
    samples = (window.samples - stats.mean) / stats.std
    return SensorWindow(samples=samples.astype(np.float32), label=window.label,
                        user=window.user, dataset=window.dataset)


def denormalize(window: SensorWindow, stats: ChannelStats) -> SensorWindow:
    samples = window.samples * stats.std + stats.mean
    return SensorWindow(samples=samples.astype(np.float32), label=window.label,
                        user=window.user, dataset=window.dataset)


def normalize_bundle(bundle: DatasetBundle, stats: ChannelStats) -> DatasetBundle:
    """Apply *source* statistics to any bundle (source val/test or target)."""
    return DatasetBundle(
        name=bundle.name,
        windows=[normalize(w, stats) for w in bundle.windows],
        folds=list(bundle.folds),
        stats=stats,
        class_map=dict(bundle.class_map),
        rejected_rows=dict(bundle.rejected_rows),
    )


def save_bundle(bundle: DatasetBundle, path: Path) -> None:
    """Cache a processed bundle as an .npz archive."""
    X, y = as_arrays(bundle.windows)
    users = np.array([w.user for w in bundle.windows])
    fold_blob = [
        {
            "fold_id": f.fold_id,
            "test": sorted(f.test_users),
            "val": sorted(f.val_users),
            "train": sorted(f.train_users),
        }
        for f in bundle.folds
    ]
    import json

    np.savez_compressed(
        path,
        X=X,
        y=y,
        users=users,
        name=np.array(bundle.name),
        class_map=np.array(json.dumps(bundle.class_map)),
        folds=np.array(json.dumps(fold_blob)),
        stats_mean=bundle.stats.mean if bundle.stats else np.array([]),
        stats_std=bundle.stats.std if bundle.stats else np.array([]),
    )


def load_bundle(path: Path) -> DatasetBundle:
    import json

    with np.load(path, allow_pickle=False) as blob:
        name = str(blob["name"])
        class_map = json.loads(str(blob["class_map"]))
        fold_blob = json.loads(str(blob["folds"]))
        windows = [
            SensorWindow(
                samples=blob["X"][i],
                label=None if blob["y"][i] < 0 else int(blob["y"][i]),
                user=str(blob["users"][i]),
                dataset=name,
            )
            for i in range(blob["X"].shape[0])
        ]
        folds = [
            FoldSpec(
                fold_id=f["fold_id"],
                test_users=frozenset(f["test"]),
                val_users=frozenset(f["val"]),
                train_users=frozenset(f["train"]),
            )
            for f in fold_blob
        ]
        stats = None
        if blob["stats_mean"].size:
            stats = ChannelStats(mean=blob["stats_mean"], std=blob["stats_std"])
    return DatasetBundle(name=name, windows=windows, folds=folds, stats=stats, class_map=class_map)
