"""Ingestion, resampling, windowing, folds and normalization."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hartransfer import data
from hartransfer.errors import (
    ConfigurationError,
    FoldError,
    IngestionError,
    SchemaError,
    StatsError,
)
from hartransfer.synthetic import write_synthetic_dataset


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def test_resample_identity_rate_is_a_copy():
    x = np.random.default_rng(0).normal(size=(100, 3))
    out = data.resample(x, 50.0, 50.0)
    np.testing.assert_array_equal(out, x)
    assert out is not x


def test_resample_output_length_is_rounded_ratio():
    # [DERIVED] round(N * f_out / f_in): 200 samples at 87 Hz -> 50 Hz
    # gives round(200 * 50 / 87) = round(114.94...) = 115.
    x = np.zeros((200, 3))
    assert data.resample(x, 87.0, 50.0).shape == (115, 3)


def test_resample_preserves_constant_signals():
    x = np.full((120, 3), 2.5)
    out = data.resample(x, 100.0, 50.0)
    np.testing.assert_allclose(out, 2.5, atol=1e-12)


def test_resample_is_exact_on_linear_ramps():
    # Linear interpolation reproduces affine signals exactly at any rate.
    t = np.arange(200) / 100.0
    x = np.stack([3.0 * t + 1.0, -2.0 * t, t], axis=1)
    out = data.resample(x, 100.0, 50.0)
    t_out = np.arange(out.shape[0]) / 50.0
    expected = np.stack([3.0 * t_out + 1.0, -2.0 * t_out, t_out], axis=1)
    np.testing.assert_allclose(out, expected, atol=1e-10)


def test_resample_decimates_a_sine_onto_the_true_curve():
    # [DERIVED] 2 Hz sine sampled at 100 Hz then decimated to 50 Hz: the
    # output grid hits every second input sample exactly.
    t_in = np.arange(400) / 100.0
    x = np.sin(2 * np.pi * 2.0 * t_in)[:, None]
    out = data.resample(x, 100.0, 50.0)
    np.testing.assert_allclose(out[:, 0], x[::2, 0], atol=1e-12)


def test_resample_rejects_upsampling_and_bad_rates():
    x = np.zeros((10, 3))
    with pytest.raises(ConfigurationError):
        data.resample(x, 25.0, 50.0)
    with pytest.raises(ConfigurationError):
        data.resample(x, 50.0, 0.0)


def test_resample_labels_nearest_neighbour():
    labels = np.array(["a"] * 4 + ["b"] * 4)
    out = data.resample_labels(labels, 4)
    assert list(out) == ["a", "a", "b", "b"]


# ---------------------------------------------------------------------------
# Windowing
# ---------------------------------------------------------------------------


def test_segment_starts_window_count_oracle():
    # [DERIVED] floor((300 - 50) / 25) + 1 = 11 windows for length 50,
    # 50% overlap (stride 25) over 300 samples.
    starts = data.segment_starts(300, 50, 0.5)
    assert len(starts) == 11
    assert starts == list(range(0, 251, 25))


def test_segment_stride_rounds_from_overlap():
    # [DERIVED] stride = round(window * (1 - overlap)): 50 * 0.25 = 12.5 -> 12.
    starts = data.segment_starts(100, 50, 0.75)
    assert starts[1] - starts[0] == 12


def test_segment_drops_trailing_partial_windows():
    assert data.segment_starts(74, 50, 0.5) == [0]  # 25..74 is only 49 samples
    assert data.segment_starts(49, 50, 0.5) == []


@settings(max_examples=50, deadline=None)
@given(
    n=st.integers(min_value=0, max_value=2000),
    window=st.integers(min_value=2, max_value=200),
    overlap=st.sampled_from([0.0, 0.25, 0.5, 0.75]),
)
def test_segment_starts_properties(n, window, overlap):
    starts = data.segment_starts(n, window, overlap)
    stride = max(1, int(round(window * (1 - overlap))))
    for s in starts:
        assert 0 <= s and s + window <= n
    assert starts == list(range(0, max(n - window + 1, 0), stride))


def test_segment_rejects_invalid_overlap():
    with pytest.raises(ConfigurationError):
        data.segment_starts(100, 50, 1.0)
    with pytest.raises(ConfigurationError):
        data.segment_starts(100, 50, -0.1)


def test_segment_majority_labeling_and_tie_dropping():
    series = np.zeros((20, 3))
    # Window 1 (0:10): 7 of label 0, 3 of label 1 -> majority 0.
    # Window 2 (10:20): 5 of label 1, 5 of label 2 -> tie, dropped.
    labels = np.array([0] * 7 + [1] * 3 + [1] * 5 + [2] * 5)
    windows = data.segment(series, window_len=10, overlap=0.0, labels=labels, user="u")
    assert len(windows) == 1
    assert windows[0].label == 0


def test_segment_without_labels_yields_unlabeled_windows():
    windows = data.segment(np.zeros((100, 3)), 50, 0.5)
    assert len(windows) == 3
    assert all(w.label is None for w in windows)


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------


def test_make_folds_every_user_tested_exactly_once():
    users = {f"u{i}" for i in range(13)}
    folds = data.make_folds(users, n_folds=5, seed=0)
    tested = [u for f in folds for u in f.test_users]
    assert sorted(tested) == sorted(users)


def test_make_folds_splits_are_disjoint_and_cover_all_users():
    users = {f"u{i}" for i in range(10)}
    for fold in data.make_folds(users, seed=3):
        assert not fold.test_users & fold.val_users
        assert not fold.test_users & fold.train_users
        assert not fold.val_users & fold.train_users
        assert fold.test_users | fold.val_users | fold.train_users == users


def test_make_folds_is_deterministic():
    users = {f"u{i}" for i in range(9)}
    a = data.make_folds(users, seed=7)
    b = data.make_folds(users, seed=7)
    assert a == b
    c = data.make_folds(users, seed=8)
    assert a != c


def test_make_folds_needs_enough_users():
    with pytest.raises(ConfigurationError):
        data.make_folds({"a", "b", "c"}, n_folds=5)


@settings(max_examples=30, deadline=None)
@given(n_users=st.integers(min_value=5, max_value=100), seed=st.integers(0, 1000))
def test_make_folds_properties_over_user_counts(n_users, seed):
    users = {f"u{i:03d}" for i in range(n_users)}
    folds = data.make_folds(users, n_folds=5, seed=seed)
    assert len(folds) == 5
    tested = [u for f in folds for u in f.test_users]
    assert sorted(tested) == sorted(users)  # a partition: each user once
    for f in folds:
        assert f.test_users and f.val_users and f.train_users
        assert f.test_users | f.val_users | f.train_users == users


def test_fold_role_of():
    fold = data.FoldSpec(0, frozenset({"a"}), frozenset({"b"}), frozenset({"c"}))
    assert fold.role_of("a") == "test"
    assert fold.role_of("b") == "val"
    assert fold.role_of("c") == "train"
    with pytest.raises(FoldError):
        fold.role_of("d")


# ---------------------------------------------------------------------------
# Statistics and normalization
# ---------------------------------------------------------------------------


def _windows_from(X, user="u", label=0):
    return [data.SensorWindow(samples=x.astype(np.float32), label=label, user=user, dataset="d")
            for x in X]


def test_fit_stats_matches_numpy_oracle():
    rng = np.random.default_rng(0)
    X = rng.normal(loc=[1.0, -2.0, 0.5], scale=[0.5, 2.0, 1.0], size=(20, 50, 3))
    stats = data.fit_stats(_windows_from(X))
    flat = X.reshape(-1, 3)
    np.testing.assert_allclose(stats.mean, flat.mean(axis=0), rtol=1e-6)
    np.testing.assert_allclose(stats.std, flat.std(axis=0), rtol=1e-6)


def test_fit_stats_floors_constant_channels():
    X = np.zeros((4, 50, 3))
    stats = data.fit_stats(_windows_from(X))
    assert (stats.std >= data.STD_FLOOR).all()


def test_fit_stats_rejects_degenerate_input():
    with pytest.raises(StatsError):
        data.fit_stats([])
    one_sample = [data.SensorWindow(np.zeros((1, 3), np.float32), 0, "u", "d")]
    with pytest.raises(StatsError):
        data.fit_stats(one_sample)


def test_normalize_denormalize_round_trip():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(10, 50, 3)) * 3 + 1
    windows = _windows_from(X)
    stats = data.fit_stats(windows)
    for w in windows:
        back = data.denormalize(data.normalize(w, stats), stats)
        np.testing.assert_allclose(back.samples, w.samples, atol=1e-4)


def test_normalized_training_data_is_standardized():
    rng = np.random.default_rng(2)
    X = rng.normal(loc=5.0, scale=4.0, size=(30, 50, 3))
    windows = _windows_from(X)
    stats = data.fit_stats(windows)
    normed = np.concatenate([data.normalize(w, stats).samples for w in windows])
    np.testing.assert_allclose(normed.mean(axis=0), 0.0, atol=1e-3)
    np.testing.assert_allclose(normed.std(axis=0), 1.0, atol=1e-3)


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def test_ingest_synthetic_round_trip(tmp_path):
    write_synthetic_dataset(tmp_path, kind="source")
    bundle = data.ingest(tmp_path / "synthetic_source")
    assert bundle.n_classes == 6
    assert len(bundle.users) == 10
    assert len(bundle.windows) > 0
    assert all(w.samples.shape == (50, 3) for w in bundle.windows)
    assert not bundle.rejected_rows


def test_ingest_counts_rejected_rows(tmp_path):
    write_synthetic_dataset(tmp_path, kind="source")
    root = tmp_path / "synthetic_source"
    path = next(root.glob("*.csv"))
    lines = path.read_text().splitlines()
    lines[5] = "garbage,not,a,number,row,extra"
    lines[6] = "0.1,oops,0.2,0.3,act0"
    path.write_text("\n".join(lines) + "\n")
    bundle = data.ingest(root)
    assert bundle.rejected_rows[path.stem] == 2


def test_ingest_requires_manifest_and_files(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(IngestionError):
        data.read_manifest(empty)
    (empty / "manifest.txt").write_text("rate_hz=50\nclasses=a,b\n")
    with pytest.raises(IngestionError):
        data.ingest(empty)


def test_manifest_must_declare_rate_and_classes(tmp_path):
    (tmp_path / "manifest.txt").write_text("rate_hz=50\n")
    with pytest.raises(IngestionError):
        data.read_manifest(tmp_path)


def test_manifest_parses_keys_and_comments(tmp_path):
    (tmp_path / "manifest.txt").write_text(
        "# a comment\nrate_hz = 100\nclasses = walk, run ,sit\n\n"
    )
    schema = data.read_manifest(tmp_path)
    assert schema.rate_hz == 100.0
    assert schema.classes == ["walk", "run", "sit"]


def test_ingest_rejects_bad_header(tmp_path):
    (tmp_path / "manifest.txt").write_text("rate_hz=50\nclasses=a\n")
    (tmp_path / "u0.csv").write_text("time,x,y,z,label\n0,0,0,0,a\n")
    with pytest.raises(SchemaError):
        data.ingest(tmp_path)


def test_save_load_bundle_round_trip(tmp_path, small_source):
    path = tmp_path / "bundle.npz"
    data.save_bundle(small_source, path)
    loaded = data.load_bundle(path)
    assert loaded.name == small_source.name
    assert loaded.class_map == small_source.class_map
    assert loaded.folds == small_source.folds
    assert len(loaded.windows) == len(small_source.windows)
    np.testing.assert_allclose(loaded.windows[0].samples, small_source.windows[0].samples)
    assert loaded.windows[0].label == small_source.windows[0].label
    assert loaded.windows[0].user == small_source.windows[0].user


def test_as_arrays_encodes_unlabeled_as_minus_one():
    w = [
        data.SensorWindow(np.zeros((5, 3), np.float32), None, "u", "d"),
        data.SensorWindow(np.zeros((5, 3), np.float32), 2, "u", "d"),
    ]
    X, y = data.as_arrays(w)
    assert X.shape == (2, 5, 3)
    assert list(y) == [-1, 2]
