"""Window transforms, weak/strong policies, and the 9x source expansion."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hartransfer import augment
from hartransfer.data import DatasetBundle, SensorWindow
from hartransfer.errors import ConfigurationError


def _window(seed=0, T=50, C=3, label=1):
    rng = np.random.default_rng(seed)
    return SensorWindow(samples=rng.normal(size=(T, C)).astype(np.float32),
                        label=label, user="u", dataset="d")


# ---------------------------------------------------------------------------
# Generic transform contracts
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", augment.TRANSFORM_KINDS)
def test_transforms_preserve_shape_and_metadata(kind):
    w = _window()
    out = augment.apply(augment.AugmentationSpec(kind), w, seed=3)
    assert out.samples.shape == w.samples.shape
    assert out.samples.dtype == np.float32
    assert (out.label, out.user, out.dataset) == (w.label, w.user, w.dataset)


@pytest.mark.parametrize("kind", augment.TRANSFORM_KINDS)
def test_transforms_are_deterministic_in_the_seed(kind):
    w = _window()
    spec = augment.AugmentationSpec(kind)
    a = augment.apply(spec, w, seed=11)
    b = augment.apply(spec, w, seed=11)
    np.testing.assert_array_equal(a.samples, b.samples)


@pytest.mark.parametrize("kind", ["noise", "scale", "rotate3d", "time_warp",
                                  "channel_shuffle", "random_perturb"])
def test_stochastic_transforms_vary_with_the_seed(kind):
    w = _window()
    spec = augment.AugmentationSpec(kind)
    outs = [augment.apply(spec, w, seed=s).samples for s in range(8)]
    assert any(not np.array_equal(outs[0], o) for o in outs[1:])


def test_unknown_kind_is_rejected():
    with pytest.raises(ConfigurationError):
        augment.apply(augment.AugmentationSpec("fourier"), _window(), 0)


# ---------------------------------------------------------------------------
# Rotation
# ---------------------------------------------------------------------------


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_random_rotation_is_orthogonal_with_unit_determinant(seed):
    R = augment.random_rotation_matrix(np.random.default_rng(seed))
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-6)
    assert abs(np.linalg.det(R) - 1.0) < 1e-6


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_rotation_preserves_per_timestep_norms(seed):
    w = _window(seed)
    out = augment.apply(augment.AugmentationSpec("rotate3d"), w, seed)
    np.testing.assert_allclose(
        np.linalg.norm(out.samples, axis=1),
        np.linalg.norm(w.samples, axis=1),
        atol=1e-4,  # float32 storage
    )


def test_rotate3d_requires_three_channels():
    w = SensorWindow(np.zeros((50, 4), np.float32), 0, "u", "d")
    with pytest.raises(ConfigurationError):
        augment.apply(augment.AugmentationSpec("rotate3d"), w, 0)


# ---------------------------------------------------------------------------
# Involutions and identity fixed points
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["time_reverse", "negate"])
def test_involutions_are_their_own_inverse(kind):
    w = _window()
    spec = augment.AugmentationSpec(kind)
    twice = augment.apply(spec, augment.apply(spec, w, 0), 0)
    np.testing.assert_allclose(twice.samples, w.samples, atol=1e-6)


def test_zero_sigma_noise_is_the_identity():
    w = _window()
    out = augment.apply(augment.AugmentationSpec("noise", {"sigma": 0.0}), w, 5)
    np.testing.assert_allclose(out.samples, w.samples, atol=1e-7)


def test_zero_sigma_scale_is_the_identity():
    w = _window()
    out = augment.apply(augment.AugmentationSpec("scale", {"sigma": 0.0}), w, 5)
    np.testing.assert_allclose(out.samples, w.samples, atol=1e-7)


def test_zero_sigma_time_warp_is_the_identity():
    w = _window()
    out = augment.apply(augment.AugmentationSpec("time_warp", {"sigma": 0.0}), w, 5)
    np.testing.assert_allclose(out.samples, w.samples, atol=1e-5)


def test_identity_spec_is_a_fixed_point():
    w = _window()
    out = augment.apply(augment.identity_spec(), w, 9)
    np.testing.assert_array_equal(out.samples, w.samples)


def test_compose_applies_children_in_order():
    w = _window()
    spec = augment.AugmentationSpec(
        "compose",
        children=[augment.AugmentationSpec("negate"), augment.AugmentationSpec("time_reverse")],
    )
    out = augment.apply(spec, w, 0)
    np.testing.assert_allclose(out.samples, -w.samples[::-1], atol=1e-6)


# ---------------------------------------------------------------------------
# Spec serialization
# ---------------------------------------------------------------------------


def test_spec_round_trips_through_dict():
    spec = augment.AugmentationSpec(
        "compose",
        children=[
            augment.AugmentationSpec("noise", {"sigma": 0.2}),
            augment.AugmentationSpec("rotate3d"),
        ],
    )
    clone = augment.AugmentationSpec.from_dict(spec.to_dict())
    assert clone == spec
    w = _window()
    np.testing.assert_array_equal(
        augment.apply(spec, w, 4).samples, augment.apply(clone, w, 4).samples
    )


# ---------------------------------------------------------------------------
# Source expansion
# ---------------------------------------------------------------------------


def test_augment_source_expands_ninefold():
    windows = [_window(i, label=i % 3) for i in range(10)]
    bundle = DatasetBundle(name="b", windows=windows, class_map={"a": 0, "b": 1, "c": 2})
    out = augment.augment_source(bundle, seed=0)
    assert len(out.windows) == 9 * len(windows)
    # [DERIVED] each group of 9 is the original followed by one copy per
    # transform, all carrying the original's label.
    for i, w in enumerate(windows):
        group = out.windows[9 * i : 9 * (i + 1)]
        np.testing.assert_array_equal(group[0].samples, w.samples)
        assert all(g.label == w.label for g in group)


def test_augment_source_label_histogram_is_scaled():
    windows = [_window(i, label=i % 3) for i in range(9)]
    bundle = DatasetBundle(name="b", windows=windows, class_map={"a": 0, "b": 1, "c": 2})
    out = augment.augment_source(bundle, seed=1)
    before = np.bincount([w.label for w in windows], minlength=3)
    after = np.bincount([w.label for w in out.windows], minlength=3)
    np.testing.assert_array_equal(after, 9 * before)


def test_augment_source_is_deterministic():
    windows = [_window(i) for i in range(5)]
    bundle = DatasetBundle(name="b", windows=windows, class_map={"a": 0})
    a = augment.augment_source(bundle, seed=7)
    b = augment.augment_source(bundle, seed=7)
    for wa, wb in zip(a.windows, b.windows):
        np.testing.assert_array_equal(wa.samples, wb.samples)


# ---------------------------------------------------------------------------
# Weak / strong policies
# ---------------------------------------------------------------------------


def test_weak_augment_is_a_pure_rotation(monkeypatch):
    # With the rotation stubbed to the identity, weak augmentation is a no-op.
    monkeypatch.setattr(augment, "random_rotation_matrix", lambda rng: np.eye(3))
    w = _window()
    out = augment.weak_augment(w, seed=0)
    np.testing.assert_allclose(out.samples, w.samples, atol=1e-6)


def test_weak_augment_preserves_norms():
    w = _window()
    out = augment.weak_augment(w, seed=3)
    np.testing.assert_allclose(
        np.linalg.norm(out.samples, axis=1), np.linalg.norm(w.samples, axis=1), atol=1e-4
    )


def test_strong_augment_composes_noise_rotation_negation(monkeypatch):
    # Identity rotation and zero noise reduce the strong policy to negation.
    monkeypatch.setattr(augment, "random_rotation_matrix", lambda rng: np.eye(3))
    w = _window()
    out = augment.strong_augment(w, seed=0, noise_sigma=0.0)
    np.testing.assert_allclose(out.samples, -w.samples, atol=1e-6)


def test_strong_augment_distorts_more_than_weak():
    # Averaged over many windows, the strong view is further (in L2) from
    # the original than the weak view.
    rng = np.random.default_rng(0)
    weak_d, strong_d = [], []
    for i in range(300):
        w = _window(i)
        weak_d.append(np.linalg.norm(augment.weak_augment(w, i).samples - w.samples))
        strong_d.append(np.linalg.norm(augment.strong_augment(w, i).samples - w.samples))
    assert np.mean(strong_d) > np.mean(weak_d)


def test_simclr_views_are_two_distinct_transforms_most_of_the_time():
    w = _window()
    different = 0
    n = 200
    for s in range(n):
        a, b = augment.simclr_views(w, s)
        assert a.samples.shape == w.samples.shape
        assert b.samples.shape == w.samples.shape
        if not np.array_equal(a.samples, b.samples):
            different += 1
    assert different / n > 0.95


def test_simclr_views_deterministic():
    w = _window()
    a1, b1 = augment.simclr_views(w, 42)
    a2, b2 = augment.simclr_views(w, 42)
    np.testing.assert_array_equal(a1.samples, a2.samples)
    np.testing.assert_array_equal(b1.samples, b2.samples)


def test_full_suite_covers_all_kinds():
    assert [s.kind for s in augment.full_suite()] == list(augment.TRANSFORM_KINDS)
