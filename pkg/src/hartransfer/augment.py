"""Accelerometry window transforms and the weak/strong augmentation policies.

All transforms are pure functions of (window, seed): same seed, same
output, and the window shape (T, C) is always preserved. Labels and user
ids are carried through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DatasetBundle, SensorWindow
from .errors import ConfigurationError

TRANSFORM_KINDS = (
    "noise",
    "scale",
    "rotate3d",
    "time_reverse",
    "negate",
    "time_warp",
    "channel_shuffle",
    "random_perturb",
)

# Parameter defaults follow the reference accelerometry-augmentation
# implementation this transform set originates from.
DEFAULT_NOISE_SIGMA = 0.05
DEFAULT_SCALE_SIGMA = 0.1
DEFAULT_WARP_KNOTS = 4
DEFAULT_WARP_SIGMA = 0.2
DEFAULT_PERTURB_SEGMENTS = 5


@dataclass
class AugmentationSpec:
    """Declarative description of one transform or a composition."""

    kind: str
    params: dict = field(default_factory=dict)
    children: list["AugmentationSpec"] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "params": dict(self.params)}
        if self.children:
            out["children"] = [c.to_dict() for c in self.children]
        return out

    @classmethod
    def from_dict(cls, blob: dict) -> "AugmentationSpec":
        return cls(
            kind=blob["kind"],
            params=dict(blob.get("params", {})),
            children=[cls.from_dict(c) for c in blob.get("children", [])],
        )


def full_suite() -> list[AugmentationSpec]:
    """The eight-transform pool applied to source data before teacher training."""
    return [AugmentationSpec(kind) for kind in TRANSFORM_KINDS]


def random_rotation_matrix(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation over SO(3) via a normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _apply_array(spec: AugmentationSpec, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    T, C = x.shape
    p = spec.params
    if spec.kind == "noise":
        sigma = p.get("sigma", DEFAULT_NOISE_SIGMA)
        return x + rng.normal(0.0, 1.0, size=x.shape) * sigma
    if spec.kind == "scale":
        sigma = p.get("sigma", DEFAULT_SCALE_SIGMA)
        factors = rng.normal(1.0, sigma, size=(1, C))
        return x * factors
    if spec.kind == "rotate3d":
        if C != 3:
            raise ConfigurationError(f"rotate3d needs 3 channels, got {C}")
        return x @ random_rotation_matrix(rng).T
    if spec.kind == "time_reverse":
        return x[::-1].copy()
    if spec.kind == "negate":
        return -x
    if spec.kind == "time_warp":
        return _time_warp(x, rng, p.get("knots", DEFAULT_WARP_KNOTS), p.get("sigma", DEFAULT_WARP_SIGMA))
    if spec.kind == "channel_shuffle":
        return x[:, rng.permutation(C)]
    if spec.kind == "random_perturb":
        return _permute_segments(x, rng, p.get("segments", DEFAULT_PERTURB_SEGMENTS))
    if spec.kind == "compose":
        for child in spec.children:
            x = _apply_array(child, x, rng)
        return x
    raise ConfigurationError(f"unknown augmentation kind {spec.kind!r}")


def _time_warp(x: np.ndarray, rng: np.random.Generator, knots: int, sigma: float) -> np.ndarray:
    T, C = x.shape
    anchor_t = np.linspace(0, T - 1, knots + 2)
    speeds = rng.normal(1.0, sigma, size=knots + 2).clip(0.1)
    speed = np.interp(np.arange(T), anchor_t, speeds)
    warped_t = np.cumsum(speed)
    warped_t = (warped_t - warped_t[0]) * (T - 1) / (warped_t[-1] - warped_t[0])
    out = np.empty_like(x)
    for c in range(C):
        out[:, c] = np.interp(np.arange(T), warped_t, x[:, c])
    return out


def _permute_segments(x: np.ndarray, rng: np.random.Generator, n_segments: int) -> np.ndarray:
    pieces = np.array_split(np.arange(x.shape[0]), n_segments)
    order = rng.permutation(len(pieces))
    idx = np.concatenate([pieces[i] for i in order])
    return x[idx]


def apply(spec: AugmentationSpec, window: SensorWindow, seed: int) -> SensorWindow:
    """Apply a spec to a window; deterministic for a fixed (spec, window, seed)."""
    rng = np.random.default_rng(seed)
    out = _apply_array(spec, window.samples.astype(np.float64), rng)
    return SensorWindow(samples=out.astype(np.float32), label=window.label,
                        user=window.user, dataset=window.dataset)


def augment_source(bundle: DatasetBundle, seed: int) -> DatasetBundle:
    """Expand a labeled source bundle 9x: the original plus one copy per transform."""
    suite = full_suite()
    windows: list[SensorWindow] = []
    seeds = np.random.SeedSequence(seed).generate_state(max(1, len(bundle.windows) * len(suite)))
    k = 0
    for w in bundle.windows:
        windows.append(w)
        for spec in suite:
            windows.append(apply(spec, w, int(seeds[k])))
            k += 1
    return DatasetBundle(
        name=bundle.name,
        windows=windows,
        folds=list(bundle.folds),
        stats=bundle.stats,
        class_map=dict(bundle.class_map),
    )


def weak_augment(window: SensorWindow, seed: int) -> SensorWindow:
    """One random 3D rotation applied to every timestep of the window."""
    return apply(AugmentationSpec("rotate3d"), window, seed)


def strong_augment(window: SensorWindow, seed: int, noise_sigma: float = DEFAULT_NOISE_SIGMA) -> SensorWindow:
    """Heavily distorted view: noise, then a random rotation, then negation."""
    spec = AugmentationSpec(
        "compose",
        children=[
            AugmentationSpec("noise", {"sigma": noise_sigma}),
            AugmentationSpec("rotate3d"),
            AugmentationSpec("negate"),
        ],
    )
    return apply(spec, window, seed)


def simclr_views(window: SensorWindow, seed: int) -> tuple[SensorWindow, SensorWindow]:
    """Two independently sampled transforms from the eight-transform pool."""
    rng = np.random.default_rng(seed)
    pool = full_suite()
    picks = rng.integers(0, len(pool), size=2)
    view_seeds = rng.integers(0, 2**31 - 1, size=2)
    return (
        apply(pool[picks[0]], window, int(view_seeds[0])),
        apply(pool[picks[1]], window, int(view_seeds[1])),
    )


def identity_spec() -> AugmentationSpec:
    """No-op composition, used by the no-consistency ablation."""
    return AugmentationSpec("compose", children=[])
