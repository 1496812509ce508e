"""Procedural multimodal forecasting scenes.

Each scene contains one disk-shaped actor on a coarse grid. The scene type
fixes a small set of motion primitives; which one the actor follows is drawn
at random, so the static features admit several equally valid futures.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Union

import numpy as np

from .codec import TrajectoryField


@dataclass(frozen=True)
class Linear:
    vx: float
    vy: float

    def offsets(self, horizon: int) -> np.ndarray:
        t = np.arange(1, horizon + 1, dtype=np.float64)
        return np.stack([self.vx * t, self.vy * t], axis=1)


@dataclass(frozen=True)
class Oscillation:
    axis: str  # "x" or "y"
    amplitude: float
    period: float

    def offsets(self, horizon: int) -> np.ndarray:
        t = np.arange(1, horizon + 1, dtype=np.float64)
        wave = self.amplitude * np.sin(2 * np.pi * t / self.period)
        out = np.zeros((horizon, 2))
        out[:, 0 if self.axis == "x" else 1] = wave
        return out


@dataclass(frozen=True)
class Arc:
    radius: float
    angular_rate: float  # radians per frame, sign sets the turning sense
    orientation: float  # angle of the start point seen from the circle centre

    def offsets(self, horizon: int) -> np.ndarray:
        t = np.arange(1, horizon + 1, dtype=np.float64)
        angle = self.orientation + self.angular_rate * t
        return self.radius * np.stack(
            [np.cos(angle) - np.cos(self.orientation), np.sin(angle) - np.sin(self.orientation)],
            axis=1,
        )


Primitive = Union[Linear, Oscillation, Arc]
_PRIMITIVES = {"linear": Linear, "oscillation": Oscillation, "arc": Arc}


def primitive_to_dict(p: Primitive) -> dict:
    name = next(k for k, v in _PRIMITIVES.items() if isinstance(p, v))
    return {"kind": name, **asdict(p)}


def primitive_from_dict(d: dict) -> Primitive:
    d = dict(d)
    kind = d.pop("kind")
    if kind not in _PRIMITIVES:
        raise ValueError(f"unknown motion primitive {kind!r}")
    return _PRIMITIVES[kind](**d)


@dataclass(frozen=True)
class MotionModeSet:
    type_id: int
    modes: tuple
    mode_weights: tuple = ()

    def __post_init__(self):
        modes = tuple(self.modes)
        if not modes:
            raise ValueError("a scene type needs at least one mode")
        weights = self.mode_weights or tuple([1.0 / len(modes)] * len(modes))
        weights = tuple(float(w) for w in weights)
        if len(weights) != len(modes):
            raise ValueError("one weight per mode required")
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError("mode weights must be nonnegative and sum to 1")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "mode_weights", weights)


def default_scene_types() -> list[MotionModeSet]:
    """Two symmetric two-mode scene types.

    Type 0 bobs vertically, either up-then-down or down-then-up; type 1 moves
    horizontally, either left or right.
    """
    return [
        MotionModeSet(0, (Oscillation("y", 3.0, 30.0), Oscillation("y", -3.0, 30.0))),
        MotionModeSet(1, (Linear(0.15, 0.0), Linear(-0.15, 0.0))),
    ]


@dataclass(frozen=True)
class SceneSpec:
    height: int = 16
    width: int = 20
    horizon: int = 30
    scene_types: tuple = field(default_factory=lambda: tuple(default_scene_types()))
    actor_radius: float = 2.0
    noise_sigma: float = 0.0
    coord_channels: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scene_types", tuple(self.scene_types))
        if not self.scene_types:
            raise ValueError("at least one scene type required")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.height < 1 or self.width < 1 or self.horizon < 1:
            raise ValueError("grid and horizon must be positive")
        r = int(np.floor(self.actor_radius))
        if 2 * r + 1 > self.height or 2 * r + 1 > self.width or self.actor_radius < 0:
            raise ValueError(f"actor_radius {self.actor_radius} too large for {self.height}x{self.width} grid")

    @property
    def n_types(self) -> int:
        return len(self.scene_types)

    @property
    def n_features(self) -> int:
        return 1 + self.n_types + (2 if self.coord_channels else 0)

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "horizon": self.horizon,
            "actor_radius": self.actor_radius,
            "noise_sigma": self.noise_sigma,
            "coord_channels": self.coord_channels,
            "scene_types": [
                {
                    "type_id": st.type_id,
                    "modes": [primitive_to_dict(m) for m in st.modes],
                    "mode_weights": list(st.mode_weights),
                }
                for st in self.scene_types
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        if "scene_types" in d:
            d["scene_types"] = tuple(
                MotionModeSet(
                    int(st["type_id"]),
                    tuple(primitive_from_dict(m) for m in st["modes"]),
                    tuple(st.get("mode_weights", ())),
                )
                for st in d["scene_types"]
            )
        return cls(**d)


@dataclass
class SceneSample:
    features: np.ndarray  # (H, W, F)
    trajectory: TrajectoryField
    type_id: int
    mode_id: int
    center: tuple  # (row, col) of the actor
    seed: tuple = ()


def actor_mask(height: int, width: int, center, radius: float) -> np.ndarray:
    rows, cols = np.mgrid[0:height, 0:width]
    return (rows - center[0]) ** 2 + (cols - center[1]) ** 2 <= radius**2 + 1e-9


def render_features(spec: SceneSpec, center, type_index: int) -> np.ndarray:
    mask = actor_mask(spec.height, spec.width, center, spec.actor_radius).astype(np.float64)
    feats = np.zeros((spec.height, spec.width, spec.n_features))
    feats[:, :, 0] = mask
    # the actor carries its scene type as colour, so the one-hot lives on the disk
    feats[:, :, 1 + type_index] = mask
    if spec.coord_channels:
        feats[:, :, -2] = np.linspace(-1, 1, spec.height)[:, None]
        feats[:, :, -1] = np.linspace(-1, 1, spec.width)[None, :]
    return feats


def mode_trajectory(spec: SceneSpec, center, primitive: Primitive) -> TrajectoryField:
    """Noise-free trajectory field for an actor at ``center`` following ``primitive``."""
    mask = actor_mask(spec.height, spec.width, center, spec.actor_radius)
    data = np.zeros((spec.height, spec.width, spec.horizon, 2))
    data[mask] = primitive.offsets(spec.horizon)
    return TrajectoryField(data)


def _as_rng(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def generate_scene(spec: SceneSpec, rng_seed) -> SceneSample:
    rng = _as_rng(rng_seed)
    r = int(np.floor(spec.actor_radius))
    center = (
        int(rng.integers(r, spec.height - r)),
        int(rng.integers(r, spec.width - r)),
    )
    type_index = int(rng.integers(spec.n_types))
    scene_type = spec.scene_types[type_index]
    mode_id = int(rng.choice(len(scene_type.modes), p=np.asarray(scene_type.mode_weights)))

    feats = render_features(spec, center, type_index)
    traj = mode_trajectory(spec, center, scene_type.modes[mode_id]).data
    if spec.noise_sigma > 0:
        mask = feats[:, :, 0] > 0
        noise = rng.normal(0.0, spec.noise_sigma, size=(int(mask.sum()), spec.horizon, 2))
        traj[mask] += noise
    if isinstance(rng_seed, (int, np.integer)):
        seed = (int(rng_seed),)
    else:
        seed = rng_seed if isinstance(rng_seed, tuple) else ()
    return SceneSample(feats, TrajectoryField(traj), scene_type.type_id, mode_id, center, seed)


@dataclass
class Dataset:
    spec: SceneSpec
    train: list
    test: list
    seed: int = 0


def _sample_seed(seed: int, split: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(split, index))


TRAIN_SPLIT, TEST_SPLIT, VAL_SPLIT = 0, 1, 2


def generate_split(spec: SceneSpec, n: int, rng_seed: int, split: int) -> list[SceneSample]:
    """``n`` scenes from the seed stream of one split; streams never overlap."""
    if n < 0:
        raise ValueError("sample counts must be nonnegative")
    out = []
    for i in range(n):
        s = generate_scene(spec, np.random.default_rng(_sample_seed(rng_seed, split, i)))
        s.seed = (rng_seed, split, i)
        out.append(s)
    return out


def build_dataset(spec: SceneSpec, n_train: int, n_test: int, rng_seed: int) -> Dataset:
    """Train and test scenes from disjoint seed streams (spawn keys 0 and 1)."""
    if n_train < 0 or n_test < 0:
        raise ValueError("sample counts must be nonnegative")
    train = generate_split(spec, n_train, rng_seed, TRAIN_SPLIT)
    test = generate_split(spec, n_test, rng_seed, TEST_SPLIT)
    return Dataset(spec, train, test, rng_seed)


def type_index_of(features: np.ndarray, n_types: int) -> int:
    return int(np.argmax(features[:, :, 1 : 1 + n_types].sum(axis=(0, 1))))


def center_of(features: np.ndarray) -> tuple:
    rows, cols = np.nonzero(features[:, :, 0] > 0.5)
    return (int(round(rows.mean())), int(round(cols.mean())))


def nearest_mode(spec: SceneSpec, sample: SceneSample, traj: TrajectoryField) -> int:
    """Index of the mode whose noise-free field is closest to ``traj``."""
    scene_type = spec.scene_types[type_index_of(sample.features, spec.n_types)]
    dists = [
        np.linalg.norm(mode_trajectory(spec, sample.center, m).data - traj.data)
        for m in scene_type.modes
    ]
    return int(np.argmin(dists))
