"""Trajectory fields and their truncated-DCT spectral representation.

A trajectory field stores, for every cell of an H x W grid, the (dx, dy)
offset of that cell's content at frames 1..T relative to where it started.
Each offset sequence is compressed with an orthonormal DCT-II per axis and
only the first K coefficients are kept.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAG_FLOOR = 1e-12


@dataclass(frozen=True)
class TrajectoryField:
    """Offsets of shape (height, width, T, 2); last axis is (dx, dy)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[-1] != 2 or min(data.shape[:3]) < 1:
            raise ValueError(f"trajectory data must have shape (H, W, T, 2), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("trajectory data must be finite")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def horizon(self) -> int:
        return self.data.shape[2]

    @classmethod
    def zeros(cls, height: int, width: int, horizon: int) -> "TrajectoryField":
        return cls(np.zeros((height, width, horizon, 2)))


@dataclass(frozen=True)
class SpectralField:
    """DCT coefficients of shape (height, width, 2, K): axis 2 is (x, y)."""

    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if coeffs.ndim != 4 or coeffs.shape[2] != 2 or min(coeffs.shape) < 1:
            raise ValueError(f"spectral coeffs must have shape (H, W, 2, K), got {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("spectral coeffs must be finite")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def height(self) -> int:
        return self.coeffs.shape[0]

    @property
    def width(self) -> int:
        return self.coeffs.shape[1]

    @property
    def n_coeffs(self) -> int:
        return self.coeffs.shape[3]

    def to_vector(self) -> np.ndarray:
        """Channel-major flattening: (2K, H, W) -> 2K*H*W values."""
        return spectral_to_vector(self.coeffs)

    @classmethod
    def from_vector(cls, vec, height: int, width: int, n_coeffs: int) -> "SpectralField":
        return cls(vector_to_spectral(vec, height, width, n_coeffs))


@dataclass(frozen=True)
class NormalizedSpectral:
    direction: SpectralField
    mag_x: float
    mag_y: float

    @property
    def mags(self) -> np.ndarray:
        return np.array([self.mag_x, self.mag_y])


def spectral_to_vector(coeffs: np.ndarray) -> np.ndarray:
    """(..., H, W, 2, K) -> (..., 2K*H*W) in channel-major order."""
    coeffs = np.asarray(coeffs)
    lead = coeffs.shape[:-4]
    h, w, _, k = coeffs.shape[-4:]
    moved = np.moveaxis(coeffs.reshape(*lead, h, w, 2 * k), -1, -3)
    return moved.reshape(*lead, 2 * k * h * w)


def vector_to_spectral(vec: np.ndarray, height: int, width: int, n_coeffs: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    lead = vec.shape[:-1]
    grid = vec.reshape(*lead, 2 * n_coeffs, height, width)
    return np.moveaxis(grid, -3, -1).reshape(*lead, height, width, 2, n_coeffs)


@lru_cache(maxsize=32)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis; row k holds the k-th cosine."""
    if n < 1:
        raise ValueError("DCT length must be >= 1")
    k = np.arange(n)[:, None]
    t = np.arange(n)[None, :]
    basis = np.cos(np.pi * (2 * t + 1) * k / (2 * n))
    scale = np.full((n, 1), np.sqrt(2.0 / n))
    scale[0, 0] = np.sqrt(1.0 / n)
    out = scale * basis
    out.flags.writeable = False
    return out


def dct_forward(signal) -> np.ndarray:
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("dct_forward expects a non-empty 1-D signal")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal must be finite")
    return dct_matrix(x.size) @ x


def dct_inverse(coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.float64)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("dct_inverse expects a non-empty 1-D sequence")
    return dct_matrix(c.size).T @ c


def encode_field(traj: TrajectoryField, n_coeffs: int = 5) -> SpectralField:
    T = traj.horizon
    if not 1 <= n_coeffs <= T:
        raise ValueError(f"n_coeffs must lie in [1, {T}], got {n_coeffs}")
    basis = dct_matrix(T)[:n_coeffs]
    # (H, W, T, 2) -> (H, W, 2, K)
    coeffs = np.einsum("kt,hwta->hwak", basis, traj.data)
    return SpectralField(coeffs)


def decode_field(spec: SpectralField, horizon: int = 30) -> TrajectoryField:
    K = spec.n_coeffs
    if horizon < K:
        raise ValueError(f"horizon {horizon} shorter than coefficient count {K}")
    basis = dct_matrix(horizon)[:K]
    data = np.einsum("kt,hwak->hwta", basis, spec.coeffs)
    return TrajectoryField(data)


def split_normalize(spec: SpectralField) -> NormalizedSpectral:
    coeffs = spec.coeffs
    mags = np.sqrt(np.mean(coeffs**2, axis=(0, 1, 3)))
    direction = np.zeros_like(coeffs)
    for axis in range(2):
        if mags[axis] >= MAG_FLOOR:
            direction[:, :, axis, :] = coeffs[:, :, axis, :] / mags[axis]
        else:
            mags[axis] = 0.0
    return NormalizedSpectral(SpectralField(direction), float(mags[0]), float(mags[1]))


def recombine(ns: NormalizedSpectral) -> SpectralField:
    mags = np.array([ns.mag_x, ns.mag_y])
    return SpectralField(ns.direction.coeffs * mags[None, None, :, None])


def recombine_vectors(direction: np.ndarray, mags: np.ndarray, n_coeffs: int) -> np.ndarray:
    """Batched recombine on channel-major vectors.

    ``direction`` is (..., 2K*H*W), ``mags`` is (..., 2). The first K*H*W
    entries of a vector are the x-axis channels, the rest the y-axis ones.
    """
    direction = np.asarray(direction, dtype=np.float64)
    mags = np.asarray(mags, dtype=np.float64)
    half = direction.shape[-1] // 2
    out = direction.copy()
    out[..., :half] *= mags[..., :1]
    out[..., half:] *= mags[..., 1:2]
    return out
