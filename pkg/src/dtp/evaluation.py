"""Sample-based evaluation: Parzen log-likelihood, min-distance curves,
k-means summaries of samples, and the constant-velocity baseline.

All distances live in the truncated spectral space (direction recombined
with magnitudes, channel-major vectors).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .codec import TrajectoryField, encode_field, split_normalize

LOG_2PI = np.log(2 * np.pi)


def default_bandwidth_grid() -> np.ndarray:
    return np.logspace(-2, 1, 13)


@dataclass(frozen=True)
class ParzenConfig:
    n_samples: int = 800
    h_dir_grid: tuple = tuple(default_bandwidth_grid())
    h_mag_grid: tuple = tuple(default_bandwidth_grid())

    def __post_init__(self):
        if not self.h_dir_grid or not self.h_mag_grid:
            raise ValueError("bandwidth grids must be nonempty")
        if min(self.h_dir_grid) <= 0 or min(self.h_mag_grid) <= 0:
            raise ValueError("bandwidths must be positive")


def _log_kernel(sq_dist, dim: int, h):
    h = np.asarray(h, dtype=np.float64)
    return -0.5 * sq_dist / h**2 - 0.5 * dim * (LOG_2PI + 2.0 * np.log(h))


def parzen_log_likelihood(sample_dirs, sample_mags, gt_dir, gt_mag, h_dir: float, h_mag: float) -> float:
    """log of the mean product-Gaussian kernel density at the ground truth.

    ``sample_dirs`` is (N, D), ``sample_mags`` is (N, 2).
    """
    sample_dirs = np.atleast_2d(np.asarray(sample_dirs, dtype=np.float64))
    sample_mags = np.atleast_2d(np.asarray(sample_mags, dtype=np.float64))
    n = sample_dirs.shape[0]
    if n == 0:
        raise ValueError("need at least one sample")
    if h_dir <= 0 or h_mag <= 0:
        raise ValueError("bandwidths must be positive")
    d_dir = np.sum((sample_dirs - gt_dir) ** 2, axis=1)
    d_mag = np.sum((sample_mags - gt_mag) ** 2, axis=1)
    return _parzen_from_distances(d_dir, d_mag, sample_dirs.shape[1], sample_mags.shape[1], h_dir, h_mag)


def _parzen_from_distances(d_dir, d_mag, dim_dir, dim_mag, h_dir, h_mag):
    """Broadcasts over bandwidth arrays shaped (..., 1)."""
    log_k = _log_kernel(d_dir, dim_dir, h_dir) + _log_kernel(d_mag, dim_mag, h_mag)
    return logsumexp(log_k, axis=-1) - np.log(d_dir.shape[-1])


def regressor_likelihood(pred_dir, pred_mag, gt_dir, gt_mag, h_dir: float, h_mag: float) -> float:
    """Log-density of the ground truth under a Gaussian centred at the regressor output."""
    return parzen_log_likelihood(np.atleast_2d(pred_dir), np.atleast_2d(pred_mag), gt_dir, gt_mag, h_dir, h_mag)


@dataclass
class SampleSet:
    """Squared distances from one image's samples to its ground truth.

    Only distances are kept so that hundreds of 3200-dim samples per image
    never have to stay in memory.
    """

    d_dir: np.ndarray  # (N,)
    d_mag: np.ndarray  # (N,)
    dim_dir: int
    dim_mag: int = 2

    @classmethod
    def from_samples(cls, dirs, mags, gt_dir, gt_mag) -> "SampleSet":
        dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
        mags = np.atleast_2d(np.asarray(mags, dtype=np.float64))
        return cls(
            np.sum((dirs - gt_dir) ** 2, axis=1),
            np.sum((mags - gt_mag) ** 2, axis=1),
            dirs.shape[1],
            mags.shape[1],
        )


def loglik_table(sets: Sequence[SampleSet], h_dir_grid, h_mag_grid) -> np.ndarray:
    """Per-image log-likelihoods for every bandwidth pair: shape (n_images, n_dir, n_mag)."""
    hd = np.asarray(h_dir_grid, dtype=np.float64)[:, None, None]
    hm = np.asarray(h_mag_grid, dtype=np.float64)[None, :, None]
    out = []
    for s in sets:
        out.append(_parzen_from_distances(s.d_dir, s.d_mag, s.dim_dir, s.dim_mag, hd, hm))
    return np.array(out)


def gridsearch_bandwidth(sets: Sequence[SampleSet], h_dir_grid, h_mag_grid) -> tuple[float, float]:
    """Bandwidth pair maximising the mean log-likelihood; ties go to smaller bandwidths."""
    if len(sets) == 0:
        raise ValueError("validation set is empty")
    order_d = np.argsort(h_dir_grid, kind="stable")
    order_m = np.argsort(h_mag_grid, kind="stable")
    hd = np.asarray(h_dir_grid, dtype=np.float64)[order_d]
    hm = np.asarray(h_mag_grid, dtype=np.float64)[order_m]
    table = loglik_table(sets, hd, hm)
    # sort rows so the sum does not depend on validation order
    mean = np.sort(table, axis=0).sum(axis=0) / len(sets)
    # argmax returns the first maximum, i.e. the smallest bandwidths
    i, j = np.unravel_index(int(np.argmax(mean)), mean.shape)
    return float(hd[i]), float(hm[j])


def mean_loglik(sets: Sequence[SampleSet], h_dir: float, h_mag: float) -> np.ndarray:
    """Per-image log-likelihoods at a fixed bandwidth pair."""
    return loglik_table(sets, [h_dir], [h_mag])[:, 0, 0]


def bootstrap_se(values, n_boot: int = 2000, seed: int = 0) -> float:
    """Bootstrap standard error of the mean of ``values``."""
    values = np.asarray(values, dtype=np.float64)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    return float(values[idx].mean(axis=1).std(ddof=1))


@dataclass
class MinEdCurve:
    values: np.ndarray  # index n-1 holds the mean min distance over the first n samples
    per_image: np.ndarray  # (n_images, n_max)

    def at(self, n: int) -> float:
        return float(self.values[n - 1])


def min_ed_curve(
    sampler: Callable[[int, int, int], np.ndarray],
    gts: Sequence[np.ndarray],
    n_max: int,
    rng_seed: int = 0,
) -> MinEdCurve:
    """Average over images of the distance from the ground truth to its closest sample.

    ``sampler(image_index, n, seed)`` returns (n, D) spectral vectors. Each image
    is sampled once with ``n_max`` draws; the value at n uses the first n of them.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    seeds = np.random.SeedSequence(rng_seed).generate_state(len(gts))
    per_image = np.empty((len(gts), n_max))
    for i, gt in enumerate(gts):
        samples = np.asarray(sampler(i, n_max, int(seeds[i])), dtype=np.float64)
        d = np.linalg.norm(samples[:n_max] - gt, axis=1)
        per_image[i] = np.minimum.accumulate(d)
    return MinEdCurve(per_image.mean(axis=0), per_image)


def gaussian_sampler_around(pred_dir, pred_mag, h_dir: float, h_mag: float, n: int, seed=0):
    """``n`` i.i.d. draws from N(pred, diag(h_dir^2, h_mag^2))."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pred_dir = np.asarray(pred_dir, dtype=np.float64)
    pred_mag = np.asarray(pred_mag, dtype=np.float64)
    dirs = pred_dir + h_dir * rng.standard_normal((n, pred_dir.size))
    mags = pred_mag + h_mag * rng.standard_normal((n, pred_mag.size))
    return dirs, mags


@dataclass
class ClusterReport:
    centroids: np.ndarray  # (k, D), sorted by motion magnitude, largest first
    counts: np.ndarray
    magnitudes: np.ndarray  # RMS of member coefficients per cluster
    labels: np.ndarray  # per-sample index into the sorted clusters
    sse_history: list = field(default_factory=list)

    def top(self, m: int = 2) -> list[int]:
        return [i for i in range(len(self.counts)) if self.counts[i] > 0][:m]


def _sq_dists(X, C):
    return np.maximum((X**2).sum(1)[:, None] - 2 * X @ C.T + (C**2).sum(1)[None, :], 0.0)


def kmeans_cluster(samples, k: int, seed=0, max_iter: int = 100, tol: float = 1e-6) -> ClusterReport:
    """Lloyd iterations from k-means++ seeds."""
    X = np.asarray(samples, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)

    centroids = [X[rng.integers(n)]]
    closest = ((X - centroids[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centroids.append(X[idx])
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(1))
    C = np.array(centroids)

    sse_history = []
    for _ in range(max_iter):
        d = _sq_dists(X, C)
        labels = np.argmin(d, axis=1)
        sse_history.append(float(d[np.arange(n), labels].sum()))
        new_C = C.copy()
        taken = set()
        for j in range(k):
            members = labels == j
            if members.any():
                new_C[j] = X[members].mean(axis=0)
        for j in range(k):
            if not (labels == j).any():
                # reseed from the point farthest from its current centroid
                far = d[np.arange(n), labels]
                far[list(taken)] = -1.0
                idx = int(np.argmax(far))
                taken.add(idx)
                new_C[j] = X[idx]
                labels[idx] = j
        shift = np.max(np.linalg.norm(new_C - C, axis=1))
        C = new_C
        if shift < tol:
            break
    d = _sq_dists(X, C)
    labels = np.argmin(d, axis=1)
    sse_history.append(float(d[np.arange(n), labels].sum()))

    counts = np.bincount(labels, minlength=k)
    mags = np.array([np.sqrt(np.mean(X[labels == j] ** 2)) if counts[j] else 0.0 for j in range(k)])
    order = np.argsort(-mags, kind="stable")
    remap = np.empty(k, dtype=int)
    remap[order] = np.arange(k)
    return ClusterReport(C[order], counts[order], mags[order], remap[labels], sse_history)


def constant_velocity_baseline(first_offset, horizon: int) -> TrajectoryField:
    """Linear extrapolation: offset(t) = t * first_offset for t = 1..T."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    first = np.asarray(first_offset, dtype=np.float64)
    t = np.arange(1, horizon + 1, dtype=np.float64)
    return TrajectoryField(first[:, :, None, :] * t[None, None, :, None])


class FlowBaseline:
    """Stand-in for a learned flow predictor followed by linear extrapolation.

    The "flow network" is the empirical distribution of first-frame actor
    motion seen in training, per scene type. A draw picks one observed
    first-frame velocity, paints it over the actor mask and extrapolates.
    """

    def __init__(self, n_types: int, horizon: int):
        self.n_types = n_types
        self.horizon = horizon
        self.velocities: dict[int, np.ndarray] = {}

    def fit(self, samples) -> "FlowBaseline":
        from .scenes import type_index_of

        per_type: dict[int, list] = {t: [] for t in range(self.n_types)}
        for s in samples:
            mask = s.features[:, :, 0] > 0.5
            per_type[type_index_of(s.features, self.n_types)].append(s.trajectory.data[mask, 0, :].mean(axis=0))
        self.velocities = {t: np.array(v).reshape(-1, 2) for t, v in per_type.items()}
        return self

    def sample_fields(self, features, n: int, seed=0) -> list[TrajectoryField]:
        from .scenes import type_index_of

        rng = np.random.default_rng(seed)
        pool = self.velocities[type_index_of(features, self.n_types)]
        if len(pool) == 0:
            pool = np.zeros((1, 2))
        mask = features[:, :, 0] > 0.5
        out = []
        for idx in rng.integers(len(pool), size=n):
            first = np.zeros(mask.shape + (2,))
            first[mask] = pool[idx]
            out.append(constant_velocity_baseline(first, self.horizon))
        return out


def fields_to_split(fields, n_coeffs: int) -> tuple[np.ndarray, np.ndarray]:
    """Trajectory fields -> (direction vectors, magnitude pairs)."""
    dirs, mags = [], []
    for f in fields:
        ns = split_normalize(encode_field(f, n_coeffs))
        dirs.append(ns.direction.to_vector())
        mags.append(ns.mags)
    return np.array(dirs), np.array(mags)
