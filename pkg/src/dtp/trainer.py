"""Mini-batch training for the CVAE and the regressor baseline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, asdict, field

import numpy as np

from .cvae import CvaeConfig, MODEL_KINDS, encode_targets, init_model, loss_and_grad, _flat_features
from .nn import AdamState, ParamStore, adam_update_

log = logging.getLogger(__name__)

TERMS = ("total", "dir", "mag_x", "mag_y", "kl")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    kl_weight: float | None = None  # None: use the model config's weight
    kl_warmup_epochs: int = 0  # linear ramp of the KL weight from 0
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def kl_weight_at(self, epoch: int, base: float) -> float:
        w = base if self.kl_weight is None else self.kl_weight
        if self.kl_warmup_epochs > 0:
            w *= min(1.0, (epoch + 1) / self.kl_warmup_epochs)
        return w

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __getitem__(self, i) -> dict:
        return self.rows[i]

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def csv_rows(self) -> list[list]:
        return [[i, *(r[t] for t in TERMS)] for i, r in enumerate(self.rows)]


@dataclass
class TrainArrays:
    X: np.ndarray
    y_dir: np.ndarray
    y_mag: np.ndarray

    def __len__(self) -> int:
        return self.X.shape[0]


def prepare_arrays(samples, cfg: CvaeConfig) -> TrainArrays:
    if len(samples) == 0:
        return TrainArrays(np.zeros((0, cfg.input_dim)), np.zeros((0, cfg.direction_dim)), np.zeros((0, 2)))
    X = np.stack([_flat_features(cfg, s.features) for s in samples])
    y_dir, y_mag = encode_targets([s.trajectory for s in samples], cfg.n_coeffs)
    return TrainArrays(X, y_dir, y_mag)


def _as_arrays(data, cfg) -> TrainArrays:
    return data if isinstance(data, TrainArrays) else prepare_arrays(data, cfg)


def eta_stream(seed: int, epoch: int, n: int, latent_dim: int) -> np.ndarray:
    """Noise draws for one epoch, one row per sample index."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1, epoch)))
    return rng.standard_normal((n, latent_dim))


def _shuffle_order(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0, epoch)))
    return rng.permutation(n)


def train(
    data,
    kind: str,
    model_cfg: CvaeConfig,
    config: TrainConfig = TrainConfig(),
    params: ParamStore | None = None,
    callback=None,
) -> tuple[ParamStore, TrainHistory]:
    """Fit ``kind`` on ``data`` (SceneSamples or prepared arrays).

    Deterministic in (data, configs): shuffles and eta draws come from
    ``config.seed``, and batch gradients are averaged in sample order.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    arrays = _as_arrays(data, model_cfg)
    n = len(arrays)
    if n == 0:
        raise ValueError("training set is empty")
    if params is None:
        params = init_model(model_cfg, kind, config.seed)
    params = params.copy()
    state = AdamState.zeros(params)
    history = TrainHistory()
    step = 0
    for epoch in range(config.epochs):
        order = _shuffle_order(config.seed, epoch, n)
        etas = eta_stream(config.seed, epoch, n, model_cfg.latent_dim)
        klw = config.kl_weight_at(epoch, model_cfg.kl_weight)
        sums = dict.fromkeys(TERMS, 0.0)
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = np.sort(order[start : start + config.batch_size])
            total, terms, grads = loss_and_grad(
                params,
                model_cfg,
                arrays.X[idx],
                arrays.y_dir[idx],
                arrays.y_mag[idx],
                etas[idx] if kind == "cvae" else None,
                kind=kind,
                kl_weight=klw,
            )
            if not np.isfinite(total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
            for t in TERMS:
                sums[t] += terms[t] * len(idx)
            step += 1
            params.check_congruent(grads)
            adam_update_(params, grads, state, config.lr, config.beta1, config.beta2, config.eps_hat, step)
        row = {t: sums[t] / n for t in TERMS}
        history.rows.append(row)
        log.info("epoch %d %s", epoch, " ".join(f"{t}={row[t]:.4f}" for t in TERMS))
        if callback is not None:
            callback(epoch, params, row)
    return params, history


def evaluate_loss(data, params: ParamStore, kind: str, model_cfg: CvaeConfig, seed: int = 0, kl_weight=None) -> dict:
    """Per-term means using the epoch-0 eta stream of ``seed``."""
    arrays = _as_arrays(data, model_cfg)
    n = len(arrays)
    if n == 0:
        raise ValueError("evaluation set is empty")
    etas = eta_stream(seed, 0, n, model_cfg.latent_dim)
    sums = dict.fromkeys(TERMS, 0.0)
    for start in range(0, n, 256):
        sl = slice(start, min(n, start + 256))
        _, terms, _ = loss_and_grad(
            params,
            model_cfg,
            arrays.X[sl],
            arrays.y_dir[sl],
            arrays.y_mag[sl],
            etas[sl] if kind == "cvae" else None,
            kind=kind,
            kl_weight=kl_weight,
            need_grad=False,
        )
        for t in TERMS:
            sums[t] += terms[t] * (sl.stop - sl.start)
    return {t: sums[t] / n for t in TERMS}
