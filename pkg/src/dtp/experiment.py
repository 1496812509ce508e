"""Desk-scale multimodality experiment: CVAE vs regressor vs flow extrapolation.

Trains both models on the default two-mode scenes and measures regressor
mean-collapse, CVAE mode coverage, min-distance curves, Parzen
log-likelihoods, and the latent interpolation probe.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .codec import encode_field, recombine_vectors
from .cvae import (
    CvaeConfig,
    image_tower,
    latent_interpolate,
    posterior_of,
    regressor_forward,
    sample_predictions,
)
from .evaluation import (
    FlowBaseline,
    SampleSet,
    bootstrap_se,
    fields_to_split,
    gaussian_sampler_around,
    gridsearch_bandwidth,
    mean_loglik,
    min_ed_curve,
    default_bandwidth_grid,
)
from .scenes import VAL_SPLIT, Dataset, SceneSpec, build_dataset, generate_split, mode_trajectory, type_index_of
from .trainer import TrainConfig, prepare_arrays, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    n_train: int = 2000
    n_test: int = 200
    n_val: int = 50
    n_samples: int = 800
    n_max: int = 100
    seed: int = 0
    cvae_train: TrainConfig = TrainConfig(epochs=60, lr=3e-3, kl_weight=20.0)
    regressor_train: TrainConfig = TrainConfig(epochs=10, lr=1e-3)


def default_model_config(spec: SceneSpec, n_coeffs: int = 5) -> CvaeConfig:
    """Desk-scale architecture used by the experiment: a wide one-layer image code, no decoder hidden layer."""
    return CvaeConfig(
        height=spec.height,
        width=spec.width,
        n_coeffs=n_coeffs,
        n_features=spec.n_features,
        code_dim=640,
        image_hidden=(),
        encoder_hidden=(128,),
        decoder_hidden=(),
        z_broadcast="linear",
        z_bias=True,
    )


def mode_vectors(spec: SceneSpec, sample, n_coeffs: int) -> np.ndarray:
    """Noise-free spectral vectors (one row per mode) for the sample's scene type and position."""
    st = spec.scene_types[type_index_of(sample.features, spec.n_types)]
    return np.array([encode_field(mode_trajectory(spec, sample.center, m), n_coeffs).to_vector() for m in st.modes])


def assign_modes(vectors: np.ndarray, modes: np.ndarray) -> np.ndarray:
    d = ((vectors[:, None, :] - modes[None, :, :]) ** 2).sum(-1)
    return np.argmin(d, axis=1)


@dataclass
class ExperimentReport:
    collapse_ratio: float = np.nan
    coverage_fraction: float = np.nan
    coverage_per_image: np.ndarray = None
    curves: dict = field(default_factory=dict)  # method -> MinEdCurve values
    regressor_line: float = np.nan
    loglik: dict = field(default_factory=dict)  # method -> per-image log-likelihoods
    bandwidths: dict = field(default_factory=dict)  # method -> (h_dir, h_mag, fitted_on)
    interpolation_accuracy: float = np.nan
    timings: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)  # method -> trained ParamStore
    model_config: CvaeConfig | None = None
    data: Dataset | None = None

    def nll(self, method: str) -> float:
        return float(-np.mean(self.loglik[method]))

    def nll_margin(self, better: str, worse: str) -> tuple[float, float]:
        """(mean loglik advantage of ``better``, bootstrap SE of the paired difference)."""
        diff = np.asarray(self.loglik[better]) - np.asarray(self.loglik[worse])
        return float(diff.mean()), bootstrap_se(diff)

    def summary_rows(self) -> list[list]:
        rows = [
            ["regressor", "collapse_ratio", "", self.collapse_ratio],
            ["cvae", "coverage_fraction", "", self.coverage_fraction],
            ["cvae", "interpolation_accuracy", "", self.interpolation_accuracy],
            ["regressor_direct", "min_ed", "", self.regressor_line],
        ]
        for method, values in self.curves.items():
            for n, v in enumerate(values, start=1):
                rows.append([method, "min_ed", n, float(v)])
        for method in self.loglik:
            rows.append([method, "nll", "", self.nll(method)])
            h_dir, h_mag, fit = self.bandwidths[method]
            rows.append([method, f"h_dir[{fit}]", "", h_dir])
            rows.append([method, f"h_mag[{fit}]", "", h_mag])
        return rows


class Evaluator:
    """Draws and caches the per-image sample sets used by every metric."""

    def __init__(self, spec: SceneSpec, cfg: CvaeConfig, cvae_params, reg_params, flow: FlowBaseline, seed: int = 0):
        self.spec, self.cfg = spec, cfg
        self.cvae_params, self.reg_params, self.flow = cvae_params, reg_params, flow
        self.seed = seed

    def _seed(self, split: int, i: int, stream: int) -> int:
        return int(np.random.SeedSequence(entropy=self.seed, spawn_key=(split, i, stream)).generate_state(1)[0])

    def truth(self, sample):
        d, m = fields_to_split([sample.trajectory], self.cfg.n_coeffs)
        return d[0], m[0]

    def cvae_samples(self, sample, n, split, i):
        pred = sample_predictions(self.cvae_params, self.cfg, sample.features, n, self._seed(split, i, 0))
        return pred.direction, pred.mags

    def regressor_output(self, sample):
        pred = regressor_forward(self.reg_params, self.cfg, sample.features)
        return pred.direction, pred.mags

    def flow_samples(self, sample, n, split, i):
        fields = self.flow.sample_fields(sample.features, n, self._seed(split, i, 1))
        cache = {}
        dirs, mags = [], []
        for f in fields:
            key = f.data[:, :, 0, :].tobytes()
            if key not in cache:
                d, m = fields_to_split([f], self.cfg.n_coeffs)
                cache[key] = (d[0], m[0])
            dirs.append(cache[key][0])
            mags.append(cache[key][1])
        return np.array(dirs), np.array(mags)


def run_experiment(config: ExperimentConfig = ExperimentConfig(), spec: SceneSpec | None = None,
                   model_cfg: CvaeConfig | None = None) -> ExperimentReport:
    spec = spec or SceneSpec()
    model_cfg = model_cfg or default_model_config(spec)
    report = ExperimentReport()
    t0 = time.time()
    data: Dataset = build_dataset(spec, config.n_train, config.n_test, config.seed)
    arrays = prepare_arrays(data.train, model_cfg)
    report.timings["data"] = time.time() - t0

    t0 = time.time()
    cvae_params, h_cvae = train(arrays, "cvae", model_cfg, config.cvae_train)
    report.timings["train_cvae"] = time.time() - t0
    t0 = time.time()
    reg_params, h_reg = train(arrays, "regressor", model_cfg, config.regressor_train)
    report.timings["train_regressor"] = time.time() - t0
    report.histories = {"cvae": h_cvae, "regressor": h_reg}
    report.params = {"cvae": cvae_params, "regressor": reg_params}
    report.model_config, report.data = model_cfg, data
    flow = FlowBaseline(spec.n_types, spec.horizon).fit(data.train)

    t0 = time.time()
    ev = Evaluator(spec, model_cfg, cvae_params, reg_params, flow, config.seed)
    evaluate_models(ev, data, config, report)
    report.timings["evaluate"] = time.time() - t0
    return report


def evaluate_models(ev: Evaluator, data: Dataset, config: ExperimentConfig, report: ExperimentReport) -> None:
    spec, cfg = ev.spec, ev.cfg
    K = cfg.n_coeffs
    grid = default_bandwidth_grid()
    test = data.test

    cvae_sets, reg_sets, flow_sets = [], [], []
    coverage, collapse_pred, collapse_true = [], [], []
    cvae_spectral, flow_spectral, reg_outputs, gts = [], [], [], []
    reg_dist = []
    for i, s in enumerate(test):
        gt_dir, gt_mag = ev.truth(s)
        gt_vec = recombine_vectors(gt_dir, gt_mag, K)
        modes = mode_vectors(spec, s, K)

        dirs, mags = ev.cvae_samples(s, config.n_samples, 1, i)
        cvae_sets.append(SampleSet.from_samples(dirs, mags, gt_dir, gt_mag))
        vecs = recombine_vectors(dirs, mags, K)
        cvae_spectral.append(vecs[: config.n_max])
        counts = np.bincount(assign_modes(vecs, modes), minlength=len(modes)) / len(vecs)
        coverage.append(counts)

        r_dir, r_mag = ev.regressor_output(s)
        reg_sets.append(SampleSet.from_samples(r_dir, r_mag, gt_dir, gt_mag))
        reg_outputs.append((r_dir, r_mag))
        collapse_pred.append(np.linalg.norm(r_dir))
        collapse_true.append(np.linalg.norm(gt_dir))
        reg_dist.append(np.linalg.norm(recombine_vectors(r_dir, r_mag, K) - gt_vec))

        f_dir, f_mag = ev.flow_samples(s, config.n_samples, 1, i)
        flow_sets.append(SampleSet.from_samples(f_dir, f_mag, gt_dir, gt_mag))
        flow_spectral.append(recombine_vectors(f_dir[: config.n_max], f_mag[: config.n_max], K))
        gts.append(gt_vec)

    report.collapse_ratio = float(np.mean(collapse_pred) / np.mean(collapse_true))
    report.coverage_per_image = np.array([c.min() for c in coverage])
    report.coverage_fraction = float(np.mean(report.coverage_per_image >= 0.10))
    report.regressor_line = float(np.mean(reg_dist))

    # bandwidths: ours on a held-out validation split, baselines on test scenes
    val = generate_split(spec, config.n_val, config.seed, VAL_SPLIT)
    val_sets = []
    for i, s in enumerate(val):
        gt_dir, gt_mag = ev.truth(s)
        dirs, mags = ev.cvae_samples(s, config.n_samples, VAL_SPLIT, i)
        val_sets.append(SampleSet.from_samples(dirs, mags, gt_dir, gt_mag))
    h_cvae = gridsearch_bandwidth(val_sets, grid, grid)
    h_reg = gridsearch_bandwidth(reg_sets, grid, grid)
    h_flow = gridsearch_bandwidth(flow_sets, grid, grid)
    report.bandwidths = {"cvae": (*h_cvae, "val"), "regressor": (*h_reg, "test"), "flow": (*h_flow, "test")}
    report.loglik = {
        "cvae": mean_loglik(cvae_sets, *h_cvae),
        "regressor": mean_loglik(reg_sets, *h_reg),
        "flow": mean_loglik(flow_sets, *h_flow),
    }

    report.curves["cvae"] = min_ed_curve(lambda i, n, seed: cvae_spectral[i][:n], gts, config.n_max).values

    def reg_sampler(i, n, seed):
        d, m = gaussian_sampler_around(*reg_outputs[i], h_reg[0], h_reg[1], n, seed)
        return recombine_vectors(d, m, K)

    report.curves["regressor_gaussian"] = min_ed_curve(reg_sampler, gts, config.n_max, config.seed).values

    def flow_sampler(i, n, seed):
        return flow_spectral[i][:n]

    report.curves["flow"] = min_ed_curve(flow_sampler, gts, config.n_max).values
    report.interpolation_accuracy = interpolation_probe(ev, data)


def interpolation_probe(ev: Evaluator, data: Dataset, n_probe: int = 50) -> float:
    """Fraction of probed test scenes whose interpolation endpoints land on opposite modes.

    For each test scene, z_a and z_b are the posterior means of that scene's
    own context paired with each of the two mode trajectories; decoding at
    the endpoints should reproduce the matching mode.
    """
    spec, cfg = ev.spec, ev.cfg
    K = cfg.n_coeffs
    hits, total = 0, 0
    for s in data.test[:n_probe]:
        st = spec.scene_types[type_index_of(s.features, spec.n_types)]
        if len(st.modes) < 2:
            continue
        trajs = [mode_trajectory(spec, s.center, m) for m in st.modes[:2]]
        za = posterior_of(ev.cvae_params, cfg, s.features, trajs[0]).mu
        zb = posterior_of(ev.cvae_params, cfg, s.features, trajs[1]).mu
        preds = latent_interpolate(ev.cvae_params, cfg, s.features, za, zb, 5)
        vecs = preds.spectral_vectors(K)
        modes = mode_vectors(spec, s, K)[:2]
        labels = assign_modes(vecs[[0, -1]], modes)
        hits += int(labels[0] == 0 and labels[1] == 1)
        total += 1
    return hits / max(total, 1)
