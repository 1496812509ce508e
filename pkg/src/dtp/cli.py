"""Command-line entry point: ``dtp <subcommand> [flags]``.

Every output is a pure function of the inputs, flags and ``--seed``.
Exit codes: 0 success, 1 usage error, 2 data/model error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from .codec import SpectralField, decode_field, recombine_vectors
from .cvae import (
    MODEL_KINDS,
    Model,
    latent_interpolate,
    posterior_of,
    regressor_forward,
    sample_predictions,
)
from .evaluation import (
    FlowBaseline,
    SampleSet,
    bootstrap_se,
    default_bandwidth_grid,
    fields_to_split,
    gaussian_sampler_around,
    gridsearch_bandwidth,
    kmeans_cluster,
    mean_loglik,
    min_ed_curve,
)
from .experiment import ExperimentConfig, assign_modes, default_model_config, mode_vectors, run_experiment
from .fileio import FormatError, emit_csv, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .render import render_trajectory_svg
from .scenes import VAL_SPLIT, SceneSpec, build_dataset, generate_split, mode_trajectory, type_index_of
from .trainer import TrainConfig, train

log = logging.getLogger("dtp")

CSV_HEADER = ["method", "metric", "n", "value"]
HISTORY_HEADER = ["epoch", "total", "dir", "mag_x", "mag_y", "kl"]


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"{path}: cannot read config ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON config ({exc})") from None
    if not isinstance(cfg, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return cfg


def _dataset(path):
    try:
        return load_dataset(path)
    except FileNotFoundError:
        raise DataError(f"{path}: dataset file not found") from None
    except (OSError, FormatError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _checkpoint(path) -> Model:
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"{path}: model file not found") from None
    except (OSError, FormatError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _check_compatible(model: Model, data, model_path, data_path) -> None:
    cfg, spec = model.config, data.spec
    if (cfg.height, cfg.width, cfg.n_features) != (spec.height, spec.width, spec.n_features):
        raise DataError(f"{model_path}: model dims do not match dataset {data_path}")


def _pick(samples, index, path):
    if not 0 <= index < len(samples):
        raise DataError(f"{path}: image index {index} out of range (0..{len(samples) - 1})")
    return samples[index]


def _image_seed(seed: int, split: int, i: int, stream: int = 0) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(split, i, stream)).generate_state(1)[0])


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _truth(sample, n_coeffs):
    d, m = fields_to_split([sample.trajectory], n_coeffs)
    return d[0], m[0]


class _Method:
    """Uniform draw interface over a CVAE, a regressor, or the flow stand-in."""

    def __init__(self, model: Model | None, flow: FlowBaseline | None, n_coeffs: int):
        self.model, self.flow, self.n_coeffs = model, flow, n_coeffs
        self.name = "flow" if model is None else model.kind

    def draws(self, sample, n, seed):
        if self.model is None:
            return fields_to_split(self.flow.sample_fields(sample.features, n, seed), self.n_coeffs)
        if self.model.kind == "cvae":
            pred = sample_predictions(self.model.params, self.model.config, sample.features, n, seed)
        else:
            pred = regressor_forward(self.model.params, self.model.config, sample.features)
        return np.atleast_2d(pred.direction), np.atleast_2d(pred.mags)

    def default_fit(self) -> str:
        return "val" if self.name == "cvae" else "test"


def _method(args, data) -> _Method:
    if args.flow:
        flow = FlowBaseline(data.spec.n_types, data.spec.horizon).fit(data.train)
        return _Method(None, flow, args.n_coeffs)
    if args.model is None:
        raise UsageError("one of --model or --flow is required")
    model = _checkpoint(args.model)
    _check_compatible(model, data, args.model, args.data)
    return _Method(model, None, model.config.n_coeffs)


def _sample_sets(method: _Method, samples, split, n, seed, n_coeffs):
    sets = []
    for i, s in enumerate(samples):
        gt_dir, gt_mag = _truth(s, n_coeffs)
        dirs, mags = method.draws(s, n, _image_seed(seed, split, i))
        sets.append(SampleSet.from_samples(dirs, mags, gt_dir, gt_mag))
    return sets


def _fit_bandwidth(args, method, data, test_sets, n_coeffs):
    fit = args.bandwidth_fit or method.default_fit()
    grid = default_bandwidth_grid()
    if fit == "test":
        sets = test_sets
    else:
        val = generate_split(data.spec, args.n_val, data.seed, VAL_SPLIT)
        sets = _sample_sets(method, val, VAL_SPLIT, args.n_samples, args.seed, n_coeffs)
    h_dir, h_mag = gridsearch_bandwidth(sets, grid, grid)
    return h_dir, h_mag, fit


def cmd_gen_data(args, config) -> None:
    spec = SceneSpec.from_dict({**SceneSpec().to_dict(), **config.get("scene", {})})
    data = build_dataset(spec, args.n_train, args.n_test, args.seed)
    save_dataset(data, args.out, args.n_coeffs)


def cmd_train(args, config) -> None:
    data, header = _dataset(args.data)
    model_cfg = default_model_config(data.spec, header["K"])
    model_cfg = type(model_cfg).from_dict({**model_cfg.to_dict(), **config.get("model", {})})
    defaults = ExperimentConfig()
    base = defaults.cvae_train if args.model == "cvae" else defaults.regressor_train
    tc = TrainConfig(**{**base.to_dict(), **config.get("train", {}), "seed": args.seed})
    if args.epochs is not None:
        tc = replace(tc, epochs=args.epochs)
    params, history = train(data.train, args.model, model_cfg, tc)
    meta = {"train": tc.to_dict(), "n_coeffs": model_cfg.n_coeffs, "horizon": data.spec.horizon, "data_seed": data.seed}
    save_checkpoint(Model(args.model, model_cfg, params, meta), args.out)
    if args.history:
        rows = [[e, *(r[k] for k in HISTORY_HEADER[1:])] for e, r in enumerate(history.rows)]
        emit_csv(HISTORY_HEADER, rows, args.history)


def cmd_sample(args, config) -> None:
    data, _ = _dataset(args.data)
    model = _checkpoint(args.model)
    _check_compatible(model, data, args.model, args.data)
    s = _pick(data.test, args.image_index, args.data)
    cfg = model.config
    if model.kind == "cvae":
        pred = sample_predictions(model.params, cfg, s.features, args.n, _image_seed(args.seed, 1, args.image_index))
    else:
        one = regressor_forward(model.params, cfg, s.features)
        pred = type(one)(np.repeat(one.direction[None], args.n, 0), np.repeat(one.mags[None], args.n, 0))
    out = _out_dir(args.out)
    rows = []
    for j in range(args.n):
        render_trajectory_svg(pred[j].to_trajectory(cfg, data.spec.horizon), out / f"sample_{j:03d}.svg")
        rows.append([model.kind, "mag_x", j, float(pred.mags[j, 0])])
        rows.append([model.kind, "mag_y", j, float(pred.mags[j, 1])])
    emit_csv(CSV_HEADER, rows, out / "samples.csv")


def cmd_eval_nll(args, config) -> None:
    data, header = _dataset(args.data)
    args.n_coeffs = header["K"]
    method = _method(args, data)
    K = method.n_coeffs
    test = data.test[: args.n_images] if args.n_images else data.test
    test_sets = _sample_sets(method, test, 1, args.n_samples, args.seed, K)
    h_dir, h_mag, fit = _fit_bandwidth(args, method, data, test_sets, K)
    ll = mean_loglik(test_sets, h_dir, h_mag)
    rows = [
        [method.name, "nll", "", float(-ll.mean())],
        [method.name, "nll_se", "", bootstrap_se(ll, seed=args.seed)],
        [method.name, f"h_dir[{fit}]", "", h_dir],
        [method.name, f"h_mag[{fit}]", "", h_mag],
    ]
    rows += [[method.name, "loglik", i, float(v)] for i, v in enumerate(ll)]
    emit_csv(CSV_HEADER, rows, args.out)


def cmd_eval_mined(args, config) -> None:
    data, header = _dataset(args.data)
    args.n_coeffs = header["K"]
    method = _method(args, data)
    K = method.n_coeffs
    test = data.test[: args.n_images] if args.n_images else data.test
    gts = [recombine_vectors(*_truth(s, K), K) for s in test]
    rows = []
    if method.name == "regressor":
        outputs = [method.draws(s, 1, 0) for s in test]
        line = float(np.mean([np.linalg.norm(recombine_vectors(d[0], m[0], K) - g) for (d, m), g in zip(outputs, gts)]))
        rows += [["regressor_direct", "min_ed", n, line] for n in range(1, args.n_max + 1)]
        test_sets = _sample_sets(method, test, 1, 1, args.seed, K)
        h_dir, h_mag, _ = _fit_bandwidth(args, method, data, test_sets, K)

        def sampler(i, n, seed):
            d, m = gaussian_sampler_around(outputs[i][0][0], outputs[i][1][0], h_dir, h_mag, n, seed)
            return recombine_vectors(d, m, K)

        name = "regressor_gaussian"
    else:

        def sampler(i, n, seed):
            d, m = method.draws(test[i], n, _image_seed(args.seed, 1, i))
            return recombine_vectors(d, m, K)

        name = method.name
    curve = min_ed_curve(sampler, gts, args.n_max, args.seed)
    rows += [[name, "min_ed", n, float(v)] for n, v in enumerate(curve.values, start=1)]
    emit_csv(CSV_HEADER, rows, args.out)


def cmd_cluster(args, config) -> None:
    data, _ = _dataset(args.data)
    model = _checkpoint(args.model)
    _check_compatible(model, data, args.model, args.data)
    if model.kind != "cvae":
        raise DataError(f"{args.model}: clustering needs a cvae model, got {model.kind}")
    cfg = model.config
    s = _pick(data.test, args.image_index, args.data)
    pred = sample_predictions(model.params, cfg, s.features, args.n, _image_seed(args.seed, 1, args.image_index))
    vecs = pred.spectral_vectors(cfg.n_coeffs)
    if args.k > len(vecs):
        raise UsageError(f"--k {args.k} exceeds --n {args.n}")
    report = kmeans_cluster(vecs, args.k, args.seed)
    out = _out_dir(args.out)
    rows = []
    for c in range(args.k):
        rows.append(["cvae", "cluster_size", c, int(report.counts[c])])
        rows.append(["cvae", "cluster_rms", c, float(report.magnitudes[c])])
    for rank, c in enumerate(report.top(args.top)):
        spec = SpectralField.from_vector(report.centroids[c], cfg.height, cfg.width, cfg.n_coeffs)
        render_trajectory_svg(decode_field(spec, data.spec.horizon), out / f"cluster_{rank}.svg")
    emit_csv(CSV_HEADER, rows, out / "clusters.csv")


def cmd_interpolate(args, config) -> None:
    data, _ = _dataset(args.data)
    model = _checkpoint(args.model)
    _check_compatible(model, data, args.model, args.data)
    if model.kind != "cvae":
        raise DataError(f"{args.model}: interpolation needs a cvae model, got {model.kind}")
    cfg, spec = model.config, data.spec
    s = _pick(data.test, args.image_index, args.data)
    st = spec.scene_types[type_index_of(s.features, spec.n_types)]
    if len(st.modes) < 2:
        raise DataError(f"{args.data}: scene type {st.type_id} has a single mode")
    za, zb = (posterior_of(model.params, cfg, s.features, mode_trajectory(spec, s.center, m)).mu for m in st.modes[:2])
    preds = latent_interpolate(model.params, cfg, s.features, za, zb, args.steps)
    labels = assign_modes(preds.spectral_vectors(cfg.n_coeffs), mode_vectors(spec, s, cfg.n_coeffs)[:2])
    out = _out_dir(args.out)
    rows = []
    for j in range(args.steps):
        render_trajectory_svg(preds[j].to_trajectory(cfg, spec.horizon), out / f"step_{j:03d}.svg")
        rows.append(["cvae", "nearest_mode", j, int(labels[j])])
    emit_csv(CSV_HEADER, rows, out / "interpolation.csv")


def cmd_render(args, config) -> None:
    data, _ = _dataset(args.data)
    samples = data.test if args.split == "test" else data.train
    s = _pick(samples, args.image_index, args.data)
    render_trajectory_svg(s.trajectory, args.out)


def cmd_experiment(args, config) -> None:
    section = dict(config.get("experiment", {}))
    for key in ("cvae_train", "regressor_train"):
        if key in section:
            base = getattr(ExperimentConfig(), key).to_dict()
            section[key] = TrainConfig(**{**base, **section[key]})
    exp = ExperimentConfig(**{**section, "seed": args.seed})
    spec = SceneSpec.from_dict({**SceneSpec().to_dict(), **config.get("scene", {})})
    model_cfg = default_model_config(spec)
    model_cfg = type(model_cfg).from_dict({**model_cfg.to_dict(), **config.get("model", {})})
    report = run_experiment(exp, spec, model_cfg)
    emit_csv(CSV_HEADER, report.summary_rows(), args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dtp", description="Dense trajectory prediction with a conditional VAE.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, fn, help_text, out_required=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="JSON file with 'scene', 'model', 'train', 'experiment' sections")
        p.add_argument("--out", required=out_required)
        p.set_defaults(func=fn)
        return p

    p = command("gen-data", cmd_gen_data, "generate a procedural dataset file")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--n-coeffs", type=int, default=5)

    p = command("train", cmd_train, "train a cvae or regressor")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--history", default=None, help="per-epoch loss CSV")

    p = command("sample", cmd_sample, "render n predictions for one test image")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--image-index", type=int, default=0)
    p.add_argument("--n", type=int, default=5)

    for name, fn, text in (
        ("eval-nll", cmd_eval_nll, "Parzen-window negative log-likelihood on test images"),
        ("eval-mined", cmd_eval_mined, "minimum Euclidean distance over n samples"),
    ):
        p = command(name, fn, text)
        p.add_argument("--data", required=True)
        p.add_argument("--model", default=None)
        p.add_argument("--flow", action="store_true", help="evaluate the constant-velocity baseline")
        p.add_argument("--bandwidth-fit", choices=("val", "test"), default=None)
        p.add_argument("--n-samples", type=int, default=800)
        p.add_argument("--n-val", type=int, default=50)
        p.add_argument("--n-images", type=int, default=0, help="limit to the first n test images (0 = all)")
        if name == "eval-mined":
            p.add_argument("--n-max", type=int, default=100)

    p = command("cluster", cmd_cluster, "k-means over cvae samples for one test image")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--image-index", type=int, default=0)
    p.add_argument("--n", type=int, default=800)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--top", type=int, default=2)

    p = command("interpolate", cmd_interpolate, "decode along a line between opposite-mode posterior means")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--image-index", type=int, default=0)
    p.add_argument("--steps", type=int, default=5)

    p = command("render", cmd_render, "render a ground-truth trajectory field as SVG")
    p.add_argument("--data", required=True)
    p.add_argument("--image-index", type=int, default=0)
    p.add_argument("--split", choices=("train", "test"), default="test")

    command("experiment", cmd_experiment, "run the full multimodality experiment and write its summary CSV")
    return parser


def _thread_limit():
    value = os.environ.get("DTP_THREADS", "0") or "0"
    try:
        n = int(value)
    except ValueError:
        raise UsageError(f"DTP_THREADS must be an integer, got {value!r}") from None
    if n <= 0:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        config = _load_config(args.config)
        with _thread_limit():
            args.func(args, config)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dtp: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"dtp: {exc}", file=sys.stderr)
        return 2
    except (TypeError, ValueError) as exc:
        print(f"dtp: invalid configuration or data: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"dtp: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
