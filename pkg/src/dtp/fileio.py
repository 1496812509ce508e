"""Binary dataset and checkpoint files, plus CSV emission.

Both binary formats start with a magic line, then one line of JSON header,
then a little-endian payload whose length is fully determined by the header.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .codec import TrajectoryField
from .cvae import CvaeConfig, Model
from .nn import ParamStore
from .scenes import Dataset, SceneSample, SceneSpec, center_of, type_index_of

DATASET_MAGIC = b"DTPD1\n"
CHECKPOINT_MAGIC = b"DTPC1\n"


class FormatError(ValueError):
    """A file exists but does not hold what its header promises."""


def _header_bytes(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"


def _split_file(raw: bytes, magic: bytes, path) -> tuple[dict, bytes]:
    if not raw.startswith(magic):
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    end = raw.find(b"\n", len(magic))
    if end < 0:
        raise FormatError(f"{path}: missing header line")
    try:
        header = json.loads(raw[len(magic) : end])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from None
    return header, raw[end + 1 :]


def dataset_to_bytes(data: Dataset, n_coeffs: int = 5) -> bytes:
    spec = data.spec
    header = {
        "height": spec.height,
        "width": spec.width,
        "T": spec.horizon,
        "K": n_coeffs,
        "F": spec.n_features,
        "n_train": len(data.train),
        "n_test": len(data.test),
        "generator": spec.to_dict(),
        "seed": data.seed,
    }
    chunks = []
    for s in [*data.train, *data.test]:
        chunks.append(s.features.ravel())
        chunks.append(s.trajectory.data.ravel())
        chunks.append(np.array([s.mode_id], dtype=np.float64))
    payload = np.concatenate(chunks).astype("<f4").tobytes() if chunks else b""
    return DATASET_MAGIC + _header_bytes(header) + payload


def save_dataset(data: Dataset, path, n_coeffs: int = 5) -> None:
    Path(path).write_bytes(dataset_to_bytes(data, n_coeffs))


def load_dataset(path) -> tuple[Dataset, dict]:
    raw = Path(path).read_bytes()
    header, payload = _split_file(raw, DATASET_MAGIC, path)
    try:
        H, W, T, F = header["height"], header["width"], header["T"], header["F"]
        n_train, n_test = header["n_train"], header["n_test"]
        spec = SceneSpec.from_dict(header["generator"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: incomplete header ({exc})") from None
    per_sample = H * W * F + H * W * T * 2 + 1
    expected = 4 * per_sample * (n_train + n_test)
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(n_train + n_test, per_sample)
    samples = []
    for i, row in enumerate(values):
        feats = row[: H * W * F].reshape(H, W, F)
        traj = row[H * W * F : -1].reshape(H, W, T, 2)
        split, index = (0, i) if i < n_train else (1, i - n_train)
        type_index = type_index_of(feats, spec.n_types)
        samples.append(
            SceneSample(
                feats,
                TrajectoryField(traj),
                spec.scene_types[type_index].type_id,
                int(row[-1]),
                center_of(feats),
                (header["seed"], split, index),
            )
        )
    return Dataset(spec, samples[:n_train], samples[n_train:], header["seed"]), header


def checkpoint_to_bytes(model: Model) -> bytes:
    header = {
        "kind": model.kind,
        "config": model.config.to_dict(),
        "layout": [[name, list(shape)] for name, shape in model.params.layout()],
        "meta": model.meta,
    }
    payload = model.params.flatten().astype("<f8").tobytes()
    return CHECKPOINT_MAGIC + _header_bytes(header) + payload


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(model))


def load_checkpoint(path) -> Model:
    raw = Path(path).read_bytes()
    header, payload = _split_file(raw, CHECKPOINT_MAGIC, path)
    try:
        layout = [(name, tuple(shape)) for name, shape in header["layout"]]
        cfg = CvaeConfig.from_dict(header["config"])
        kind = header["kind"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete header ({exc})") from None
    n = sum(int(np.prod(s)) for _, s in layout)
    if len(payload) != 8 * n:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, layout implies {8 * n}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    params, pos = ParamStore(), 0
    for name, shape in layout:
        size = int(np.prod(shape))
        params[name] = flat[pos : pos + size].reshape(shape).copy()
        pos += size
    return Model(kind, cfg, params, header.get("meta", {}))


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".9f")
    return str(v)


def csv_text(header, rows) -> str:
    width = len(header)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        if len(row) != width:
            raise ValueError(f"row has {len(row)} fields, header has {width}")
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def emit_csv(header, rows, path) -> None:
    Path(path).write_text(csv_text(header, rows), newline="")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
