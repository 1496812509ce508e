"""Binary dataset/checkpoint files, CSV output and SVG rendering."""
import re

import numpy as np
import pytest

from conftest import tiny_config
from dtp.codec import TrajectoryField
from dtp.cvae import Model, init_model
from dtp.fileio import (
    FormatError,
    csv_text,
    dataset_to_bytes,
    emit_csv,
    format_value,
    load_checkpoint,
    load_dataset,
    read_csv,
    save_checkpoint,
    save_dataset,
)
from dtp.render import direction_color, render_trajectory_svg, trajectory_svg
from dtp.scenes import SceneSpec, build_dataset


@pytest.fixture
def small_dataset():
    return build_dataset(SceneSpec(height=8, width=9, horizon=6, noise_sigma=0.1), 4, 2, 3)


class TestDatasetFile:
    def test_round_trip(self, small_dataset, tmp_path):
        path = tmp_path / "d.dtpd"
        save_dataset(small_dataset, path)
        back, header = load_dataset(path)
        assert header["n_train"] == 4 and header["K"] == 5 and header["seed"] == 3
        assert back.spec == small_dataset.spec
        for a, b in zip(small_dataset.train + small_dataset.test, back.train + back.test):
            np.testing.assert_array_equal(b.features, a.features.astype(np.float32))
            np.testing.assert_array_equal(b.trajectory.data, a.trajectory.data.astype(np.float32))
            assert (b.mode_id, b.type_id, b.center, b.seed) == (a.mode_id, a.type_id, a.center, a.seed)

    def test_bytes_deterministic(self, small_dataset):
        assert dataset_to_bytes(small_dataset) == dataset_to_bytes(small_dataset)

    def test_header_is_readable_text(self, small_dataset):
        raw = dataset_to_bytes(small_dataset)
        magic, header = raw.split(b"\n")[:2]
        assert magic == b"DTPD1"
        assert b'"height":8' in header

    def test_bad_magic(self, small_dataset, tmp_path):
        path = tmp_path / "d.dtpd"
        path.write_bytes(b"XXXX" + dataset_to_bytes(small_dataset)[4:])
        with pytest.raises(FormatError, match="magic"):
            load_dataset(path)

    def test_truncated(self, small_dataset, tmp_path):
        path = tmp_path / "d.dtpd"
        path.write_bytes(dataset_to_bytes(small_dataset)[:-4])
        with pytest.raises(FormatError, match="payload"):
            load_dataset(path)

    def test_empty_dataset(self, tmp_path):
        path = tmp_path / "e.dtpd"
        save_dataset(build_dataset(SceneSpec(), 0, 0, 0), path)
        back, _ = load_dataset(path)
        assert back.train == [] and back.test == []


class TestCheckpointFile:
    @pytest.mark.parametrize("kind", ["cvae", "regressor"])
    def test_round_trip_bit_exact(self, kind, tmp_path):
        cfg = tiny_config(z_broadcast="linear")
        params = init_model(cfg, kind, 1)
        params["image.0.bias"] = np.array([np.pi, -1e-300, 1e300, 0.1, -0.0])
        model = Model(kind, cfg, params, {"epochs": 3})
        path = tmp_path / "m.dtpc"
        save_checkpoint(model, path)
        back = load_checkpoint(path)
        assert back.kind == kind and back.config == cfg and back.meta == {"epochs": 3}
        assert back.params.layout() == params.layout()
        assert back.params.flatten().tobytes() == params.flatten().tobytes()

    def test_wrong_magic(self, small_dataset, tmp_path):
        path = tmp_path / "d.dtpd"
        save_dataset(small_dataset, path)
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        cfg = tiny_config()
        path = tmp_path / "m.dtpc"
        save_checkpoint(Model("cvae", cfg, init_model(cfg), {}), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError):
            load_checkpoint(path)


class TestCsv:
    def test_format_contract(self):
        assert format_value(0.1) == "0.100000000"
        assert format_value(np.float64(2.0)) == "2.000000000"
        assert format_value(7) == "7"
        assert format_value("cvae") == "cvae"

    def test_header_only(self, tmp_path):
        path = tmp_path / "e.csv"
        emit_csv(["a", "b"], [], path)
        assert path.read_bytes() == b"a,b\r\n"

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = [["cvae", "nll", i, float(v)] for i, v in enumerate(rng.normal(scale=1e3, size=20))]
        path = tmp_path / "r.csv"
        emit_csv(["method", "metric", "n", "value"], rows, path)
        header, back = read_csv(path)
        assert header == ["method", "metric", "n", "value"]
        for a, b in zip(rows, back):
            assert b[:3] == [a[0], a[1], str(a[2])]
            assert abs(float(b[3]) - a[3]) < 1e-9

    def test_quoting(self):
        assert csv_text(["x"], [['has,comma "q"']]) == 'x\r\n"has,comma ""q"""\r\n'

    def test_ragged_row(self):
        with pytest.raises(ValueError):
            csv_text(["a", "b"], [[1]])


def moving_right(H=3, W=4, T=30, speed=0.5):
    data = np.zeros((H, W, T, 2))
    data[1, 2, :, 0] = speed * np.arange(1, T + 1)
    return TrajectoryField(data)


class TestRender:
    def test_zero_field_legend_only(self):
        svg = trajectory_svg(TrajectoryField.zeros(3, 4, 5))
        assert '<g class="legend">' in svg
        assert "<polyline" not in svg and 'class="traj"' not in svg

    def test_single_cell_moving_right(self):
        svg = trajectory_svg(moving_right())
        assert svg.count("<polyline") == 1
        assert svg.count('class="traj"') == 1
        traj = svg[svg.index('<g class="traj"') : svg.index('<g class="legend">')]
        colours = set(re.findall(r'stroke="(#[0-9a-f]{6})"', traj))
        # hue 0 at full value: (1, 0.1, 0.1) in RGB, 25.5 rounding to 0x19
        assert colours == {"#ff1919"}
        assert direction_color(1.0, 0.0) == "#ff1919"

    def test_hue_follows_angle(self):
        assert direction_color(0.0, 1.0) != direction_color(1.0, 0.0)
        assert direction_color(-1.0, 0.0) == "#19ffff"

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        render_trajectory_svg(moving_right(), a)
        render_trajectory_svg(moving_right(), b)
        assert a.read_bytes() == b.read_bytes()
