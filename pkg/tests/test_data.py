"""Tests for dmtlab.data."""

import math
from pathlib import Path

import numpy as np
import pytest

from dmtlab.data import (
    PairedDataset,
    export_images,
    gen_gray2color_pair,
    gen_moons_pair,
    gen_shapes_pair,
    generate,
    load_dataset,
    luminance,
    moons_manifold,
    save_dataset,
    split_tags,
)
from dmtlab.errors import ContractError, DegenerateDomainError, DimensionError, ParseError, ValidationError

GOLDEN = Path(__file__).parent / "data" / "golden.dmtdata"


def _pair(x0, y0, **kwargs):
    n = len(x0)
    return PairedDataset(mode="vector2d", x0=x0, y0=y0, split=["train"] * n, generator="test", seed=0, **kwargs)


# --- PairedDataset ---


class TestPairedDataset:
    def test_misaligned(self):
        with pytest.raises(DimensionError):
            _pair(np.zeros((3, 2)), np.zeros((2, 2)))

    def test_bounded_values(self):
        with pytest.raises(ValidationError, match=r"\[-1, 1\]"):
            _pair(np.full((2, 2), 2.0), np.zeros((2, 2)))
        assert _pair(np.full((2, 2), 2.0), np.zeros((2, 2)), bounded=False).n == 2

    def test_identical_domains(self):
        x = np.random.default_rng(0).uniform(-1, 1, (4, 2))
        with pytest.raises(DegenerateDomainError, match="Dirac"):
            _pair(x, x.copy())

    def test_mode_shape(self):
        with pytest.raises(DimensionError):
            PairedDataset(mode="vector2d", x0=np.zeros((2, 3)), y0=np.ones((2, 3)), split=["train"] * 2, generator="t", seed=0)

    def test_split_tags_checked(self):
        with pytest.raises(ValidationError, match="train/test"):
            PairedDataset(mode="vector", x0=np.zeros((2, 3)), y0=np.ones((2, 3)), split=["train", "dev"], generator="t", seed=0)

    def test_subsets(self, moons):
        train, test = moons.train(), moons.test()
        assert train.n + test.n == moons.n
        assert set(train.split) == {"train"}
        assert np.array_equal(test.x0, moons.x0[moons.indices("test")])

    def test_missing_subset(self):
        ds = _pair(np.zeros((2, 2)), np.ones((2, 2)) * 0.5)
        with pytest.raises(ContractError, match="no test pairs"):
            ds.test()


class TestSplitTags:
    def test_counts(self):
        tags = split_tags(10, 0.2)
        assert tags.count("train") == 8
        assert tags.count("test") == 2

    def test_fraction_range(self):
        with pytest.raises(ValidationError):
            split_tags(10, 1.0)


# --- generators ---


class TestMoons:
    def test_seeded(self):
        a, b, c = gen_moons_pair(50, math.pi / 2, seed=1), gen_moons_pair(50, math.pi / 2, seed=1), gen_moons_pair(50, math.pi / 2, seed=2)
        assert np.array_equal(a.x0, b.x0)
        assert not np.array_equal(a.x0, c.x0)

    def test_target_is_rotation(self, moons):
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        assert np.allclose(moons.y0, moons.x0 @ rot.T, atol=1e-15)
        assert np.all(np.linalg.norm(moons.x0, axis=1) <= 1.0 + 1e-12)

    def test_noise_free_points_lie_on_manifold(self):
        ds = gen_moons_pair(100, math.pi / 2, noise_sd=0.0, seed=0)
        for points, curve in ((ds.x0, moons_manifold()), (ds.y0, moons_manifold(rotation=math.pi / 2))):
            nearest = np.linalg.norm(points[:, None, :] - curve[None, :, :], axis=2).min(axis=1)
            assert nearest.max() < 1e-3

    def test_zero_rotation_is_degenerate(self):
        with pytest.raises(DegenerateDomainError):
            gen_moons_pair(20, 0.0, seed=0)

    def test_needs_two_pairs(self):
        with pytest.raises(ContractError):
            gen_moons_pair(1, 1.0)


class TestShapes:
    def test_values(self, shapes):
        assert shapes.x0.shape == (16, 1, 8, 8)
        assert set(np.unique(shapes.x0)) <= {-1.0, 1.0}
        assert set(np.unique(shapes.y0)) <= {-1.0, 0.6, 0.2}

    def test_outline_inside_fill(self, shapes):
        assert np.all(shapes.y0[shapes.x0 == 1.0] > -1.0)

    def test_kinds_recorded(self, shapes):
        assert len(shapes.params["kinds"]) == 16
        assert set(shapes.params["kinds"]) <= {"rectangle", "ellipse"}

    def test_size_floor(self):
        with pytest.raises(ValidationError):
            gen_shapes_pair(4, size=6)


class TestGrayToColor:
    def test_source_is_luminance(self):
        ds = gen_gray2color_pair(6, size=8, seed=0)
        assert np.array_equal(ds.x0[:, 0], ds.x0[:, 2])
        assert np.allclose(ds.x0[:, 0], np.clip(luminance(ds.y0), -1, 1))

    def test_zero_saturation_is_degenerate(self):
        with pytest.raises(DegenerateDomainError):
            gen_gray2color_pair(4, size=8, saturation=0.0)

    def test_saturation_range(self):
        with pytest.raises(ValidationError):
            gen_gray2color_pair(4, size=8, saturation=1.5)


class TestGenerate:
    def test_dispatch(self):
        ds = generate("moons", 10, 3, rotation=1.0)
        assert ds.generator == "moons"
        assert ds.seed == 3

    def test_unknown(self):
        with pytest.raises(ValidationError, match="Unknown generator"):
            generate("mnist", 10, 0)


# --- persistence ---


class TestPersistence:
    def test_round_trip(self, tmp_path, shapes):
        path = tmp_path / "s.dmtdata"
        save_dataset(shapes, path)
        back = load_dataset(path)
        assert np.array_equal(back.x0, shapes.x0)
        assert np.array_equal(back.y0, shapes.y0)
        assert back.split == shapes.split
        assert back.params == shapes.params

    def test_golden_file(self, tmp_path):
        ds = load_dataset(GOLDEN)
        assert ds.mode == "vector2d"
        assert ds.split == ["train", "test"]
        assert ds.x0.tolist() == [[0.5, -0.5], [1.0, 0.25]]
        assert ds.y0.tolist() == [[-0.5, 0.5], [-1.0, -0.25]]
        save_dataset(ds, tmp_path / "again.dmtdata")
        assert (tmp_path / "again.dmtdata").read_bytes() == GOLDEN.read_bytes()

    def test_truncated(self, tmp_path):
        path = tmp_path / "cut.dmtdata"
        path.write_bytes(GOLDEN.read_bytes()[:-8])
        with pytest.raises(ParseError):
            load_dataset(path)

    def test_checkpoint_is_not_a_dataset(self, tmp_path):
        path = tmp_path / "x.dmtdata"
        path.write_bytes(b"DMTCKPT1" + bytes(8))
        with pytest.raises(ParseError, match="magic"):
            load_dataset(path)


class TestExportImages:
    def test_writes_pairs(self, tmp_path, shapes):
        written = export_images(shapes, tmp_path, limit=3)
        assert len(written) == 6
        assert sorted(p.name for p in written)[:2] == ["0000_x.pgm", "0000_y.pgm"]

    def test_vectors_rejected(self, tmp_path, moons):
        with pytest.raises(ValidationError):
            export_images(moons, tmp_path)
