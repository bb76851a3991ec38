import json
import struct

import numpy as np
import pytest

from septrans.data import (
    CheckpointError,
    Dataset,
    IdxFormatError,
    load_checkpoint,
    load_idx,
    read_checkpoint,
    save_checkpoint,
    synthetic_gaussians,
)
from septrans.network import SepMlp, build_mlp
from septrans.training import prune
from septrans.transform import SeparableTransform


def write_idx_pair(tmp_path, images, labels):
    images = np.asarray(images, dtype=np.uint8)
    n, r, c = images.shape
    img_path = tmp_path / "images.idx"
    lbl_path = tmp_path / "labels.idx"
    img_path.write_bytes(struct.pack(">IIII", 0x803, n, r, c) + images.tobytes())
    lbl_path.write_bytes(struct.pack(">II", 0x801, len(labels)) + bytes(labels))
    return img_path, lbl_path


class TestDataset:
    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            Dataset([(np.zeros((2, 2)), 2)], 2, (2, 2))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Dataset([(np.zeros((2, 3)), 0)], 2, (2, 2))

    def test_values_outside_unit_interval(self):
        with pytest.raises(ValueError):
            Dataset([(np.full((2, 2), 1.5), 0)], 2, (2, 2))


class TestSyntheticGaussians:
    def test_deterministic(self):
        d1 = synthetic_gaussians(3, 5, (2, 3), separation=0.5, seed=42)
        d2 = synthetic_gaussians(3, 5, (2, 3), separation=0.5, seed=42)
        assert len(d1) == len(d2) == 15
        for (x1, y1), (x2, y2) in zip(d1, d2):
            assert np.array_equal(x1, x2)
            assert y1 == y2

    def test_separation_supports_high_accuracy(self):
        from septrans.training import TrainConfig, evaluate, train

        data = synthetic_gaussians(2, 100, (2, 2), separation=0.8, seed=1, noise_std=0.02)
        model = build_mlp([[(1, 2), (2, 2)]], 2, seed=1)
        trained, _ = train(model, data, TrainConfig(epochs=40, batch_size=25, seed=1, lr=5e-3))
        assert evaluate(trained, data) >= 99.0

    def test_empty_per_class(self):
        data = synthetic_gaussians(3, 0, (2, 2), separation=0.5, seed=0)
        assert len(data) == 0

    def test_mean_distances(self):
        data = synthetic_gaussians(3, 200, (4, 4), separation=0.5, seed=7, noise_std=1e-9)
        by_class = {}
        for x, y in data:
            by_class.setdefault(y, []).append(x.ravel())
        means = [np.mean(by_class[c], axis=0) for c in range(3)]
        for i in range(3):
            for j in range(i + 1, 3):
                assert np.linalg.norm(means[i] - means[j]) == pytest.approx(0.5, abs=0.02)

    def test_too_many_classes(self):
        with pytest.raises(ValueError):
            synthetic_gaussians(5, 1, (2, 2), separation=0.5, seed=0)

    def test_values_clipped(self):
        data = synthetic_gaussians(2, 50, (2, 2), separation=0.9, seed=3, noise_std=0.5)
        for x, _ in data:
            assert np.all(x >= 0.0) and np.all(x <= 1.0)


class TestLoadIdx:
    def test_valid_pair(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(7, 4, 5)).astype(np.uint8)
        labels = [int(v) for v in rng.integers(0, 10, size=7)]
        img, lbl = write_idx_pair(tmp_path, images, labels)
        data = load_idx(img, lbl)
        assert len(data) == 7
        assert data.input_shape == (4, 5)
        x0, y0 = data[0]
        assert y0 == labels[0]
        assert np.array_equal(x0, images[0].astype(float) / 255.0)

    def test_empty_file(self, tmp_path):
        img, lbl = write_idx_pair(tmp_path, np.zeros((0, 28, 28), dtype=np.uint8), [])
        data = load_idx(img, lbl)
        assert len(data) == 0

    def test_reshape(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(3, 4, 4)).astype(np.uint8)
        img, lbl = write_idx_pair(tmp_path, images, [0, 1, 2])
        data = load_idx(img, lbl, shape=(2, 2, 4))
        assert data.input_shape == (2, 2, 4)

    def test_bad_reshape(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(3, 4, 4)).astype(np.uint8)
        img, lbl = write_idx_pair(tmp_path, images, [0, 1, 2])
        with pytest.raises(ValueError):
            load_idx(img, lbl, shape=(3, 3))

    def test_corrupted_magic(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(2, 3, 3)).astype(np.uint8)
        img, lbl = write_idx_pair(tmp_path, images, [0, 1])
        raw = bytearray(img.read_bytes())
        raw[2] = 0x07
        img.write_bytes(bytes(raw))
        with pytest.raises(IdxFormatError, match="magic"):
            load_idx(img, lbl)

    def test_count_mismatch(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(3, 2, 2)).astype(np.uint8)
        img, _ = write_idx_pair(tmp_path, images, [0, 1, 2])
        lbl = tmp_path / "short_labels.idx"
        lbl.write_bytes(struct.pack(">II", 0x801, 2) + bytes([0, 1]))
        with pytest.raises(IdxFormatError, match="labels"):
            load_idx(img, lbl)

    def test_truncated_payload(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(3, 2, 2)).astype(np.uint8)
        img, lbl = write_idx_pair(tmp_path, images, [0, 1, 2])
        img.write_bytes(img.read_bytes()[:-1])
        with pytest.raises(IdxFormatError):
            load_idx(img, lbl)

    def test_trailing_bytes_rejected(self, tmp_path, rng):
        images = rng.integers(0, 256, size=(3, 2, 2)).astype(np.uint8)
        img, lbl = write_idx_pair(tmp_path, images, [0, 1, 2])
        img.write_bytes(img.read_bytes() + b"\x00")
        with pytest.raises(IdxFormatError):
            load_idx(img, lbl)

    def test_header_fuzz_sample(self, tmp_path, rng):
        # full single-byte fuzz of all 16 header bytes lives in the acceptance suite
        images = rng.integers(0, 256, size=(2, 3, 4)).astype(np.uint8)
        img, lbl = write_idx_pair(tmp_path, images, [3, 7])
        pristine = img.read_bytes()
        for pos in (0, 3, 5, 7, 9, 11, 13, 15):
            raw = bytearray(pristine)
            raw[pos] ^= 0xFF
            img.write_bytes(bytes(raw))
            with pytest.raises(IdxFormatError):
                load_idx(img, lbl)


class TestCheckpoints:
    def test_round_trip_bit_identical(self, tmp_path):
        model = build_mlp([[(3, 2), (2, 3)], [(1, 3), (3, 2)]], 3, seed=23)
        path = tmp_path / "model.ckpt.json"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        for a, b in zip(model.parameters(), loaded.parameters()):
            assert np.array_equal(a, b)
        assert loaded.activations == model.activations
        assert loaded.num_classes == model.num_classes

    def test_round_trip_preserves_pruned_zeros(self, tmp_path):
        model = build_mlp([[(3, 3), (3, 3)]], 9, seed=24)
        pruned, _ = prune(model, 0.05)
        path = tmp_path / "pruned.ckpt.json"
        save_checkpoint(pruned, path)
        loaded = load_checkpoint(path)
        for a, b in zip(pruned.all_factors(), loaded.all_factors()):
            assert np.array_equal(a, b)
            assert np.array_equal(a == 0.0, b == 0.0)

    def test_version_mismatch(self, tmp_path):
        model = build_mlp([[(2, 2)]], 2, seed=0)
        path = tmp_path / "v999.ckpt.json"
        save_checkpoint(model, path)
        doc = json.loads(path.read_text())
        doc["version"] = 999
        path.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_malformed_document(self, tmp_path):
        path = tmp_path / "broken.ckpt.json"
        path.write_text("{not json")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_shape_inconsistency(self, tmp_path):
        model = build_mlp([[(2, 2)]], 2, seed=0)
        path = tmp_path / "badshape.ckpt.json"
        save_checkpoint(model, path)
        doc = json.loads(path.read_text())
        doc["model"]["layers"][0]["factors"][0]["shape"] = [3, 3]
        path.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(CheckpointError, match="nowhere.ckpt"):
            load_checkpoint(tmp_path / "nowhere.ckpt")

    def test_hand_written_minimal_checkpoint(self, tmp_path, rng):
        doc = {
            "version": 1,
            "model": {
                "num_classes": 2,
                "layers": [
                    {
                        "activation": "none",
                        "factors": [
                            {
                                "shape": [2, 2],
                                "data": [
                                    float(1.0).hex(),
                                    float(0.0).hex(),
                                    float(0.0).hex(),
                                    float(1.0).hex(),
                                ],
                            }
                        ],
                        "bias": None,
                    }
                ],
            },
            "train_config": None,
            "metrics": None,
        }
        path = tmp_path / "minimal.ckpt.json"
        path.write_text(json.dumps(doc))
        loaded = load_checkpoint(path)
        reference = SepMlp([SeparableTransform([np.eye(2)])], ["none"], 2)
        for _ in range(5):
            x = rng.uniform(0, 1, size=(2,))
            assert np.array_equal(loaded.forward(x)[0], reference.forward(x)[0])

    def test_metadata_passthrough(self, tmp_path):
        model = build_mlp([[(2, 2)]], 2, seed=0)
        path = tmp_path / "meta.ckpt.json"
        save_checkpoint(model, path, report={"final_na": 97.5}, config={"epochs": 3})
        doc = read_checkpoint(path)
        assert doc["metrics"] == {"final_na": 97.5}
        assert doc["train_config"] == {"epochs": 3}

    def test_overwrite_is_atomic_replacement(self, tmp_path):
        model = build_mlp([[(2, 2)]], 2, seed=0)
        path = tmp_path / "same.ckpt.json"
        save_checkpoint(model, path)
        first = path.read_text()
        save_checkpoint(model, path)
        assert path.read_text() == first
