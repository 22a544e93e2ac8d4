"""Optimizer, checkpoint container, and the training/restoration loops."""

import hashlib
import json
import math
import struct

import numpy as np
import pytest

from ulw.autodiff import Tensor
from ulw.checkpoint import MAGIC, VERSION, load_checkpoint, save_checkpoint
from ulw.data import ImagePair, load_image, save_image
from ulw.errors import CheckpointError, ConfigError, NumericError, ShapeError, UsageError
from ulw.losses import LossWeights
from ulw.model import build_model
from ulw.optim import Adam
from ulw.params import ParamStore
from ulw.training import (
    TrainConfig,
    _batch_indices,
    desmoke_dir,
    dump_grid,
    fit_pairs,
    model_from_checkpoint,
    predict_image,
    resolve_weights,
)
from ulw.unet import UNetConfig

GOLDEN = "tests/data/golden.ulwk"
GOLDEN_CONFIG = {
    "base_channels": 2,
    "depth": 1,
    "preset": "ulw",
    "seed": 123,
    "weights": [1 / 3, 1 / 3, 1 / 3],
}
GOLDEN_DIGESTS = {
    "unet.bottleneck.conv1.b": ((4,), "374708fff7719dd5"),
    "unet.bottleneck.conv1.w": ((4, 2, 3, 3), "e0891479f905e4df"),
    "unet.bottleneck.conv2.b": ((4,), "374708fff7719dd5"),
    "unet.bottleneck.conv2.w": ((4, 4, 3, 3), "508ea70692e4f347"),
    "unet.dec0.conv1.b": ((2,), "af5570f5a1810b7a"),
    "unet.dec0.conv1.w": ((2, 4, 3, 3), "a8c8410e8446e99c"),
    "unet.dec0.conv2.b": ((2,), "af5570f5a1810b7a"),
    "unet.dec0.conv2.w": ((2, 2, 3, 3), "2d8b122f6f9f4dfd"),
    "unet.dec0.up.w": ((4, 2, 2, 2), "5188651e957e60f1"),
    "unet.enc0.conv1.b": ((2,), "af5570f5a1810b7a"),
    "unet.enc0.conv1.w": ((2, 3, 3, 3), "8b02167ddc1590ae"),
    "unet.enc0.conv2.b": ((2,), "af5570f5a1810b7a"),
    "unet.enc0.conv2.w": ((2, 2, 3, 3), "19aab5a01f4ea698"),
    "unet.head.b": ((3,), "15ec7bf0b50732b4"),
    "unet.head.w": ((3, 2, 1, 1), "6863745c6923bf32"),
    "wiener.kernels": ((3, 1, 5, 5), "6bf90f5920216cf1"),
    "wiener.theta": ((3,), "b9e5662c95de5f95"),
}


def parse_ulwk_reference(path):
    """Independent container parser used to cross-check load_checkpoint."""
    raw = open(path, "rb").read()
    assert raw[:4] == b"ULWK"
    (version,) = struct.unpack_from("<I", raw, 4)
    assert version == 1
    (config_len,) = struct.unpack_from("<I", raw, 8)
    config = json.loads(raw[12:12 + config_len].decode("utf-8"))
    offset = 12 + config_len
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(raw, dtype="<f4", count=size, offset=offset).reshape(shape)
        offset += 4 * size
        entries[name] = data
    assert offset == len(raw)
    return config, entries


def small_store(rng) -> ParamStore:
    store = ParamStore()
    store.add("layer.b", Tensor(rng.standard_normal(4).astype(np.float32)))
    store.add("layer.w", Tensor(rng.standard_normal((4, 3)).astype(np.float32)))
    return store


class TestAdam:
    def test_validates_hyperparameters(self, rng):
        store = small_store(rng)
        for kwargs in [dict(lr=0.0), dict(beta1=1.0), dict(beta2=-0.1), dict(eps=0.0)]:
            with pytest.raises(ConfigError):
                Adam(store, **kwargs)

    def test_first_step_is_signed_lr(self, rng):
        store = small_store(rng)
        before = {n: t.data.copy() for n, t in store.items()}
        grads = {}
        for name, tensor in store.items():
            g = rng.standard_normal(tensor.data.shape).astype(np.float32)
            g[np.abs(g) < 0.1] = 0.5  # keep |g| well above eps
            tensor.grad = g
            grads[name] = g
        opt = Adam(store, lr=0.01)
        opt.step()
        for name, tensor in store.items():
            # With bias correction the very first update is lr * sign(grad)
            # up to the eps regularizer.
            expected = before[name] - 0.01 * np.sign(grads[name])
            np.testing.assert_allclose(tensor.data, expected, atol=1e-6)

    def test_zero_gradient_leaves_param_unchanged(self, rng):
        store = small_store(rng)
        before = {n: t.data.copy() for n, t in store.items()}
        for _, tensor in store.items():
            tensor.grad = np.zeros_like(tensor.data)
        Adam(store).step()
        for name, tensor in store.items():
            np.testing.assert_array_equal(tensor.data, before[name])

    def test_missing_gradient_names_parameter(self, rng):
        store = small_store(rng)
        for _, tensor in store.items():
            tensor.grad = np.zeros_like(tensor.data)
        store["layer.w"].grad = None
        with pytest.raises(UsageError, match="layer.w"):
            Adam(store).step()

    def test_descends_a_quadratic(self, rng):
        store = ParamStore()
        w = Tensor(rng.standard_normal(8).astype(np.float64) * 2.0)
        store.add("w", w)
        opt = Adam(store, lr=0.05)
        initial = float(np.sum(w.data ** 2))
        for _ in range(50):
            w.grad = 2.0 * w.data
            opt.step()
        assert float(np.sum(w.data ** 2)) < 0.5 * initial

    def test_deterministic(self, rng):
        results = []
        for _ in range(2):
            gen = np.random.default_rng(99)
            store = small_store(gen)
            for _, tensor in store.items():
                tensor.grad = gen.standard_normal(tensor.data.shape).astype(np.float32)
            opt = Adam(store, lr=0.003)
            opt.step()
            opt_state = np.concatenate([t.data.ravel() for _, t in store.items()])
            results.append(opt_state)
        np.testing.assert_array_equal(results[0], results[1])


class TestCheckpointFormat:
    def test_reference_parser_agrees_with_loader(self, tmp_path, rng):
        store = small_store(rng)
        path = tmp_path / "model.ulwk"
        save_checkpoint(path, store, {"preset": "ulw", "depth": 2})
        ref_config, ref_entries = parse_ulwk_reference(path)
        loaded, config = load_checkpoint(path)
        assert config == ref_config
        assert sorted(ref_entries) == loaded.names()
        for name, tensor in loaded.items():
            np.testing.assert_array_equal(tensor.data, ref_entries[name])

    def test_save_load_save_is_bitwise_stable(self, tmp_path, rng):
        store = small_store(rng)
        first = tmp_path / "a.ulwk"
        second = tmp_path / "b.ulwk"
        save_checkpoint(first, store, {"seed": 7})
        loaded, config = load_checkpoint(first)
        save_checkpoint(second, loaded, config)
        assert first.read_bytes() == second.read_bytes()

    def test_no_tmp_file_left_behind(self, tmp_path, rng):
        path = tmp_path / "model.ulwk"
        save_checkpoint(path, small_store(rng), {})
        assert list(tmp_path.iterdir()) == [path]

    def test_bad_magic(self, tmp_path, rng):
        path = tmp_path / "bad.ulwk"
        save_checkpoint(path, small_store(rng), {})
        raw = bytearray(path.read_bytes())
        raw[:4] = b"WHAT"
        path.write_bytes(raw)
        with pytest.raises(CheckpointError, match="offset 0"):
            load_checkpoint(path)

    def test_unknown_version(self, tmp_path, rng):
        path = tmp_path / "bad.ulwk"
        save_checkpoint(path, small_store(rng), {})
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        path.write_bytes(raw)
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncation_reports_offset(self, tmp_path, rng):
        path = tmp_path / "cut.ulwk"
        save_checkpoint(path, small_store(rng), {})
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) - 10])
        with pytest.raises(CheckpointError, match="offset"):
            load_checkpoint(path)

    def test_trailing_garbage_rejected(self, tmp_path, rng):
        path = tmp_path / "long.ulwk"
        save_checkpoint(path, small_store(rng), {})
        path.write_bytes(path.read_bytes() + b"\x00\x01\x02")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.ulwk")

    def test_golden_checkpoint_parses(self):
        store, config = load_checkpoint(GOLDEN)
        assert config == GOLDEN_CONFIG
        assert store.names() == sorted(GOLDEN_DIGESTS)
        for name, tensor in store.items():
            shape, digest = GOLDEN_DIGESTS[name]
            assert tensor.data.shape == shape
            payload = np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
            assert hashlib.sha256(payload).hexdigest()[:16] == digest, name

    def test_golden_resave_is_identical(self, tmp_path):
        store, config = load_checkpoint(GOLDEN)
        out = tmp_path / "resaved.ulwk"
        save_checkpoint(out, store, config)
        assert out.read_bytes() == open(GOLDEN, "rb").read()

    def test_magic_and_version_constants(self):
        assert MAGIC == b"ULWK"
        assert VERSION == 1


class TestResolveWeights:
    def test_defaults_follow_preset(self):
        assert resolve_weights("ulw").as_tuple() == LossWeights.for_preset("ulw").as_tuple()
        assert resolve_weights("base").as_tuple() == (1.0, 0.0, 0.0)

    def test_explicit_triple(self):
        w = resolve_weights("ulw", 0.5, 0.25, 0.25)
        assert w.as_tuple() == (0.5, 0.25, 0.25)

    def test_partial_triple_rejected(self):
        with pytest.raises(ConfigError):
            resolve_weights("ulw", alpha=0.5)

    def test_base_requires_pure_mse(self):
        assert resolve_weights("base", 1.0, 0.0, 0.0).as_tuple() == (1.0, 0.0, 0.0)
        with pytest.raises(ConfigError):
            resolve_weights("base", 0.5, 0.25, 0.25)


class TestTrainConfig:
    def test_validate_passes_defaults(self):
        TrainConfig().validate()

    def test_rejects_bad_preset(self):
        with pytest.raises(ConfigError):
            TrainConfig(preset="vgg").validate()

    def test_rejects_indivisible_image_size(self):
        with pytest.raises(ConfigError):
            TrainConfig(depth=3, image_size=20).validate()

    def test_rejects_nonpositive_counts(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=0).validate()
        with pytest.raises(ConfigError):
            TrainConfig(max_steps=0).validate()

    def test_base_weights_mismatch(self):
        with pytest.raises(ConfigError):
            TrainConfig(preset="base", weights=LossWeights()).validate()


class TestBatchSampler:
    def test_deterministic(self):
        a = list(_batch_indices(5, 2, 8, seed=3))
        b = list(_batch_indices(5, 2, 8, seed=3))
        assert a == b

    def test_batches_cover_data(self):
        batches = list(_batch_indices(4, 2, 6, seed=0))
        assert len(batches) == 6
        assert all(len(b) == 2 for b in batches)
        # Three epochs of a 4-item set: every index appears exactly 3 times.
        counts = np.bincount(np.concatenate(batches), minlength=4)
        np.testing.assert_array_equal(counts, np.full(4, 3))

    def test_indices_in_range(self):
        for batch in _batch_indices(3, 2, 10, seed=1):
            assert all(0 <= i < 3 for i in batch)


def quick_config(**overrides) -> TrainConfig:
    base = dict(preset="ulw", depth=1, base_channels=2, max_steps=3,
                batch_size=2, image_size=32, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


class TestFitPairs:
    def test_same_seed_bitwise_identical(self, tiny_pairs):
        runs = []
        for _ in range(2):
            logs = []
            model, history = fit_pairs(tiny_pairs, quick_config(), log=logs.append)
            flat = np.concatenate([t.data.ravel() for _, t in model.store.items()])
            runs.append((flat, history, logs))
        np.testing.assert_array_equal(runs[0][0], runs[1][0])
        assert runs[0][1] == runs[1][1]
        assert runs[0][2] == runs[1][2]

    def test_history_and_log_shape(self, tiny_pairs):
        logs = []
        model, history = fit_pairs(tiny_pairs, quick_config(), log=logs.append)
        assert len(history) == 3
        assert [row["step"] for row in history] == [1, 2, 3]
        for row in history:
            for key in ("total", "mse", "ssim", "perceptual"):
                assert math.isfinite(row[key])
        assert logs[0].startswith("preset=ulw ")
        step_rows = [l for l in logs if l.startswith("step=")]
        assert len(step_rows) == 3
        assert step_rows[0].startswith("step=1 ")
        assert "total=" in step_rows[0] and "perceptual=" in step_rows[0]

    def test_base_preset_total_equals_mse(self, tiny_pairs):
        config = quick_config(preset="base",
                              weights=LossWeights.for_preset("base"))
        model, history = fit_pairs(tiny_pairs, config)
        assert model.wiener is None
        assert model.wiener_calls == 0
        for row in history:
            assert row["total"] == row["mse"]
            assert row["ssim"] > 0.0  # still reported for monitoring

    def test_nonfinite_loss_aborts_with_step(self, tiny_pairs):
        poisoned = [ImagePair(p.id, p.smoky, p.clean) for p in tiny_pairs]
        bad_clean = poisoned[0].clean.copy()
        bad_clean[0, 0, 0] = np.inf
        poisoned[0] = ImagePair(poisoned[0].id, poisoned[0].smoky, bad_clean)
        with np.errstate(invalid="ignore"):  # inf target makes inf - inf legal here
            with pytest.raises(NumericError, match="at step"):
                fit_pairs(poisoned, quick_config(batch_size=4, max_steps=2))

    def test_batch_larger_than_dataset_rejected(self, tiny_pairs):
        with pytest.raises(ConfigError):
            fit_pairs(tiny_pairs, quick_config(batch_size=16))

    def test_checkpoints_written(self, tiny_pairs, tmp_path):
        ckpt = tmp_path / "model.ulwk"
        config = quick_config(max_steps=5, checkpoint_path=str(ckpt), checkpoint_every=2)
        logs = []
        fit_pairs(tiny_pairs, config, log=logs.append)
        assert ckpt.exists()
        assert any(l.startswith("checkpoint=") for l in logs)
        model = model_from_checkpoint(ckpt)
        assert model.preset == "ulw"

    def test_checkpoint_config_echo(self, tiny_pairs, tmp_path):
        ckpt = tmp_path / "model.ulwk"
        config = quick_config(checkpoint_path=str(ckpt))
        fit_pairs(tiny_pairs, config)
        _, echoed = load_checkpoint(ckpt)
        assert echoed["preset"] == "ulw"
        assert echoed["depth"] == 1
        assert echoed["base_channels"] == 2
        assert echoed["seed"] == 0
        assert echoed["weights"] == [1 / 3, 1 / 3, 1 / 3]


class TestPredictImage:
    def test_preserves_shape_and_range(self, tiny_pairs):
        model = build_model(UNetConfig(depth=1, base_channels=2), "ulw", seed=0)
        out = predict_image(model, tiny_pairs[0].smoky)
        assert out.shape == tiny_pairs[0].smoky.shape
        assert out.dtype == np.float32
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_indivisible_needs_permission(self, rng):
        model = build_model(UNetConfig(depth=2, base_channels=2), "ulw", seed=0)
        odd = rng.random((3, 30, 30)).astype(np.float32)
        with pytest.raises(ShapeError):
            predict_image(model, odd)
        out = predict_image(model, odd, allow_resize=True)
        assert out.shape == (3, 30, 30)


class TestDesmokeDir:
    def _train_and_save(self, tiny_pairs, tmp_path):
        ckpt = tmp_path / "model.ulwk"
        fit_pairs(tiny_pairs, quick_config(checkpoint_path=str(ckpt)))
        return ckpt

    def test_restores_directory(self, tiny_pairs, tmp_path):
        ckpt = self._train_and_save(tiny_pairs, tmp_path)
        src = tmp_path / "in"
        src.mkdir()
        for pair in tiny_pairs:
            save_image(pair.smoky, src / f"{pair.id}.png")
        out = tmp_path / "out"
        logs = []
        count = desmoke_dir(ckpt, src, out, log=logs.append)
        assert count == len(tiny_pairs)
        assert sorted(p.name for p in out.glob("*.png")) == sorted(
            p.name for p in src.glob("*.png"))
        assert len([l for l in logs if l.startswith("wrote=")]) == count
        restored = load_image(out / f"{tiny_pairs[0].id}.png")
        assert restored.shape == tiny_pairs[0].smoky.shape

    def test_rerun_is_bitwise_identical(self, tiny_pairs, tmp_path):
        ckpt = self._train_and_save(tiny_pairs, tmp_path)
        src = tmp_path / "in"
        src.mkdir()
        for pair in tiny_pairs[:2]:
            save_image(pair.smoky, src / f"{pair.id}.png")
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        desmoke_dir(ckpt, src, out1)
        desmoke_dir(ckpt, src, out2)
        for path in out1.glob("*.png"):
            assert path.read_bytes() == (out2 / path.name).read_bytes()

    def test_empty_input_dir(self, tiny_pairs, tmp_path):
        ckpt = self._train_and_save(tiny_pairs, tmp_path)
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(UsageError):
            desmoke_dir(ckpt, empty, tmp_path / "out")

    def test_indivisible_respects_resize_flag(self, tiny_pairs, tmp_path, rng):
        ckpt = self._train_and_save(tiny_pairs, tmp_path)
        src = tmp_path / "odd"
        src.mkdir()
        save_image(rng.random((3, 31, 31)).astype(np.float32), src / "odd.png")
        with pytest.raises(ShapeError):
            desmoke_dir(ckpt, src, tmp_path / "out")
        count = desmoke_dir(ckpt, src, tmp_path / "out", allow_resize=True)
        assert count == 1
        assert load_image(tmp_path / "out" / "odd.png").shape == (3, 31, 31)


class TestDumpGrid:
    def test_grid_geometry(self, tiny_pairs, tmp_path):
        model = build_model(UNetConfig(depth=1, base_channels=2), "ulw", seed=0)
        path = tmp_path / "grid.png"
        dump_grid(model, tiny_pairs, path, max_rows=2)
        grid = load_image(path)
        h, w = tiny_pairs[0].smoky.shape[1:]
        assert grid.shape == (3, 2 * h, 3 * w)

    def test_caps_at_max_rows(self, tiny_pairs, tmp_path):
        model = build_model(UNetConfig(depth=1, base_channels=2), "ulw", seed=0)
        path = tmp_path / "grid.png"
        dump_grid(model, tiny_pairs, path, max_rows=1)
        h, w = tiny_pairs[0].smoky.shape[1:]
        assert load_image(path).shape == (3, h, 3 * w)
