"""Model-level tests: geometry, round trips, training behavior, checkpoints."""

import numpy as np
import pytest

from placedesc import (
    ArchSpec,
    ArchitectureError,
    CANONICAL_D3,
    DataError,
    FormatError,
    LayerNormConfig,
    NumericError,
    ShapeError,
    TrainConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
    train,
)

from oracles import smooth_low_rank_maps

# Small custom geometry used throughout: 14x20 -> 12x18 -> 5x8 -> 2x3.
SMALL_BLOCKS = (((3, 3), (1, 1)), ((4, 4), (2, 2)), ((3, 4), (2, 2)))


def small_spec(d1=16, d2=16, d3=8, c=6):
    return ArchSpec("custom", (c, 14, 20), d1=d1, d2=d2, d3=d3, blocks=SMALL_BLOCKS)


class TestArchSpec:
    def test_table_dimensions(self):
        # Canonical geometry lands on the published output sizes.
        assert ArchSpec.vgg16(d3=256).flat_dim == 8192
        assert ArchSpec.vgg16(d3=128).flat_dim == 4096
        assert ArchSpec.alexnet(d3=256).flat_dim == 8192
        assert ArchSpec.alexnet(d3=128).flat_dim == 4096

    def test_code_dims(self):
        assert ArchSpec.vgg16(d3=256).code_dims == (256, 4, 8)
        assert ArchSpec.alexnet(d3=256).code_dims == (256, 4, 8)

    def test_encoder_shape_chain(self):
        shapes = ArchSpec.vgg16(d3=256).encoder_shapes()
        assert shapes == [(128, 27, 37), (128, 11, 17), (256, 4, 8)]
        shapes = ArchSpec.alexnet(d3=256).encoder_shapes()
        assert shapes == [(128, 25, 35), (128, 11, 17), (256, 4, 8)]

    def test_canonical_flags(self):
        assert ArchSpec.vgg16(d3=256).is_canonical
        assert not ArchSpec.vgg16(d3=100).is_canonical
        assert not small_spec().is_canonical

    def test_nonpositive_dims_rejected(self):
        with pytest.raises(ArchitectureError, match="block 2"):
            ArchSpec(
                "custom", (4, 6, 6), d1=2, d2=2, d3=2,
                blocks=(((3, 3), (1, 1)), ((5, 5), (1, 1)), ((3, 3), (1, 1))),
            )

    def test_non_divisible_stride_rejected(self):
        with pytest.raises(ArchitectureError, match="round trip"):
            ArchSpec(
                "custom", (4, 14, 21), d1=2, d2=2, d3=2,
                blocks=(((3, 3), (1, 1)), ((4, 4), (2, 2)), ((3, 4), (2, 2))),
            )

    def test_bad_channel_counts(self):
        with pytest.raises(ArchitectureError, match="d3"):
            ArchSpec("custom", (4, 14, 20), d1=2, d2=2, d3=0, blocks=SMALL_BLOCKS)


class TestBuildModel:
    def test_deterministic_given_seed(self):
        a = build_model(small_spec(), seed=5)
        b = build_model(small_spec(), seed=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa.value, pb.value)
        c = build_model(small_spec(), seed=6)
        assert any(
            not np.array_equal(pa.value, pc.value)
            for pa, pc in zip(a.parameters(), c.parameters())
        )

    def test_initial_state(self):
        model = build_model(small_spec(), seed=0)
        for p in model.parameters():
            assert not p.m.any() and not p.v.any() and p.step_count == 0
        for blk in model.encoder:
            np.testing.assert_array_equal(blk.gamma.value, 1.0)
            np.testing.assert_array_equal(blk.beta.value, 0.0)
            np.testing.assert_array_equal(blk.alpha.value, 0.25)
        assert not model.decoder[-1].has_norm

    def test_channel_flow(self):
        model = build_model(small_spec(d1=3, d2=4, d3=5, c=6), seed=0)
        assert [b.w.value.shape[0] for b in model.encoder] == [3, 4, 5]
        assert [b.w.value.shape[1] for b in model.encoder] == [6, 3, 4]
        # Decoder mirrors: d3 -> d2 -> d1 -> input channels.
        assert [b.w.value.shape[0] for b in model.decoder] == [5, 4, 3]
        assert [b.w.value.shape[1] for b in model.decoder] == [4, 3, 6]


class TestEncodeReconstruct:
    def test_round_trip_shape_small(self):
        model = build_model(small_spec(), seed=1)
        x = np.random.default_rng(0).normal(size=(3, 6, 14, 20)).astype(np.float32)
        y, loss = model.reconstruct(x)
        assert y.shape == x.shape
        assert loss > 0.0

    @pytest.mark.parametrize("backbone", ["vgg16", "alexnet"])
    def test_round_trip_shape_canonical(self, backbone):
        spec = getattr(ArchSpec, backbone)(d3=8)
        model = build_model(spec, seed=0)
        x = np.random.default_rng(1).normal(size=(1,) + spec.input_dims).astype(np.float32)
        y, _ = model.reconstruct(x)
        assert y.shape == x.shape

    def test_descriptor_unit_norm_and_length(self):
        spec = ArchSpec.vgg16(d3=128)
        model = build_model(spec, seed=2)
        x = np.random.default_rng(2).normal(size=(2, 512, 30, 40)).astype(np.float32)
        d = model.encode(x)
        assert d.shape == (2, 4096)
        np.testing.assert_allclose(
            np.linalg.norm(d.astype(np.float64), axis=1), 1.0, atol=1e-6
        )

    def test_encode_deterministic(self):
        model = build_model(small_spec(), seed=3)
        x = np.random.default_rng(3).normal(size=(2, 6, 14, 20)).astype(np.float32)
        np.testing.assert_array_equal(model.encode(x), model.encode(x))

    def test_dimension_mismatch_reported(self):
        model = build_model(small_spec(), seed=0)
        bad = np.zeros((1, 6, 15, 20), np.float32)
        with pytest.raises(ShapeError, match=r"\(6, 15, 20\)"):
            model.encode(bad)

    def test_overfit_single_sample(self):
        model = build_model(small_spec(d1=16, d2=16, d3=16, c=8), seed=4)
        maps = smooth_low_rank_maps(np.random.default_rng(4), n=1, c=8, rank=1)
        _, initial = model.reconstruct(maps)
        train(model, maps, None, TrainConfig(lr=0.001, batch_size=1, epochs=300, seed=0))
        _, final = model.reconstruct(maps)
        assert final < 0.05 * initial


class TestTrain:
    def make_data(self, n=8, c=6):
        return smooth_low_rank_maps(np.random.default_rng(7), n=n, c=c)

    def test_overfit_small_set(self):
        model = build_model(small_spec(d1=32, d2=32, d3=64), seed=42)
        maps = smooth_low_rank_maps(np.random.default_rng(7), c=6, n=8)
        _, initial = model.reconstruct(maps)
        log = train(model, maps, None, TrainConfig(lr=0.001, batch_size=8, epochs=200, seed=1))
        assert log[-1]["train_loss"] <= 0.10 * initial

    def test_lr_zero_is_null_update(self):
        model = build_model(small_spec(), seed=0)
        before = [p.value.copy() for p in model.parameters()]
        log = train(
            model, self.make_data(), None,
            TrainConfig(lr=0.0, batch_size=4, epochs=3, seed=0, shuffle=False),
        )
        for p, keep in zip(model.parameters(), before):
            np.testing.assert_array_equal(p.value, keep)
        losses = [row["train_loss"] for row in log]
        assert losses[0] == pytest.approx(losses[-1])

    def test_equal_seeds_identical_curves(self):
        data = self.make_data()
        cfg = TrainConfig(lr=0.001, batch_size=4, epochs=4, seed=9)
        log_a = train(build_model(small_spec(), seed=9), data, data, cfg)
        log_b = train(build_model(small_spec(), seed=9), data, data, cfg)
        assert log_a == log_b

    def test_validation_loss_logged(self):
        data = self.make_data()
        log = train(
            build_model(small_spec(), seed=1), data, data,
            TrainConfig(lr=0.001, batch_size=4, epochs=2, seed=1),
        )
        assert all("val_loss" in row and np.isfinite(row["val_loss"]) for row in log)

    def test_smoothed_loss_mostly_decreases(self):
        model = build_model(small_spec(d1=32, d2=32, d3=64), seed=42)
        maps = smooth_low_rank_maps(np.random.default_rng(7), c=6, n=8)
        log = train(model, maps, None, TrainConfig(lr=0.001, batch_size=8, epochs=100, seed=1))
        losses = np.array([row["train_loss"] for row in log])
        window = np.convolve(losses, np.ones(5) / 5, mode="valid")
        drops = np.diff(window) <= 0
        assert drops.mean() >= 0.90

    def test_empty_train_set_rejected(self):
        model = build_model(small_spec(), seed=0)
        with pytest.raises(DataError, match="empty"):
            train(model, np.zeros((0, 6, 14, 20), np.float32), None, TrainConfig(epochs=1))

    def test_nonfinite_loss_aborts_with_position(self):
        model = build_model(small_spec(), seed=0)
        model.encoder[0].w.value[0, 0, 0, 0] = np.nan
        with pytest.raises(NumericError, match="epoch 1"):
            train(model, self.make_data(), None, TrainConfig(epochs=1, batch_size=8))

    def test_dim_mismatch_rejected(self):
        model = build_model(small_spec(), seed=0)
        with pytest.raises(ShapeError):
            train(model, np.zeros((4, 6, 15, 20), np.float32), None, TrainConfig(epochs=1))

    def test_frozen_stats_accumulated(self):
        model = build_model(small_spec(), seed=0)
        data = self.make_data()
        cfg = TrainConfig(
            lr=0.001, batch_size=4, epochs=1, seed=0,
            layernorm=LayerNormConfig(mode="frozen_stats"),
        )
        train(model, data, None, cfg)
        flat = data.astype(np.float64).reshape(-1)
        assert model.layernorm.mode == "frozen_stats"
        assert model.layernorm.frozen_mean == pytest.approx(flat.mean())
        assert model.layernorm.frozen_var == pytest.approx(flat.var())
        # Encoding must consume the frozen statistics without error.
        d = model.encode(data[:2])
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-5)

    def test_config_validation(self):
        with pytest.raises(Exception, match="lr"):
            TrainConfig(lr=-0.1)
        with pytest.raises(Exception, match="batch"):
            TrainConfig(batch_size=0)
        with pytest.raises(Exception, match="epochs"):
            TrainConfig(epochs=0)


class TestCheckpoints:
    def trained_model(self):
        model = build_model(small_spec(), seed=11)
        data = smooth_low_rank_maps(np.random.default_rng(11), n=4, c=6)
        train(model, data, None, TrainConfig(lr=0.001, batch_size=2, epochs=2, seed=11))
        return model, data

    def test_round_trip_bit_exact(self):
        model, _ = self.trained_model()
        blob = save_checkpoint(model)
        clone = load_checkpoint(blob)
        assert clone.spec == model.spec
        assert clone.rng_seed == model.rng_seed
        assert clone.layernorm == model.layernorm
        for pa, pb in zip(model.parameters(), clone.parameters()):
            np.testing.assert_array_equal(pa.value, pb.value)
            np.testing.assert_array_equal(pa.m, pb.m)
            np.testing.assert_array_equal(pa.v, pb.v)
            assert pa.step_count == pb.step_count
        for ba, bb in zip(model.encoder + model.decoder, clone.encoder + clone.decoder):
            if ba.has_norm:
                np.testing.assert_array_equal(ba.running_mean, bb.running_mean)
                np.testing.assert_array_equal(ba.running_var, bb.running_var)
        assert save_checkpoint(clone) == blob

    def test_encode_identical_after_reload(self):
        model, data = self.trained_model()
        clone = load_checkpoint(save_checkpoint(model))
        np.testing.assert_array_equal(model.encode(data), clone.encode(data))

    def test_corrupted_magic_rejected(self):
        model, _ = self.trained_model()
        blob = bytearray(save_checkpoint(model))
        blob[0] ^= 0xFF
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(bytes(blob))

    def test_truncation_rejected(self):
        model, _ = self.trained_model()
        blob = save_checkpoint(model)
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(blob[: len(blob) // 2])

    def test_trailing_bytes_rejected(self):
        model, _ = self.trained_model()
        with pytest.raises(FormatError, match="trailing"):
            load_checkpoint(save_checkpoint(model) + b"\x00")

    def test_version_mismatch_rejected(self):
        model, _ = self.trained_model()
        blob = bytearray(save_checkpoint(model))
        blob[4:6] = (99).to_bytes(2, "little")
        with pytest.raises(FormatError, match="version"):
            load_checkpoint(bytes(blob))

    def test_spec_survives_round_trip(self):
        spec = ArchSpec.vgg16(d3=128)
        model = build_model(spec, seed=0)
        clone = load_checkpoint(save_checkpoint(model))
        assert clone.spec.flat_dim == 4096
        assert clone.spec == spec

    def test_checksum_tracks_parameters(self):
        model, _ = self.trained_model()
        before = model.checksum()
        assert len(before) == 8
        model.encoder[0].w.value[0, 0, 0, 0] += 1.0
        assert model.checksum() != before

    def test_periodic_checkpoints_written(self, tmp_path):
        model = build_model(small_spec(), seed=0)
        data = smooth_low_rank_maps(np.random.default_rng(0), n=4, c=6)
        cfg = TrainConfig(lr=0.001, batch_size=4, epochs=4, seed=0, checkpoint_every=2)
        train(model, data, None, cfg, checkpoint_dir=tmp_path)
        names = sorted(p.name for p in tmp_path.glob("*.cae"))
        assert names == ["checkpoint_epoch0002.cae", "checkpoint_epoch0004.cae"]
        load_checkpoint((tmp_path / names[0]).read_bytes())


class TestShapeRoundTripSweep:
    @pytest.mark.parametrize("backbone", ["vgg16", "alexnet"])
    @pytest.mark.parametrize("d3", CANONICAL_D3)
    def test_flat_dims_scale_with_d3(self, backbone, d3):
        spec = getattr(ArchSpec, backbone)(d3=d3)
        c, h, w = spec.code_dims
        assert (c, h, w) == (d3, 4, 8)
        assert spec.flat_dim == d3 * 32
