"""Configs, the optimizer, bundle assembly, and both training stages."""

import numpy as np
import pytest

from quantart.data import synthetic_textures
from quantart.tensor import Tensor
from quantart.training import (
    Adam,
    ModelBundle,
    TrainConfig,
    adam_step,
    effective_adv_weight,
    evaluate_recon_loss,
    evaluate_style_loss,
    train_stage1,
    train_stage2,
)


def tiny_cfg(**overrides):
    base = dict(steps=3, batch_size=2, image_size=8, num_entries=8,
                latent_dim=4, sga_depth=1, channels=(4, 8), augment=False,
                reseed_interval=0, seed=5)
    base.update(overrides)
    return TrainConfig(**base)


def tiny_data(seed=0, n=4, size=8):
    rng = np.random.default_rng(seed)
    return (synthetic_textures("photo", n, size, rng),
            synthetic_textures("art", n, size, rng))


class TestTrainConfig:
    def test_defaults_validate(self):
        cfg = TrainConfig()
        assert cfg.levels == 4
        assert cfg.code_size == 2

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(style_weight=-1.0)

    def test_zero_batch_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)

    def test_indivisible_image_size_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(image_size=24, channels=(8, 8, 8, 8))

    def test_paper_scale_values(self):
        cfg = TrainConfig.paper_config()
        assert cfg.num_entries == 1024
        assert cfg.latent_dim == 256
        assert cfg.sga_depth == 6
        assert cfg.batch_size == 32
        assert cfg.epochs == 50
        assert cfg.learning_rate == pytest.approx(4.5e-6)
        assert cfg.image_size // 2 ** cfg.levels == 16

    def test_default_weights(self):
        cfg = TrainConfig()
        assert (cfg.recon_weight, cfg.codebook_weight, cfg.content_weight,
                cfg.style_weight, cfg.adv_weight) == (1, 1, 1, 10, 0.8)

    def test_code_size_adjustment(self):
        cfg = TrainConfig(image_size=64).with_code_size(16)
        assert cfg.levels == 2 and cfg.code_size == 16
        with pytest.raises(ValueError):
            TrainConfig(image_size=64).with_code_size(5)

    def test_dict_round_trip(self):
        cfg = tiny_cfg(no_self_attn=True)
        again = TrainConfig.from_dict(cfg.to_dict())
        assert again == cfg


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = Adam({"p": p}, lr=0.1)
        opt.step({"p": np.zeros(2)})
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_moves_by_lr(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = Adam({"p": p}, lr=0.1)
        opt.step({"p": np.array([1.0])})
        assert p.data[0] == pytest.approx(-0.1, rel=1e-6)

    def test_deterministic(self):
        def run():
            p = Tensor(np.array([0.3]), requires_grad=True)
            opt = Adam({"p": p}, lr=0.05)
            for i in range(10):
                opt.step({"p": np.array([np.sin(i + 1.0)])})
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_shape_mismatch_rejected(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        opt = Adam({"p": p}, lr=0.1)
        with pytest.raises(ValueError):
            opt.step({"p": np.zeros(4)})

    def test_functional_wrapper(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        state = adam_step({"p": p}, {"p": np.array([1.0])}, lr=0.1)
        assert state.t == 1
        adam_step({"p": p}, {"p": np.array([1.0])}, state=state, lr=0.1)
        assert state.t == 2


class TestWarmup:
    def test_ramp_shape(self):
        cfg = TrainConfig(adv_warmup=True)
        assert effective_adv_weight(cfg, 0, 100) == 0.0
        assert effective_adv_weight(cfg, 10, 100) == pytest.approx(0.4)
        assert effective_adv_weight(cfg, 20, 100) == pytest.approx(0.8)
        assert effective_adv_weight(cfg, 90, 100) == pytest.approx(0.8)

    def test_disabled(self):
        cfg = TrainConfig(adv_warmup=False)
        assert effective_adv_weight(cfg, 0, 100) == pytest.approx(0.8)


class TestModelBundle:
    def test_components_present(self):
        bundle = ModelBundle(tiny_cfg(), np.random.default_rng(0))
        comps = bundle.components()
        for name in ("photo_cont", "photo_quant", "art_cont", "art_quant",
                     "sga", "sga_hat", "feat_disc", "feat_disc_hat"):
            assert name in comps
        assert bundle.stage == 0

    def test_no_quantization_structure(self):
        bundle = ModelBundle(tiny_cfg(no_quantization=True),
                             np.random.default_rng(0))
        assert bundle.photo_quant is None
        assert bundle.sga_hat is None
        assert "art_quant" not in bundle.components()

    def test_shared_encoder_ablation(self):
        bundle = ModelBundle(tiny_cfg(shared_encoders=True),
                             np.random.default_rng(0))
        assert bundle.photo_quant.encoder is bundle.photo_cont.encoder
        assert bundle.photo_quant.decoder is not bundle.photo_cont.decoder
        both = ModelBundle(tiny_cfg(shared_autoencoders=True),
                           np.random.default_rng(0))
        assert both.art_quant.decoder is both.art_cont.decoder

    def test_array_names_are_prefixed(self):
        bundle = ModelBundle(tiny_cfg(), np.random.default_rng(0))
        names = bundle.named_arrays()
        assert "photo_quant.codebook.entries" in names
        assert any(n.startswith("sga.") for n in names)
        assert any(n.startswith("feat_disc.") for n in names)

    def test_save_load_round_trip(self, tmp_path):
        bundle = ModelBundle(tiny_cfg(), np.random.default_rng(3))
        path = tmp_path / "b.qart"
        bundle.save(path)
        again = ModelBundle.load(path)
        assert again.model_hash() == bundle.model_hash()
        assert again.cfg == bundle.cfg
        again.save(tmp_path / "b2.qart")
        assert (tmp_path / "b.qart").read_bytes() == (
            tmp_path / "b2.qart").read_bytes()


class TestStage1:
    def test_rejects_empty_dataset(self):
        photos, arts = tiny_data()
        with pytest.raises(ValueError):
            train_stage1(tiny_cfg(), photos[:0], arts)

    def test_zero_steps_is_initialization(self):
        photos, arts = tiny_data()
        cfg = tiny_cfg(steps=0)
        init = ModelBundle(cfg, np.random.default_rng(cfg.seed))
        trained, history = train_stage1(cfg, photos, arts)
        assert history == []
        assert trained.model_hash() == init.model_hash()

    def test_short_run_records_history(self):
        photos, arts = tiny_data()
        bundle, history = train_stage1(tiny_cfg(), photos, arts)
        assert bundle.stage == 1
        assert len(history) == 3
        step = history[0]
        assert set(step) == {"photo_cont", "photo_quant", "art_cont",
                             "art_quant"}
        assert "recon_l1" in step["photo_cont"]
        assert "perplexity" in step["photo_quant"]

    def test_deterministic_across_runs(self):
        photos, arts = tiny_data()
        a, _ = train_stage1(tiny_cfg(), photos, arts)
        b, _ = train_stage1(tiny_cfg(), photos, arts)
        assert a.model_hash() == b.model_hash()

    def test_warmup_recorded(self):
        photos, arts = tiny_data()
        _, history = train_stage1(tiny_cfg(steps=2), photos, arts)
        assert history[0]["photo_cont"]["adv_weight"] == 0.0
        assert history[1]["photo_cont"]["adv_weight"] > 0.0


class TestStage2:
    def make_stage1(self, **cfg_overrides):
        photos, arts = tiny_data()
        cfg = tiny_cfg(**cfg_overrides)
        bundle, _ = train_stage1(cfg, photos, arts)
        return cfg, bundle, photos, arts

    def test_requires_stage1(self):
        photos, arts = tiny_data()
        cfg = tiny_cfg()
        fresh = ModelBundle(cfg, np.random.default_rng(0))
        with pytest.raises(ValueError, match="stage"):
            train_stage2(cfg, fresh, photos, arts)

    def test_frozen_parameters_unchanged(self):
        cfg, bundle, photos, arts = self.make_stage1()
        before = bundle.stage1_parameter_hashes()
        bundle, history = train_stage2(cfg, bundle, photos, arts)
        assert bundle.stage == 2
        assert bundle.stage1_hashes == before
        assert bundle.stage1_parameter_hashes() == before
        assert len(history) == 3
        assert {"cont", "quant"} <= set(history[0])

    def test_zero_steps_keeps_stacks(self):
        cfg, bundle, photos, arts = self.make_stage1()
        cfg2 = tiny_cfg(steps=0)
        sga_before = {n: p.data.copy()
                      for n, p in bundle.sga.named_parameters()}
        bundle, history = train_stage2(cfg2, bundle, photos, arts)
        assert history == []
        for n, p in bundle.sga.named_parameters():
            np.testing.assert_array_equal(p.data, sga_before[n])

    def test_stacks_actually_move(self):
        cfg, bundle, photos, arts = self.make_stage1()
        sga_before = {n: p.data.copy()
                      for n, p in bundle.sga.named_parameters()}
        bundle, _ = train_stage2(cfg, bundle, photos, arts)
        moved = any(not np.array_equal(p.data, sga_before[n])
                    for n, p in bundle.sga.named_parameters())
        assert moved

    def test_deterministic(self):
        cfg, bundle, photos, arts = self.make_stage1()
        snapshot = bundle.model_hash()
        b1, _ = train_stage2(cfg, bundle, photos, arts)
        h1 = b1.model_hash()
        # rebuild identical stage-1 state and repeat
        cfg2, bundle2, _, _ = self.make_stage1()
        assert bundle2.model_hash() == snapshot
        b2, _ = train_stage2(cfg2, bundle2, photos, arts)
        assert b2.model_hash() == h1

    def test_no_quantization_path(self):
        cfg, bundle, photos, arts = self.make_stage1(no_quantization=True)
        bundle, history = train_stage2(cfg, bundle, photos, arts)
        assert set(history[0]) == {"cont"}

    def test_no_sga_quantization_path(self):
        cfg, bundle, photos, arts = self.make_stage1(
            no_sga_quantization=True)
        bundle, history = train_stage2(cfg, bundle, photos, arts)
        assert history[0]["quant"]["codebook"] == 0.0


class TestEvaluation:
    def test_eval_helpers_return_finite_scalars(self):
        photos, arts = tiny_data()
        cfg = tiny_cfg(steps=1)
        bundle, _ = train_stage1(cfg, photos, arts)
        style = evaluate_style_loss(bundle, photos, arts)
        recon = evaluate_recon_loss(bundle.photo_cont, photos)
        assert np.isfinite(style) and style >= 0
        assert np.isfinite(recon) and recon >= 0
