"""Stage-1 pairs: reconstruction contracts and loss bookkeeping."""

import numpy as np
import pytest

from quantart.autoencoder import (
    ADV_WEIGHT,
    AutoencoderPair,
    StageOneLossReport,
    ae_loss,
    pair_loss,
    recompose_total,
    reconstruct,
    vq_ae_loss,
)
from quantart.nn import PatchDiscriminator
from quantart.quantize import quantize
from quantart.tensor import Tensor, backward


def zeroed(module):
    for _, p in module.named_parameters():
        p.data = np.zeros_like(p.data)
    return module


def tiny_pair(quantized, seed=0, in_channels=3):
    return AutoencoderPair(
        in_channels=in_channels,
        latent_dim=4,
        channels=(8, 8),
        num_entries=16,
        rng=np.random.default_rng(seed),
        domain="photo",
        quantized=quantized,
    )


def tiny_images(rng, n=1, channels=3, size=8):
    return Tensor(rng.uniform(-1, 1, size=(n, channels, size, size))
                  .astype(np.float32))


class TestReconstruct:
    @pytest.mark.parametrize("quantized", [False, True])
    def test_output_shape_matches_input(self, quantized):
        pair = tiny_pair(quantized)
        x = tiny_images(np.random.default_rng(1))
        x_rec, latent, q = reconstruct(pair, x)
        assert x_rec.shape == x.shape
        assert latent.shape == (1, 4, 2, 2)
        assert (q is None) == (not quantized)

    def test_quantized_decoder_input_rows_are_entries(self):
        pair = tiny_pair(True)
        x = tiny_images(np.random.default_rng(2))
        _, latent, q = reconstruct(pair, x)
        rows = (q.with_straight_through.data
                .transpose(0, 2, 3, 1).reshape(-1, 4))
        picked = pair.codebook.entries.data[q.indices.reshape(-1)]
        assert rows.tobytes() == np.ascontiguousarray(picked).tobytes()

    def test_untrained_quantized_path_is_differentiable(self):
        pair = tiny_pair(True)
        x = tiny_images(np.random.default_rng(3))
        x_rec, _, _ = reconstruct(pair, x)
        loss = (x_rec ** 2).mean()
        enc_params = {f"enc.{n}": p
                      for n, p in pair.encoder.named_parameters()}
        grads = backward(loss, enc_params)
        assert any(np.any(g != 0.0) for g in grads.values())

    def test_wrong_channel_count_rejected(self):
        pair = tiny_pair(False)
        with pytest.raises(ValueError):
            reconstruct(pair, tiny_images(np.random.default_rng(0),
                                          channels=1))

    def test_out_of_range_rejected_when_validating(self):
        from quantart.tensor import validation
        pair = tiny_pair(False)
        x = Tensor(np.full((1, 3, 8, 8), 1.5, dtype=np.float32))
        with validation():
            with pytest.raises(ValueError):
                reconstruct(pair, x)
        reconstruct(pair, x)  # range unchecked when validation is off


class TestAeLoss:
    def test_identical_images_zero_recon(self):
        rng = np.random.default_rng(4)
        disc = PatchDiscriminator(in_channels=3, base=8, rng=rng)
        x = tiny_images(rng)
        report = ae_loss(x, x, disc)
        assert report.recon_l1 == 0.0

    def test_hand_case_quarter(self):
        rng = np.random.default_rng(5)
        disc = PatchDiscriminator(in_channels=1, base=8, rng=rng)
        x = Tensor(np.full((1, 1, 4, 4), 0.5, dtype=np.float64))
        x_rec = Tensor(np.full((1, 1, 4, 4), 0.25, dtype=np.float64))
        report = ae_loss(x, x_rec, disc)
        assert report.recon_l1 == pytest.approx(0.25)

    def test_zero_discriminator_reports_minus_two_ln_two(self):
        rng = np.random.default_rng(6)
        disc = zeroed(PatchDiscriminator(in_channels=3, base=8, rng=rng))
        x = tiny_images(rng)
        x_rec = tiny_images(rng)
        report = ae_loss(x, x_rec, disc)
        assert report.adv_disc == pytest.approx(-2.0 * np.log(2.0), rel=1e-6)
        assert report.adv_gen == pytest.approx(np.log(2.0), rel=1e-6)

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(7)
        disc = PatchDiscriminator(in_channels=3, base=8, rng=rng)
        with pytest.raises(ValueError):
            ae_loss(tiny_images(rng, size=8), tiny_images(rng, size=4), disc)

    def test_disc_objective_never_reaches_generator(self):
        pair = tiny_pair(False, seed=8)
        x = tiny_images(np.random.default_rng(8))
        x_rec, _, _ = reconstruct(pair, x)
        report = ae_loss(x, x_rec, pair.discriminator)
        enc_params = {f"e.{n}": p for n, p in pair.encoder.named_parameters()}
        dec_params = {f"d.{n}": p for n, p in pair.decoder.named_parameters()}
        grads = backward(report.disc_total, {**enc_params, **dec_params})
        assert all(np.all(g == 0.0) for g in grads.values())
        disc_grads = backward(
            ae_loss(x, reconstruct(pair, x)[0], pair.discriminator).disc_total,
            dict(pair.discriminator.named_parameters()))
        assert any(np.any(g != 0.0) for g in disc_grads.values())


class TestVqAeLoss:
    def test_collapses_when_latent_is_entry(self):
        pair = tiny_pair(True, seed=9)
        x = tiny_images(np.random.default_rng(9))
        x_rec, latent, _ = reconstruct(pair, x)
        # force the latent onto codebook rows, re-quantize
        snapped = Tensor(
            pair.codebook.entries.data[
                quantize(latent, pair.codebook).indices.reshape(-1)]
            .reshape(1, 2, 2, 4).transpose(0, 3, 1, 2).copy())
        q = quantize(snapped, pair.codebook)
        report = vq_ae_loss(x, x_rec, snapped, q, pair.discriminator)
        plain = ae_loss(x, x_rec, pair.discriminator)
        assert report.codebook_term == 0.0
        assert report.commitment_term == 0.0
        assert report.total.item() == pytest.approx(plain.total.item())

    def test_total_grad_wrt_entries_equals_codebook_term_grad(self):
        pair = tiny_pair(True, seed=10)
        pair.codebook.entries.data = pair.codebook.entries.data.astype(
            np.float64)
        x = tiny_images(np.random.default_rng(10))
        x_rec, latent, q = reconstruct(pair, x)
        report = vq_ae_loss(x, x_rec, latent, q, pair.discriminator)
        total_grads = backward(report.total,
                               {"entries": pair.codebook.entries})

        pair.codebook.entries.grad = None
        x_rec2, latent2, q2 = reconstruct(pair, x)
        from quantart.quantize import vq_losses
        codebook_term, _ = vq_losses(latent2, q2)
        part_grads = backward(codebook_term,
                              {"entries": pair.codebook.entries})
        np.testing.assert_allclose(total_grads["entries"],
                                   part_grads["entries"], rtol=1e-6)

    def test_recomposition_within_1e6(self):
        pair = tiny_pair(True, seed=11)
        x = tiny_images(np.random.default_rng(11))
        _, report = pair_loss(pair, x)
        assert report.total.item() == pytest.approx(recompose_total(report),
                                                    abs=1e-6)

    def test_recomposition_with_warmup_weight(self):
        pair = tiny_pair(True, seed=12)
        x = tiny_images(np.random.default_rng(12))
        _, report = pair_loss(pair, x, adv_weight=0.3)
        assert report.adv_weight == 0.3
        assert report.total.item() == pytest.approx(recompose_total(report),
                                                    abs=1e-6)
        assert report.total.item() != pytest.approx(
            report.recon_l1 + ADV_WEIGHT * report.adv_gen
            + report.codebook_term + 0.25 * report.commitment_term,
            abs=1e-9)


def test_pairs_are_parameter_disjoint():
    a = tiny_pair(False, seed=13)
    b = tiny_pair(True, seed=14)
    ids_a = {id(p) for _, p in a.named_parameters()}
    ids_b = {id(p) for _, p in b.named_parameters()}
    assert not (ids_a & ids_b)


def test_quantized_pair_has_codebook_continuous_does_not():
    assert tiny_pair(True).codebook is not None
    assert tiny_pair(False).codebook is None
    names = [n for n, _ in tiny_pair(True).named_parameters()]
    assert "codebook.entries" in names
