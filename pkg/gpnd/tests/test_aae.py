"""Tests for the adversarial autoencoder: losses, update masks, training loop."""

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import expit

from gpnd.aae import (
    AaeModel,
    AaeTrainer,
    TrainingConfig,
    build_aae,
    decode,
    encode,
    format_loss_table,
    loss_adv_dx,
    loss_adv_dz,
    loss_reconstruction,
    train,
    variational_objective,
)
from gpnd.config import RunConfig, derive_seed
from gpnd.data import SyntheticManifoldConfig, generate_synthetic
from gpnd.errors import ConfigError, DataError, DimensionError
from gpnd.nn import DenseLayer, DenseNetwork, forward, init_network


def _zero_head(net):
    """Same network with the final layer's weights and bias zeroed (sigmoid head -> 0.5)."""
    params = [p.copy() for p in net.parameters()]
    params[-2][:] = 0.0
    params[-1][:] = 0.0
    return net.with_parameters(params)


def _biased_head(net, bias):
    params = [p.copy() for p in net.parameters()]
    params[-2][:] = 0.0
    params[-1][:] = bias
    return net.with_parameters(params)


def _disc_value(net, v):
    return float(forward(net, v)[0][0])


@pytest.fixture
def model():
    return build_aae(12, 3, hidden_dims=(10,), seed=7)


@pytest.fixture(scope="module")
def samples():
    synth = generate_synthetic(SyntheticManifoldConfig(n=3, m=12, hidden=6, count=500, seed=3))
    return synth.dataset.samples


@pytest.fixture(scope="module")
def sharp_samples():
    """500 points of a 3-d manifold pushed towards {0, 1}, so the BCE floor is far below log 2."""
    rng = np.random.default_rng(17)
    w = rng.normal(size=(12, 3))
    b = rng.uniform(-3.0, 3.0, 12)
    return expit(4.0 * rng.standard_normal((500, 3)) @ w.T + b)


@pytest.fixture
def vae():
    return build_aae(12, 3, hidden_dims=(10,), seed=7, variational=True)


class TestAaeModel:
    def test_dimensions(self, model):
        assert (model.m, model.n) == (12, 3)
        assert model.decoder.layers[-1].activation == "sigmoid"
        assert model.disc_z.out_dim == 1 and model.disc_x.out_dim == 1

    def test_latent_must_be_below_ambient(self):
        with pytest.raises(ConfigError):
            build_aae(4, 4, hidden_dims=(8,))

    def test_mismatched_decoder_rejected(self, model):
        other = build_aae(10, 3, hidden_dims=(10,), seed=1)
        with pytest.raises(DimensionError):
            AaeModel(model.encoder, other.decoder, model.disc_z, model.disc_x)


class TestEncodeDecode:
    def test_encode_deterministic(self, model, samples):
        np.testing.assert_array_equal(encode(model, samples[0]), encode(model, samples[0]))

    def test_batch_equals_singles(self, model, samples):
        batch = encode(model, samples[:5])
        for i in range(5):
            np.testing.assert_allclose(batch[i], encode(model, samples[i]), rtol=1e-12, atol=1e-14)

    def test_decode_bounded(self, model):
        z = np.random.default_rng(0).uniform(-10, 10, size=(50, 3))
        out = decode(model, z)
        assert out.shape == (50, 12)
        assert np.all((out > 0) & (out < 1))

    def test_round_trip_shape(self, model, samples):
        assert decode(model, encode(model, samples[0])).shape == samples[0].shape


class TestLosses:
    def test_adv_dz_equilibrium(self, model, samples):
        m = AaeModel(model.encoder, model.decoder, _zero_head(model.disc_z), model.disc_x)
        prior = np.random.default_rng(1).standard_normal((8, 3))
        disc, gen = loss_adv_dz(m, samples[:8], prior)
        assert disc == pytest.approx(2 * math.log(2), abs=1e-12)
        assert gen == pytest.approx(math.log(2), abs=1e-12)

    def test_adv_dx_equilibrium(self, model, samples):
        m = AaeModel(model.encoder, model.decoder, model.disc_z, _zero_head(model.disc_x))
        prior = np.random.default_rng(1).standard_normal((8, 3))
        disc, _ = loss_adv_dx(m, samples[:8], prior)
        assert disc == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_adv_dz_hand_transcription(self, model, samples):
        prior = np.random.default_rng(2).standard_normal((3, 3))
        batch = samples[:3]
        d_prior = np.array([_disc_value(model.disc_z, z) for z in prior])
        d_enc = np.array([_disc_value(model.disc_z, encode(model, x)) for x in batch])
        expected = -np.mean(np.log(d_prior)) - np.mean(np.log(1 - d_enc))
        disc, gen = loss_adv_dz(model, batch, prior)
        assert disc == pytest.approx(expected, rel=1e-12)
        assert gen == pytest.approx(-np.mean(np.log(d_enc)), rel=1e-12)

    def test_adv_dx_hand_transcription(self, model, samples):
        prior = np.random.default_rng(4).standard_normal((3, 3))
        batch = samples[:3]
        d_real = np.array([_disc_value(model.disc_x, x) for x in batch])
        d_fake = np.array([_disc_value(model.disc_x, decode(model, z)) for z in prior])
        disc, gen = loss_adv_dx(model, batch, prior)
        assert disc == pytest.approx(-np.mean(np.log(d_real)) - np.mean(np.log(1 - d_fake)), rel=1e-12)
        assert gen == pytest.approx(-np.mean(np.log(d_fake)), rel=1e-12)

    def test_clamped_losses_stay_finite(self, model, samples):
        certain = AaeModel(model.encoder, model.decoder, _biased_head(model.disc_z, -1e4), model.disc_x)
        disc, gen = loss_adv_dz(certain, samples[:4], np.zeros((4, 3)))
        assert np.isfinite(disc) and np.isfinite(gen)

    def test_perfect_latent_discriminator(self, model, samples):
        # g maps everything to (-1, 0, 0); D_z = sigmoid(100 z_0) separates it from prior draws at (1, 0, 0)
        encoder = DenseNetwork((DenseLayer(np.zeros((3, 12)), np.array([-1.0, 0.0, 0.0]), "identity"),))
        disc_z = DenseNetwork((DenseLayer(np.array([[100.0, 0.0, 0.0]]), np.zeros(1), "sigmoid"),))
        m = AaeModel(encoder, model.decoder, disc_z, model.disc_x)
        prior = np.tile([1.0, 0.0, 0.0], (4, 1))
        disc, _ = loss_adv_dz(m, samples[:4], prior)
        assert 0.0 < disc < 1e-6

    def test_reconstruction_at_half(self, model):
        m = AaeModel(model.encoder, _zero_head(model.decoder), model.disc_z, model.disc_x)
        x = np.full((4, 12), 0.5)
        assert loss_reconstruction(m, x) == pytest.approx(math.log(2), abs=1e-12)

    def test_reconstruction_rejects_out_of_range(self, model):
        with pytest.raises(DataError):
            loss_reconstruction(model, np.full((2, 12), 1.5))


class TestUpdateMasks:
    def _fingerprints(self, trainer):
        return trainer.model.fingerprints()

    def test_each_step_touches_only_its_networks(self, model, samples):
        trainer = AaeTrainer(model, TrainingConfig(seed=1))
        batch = samples[:16]
        expectations = [
            (lambda: trainer.step_disc_x(batch, trainer.sample_prior(16)), {"disc_x"}),
            (lambda: trainer.step_decoder_adv(trainer.sample_prior(16)), {"decoder"}),
            (lambda: trainer.step_disc_z(batch, trainer.sample_prior(16)), {"disc_z"}),
            (lambda: trainer.step_autoencoder(batch), {"encoder", "decoder"}),
        ]
        for step, changed in expectations:
            before = self._fingerprints(trainer)
            step()
            after = self._fingerprints(trainer)
            assert {k for k in before if before[k] != after[k]} == changed

    def test_disc_x_step_usually_lowers_its_loss(self, model, samples):
        trainer = AaeTrainer(model, TrainingConfig(seed=2, learning_rate=1e-4))
        rng = np.random.default_rng(0)
        improved = 0
        for _ in range(100):
            batch = samples[rng.choice(len(samples), 32, replace=False)]
            prior = trainer.sample_prior(32)
            before = trainer.step_disc_x(batch, prior)
            after, _ = loss_adv_dx(trainer.model, batch, prior)
            improved += after <= before
        assert improved >= 90


class TestTrain:
    def test_zero_epochs_is_noop(self, model, samples):
        trained, history = train(model, samples, TrainingConfig(epochs=0))
        assert trained is model
        assert history == []

    def test_deterministic(self, model, samples):
        cfg = TrainingConfig(epochs=2, batch_size=64, seed=9)
        a, _ = train(model, samples, cfg)
        b, _ = train(model, samples, cfg)
        assert a.fingerprints() == b.fingerprints()

    def test_input_model_untouched(self, model, samples):
        before = model.fingerprints()
        train(model, samples, TrainingConfig(epochs=1, batch_size=64))
        assert model.fingerprints() == before

    def test_reconstruction_decreases_every_epoch(self, model, sharp_samples):
        _, history = train(model, sharp_samples, TrainingConfig(epochs=5, batch_size=32, seed=4))
        errors = [r.error for r in history]
        assert len(errors) == 5
        assert all(later < earlier for earlier, later in zip(errors, errors[1:]))
        assert all(np.isfinite(r.adv_dz) and np.isfinite(r.adv_dx) for r in history)

    def test_encoder_recovers_generating_coordinate(self):
        synth = generate_synthetic(
            SyntheticManifoldConfig(n=1, m=16, generator="linear", noise_sigma=0.01, count=1000, seed=2)
        )
        model = build_aae(16, 1, hidden_dims=(32,), seed=3)
        trained, _ = train(model, synth.dataset.samples, TrainingConfig(epochs=20, batch_size=64, seed=5))
        z = encode(trained, synth.dataset.samples)[:, 0]
        assert abs(np.corrcoef(z, synth.latents[:, 0])[0, 1]) > 0.9

    def test_ring_reconstruction_near_noise_floor(self):
        # unit circle lifted into 64 dims by a scaled orthonormal map, sigma = 0.02
        rng = np.random.default_rng(8)
        lift = np.linalg.qr(rng.standard_normal((64, 2)))[0] * 0.2
        theta = rng.uniform(0.0, 2.0 * np.pi, 2000)
        clean = 0.5 + np.column_stack([np.cos(theta), np.sin(theta)]) @ lift.T
        x = np.clip(clean + 0.02 * rng.standard_normal(clean.shape), 0.0, 1.0)
        model = build_aae(64, 1, hidden_dims=(64,), seed=1)
        trained, _ = train(model, x, TrainingConfig(epochs=40, batch_size=64, seed=2))
        rmse = np.sqrt(np.mean((decode(trained, encode(trained, x)) - x) ** 2))
        assert rmse < 2 * 0.02
        assert rmse < np.sqrt(np.mean((x - x.mean(axis=0)) ** 2))

    def test_without_disc_x(self, model, samples):
        trained, history = train(model, samples, TrainingConfig(epochs=1, use_disc_x=False))
        assert trained.disc_x.fingerprint() == model.disc_x.fingerprint()
        assert history[0].adv_dx == 0.0

    def test_rejects_out_of_range_data(self, model):
        with pytest.raises(DataError):
            train(model, np.full((4, 12), 2.0), TrainingConfig(epochs=1))

    def test_rejects_wrong_dimension(self, model):
        with pytest.raises(DimensionError):
            train(model, np.full((4, 5), 0.5), TrainingConfig(epochs=1))

    def test_loss_table_has_row_per_epoch(self, model, samples):
        _, history = train(model, samples, TrainingConfig(epochs=3, batch_size=128))
        lines = format_loss_table(history).strip().splitlines()
        assert len(lines) == 4
        assert "L_adv-dz" in lines[0]


class TestVariational:
    def _objective(self, model, batch, eps):
        return variational_objective(model, batch, eps).objective

    def test_encoder_head_is_mean_and_log_variance(self, vae, samples):
        assert vae.variational and vae.encoder.out_dim == 6
        raw = forward(vae.encoder, samples[:4])[0]
        np.testing.assert_array_equal(encode(vae, samples[:4]), raw[:, :3])
        assert decode(vae, encode(vae, samples[0])).shape == (12,)

    def test_plain_model_is_not_variational(self, model):
        assert not model.variational
        with pytest.raises(ConfigError):
            variational_objective(model, np.full((2, 12), 0.5), np.zeros((2, 3)))

    def test_encoder_width_must_be_n_or_2n(self, vae):
        wide = init_network([(12, 9, "identity")], 0)
        with pytest.raises(DimensionError):
            AaeModel(wide, vae.decoder, vae.disc_z, vae.disc_x)

    def test_kl_of_standard_posterior_is_zero(self, vae, samples):
        m = replace(vae, encoder=_zero_head(vae.encoder))
        terms = variational_objective(m, samples[:8], np.zeros((8, 3)))
        assert terms.kl == pytest.approx(0.0, abs=1e-15)

    def test_kl_of_shifted_mean(self, vae, samples):
        m = replace(vae, encoder=_biased_head(vae.encoder, np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])))
        terms = variational_objective(m, samples[:8], np.zeros((8, 3)))
        assert terms.kl == pytest.approx(1.5, rel=1e-12)

    def test_objective_weights_error_and_kl(self, vae, samples):
        eps = np.random.default_rng(0).standard_normal((8, 3))
        terms = variational_objective(vae, samples[:8], eps)
        assert terms.objective == pytest.approx(2.0 * terms.error + terms.kl / 12, rel=1e-12)

    @pytest.mark.parametrize(
        "net, index, pos",
        [("decoder", -1, (0,)), ("decoder", -2, (3, 1)), ("encoder", -2, (1, 4)), ("encoder", -2, (4, 2))],
    )
    def test_gradients_match_finite_differences(self, vae, samples, net, index, pos):
        batch = samples[:8]
        eps = np.random.default_rng(1).standard_normal((8, 3))
        terms = variational_objective(vae, batch, eps)
        grads = terms.grads_encoder if net == "encoder" else terms.grads_decoder
        analytic = grads[index][pos]

        def shifted(delta):
            params = [p.copy() for p in getattr(vae, net).parameters()]
            params[index][pos] += delta
            return replace(vae, **{net: getattr(vae, net).with_parameters(params)})

        h = 1e-6
        numeric = (self._objective(shifted(h), batch, eps) - self._objective(shifted(-h), batch, eps)) / (2 * h)
        assert analytic == pytest.approx(numeric, rel=1e-4, abs=1e-9)

    def test_training_skips_latent_discriminator(self, vae, samples):
        trained, history = train(vae, samples, TrainingConfig(epochs=2, batch_size=64, seed=3))
        assert trained.disc_z.fingerprint() == vae.disc_z.fingerprint()
        assert trained.encoder.fingerprint() != vae.encoder.fingerprint()
        assert all(r.adv_dz == 0.0 and r.gen_dz == 0.0 for r in history)
        assert all(np.isfinite(r.kl) and r.kl > 0.0 for r in history)

    def test_loss_table_reports_kl(self, vae, samples):
        _, history = train(vae, samples, TrainingConfig(epochs=1, batch_size=128))
        header, row = format_loss_table(history).strip().splitlines()
        assert header.split()[-1] == "L_kl"
        assert float(row.split()[-1]) == pytest.approx(history[0].kl, abs=1e-6)


class TestTrainingConfig:
    def test_from_run_config_derives_seed(self):
        cfg = TrainingConfig.from_run_config(RunConfig(seed=5, epochs=3), index=2)
        assert cfg.epochs == 3
        assert cfg.seed == derive_seed(5, "train", 2)

    def test_negative_epochs_rejected(self):
        with pytest.raises(ConfigError):
            TrainingConfig(epochs=-1)
