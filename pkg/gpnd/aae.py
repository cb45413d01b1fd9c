"""
GPND — Adversarial Autoencoder
Encoder g, decoder f, latent discriminator D_z and image discriminator D_x,
their three losses, and the alternating four-update training schedule.
A variational encoder swaps D_z for a reparameterized KL term.
"""

import logging
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from gpnd.config import (
    ADV_WEIGHT,
    BATCH_SIZE,
    DISC_CLAMP,
    DZ_WEIGHT,
    EPOCHS,
    HIDDEN_DIMS,
    LAMBDA_RECON,
    LEARNING_RATE,
    LOGVAR_CLAMP,
    RunConfig,
    derive_seed,
)
from gpnd.errors import ConfigError, DataError, DimensionError, NumericError
from gpnd.nn import (
    DenseLayer,
    DenseNetwork,
    backward,
    forward,
    init_adam,
    init_network,
    adam_step,
    make_rng,
)

log = logging.getLogger(__name__)


# ─── Types ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class AaeModel:
    """The four networks.  m = ambient dimension, n = latent dimension.

    A variational encoder emits 2n values per sample, the posterior mean
    followed by its log-variance; ``encode`` returns the mean.
    """

    encoder: DenseNetwork   # g: m -> n, or m -> 2n when variational
    decoder: DenseNetwork   # f: n -> m
    disc_z: DenseNetwork    # D_z: n -> 1
    disc_x: DenseNetwork    # D_x: m -> 1

    def __post_init__(self):
        m, n = self.decoder.out_dim, self.decoder.in_dim
        if not n < m:
            raise ConfigError(f"latent dim {n} must be below ambient dim {m}")
        if self.encoder.in_dim != m or self.encoder.out_dim not in (n, 2 * n):
            raise DimensionError(
                f"encoder maps {self.encoder.in_dim}->{self.encoder.out_dim}, expected {m}->{n} or {m}->{2 * n}"
            )
        expected = {
            "disc_z": (self.disc_z, n, 1),
            "disc_x": (self.disc_x, m, 1),
        }
        for name, (net, d_in, d_out) in expected.items():
            if (net.in_dim, net.out_dim) != (d_in, d_out):
                raise DimensionError(
                    f"{name} maps {net.in_dim}->{net.out_dim}, expected {d_in}->{d_out}"
                )

    @property
    def m(self) -> int:
        return self.decoder.out_dim

    @property
    def n(self) -> int:
        return self.decoder.in_dim

    @property
    def variational(self) -> bool:
        return self.encoder.out_dim == 2 * self.n

    def fingerprints(self) -> dict[str, str]:
        return {
            "encoder": self.encoder.fingerprint(),
            "decoder": self.decoder.fingerprint(),
            "disc_z": self.disc_z.fingerprint(),
            "disc_x": self.disc_x.fingerprint(),
        }


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = EPOCHS
    batch_size: int = BATCH_SIZE
    learning_rate: float = LEARNING_RATE
    lambda_recon: float = LAMBDA_RECON     # L_error weight in update (4)
    dz_weight: float = DZ_WEIGHT           # L_adv-dz weight in update (3)
    adv_weight: float = ADV_WEIGHT         # weight of the remaining adversarial terms
    use_disc_x: bool = True                # False drops updates (1) and (2)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if min(self.lambda_recon, self.dz_weight, self.adv_weight) < 0:
            raise ConfigError("loss weights must be >= 0")

    @classmethod
    def from_run_config(cls, config: RunConfig, index: int = 0) -> "TrainingConfig":
        return cls(
            epochs=config.epochs,
            batch_size=config.batch_size,
            learning_rate=config.learning_rate,
            lambda_recon=config.lambda_recon,
            dz_weight=config.dz_weight,
            adv_weight=config.adv_weight,
            use_disc_x=config.use_disc_x,
            seed=derive_seed(config.seed, "train", index),
        )


class LossRecord(NamedTuple):
    """Per-epoch means.  adv_* are the discriminator losses, gen_* the generator ones.

    ``kl`` is the per-sample KL divergence of a variational encoder, 0 otherwise.
    """

    epoch: int
    adv_dz: float
    adv_dx: float
    error: float
    gen_dz: float
    gen_dx: float
    kl: float = 0.0


# ─── Construction ─────────────────────────────────────────────────────────────

def build_aae(
    m: int,
    n: int,
    hidden_dims: tuple[int, ...] = HIDDEN_DIMS,
    seed: int = 0,
    variational: bool = False,
) -> AaeModel:
    """Dense AAE: relu encoder/decoder, leaky-relu discriminators, sigmoid heads."""
    if not 1 <= n < m:
        raise ConfigError(f"need 1 <= n < m, got n={n}, m={m}")
    rng = make_rng(seed)
    widths = [m, *hidden_dims]
    encoder_spec = [(a, b, "relu") for a, b in zip(widths[:-1], widths[1:])]
    encoder_spec.append((widths[-1], 2 * n if variational else n, "identity"))
    rev = [n, *reversed(hidden_dims)]
    decoder_spec = [(a, b, "relu") for a, b in zip(rev[:-1], rev[1:])]
    decoder_spec.append((rev[-1], m, "sigmoid"))
    h = hidden_dims[-1]
    disc_z_spec = [(n, h, "leaky_relu"), (h, h, "leaky_relu"), (h, 1, "sigmoid")]
    disc_x_spec = [(a, b, "leaky_relu") for a, b in zip(widths[:-1], widths[1:])]
    disc_x_spec.append((widths[-1], 1, "sigmoid"))
    return AaeModel(
        encoder=init_network(encoder_spec, rng),
        decoder=init_network(decoder_spec, rng),
        disc_z=init_network(disc_z_spec, rng),
        disc_x=init_network(disc_x_spec, rng),
    )


def linear_aae(
    a: np.ndarray,
    offset: np.ndarray | None = None,
    seed: int = 0,
) -> AaeModel:
    """Ground-truth model f(z) = A z + offset, g(x) = A^+ (x - offset).

    Discriminators are random; they play no part in scoring.
    """
    a = np.asarray(a, dtype=np.float64)
    m, n = a.shape
    b = np.zeros(m) if offset is None else np.asarray(offset, dtype=np.float64)
    pinv = np.linalg.pinv(a)
    rng = make_rng(seed)
    return AaeModel(
        encoder=DenseNetwork((DenseLayer(pinv, -pinv @ b, "identity"),)),
        decoder=DenseNetwork((DenseLayer(a.copy(), b.copy(), "identity"),)),
        disc_z=init_network([(n, 8, "leaky_relu"), (8, 1, "sigmoid")], rng),
        disc_x=init_network([(m, 8, "leaky_relu"), (8, 1, "sigmoid")], rng),
    )


# ─── Public API ───────────────────────────────────────────────────────────────

def encode(model: AaeModel, x: np.ndarray) -> np.ndarray:
    """z = g(x) for one sample (m,) or a batch (N, m)."""
    z = forward(model.encoder, x)[0]
    return z[..., :model.n] if model.variational else z


def decode(model: AaeModel, z: np.ndarray) -> np.ndarray:
    """x^ = f(z) for one latent (n,) or a batch (N, n)."""
    return forward(model.decoder, z)[0]


def loss_adv_dz(
    model: AaeModel,
    batch_x: np.ndarray,
    prior_samples: np.ndarray,
) -> tuple[float, float]:
    """(loss for D_z, non-saturating loss for g) on encodings vs prior draws."""
    _check_prior(prior_samples, model.n)
    d_prior = _clamp(forward(model.disc_z, prior_samples)[0])
    d_enc = _clamp(forward(model.disc_z, encode(model, _as_batch(batch_x)))[0])
    return _disc_loss(d_prior, d_enc), _gen_loss(d_enc)


def loss_adv_dx(
    model: AaeModel,
    batch_x: np.ndarray,
    prior_samples: np.ndarray,
) -> tuple[float, float]:
    """(loss for D_x, non-saturating loss for f) on real x vs f(prior)."""
    _check_prior(prior_samples, model.n)
    d_real = _clamp(forward(model.disc_x, _as_batch(batch_x))[0])
    d_fake = _clamp(forward(model.disc_x, decode(model, prior_samples))[0])
    return _disc_loss(d_real, d_fake), _gen_loss(d_fake)


def loss_reconstruction(model: AaeModel, batch_x: np.ndarray) -> float:
    """Mean per-component binary cross-entropy between x and f(g(x))."""
    x = _as_batch(batch_x)
    _check_unit_interval(x)
    return _bce(x, decode(model, encode(model, x)))


class VariationalTerms(NamedTuple):
    objective: float    # lambda * L_error + kl_weight * kl / m
    error: float
    kl: float           # mean per-sample KL(q(z|x) || N(0, I))
    grads_encoder: list[np.ndarray]
    grads_decoder: list[np.ndarray]


def variational_objective(
    model: AaeModel,
    batch_x: np.ndarray,
    eps: np.ndarray,
    lambda_recon: float = LAMBDA_RECON,
    kl_weight: float = ADV_WEIGHT,
) -> VariationalTerms:
    """Reparameterized loss z = mu + exp(logvar / 2) * eps and its gradients.

    The KL term is divided by m so it shares the per-component scale of L_error.
    """
    if not model.variational:
        raise ConfigError("variational objective needs an encoder with a log-variance head")
    x = _as_batch(batch_x)
    n = model.n
    if eps.shape != (x.shape[0], n):
        raise DimensionError(f"eps must have shape ({x.shape[0]}, {n}), got {eps.shape}")
    out, tape_enc = forward(model.encoder, x)
    mu, raw_logvar = out[:, :n], out[:, n:]
    logvar = np.clip(raw_logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    sigma = np.exp(0.5 * logvar)
    recon, tape_dec = forward(model.decoder, mu + sigma * eps)
    error = _bce(x, recon)
    kl = float(0.5 * np.sum(mu**2 + sigma**2 - 1.0 - logvar) / x.shape[0])

    rc = _clamp(recon)
    grad_recon = lambda_recon * (rc - x) / (rc * (1.0 - rc)) / x.size
    grads_dec, grad_z = backward(model.decoder, tape_dec, grad_recon)
    w = kl_weight / x.size
    grad_mu = grad_z + w * mu
    grad_logvar = 0.5 * grad_z * eps * sigma + 0.5 * w * (sigma**2 - 1.0)
    grad_logvar = np.where(np.abs(raw_logvar) < LOGVAR_CLAMP, grad_logvar, 0.0)
    grads_enc, _ = backward(model.encoder, tape_enc, np.concatenate([grad_mu, grad_logvar], axis=1))
    objective = lambda_recon * error + kl_weight * kl / model.m
    return VariationalTerms(objective, error, kl, grads_enc, grads_dec)


def train(
    model: AaeModel,
    dataset_inliers: np.ndarray,
    config: TrainingConfig,
) -> tuple[AaeModel, list[LossRecord]]:
    """Train with the alternating schedule; the input model is not modified."""
    x = _as_batch(dataset_inliers)
    if x.shape[0] == 0:
        raise DataError("training set is empty")
    if x.shape[1] != model.m:
        raise DimensionError(f"samples have dim {x.shape[1]}, model expects {model.m}")
    _check_unit_interval(x)
    if config.epochs == 0:
        return model, []

    trainer = AaeTrainer(model, config)
    history = []
    for epoch in range(1, config.epochs + 1):
        record = trainer.run_epoch(x, epoch)
        history.append(record)
        log.info(
            "Epoch %d/%d: L_adv-dz=%.4f L_adv-dx=%.4f L_error=%.4f",
            epoch, config.epochs, record.adv_dz, record.adv_dx, record.error,
        )
    return trainer.model, history


def format_loss_table(history: list[LossRecord]) -> str:
    """Plain-text loss table, one row per epoch."""
    header = (
        f"{'epoch':>5}  {'L_adv-dz':>10}  {'L_adv-dx':>10}  {'L_error':>10}  "
        f"{'L_gen-dz':>10}  {'L_gen-dx':>10}  {'L_kl':>10}"
    )
    rows = [header]
    for r in history:
        rows.append(
            f"{r.epoch:>5}  {r.adv_dz:>10.6f}  {r.adv_dx:>10.6f}  {r.error:>10.6f}  "
            f"{r.gen_dz:>10.6f}  {r.gen_dx:>10.6f}  {r.kl:>10.6f}"
        )
    return "\n".join(rows) + "\n"


# ─── Trainer ──────────────────────────────────────────────────────────────────

class AaeTrainer:
    """Owns a model and its four Adam states for the duration of training.

    Per batch: (1) D_x ascends L_adv-dx, (2) f descends it, (3) D_z ascends
    L_adv-dz, (4) g and f descend lambda * L_error + L_adv-dz.
    """

    def __init__(self, model: AaeModel, config: TrainingConfig):
        self.model = model
        self.config = config
        self.rng = make_rng(config.seed)
        lr = config.learning_rate
        self._opt_disc_x = init_adam(model.disc_x.parameters(), lr)
        self._opt_decoder = init_adam(model.decoder.parameters(), lr)
        self._opt_disc_z = init_adam(model.disc_z.parameters(), lr)
        self._opt_autoencoder = init_adam(
            model.encoder.parameters() + model.decoder.parameters(), lr
        )

    def sample_prior(self, count: int) -> np.ndarray:
        return self.rng.standard_normal((count, self.model.n))

    def step_disc_x(self, batch: np.ndarray, prior: np.ndarray) -> float:
        """Update (1).  Returns the D_x loss before the step."""
        model, w = self.model, self.config.adv_weight
        fake = decode(model, prior)
        d_real, tape_real = forward(model.disc_x, batch)
        d_fake, tape_fake = forward(model.disc_x, fake)
        loss = _disc_loss(_clamp(d_real), _clamp(d_fake))
        grads_real, _ = backward(model.disc_x, tape_real, w * _grad_neg_log(d_real))
        grads_fake, _ = backward(model.disc_x, tape_fake, w * _grad_neg_log_one_minus(d_fake))
        self._apply(("disc_x",), "_opt_disc_x", _add(grads_real, grads_fake))
        return loss

    def step_decoder_adv(self, prior: np.ndarray) -> float:
        """Update (2).  Returns the generator loss of f before the step."""
        model, w = self.model, self.config.adv_weight
        fake, tape_dec = forward(model.decoder, prior)
        d_fake, tape_disc = forward(model.disc_x, fake)
        loss = _gen_loss(_clamp(d_fake))
        _, grad_fake = backward(model.disc_x, tape_disc, w * _grad_neg_log(d_fake))
        grads_dec, _ = backward(model.decoder, tape_dec, grad_fake)
        self._apply(("decoder",), "_opt_decoder", grads_dec)
        return loss

    def step_disc_z(self, batch: np.ndarray, prior: np.ndarray) -> float:
        """Update (3).  Returns the D_z loss before the step."""
        model, w = self.model, self.config.dz_weight
        z_enc = encode(model, batch)
        d_prior, tape_prior = forward(model.disc_z, prior)
        d_enc, tape_enc = forward(model.disc_z, z_enc)
        loss = _disc_loss(_clamp(d_prior), _clamp(d_enc))
        grads_prior, _ = backward(model.disc_z, tape_prior, w * _grad_neg_log(d_prior))
        grads_enc, _ = backward(model.disc_z, tape_enc, w * _grad_neg_log_one_minus(d_enc))
        self._apply(("disc_z",), "_opt_disc_z", _add(grads_prior, grads_enc))
        return loss

    def step_autoencoder(self, batch: np.ndarray) -> tuple[float, float]:
        """Update (4).  Returns (L_error, generator loss of g) before the step."""
        model, cfg = self.model, self.config
        z, tape_enc = forward(model.encoder, batch)
        recon, tape_dec = forward(model.decoder, z)
        error = _bce(batch, recon)
        d_enc, tape_disc = forward(model.disc_z, z)
        gen = _gen_loss(_clamp(d_enc))

        rc = _clamp(recon)
        grad_recon = cfg.lambda_recon * (rc - batch) / (rc * (1.0 - rc)) / batch.size
        _, grad_z_adv = backward(model.disc_z, tape_disc, cfg.adv_weight * _grad_neg_log(d_enc))
        grads_dec, grad_z_rec = backward(model.decoder, tape_dec, grad_recon)
        grads_enc, _ = backward(model.encoder, tape_enc, grad_z_rec + grad_z_adv)
        self._apply(("encoder", "decoder"), "_opt_autoencoder", grads_enc + grads_dec)
        return error, gen

    def step_variational(self, batch: np.ndarray) -> tuple[float, float]:
        """Update (4) of a variational encoder.  Returns (L_error, kl) before the step."""
        cfg = self.config
        terms = variational_objective(
            self.model, batch, self.sample_prior(batch.shape[0]), cfg.lambda_recon, cfg.adv_weight
        )
        self._apply(("encoder", "decoder"), "_opt_autoencoder", terms.grads_encoder + terms.grads_decoder)
        return terms.error, terms.kl

    def train_batch(self, batch: np.ndarray) -> tuple[float, ...]:
        """All updates in order.  Returns (adv_dz, adv_dx, error, gen_dz, gen_dx, kl).

        A variational model skips update (3); its KL term replaces L_adv-dz.
        """
        count = batch.shape[0]
        adv_dx = gen_dx = adv_dz = gen_dz = kl = 0.0
        if self.config.use_disc_x:
            prior_x = self.sample_prior(count)
            adv_dx = self.step_disc_x(batch, prior_x)
            gen_dx = self.step_decoder_adv(prior_x)
        if self.model.variational:
            error, kl = self.step_variational(batch)
        else:
            adv_dz = self.step_disc_z(batch, self.sample_prior(count))
            error, gen_dz = self.step_autoencoder(batch)
        return adv_dz, adv_dx, error, gen_dz, gen_dx, kl

    def run_epoch(self, data: np.ndarray, epoch: int) -> LossRecord:
        order = self.rng.permutation(data.shape[0])
        totals = np.zeros(len(LossRecord._fields) - 1)
        batches = 0
        for start in range(0, len(order), self.config.batch_size):
            batch = data[order[start:start + self.config.batch_size]]
            losses = self.train_batch(batch)
            if not all(np.isfinite(losses)):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {batches}: "
                    f"adv_dz={losses[0]}, adv_dx={losses[1]}, error={losses[2]}"
                )
            totals += losses
            batches += 1
        means = totals / batches
        return LossRecord(epoch, *(float(v) for v in means))

    # ── Internal helpers ───────────────────────────────────────────────────

    def _apply(self, names: tuple[str, ...], opt_attr: str, grads: list[np.ndarray]) -> None:
        nets = [getattr(self.model, name) for name in names]
        params = [p for net in nets for p in net.parameters()]
        new_params, state = adam_step(getattr(self, opt_attr), params, grads)
        setattr(self, opt_attr, state)
        updates, offset = {}, 0
        for name, net in zip(names, nets):
            count = len(net.layers) * 2
            updates[name] = net.with_parameters(new_params[offset:offset + count])
            offset += count
        self.model = replace(self.model, **updates)


# ─── Internal helpers ─────────────────────────────────────────────────────────

def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(1, -1) if x.ndim == 1 else x


def _check_prior(prior: np.ndarray, n: int) -> None:
    if prior.ndim != 2 or prior.shape[1] != n:
        raise DimensionError(f"prior samples must have shape (k, {n}), got {prior.shape}")


def _check_unit_interval(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0:
        raise DataError("samples must lie in [0, 1]")


def _clamp(d: np.ndarray) -> np.ndarray:
    return np.clip(d, DISC_CLAMP, 1.0 - DISC_CLAMP)


def _disc_loss(d_pos: np.ndarray, d_neg: np.ndarray) -> float:
    return float(-np.mean(np.log(d_pos)) - np.mean(np.log(1.0 - d_neg)))


def _gen_loss(d_fake: np.ndarray) -> float:
    return float(-np.mean(np.log(d_fake)))


def _bce(target: np.ndarray, output: np.ndarray) -> float:
    out = _clamp(output)
    return float(-np.mean(target * np.log(out) + (1.0 - target) * np.log(1.0 - out)))


def _grad_neg_log(d: np.ndarray) -> np.ndarray:
    """d/dD of -mean(log D) with the clamp applied to the denominator."""
    return -1.0 / (d.shape[0] * _clamp(d))


def _grad_neg_log_one_minus(d: np.ndarray) -> np.ndarray:
    """d/dD of -mean(log(1 - D))."""
    return 1.0 / (d.shape[0] * (1.0 - _clamp(d)))


def _add(a: list[np.ndarray], b: list[np.ndarray]) -> list[np.ndarray]:
    return [x + y for x, y in zip(a, b)]
