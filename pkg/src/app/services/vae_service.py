"""
Деформируемый VAE: энкодер q(Z^a, Z^g | X; phi) = q(Z^a | X) q(Z^g | X), обе компоненты гауссовы.
ELBO = -||X - F(Z~)||^2 / (2 sigma^2) - KL(q(Z^a) || N(0, I)) - KL(q(Z^g) || N(0, I)),
Z~ = mu + exp(logvar / 2) * eps.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.app.core.schemas import TrainConfig
from src.app.domain.entities.model_params import ModelParams
from src.app.domain.enums import LatentKind
from src.app.domain.errors import ConfigurationError, DataError, NumericError
from src.app.domain.services.seeding import VAE_NOISE, rng_for
from src.app.domain.value_objects import LatentPair
from src.app.ml.encoder import Encoder, Posterior
from src.app.ml.generators import DeformableGenerator
from src.app.ml.optim import Optimizer
from src.app.services.inference_service import reconstruction_term


@dataclass(frozen=True)
class VaeStepStats:
    elbo_mean: float
    kl_mean: float
    mse: float


def kl_divergence(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    """KL(N(mu, exp(logvar)) || N(0, I)) по строкам: 1/2 sum(mu^2 + sigma^2 - 1 - log sigma^2)."""
    mu = np.atleast_2d(mu)
    logvar = np.atleast_2d(logvar)
    return 0.5 * np.sum(mu * mu + np.exp(logvar) - 1.0 - logvar, axis=1)


def reparameterize(mu: np.ndarray, logvar: np.ndarray, eps: np.ndarray) -> np.ndarray:
    return mu + np.exp(0.5 * logvar) * eps


def encode(params: ModelParams, images: np.ndarray, encoder: Optional[Encoder] = None) -> LatentPair:
    """Средние апостериорного распределения для новых изображений."""
    if not params.has_encoder:
        raise ConfigurationError("model has no encoder; it was not trained in vae mode")
    encoder = encoder or Encoder(params.architecture)
    posterior, _ = encoder.forward(params, images)
    return LatentPair(appearance=posterior.mu_a, geometric=posterior.mu_g)


def vae_train_step(
    images: np.ndarray,
    params: ModelParams,
    config: TrainConfig,
    optimizer: Optimizer,
    iteration: int,
    generator: Optional[DeformableGenerator] = None,
    encoder: Optional[Encoder] = None,
    eps: Optional[LatentPair] = None,
) -> tuple[ModelParams, VaeStepStats]:
    """Один совместный шаг подъёма по средней ELBO для (theta, phi)."""
    images = np.asarray(images)
    if images.shape[0] == 0:
        raise DataError("empty batch")
    if not params.has_encoder:
        raise ConfigurationError("vae mode needs encoder parameters")
    generator = generator or DeformableGenerator.for_params(params)
    encoder = encoder or Encoder(params.architecture)
    n = images.shape[0]
    arch = params.architecture

    posterior, tape = encoder.forward(params, images)
    if eps is None:
        rng = rng_for(config.seed, VAE_NOISE, iteration)
        eps = LatentPair(
            appearance=rng.standard_normal((n, arch.d_a)).astype(params.dtype),
            geometric=rng.standard_normal((n, arch.d_g)).astype(params.dtype),
        )
    latents = LatentPair(
        appearance=reparameterize(posterior.mu_a, posterior.logvar_a, eps.appearance),
        geometric=reparameterize(posterior.mu_g, posterior.logvar_g, eps.geometric),
    )
    trace = generator.forward(latents, params)

    kl = kl_divergence(posterior.mu_a, posterior.logvar_a) + kl_divergence(posterior.mu_g, posterior.logvar_g)
    elbo_values = reconstruction_term(images, trace.output, params.sigma) - kl
    if not np.all(np.isfinite(elbo_values)):
        raise NumericError(f"non-finite ELBO at iteration {iteration}")

    frozen = set(config.freeze)
    grad_out = (images - trace.output) / (params.sigma ** 2 * n)
    latent_grads, grads = generator.backward(trace, params, grad_out, need_param_grads=True)

    # d(mean ELBO)/d(mu, logvar): путь через Z~ плюс аналитический KL
    def _branch(gz, mu, logvar, e):
        s = np.exp(0.5 * logvar)
        return gz - mu / n, gz * e * 0.5 * s - 0.5 * (np.exp(logvar) - 1.0) / n

    g_mu_a, g_lv_a = _branch(latent_grads[LatentKind.APPEARANCE], posterior.mu_a, posterior.logvar_a, eps.appearance)
    g_mu_g, g_lv_g = _branch(latent_grads[LatentKind.GEOMETRIC], posterior.mu_g, posterior.logvar_g, eps.geometric)
    grads.update(encoder.backward(params, tape, Posterior(g_mu_a, g_lv_a, g_mu_g, g_lv_g)))

    grads = {name: g for name, g in grads.items() if name.split(".", 1)[0] not in frozen}
    updated = optimizer.step(params, grads, config.learning_rate_at(iteration))

    residual = images - trace.output
    stats = VaeStepStats(
        elbo_mean=float(np.mean(elbo_values)),
        kl_mean=float(np.mean(kl)),
        mse=float(np.mean(residual * residual)),
    )
    return updated, stats


def elbo(params: ModelParams, images: np.ndarray, seed: int = 0, iteration: int = 0) -> float:
    """Средняя ELBO без шага оптимизатора; тот же поток шума, что и vae_train_step."""
    images = np.asarray(images)
    generator = DeformableGenerator.for_params(params)
    encoder = Encoder(params.architecture)
    arch = params.architecture
    posterior, _ = encoder.forward(params, images)
    rng = rng_for(seed, VAE_NOISE, iteration)
    n = images.shape[0]
    z_a = reparameterize(posterior.mu_a, posterior.logvar_a, rng.standard_normal((n, arch.d_a)).astype(params.dtype))
    z_g = reparameterize(posterior.mu_g, posterior.logvar_g, rng.standard_normal((n, arch.d_g)).astype(params.dtype))
    output = generator.model_forward(LatentPair(z_a, z_g), params)
    kl = kl_divergence(posterior.mu_a, posterior.logvar_a) + kl_divergence(posterior.mu_g, posterior.logvar_g)
    return float(np.mean(reconstruction_term(images, output, params.sigma) - kl))
