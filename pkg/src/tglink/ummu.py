"""Statistic-uncertainty augmentation with masked mixup for embedding batches.

Given a batch Z of B event embeddings (B x D), the augmentation:

  1. computes each row's mean and standard deviation,
  2. measures the batch-level spread of those statistics,
  3. resamples each row's statistics inside that spread (Gaussian noise
     scaled by the spread) and rebuilds the rows around the new statistics,
  4. replaces a Beta-sampled fraction of individual entries with entries
     from a row-shuffled copy of the batch.

Only the training path is ever transformed; in eval mode (or when disabled,
or when the per-batch activation draw fails) the input passes through
unchanged while the random stream is consumed identically, so downstream
draws stay aligned across variants and on/off runs.

Gradients flow through the batch and through the statistics as functions of
the batch (including the batch-level spread, which keeps backward consistent
with finite differences of the forward map); the random draws themselves are
constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import ConfigError, ContractError, DomainError
from .numcore import Rng, Tensor

VARIANTS = ("full", "no_U", "no_mmU", "no_m")
HOOK_LAYERS = ("after_layer_1", "after_layer_2")

MODE_TRAIN = "train"
MODE_EVAL = "eval"


@dataclass(frozen=True)
class UmmuConfig:
    """Augmentation hyperparameters; defaults follow the evaluation protocol."""

    alpha: float = 1.0
    apply_prob: float = 1.0
    sigma_floor: float = 1e-5
    hook_layer: str = "after_layer_1"
    enabled: bool = True
    variant: str = "full"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"ummu.alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ConfigError(f"ummu.apply_prob must lie in [0,1], got {self.apply_prob}")
        if self.sigma_floor <= 0:
            raise ConfigError(f"ummu.sigma_floor must be positive, got {self.sigma_floor}")
        if self.hook_layer not in HOOK_LAYERS:
            raise ConfigError(f"ummu.hook_layer must be one of {HOOK_LAYERS}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"ummu.variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass
class AugmentDraw:
    """The full randomness of one augmentation, injectable for replay.

    mask holds 0 where an entry is replaced by the shuffled copy; the number
    of zeros is exactly floor(lam * B * D).
    """

    eps_mu: np.ndarray      # (B,)
    eps_sigma: np.ndarray   # (B,)
    lam: float
    mask: np.ndarray        # (B, D) of {0.0, 1.0}
    perm: np.ndarray        # (B,)

    def validate(self):
        b, d = self.mask.shape
        want = math.floor(self.lam * b * d)
        zeros = int((self.mask == 0.0).sum())
        if zeros != want:
            raise ContractError(f"mask has {zeros} zeros, lam={self.lam} requires {want}")
        if sorted(self.perm.tolist()) != list(range(b)):
            raise ContractError("perm is not a bijection over the batch rows")


@dataclass
class StatsPair:
    """Per-row mean and floored standard deviation, (B, 1) tensors."""

    mu: Tensor
    sigma: Tensor


@dataclass
class UncertaintyPair:
    """Batch-level spread of the per-row statistics, 1x1 tensors (>= 0)."""

    big_sigma_mu: Tensor
    big_sigma_sigma: Tensor


def event_stats(z, sigma_floor):
    """Row means and standard deviations of a (B, D) batch.

    The standard deviation uses the population (1/D) variance and is clamped
    from below at sigma_floor so constant rows stay divisible.
    """
    if z.cols < 1:
        raise DomainError("event_stats: batch has zero feature columns")
    mu = nc.mean(z, "cols")
    sigma_raw = nc.sqrt(nc.var_population(z, "cols"))
    sigma = nc.clamp_min(sigma_raw, sigma_floor)
    return StatsPair(mu=mu, sigma=sigma)


def batch_uncertainty(stats):
    """Spread (population std over the batch) of the per-row mean and std.

    Exactly zero for a single-row batch, which makes the augmentation an
    identity there regardless of the noise draws.
    """
    return UncertaintyPair(
        big_sigma_mu=nc.sqrt(nc.var_population(stats.mu, "rows")),
        big_sigma_sigma=nc.sqrt(nc.var_population(stats.sigma, "rows")),
    )


def dsu_augment(z, stats, unc, eps_mu, eps_sigma):
    """Rebuild each row around noise-shifted statistics.

    Written as z + (sigma'/sigma - 1) * (z - mu) + (mu' - mu) so that zero
    noise (or a zero-spread batch) reproduces z exactly, with no rounding.
    """
    eps_mu_t = eps_mu if isinstance(eps_mu, Tensor) else nc.column(eps_mu)
    eps_sigma_t = eps_sigma if isinstance(eps_sigma, Tensor) else nc.column(eps_sigma)
    sigma_shift = nc.mul(eps_sigma_t, unc.big_sigma_sigma)    # (B,1)
    mu_shift = nc.mul(eps_mu_t, unc.big_sigma_mu)             # (B,1)
    scale = nc.sub(nc.div(nc.add(stats.sigma, sigma_shift), stats.sigma), 1.0)
    centered = nc.sub(z, stats.mu)
    return nc.add(nc.add(z, nc.mul(centered, scale)), mu_shift)


def masked_mixup(z_dsu, draw):
    """Entrywise mix of a batch with its row-shuffled copy.

    Entries keep their own value where the mask is 1 and take the shuffled
    copy's value where it is 0.
    """
    draw.validate()
    if draw.perm.shape != (z_dsu.rows,):
        raise ContractError(f"perm length {draw.perm.shape} does not match batch {z_dsu.rows}")
    z_per = nc.permute_rows(z_dsu, draw.perm)
    return nc.select(draw.mask, z_dsu, z_per)


def _linear_overlay(z_dsu, draw):
    # the "w/o m" ablation: blend the whole batch by lam instead of masking;
    # the two-sided form keeps both lam endpoints exact
    z_per = nc.permute_rows(z_dsu, draw.perm)
    return nc.add(nc.mul(z_dsu, 1.0 - draw.lam), nc.mul(z_per, draw.lam))


def draw_augmentation(rng, b, d, config):
    """Sample one AugmentDraw: per-row noise, mask ratio, mask and shuffle.

    Draw order is fixed (eps_mu, eps_sigma, lam, mask cells, perm) so a seed
    replays identically.
    """
    if b < 1 or d < 1:
        raise DomainError(f"draw_augmentation: degenerate batch shape ({b}, {d})")
    eps_mu = rng.standard_normal(b)
    eps_sigma = rng.standard_normal(b)
    lam = nc.beta(rng, config.alpha, config.alpha)
    n_zero = math.floor(lam * b * d)
    mask = np.ones(b * d)
    mask[rng.permutation(b * d)[:n_zero]] = 0.0
    perm = rng.permutation(b)
    return AugmentDraw(eps_mu=eps_mu, eps_sigma=eps_sigma, lam=lam,
                       mask=mask.reshape(b, d), perm=perm)


def ummu_apply(z, rng, config, mode, variant=None, draw=None):
    """Apply the augmentation to a (B, D) batch, honoring mode and variant.

    Bypass branches (eval mode, disabled, failed activation draw) return the
    input tensor itself and still consume the random stream exactly like the
    active branch. Passing `draw` replays a frozen AugmentDraw and consumes
    nothing.
    """
    variant = variant if variant is not None else config.variant
    if variant not in VARIANTS:
        raise ConfigError(f"unknown ummu variant {variant!r}")
    if mode not in (MODE_TRAIN, MODE_EVAL):
        raise ConfigError(f"unknown mode {mode!r}")

    if draw is None:
        gate = rng.uniform()
        draw = draw_augmentation(rng, z.rows, z.cols, config)
        active = mode == MODE_TRAIN and config.enabled and gate < config.apply_prob
    else:
        active = mode == MODE_TRAIN and config.enabled
    if not active:
        return z

    if variant == "no_U":
        return masked_mixup(z, draw)

    stats = event_stats(z, config.sigma_floor)
    unc = batch_uncertainty(stats)
    z_dsu = dsu_augment(z, stats, unc, draw.eps_mu, draw.eps_sigma)
    if variant == "no_mmU":
        return z_dsu
    if variant == "no_m":
        return _linear_overlay(z_dsu, draw)
    return masked_mixup(z_dsu, draw)
