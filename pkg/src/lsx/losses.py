"""Training objectives: overcomplete reconstruction, adversarial pair with
gradient penalty, feature preservation, and cycle consistency.

Weight conventions (all non-negative):
    reconstruction   L = L_z + lambda1 * sum_i L_zi          lambda1 = 0.1
    one direction    L = L_wgan + alpha * L_fp               alpha   = 20
    penalty weight   lambda2 = 10
    both directions  L = L_xy + L_yx + beta * L_cycle        beta    = 20

The critic maximizes score(real) - score(fake) - lambda2 * penalty; code
below minimizes the negation.  Feature preservation pushes a translator
toward the identity on its *target* domain, which is what keeps common
attributes (position, scale) untouched while the adversary moves the
domain-specific ones.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from . import networks as nets
from .transport import emd_approx, emd_loss


def l1_pair(a: ad.Var, b) -> ad.Var:
    """Per-sample L1 summed over code dims, averaged over the batch."""
    b = b if isinstance(b, ad.Var) else ad.const(np.asarray(b, dtype=a.dtype))
    return ad.amean(ad.asum(ad.absval(ad.sub(a, b)), axis=-1))


def ae_loss(
    enc: nets.Model,
    dec: nets.Model,
    clouds: np.ndarray,
    plans: list,
    dims: nets.NetDims,
    lam1: float = 0.1,
    matcher: Callable = emd_approx,
) -> tuple[ad.Var, dict[str, float]]:
    """Reconstruction from the full code plus each zero-padded sub-code.

    Every term is a mean matched point distance (EMD / n); the sub-code
    terms share weight lam1.  Matchings are recomputed from current
    predictions on every call.
    """
    if lam1 < 0:
        raise ValueError("lam1 must be non-negative")
    z, subs = nets.encode_batch(enc, clouds, plans, dims)
    variants = [z] + [ad.pad_last(s_i, i * dims.sub_dim, dims.code_dim) for i, s_i in enumerate(subs)]
    parts: dict[str, float] = {}
    total = None
    for i, code in enumerate(variants):
        pred, _ = nets.decode_batch(dec, code, dims)
        term = emd_loss(pred, clouds, matcher)
        key = "rec_z" if i == 0 else f"rec_z{i}"
        parts[key] = term.item()
        weighted = term if i == 0 else ad.mul(term, ad.const(np.asarray(lam1, dtype=term.dtype)))
        total = weighted if total is None else ad.add(total, weighted)
    return total, parts


def gradient_penalty(
    score_fn: Callable[[ad.Var], ad.Var],
    real: np.ndarray,
    fake: np.ndarray,
    rng: np.random.Generator,
) -> ad.Var:
    """Mean squared deviation of the input-gradient norm from 1, evaluated
    at per-sample uniform mixtures of real and fake codes.

    `score_fn` must map a (B, F) Var to per-sample scores (B,); summing the
    scores makes one backward sweep yield every per-sample input gradient.
    The result is a graph node, so critic parameters can be trained
    through it.
    """
    real = np.asarray(real)
    fake = np.asarray(fake)
    if real.shape != fake.shape:
        raise ValueError(f"gradient_penalty: shape mismatch {real.shape} vs {fake.shape}")
    u = rng.random((real.shape[0], 1))
    mixed = ad.param((u * real + (1.0 - u) * fake).astype(real.dtype))
    scores = score_fn(mixed)
    grad = ad.input_gradient(ad.asum(scores), mixed)
    tiny = 1e-30 if grad.dtype == np.float64 else 1e-20
    norm = ad.sqrt(ad.add(ad.asum(ad.mul(grad, grad), axis=1), ad.const(np.asarray(tiny, dtype=grad.dtype))))
    dev = ad.sub(norm, ad.const(np.asarray(1.0, dtype=norm.dtype)))
    return ad.amean(ad.mul(dev, dev))


def critic_wgan_loss(
    critic: nets.Model,
    real: np.ndarray,
    fake: np.ndarray,
    lam2: float,
    rng: np.random.Generator,
    name: str = "cr",
) -> tuple[ad.Var, dict[str, float]]:
    """Critic-side objective on detached fakes; batch-norm runs in training
    form for the score terms but inference form inside the penalty."""
    dtype = next(iter(critic.params.values())).dtype
    s_real = nets.discriminate(critic, ad.const(real.astype(dtype)), training=True, name=name)
    s_fake = nets.discriminate(critic, ad.const(fake.astype(dtype)), training=True, name=name)
    w_est = ad.sub(ad.amean(s_real), ad.amean(s_fake))
    gp = gradient_penalty(
        lambda x: nets.discriminate(critic, x, training=False, name=name),
        real.astype(dtype),
        fake.astype(dtype),
        rng,
    )
    loss = ad.add(ad.neg(w_est), ad.mul(gp, ad.const(np.asarray(lam2, dtype=dtype))))
    return loss, {"w_estimate": w_est.item(), "penalty": gp.item()}


def generator_adv_loss(critic: nets.Model, fake: ad.Var, name: str = "cr") -> ad.Var:
    """Adversarial term seen by a translator: -mean critic score of its
    output, critic in inference form."""
    return ad.neg(ad.amean(nets.discriminate(critic, fake, training=False, name=name)))


def wgan_losses(
    critic: nets.Model,
    real: np.ndarray,
    fake: ad.Var,
    lam2: float,
    rng: np.random.Generator,
    name: str = "cr",
) -> tuple[ad.Var, ad.Var, dict[str, float]]:
    """Both sides of the adversarial pair for one domain: the critic loss
    (fakes detached) and the generator term (graph kept through `fake`)."""
    critic_loss, diag = critic_wgan_loss(critic, real, fake.data.copy(), lam2, rng, name=name)
    return critic_loss, generator_adv_loss(critic, fake, name=name), diag


def fp_loss(translated_target: ad.Var, target_codes) -> ad.Var:
    """Feature preservation: a translator applied to codes already in its
    target domain should act as the identity (L1)."""
    return l1_pair(translated_target, target_codes)


def cycle_loss(back_x: ad.Var, codes_x, back_y: ad.Var, codes_y) -> ad.Var:
    """Round-trip consistency in both directions (L1, summed)."""
    return ad.add(l1_pair(back_x, codes_x), l1_pair(back_y, codes_y))
