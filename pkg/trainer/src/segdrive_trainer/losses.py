"""Training losses: reconstruction (cross-entropy + masked depth L1) and the
adversarial variants (feature-pair, gumbel one-hot + gradient penalty,
soft-argmax)."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .data import NUM_CLASSES


def loss_eq(logits, depth_pred, x_c, m_d, m_o,
            lambda_x: float = 1.0, lambda_d: float = 10.0):
    """Weighted sum of per-pixel cross-entropy between segmentation logits and
    the one-hot target, and L1 between the obstacle-masked depth prediction
    and obstacle-masked target. Masking both sides means non-obstacle pixels
    (sky, ground) contribute exactly zero depth loss and zero depth gradient.

    Returns (total, components dict); components are detached floats.
    """
    if lambda_x < 0 or lambda_d < 0:
        raise ValueError("loss weights must be >= 0")
    ce = -(x_c * F.log_softmax(logits, dim=1)).sum(dim=1).mean()
    if depth_pred is not None and lambda_d > 0:
        depth_l1 = (m_o * depth_pred - m_o * m_d).abs().mean()
    else:
        depth_l1 = torch.zeros((), dtype=logits.dtype, device=logits.device)
    total = lambda_x * ce + lambda_d * depth_l1
    return total, {"ce": float(ce.detach()), "depth_l1": float(depth_l1.detach())}


def pixel_accuracy(logits: torch.Tensor, seg: torch.Tensor) -> float:
    return float((logits.argmax(dim=1) == seg).float().mean())


def masked_depth_l1(depth_pred, m_d, m_o) -> float:
    if depth_pred is None:
        return float("nan")
    return float((m_o * depth_pred - m_o * m_d).abs().mean())


# -- adversarial variants -----------------------------------------------------


def d_probability_terms(real_logits, fake_logits):
    """Mean log D(real) and log(1 - D(fake)) — the two expectation terms of the
    probabilistic objective, for reporting."""
    return (float(F.logsigmoid(real_logits).mean()),
            float(F.logsigmoid(-fake_logits).mean()))


def loss_gan_feature_pair(disc, featurizer, x_s, x_c, fake_probs):
    """Adversarial terms on featurized (image, segmentation) pairs.

    The generator term back-propagates through the featurizer applied to its
    softmax probabilities — never through a discrete argmax. Returns
    (g_loss, d_loss); d_loss is computed with the generator side detached.
    """
    real = disc(featurizer(x_s, x_c))
    fake_detached = disc(featurizer(x_s, fake_probs.detach()))
    ones = torch.ones_like(real)
    zeros = torch.zeros_like(fake_detached)
    d_loss = 0.5 * (F.binary_cross_entropy_with_logits(real, ones)
                    + F.binary_cross_entropy_with_logits(fake_detached, zeros))
    fake = disc(featurizer(x_s, fake_probs))
    g_loss = F.binary_cross_entropy_with_logits(fake, torch.ones_like(fake))
    return g_loss, d_loss


def gumbel_one_hot(logits: torch.Tensor, tau: float = 1.0) -> torch.Tensor:
    """Straight-through gumbel sample: one-hot per pixel in the forward pass,
    softmax gradients in the backward pass."""
    return F.gumbel_softmax(logits, tau=tau, hard=True, dim=1)


def soft_argmax(logits: torch.Tensor) -> torch.Tensor:
    """Per-pixel expected class index, normalized to [0, 1]: a convex
    combination of the class indices weighted by the softmax."""
    probs = F.softmax(logits, dim=1)
    idx = torch.arange(logits.shape[1], dtype=logits.dtype,
                       device=logits.device).view(1, -1, 1, 1)
    return (probs * idx).sum(dim=1, keepdim=True) / (logits.shape[1] - 1)


def gradient_penalty(disc, real_input: torch.Tensor, fake_input: torch.Tensor) -> torch.Tensor:
    """WGAN-GP: (||grad D(x~)|| - 1)^2 on random interpolates of the pair inputs."""
    eps = torch.rand(real_input.shape[0], 1, 1, 1,
                     dtype=real_input.dtype, device=real_input.device)
    mix = (eps * real_input + (1 - eps) * fake_input).requires_grad_(True)
    out = disc(mix)
    grad = torch.autograd.grad(out.sum(), mix, create_graph=True)[0]
    return ((grad.flatten(1).norm(dim=1) - 1.0) ** 2).mean()


def loss_gan_gumbel_gp(disc, x_s, x_c, fake_logits, gp_weight: float = 10.0):
    """Wasserstein losses on raw (image, one-hot) pairs; the fake segmentation
    is a straight-through gumbel sample, stabilized by a gradient penalty."""
    fake_hot = gumbel_one_hot(fake_logits)
    real_pair = torch.cat([x_s, x_c], dim=1)
    fake_pair = torch.cat([x_s, fake_hot], dim=1)
    d_real = disc(real_pair)
    d_fake_det = disc(fake_pair.detach())
    gp = gradient_penalty(disc, real_pair, fake_pair.detach())
    d_loss = d_fake_det.mean() - d_real.mean() + gp_weight * gp
    g_loss = -disc(fake_pair).mean()
    return g_loss, d_loss


def loss_gan_soft_argmax(disc, x_s, seg, fake_logits):
    """Adversarial terms on (image, normalized expected-class) pairs."""
    real_map = seg.unsqueeze(1).to(fake_logits.dtype) / (NUM_CLASSES - 1)
    fake_map = soft_argmax(fake_logits)
    real = disc(torch.cat([x_s, real_map], dim=1))
    fake_det = disc(torch.cat([x_s, fake_map.detach()], dim=1))
    d_loss = 0.5 * (F.binary_cross_entropy_with_logits(real, torch.ones_like(real))
                    + F.binary_cross_entropy_with_logits(fake_det, torch.zeros_like(fake_det)))
    fake = disc(torch.cat([x_s, fake_map], dim=1))
    g_loss = F.binary_cross_entropy_with_logits(fake, torch.ones_like(fake))
    return g_loss, d_loss


def loss_gan_rgb(disc, x_s, target_rgb, fake_rgb):
    """Adversarial terms on raw (input, canonical-RGB) pairs."""
    real = disc(torch.cat([x_s, target_rgb], dim=1))
    fake_det = disc(torch.cat([x_s, fake_rgb.detach()], dim=1))
    d_loss = 0.5 * (F.binary_cross_entropy_with_logits(real, torch.ones_like(real))
                    + F.binary_cross_entropy_with_logits(fake_det, torch.zeros_like(fake_det)))
    fake = disc(torch.cat([x_s, fake_rgb], dim=1))
    g_loss = F.binary_cross_entropy_with_logits(fake, torch.ones_like(fake))
    return g_loss, d_loss
