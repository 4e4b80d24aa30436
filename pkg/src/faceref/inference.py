"""Restoration sampler: LQ-initialized latent, guided denoising loop, and
wavelet-based color correction of the decoded result.
"""

import math
from dataclasses import dataclass

import cv2
import numpy as np
import torch

from .errors import InvalidArgumentError, NoFaceError
from .identity import center_crop
from .training import encode_reference_tokens, text_tokens

DEFAULT_LAMBDA_CFG = 2.0
DEFAULT_WAVELET_LEVELS = 5


@dataclass
class SamplerConfig:
    steps: int = 50
    t_start: int = None        # None -> schedule.timesteps
    lambda_cfg: float = DEFAULT_LAMBDA_CFG
    seed: int = 0
    cfg_space: str = "latent"  # or "noise": combine noise predictions instead
    color_correct: bool = True
    wavelet_levels: int = DEFAULT_WAVELET_LEVELS

    def validate(self, timesteps):
        if self.steps < 1:
            raise InvalidArgumentError("steps must be >= 1")
        t_start = timesteps if self.t_start is None else self.t_start
        if not 1 <= t_start <= timesteps:
            raise InvalidArgumentError(
                f"t_start={t_start} outside [1, {timesteps}]")
        if self.lambda_cfg < 0:
            raise InvalidArgumentError("lambda_cfg must be >= 0")
        if self.cfg_space not in ("latent", "noise"):
            raise InvalidArgumentError(f"unknown cfg_space: {self.cfg_space}")
        return t_start


def init_latent(lq_latent, schedule, t_start, rng=None, epsilon=None):
    """Mix the LQ latent into noise at t_start per the forward schedule."""
    a = schedule.alpha_bar(t_start)
    if epsilon is None:
        epsilon = torch.from_numpy(
            rng.standard_normal(tuple(lq_latent.shape)).astype(np.float32))
    return math.sqrt(a) * lq_latent + math.sqrt(1.0 - a) * epsilon


def cfg_combine(z_id, z_uncond, lambda_cfg):
    """Guidance: z_uncond + lambda * (z_id - z_uncond).

    The lambda = 0 and lambda = 1 endpoints return the inputs exactly.
    """
    if z_id.shape != z_uncond.shape:
        raise InvalidArgumentError(
            f"shape mismatch: {tuple(z_id.shape)} vs {tuple(z_uncond.shape)}")
    if lambda_cfg == 0.0:
        return z_uncond.clone() if hasattr(z_uncond, "clone") else z_uncond.copy()
    if lambda_cfg == 1.0:
        return z_id.clone() if hasattr(z_id, "clone") else z_id.copy()
    return z_uncond + lambda_cfg * (z_id - z_uncond)


def _ddim_step(z_t, eps_hat, a_t, a_prev):
    z0_hat = (z_t - math.sqrt(1.0 - a_t) * eps_hat) / math.sqrt(a_t)
    return math.sqrt(a_prev) * z0_hat + math.sqrt(1.0 - a_prev) * eps_hat


def restore(lq, refs, model, config):
    """Restore one LQ image conditioned on same-identity references.

    With no usable references the loop runs the unconditional branch only.
    Returns (image, info) where info records skipped references and the
    guidance mode actually used.
    """
    t_start = config.validate(model.schedule.timesteps)
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    model.eval_mode()

    usable, skipped = [], []
    for i, ref in enumerate(refs):
        try:
            usable.append(center_crop(ref).image)
        except (NoFaceError, InvalidArgumentError, cv2.error, ValueError) as exc:
            skipped.append({"ref": i, "error": str(exc)})
    conditional = len(usable) > 0

    h, w = lq.shape[:2]
    lq_latent = model.encode_latent(lq)
    with torch.no_grad():
        c_text = text_tokens(model)
        c_id = encode_reference_tokens(model, usable) if conditional else None
        control = model.control(lq_latent[None])
        z = init_latent(lq_latent, model.schedule, t_start, rng)[None]

        timesteps = np.unique(np.linspace(0, t_start, config.steps + 1)
                              .round().astype(int))[::-1]
        for t, t_prev in zip(timesteps[:-1], timesteps[1:]):
            a_t = model.schedule.alpha_bar(int(t))
            a_prev = model.schedule.alpha_bar(int(t_prev))
            ts = torch.tensor([int(t)])
            eps_u = model.denoiser(z, ts, [c_text], control)
            if not conditional:
                z = _ddim_step(z, eps_u, a_t, a_prev)
                continue
            eps_c = model.denoiser(z, ts, [c_id], control)
            if config.cfg_space == "noise":
                eps_bar = cfg_combine(eps_c, eps_u, config.lambda_cfg)
                z = _ddim_step(z, eps_bar, a_t, a_prev)
            else:
                z_id = _ddim_step(z, eps_c, a_t, a_prev)
                z_un = _ddim_step(z, eps_u, a_t, a_prev)
                z = cfg_combine(z_id, z_un, config.lambda_cfg)

    out = model.decode_latent(z[0], h, w)
    if config.color_correct:
        out = wavelet_color_correct(out, lq, levels=config.wavelet_levels)
    info = {"conditional": conditional, "skipped_refs": skipped,
            "n_refs": len(usable)}
    return out, info


# ---------------------------------------------------------------------------
# Haar wavelet color correction


def _haar_forward(x):
    a = (x[0::2, 0::2] + x[0::2, 1::2] + x[1::2, 0::2] + x[1::2, 1::2]) / 2.0
    h = (x[0::2, 0::2] - x[0::2, 1::2] + x[1::2, 0::2] - x[1::2, 1::2]) / 2.0
    v = (x[0::2, 0::2] + x[0::2, 1::2] - x[1::2, 0::2] - x[1::2, 1::2]) / 2.0
    d = (x[0::2, 0::2] - x[0::2, 1::2] - x[1::2, 0::2] + x[1::2, 1::2]) / 2.0
    return a, (h, v, d)


def _haar_inverse(a, details):
    h, v, d = details
    x = np.empty((a.shape[0] * 2, a.shape[1] * 2), dtype=np.float64)
    x[0::2, 0::2] = (a + h + v + d) / 2.0
    x[0::2, 1::2] = (a - h + v - d) / 2.0
    x[1::2, 0::2] = (a + h - v - d) / 2.0
    x[1::2, 1::2] = (a - h - v + d) / 2.0
    return x


def wavelet_decompose(channel, levels):
    """Multi-level orthonormal Haar decomposition of one channel."""
    coeffs = []
    a = channel.astype(np.float64)
    for _ in range(levels):
        a, details = _haar_forward(a)
        coeffs.append(details)
    return a, coeffs


def wavelet_reconstruct(approx, coeffs):
    a = approx
    for details in reversed(coeffs):
        a = _haar_inverse(a, details)
    return a


def _pad_to_multiple(img, multiple):
    h, w = img.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect")
    return img, h, w


def wavelet_color_correct(output, reference, levels=DEFAULT_WAVELET_LEVELS):
    """Swap the output's coarsest low-frequency band for the reference's.

    Detail bands of the output are untouched, so high-frequency content is
    preserved while global color follows the reference.
    """
    if output.shape != reference.shape:
        raise InvalidArgumentError(
            f"shape mismatch: {output.shape} vs {reference.shape}")
    multiple = 2 ** levels
    out_p, h, w = _pad_to_multiple(output, multiple)
    ref_p, _, _ = _pad_to_multiple(reference, multiple)

    corrected = np.empty_like(out_p, dtype=np.float64)
    for c in range(out_p.shape[2]):
        _, out_coeffs = wavelet_decompose(out_p[:, :, c], levels)
        ref_approx, _ = wavelet_decompose(ref_p[:, :, c], levels)
        corrected[:, :, c] = wavelet_reconstruct(ref_approx, out_coeffs)
    return np.clip(corrected[:h, :w], 0.0, 1.0)
