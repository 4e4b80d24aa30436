"""Denoiser backbone interfaces, noise schedule, and the toy denoiser.

The production pipeline would plug a large latent-diffusion backbone here;
the toy model keeps every interface (variable-length prompt conditioning,
additive control injection, named parameter groups) at desk scale with a
pixel-space latent (image downscaled by a fixed factor).
"""

import json
import math

import numpy as np
import torch
from torch import nn

from .errors import InvalidArgumentError, MissingGroupError
from .identity import (DEFAULT_EMBED_DIM, FusionHead, PixelFaceRecognizer,
                       PixelImageEmbedder, toy_prompt_embedding)
from .imio import resize

DEFAULT_TIMESTEPS = 1000
# floor keeps sqrt(alpha_bar) usable when inverting the forward process
ALPHA_BAR_FLOOR = 1e-4


class NoiseSchedule:
    """Cosine cumulative-signal schedule over T timesteps."""

    def __init__(self, timesteps=DEFAULT_TIMESTEPS, s=0.008):
        self.timesteps = timesteps
        t = np.arange(timesteps + 1, dtype=np.float64)
        f = np.cos((t / timesteps + s) / (1 + s) * math.pi / 2) ** 2
        self._alpha_bar = np.clip(f / f[0], ALPHA_BAR_FLOOR, 1.0)

    def alpha_bar(self, t):
        if not 0 <= t <= self.timesteps:
            raise InvalidArgumentError(
                f"t={t} outside [0, {self.timesteps}]")
        return float(self._alpha_bar[int(t)])


def add_noise(z0, epsilon, t, schedule):
    """Forward process: z_t = sqrt(a_bar) z0 + sqrt(1 - a_bar) eps."""
    if z0.shape != epsilon.shape:
        raise InvalidArgumentError(
            f"shape mismatch: {tuple(z0.shape)} vs {tuple(epsilon.shape)}")
    a = schedule.alpha_bar(t)
    return math.sqrt(a) * z0 + math.sqrt(1.0 - a) * epsilon


def _timestep_embedding(t, dim):
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) *
                      torch.arange(half, dtype=torch.float64) / half)
    args = t.double().reshape(-1, 1) * freqs.reshape(1, -1)
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    return emb.to(t.device)


class CrossAttention(nn.Module):
    """Single-head attention from spatial positions to prompt tokens."""

    def __init__(self, channels, token_dim):
        super().__init__()
        self.q = nn.Linear(channels, token_dim)
        self.k = nn.Linear(token_dim, token_dim)
        self.v = nn.Linear(token_dim, token_dim)
        self.out = nn.Linear(token_dim, channels)
        self.scale = token_dim ** -0.5

    def forward(self, feat, tokens):
        # feat: (C, H, W); tokens: (L, d)
        c, h, w = feat.shape
        q = self.q(feat.reshape(c, h * w).T)          # (HW, d)
        k, v = self.k(tokens), self.v(tokens)         # (L, d)
        attn = torch.softmax(q @ k.T * self.scale, dim=-1)
        out = self.out(attn @ v)                      # (HW, C)
        return feat + out.T.reshape(c, h, w)


class ToyControlBranch(nn.Module):
    """Maps the LQ latent to an additive control feature map."""

    def __init__(self, channels=32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, channels, 3, padding=1), nn.SiLU(),
            nn.Conv2d(channels, channels, 3, padding=1), nn.SiLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, lq_latent):
        return self.net(lq_latent)


class FilmBlock(nn.Module):
    """Conv block with timestep-conditioned scale/shift modulation."""

    def __init__(self, channels, time_dim):
        super().__init__()
        self.norm = nn.GroupNorm(4, channels)
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.film = nn.Linear(time_dim, 2 * channels)

    def forward(self, feat, temb):
        scale, shift = self.film(temb).chunk(2, dim=-1)
        h = self.norm(feat) * (1 + scale[:, :, None, None]) + shift[:, :, None, None]
        return feat + self.conv(torch.nn.functional.silu(h))


class ToyDenoiser(nn.Module):
    """Small convolutional noise predictor with cross-attention conditioning.

    Prompt tokens may have any length L (variable reference counts); the
    control signal, when present, is added to the mid-level features.
    """

    def __init__(self, channels=32, token_dim=DEFAULT_EMBED_DIM):
        super().__init__()
        self.channels = channels
        self.token_dim = token_dim
        self.in_conv = nn.Conv2d(3, channels, 3, padding=1)
        self.time_mlp = nn.Sequential(
            nn.Linear(channels, channels), nn.SiLU(), nn.Linear(channels, channels))
        self.block1 = FilmBlock(channels, channels)
        self.block2 = FilmBlock(channels, channels)
        self.attn = CrossAttention(channels, token_dim)
        self.block3 = FilmBlock(channels, channels)
        self.block4 = FilmBlock(channels, channels)
        self.out_conv = nn.Conv2d(channels, 3, 3, padding=1)

    def forward(self, z_t, t, tokens, control=None):
        # z_t: (B, 3, H, W); t: (B,); tokens: list of (L_i, d); control: (B, C, H, W)
        if z_t.ndim != 4 or z_t.shape[1] != 3:
            raise InvalidArgumentError(f"bad latent shape: {tuple(z_t.shape)}")
        temb = self.time_mlp(
            _timestep_embedding(t, self.channels).to(z_t.dtype))
        feat = self.in_conv(z_t)
        feat = self.block1(feat, temb)
        if control is not None:
            if control.shape[0] != z_t.shape[0] or control.shape[2:] != z_t.shape[2:]:
                raise InvalidArgumentError("control shape incompatible with latent")
            feat = feat + control
        feat = self.block2(feat, temb)
        attended = [self.attn(feat[i], tokens[i]) for i in range(z_t.shape[0])]
        feat = torch.stack(attended)
        feat = self.block3(feat, temb)
        feat = self.block4(feat, temb)
        return self.out_conv(feat)


def predict_noise(denoiser, z_t, t, condition, control=None):
    """Run the denoiser on a batched latent with per-item prompt embeddings.

    `condition` is a list of PromptEmbedding (one per batch item).
    """
    tokens = []
    for c in condition:
        c.validate()
        tokens.append(torch.as_tensor(c.tokens, dtype=z_t.dtype,
                                      device=z_t.device))
    out = denoiser(z_t, t, tokens, control)
    if out.shape != z_t.shape:
        raise InvalidArgumentError("denoiser changed the latent shape")
    if not torch.all(torch.isfinite(out)):
        raise InvalidArgumentError("denoiser produced non-finite values")
    return out


class ToyRestorationModel:
    """Bundles the toy denoiser, control branch, and identity encoder head.

    Parameter groups follow the checkpoint layout:
    {"id_encoder", "control", "denoiser"}.
    """

    def __init__(self, token_dim=DEFAULT_EMBED_DIM, channels=32,
                 latent_scale=4, timesteps=DEFAULT_TIMESTEPS,
                 embedder=None, recognizer=None, seed=0):
        torch.manual_seed(seed)
        self.denoiser = ToyDenoiser(channels=channels, token_dim=token_dim)
        self.control = ToyControlBranch(channels=channels)
        self.id_encoder = FusionHead(dim=token_dim)
        self.schedule = NoiseSchedule(timesteps=timesteps)
        self.latent_scale = latent_scale
        self.embedder = embedder or PixelImageEmbedder(dim=token_dim)
        self.recognizer = recognizer or PixelFaceRecognizer()
        self.text_prompt = toy_prompt_embedding(dim=token_dim)

    def parameter_groups(self):
        return {
            "id_encoder": self.id_encoder,
            "control": self.control,
            "denoiser": self.denoiser,
        }

    def encode_latent(self, image):
        # latent = downscaled image mapped to [-1, 1]
        h, w = image.shape[:2]
        latent = resize(image, w // self.latent_scale, h // self.latent_scale)
        tensor = torch.from_numpy(
            np.ascontiguousarray(latent.transpose(2, 0, 1))).float()
        return tensor * 2.0 - 1.0

    def decode_latent(self, z, height, width):
        img = z.detach().cpu().numpy().transpose(1, 2, 0).astype(np.float64)
        img = np.clip((img + 1.0) / 2.0, 0.0, 1.0)
        return resize(img, width, height)

    def train_mode(self):
        for module in self.parameter_groups().values():
            module.train()

    def eval_mode(self):
        for module in self.parameter_groups().values():
            module.eval()


def _checkpoint_paths(path):
    base = str(path)
    if base.endswith(".npz"):
        base = base[:-4]
    return base + ".npz", base + ".json"


def save_checkpoint(model, path, groups=None):
    """Write named parameter groups to an .npz plus a JSON manifest."""
    archive_path, manifest_path = _checkpoint_paths(path)
    all_groups = model.parameter_groups()
    groups = list(all_groups) if groups is None else list(groups)
    arrays, manifest = {}, {"groups": {}}
    for group in groups:
        if group not in all_groups:
            raise MissingGroupError(f"model has no parameter group {group!r}")
        names = []
        for name, param in all_groups[group].state_dict().items():
            arrays[f"{group}/{name}"] = param.detach().cpu().numpy()
            names.append(name)
        manifest["groups"][group] = names
    with open(archive_path, "wb") as f:
        np.savez(f, **arrays)
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest


def load_checkpoint(model, path, groups=None):
    """Load parameter groups from an archive written by save_checkpoint."""
    archive_path, manifest_path = _checkpoint_paths(path)
    with open(manifest_path) as f:
        manifest = json.load(f)
    archive = np.load(archive_path)
    all_groups = model.parameter_groups()
    groups = list(manifest["groups"]) if groups is None else list(groups)
    for group in groups:
        if group not in manifest["groups"]:
            raise MissingGroupError(f"archive lacks parameter group {group!r}")
        state = {name: torch.from_numpy(archive[f"{group}/{name}"])
                 for name in manifest["groups"][group]}
        all_groups[group].load_state_dict(state)
    return manifest
