"""Two-stage training: stage I trains the ID encoder (jointly with the rest),
stage II freezes it and trains only the control branch with 50% prompt
dropout. A one-stage mode trains everything jointly throughout (ablation).
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .backbone import add_noise, predict_noise, save_checkpoint
from .errors import InvalidArgumentError, NonFiniteLossError
from .identity import center_crop

STAGES = ("one_stage", "stage1", "stage2")

# Which named parameter groups receive gradient updates per stage. The toy
# denoiser starts untrained so joint stages include it; stage2 is strictly
# control-only.
STAGE_TRAINABLE = {
    "one_stage": ("id_encoder", "control", "denoiser"),
    "stage1": ("id_encoder", "control", "denoiser"),
    "stage2": ("control",),
}


@dataclass
class TrainingConfig:
    stage: str = "stage1"
    dropout_prob: float = 0.5    # active only in stage2
    learning_rate: float = 5e-5
    iterations: int = 1000
    batch_size: int = 4
    seed: int = 0
    max_refs: int = 4

    def validate(self):
        if self.stage not in STAGES:
            raise InvalidArgumentError(f"unknown stage: {self.stage!r}")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise InvalidArgumentError(
                f"dropout_prob must be in [0,1]: {self.dropout_prob}")
        if self.iterations < 0 or self.batch_size < 1:
            raise InvalidArgumentError("bad iterations/batch_size")


def trainable_groups(stage):
    if stage not in STAGE_TRAINABLE:
        raise InvalidArgumentError(f"unknown stage: {stage!r}")
    return set(STAGE_TRAINABLE[stage])


def prompt_dropout(c_id, c_text, p, rng):
    """Return c_text with probability p, else c_id."""
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"p must be in [0,1]: {p}")
    return c_text if rng.random() < p else c_id


def encode_reference_tokens(model, refs):
    """Build c_id token matrix (torch, grad flows to the fusion head)."""
    if not refs:
        raise InvalidArgumentError("need at least one reference image")
    feats, recog = [], []
    for ref in refs:
        crop = center_crop(ref)
        feats.append(np.asarray(model.embedder(crop.image), dtype=np.float32))
        recog.append(np.asarray(model.recognizer(crop.image), dtype=np.float32))
    f = torch.from_numpy(np.stack(feats))
    g = torch.from_numpy(np.stack(recog))
    s = model.id_encoder(g, f)                       # (N, d)
    text = torch.from_numpy(model.text_prompt.tokens)
    idx = model.text_prompt.token_index
    return torch.cat([text[:idx], s, text[idx + 1:]])


def text_tokens(model):
    return torch.from_numpy(model.text_prompt.tokens)


def training_step(batch, model, config, rng, optimizer=None):
    """One optimization step of the noise-prediction objective.

    Loss is the batch mean of the per-sample L2 norm of (eps - eps_hat),
    with t uniform in [1, T] and eps a fresh unit Gaussian.
    """
    config.validate()
    schedule = model.schedule
    z0s, tokens, ts, epss = [], [], [], []
    lq_latents = []
    for item in batch:
        z0 = model.encode_latent(item["hq"])
        lq_latents.append(model.encode_latent(item["lq"]))
        t = int(rng.integers(1, schedule.timesteps + 1))
        eps = torch.from_numpy(
            rng.standard_normal(tuple(z0.shape)).astype(np.float32))
        z0s.append(z0)
        ts.append(t)
        epss.append(eps)
        cond = encode_reference_tokens(model, item["refs"])
        if config.stage == "stage2":
            cond = prompt_dropout(cond, text_tokens(model),
                                  config.dropout_prob, rng)
        tokens.append(cond)

    z_t = torch.stack([add_noise(z0, eps, t, schedule)
                       for z0, eps, t in zip(z0s, epss, ts)])
    control = model.control(torch.stack(lq_latents))
    eps_hat = model.denoiser(z_t, torch.tensor(ts), tokens, control)
    target = torch.stack(epss)
    residual = (target - eps_hat).reshape(len(batch), -1)
    loss = residual.norm(dim=1).mean()

    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss at stage {config.stage}")

    if optimizer is not None:
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    return float(loss.detach())


def checkpoint_stage1(model, path):
    """Save the stage-I handoff archive: the id_encoder group only."""
    return save_checkpoint(model, path, groups=["id_encoder"])


def _group_digest(module):
    h = hashlib.sha256()
    for name, param in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(param.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def smoothed(losses, window=50):
    if not losses:
        return []
    kernel = np.ones(min(window, len(losses))) / min(window, len(losses))
    return np.convolve(losses, kernel, mode="valid").tolist()


@dataclass
class TrainingReport:
    stage: str
    iterations: int
    losses: list = field(default_factory=list)
    trainable: list = field(default_factory=list)
    frozen_unchanged: bool = True
    checkpoint: str = ""
    skipped: list = field(default_factory=list)

    def to_json(self):
        return {
            "stage": self.stage,
            "iterations": self.iterations,
            "losses": self.losses,
            "smoothed_losses": smoothed(self.losses),
            "trainable_groups": self.trainable,
            "frozen_unchanged": self.frozen_unchanged,
            "checkpoint": self.checkpoint,
            "skipped": self.skipped,
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)


def run_training(config, data, model, out_dir=None):
    """Iterate training_step over a dataset of {hq, lq, refs} items.

    Returns a TrainingReport with the loss curve and a trainable-set audit
    (digests of frozen groups checked before vs after).
    """
    config.validate()
    if not data:
        raise InvalidArgumentError("empty training dataset")
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)

    groups = model.parameter_groups()
    active = trainable_groups(config.stage)
    params = []
    for name, module in groups.items():
        enabled = name in active
        for p in module.parameters():
            p.requires_grad_(enabled)
        if enabled:
            params.extend(module.parameters())
    frozen_before = {name: _group_digest(m) for name, m in groups.items()
                     if name not in active}

    optimizer = torch.optim.AdamW(params, lr=config.learning_rate)
    model.train_mode()
    report = TrainingReport(stage=config.stage, iterations=config.iterations,
                            trainable=sorted(active))

    for _ in range(config.iterations):
        batch = []
        while len(batch) < config.batch_size:
            item = data[int(rng.integers(len(data)))]
            try:
                refs = list(item["refs"])
                n = int(rng.integers(1, min(config.max_refs, len(refs)) + 1))
                picked = [refs[i] for i in
                          rng.choice(len(refs), size=n, replace=False)]
                batch.append({"hq": item["hq"], "lq": item["lq"],
                              "refs": picked})
            except (KeyError, InvalidArgumentError, IndexError, ValueError) as exc:
                report.skipped.append(str(exc))
                if len(report.skipped) > 10 * len(data):
                    raise InvalidArgumentError(
                        "too many unusable dataset items") from exc
        loss = training_step(batch, model, config, rng, optimizer)
        report.losses.append(loss)

    frozen_after = {name: _group_digest(groups[name]) for name in frozen_before}
    report.frozen_unchanged = frozen_before == frozen_after

    if out_dir is not None and config.iterations > 0:
        os.makedirs(out_dir, exist_ok=True)
        if config.stage in ("stage1", "one_stage"):
            path = os.path.join(out_dir, f"{config.stage}_id_encoder")
            checkpoint_stage1(model, path)
        path = os.path.join(out_dir, f"{config.stage}_full")
        save_checkpoint(model, path)
        report.checkpoint = path
    model.eval_mode()
    return report
