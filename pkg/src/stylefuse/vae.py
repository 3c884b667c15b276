"""Transformer VAE over motion sequences and the style encoder derived from it.

The encoder reads a normalized sequence together with ``n`` learned query
tokens and emits a Gaussian posterior per query token (``n x d``). The
decoder cross-reads those latent tokens from per-frame positional queries.
After training, the encoder alone (plus the normalizer) is kept as the
style encoder.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .motion.features import FEATURE_DIM
from .nn import Tensor

log = logging.getLogger(__name__)

LOGVAR_RANGE = (-10.0, 10.0)


class FrameRangeError(ValueError):
    """Sequence length outside the configured range."""


class TrainingError(RuntimeError):
    """Raised on divergence; ``last_good`` holds the last finite state dict."""

    def __init__(self, msg, last_good=None):
        super().__init__(msg)
        self.last_good = last_good


@dataclass
class VaeConfig:
    latent_tokens: int = 2
    latent_dim: int = 32
    blocks: int = 2
    hidden: int = 64
    heads: int = 4
    min_frames: int = 40
    max_frames: int = 200
    seed: int = 0


@dataclass
class VaeTrainConfig:
    beta: float = 1e-4
    warmup_steps: int = 200
    stage1_steps: int = 1200
    stage2_steps: int = 1200
    batch_size: int = 32
    lr: float = 1e-3
    grad_clip: float = 1.0
    # "both" = content then style; "style_only" / "content_only" are ablation arms
    stages: str = "both"
    seed: int = 0


@dataclass
class Posterior:
    mean: Tensor
    logvar: Tensor

    def sample(self, eps) -> Tensor:
        """Reparameterized draw ``mean + exp(logvar / 2) * eps``."""
        eps = eps if isinstance(eps, Tensor) else Tensor(np.asarray(eps, dtype=self.mean.dtype))
        return self.mean + nn.exp(self.logvar * 0.5) * eps


class MotionNormalizer(nn.Module):
    buffer_names = ("mean", "std")

    def __init__(self, dim: int = FEATURE_DIM):
        self.mean = Tensor(np.zeros(dim, dtype=np.float32))
        self.std = Tensor(np.ones(dim, dtype=np.float32))

    def fit(self, frames: np.ndarray):
        flat = np.asarray(frames, dtype=np.float64).reshape(-1, frames.shape[-1])
        self.mean.data = flat.mean(axis=0).astype(np.float32)
        self.std.data = np.maximum(flat.std(axis=0), 1e-2).astype(np.float32)
        return self

    def normalize(self, frames) -> np.ndarray:
        return (np.asarray(frames) - self.mean.data) / self.std.data

    def denormalize(self, x):
        if isinstance(x, Tensor):
            return x * Tensor(self.std.data) + Tensor(self.mean.data)
        return np.asarray(x) * self.std.data + self.mean.data


class MotionEncoder(nn.Module):
    def __init__(self, cfg: VaeConfig, rng: np.random.Generator):
        h = cfg.hidden
        self.n = cfg.latent_tokens
        self.d = cfg.latent_dim
        self.in_proj = nn.Linear(FEATURE_DIM, h, rng)
        self.queries = Tensor(rng.normal(0.0, 0.02, size=(cfg.latent_tokens, h)).astype(np.float32),
                              requires_grad=True)
        self.blocks = [nn.TransformerBlock(h, cfg.heads, rng) for _ in range(cfg.blocks)]
        self.ln = nn.LayerNorm(h)
        self.head = nn.Linear(h, 2 * cfg.latent_dim, rng)

    def forward(self, x: Tensor) -> Posterior:
        b, f, _ = x.shape
        pos = nn.sinusoidal_embedding(np.arange(f), self.in_proj.weight.shape[1], x.dtype)
        tokens = self.in_proj(x) + Tensor(pos)
        q = nn.broadcast_to(self.queries, (b,) + self.queries.shape)
        h = nn.concat([q, tokens], axis=1)
        for blk in self.blocks:
            h = blk(h)
        out = self.head(self.ln(h[:, : self.n]))
        mean = out[:, :, : self.d]
        logvar = nn.clamp(out[:, :, self.d:], *LOGVAR_RANGE)
        return Posterior(mean, logvar)


class MotionDecoder(nn.Module):
    def __init__(self, cfg: VaeConfig, rng: np.random.Generator):
        h = cfg.hidden
        self.latent_proj = nn.Linear(cfg.latent_dim, h, rng)
        self.frame_proj = nn.Linear(h, h, rng)
        self.blocks = [nn.TransformerBlock(h, cfg.heads, rng) for _ in range(cfg.blocks)]
        self.ln = nn.LayerNorm(h)
        self.out = nn.Linear(h, FEATURE_DIM, rng)

    def forward(self, z: Tensor, num_frames: int) -> Tensor:
        b, n, _ = z.shape
        width = self.frame_proj.weight.shape[0]
        pos = nn.sinusoidal_embedding(np.arange(num_frames), width, z.dtype)
        frames = self.frame_proj(Tensor(np.broadcast_to(pos, (b, num_frames, width)).copy()))
        h = nn.concat([self.latent_proj(z), frames], axis=1)
        for blk in self.blocks:
            h = blk(h)
        return self.out(self.ln(h[:, n:]))


def _as_batch(frames) -> np.ndarray:
    from .motion.synth import MotionSequence

    if isinstance(frames, MotionSequence):
        frames = frames.frames[None]
    elif isinstance(frames, (list, tuple)):
        frames = np.stack([m.frames if isinstance(m, MotionSequence) else m for m in frames])
    frames = np.asarray(frames)
    if frames.ndim == 2:
        frames = frames[None]
    return frames


class MotionVAE(nn.Module):
    def __init__(self, cfg: VaeConfig | None = None):
        self.config = cfg or VaeConfig()
        rng = np.random.default_rng(self.config.seed)
        self.normalizer = MotionNormalizer()
        self.encoder = MotionEncoder(self.config, rng)
        self.decoder = MotionDecoder(self.config, rng)

    def _check_frames(self, frames: np.ndarray):
        f = frames.shape[1]
        if not self.config.min_frames <= f <= self.config.max_frames:
            raise FrameRangeError(
                f"{f} frames outside [{self.config.min_frames}, {self.config.max_frames}]")

    def encode(self, frames) -> Posterior:
        """Posterior over latent tokens for raw (unnormalized) frames."""
        frames = _as_batch(frames)
        self._check_frames(frames)
        x = Tensor(self.normalizer.normalize(frames).astype(self.encoder.in_proj.weight.dtype))
        return self.encoder(x)

    def decode_normalized(self, z: Tensor, num_frames: int) -> Tensor:
        return self.decoder(z, num_frames)

    def decode(self, z, num_frames: int) -> np.ndarray:
        """Raw frames (B, F, D) for latent tokens ``z``."""
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float32))
        with nn.no_grad():
            out = self.decoder(z, num_frames)
        return self.normalizer.denormalize(out.data).astype(np.float32)


def kl_divergence(post: Posterior) -> Tensor:
    """Mean over latent elements of KL(N(mean, exp(logvar)) || N(0, 1))."""
    mu, lv = post.mean, post.logvar
    return nn.mean((mu * mu + nn.exp(lv) - lv - 1.0) * 0.5)


def vae_loss(model: MotionVAE, frames, beta: float, eps=None, rng=None):
    """Reconstruction MSE (normalized space) + beta * KL.

    ``eps`` fixes the reparameterization noise; otherwise it is drawn from
    ``rng`` (a zero draw when neither is given).

    Returns:
        (total, reconstruction, kl) tensors.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    frames = _as_batch(frames)
    post = model.encode(frames)
    if eps is None:
        eps = (rng.standard_normal(post.mean.shape) if rng is not None
               else np.zeros(post.mean.shape))
    z = post.sample(np.asarray(eps, dtype=post.mean.dtype))
    recon = model.decode_normalized(z, frames.shape[1])
    target = model.normalizer.normalize(frames).astype(recon.dtype)
    rec = nn.mse_loss(recon, target)
    kl = kl_divergence(post)
    if beta == 0:
        return rec, rec, kl
    return rec + kl * beta, rec, kl


class StyleEncoder(nn.Module):
    """Encoder half of a trained VAE; emits token-form and pooled style features."""

    def __init__(self, vae: MotionVAE):
        self.config = copy.deepcopy(vae.config)
        self.normalizer = copy.deepcopy(vae.normalizer)
        self.encoder = copy.deepcopy(vae.encoder)

    def tokens(self, frames) -> Tensor:
        frames = _as_batch(frames)
        f = frames.shape[1]
        if not self.config.min_frames <= f <= self.config.max_frames:
            raise FrameRangeError(f"{f} frames outside configured range")
        x = Tensor(self.normalizer.normalize(frames).astype(self.encoder.in_proj.weight.dtype))
        return self.encoder(x).mean

    def forward(self, frames):
        """Returns (tokens (B, n, d), pooled (B, d))."""
        tok = self.tokens(frames)
        return tok, nn.mean(tok, axis=1)

    def pooled(self, frames) -> np.ndarray:
        with nn.no_grad():
            return self.forward(frames)[1].data


@dataclass
class TrainLog:
    stage: list = field(default_factory=list)
    step: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    recon: list = field(default_factory=list)
    kl: list = field(default_factory=list)

    def add(self, stage, step, total, rec, kl):
        self.stage.append(stage)
        self.step.append(step)
        self.loss.append(total)
        self.recon.append(rec)
        self.kl.append(kl)

    def as_dict(self):
        return asdict(self)


def train_vae(model: MotionVAE, data: np.ndarray, steps: int, cfg: VaeTrainConfig,
              rng: np.random.Generator, stage: str, train_log: TrainLog,
              step_offset: int = 0) -> None:
    opt = nn.AdamW(model.parameters(), lr=cfg.lr, grad_clip=cfg.grad_clip)
    last_good = model.state_dict()
    n = len(data)
    for step in range(steps):
        idx = rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        global_step = step_offset + step
        beta = cfg.beta * min(1.0, (global_step + 1) / max(cfg.warmup_steps, 1))
        eps = rng.standard_normal((len(idx), model.config.latent_tokens, model.config.latent_dim))
        total, rec, kl = vae_loss(model, data[idx], beta, eps=eps)
        if not np.isfinite(total.item()):
            raise TrainingError(f"{stage}: loss diverged at step {step}", last_good)
        opt.zero_grad()
        total.backward()
        opt.step()
        if step % 20 == 0 or step == steps - 1:
            last_good = model.state_dict()
            train_log.add(stage, global_step, total.item(), rec.item(), kl.item())
            log.debug("%s step %d loss %.5f rec %.5f kl %.4f", stage, step, total.item(),
                      rec.item(), kl.item())


def run_stage(model: MotionVAE, frames: np.ndarray, stage: str, cfg: VaeTrainConfig,
              train_log: TrainLog | None = None) -> TrainLog:
    """One pre-training stage ("content" or "style") with its own rng stream.

    The style stage continues the beta warm-up where the content stage
    stopped, so running the stages separately equals running them together.
    """
    if stage not in ("content", "style"):
        raise ValueError(f"unknown stage {stage!r}")
    train_log = train_log or TrainLog()
    rng = np.random.default_rng([cfg.seed, 0 if stage == "content" else 1])
    if stage == "content":
        train_vae(model, frames, cfg.stage1_steps, cfg, rng, stage, train_log)
    else:
        offset = cfg.stage1_steps if cfg.stages == "both" else 0
        train_vae(model, frames, cfg.stage2_steps, cfg, rng, stage, train_log, step_offset=offset)
    return train_log


def pretrain_style_encoder(content_frames: np.ndarray, style_frames: np.ndarray,
                           vae_cfg: VaeConfig | None = None,
                           train_cfg: VaeTrainConfig | None = None):
    """Two-stage VAE training, then keep the encoder.

    Stage 1 fits the content corpus, stage 2 fine-tunes on the style corpus.
    The normalizer is fit once on everything the enabled stages will see.

    Returns:
        (StyleEncoder, MotionVAE, TrainLog)
    """
    vae_cfg = vae_cfg or VaeConfig()
    train_cfg = train_cfg or VaeTrainConfig()
    if train_cfg.stages not in ("both", "style_only", "content_only"):
        raise ValueError(f"unknown stages setting {train_cfg.stages!r}")
    model = MotionVAE(vae_cfg)
    seen = {"both": [content_frames, style_frames], "style_only": [style_frames],
            "content_only": [content_frames]}[train_cfg.stages]
    model.normalizer.fit(np.concatenate(seen, axis=0))
    tlog = TrainLog()
    if train_cfg.stages in ("both", "content_only"):
        run_stage(model, content_frames, "content", train_cfg, tlog)
    if train_cfg.stages in ("both", "style_only"):
        run_stage(model, style_frames, "style", train_cfg, tlog)
    return StyleEncoder(model), model, tlog
