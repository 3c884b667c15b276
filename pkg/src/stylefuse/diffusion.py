"""Latent diffusion over VAE tokens with a content-text condition.

The denoiser is a small transformer over ``[time, content, z_1..z_n]``
tokens. Style features enter once, after block ``m``, through the
parameter-free cross fusion on the latent-token rows. Training has two
modes: ``content_only`` fits the whole denoiser, ``stylized`` freezes it and
trains only the style encoder through the fusion hook.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .fusion import FusionConfig, fuse, match_width, tile_pooled
from .motion.synth import CONTENT_TEXT, CONTENTS
from .nn import Tensor
from .vae import StyleEncoder, TrainingError

log = logging.getLogger(__name__)

MODES = ("content_only", "stylized")


class ScheduleError(ValueError):
    """Timestep outside the schedule or malformed schedule."""


@dataclass
class DiffusionSchedule:
    betas: np.ndarray

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.ndim != 1 or self.betas.size == 0:
            raise ScheduleError("betas must be a non-empty 1-d array")
        if not np.all((self.betas > 0) & (self.betas < 1)):
            raise ScheduleError("betas must lie strictly inside (0, 1)")
        self.alphas = 1.0 - self.betas
        self.alpha_bar = np.cumprod(self.alphas)

    @property
    def T(self) -> int:
        return int(self.betas.size)

    @classmethod
    def linear(cls, T: int = 100, beta_start: float = 1e-3, beta_end: float = 0.2):
        return cls(np.linspace(beta_start, beta_end, T))

    def ddim_timesteps(self, steps: int) -> np.ndarray:
        """Descending, de-duplicated timesteps from T-1 down to 0."""
        if steps < 1:
            raise ScheduleError("steps must be >= 1")
        ts = np.round(np.linspace(self.T - 1, 0, min(steps, self.T))).astype(np.int64)
        return np.unique(ts)[::-1]


def forward_diffuse(z0, t, noise, schedule: DiffusionSchedule) -> np.ndarray:
    """q(z_t | z0) draw; ``t`` is a scalar or one step per batch row."""
    z0 = np.asarray(z0)
    noise = np.asarray(noise)
    if noise.shape != z0.shape:
        raise ScheduleError(f"noise shape {noise.shape} != latent shape {z0.shape}")
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t >= schedule.T):
        raise ScheduleError(f"timestep out of range [0, {schedule.T})")
    ab = schedule.alpha_bar[t]
    if ab.ndim:
        ab = ab.reshape((-1,) + (1,) * (z0.ndim - 1))
    return (np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * noise).astype(z0.dtype)


class ContentEncoder(nn.Module):
    """Embedding table over the closed content-sentence vocabulary plus a null row."""

    def __init__(self, width: int, rng: np.random.Generator, vocab=None):
        self.vocab = tuple(vocab or (CONTENT_TEXT[c] for c in CONTENTS))
        self.table = nn.Embedding(len(self.vocab) + 1, width, rng, scale=0.5)

    @property
    def null_id(self) -> int:
        return len(self.vocab)

    def ids(self, texts) -> np.ndarray:
        from .motion.synth import VocabularyError

        out = []
        for text in texts:
            if text is None:
                out.append(self.null_id)
            elif text in self.vocab:
                out.append(self.vocab.index(text))
            else:
                raise VocabularyError(f"unknown content text {text!r}")
        return np.asarray(out, dtype=np.int64)

    def forward(self, ids) -> Tensor:
        return self.table(ids)


@dataclass
class DenoiserConfig:
    latent_tokens: int = 2
    latent_dim: int = 32
    width: int = 64
    heads: int = 4
    blocks: int = 4
    seed: int = 0

    def validate(self, hook_block: int):
        if not 1 <= hook_block <= self.blocks:
            raise ValueError(f"hook block {hook_block} outside 1..{self.blocks}")


class Denoiser(nn.Module):
    def __init__(self, cfg: DenoiserConfig | None = None):
        self.config = cfg = cfg or DenoiserConfig()
        rng = np.random.default_rng(cfg.seed)
        h = cfg.width
        self.time_mlp = nn.MLP(h, h, h, rng)
        self.content = ContentEncoder(h, rng)
        self.in_proj = nn.Linear(cfg.latent_dim, h, rng)
        self.pos = Tensor(rng.normal(0.0, 0.02, size=(cfg.latent_tokens, h)).astype(np.float32),
                          requires_grad=True)
        self.blocks = [nn.TransformerBlock(h, cfg.heads, rng) for _ in range(cfg.blocks)]
        self.ln = nn.LayerNorm(h)
        self.out = nn.Linear(h, cfg.latent_dim, rng)

    def forward(self, z_t: Tensor, t, content_ids, style: Tensor | None = None,
                fusion: FusionConfig | None = None, style_mask=None) -> Tensor:
        """Predict noise for (B, n, d) latents.

        Args:
            style: (B, n, d) token-form style features, or None to bypass the hook.
            style_mask: optional (B,) booleans; rows with False skip the hook
                (their fused block equals the content block exactly).
        """
        b = z_t.shape[0]
        width = self.config.width
        temb = nn.sinusoidal_embedding(np.asarray(t).reshape(-1), width, z_t.dtype)
        time_tok = self.time_mlp(Tensor(temb)).reshape(b, 1, width)
        content_tok = self.content(np.asarray(content_ids)).reshape(b, 1, width)
        h = nn.concat([time_tok, content_tok, self.in_proj(z_t) + self.pos], axis=1)
        fusion = fusion or FusionConfig()
        for i, blk in enumerate(self.blocks, start=1):
            h = blk(h)
            if style is not None and i == fusion.hook_block:
                gamma = fusion.gamma
                if style_mask is not None:
                    gamma = (np.asarray(style_mask, dtype=h.dtype) * gamma).reshape(b, 1, 1)
                fused = fuse(h[:, 2:], match_width(style, width), fusion, gamma=gamma)
                h = nn.concat([h[:, :2], fused], axis=1)
        return self.out(self.ln(h[:, 2:]))


class LatentStyleClassifier(nn.Module):
    """Style classifier over (scaled) clean latents; drives optional classifier guidance."""

    def __init__(self, latent_tokens: int, latent_dim: int, num_styles: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.mlp = nn.MLP(latent_tokens * latent_dim, 64, num_styles, rng)

    def forward(self, z: Tensor) -> Tensor:
        return self.mlp(z.reshape(z.shape[0], -1))


def train_latent_classifier(clf: LatentStyleClassifier, latents: np.ndarray, labels: np.ndarray,
                            steps: int = 300, lr: float = 3e-3, noise: float = 0.1,
                            seed: int = 0) -> float:
    """Fit on scaled clean latents with Gaussian jitter; returns final train accuracy."""
    rng = np.random.default_rng(seed)
    opt = nn.AdamW(clf.parameters(), lr=lr)
    for _ in range(steps):
        idx = rng.choice(len(latents), size=min(64, len(latents)), replace=False)
        x = latents[idx] + noise * rng.standard_normal(latents[idx].shape)
        loss = nn.cross_entropy(clf(Tensor(x.astype(np.float32))), labels[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    with nn.no_grad():
        pred = clf(Tensor(latents.astype(np.float32))).data.argmax(axis=1)
    return float(np.mean(pred == labels))


@dataclass
class DiffusionTrainConfig:
    T: int = 100
    # the classic 1000-step endpoints (1e-4, 2e-2) rescaled by 1000 / T so alpha_bar_T ~ 0
    beta_start: float = 1e-3
    beta_end: float = 0.2
    p_uncond: float = 0.1
    # probability a stylized step uses the pooled (tiled) style form
    p_pooled: float = 0.5
    content_steps: int = 3000
    style_steps: int = 800
    batch_size: int = 64
    style_batch_size: int = 32
    lr: float = 1e-3
    style_lr: float = 3e-3
    # "same_style": another motion of the same style; "self": the motion itself
    reference: str = "same_style"
    grad_clip: float = 1.0
    seed: int = 0


@dataclass
class StepDraws:
    """Random quantities of one training step, drawn in a fixed order."""

    t: np.ndarray
    noise: np.ndarray
    drop: np.ndarray
    pooled: bool


def draw_step(rng: np.random.Generator, batch: int, latent_shape, schedule: DiffusionSchedule,
              p_uncond: float, p_pooled: float) -> StepDraws:
    t = rng.integers(0, schedule.T, size=batch)
    noise = rng.standard_normal((batch,) + tuple(latent_shape))
    drop = rng.random(batch) < p_uncond
    pooled = bool(rng.random() < p_pooled)
    return StepDraws(t, noise, drop, pooled)


class LatentDiffusion(nn.Module):
    """Denoiser + schedule + latent scale; the style encoder is attached for stylized use."""

    buffer_names = ("latent_scale",)

    def __init__(self, den_cfg: DenoiserConfig | None = None,
                 schedule: DiffusionSchedule | None = None,
                 fusion: FusionConfig | None = None):
        self.denoiser = Denoiser(den_cfg)
        self.schedule = schedule or DiffusionSchedule.linear()
        self.fusion = fusion or FusionConfig()
        self.denoiser.config.validate(self.fusion.hook_block)
        self.latent_scale = Tensor(np.ones((), dtype=np.float32))

    @property
    def latent_shape(self):
        c = self.denoiser.config
        return (c.latent_tokens, c.latent_dim)

    def fit_scale(self, latents: np.ndarray):
        self.latent_scale.data = np.asarray(np.std(latents), dtype=np.float32)
        return self

    def scale(self, z):
        return np.asarray(z) / self.latent_scale.data

    def unscale(self, z):
        return np.asarray(z) * self.latent_scale.data

    def set_mode(self, mode: str, style_encoder: StyleEncoder | None = None):
        """Toggle trainable parameter sets; stylized mode freezes the denoiser."""
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.denoiser.requires_grad_(mode == "content_only")
        if style_encoder is not None:
            style_encoder.requires_grad_(mode == "stylized")

    def eps(self, z_t, t, content_ids, style=None, fusion=None, style_mask=None) -> Tensor:
        z_t = z_t if isinstance(z_t, Tensor) else Tensor(np.asarray(z_t, dtype=np.float32))
        return self.denoiser(z_t, t, content_ids, style, fusion or self.fusion, style_mask)


def style_features(style_encoder: StyleEncoder, frames, pooled: bool, tokens: int) -> Tensor:
    tok = style_encoder.tokens(frames)
    if pooled:
        return tile_pooled(nn.mean(tok, axis=1), tokens)
    return tok


def train_step(model: LatentDiffusion, z0: np.ndarray, content_ids: np.ndarray,
               rng: np.random.Generator, mode: str = "content_only",
               style_encoder: StyleEncoder | None = None, style_frames=None,
               p_uncond: float = 0.1, p_pooled: float = 0.5,
               fusion: FusionConfig | None = None) -> Tensor:
    """One epsilon-prediction MSE evaluation (no optimizer update).

    ``z0`` is the scaled clean latent batch. The random draws (timesteps,
    noise, condition dropout, style form) happen in the same order in both
    modes, so a stylized step with gamma = 0 reproduces the content-only loss.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    b = len(z0)
    draws = draw_step(rng, b, z0.shape[1:], model.schedule, p_uncond, p_pooled)
    z_t = forward_diffuse(z0, draws.t, draws.noise.astype(z0.dtype), model.schedule)
    ids = np.where(draws.drop, model.denoiser.content.null_id, content_ids)
    style = None
    if mode == "stylized":
        if style_encoder is None or style_frames is None:
            raise ValueError("stylized mode needs a style encoder and style references")
        style = style_features(style_encoder, style_frames, draws.pooled, z0.shape[1])
    # dropped rows lose the whole condition: null content and no style
    pred = model.eps(Tensor(z_t), draws.t, ids, style, fusion, style_mask=~draws.drop)
    loss = nn.mse_loss(pred, Tensor(draws.noise.astype(pred.dtype)))
    if not np.isfinite(loss.item()):
        raise TrainingError(f"{mode}: non-finite diffusion loss")
    return loss


def train_content(model: LatentDiffusion, latents: np.ndarray, content_ids: np.ndarray,
                  cfg: DiffusionTrainConfig) -> list:
    """Fit the denoiser on scaled latents. Returns the logged loss curve."""
    model.set_mode("content_only")
    rng = np.random.default_rng([cfg.seed, 0])
    opt = nn.AdamW(model.denoiser.parameters(), lr=cfg.lr, grad_clip=cfg.grad_clip)
    losses = []
    for step in range(cfg.content_steps):
        idx = rng.choice(len(latents), size=min(cfg.batch_size, len(latents)), replace=False)
        loss = train_step(model, latents[idx], content_ids[idx], rng, "content_only",
                          p_uncond=cfg.p_uncond, p_pooled=cfg.p_pooled)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 50 == 0 or step == cfg.content_steps - 1:
            losses.append((step, loss.item()))
            log.debug("content step %d loss %.5f", step, loss.item())
    return losses


def train_stylized(model: LatentDiffusion, style_encoder: StyleEncoder, latents: np.ndarray,
                   content_ids: np.ndarray, style_labels: np.ndarray, frames: np.ndarray,
                   cfg: DiffusionTrainConfig) -> list:
    """Tune only the style encoder through the fusion hook of the frozen denoiser.

    Each latent is paired with a different motion of the same style as its
    reference (falls back to itself when its style has a single sample).
    """
    model.set_mode("stylized", style_encoder)
    rng = np.random.default_rng([cfg.seed, 1])
    by_style = {s: np.flatnonzero(style_labels == s) for s in np.unique(style_labels)}
    opt = nn.AdamW(style_encoder.parameters(), lr=cfg.style_lr, grad_clip=cfg.grad_clip)
    losses = []
    for step in range(cfg.style_steps):
        idx = rng.choice(len(latents), size=min(cfg.style_batch_size, len(latents)),
                         replace=False)
        refs = []
        for i in (idx if cfg.reference == "same_style" else ()):
            pool = by_style[style_labels[i]]
            others = pool[pool != i]
            refs.append(rng.choice(others) if len(others) else i)
        loss = train_step(model, latents[idx], content_ids[idx], rng, "stylized",
                          style_encoder, frames[np.asarray(refs)] if refs else frames[idx],
                          p_uncond=cfg.p_uncond, p_pooled=cfg.p_pooled)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 25 == 0 or step == cfg.style_steps - 1:
            losses.append((step, loss.item()))
            log.debug("stylized step %d loss %.5f", step, loss.item())
    model.set_mode("content_only", style_encoder)
    style_encoder.requires_grad_(False)
    return losses


@dataclass
class SampleConfig:
    """DDIM settings.

    ``w_style`` = None uses the two-branch form ``e_u + w_cfg (e_cs - e_u)``.
    A number switches to three branches with a separate style weight:
    ``e_u + w_cfg (e_c - e_u) + w_style (e_cs - e_c)``, where ``e_c`` is the
    content-only prediction and ``e_cs`` adds the style hook. The two forms
    agree when ``w_style == w_cfg``.
    """

    steps: int = 50
    w_cfg: float = 2.5
    w_style: float | None = None
    w_cls: float = 0.0


def _style_tokens(style, tokens: int):
    if style is None:
        return None
    style = np.asarray(style, dtype=np.float32)
    if style.ndim == 2:
        return np.broadcast_to(style[:, None, :], (style.shape[0], tokens, style.shape[1]))
    return style


def initial_noise(seeds, latent_shape) -> np.ndarray:
    """Per-sample starting noise, so a sample does not depend on its batch mates."""
    return np.stack([np.random.default_rng(int(s)).standard_normal(latent_shape)
                     for s in seeds]).astype(np.float32)


def sample_latents(model: LatentDiffusion, contents, seeds, style=None,
                   cfg: SampleConfig | None = None, fusion: FusionConfig | None = None,
                   classifier: LatentStyleClassifier | None = None,
                   target_styles=None) -> np.ndarray:
    """Deterministic DDIM sampling with classifier-free guidance.

    Args:
        contents: content sentences, one per sample (None = unconditional).
        seeds: per-sample integer seeds for the starting noise.
        style: None, (B, d) pooled features or (B, n, d) token features.
        classifier / target_styles: used only when ``cfg.w_cls`` > 0.

    Returns:
        Unscaled latents (B, n, d) ready for the VAE decoder.
    """
    cfg = cfg or SampleConfig()
    if len(contents) != len(seeds):
        raise ValueError("contents and seeds differ in length")
    sched = model.schedule
    n, _ = model.latent_shape
    b = len(contents)
    ids = model.denoiser.content.ids(contents)
    null = np.full(b, model.denoiser.content.null_id)
    # branches: [cond + style, (cond,) uncond]; only the first carries the style hook
    split = cfg.w_style is not None
    branch_ids = [ids, ids, null] if split else [ids, null]
    k = len(branch_ids)
    all_ids = np.concatenate(branch_ids)
    style_tok = _style_tokens(style, n)
    style_t = mask = None
    if style_tok is not None:
        style_t = Tensor(np.concatenate([style_tok] * k))
        mask = np.concatenate([np.ones(b, bool), np.zeros((k - 1) * b, bool)])
    use_cls = cfg.w_cls > 0
    if use_cls and (classifier is None or target_styles is None):
        raise ValueError("classifier guidance needs a classifier and target styles")

    z = initial_noise(seeds, model.latent_shape).astype(np.float64)
    ts = sched.ddim_timesteps(cfg.steps)
    for i, t in enumerate(ts):
        ab = sched.alpha_bar[t]
        ab_prev = sched.alpha_bar[ts[i + 1]] if i + 1 < len(ts) else 1.0
        with nn.no_grad():
            out = model.eps(Tensor(np.concatenate([z] * k).astype(np.float32)),
                            np.full(k * b, t), all_ids, style_t, fusion, mask).data
        out = out.astype(np.float64)
        e_cs, e_u = out[:b], out[(k - 1) * b:]
        if split:
            e_c = out[b:2 * b]
            eps = e_u + cfg.w_cfg * (e_c - e_u) + cfg.w_style * (e_cs - e_c)
        else:
            eps = e_u + cfg.w_cfg * (e_cs - e_u)
        if use_cls:
            x0 = (z - np.sqrt(1 - ab) * eps) / np.sqrt(ab)
            eps = eps - cfg.w_cls * np.sqrt(1 - ab) * classifier_grad(classifier, x0,
                                                                       target_styles) / np.sqrt(ab)
        x0 = (z - np.sqrt(1 - ab) * eps) / np.sqrt(ab)
        z = np.sqrt(ab_prev) * x0 + np.sqrt(1 - ab_prev) * eps
    return model.unscale(z).astype(np.float32)


def classifier_grad(classifier: LatentStyleClassifier, x0: np.ndarray, targets) -> np.ndarray:
    """Gradient of sum_i log p(target_i | x0_i) with respect to x0."""
    x = Tensor(x0.astype(np.float32), requires_grad=True)
    logp = nn.log_softmax(classifier(x), axis=-1)
    picked = logp[np.arange(len(x0)), np.asarray(targets)]
    nn.tsum(picked).backward()
    return x.grad.astype(np.float64)


def diffusion_meta(model: LatentDiffusion) -> dict:
    s = model.schedule
    return {"denoiser": asdict(model.denoiser.config), "fusion": asdict(model.fusion),
            "schedule": {"T": s.T, "beta_start": float(s.betas[0]),
                         "beta_end": float(s.betas[-1])}}


def diffusion_from_meta(meta: dict) -> LatentDiffusion:
    sch = meta["schedule"]
    return LatentDiffusion(DenoiserConfig(**meta["denoiser"]),
                           DiffusionSchedule.linear(sch["T"], sch["beta_start"], sch["beta_end"]),
                           FusionConfig(**meta["fusion"]))
