"""Evaluation suite: judge classifiers, FID, text-motion distances, diversity, skate.

All feature-space metrics read motions through one frozen feature extractor
(the pre-trained style encoder's pooled output), so numbers are comparable
across runs that share it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .motion.features import foot_skate_frames
from .nn import Tensor
from .vae import StyleEncoder


class MetricError(ValueError):
    """Metric called outside its contract (empty input, shape mismatch...)."""


class FeatureExtractor:
    """Frozen pooled style-encoder features for metric computation."""

    def __init__(self, encoder: StyleEncoder, batch_size: int = 128):
        self.encoder = encoder
        self.encoder.requires_grad_(False)
        self.batch_size = batch_size

    def __call__(self, frames) -> np.ndarray:
        frames = np.asarray(frames)
        if frames.ndim == 2:
            frames = frames[None]
        chunks = [self.encoder.pooled(frames[i:i + self.batch_size])
                  for i in range(0, len(frames), self.batch_size)]
        return np.concatenate(chunks, axis=0).astype(np.float64)


class FeatureClassifier(nn.Module):
    """Small MLP over standardized features; used for the style judge and content check."""

    buffer_names = ("mean", "std")

    def __init__(self, classes, dim: int = 32, hidden: int = 64, seed: int = 0):
        self.classes = tuple(classes)
        self.mean = Tensor(np.zeros(dim, dtype=np.float32))
        self.std = Tensor(np.ones(dim, dtype=np.float32))
        self.mlp = nn.MLP(dim, hidden, len(self.classes), np.random.default_rng(seed))

    def forward(self, feats) -> Tensor:
        x = (np.asarray(feats) - self.mean.data) / self.std.data
        return self.mlp(Tensor(x.astype(np.float32)))

    def predict(self, feats) -> list:
        with nn.no_grad():
            idx = self.forward(feats).data.argmax(axis=1)
        return [self.classes[i] for i in idx]

    def accuracy(self, feats, labels) -> float:
        return float(np.mean(np.asarray(self.predict(feats)) == np.asarray(labels)))


def train_classifier(feats: np.ndarray, labels, classes, steps: int = 1500, lr: float = 3e-3,
                     weight_decay: float = 1e-4, seed: int = 0) -> FeatureClassifier:
    clf = FeatureClassifier(classes, feats.shape[1], seed=seed)
    clf.mean.data = feats.mean(axis=0).astype(np.float32)
    clf.std.data = np.maximum(feats.std(axis=0), 1e-6).astype(np.float32)
    y = np.asarray([clf.classes.index(lab) for lab in labels])
    rng = np.random.default_rng(seed)
    opt = nn.AdamW(clf.parameters(), lr=lr, weight_decay=weight_decay)
    for _ in range(steps):
        idx = rng.choice(len(feats), size=min(64, len(feats)), replace=False)
        loss = nn.cross_entropy(clf(feats[idx]), y[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    return clf


def sra(predicted, targets) -> float:
    """Style recognition accuracy in percent."""
    predicted, targets = list(predicted), list(targets)
    if not targets:
        raise MetricError("empty generated set")
    if len(predicted) != len(targets):
        raise MetricError("prediction / target length mismatch")
    return 100.0 * float(np.mean([p == t for p, t in zip(predicted, targets)]))


@dataclass
class GaussianFit:
    mu: np.ndarray
    sigma: np.ndarray

    @classmethod
    def from_features(cls, feats) -> "GaussianFit":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or len(feats) < 2:
            raise MetricError("need a (N >= 2, D) feature matrix")
        sigma = np.cov(feats, rowvar=False).reshape(feats.shape[1], feats.shape[1])
        return cls(feats.mean(axis=0), (sigma + sigma.T) / 2)


def _psd_sqrt(mat: np.ndarray, clip: float = -1e-8) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
    if vals.min() < clip:
        raise MetricError(f"matrix not PSD (min eigenvalue {vals.min():.3g})")
    return (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T


def fid(a: GaussianFit, b: GaussianFit) -> float:
    """|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    Tr((S_a S_b)^(1/2)) is taken from the symmetric product
    S_a^(1/2) S_b S_a^(1/2), which has the same eigenvalues.
    """
    if a.mu.shape != b.mu.shape:
        raise MetricError(f"dimension mismatch {a.mu.shape} vs {b.mu.shape}")
    root_a = _psd_sqrt(a.sigma)
    inner = root_a @ b.sigma @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_cross = np.sum(np.sqrt(np.maximum(vals, 0.0)))
    diff = a.mu - b.mu
    value = diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * tr_cross
    return float(max(value, 0.0))


def fid_from_features(x, y) -> float:
    return fid(GaussianFit.from_features(x), GaussianFit.from_features(y))


def _unit(x):
    x = np.asarray(x, dtype=np.float64)
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-12)


def mm_dist(text_feats, motion_feats, normalize: bool = True) -> float:
    """Mean Euclidean distance over matched (text, motion) pairs."""
    t, m = np.asarray(text_feats, float), np.asarray(motion_feats, float)
    if t.shape != m.shape:
        raise MetricError(f"length mismatch {t.shape} vs {m.shape}")
    if normalize:
        t, m = _unit(t), _unit(m)
    return float(np.mean(np.linalg.norm(t - m, axis=1)))


def r_precision_top3(query_feats, match_feats, pool: int = 32, seed: int = 0,
                     normalize: bool = True) -> float:
    """Fraction of queries whose true match ranks in the top 3 of its pool.

    Each query i is compared against its own match i plus ``pool - 1``
    distractors drawn from the other matches; the rank is the number of
    distractors strictly closer than the true match.
    """
    q, m = np.asarray(query_feats, float), np.asarray(match_feats, float)
    if pool < 4:
        raise MetricError("pool must hold at least 4 candidates")
    if q.shape != m.shape or len(q) < pool:
        raise MetricError("need matched sets at least as large as the pool")
    if normalize:
        q, m = _unit(q), _unit(m)
    rng = np.random.default_rng(seed)
    hits = 0
    for i in range(len(q)):
        others = np.delete(np.arange(len(m)), i)
        cand = rng.choice(others, size=pool - 1, replace=False)
        d_true = np.linalg.norm(q[i] - m[i])
        d_other = np.linalg.norm(m[cand] - q[i], axis=1)
        hits += int(np.sum(d_other < d_true) < 3)
    return hits / len(q)


def diversity(feats, num_pairs: int = 32, seed: int = 0) -> float:
    """Mean distance over random disjoint pairs (fewer pairs if the set is small)."""
    f = np.asarray(feats, dtype=np.float64)
    if len(f) < 2:
        raise MetricError("diversity needs at least 2 motions")
    k = min(num_pairs, len(f) // 2)
    perm = np.random.default_rng(seed).permutation(len(f))[:2 * k]
    return float(np.mean(np.linalg.norm(f[perm[:k]] - f[perm[k:]], axis=1)))


def foot_skate_ratio(motions, h_eps: float = 0.05, v_eps: float = 0.01) -> float:
    """Mean per-sequence foot-skate fraction."""
    motions = list(motions)
    if not motions:
        raise MetricError("empty motion set")
    return float(np.mean([foot_skate_frames(m, h_eps, v_eps) for m in motions]))


@dataclass
class ParamRow:
    module: str
    total: int
    learnable: int


def param_report(modules: dict, learnable: set | None = None) -> list:
    """Overall vs learnable parameter counts per module.

    Args:
        modules: name -> Module.
        learnable: names of modules whose parameters are trained by the
            stylization stage; None means "whatever currently requires grad".
    """
    rows = []
    for name, mod in modules.items():
        total = mod.num_parameters()
        if learnable is None:
            train = mod.num_parameters(trainable_only=True)
        else:
            train = total if name in learnable else 0
        rows.append(ParamRow(name, total, train))
    fusion = [r for r in rows if r.module == "fusion"]
    if fusion and (fusion[0].total or fusion[0].learnable):
        raise MetricError("fusion module must own zero parameters")
    return rows
