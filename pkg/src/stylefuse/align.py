"""Contrastive alignment of pooled style features with a frozen modality embedder.

A fixed embedder maps style words (and stub "image"/"audio" tokens for the
same words) into a 64-d joint space. A single trainable linear projection
maps that space onto pooled style features; a symmetric InfoNCE loss pulls
matched pairs together. The resulting space backs a cosine retrieval index
used for text/stub-guided stylization and style interpolation.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .motion.synth import CONTENT_TEXT, CONTENTS, STYLES, VocabularyError
from .nn import Tensor
from .vae import TrainingError

log = logging.getLogger(__name__)

MODALITIES = ("text", "image", "audio")
EMBED_DIM = 64


class IndexStateError(RuntimeError):
    """Query against an empty or inconsistent index."""


class ModalityEmbedder(nn.Module):
    """Frozen, seeded stand-in for a pre-aligned multi-modal encoder.

    Each vocabulary entry gets a random unit base vector. Every modality adds
    its own perturbation of norm ``delta`` along a direction orthogonal to the
    base and to the other modalities' directions, so for delta = 0.2 the
    cross-modal cosine for one word is 1 / (1 + delta^2) ~ 0.96.
    """

    def __init__(self, vocab=None, dim: int = EMBED_DIM, delta: float = 0.2, seed: int = 1234):
        self.vocab = tuple(vocab or (STYLES + tuple(CONTENT_TEXT[c] for c in CONTENTS)))
        if len(set(self.vocab)) != len(self.vocab):
            raise ValueError("duplicate vocabulary entries")
        if dim < len(MODALITIES) + 1:
            raise ValueError("dim too small for orthogonal modality directions")
        rng = np.random.default_rng(seed)
        rows = []
        for _ in self.vocab:
            basis, _ = np.linalg.qr(rng.standard_normal((dim, len(MODALITIES) + 1)))
            base = basis[:, 0]
            rows.append([base + delta * basis[:, 1 + m] for m in range(len(MODALITIES))])
        table = np.asarray(rows)  # (V, M, dim)
        table /= np.linalg.norm(table, axis=-1, keepdims=True)
        self.table = Tensor(table.astype(np.float32))

    def embed(self, words, modality: str = "text") -> np.ndarray:
        if modality not in MODALITIES:
            raise ValueError(f"unknown modality {modality!r}")
        if isinstance(words, str):
            words = [words]
        m = MODALITIES.index(modality)
        ids = []
        for w in words:
            if w not in self.vocab:
                raise VocabularyError(f"{w!r} not in embedder vocabulary")
            ids.append(self.vocab.index(w))
        return self.table.data[np.asarray(ids), m].copy()

    def param_hash(self) -> str:
        return hashlib.sha256(self.table.data.tobytes()).hexdigest()


class Projection(nn.Module):
    """The one trainable layer between embedder space and style-feature space."""

    def __init__(self, in_dim: int = EMBED_DIM, out_dim: int = 32, seed: int = 0):
        self.linear = nn.Linear(in_dim, out_dim, np.random.default_rng(seed))

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.linear.weight.dtype))
        return self.linear(x)


class PoolingHead(nn.Module):
    """Alignment-side head on pooled style features: fixed standardization + linear map.

    Starts as the identity on standardized features. Retrieval compares in
    this space; the fusion hook still receives the raw pooled features.
    """

    buffer_names = ("mean", "std")

    def __init__(self, dim: int = 32, seed: int = 0):
        self.mean = Tensor(np.zeros(dim, dtype=np.float32))
        self.std = Tensor(np.ones(dim, dtype=np.float32))
        self.linear = nn.Linear(dim, dim, np.random.default_rng(seed))
        self.linear.weight.data[:] = np.eye(dim, dtype=np.float32)
        self.linear.bias.data[:] = 0.0

    def fit(self, pooled: np.ndarray):
        self.mean.data = pooled.mean(axis=0).astype(np.float32)
        self.std.data = np.maximum(pooled.std(axis=0), 1e-6).astype(np.float32)
        return self

    def forward(self, pooled) -> Tensor:
        x = (np.asarray(pooled) - self.mean.data) / self.std.data
        return self.linear(Tensor(x.astype(np.float32)))

    def keys(self, pooled) -> np.ndarray:
        with nn.no_grad():
            return self.forward(pooled).data


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    return x / nn.sqrt(nn.tsum(x * x, axis=-1, keepdims=True) + eps)


def align_loss(text_feats, style_feats, tau0: float = 0.07) -> Tensor:
    """Symmetric InfoNCE over matched rows.

    Rows are L2-normalized, similarities divided by ``tau0``; the loss is
    -1/2 [log softmax over columns + log softmax over rows] at the diagonal,
    averaged over the batch.
    """
    ft = text_feats if isinstance(text_feats, Tensor) else Tensor(np.asarray(text_feats))
    fs = style_feats if isinstance(style_feats, Tensor) else Tensor(np.asarray(style_feats))
    if ft.shape[0] == 0:
        raise ValueError("empty batch")
    if ft.shape != fs.shape:
        raise ValueError(f"batch shapes differ: {ft.shape} vs {fs.shape}")
    if tau0 <= 0:
        raise ValueError("tau0 must be > 0")
    sim = nn.matmul(l2_normalize(ft), l2_normalize(fs).T) * (1.0 / tau0)
    diag = np.arange(ft.shape[0])
    row = nn.log_softmax(sim, axis=1)[diag, diag]
    col = nn.log_softmax(sim, axis=0)[diag, diag]
    return nn.mean(row + col) * -0.5


@dataclass
class AlignConfig:
    tau0: float = 0.07
    epochs: int = 30
    steps_per_epoch: int = 20
    lr: float = 5e-3
    # also fine-tune the pooling head (otherwise it stays the fixed standardization)
    train_head: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.tau0 <= 0:
            raise ValueError("tau0 must be > 0")


@dataclass
class AlignLog:
    epoch_loss: list = field(default_factory=list)
    top1: float = float("nan")
    pos_cos: float = float("nan")
    neg_cos: float = float("nan")
    embedder_hash_before: str = ""
    embedder_hash_after: str = ""


def label_scores(proj: Projection, embedder: ModalityEmbedder, keys: np.ndarray,
                 labels=STYLES, modality: str = "text") -> np.ndarray:
    """Cosine between each motion key and each projected label embedding."""
    with nn.no_grad():
        q = proj(embedder.embed(list(labels), modality)).data
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    p = keys / np.linalg.norm(keys, axis=1, keepdims=True)
    return p @ q.T


def label_top1(proj, embedder, keys, labels, modality="text", vocab=STYLES) -> float:
    """Fraction of motions whose best-matching projected label is their own."""
    pred = np.asarray(vocab)[label_scores(proj, embedder, keys, vocab, modality).argmax(axis=1)]
    return float(np.mean(pred == np.asarray(labels)))


@dataclass
class AlignedSpace:
    """Trained pieces of the joint space."""

    proj: Projection
    head: PoolingHead
    content_proj: Projection | None
    log: AlignLog


def _contrastive_epochs(pairs, loss_fn, params, cfg: AlignConfig, rng, epoch_log=None):
    """Run ``cfg.epochs`` of one-sample-per-class batches.

    ``pairs`` maps each class to (target embedding, row indices);
    ``loss_fn(targets, rows)`` builds the batch loss.
    """
    opt = nn.AdamW(params, lr=cfg.lr)
    classes = list(pairs)
    for _ in range(cfg.epochs):
        total = 0.0
        for _ in range(cfg.steps_per_epoch):
            order = rng.permutation(len(classes))
            rows = [rng.choice(pairs[classes[o]][1]) for o in order]
            targets = np.stack([pairs[classes[o]][0] for o in order])
            loss = loss_fn(targets, rows)
            if not np.isfinite(loss.item()):
                raise TrainingError("alignment loss diverged")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
        if epoch_log is not None:
            epoch_log.append(total / cfg.steps_per_epoch)


def train_alignment(pooled: np.ndarray, labels, embedder: ModalityEmbedder,
                    cfg: AlignConfig | None = None, content_texts=None) -> AlignedSpace:
    """Fit the projection and pooling head on (pooled feature, style word) pairs.

    Every batch holds one motion per style in random order, so no two rows
    share a text target (which would make them false negatives). When
    ``content_texts`` is given, a second projection for content sentences is
    fit afterwards against the frozen motion keys; evaluation uses it for
    text-motion distances.
    """
    cfg = cfg or AlignConfig()
    labels = np.asarray(labels)
    rng = np.random.default_rng(cfg.seed)
    proj = Projection(embedder.table.shape[-1], pooled.shape[1], seed=cfg.seed)
    head = PoolingHead(pooled.shape[1], seed=cfg.seed).fit(pooled)
    head.requires_grad_(cfg.train_head)
    vocab = sorted(set(labels.tolist()), key=list(STYLES).index)
    pairs = {s: (embedder.embed(s)[0], np.flatnonzero(labels == s)) for s in vocab}
    alog = AlignLog(embedder_hash_before=embedder.param_hash())
    _contrastive_epochs(pairs, lambda t, rows: align_loss(proj(t), head(pooled[rows]), cfg.tau0),
                        proj.parameters() + head.parameters(), cfg, rng, alog.epoch_loss)
    head.requires_grad_(False)

    content_proj = None
    if content_texts is not None:
        content_texts = np.asarray(content_texts)
        keys = head.keys(pooled)
        content_proj = Projection(embedder.table.shape[-1], pooled.shape[1], seed=cfg.seed + 1)
        cpairs = {c: (embedder.embed(c)[0], np.flatnonzero(content_texts == c))
                  for c in sorted(set(content_texts.tolist()))}
        _contrastive_epochs(
            cpairs, lambda t, rows: align_loss(content_proj(t), Tensor(keys[rows]), cfg.tau0),
            content_proj.parameters(), cfg, rng)

    scores = label_scores(proj, embedder, head.keys(pooled), vocab)
    own = np.asarray([vocab.index(s) for s in labels])
    pos = scores[np.arange(len(labels)), own]
    alog.pos_cos = float(pos.mean())
    alog.neg_cos = float((scores.sum(axis=1) - pos).mean() / max(len(vocab) - 1, 1))
    alog.top1 = float(np.mean(scores.argmax(axis=1) == own))
    alog.embedder_hash_after = embedder.param_hash()
    log.info("alignment: final loss %.4f, train top-1 %.3f", alog.epoch_loss[-1], alog.top1)
    return AlignedSpace(proj, head, content_proj, alog)


@dataclass
class RetrievalHit:
    label: str
    motion_id: str
    similarity: float
    feature: np.ndarray  # raw pooled style feature


class AlignmentIndex:
    """Cosine index over style motions; immutable once built.

    Each record keeps a unit-norm key (the pooling-head output) that queries
    are compared against, and the raw pooled feature that a hit hands to the
    fusion hook.
    """

    def __init__(self, keys: np.ndarray, features: np.ndarray, labels, motion_ids):
        keys = np.asarray(keys, dtype=np.float64)
        features = np.asarray(features, dtype=np.float32)
        n = len(labels)
        if keys.ndim != 2 or len(keys) != n or len(features) != n or len(motion_ids) != n:
            raise ValueError("keys, features, labels and motion ids must align")
        norms = np.linalg.norm(keys, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero key vector in index")
        self.unit = keys / norms[:, None]
        self.features = features
        self.labels = list(labels)
        self.motion_ids = list(motion_ids)

    def __len__(self):
        return len(self.labels)

    def search(self, query: np.ndarray, k: int = 1) -> list:
        if len(self) == 0:
            raise IndexStateError("index is empty")
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        q = q / np.linalg.norm(q)
        sims = self.unit @ q
        order = np.argsort(-sims, kind="stable")[:k]
        return [RetrievalHit(self.labels[i], self.motion_ids[i], float(sims[i]),
                             self.features[i].copy())
                for i in order]

    def tensors(self) -> dict:
        return {"index.unit": self.unit, "index.feature": self.features}

    def manifest(self) -> dict:
        return {"labels": self.labels, "motion_ids": self.motion_ids}

    @classmethod
    def from_tensors(cls, tensors: dict, manifest: dict) -> "AlignmentIndex":
        return cls(tensors["index.unit"], tensors["index.feature"], manifest["labels"],
                   manifest["motion_ids"])

    @classmethod
    def empty(cls, dim: int = 32) -> "AlignmentIndex":
        idx = cls.__new__(cls)
        idx.unit = np.zeros((0, dim))
        idx.features = np.zeros((0, dim), dtype=np.float32)
        idx.labels, idx.motion_ids = [], []
        return idx


class StyleRetriever:
    """Embedder + projection + index: modality input -> retrieved style features."""

    def __init__(self, embedder: ModalityEmbedder, proj: Projection, index: AlignmentIndex):
        self.embedder = embedder
        self.proj = proj
        self.index = index

    def query_vector(self, word: str, modality: str = "text") -> np.ndarray:
        with nn.no_grad():
            return self.proj(self.embedder.embed(word, modality)).data[0]

    def retrieve(self, word: str, k: int = 1, modality: str = "text") -> list:
        return self.index.search(self.query_vector(word, modality), k)


def normalize_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("need at least one weight")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if w.sum() == 0:
        raise ValueError("all-zero weights")
    return w / w.sum()


def interpolate_styles(retriever: StyleRetriever, queries, weights, modality: str = "text"):
    """Weighted sum of top-1 retrieved features.

    Returns:
        (feature, normalized weights, hits)
    """
    if len(queries) != len(weights):
        raise ValueError("queries and weights differ in length")
    w = normalize_weights(weights)
    hits = [retriever.retrieve(q, 1, modality)[0] for q in queries]
    feat = np.zeros_like(hits[0].feature, dtype=np.float64)
    for wi, h in zip(w, hits):
        feat = feat + wi * h.feature.astype(np.float64)
    return feat.astype(np.float32), w, hits
