import math

import numpy as np
import pytest

from stylefuse import nn
from stylefuse.align import (MODALITIES, AlignConfig, AlignmentIndex, IndexStateError,
                             ModalityEmbedder, StyleRetriever, align_loss, interpolate_styles,
                             normalize_weights, train_alignment)
from stylefuse.motion import STYLES, VocabularyError
from stylefuse.nn import Tensor


def infonce_oracle(t, s, tau):
    """Double loop over the batch, both directions."""
    n = len(t)
    tn = [row / math.sqrt(sum(v * v for v in row)) for row in t]
    sn = [row / math.sqrt(sum(v * v for v in row)) for row in s]
    sim = [[sum(a * b for a, b in zip(tn[i], sn[j])) / tau for j in range(n)] for i in range(n)]
    total = 0.0
    for i in range(n):
        row = math.log(sum(math.exp(sim[i][j]) for j in range(n)))
        col = math.log(sum(math.exp(sim[j][i]) for j in range(n)))
        total += (row - sim[i][i]) + (col - sim[i][i])
    return total / (2 * n)


@pytest.mark.parametrize("seed", range(5))
def test_align_loss_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    t, s = rng.standard_normal((8, 16)), rng.standard_normal((8, 16))
    assert align_loss(t, s, 0.07).item() == pytest.approx(infonce_oracle(t, s, 0.07), abs=1e-6)


def test_align_loss_examples():
    rng = np.random.default_rng(0)
    assert align_loss(rng.standard_normal((1, 4)), rng.standard_normal((1, 4))).item() == 0.0
    eye = np.eye(2)
    expected = -math.log(math.e / (math.e + 1))
    assert align_loss(eye, eye, 1.0).item() == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.3133, abs=1e-4)


def test_align_loss_errors():
    with pytest.raises(ValueError):
        align_loss(np.zeros((0, 4)), np.zeros((0, 4)))
    with pytest.raises(ValueError):
        align_loss(np.ones((2, 4)), np.ones((3, 4)))


def test_align_loss_gradients():
    rng = np.random.default_rng(1)
    s = Tensor(rng.standard_normal((6, 5)))
    t = Tensor(rng.standard_normal((6, 5)))
    assert nn.finite_diff_check(lambda x: align_loss(x, s, 0.5), t) < 1e-3
    assert nn.finite_diff_check(lambda x: align_loss(t, x, 0.5), s) < 1e-3


def test_embedder_is_frozen_and_cross_modal_close():
    emb = ModalityEmbedder()
    assert emb.parameters() == []
    for word in STYLES:
        vecs = [emb.embed(word, m)[0] for m in MODALITIES]
        for a in vecs:
            assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-6)
        for i in range(3):
            for j in range(i + 1, 3):
                assert vecs[i] @ vecs[j] > 0.9
    assert np.array_equal(emb.embed("old"), ModalityEmbedder().embed("old"))
    with pytest.raises(VocabularyError):
        emb.embed("dragon")
    with pytest.raises(ValueError):
        emb.embed("old", "smell")


def _index():
    rng = np.random.default_rng(2)
    keys = rng.standard_normal((5, 4))
    feats = rng.standard_normal((5, 4)).astype(np.float32)
    return AlignmentIndex(keys, feats, list("abcde"), [f"m{i}" for i in range(5)])


def test_index_search_ranking_and_clamp():
    idx = _index()
    hits = idx.search(idx.unit[2], k=10)
    assert len(hits) == 5
    assert hits[0].label == "c" and hits[0].similarity == pytest.approx(1.0)
    sims = [h.similarity for h in hits]
    assert sims == sorted(sims, reverse=True)
    assert [h.label for h in idx.search(idx.unit[2], 5)] == [h.label for h in hits]


def test_index_persistence_and_empty_state():
    idx = _index()
    back = AlignmentIndex.from_tensors(idx.tensors(), idx.manifest())
    assert np.array_equal(back.unit, idx.unit) and back.labels == idx.labels
    with pytest.raises(IndexStateError):
        AlignmentIndex.empty(4).search(np.ones(4))


def test_normalize_weights():
    np.testing.assert_array_equal(normalize_weights([1, 1]), [0.5, 0.5])
    for bad in ([0, 0], [-1, 2], []):
        with pytest.raises(ValueError):
            normalize_weights(bad)


class _FixedRetriever:
    """Stand-in retriever returning one known feature per word."""

    def __init__(self):
        rng = np.random.default_rng(3)
        self.index = _index()
        self.by_word = {w: i for i, w in enumerate(["old", "proud", "tiptoe"])}
        self.feats = rng.standard_normal((3, 4)).astype(np.float32)

    def retrieve(self, word, k=1, modality="text"):
        from stylefuse.align import RetrievalHit

        i = self.by_word[word]
        return [RetrievalHit(word, f"m{i}", 1.0, self.feats[i].copy())]


def test_interpolation_properties():
    r = _FixedRetriever()
    feat, w, _ = interpolate_styles(r, ["old", "proud"], [1, 0])
    assert np.array_equal(feat, r.feats[0]) and w.tolist() == [1.0, 0.0]
    feat, w, _ = interpolate_styles(r, ["old", "proud"], [0.5, 0.5])
    np.testing.assert_allclose(feat, (r.feats[0].astype(np.float64) + r.feats[1]) / 2, atol=1e-7)
    a, _, _ = interpolate_styles(r, ["old", "proud", "tiptoe"], [0.2, 0.3, 0.5])
    b, _, _ = interpolate_styles(r, ["tiptoe", "proud", "old"], [0.5, 0.3, 0.2])
    np.testing.assert_allclose(a, b, atol=1e-7)
    a2, _, _ = interpolate_styles(r, ["old", "proud"], [0.3, 0.7])
    b2, _, _ = interpolate_styles(r, ["proud", "old"], [0.7, 0.3])
    assert np.array_equal(a2, b2)
    with pytest.raises(ValueError):
        interpolate_styles(r, ["old", "proud"], [0, 0])


def test_training_keeps_embedder_frozen_and_separates_styles():
    rng = np.random.default_rng(4)
    centers = rng.standard_normal((len(STYLES), 32)) * 3
    labels = [s for s in STYLES for _ in range(6)]
    pooled = np.stack([centers[STYLES.index(s)] for s in labels]) + rng.standard_normal((48, 32))
    emb = ModalityEmbedder()
    space = train_alignment(pooled.astype(np.float32), labels, emb,
                            AlignConfig(epochs=10, steps_per_epoch=10))
    assert space.log.embedder_hash_before == space.log.embedder_hash_after == emb.param_hash()
    assert space.log.top1 >= 0.95
    assert space.log.epoch_loss[-1] < space.log.epoch_loss[0]
    idx = AlignmentIndex(space.head.keys(pooled), pooled, labels, list(range(48)))
    retriever = StyleRetriever(emb, space.proj, idx)
    first = [h.motion_id for h in retriever.retrieve("tiptoe", 5)]
    assert first == [h.motion_id for h in retriever.retrieve("tiptoe", 5)]
    assert retriever.retrieve("tiptoe", 1)[0].label == "tiptoe"
