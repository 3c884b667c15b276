import numpy as np
import pytest

from stylefuse import nn
from stylefuse.motion import generate_motion
from stylefuse.nn import Tensor
from stylefuse.vae import (FrameRangeError, MotionVAE, Posterior, StyleEncoder, TrainingError,
                           VaeConfig, VaeTrainConfig, kl_divergence, pretrain_style_encoder,
                           vae_loss)

SMALL = VaeConfig(latent_tokens=2, latent_dim=4, blocks=1, hidden=8, heads=2, min_frames=4)


def _frames(n=3, num_frames=40, style="old"):
    # short clips are cut from 40-frame sequences (the generator's minimum)
    full = [generate_motion("walk", style, i, max(num_frames, 40)).frames for i in range(n)]
    return np.stack([f[:num_frames] for f in full])


def test_kl_closed_form():
    one = Posterior(Tensor(np.ones((1, 1, 1))), Tensor(np.zeros((1, 1, 1))))
    assert kl_divergence(one).item() == pytest.approx(0.5, abs=1e-12)
    std = Posterior(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros((2, 3, 4))))
    assert kl_divergence(std).item() == 0.0


def test_zero_eps_sample_is_mean_and_encode_deterministic():
    model = MotionVAE(SMALL)
    x = _frames(2)
    p1, p2 = model.encode(x), model.encode(x)
    assert np.array_equal(p1.mean.data, p2.mean.data)
    assert np.array_equal(p1.logvar.data, p2.logvar.data)
    assert np.array_equal(p1.sample(np.zeros(p1.mean.shape)).data, p1.mean.data)


def test_beta_zero_loss_is_reconstruction():
    model = MotionVAE(SMALL)
    total, rec, _ = vae_loss(model, _frames(2), beta=0.0)
    assert total.item() == rec.item()
    with pytest.raises(ValueError):
        vae_loss(model, _frames(2), beta=-1.0)


def test_frame_range_contract():
    model = MotionVAE(VaeConfig(min_frames=40, max_frames=200))
    with pytest.raises(FrameRangeError):
        model.encode(np.zeros((1, 20, 54), np.float32))


def test_vae_loss_parameter_gradients():
    model = MotionVAE(SMALL)
    x = _frames(2, num_frames=6)
    model.normalizer.fit(x)
    eps = np.random.default_rng(0).standard_normal((2, 2, 4))
    params = [model.encoder.in_proj.weight, model.decoder.out.weight]
    err = nn.finite_diff_check_params(lambda: vae_loss(model, x, 0.1, eps=eps)[0], params)
    assert err < 1e-3


def test_decode_shape_and_style_encoder_outputs():
    model = MotionVAE(SMALL)
    x = _frames(3, num_frames=12)
    model.normalizer.fit(x)
    z = model.encode(x).mean
    assert model.decode(z, 12).shape == (3, 12, 54)
    enc = StyleEncoder(model)
    tok, pooled = enc(x)
    assert tok.shape == (3, 2, 4)
    np.testing.assert_allclose(pooled.data, tok.data.mean(axis=1), rtol=1e-6)
    assert np.array_equal(enc.pooled(x), pooled.data)


TINY_TRAIN = dict(stage1_steps=15, stage2_steps=15, warmup_steps=5, batch_size=4)


@pytest.mark.parametrize("stages", ["both", "style_only", "content_only"])
def test_pretraining_arms_produce_working_encoders(stages):
    content, style = _frames(6, 40, "neutral"), _frames(6, 40, "tiptoe")
    enc, _, log = pretrain_style_encoder(content, style, SMALL,
                                         VaeTrainConfig(stages=stages, **TINY_TRAIN))
    assert np.all(np.isfinite(enc.pooled(style)))
    assert set(log.stage) == {"both": {"content", "style"}, "style_only": {"style"},
                              "content_only": {"content"}}[stages]


def test_pretraining_reproducible_exactly():
    content, style = _frames(6, 40, "neutral"), _frames(6, 40, "tiptoe")
    runs = [pretrain_style_encoder(content, style, SMALL, VaeTrainConfig(**TINY_TRAIN))
            for _ in range(2)]
    assert runs[0][2].loss == runs[1][2].loss
    for (k, a), b in zip(runs[0][0].state_dict().items(), runs[1][0].state_dict().values()):
        assert np.array_equal(a, b), k


def test_divergence_raises_with_last_good_state():
    content = _frames(4, 40, "neutral")
    content[0, 0, 0] = np.nan
    with pytest.raises(TrainingError) as info:
        pretrain_style_encoder(content, content, SMALL, VaeTrainConfig(**TINY_TRAIN))
    assert info.value.last_good is not None
