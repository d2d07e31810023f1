import numpy as np
import pytest
import torch

from gradcheck import gradient_errors, toy_problem
from oracles import mse_scalar
from posediff.conditioning import (
    ConditionalDenoiser,
    LossWeights,
    build_model,
    concat_input,
    make_condition,
    rec_loss,
    split_past_target,
    total_loss,
)
from posediff.denoiser import UNetConfig
from posediff.errors import ConfigError
from posediff.motion_data import Skeleton, SplitStrategy

UCFG = UNetConfig(channels=(2, 4, 2), cond_dim=4).with_data(4, 3, Skeleton.chain(4).edges, 10)


def _batch(B=2, N=6, k=3, kind="forecasting", seed=0):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(B, N, 4, 2, generator=g, dtype=torch.float64)
    mask = torch.as_tensor(np.stack([SplitStrategy(kind, 1).mask(N, k, key=i) for i in range(B)]))
    return x, mask


def test_total_loss_cases():
    assert total_loss(0.2, 0.3, LossWeights(1, 1)) == pytest.approx(0.5, abs=1e-15)
    assert total_loss(0.2, 0.3, LossWeights(0.7, 0.0)) == pytest.approx(0.7 * 0.2, abs=1e-15)
    assert total_loss(0.2, None, LossWeights(0.7, 1.0)) == 0.2


def test_loss_weight_validation():
    assert LossWeights() == LossWeights(1.0, 1.0)
    with pytest.raises(ConfigError):
        LossWeights(1.5, 1.0)


def test_input_concat_denoiser_sees_clean_past():
    x, mask = _batch()
    past, target = split_past_target(x, mask)
    full = concat_input(past, target * 0 + 7.0, mask)
    assert full.shape[1] == 6
    assert torch.equal(full[:, :3], x[:, :3])
    assert torch.all(full[:, 3:] == 7.0)


def test_input_concat_respects_random_mask():
    x, mask = _batch(B=4, kind="random_imputation")
    past, target = split_past_target(x, mask)
    assert torch.equal(concat_input(past, target, mask), x)


def test_embedding_shape_and_purity():
    model = build_model("e2e_embedding", UCFG, 6, 3, enc_width=3, seed=0).double()
    x, mask = _batch()
    past, _ = split_past_target(x, mask)
    h = model.condition(past)
    assert h.shape == (2, 4)
    assert torch.equal(h, model.condition(past))


def test_make_condition_without_encoder():
    with pytest.raises(ConfigError):
        make_condition("ae_embedding", torch.zeros(1, 3, 4, 2), None)
    assert make_condition("input_concat", torch.ones(1, 3, 4, 2)).shape == (1, 3, 4, 2)


def test_decoder_only_for_ae():
    for s, has_enc, has_dec in [("input_concat", False, False), ("e2e_embedding", True, False),
                                ("ae_embedding", True, True)]:
        m = ConditionalDenoiser(s, UCFG, 6, 3)
        assert (m.encoder is not None) == has_enc and (m.decoder is not None) == has_dec


def test_rec_loss_cases():
    model = build_model("ae_embedding", UCFG, 6, 3, enc_width=3, seed=0).double()
    x, mask = _batch()
    past, _ = split_past_target(x, mask)
    h = model.condition(past)
    decoded = model.decoder(h).detach()

    def rec(target):
        return float(rec_loss(model.decoder, h, target).detach())

    assert rec(decoded) == 0.0
    assert rec(decoded - 0.1) == pytest.approx(0.01, abs=1e-12)
    assert abs(rec(past) - mse_scalar(decoded.numpy(), past.numpy())) < 1e-12
    with pytest.raises(ConfigError):
        rec_loss(None, h, past)


@pytest.mark.parametrize("strategy", ["input_concat", "e2e_embedding", "ae_embedding"])
def test_total_loss_gradients_match_finite_differences(strategy):
    model, loss = toy_problem(strategy)
    errs = gradient_errors(model, loss)
    assert len(errs) == len(list(model.parameters()))
    bad = {k: v for k, v in errs.items() if v[0] >= 1e-4}
    assert not bad


@pytest.mark.parametrize("strategy", ["e2e_embedding", "ae_embedding"])
def test_encoder_receives_gradient(strategy):
    model, loss = toy_problem(strategy, seed=1)
    errs = gradient_errors(model, loss)
    enc = [v for k, v in errs.items() if k.startswith("encoder.")]
    assert enc and all(norm > 0 for _, norm in enc)


def test_predict_returns_target_shape():
    for s in ("input_concat", "e2e_embedding", "ae_embedding"):
        model = build_model(s, UCFG, 6, 3, enc_width=3, seed=0).double()
        x, mask = _batch()
        past, target = split_past_target(x, mask)
        out = model.predict(target, torch.tensor([1, 2]), model.condition(past), mask)
        assert out.shape == target.shape
