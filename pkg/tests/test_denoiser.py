import numpy as np
import pytest
import torch

from oracles import sts_layer_params, unet_param_count
from posediff.denoiser import STSGCNLayer, UNetConfig, UNetDenoiser, init_params, normalized_adjacency, param_count
from posediff.diffusion import disp_loss
from posediff.errors import ConfigError, NumericError, ShapeError
from posediff.motion_data import Skeleton

CHAIN4 = Skeleton.chain(4).edges


def _cfg(**kw):
    base = dict(channels=(2, 8, 2), n_joints=4, n_frames=3, cond_dim=6, edges=CHAIN4)
    base.update(kw)
    return UNetConfig(**base)


def _same_params(a, b):
    return all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))


def test_same_seed_same_params():
    assert _same_params(init_params(_cfg(), 3), init_params(_cfg(), 3))
    assert not _same_params(init_params(_cfg(), 3), init_params(_cfg(), 4))


def test_toy_param_count_matches_shape_arithmetic():
    cfg = _cfg()
    assert param_count(cfg) == unet_param_count(4, 3, (2, 8, 2), 6)
    assert param_count(init_params(cfg, 0)) == param_count(cfg)


def test_default_param_count_matches_shape_arithmetic():
    cfg = UNetConfig()
    assert param_count(cfg) == unet_param_count(17, 3, (2, 32, 64, 32, 2), 64)


def test_param_count_monotone_and_seed_free():
    assert param_count(_cfg(channels=(2, 16, 2))) > param_count(_cfg(channels=(2, 8, 2)))
    assert param_count(init_params(_cfg(), 0)) == param_count(init_params(_cfg(), 99))


def test_layers_per_level_adds_square_layers():
    one, two = _cfg(), _cfg(layers_per_level=2)
    extra = sts_layer_params(4, 3, 8, 8, 6) * 2
    assert param_count(two) == param_count(one) + extra


@pytest.mark.parametrize("channels", [(2,), (2, 8), (2, 8, 4), (2, 8, 16, 2, 2)])
def test_invalid_ladders_rejected(channels):
    with pytest.raises(ConfigError):
        _cfg(channels=channels)


def test_zero_layer_ladder_rejected():
    with pytest.raises(ConfigError):
        _cfg(layers_per_level=0)


def test_output_shape_random_configs():
    rng = np.random.default_rng(0)
    for i in range(20):
        depth = int(rng.integers(1, 3))
        widths = [int(w) for w in rng.integers(2, 10, depth)]
        ladder = [2] + widths + widths[-2::-1] + [2]
        J = int(rng.integers(2, 8))
        F = int(rng.integers(1, 6))
        cfg = UNetConfig(channels=tuple(ladder), n_joints=J, n_frames=F, cond_dim=4,
                         edges=Skeleton.chain(J).edges, layers_per_level=int(rng.integers(1, 3)))
        net = init_params(cfg, i)
        x = torch.randn(3, F, J, 2, dtype=torch.float64)
        assert net(x, 4, torch.randn(3, 4, dtype=torch.float64)).shape == x.shape


def test_timestep_changes_output():
    net = init_params(_cfg(), 0)
    x = torch.randn(2, 3, 4, 2, dtype=torch.float64)
    h = torch.randn(2, 6, dtype=torch.float64)
    outs = [net(x, t, h) for t in range(1, 11)]
    for a in range(10):
        for b in range(a + 1, 10):
            assert not torch.equal(outs[a], outs[b])


def test_timestep_embeddings_distinct():
    net = init_params(_cfg(), 0)
    e = net.time_embed.encode(torch.arange(1, 11))
    assert torch.unique(e, dim=0).shape[0] == 10


def test_conditioning_changes_output():
    net = init_params(_cfg(), 0)
    x = torch.randn(2, 3, 4, 2, dtype=torch.float64)
    h = torch.randn(2, 6, dtype=torch.float64)
    assert not torch.allclose(net(x, 3, h), net(x, 3, h + 0.1 * torch.randn_like(h)))


def test_shape_mismatch():
    net = init_params(_cfg(), 0)
    with pytest.raises(ShapeError):
        net(torch.zeros(2, 4, 4, 2, dtype=torch.float64), 1)


def test_nonfinite_activation_names_layer():
    net = init_params(_cfg(), 0)
    with torch.no_grad():
        net.encoder[0][0].weight.fill_(float("inf"))
    with pytest.raises(NumericError, match="encoder\\[0\\]\\[0\\]"):
        net(torch.ones(1, 3, 4, 2, dtype=torch.float64), 1)


def test_hard_mask_blocks_non_adjacent_joints():
    adj = Skeleton.chain(4).adjacency
    layer = STSGCNLayer(2, 2, 1, adj, hard_mask=True, self_loops=False, final=True)
    with torch.no_grad():
        layer.spatial.fill_(1.0)
        layer.temporal.fill_(1.0)
        layer.weight.copy_(torch.eye(2, dtype=torch.float64))
    x = torch.zeros(1, 1, 4, 2, dtype=torch.float64)
    x[0, 0, 3] = 1.0  # only joint 3 active; it neighbours joint 2 only
    out = layer(x)[0, 0]
    assert torch.all(out[0] == 0) and torch.all(out[1] == 0) and torch.all(out[3] == 0)
    assert torch.all(out[2] == 1)


def test_spatial_init_is_normalized_adjacency():
    adj = Skeleton.chain(4).adjacency
    layer = STSGCNLayer(2, 3, 2, adj)
    ref = normalized_adjacency(adj)
    assert np.allclose(layer.spatial.detach().numpy(), ref)
    deg = (adj + np.eye(4)).sum(1)
    assert np.allclose(ref, (adj + np.eye(4)) / np.sqrt(np.outer(deg, deg)))


def test_layer_matches_explicit_loops():
    rng = np.random.default_rng(1)
    adj = Skeleton.chain(3).adjacency
    layer = STSGCNLayer(2, 3, 2, adj, final=True)
    layer.reset_parameters(torch.Generator().manual_seed(0))
    x = rng.normal(size=(1, 2, 3, 2))
    out = layer(torch.as_tensor(x)).detach().numpy()[0]
    Tm = layer.temporal.detach().numpy()
    S = layer.spatial.detach().numpy()
    W = layer.weight.detach().numpy()
    ref = np.zeros((2, 3, 3))
    for f in range(2):
        for j in range(3):
            acc = np.zeros(2)
            for g in range(2):
                for i in range(3):
                    acc += Tm[f, g] * S[j, i] * x[0, g, i]
            ref[f, j] = acc @ W
    assert np.allclose(out, ref, atol=1e-12)


def test_disp_loss_gradient_finite_difference():
    net = init_params(_cfg(), 0)
    g = torch.Generator().manual_seed(5)
    x = torch.randn(2, 3, 4, 2, generator=g, dtype=torch.float64)
    h = torch.randn(2, 6, generator=g, dtype=torch.float64)
    eps = torch.randn(2, 3, 4, 2, generator=g, dtype=torch.float64)

    def loss():
        return disp_loss(eps, net(x, 4, h))

    net.zero_grad()
    loss().backward()
    for name, p in net.named_parameters():
        flat = p.data.view(-1)
        ga = p.grad.view(-1)
        fd = torch.zeros_like(ga)
        with torch.no_grad():
            for i in range(flat.numel()):
                o = flat[i].item()
                flat[i] = o + 1e-5
                up = loss().item()
                flat[i] = o - 1e-5
                down = loss().item()
                flat[i] = o
                fd[i] = (up - down) / 2e-5
        rel = (ga - fd).norm() / max(ga.norm(), fd.norm(), 1e-30)
        assert rel < 1e-4, name


def test_unet_is_pure():
    net = init_params(_cfg(), 0)
    x = torch.randn(2, 3, 4, 2, dtype=torch.float64)
    assert torch.equal(net(x, 2), net(x, 2))
    assert isinstance(net, UNetDenoiser)
