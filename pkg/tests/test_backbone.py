import numpy as np
import pytest
import torch

from occflow.backbone import BackboneConfig, GlobalGraph, VectorNetEncoder, VGGEncoder, masked_attention
from occflow.errors import ShapeError

from conftest import fd_param_check

TINY = BackboneConfig(grid_size=16, vgg_widths=(4, 4, 6, 6, 6), vgg_depths=(1, 1, 2, 1, 1), hidden_dim=32, vector_dim=8)


def random_vectors(B=2, elements=(3, 5), per=4, pad=3, seed=0, dtype=torch.float32):
    """Rows grouped by dense id, followed by zeroed padding rows."""
    g = torch.Generator().manual_seed(seed)
    R = max(elements) * per + pad
    vec = torch.zeros(B, R, 9, dtype=dtype)
    valid = torch.zeros(B, R)
    for b, n in enumerate(elements):
        rows = n * per
        vec[b, :rows, :8] = torch.randn(rows, 8, generator=g, dtype=dtype)
        vec[b, :rows, 8] = torch.arange(n).repeat_interleave(per).to(dtype)
        valid[b, :rows] = 1
    return vec, valid


def test_vgg_pyramid_shapes():
    enc = VGGEncoder(TINY)
    feats = enc(torch.randn(2, 14, 16, 16))
    assert [tuple(f.shape) for f in feats] == [(2, 32, 16 // s, 16 // s) for s in (1, 2, 4, 8, 16)]


def test_vgg_default_layout():
    enc = VGGEncoder(BackboneConfig())
    convs = [m for m in enc.stages.modules() if isinstance(m, torch.nn.Conv2d)]
    assert len(convs) == 13
    assert [c.out_channels for c in convs] == [64] * 2 + [128] * 2 + [256] * 3 + [512] * 6
    assert all(c.kernel_size == (3, 3) for c in convs)


def test_vgg_rejects_wrong_raster():
    enc = VGGEncoder(TINY)
    with pytest.raises(ShapeError, match="raster"):
        enc(torch.randn(1, 14, 32, 32))
    with pytest.raises(ShapeError):
        enc(torch.randn(1, 3, 16, 16))


def test_vgg_zero_input_finite_and_batch_independent():
    enc = VGGEncoder(TINY)
    assert all(torch.isfinite(f).all() for f in enc(torch.zeros(1, 14, 16, 16)))
    x = torch.randn(3, 14, 16, 16)
    full = enc(x)
    single = enc(x[1:2])
    for a, b in zip(full, single):
        torch.testing.assert_close(a[1:2], b, rtol=1e-5, atol=1e-5)


def test_config_validation():
    with pytest.raises(ShapeError):
        BackboneConfig(hidden_dim=500)
    with pytest.raises(ShapeError):
        BackboneConfig(grid_size=100)


def test_vectornet_shapes_and_mask():
    enc = VectorNetEncoder(TINY)
    vec, valid = random_vectors()
    V, elem_valid = enc(vec, valid)
    assert V.shape == (2, 32, 5)
    assert elem_valid.tolist() == [[True] * 3 + [False] * 2, [True] * 5]
    assert not V[0, :, 3:].any()


def test_vectornet_no_elements_gives_zeros():
    enc = VectorNetEncoder(TINY)
    vec = torch.zeros(2, 7, 9)
    V, elem_valid = enc(vec, torch.zeros(2, 7))
    assert V.shape == (2, 32, 1)
    assert not elem_valid.any()
    assert torch.equal(V, torch.zeros_like(V))


def test_vectornet_row_permutation_invariance():
    enc = VectorNetEncoder(TINY)
    vec, valid = random_vectors()
    V, _ = enc(vec, valid)
    perm = torch.randperm(vec.shape[1], generator=torch.Generator().manual_seed(3))
    Vp, _ = enc(vec[:, perm], valid[:, perm])
    torch.testing.assert_close(V, Vp, rtol=1e-5, atol=1e-6)


def test_vectornet_element_relabel_equivariance():
    enc = VectorNetEncoder(TINY)
    vec, valid = random_vectors(B=1, elements=(4,))
    V, _ = enc(vec, valid)
    relabel = torch.tensor([2.0, 0.0, 3.0, 1.0])
    vec2 = vec.clone()
    rows = valid[0] > 0
    vec2[0, rows, 8] = relabel[vec[0, rows, 8].long()]
    V2, _ = enc(vec2, valid)
    torch.testing.assert_close(V2[:, :, relabel.long()], V, rtol=1e-5, atol=1e-6)


def test_vectornet_masked_rows_are_inert():
    enc = VectorNetEncoder(TINY)
    vec, valid = random_vectors()
    V, _ = enc(vec, valid, n_max=5)
    junk = vec.clone()
    pad = valid == 0
    junk[pad] = torch.randn(int(pad.sum()), 9) * 100
    junk[pad, 8] = 1.0  # even a plausible id must not leak
    V2, _ = enc(junk, valid, n_max=5)
    assert torch.equal(V, V2)


def test_single_token_attention_returns_its_value():
    torch.manual_seed(0)
    g = GlobalGraph(4)
    x = torch.randn(1, 3, 4)
    valid = torch.tensor([[False, True, False]])
    out = g(x, valid)
    v = g.v(x)
    torch.testing.assert_close(out[0, 0], v[0, 1])
    torch.testing.assert_close(out[0, 2], v[0, 1])


def test_masked_keys_get_zero_weight():
    q, k, v = torch.randn(2, 5, 8), torch.randn(2, 6, 8), torch.randn(2, 6, 8)
    valid = torch.tensor([[1, 1, 0, 1, 0, 0], [0, 0, 0, 0, 0, 0]])
    out = masked_attention(q, k, v, valid)
    k2, v2 = k.clone(), v.clone()
    k2[valid == 0] = 1e3
    v2[valid == 0] = -1e3
    assert torch.equal(out, masked_attention(q, k2, v2, valid))
    assert not out[1].any()


def test_vgg_gradients_match_finite_differences():
    torch.manual_seed(1)
    enc = VGGEncoder(TINY).double()
    x = torch.randn(1, 14, 16, 16, dtype=torch.float64)
    w = [torch.randn_like(f) for f in enc(x)]

    def loss():
        return sum((f * wi).sum() for f, wi in zip(enc(x), w))

    params = [(n, p) for n, p in enc.named_parameters() if n.endswith("weight")]
    checks = fd_param_check(loss, params)
    assert len(checks) >= 5
    assert max(c[-1] for c in checks) <= 1e-3, checks


def test_vectornet_gradients_match_finite_differences():
    torch.manual_seed(2)
    enc = VectorNetEncoder(TINY).double()
    vec, valid = random_vectors(dtype=torch.float64, seed=4)
    V0, _ = enc(vec, valid)
    w = torch.randn_like(V0)

    def loss():
        return (enc(vec, valid)[0] * w).sum()

    checks = fd_param_check(loss, list(enc.named_parameters()))
    assert len(checks) >= 5
    rel = np.array([c[-1] for c in checks])
    assert rel.max() <= 1e-3, checks
