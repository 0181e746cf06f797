import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdidti import ops
from cdidti.fusion_early import BcaParams
from cdidti.fusion_late import DofParams, HgcnfParams, LateParams, dof, hgcnf, orthogonal_residual, per_modality_interactions
from cdidti.gradcheck import check_gradients
from cdidti.params import named_tensors
from cdidti.tensor import Tensor, default_dtype

from conftest import rand


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def ref_conv(x, k):
    w = k.shape[0]
    p = (w - 1) // 2
    xp = np.pad(x, ((p, p), (0, 0)))
    return sum(xp[j : j + x.shape[0]] @ k[j] for j in range(w))


def ref_hgcnf(d, t, p: HgcnfParams):
    c = d @ t.T
    fd = d @ p.lin_d.weight.data + p.lin_d.bias.data
    ft = t @ p.lin_t.weight.data + p.lin_t.bias.data
    fd2 = ref_conv(fd, p.conv_d.data) + _softmax(c) @ ft + fd
    ft2 = ref_conv(ft, p.conv_t.data) + _softmax(c.T) @ fd + ft
    return np.concatenate([fd2, ft2], axis=-1) @ p.out.weight.data + p.out.bias.data


def _select_first(p: HgcnfParams, dim):
    """Make the output map return the drug-side stream unchanged."""
    p.out.weight.data[:] = np.vstack([np.eye(dim), np.zeros((dim, dim))])
    p.out.bias.data[:] = 0


# hgcnf

def test_hgcnf_single_position(f64, rng):
    p = HgcnfParams.init(rng, 4)
    _select_first(p, 4)
    d, t = rng.uniform(-1, 1, (1, 4)), rng.uniform(-1, 1, (1, 4))
    fd = d @ p.lin_d.weight.data + p.lin_d.bias.data
    ft = t @ p.lin_t.weight.data + p.lin_t.bias.data
    expected = fd @ p.conv_d.data[1] + ft + fd
    np.testing.assert_allclose(hgcnf(Tensor(d), Tensor(t), p).data, expected, atol=1e-12)


def test_hgcnf_reduced_form(f64, rng):
    p = HgcnfParams.init(rng, 4)
    for lin in (p.lin_d, p.lin_t):
        lin.weight.data[:] = np.eye(4)
        lin.bias.data[:] = 0
    p.conv_d.data[:] = 0
    p.conv_t.data[:] = 0
    _select_first(p, 4)
    d, t = rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (3, 4))
    np.testing.assert_allclose(hgcnf(Tensor(d), Tensor(t), p).data, _softmax(d @ t.T) @ t + d, atol=1e-12)


def test_hgcnf_matches_reference(f64, rng):
    p = HgcnfParams.init(rng, 4)
    for lin in (p.lin_d, p.lin_t, p.out):
        lin.bias.data[:] = rng.uniform(-1, 1, lin.bias.shape)
    d, t = rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (3, 4))
    np.testing.assert_allclose(hgcnf(Tensor(d), Tensor(t), p).data, ref_hgcnf(d, t, p), atol=1e-5)


def test_hgcnf_shape_mismatch(rng):
    with pytest.raises(ValueError):
        hgcnf(rand(rng, 3, 4), rand(rng, 2, 4), HgcnfParams.init(rng, 4))
    with pytest.raises(ValueError, match="odd"):
        HgcnfParams.init(rng, 4, window=2)


# orthogonal residual

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8))
def test_residual_orthogonal(seed, d):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-1, 1, (5, d)), rng.uniform(-1, 1, (5, d))
    r = orthogonal_residual(Tensor(a), Tensor(b)).data
    assert np.abs((a * r).sum(axis=-1)).max() <= 1e-5


def test_residual_parallel_is_zero(f64, rng):
    a = rng.uniform(-1, 1, (3, 4))
    r = orthogonal_residual(Tensor(a), Tensor(-2.5 * a)).data
    np.testing.assert_allclose(r, 0.0, atol=1e-12)


def test_residual_zero_reference_keeps_b(rng):
    b = rng.uniform(-1, 1, (2, 3)).astype(np.float32)
    r = orthogonal_residual(Tensor(np.zeros((2, 3))), Tensor(b)).data
    np.testing.assert_array_equal(r, b)


def test_residual_literal_mode(f64, rng):
    a, b = rng.uniform(-1, 1, (2, 3)), rng.uniform(-1, 1, (2, 3))
    coef = (a * b).sum(-1, keepdims=True) / (a * a).sum(-1, keepdims=True)
    np.testing.assert_allclose(orthogonal_residual(Tensor(a), Tensor(b), "literal").data, a - coef * a, atol=1e-12)
    with pytest.raises(ValueError):
        orthogonal_residual(Tensor(a), Tensor(b), "other")


# dof

def _feats(rng, shape=(2, 6, 8)):
    return [rand(rng, *shape) for _ in range(3)]


def test_dof_masks_binary_and_shape(rng):
    p = DofParams.init(rng, 8)
    trace = {}
    out = dof(*_feats(rng), p, threshold=0.0, trace=trace)
    assert out.shape == (2, 6, 8)
    for m in "tgf":
        assert set(np.unique(trace[f"mask_{m}"])) <= {0.0, 1.0}
        np.testing.assert_array_equal(trace[f"mask_{m}"], (trace[f"sim_{m}"] <= 0.0).astype(np.float32))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-1, 1), st.floats(-1, 1))
def test_dof_mask_monotone_in_threshold(seed, t1, t2):
    lo, hi = sorted((t1, t2))
    rng = np.random.default_rng(seed)
    p = DofParams.init(rng, 4)
    feats = [Tensor(rng.uniform(-1, 1, (1, 5, 4))) for _ in range(3)]
    a, b = {}, {}
    dof(*feats, p, threshold=lo, trace=a)
    dof(*feats, p, threshold=hi, trace=b)
    for m in "tgf":
        assert (b[f"mask_{m}"] >= a[f"mask_{m}"]).all()


def test_dof_threshold_minus_one_blocks_value_path(rng):
    p = DofParams.init(rng, 8)
    feats = _feats(rng)
    trace = {}
    w = rng.uniform(-1, 1, (2, 6, 8))
    loss = ops.sum(dof(*feats, p, threshold=-1.0, trace=trace) * w)
    loss.backward()
    for m in "tgf":
        assert (trace[f"mask_{m}"] == 0).all()
    assert not np.any(p.tv.weight.grad) and not np.any(p.tv.bias.grad)
    p.tv.weight.data[:] = rng.uniform(-1, 1, p.tv.weight.shape)
    again = ops.sum(dof(*(Tensor(f.data) for f in feats), p, threshold=-1.0) * w)
    assert again.item() == loss.item()


def test_dof_threshold_range(rng):
    with pytest.raises(ValueError):
        dof(*_feats(rng), DofParams.init(rng, 8), threshold=1.5)


@pytest.mark.parametrize("dim", [4, 8, 12])
def test_dof_shape_any_dim(rng, dim):
    assert dof(*_feats(rng, (1, 6, dim)), DofParams.init(rng, dim)).shape == (1, 6, dim)


# per-modality interactions

def _late(rng, dim=8, heads=2):
    return LateParams(BcaParams.init(rng, dim, heads), HgcnfParams.init(rng, dim), BcaParams.init(rng, dim, heads))


def test_interactions_zero_in_zero_out(rng):
    p = _late(rng)
    z = [Tensor(np.zeros((1, 6, 8))) for _ in range(3)]
    for out in per_modality_interactions(z, z, p):
        assert out.shape == (1, 6, 8)
        np.testing.assert_array_equal(out.data, 0.0)


def test_late_fusion_gradient_masks_one(rng):
    with default_dtype(np.float64):
        late, dp = _late(rng), DofParams.init(rng, 8)
        d, t = _feats(rng), _feats(rng)
        w = rng.uniform(-1, 1, (2, 6, 8))
        tensors = {f"d{i}": x for i, x in enumerate(d)} | {f"t{i}": x for i, x in enumerate(t)}
        tensors |= {f"late.{k}": v for k, v in named_tensors(late)} | {f"dof.{k}": v for k, v in named_tensors(dp)}

        def fn():
            ft, fg, ff = per_modality_interactions(d, t, late)
            return ops.sum(dof(ft, fg, ff, dp, mask_override=1.0) * w)

        res = check_gradients(fn, tensors, max_entries=6)
    assert res.passed, res
