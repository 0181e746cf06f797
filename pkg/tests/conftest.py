import numpy as np
import pytest

from cdidti.data.features import GraphInput, ModalFeatures
from cdidti.tensor import Tensor, default_dtype, no_grad


def numeric_grad(fn, x: Tensor, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``x``."""
    flat = x.data.reshape(-1)
    out = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        with no_grad():
            flat[i] = orig + eps
            up = float(fn().data)
            flat[i] = orig - eps
            down = float(fn().data)
        flat[i] = orig
        out[i] = (up - down) / (2 * eps)
    return out.reshape(x.shape)


def assert_grads_match(fn, tensors, rtol=1e-3, atol=1e-5, eps=1e-6):
    """Analytic vs numeric gradient for every tensor in float64."""
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    fn().backward()
    for t in tensors:
        num = numeric_grad(fn, t, eps)
        ana = np.zeros_like(num) if t.grad is None else t.grad
        np.testing.assert_allclose(ana, num, rtol=rtol, atol=atol)


def rand(rng, *shape, lo=-1.0, hi=1.0, grad=True):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=grad)


@pytest.fixture
def f64():
    with default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def path_graph(rng, v, d):
    return GraphInput(rng.uniform(-1, 1, size=(v, d)).astype(np.float32), np.array([(i, i + 1) for i in range(v - 1)]).reshape(-1, 2))


def make_pairs(rng, n=3, dim_in=4, text_len=5, func_len=3):
    def entity(kind, i):
        g = path_graph(rng, int(rng.integers(2, 6)), dim_in)
        return ModalFeatures(
            f"{kind[0].upper()}{i}", kind,
            rng.uniform(-1, 1, (text_len, dim_in)).astype(np.float32), g,
            rng.uniform(-1, 1, (func_len, dim_in)).astype(np.float32),
        )
    return [(entity("drug", i), entity("target", i)) for i in range(n)]
