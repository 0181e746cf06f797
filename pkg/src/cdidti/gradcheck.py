"""Central finite-difference checks of the backward rules.

Every suite builds a small random instance of one layer (Dim <= 8, at most 6
tokens), reduces its output to a scalar with fixed random weights, and
compares the reverse-mode gradient of every input and parameter tensor with
central differences. Suites run in float64.

An entry passes when ``|analytic - numeric| <= atol`` or when the relative
error ``|analytic - numeric| / max(|analytic|, |numeric|)`` is at most
``rtol``. A failing entry is probed again with steps 10 and 100 times
smaller before it counts as a failure: a step of 1e-3 may straddle a ReLU or
LeakyReLU kink, where the difference quotient mixes both slopes, or sit on a
region of high curvature where the quadratic truncation term dominates. A wrong
backward rule fails at every step size.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import ops
from .alignment import gram_loss, gram_volume, modality_gram_loss
from .data.features import GraphInput, ModalFeatures
from .extractors import GatLayerParams, MhsaBlockParams, gat_layer, hybrid_pool, mhsa_block
from .fusion_early import BcaParams, McaParams, bca, mca
from .fusion_late import DofParams, HgcnfParams, dof, hgcnf
from .model import EntityDims, Head, InputDims, ModelConfig, init_params, make_batch
from .params import named_tensors
from .tensor import Tensor, default_dtype, inject_sign_flip, no_grad, parameter

EPS = 1e-3
RTOL = 1e-3
ATOL = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    passed: bool
    seconds: float = 0.0
    ops: set = field(default_factory=set)
    worst: str = ""


def _scalarize(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    w = rng.uniform(-1, 1, size=out.shape)
    return lambda y: ops.sum(y * w)


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: dict[str, Tensor],
    eps: float = EPS,
    rtol: float = RTOL,
    atol: float = ATOL,
    max_entries: int | None = 8,
    seed: int = 0,
    name: str = "",
) -> CheckResult:
    """Compare d fn / d tensor with central differences on sampled entries.

    ``fn`` must rebuild the graph from ``tensors`` on every call and return a
    scalar. ``max_entries`` caps the number of probed entries per tensor.
    """
    rng = np.random.default_rng(seed)
    for t in tensors.values():
        t.grad = None
        t.requires_grad = True
    loss = fn()
    used = {n.op for n in loss.graph()}
    loss.backward()
    worst, worst_name = 0.0, ""
    for tname, t in tensors.items():
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        n = flat.size
        picks = np.arange(n) if max_entries is None or n <= max_entries else rng.choice(n, max_entries, replace=False)
        for i in picks:
            a = float(analytic.reshape(-1)[i])
            err = _entry_error(fn, flat, i, a, eps, atol / rtol)
            for shrink in (1e-1, 1e-2):
                if err <= rtol:
                    break
                err = min(err, _entry_error(fn, flat, i, a, eps * shrink, atol / rtol))
            if err > worst:
                worst, worst_name = err, f"{tname}[{i}]"
    return CheckResult(name, worst, worst <= rtol, ops=used, worst=worst_name)


def _entry_error(fn, flat: np.ndarray, i: int, analytic: float, eps: float, floor: float) -> float:
    """Relative error with the denominator floored at ``atol/rtol``.

    The floor makes ``err <= rtol`` equivalent to passing either the absolute
    or the relative tolerance.
    """
    orig = flat[i]
    with no_grad():
        flat[i] = orig + eps
        up = float(fn().data)
        flat[i] = orig - eps
        down = float(fn().data)
    flat[i] = orig
    numeric = (up - down) / (2 * eps)
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _u(rng, *shape, scale=1.0) -> Tensor:
    return parameter(rng.uniform(-scale, scale, size=shape))


def _leaves(tree, prefix: str) -> dict[str, Tensor]:
    return {f"{prefix}.{k}": t for k, t in named_tensors(tree)}


def _suite(build):
    def run(rng):
        fn, tensors = build(rng)
        reducer = _scalarize(fn(), rng)
        return (lambda: reducer(fn())), tensors
    return run


# Primitive suites

@_suite
def _matmul(rng):
    a, b = _u(rng, 5, 7), _u(rng, 7, 3)
    return (lambda: a @ b), {"a": a, "b": b}


@_suite
def _softmax(rng):
    x = _u(rng, 6)
    return (lambda: ops.softmax(x)), {"x": x}


@_suite
def _layer_norm(rng):
    x, g, b = _u(rng, 3, 5), _u(rng, 5), _u(rng, 5)
    return (lambda: ops.layer_norm(x, g, b, 1e-5)), {"x": x, "gain": g, "bias": b}


@_suite
def _elementwise(rng):
    a, b = _u(rng, 3, 4), parameter(rng.uniform(0.5, 1.5, size=(3, 4)))
    return (
        lambda: ops.concat(
            [a + b, a - b, a * b, a / b, ops.sqrt(b), ops.log(b), ops.exp(a), ops.sigmoid(a),
             ops.relu(a), ops.leaky_relu(a), a * 2.0 + 1.0, ops.transpose(a).reshape((3, 4))],
            axis=-1,
        )
    ), {"a": a, "b": b}


@_suite
def _reductions(rng):
    x = _u(rng, 4, 5)
    return (
        lambda: ops.concat(
            [ops.sum(x, axis=0), ops.mean(x, axis=0), ops.max(x, axis=0), ops.var(x, axis=0),
             x[1:3, ::2].reshape((6,)), ops.cosine_similarity(x[:, :3], x[:, 2:], axis=0).sum(axis=0, keepdims=True)],
            axis=0,
        )
    ), {"x": x}


@_suite
def _l2_cosine(rng):
    a, b = _u(rng, 4, 5), _u(rng, 4, 5)
    return (lambda: ops.concat([ops.l2_normalize(a), ops.cosine_similarity(a, b).reshape((4, 1))], axis=-1)), {"a": a, "b": b}


@_suite
def _det3(rng):
    g = _u(rng, 2, 3, 3)
    return (lambda: ops.det3(g)), {"G": g}


@_suite
def _conv1d(rng):
    x, k = _u(rng, 6, 4), _u(rng, 3, 4, 5)
    return (lambda: ops.conv1d(x, k)), {"x": x, "kernel": k}


# Layer suites

@_suite
def _mhsa(rng):
    p = MhsaBlockParams.init(rng, 8, 2)
    x = _u(rng, 2, 5, 8)
    return (lambda: mhsa_block(x, p)), {"x": x, **_leaves(p, "mhsa")}


def _path_graph(rng, v: int, d: int):
    g = GraphInput(rng.uniform(-1, 1, size=(v, d)), np.array([(i, i + 1) for i in range(v - 1)]))
    return g


@_suite
def _gat(rng):
    p = GatLayerParams.init(rng, 8)
    g = _path_graph(rng, 5, 8)
    x = parameter(g.node_features)
    adj = g.adjacency()
    return (lambda: gat_layer(x, adj, p)), {"x": x, **_leaves(p, "gat")}


@_suite
def _hybrid_pool(rng):
    x = _u(rng, 2, 7, 4)
    counts = np.array([7, 5])
    return (lambda: hybrid_pool(x, counts)), {"x": x}


@_suite
def _mca(rng):
    p = McaParams.init(rng, 8, 2)
    xs = [_u(rng, 2, 6, 8) for _ in range(3)]
    return (lambda: mca(*xs, p)), {"xt": xs[0], "xg": xs[1], "xf": xs[2], **_leaves(p, "mca")}


@_suite
def _bca(rng):
    p = BcaParams.init(rng, 8, 2)
    d, t = _u(rng, 2, 6, 8), _u(rng, 2, 6, 8)
    return (lambda: bca(d, t, p)), {"d": d, "t": t, **_leaves(p, "bca")}


@_suite
def _hgcnf(rng):
    p = HgcnfParams.init(rng, 8)
    d, t = _u(rng, 2, 6, 8), _u(rng, 2, 6, 8)
    return (lambda: hgcnf(d, t, p)), {"d": d, "t": t, **_leaves(p, "hgcnf")}


@_suite
def _dof(rng):
    p = DofParams.init(rng, 8)
    fs = [_u(rng, 2, 6, 8) for _ in range(3)]
    return (lambda: dof(*fs, p, mask_override=1.0)), {"ft": fs[0], "fg": fs[1], "ff": fs[2], **_leaves(p, "dof")}


@_suite
def _gram(rng):
    xs = [_u(rng, 4, 6, 8) for _ in range(3)]
    return (
        lambda: modality_gram_loss(*xs, tau=0.1, negatives="self")[0]
        - modality_gram_loss(*xs, tau=0.1, negatives="cross")[0] * 0.5
    ), {"xt": xs[0], "xg": xs[1], "xf": xs[2]}


@_suite
def _heads(rng):
    h = Head.init(rng, 8)
    x = _u(rng, 3, 8)
    return (lambda: h(x)), {"x": x, **_leaves(h, "head")}


def tiny_pairs(rng, n: int = 2, dim_in: int = 4):
    def entity(kind, i):
        g = _path_graph(rng, int(rng.integers(3, 6)), dim_in)
        return ModalFeatures(f"{kind}{i}", kind, rng.uniform(-1, 1, (5, dim_in)), g, rng.uniform(-1, 1, (3, dim_in)))
    return [(entity("drug", i), entity("target", i)) for i in range(n)]


def _model_suite(rng):
    from .model import classification_loss, forward, total_loss

    cfg = ModelConfig(hidden_dim=8, heads=2, gat_layers=2)
    pairs = tiny_pairs(rng)
    dims = InputDims(EntityDims.of(pairs[0][0]), EntityDims.of(pairs[0][1]))
    params = init_params(cfg, dims, seed=int(rng.integers(1 << 30)))
    batch = make_batch(pairs, [0, 1])

    def fn():
        out = forward(batch, params, cfg, mask_override=1.0)
        return total_loss(classification_loss(out, batch.labels), out.align_loss, cfg.loss_weight)

    return fn, _leaves(params, "model")


SUITES: dict[str, Callable] = {
    "matmul": _matmul,
    "softmax": _softmax,
    "layer_norm": _layer_norm,
    "elementwise": _elementwise,
    "reductions": _reductions,
    "l2_cosine": _l2_cosine,
    "det3": _det3,
    "conv1d": _conv1d,
    "mhsa": _mhsa,
    "gat": _gat,
    "hybrid_pool": _hybrid_pool,
    "mca": _mca,
    "bca": _bca,
    "hgcnf": _hgcnf,
    "dof": _dof,
    "gram_loss": _gram,
    "heads": _heads,
    "model": _model_suite,
}


# Suites whose gradient is sparse (max, masking), so sampled entries could miss it.
EXHAUSTIVE = frozenset({"hybrid_pool", "reductions"})


def run_suites(names=None, flip: str | None = None, seed: int = 0, max_entries: int | None = 8) -> list[CheckResult]:
    """Run the named suites (all by default), optionally with one backward rule negated."""
    names = list(SUITES) if names is None else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown gradcheck suites: {unknown}")
    results = []
    order = list(SUITES)
    for name in names:
        rng = np.random.default_rng([seed, order.index(name)])
        entries = None if name in EXHAUSTIVE else max_entries
        start = time.perf_counter()
        with default_dtype(np.float64):
            fn, tensors = SUITES[name](rng)
            if flip is None:
                res = check_gradients(fn, tensors, max_entries=entries, seed=seed, name=name)
            else:
                with inject_sign_flip(flip):
                    res = check_gradients(fn, tensors, max_entries=entries, seed=seed, name=name)
        res.seconds = time.perf_counter() - start
        results.append(res)
    return results


def format_table(results: list[CheckResult]) -> str:
    lines = [f"{'layer':<14}{'max_rel_err':>14}  {'status':<6} {'seconds':>8}"]
    for r in results:
        lines.append(f"{r.name:<14}{r.max_rel_err:>14.3e}  {'PASS' if r.passed else 'FAIL':<6} {r.seconds:>8.2f}")
    return "\n".join(lines)
