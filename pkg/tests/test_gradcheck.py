import numpy as np
import pytest

from cdidti import ops
from cdidti.gradcheck import SUITES, check_gradients, format_table, run_suites
from cdidti.tensor import Tensor, default_dtype, parameter

FAST = [n for n in SUITES if n != "model"]
# Every path through multi-head attention passes two reshapes (split, merge),
# so a flipped reshape rule cancels there.
CANCELLING = {"reshape"}


@pytest.fixture(scope="module")
def baseline():
    return {r.name: r for r in run_suites(FAST)}


def test_fresh_suites_pass(baseline):
    failed = [r for r in baseline.values() if not r.passed]
    assert not failed, format_table(failed)


def test_table_lists_error_per_layer(baseline):
    table = format_table(list(baseline.values()))
    for name, r in baseline.items():
        assert f"{r.max_rel_err:.3e}" in next(line for line in table.splitlines() if line.startswith(name))
    assert all(0 < r.max_rel_err <= 1e-3 for r in baseline.values())


def _ops(baseline):
    return sorted(set().union(*(r.ops for r in baseline.values())) - {"leaf"})


def test_fault_injection_fails_exactly_the_dependent_suites(baseline):
    for op in _ops(baseline):
        failed = {r.name for r in run_suites(FAST, flip=op) if not r.passed}
        using = {n for n, r in baseline.items() if op in r.ops}
        assert failed <= using, (op, failed - using)
        assert failed, op
        if op not in CANCELLING:
            assert failed == using, (op, using - failed)


@pytest.mark.parametrize("op", ["matmul", "softmax", "layer_norm", "det3", "conv1d"])
def test_flipped_primitive_fails_its_own_suite(op):
    assert not run_suites([op], flip=op)[0].passed
    assert run_suites([op])[0].passed


def test_subset_instances_match_full_run(baseline):
    r = run_suites(["det3"])[0]
    assert r.max_rel_err == baseline["det3"].max_rel_err


def test_unknown_suite():
    with pytest.raises(KeyError):
        run_suites(["nope"])


def test_check_gradients_detects_wrong_rule():
    with default_dtype(np.float64):
        x = parameter(np.array([0.3, -1.2, 2.0]))

        def fn():
            y = Tensor(x.data * x.data)  # detached: analytic gradient is zero
            return ops.sum(x * 1.0) + ops.sum(y)

        assert not check_gradients(fn, {"x": x}).passed
