import numpy as np
import pytest

from cdidti.data.dataset import InteractionSample
from cdidti.data.splits import BINDINGDB_FRACTIONS, InfeasibleSplitError, SplitSpec, make_split, split_dataset
from cdidti.data.synthetic import generate_synthetic


@pytest.fixture(scope="module")
def big():
    return generate_synthetic(50, 80, 1500, seed=7)


def _ids(samples, attr):
    return {getattr(s, attr) for s in samples}


def _keys(samples):
    return [id(s) for s in samples]


def test_disjointness_over_100_seeds(big):
    for seed in range(100):
        tr, va, te = make_split(big.samples, SplitSpec("cold_drug", (0.6, 0.2, 0.2), seed))
        assert not _ids(tr, "drug_id") & _ids(te, "drug_id")
        assert not _ids(tr, "drug_id") & _ids(va, "drug_id")
        assert len(tr) + len(va) + len(te) == len(big)

        tr, va, te = make_split(big.samples, SplitSpec("cold_target", (0.6, 0.2, 0.2), seed))
        assert not _ids(tr, "target_id") & _ids(te, "target_id")
        assert len(tr) + len(va) + len(te) == len(big)

        tr, va, te = make_split(big.samples, SplitSpec("cold_pair", (0.6, 0.2, 0.2), seed))
        assert tr and te
        assert not _ids(tr, "drug_id") & _ids(te, "drug_id")
        assert not _ids(tr, "target_id") & _ids(te, "target_id")


def test_random_split_partition(big):
    tr, va, te = make_split(big.samples, SplitSpec("random", BINDINGDB_FRACTIONS, 3))
    keys = _keys(tr) + _keys(va) + _keys(te)
    assert len(keys) == len(set(keys)) == len(big)


@pytest.mark.parametrize("n", [32601, 1500, 101, 7])
def test_bindingdb_ratios_within_one_sample(n):
    samples = [InteractionSample("D", "T", 0)] * n
    sizes = [len(p) for p in make_split(samples, SplitSpec("random", BINDINGDB_FRACTIONS, 0))]
    assert sum(sizes) == n
    for got, f in zip(sizes, BINDINGDB_FRACTIONS):
        assert abs(got - f * n) <= 1
    if n == 32601:
        assert sizes == [12668, 6644, 13289]


def test_split_deterministic(big):
    spec = SplitSpec("cold_pair", (0.5, 0.2, 0.3), 11)
    assert make_split(big.samples, spec) == make_split(big.samples, spec)
    assert make_split(big.samples, spec) != make_split(big.samples, SplitSpec("cold_pair", (0.5, 0.2, 0.3), 12))


def test_infeasible_splits():
    one_drug = [InteractionSample("D", f"T{i}", i % 2) for i in range(10)]
    with pytest.raises(InfeasibleSplitError):
        make_split(one_drug, SplitSpec("cold_drug"))
    with pytest.raises(InfeasibleSplitError):
        make_split(one_drug, SplitSpec("cold_pair"))
    with pytest.raises(InfeasibleSplitError):
        make_split(one_drug[:2], SplitSpec("random"))
    with pytest.raises(InfeasibleSplitError):
        make_split(one_drug, SplitSpec("cross_domain"))


def test_bad_spec():
    with pytest.raises(ValueError):
        SplitSpec("sideways")
    with pytest.raises(ValueError):
        SplitSpec("random", (0.5, 0.5, 0.5))


def test_cross_domain_uses_other_whole():
    a, b = generate_synthetic(5, 5, 20, seed=0), generate_synthetic(5, 5, 12, seed=1)
    tr, va, te = split_dataset(a, SplitSpec("cross_domain", (0.6, 0.2, 0.2), 0), b)
    assert te == b.samples
    assert sorted(_keys(tr) + _keys(va)) == sorted(_keys(a.samples))
    assert (len(tr), len(va)) == (15, 5)
