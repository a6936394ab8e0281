import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nesyprune.consistency import incidence, is_consistent, value_domain
from nesyprune.core import Constraint, NesySample
from nesyprune.proximity import CandidateEdge, CandidateEdgeSet
from nesyprune.pruner import random_instance

from .conftest import sum_sample


def test_value_domains(three_sums):
    s1, s2, s3 = three_sums
    assert value_domain(s2, 0) == {0, 1, 2}
    assert value_domain(s1, 0) == set(range(9))
    assert value_domain(s3, 0) == {7, 8, 9}
    single = NesySample("u", ("u0", "u1"), Constraint("sum", 5, 2), ((2, 3),))
    assert value_domain(single, 1) == {3}


def test_edge_to_small_sum(three_sums, e1):
    s1 = three_sums[0]
    i_80 = s1.preimages.index((8, 0))
    i_08 = s1.preimages.index((0, 8))
    assert not is_consistent((0, i_80), e1, three_sums)
    assert is_consistent((0, i_08), e1, three_sums)
    # everything with x1 > 2 is inconsistent with e1
    flags = [is_consistent((0, i), e1, three_sums) for i in range(s1.omega)]
    assert flags == [p[0] <= 2 for p in s1.preimages]


def test_reverse_edge_keeps_sample_two(three_sums):
    back = CandidateEdge(1, 0, 0, 0, 0.1, "s2.x1", "s1.x1")
    assert all(is_consistent((1, i), back, three_sums) for i in range(3))
    inc = incidence(three_sums, [back])
    assert inc.globally_consistent == frozenset(inc.preimage_ids())


def test_precondition(three_sums, e1):
    with pytest.raises(ValueError):
        is_consistent((1, 0), e1, three_sums)


def test_three_sums_incidence(three_sums, both_edges):
    inc = incidence(three_sums, both_edges)
    s1 = three_sums[0]
    bad_e1 = {s1.preimages[i][0] for _, i in inc.edge_to_preimages[0]}
    bad_e2 = {s1.preimages[i][0] for _, i in inc.edge_to_preimages[1]}
    assert bad_e1 == set(range(3, 9)) and len(inc.edge_to_preimages[0]) == 6
    assert bad_e2 == set(range(0, 7)) and len(inc.edge_to_preimages[1]) == 7
    assert {(1, i) for i in range(3)} | {(2, i) for i in range(3)} <= inc.globally_consistent
    assert not any(p[0] == 0 for p in inc.globally_consistent)


def test_no_edges():
    batch = [sum_sample("a", 4), sum_sample("b", 3)]
    inc = incidence(batch, CandidateEdgeSet((), 1, "euclidean"))
    assert inc.globally_consistent == frozenset(inc.preimage_ids())
    assert inc.n_pairs == 0


def direct_definition(batch, edge, pid):
    s, i = pid
    label = batch[s].preimages[i][edge.src_pos]
    return any(label == other[edge.dst_pos] for other in batch[edge.dst_sample].preimages)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_batches_against_quantifier_expansion(seed):
    batch, edges = random_instance(np.random.default_rng(seed))
    inc = incidence(batch, edges)
    for eid, e in enumerate(edges):
        expected = {(e.src_sample, i) for i in range(batch[e.src_sample].omega) if not direct_definition(batch, e, (e.src_sample, i))}
        assert set(inc.edge_to_preimages[eid]) == expected
        for i in range(batch[e.src_sample].omega):
            assert is_consistent((e.src_sample, i), e, batch) == direct_definition(batch, e, (e.src_sample, i))
    transpose = {}
    for eid, ps in enumerate(inc.edge_to_preimages):
        for p in ps:
            transpose.setdefault(p, []).append(eid)
    assert {p: tuple(v) for p, v in transpose.items()} == {p: v for p, v in inc.preimage_to_edges.items() if v}
    assert inc.globally_consistent == {p for p, v in inc.preimage_to_edges.items() if not v}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adding_edges_is_monotone(seed):
    batch, edges = random_instance(np.random.default_rng(seed))
    if len(edges) == 0:
        return
    fewer = incidence(batch, edges.edges[:-1])
    more = incidence(batch, edges)
    for p, es in fewer.preimage_to_edges.items():
        assert set(es) <= set(more.preimage_to_edges[p])
