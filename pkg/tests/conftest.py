import pytest

from nesyprune.abduction import abduce
from nesyprune.core import Constraint, LabelSpace, NesySample
from nesyprune.proximity import CandidateEdge, CandidateEdgeSet

DIGITS = LabelSpace(10)


def sum_sample(sid, target, gold=None, arity=2):
    inst = tuple(f"{sid}.x{j + 1}" for j in range(arity))
    return abduce(NesySample(sid, inst, Constraint("sum", target, arity), (), gold), DIGITS)


@pytest.fixture
def three_sums():
    """Three samples with sums 8, 2 and 16 over two digits."""
    return [sum_sample("s1", 8, (1, 7)), sum_sample("s2", 2), sum_sample("s3", 16)]


@pytest.fixture
def e1():
    return CandidateEdge(0, 0, 1, 0, 0.1, "s1.x1", "s2.x1")


@pytest.fixture
def e2():
    return CandidateEdge(0, 0, 2, 0, 0.2, "s1.x1", "s3.x1")


@pytest.fixture
def both_edges(e1, e2):
    return CandidateEdgeSet((e1, e2), 1, "euclidean")
