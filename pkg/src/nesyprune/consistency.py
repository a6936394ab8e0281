"""Consistency of pre-images with proximity-graph edges.

A pre-image of sample ``l`` is inconsistent with an edge ``(l, x) -> (l', x')``
when the label it gives ``x`` is never given to ``x'`` by any pre-image of
``l'``. Value domains are always taken over the unpruned pre-image sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .core import NesySample
from .proximity import CandidateEdge, CandidateEdgeSet

PreimageId = tuple[int, int]


def value_domain(sample: NesySample, position: int) -> frozenset[int]:
    if not sample.preimages:
        raise ValueError(f"sample {sample.id!r} has no pre-images")
    return frozenset(p[position] for p in sample.preimages)


def is_consistent(preimage: PreimageId, edge: CandidateEdge, batch: Sequence[NesySample]) -> bool:
    sample_idx, i = preimage
    if edge.src_sample != sample_idx:
        raise ValueError(f"edge source is sample {edge.src_sample}, not sample {sample_idx}")
    label = batch[sample_idx].preimages[i][edge.src_pos]
    return label in value_domain(batch[edge.dst_sample], edge.dst_pos)


@dataclass(frozen=True)
class IncidenceMap:
    """Which pre-images each candidate edge is inconsistent with, and the transpose.

    Pre-image ids are ``(sample index in batch, pre-image index)``.
    """

    omegas: tuple[int, ...]
    edge_to_preimages: tuple[tuple[PreimageId, ...], ...]
    preimage_to_edges: dict[PreimageId, tuple[int, ...]]
    globally_consistent: frozenset[PreimageId]

    @property
    def n_edges(self) -> int:
        return len(self.edge_to_preimages)

    @property
    def n_pairs(self) -> int:
        return sum(len(p) for p in self.edge_to_preimages)

    def preimage_ids(self) -> list[PreimageId]:
        return [(s, i) for s, w in enumerate(self.omegas) for i in range(w)]

    def to_json(self) -> dict:
        return {
            "omegas": list(self.omegas),
            "edges": [[list(p) for p in ps] for ps in self.edge_to_preimages],
            "globally_consistent": sorted(list(p) for p in self.globally_consistent),
        }


def incidence(batch: Sequence[NesySample], edges: CandidateEdgeSet | Sequence[CandidateEdge]) -> IncidenceMap:
    domains: dict[tuple[int, int], frozenset[int]] = {}

    def dom(s: int, pos: int) -> frozenset[int]:
        key = (s, pos)
        if key not in domains:
            domains[key] = value_domain(batch[s], pos)
        return domains[key]

    omegas = tuple(s.omega for s in batch)
    e2p: list[tuple[PreimageId, ...]] = []
    p2e: dict[PreimageId, list[int]] = {(s, i): [] for s, w in enumerate(omegas) for i in range(w)}
    for eid, e in enumerate(edges):
        allowed = dom(e.dst_sample, e.dst_pos)
        bad = tuple(
            (e.src_sample, i) for i, p in enumerate(batch[e.src_sample].preimages) if p[e.src_pos] not in allowed
        )
        e2p.append(bad)
        for pid in bad:
            p2e[pid].append(eid)
    consistent = frozenset(pid for pid, es in p2e.items() if not es)
    return IncidenceMap(omegas, tuple(e2p), {k: tuple(v) for k, v in p2e.items()}, consistent)
