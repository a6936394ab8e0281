"""Candidate edges of the proximity graph from instance embeddings.

Nodes are ``(sample index in batch, position)`` pairs. By default every node
gets a directed edge to each of its ``k`` nearest instances belonging to *other*
samples of the batch; alternatively every cross-sample pair closer than
``theta`` becomes an edge. Search is exact (full pairwise distance matrix).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import EmbeddingTable, NesySample

METRICS = ("euclidean", "cosine")


class NeighborhoodWarning(UserWarning):
    """k was larger than the number of cross-sample instances available."""


def distance(u, v, metric: str = "euclidean") -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if metric == "euclidean":
        return float(np.sqrt(np.sum((u - v) ** 2)))
    if metric == "cosine":
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0 or nv == 0:
            raise ValueError("cosine distance is undefined for a zero vector")
        return float(max(0.0, 1.0 - np.dot(u, v) / (nu * nv)))
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def pairwise_distances(x: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if metric == "euclidean":
        # explicit differences rather than the Gram trick: equal points must tie exactly
        diff = x[:, None, :] - x[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    if metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms == 0):
            raise ValueError("cosine distance is undefined for a zero vector")
        unit = x / norms[:, None]
        return np.clip(1.0 - unit @ unit.T, 0.0, None)
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


@dataclass(frozen=True, order=True)
class CandidateEdge:
    """Directed edge ``(src_sample, src_pos) -> (dst_sample, dst_pos)``.

    Sample fields are indices into the batch the edge set was built from.
    """

    src_sample: int
    src_pos: int
    dst_sample: int
    dst_pos: int
    distance: float
    src_id: str
    dst_id: str

    def to_json(self) -> dict:
        return {
            "src": {"sample": self.src_sample, "position": self.src_pos, "instance": self.src_id},
            "dst": {"sample": self.dst_sample, "position": self.dst_pos, "instance": self.dst_id},
            "distance": self.distance,
        }


@dataclass(frozen=True)
class CandidateEdgeSet:
    edges: tuple[CandidateEdge, ...]
    k: int | None
    metric: str
    theta: float | None = None

    def __len__(self):
        return len(self.edges)

    def __iter__(self):
        return iter(self.edges)

    def __getitem__(self, i: int) -> CandidateEdge:
        return self.edges[i]

    def out_degrees(self) -> dict[tuple[int, int], int]:
        deg: dict[tuple[int, int], int] = {}
        for e in self.edges:
            deg[(e.src_sample, e.src_pos)] = deg.get((e.src_sample, e.src_pos), 0) + 1
        return deg

    def to_json(self, batch: Sequence[NesySample] | None = None) -> dict:
        out = {
            "k": self.k,
            "metric": self.metric,
            "theta": self.theta,
            "edges": [e.to_json() for e in self.edges],
        }
        if batch is not None:
            out["samples"] = [s.id for s in batch]
        return out


def candidate_edges(
    batch: Sequence[NesySample],
    emb: EmbeddingTable | np.ndarray,
    k: int = 1,
    metric: str = "euclidean",
    theta: float | None = None,
) -> CandidateEdgeSet:
    """Build the candidate edge set for one mini-batch.

    ``emb`` is either an :class:`EmbeddingTable` keyed by instance id or an
    array with one row per batch instance, in batch order. When ``theta`` is
    given the top-k rule is replaced by ``distance < theta``.
    Ties between equidistant neighbours go to the smaller instance id.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    if len(batch) < 2:
        raise ValueError("a batch needs at least two samples to have cross-sample edges")
    if theta is None and k < 1:
        raise ValueError("k must be positive")
    ids = [iid for s in batch for iid in s.instance_ids]
    owner = np.array([b for b, s in enumerate(batch) for _ in s.instance_ids])
    pos = [p for s in batch for p in range(s.arity)]
    x = emb.rows(ids) if isinstance(emb, EmbeddingTable) else np.asarray(emb, dtype=float)
    if x.shape[0] != len(ids):
        raise ValueError(f"expected {len(ids)} embedding rows, got {x.shape[0]}")
    dist = pairwise_distances(x, metric)
    id_rank = np.empty(len(ids), dtype=int)
    id_rank[np.argsort(np.array(ids), kind="stable")] = np.arange(len(ids))

    edges: list[CandidateEdge] = []
    clamped = False
    for a in range(len(ids)):
        others = np.flatnonzero(owner != owner[a])
        d = dist[a, others]
        order = np.lexsort((id_rank[others], d))
        if theta is not None:
            chosen = [i for i in order if d[i] < theta]
        else:
            if k > len(others):
                clamped = True
            chosen = order[: min(k, len(others))]
        for i in chosen:
            b = others[i]
            edges.append(
                CandidateEdge(int(owner[a]), pos[a], int(owner[b]), pos[b], float(d[i]), ids[a], ids[b])
            )
    if clamped:
        warnings.warn(f"k={k} exceeds the cross-sample instances of some node; clamped", NeighborhoodWarning, stacklevel=2)
    edges.sort(key=lambda e: (e.src_sample, e.src_pos, e.distance, e.dst_id))
    return CandidateEdgeSet(tuple(edges), None if theta is not None else k, metric, theta)
