"""Choose which candidate edges enter the proximity graph and prune accordingly.

The integer program has one binary per candidate edge (``E``), one keep/discard
pair per pre-image (``I``, ``I'`` with ``I + I' = 1``), a coverage row per sample
(at least one pre-image kept), a forced keep for every globally consistent
pre-image, and a coupling row per inconsistent (edge, pre-image) pair. The
objective maximises the number of discarded pre-images.

Two coupling semantics are available:

``"implication"`` (default)
    A pre-image is discarded exactly when some *included* edge is inconsistent
    with it: ``E_e + I_p <= 1`` for each inconsistent pair plus
    ``I'_p <= sum(E_e for e inconsistent with p)``. This is the pruning rule
    (drop every pre-image inconsistent with an edge of the chosen graph).

``"equality"``
    The literal rows ``E_e + I_p = 1``: excluding an edge also forces every
    pre-image inconsistent with it to be kept, so edges that share an
    inconsistent pre-image must share their inclusion status.

Both are solved exactly without a generic MILP solver. Every inconsistent
pre-image of an edge belongs to the edge's source sample, so the program splits
into independent per-sample problems:

* implication: some pre-image ``p`` must survive; the best graph keeping ``p``
  includes every edge not inconsistent with ``p``. Scanning all ``p`` gives the
  optimum.
* equality: union-find merges edges with a common inconsistent pre-image into
  groups with disjoint discard sets; either all groups fit (some pre-image is
  left uncovered) or dropping one smallest group is optimal.

Among optimal edge sets the one with the lexicographically smallest inclusion
vector ``(E_0, E_1, ...)`` is returned, i.e. lower edge ids are excluded
whenever that costs nothing. Edges with no inconsistent pre-image are
therefore always reported excluded.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .consistency import IncidenceMap, PreimageId, incidence
from .core import Dataset, EmbeddingTable, NesySample
from .proximity import CandidateEdge, CandidateEdgeSet, candidate_edges

COUPLINGS = ("implication", "equality")


class InvariantError(RuntimeError):
    """A pruning result broke soundness or a constraint of the program."""


@dataclass(frozen=True)
class IlpModel:
    omegas: tuple[int, ...]
    n_edges: int
    coupling: str
    preimages: tuple[PreimageId, ...]
    coverage: tuple[tuple[int, tuple[PreimageId, ...]], ...]
    forced_keep: tuple[PreimageId, ...]
    couplings: tuple[tuple[int, PreimageId], ...]
    support: tuple[tuple[PreimageId, tuple[int, ...]], ...]
    edge_sample: tuple[int, ...]

    @property
    def n_pairs(self) -> int:
        """Number of (I, I') variable pairs."""
        return len(self.preimages)

    def constraint_counts(self) -> dict[str, int]:
        return {
            "complementarity": len(self.preimages),
            "coverage": len(self.coverage),
            "forced_keep": len(self.forced_keep),
            "coupling": len(self.couplings),
            "support": len(self.support),
        }

    def check(self, included: Sequence[int] | set[int], discard: dict[PreimageId, bool]) -> list[str]:
        """Return a list of violated constraint descriptions (empty when feasible)."""
        inc = set(included)
        bad = []
        for pid in self.preimages:
            if pid not in discard:
                bad.append(f"no value for pre-image {pid}")
        for s, pids in self.coverage:
            if all(discard.get(p, False) for p in pids):
                bad.append(f"coverage: sample {s} keeps nothing")
        for pid in self.forced_keep:
            if discard.get(pid, False):
                bad.append(f"forced keep: {pid} discarded")
        for eid, pid in self.couplings:
            e_val = 1 if eid in inc else 0
            i_val = 0 if discard.get(pid, False) else 1
            if self.coupling == "equality" and e_val + i_val != 1:
                bad.append(f"coupling: E{eid} + I{pid} != 1")
            if self.coupling == "implication" and e_val + i_val > 1:
                bad.append(f"coupling: E{eid} + I{pid} > 1")
        for pid, eids in self.support:
            if discard.get(pid, False) and not any(e in inc for e in eids):
                bad.append(f"support: {pid} discarded without an included edge")
        return bad

    def objective(self, discard: dict[PreimageId, bool]) -> int:
        return sum(1 for v in discard.values() if v)

    def to_matrices(self):
        """Dense form ``max c.z  s.t.  lo <= A z <= hi, z binary``.

        Variable order is ``E_0..E_{m-1}``, then ``I`` and ``I'`` for each
        pre-image in :attr:`preimages` order. Returns ``(c, A, lo, hi)``.
        """
        m, q = self.n_edges, len(self.preimages)
        col_i = {pid: m + j for j, pid in enumerate(self.preimages)}
        col_d = {pid: m + q + j for j, pid in enumerate(self.preimages)}
        rows, lo, hi = [], [], []

        def row(entries, low, high):
            r = np.zeros(m + 2 * q)
            for col, val in entries:
                r[col] += val
            rows.append(r)
            lo.append(low)
            hi.append(high)

        for pid in self.preimages:
            row([(col_i[pid], 1), (col_d[pid], 1)], 1, 1)
        for _, pids in self.coverage:
            row([(col_i[p], 1) for p in pids], 1, np.inf)
        for pid in self.forced_keep:
            row([(col_i[pid], 1)], 1, 1)
        for eid, pid in self.couplings:
            row([(eid, 1), (col_i[pid], 1)], 1 if self.coupling == "equality" else -np.inf, 1)
        for pid, eids in self.support:
            row([(col_d[pid], 1)] + [(e, -1) for e in eids], -np.inf, 0)
        c = np.zeros(m + 2 * q)
        c[m + q :] = 1
        a = np.array(rows) if rows else np.zeros((0, m + 2 * q))
        return c, a, np.array(lo, dtype=float), np.array(hi, dtype=float)


@dataclass(frozen=True)
class PruneSolution:
    included_edges: tuple[int, ...]
    discard_flags: tuple[tuple[bool, ...], ...]
    objective: int
    solve_time: float = 0.0
    proven_optimal: bool = True
    coupling: str = "implication"

    def discard_map(self) -> dict[PreimageId, bool]:
        return {(s, i): f for s, flags in enumerate(self.discard_flags) for i, f in enumerate(flags)}

    def kept_counts(self) -> list[int]:
        return [sum(1 for f in flags if not f) for flags in self.discard_flags]


@dataclass(frozen=True)
class PruneStats:
    n_samples: int
    preimages_before: int
    preimages_after: int
    gold_known: int
    gold_retained: int
    solve_seconds: float
    objective: int
    n_candidate_edges: int = 0
    n_included_edges: int = 0

    @property
    def retained_pct(self) -> float:
        return 100.0 * self.preimages_after / self.preimages_before if self.preimages_before else 100.0

    @property
    def gold_retained_pct(self) -> float | None:
        return 100.0 * self.gold_retained / self.gold_known if self.gold_known else None

    def to_json(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "preimages_before": self.preimages_before,
            "preimages_after": self.preimages_after,
            "retained_pct": self.retained_pct,
            "gold_known": self.gold_known,
            "gold_retained": self.gold_retained,
            "gold_retained_pct": self.gold_retained_pct,
            "objective": self.objective,
            "n_candidate_edges": self.n_candidate_edges,
            "n_included_edges": self.n_included_edges,
            "prune_seconds": self.solve_seconds,
        }


def build_ilp(batch: Sequence[NesySample], inc: IncidenceMap, coupling: str = "implication") -> IlpModel:
    if coupling not in COUPLINGS:
        raise ValueError(f"unknown coupling {coupling!r}; expected one of {COUPLINGS}")
    omegas = tuple(s.omega for s in batch)
    if omegas != inc.omegas:
        raise ValueError("incidence map was computed for a different batch")
    pids = tuple(inc.preimage_ids())
    coverage = tuple((s, tuple((s, i) for i in range(w))) for s, w in enumerate(omegas))
    forced = tuple(p for p in pids if p in inc.globally_consistent)
    couplings = tuple((eid, pid) for eid, ps in enumerate(inc.edge_to_preimages) for pid in ps)
    support = ()
    if coupling == "implication":
        support = tuple((p, inc.preimage_to_edges[p]) for p in pids if inc.preimage_to_edges[p])
    edge_sample = []
    for eid, ps in enumerate(inc.edge_to_preimages):
        edge_sample.append(ps[0][0] if ps else -1)
    return IlpModel(omegas, inc.n_edges, coupling, pids, coverage, forced, couplings, support, tuple(edge_sample))


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # keep the smaller id as root so groups are labelled canonically
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def _bits(mask: int, width: int) -> tuple[int, ...]:
    return tuple((mask >> j) & 1 for j in range(width))


def _lexmin_cover(masks: list[int], target: int) -> int:
    """Inclusion bitmask (bit j = local edge j) with the smallest (E_0, E_1, ...)
    vector among subsets of ``masks`` whose union is exactly ``target``.
    Only edges with ``mask ⊆ target`` may be used; the caller guarantees that
    all of them together cover ``target``."""
    usable = [j for j, mk in enumerate(masks) if mk and mk & ~target == 0]
    suffix = [0] * (len(usable) + 1)
    for t in range(len(usable) - 1, -1, -1):
        suffix[t] = suffix[t + 1] | masks[usable[t]]
    chosen, covered = 0, 0
    for t, j in enumerate(usable):
        if covered | suffix[t + 1] != target:
            chosen |= 1 << j
            covered |= masks[j]
    return chosen


def _solve_sample_implication(masks: list[int], full: int) -> tuple[int, int]:
    if not masks:
        return 0, 0
    best_size, targets = -1, set()
    for p in range(full.bit_length()):
        d = 0
        for mk in masks:
            if not (mk >> p) & 1:
                d |= mk
        size = bin(d).count("1")
        if size > best_size:
            best_size, targets = size, {d}
        elif size == best_size:
            targets.add(d)
    best = None
    for d in targets:
        chosen = _lexmin_cover(masks, d)
        key = _bits(chosen, len(masks))
        if best is None or key < best[0]:
            best = (key, chosen, d)
    return best[1], best[2]


def _solve_sample_equality(masks: list[int], full: int) -> tuple[int, int]:
    live = [j for j, mk in enumerate(masks) if mk]
    if not live:
        return 0, 0
    uf = _UnionFind(live)
    owner: dict[int, int] = {}
    for j in live:
        mk, p = masks[j], 0
        while mk:
            if mk & 1:
                if p in owner:
                    uf.union(owner[p], j)
                else:
                    owner[p] = j
            mk >>= 1
            p += 1
    groups: dict[int, list[int]] = {}
    for j in live:
        groups.setdefault(uf.find(j), []).append(j)
    g_edges, g_disc = [], []
    for members in groups.values():
        em, dm = 0, 0
        for j in members:
            em |= 1 << j
            dm |= masks[j]
        g_edges.append(em)
        g_disc.append(dm)
    all_edges = sum(g_edges)
    all_disc = 0
    for dm in g_disc:
        all_disc |= dm
    if all_disc != full:
        return all_edges, all_disc
    smallest = min(bin(dm).count("1") for dm in g_disc)
    best = None
    for em, dm in zip(g_edges, g_disc):
        if bin(dm).count("1") != smallest:
            continue
        chosen = all_edges & ~em
        key = _bits(chosen, len(masks))
        if best is None or key < best[0]:
            best = (key, chosen, all_disc & ~dm)
    return best[1], best[2]


def _per_sample_masks(model: IlpModel) -> list[tuple[list[int], list[int]]]:
    """For every sample: its edge ids (ascending) and their local discard masks."""
    per: list[tuple[list[int], list[int]]] = [([], []) for _ in model.omegas]
    masks: dict[int, int] = {}
    for eid, (s, i) in model.couplings:
        masks[eid] = masks.get(eid, 0) | (1 << i)
    for eid in range(model.n_edges):
        s = model.edge_sample[eid]
        if s >= 0:
            per[s][0].append(eid)
            per[s][1].append(masks[eid])
    return per


def solve_exact(model: IlpModel) -> PruneSolution:
    t0 = time.perf_counter()
    solver = _solve_sample_implication if model.coupling == "implication" else _solve_sample_equality
    included: list[int] = []
    flags = []
    for (eids, masks), w in zip(_per_sample_masks(model), model.omegas):
        chosen, disc = solver(masks, (1 << w) - 1)
        included.extend(e for j, e in enumerate(eids) if (chosen >> j) & 1)
        flags.append(tuple(bool((disc >> i) & 1) for i in range(w)))
    sol = PruneSolution(
        included_edges=tuple(sorted(included)),
        discard_flags=tuple(flags),
        objective=sum(sum(f) for f in flags),
        solve_time=time.perf_counter() - t0,
        proven_optimal=True,
        coupling=model.coupling,
    )
    verify_solution(model, sol)
    return sol


def verify_solution(model: IlpModel, sol: PruneSolution) -> None:
    """Raise :class:`InvariantError` unless ``sol`` satisfies every row of ``model``."""
    if any(k < 1 for k in sol.kept_counts()):
        raise InvariantError("pruning left a sample without pre-images")
    violations = model.check(sol.included_edges, sol.discard_map())
    if violations:
        raise InvariantError("; ".join(violations[:5]))
    if model.coupling == "implication":
        inc = set(sol.included_edges)
        hit = {pid for eid, pid in model.couplings if eid in inc}
        if hit != {p for p, f in sol.discard_map().items() if f}:
            raise InvariantError("discarded set differs from the pre-images hit by included edges")


def brute_force_oracle(
    batch: Sequence[NesySample], inc: IncidenceMap, coupling: str = "implication", max_edges: int = 20
) -> PruneSolution:
    """Enumerate every subset of candidate edges and keep the best feasible one.

    Discards follow directly from the chosen subset (see module docstring);
    ties go to the lexicographically smallest inclusion vector.
    """
    if coupling not in COUPLINGS:
        raise ValueError(f"unknown coupling {coupling!r}")
    m = inc.n_edges
    if m > max_edges:
        raise ValueError(f"{m} candidate edges exceed the oracle limit of {max_edges}")
    t0 = time.perf_counter()
    omegas = [s.omega for s in batch]
    offset = np.concatenate([[0], np.cumsum(omegas)]).astype(int).tolist()
    sample_mask = [((1 << w) - 1) << offset[s] for s, w in enumerate(omegas)]
    edge_bits = []
    for ps in inc.edge_to_preimages:
        b = 0
        for s, i in ps:
            b |= 1 << (offset[s] + i)
        edge_bits.append(b)
    # subset code: bit (m - 1 - e) holds E_e, so ascending codes are ascending (E_0, E_1, ...)
    size = 1 << m
    hit = [0] * size
    for code in range(1, size):
        low = code & -code
        e = m - low.bit_length()
        hit[code] = hit[code ^ low] | edge_bits[e]
    best_code, best_obj = None, -1
    for code in range(size):
        disc = hit[code]
        if coupling == "equality" and disc & hit[(size - 1) ^ code]:
            continue
        if any(sm & ~disc == 0 for sm in sample_mask):
            continue
        obj = bin(disc).count("1")
        if obj > best_obj:
            best_code, best_obj = code, obj
    disc = hit[best_code]
    included = tuple(e for e in range(m) if (best_code >> (m - 1 - e)) & 1)
    flags = tuple(tuple(bool((disc >> (offset[s] + i)) & 1) for i in range(w)) for s, w in enumerate(omegas))
    return PruneSolution(included, flags, best_obj, time.perf_counter() - t0, True, coupling)


def apply_pruning(batch: Sequence[NesySample], sol: PruneSolution) -> tuple[list[NesySample], PruneStats]:
    if len(sol.discard_flags) != len(batch):
        raise ValueError("solution does not belong to this batch")
    pruned = []
    before = after = gold_known = gold_kept = 0
    for s, flags in zip(batch, sol.discard_flags):
        if len(flags) != s.omega:
            raise ValueError(f"solution does not match sample {s.id!r}")
        kept = [p for p, f in zip(s.preimages, flags) if not f]
        if not kept:
            raise InvariantError(f"sample {s.id!r} lost all of its pre-images")
        before += s.omega
        after += len(kept)
        pruned.append(s if len(kept) == s.omega else s.with_preimages(kept, pruned=True))
        if s.gold_labels is not None:
            gold_known += 1
            gold_kept += s.gold_labels in kept
    stats = PruneStats(
        n_samples=len(batch),
        preimages_before=before,
        preimages_after=after,
        gold_known=gold_known,
        gold_retained=gold_kept,
        solve_seconds=sol.solve_time,
        objective=sol.objective,
        n_included_edges=len(sol.included_edges),
    )
    return pruned, stats


@dataclass
class BatchPruneResult:
    edges: CandidateEdgeSet
    incidence: IncidenceMap
    model: IlpModel
    solution: PruneSolution
    pruned: list[NesySample]
    stats: PruneStats
    timings: dict = field(default_factory=dict)


def prune_batch(
    batch: Sequence[NesySample],
    emb: EmbeddingTable | np.ndarray,
    k: int = 1,
    metric: str = "euclidean",
    theta: float | None = None,
    coupling: str = "implication",
) -> BatchPruneResult:
    """Candidate edges, incidence, program and exact solve for one mini-batch.

    ``stats.solve_seconds`` covers the whole pipeline (neighbour search through
    applying the pruning), matching what a training loop pays per batch.
    """
    t0 = time.perf_counter()
    if len(batch) < 2:
        edges = CandidateEdgeSet((), None if theta is not None else k, metric, theta)
    else:
        edges = candidate_edges(batch, emb, k=k, metric=metric, theta=theta)
    t1 = time.perf_counter()
    inc = incidence(batch, edges)
    model = build_ilp(batch, inc, coupling)
    t2 = time.perf_counter()
    sol = solve_exact(model)
    pruned, stats = apply_pruning(batch, sol)
    t3 = time.perf_counter()
    stats = PruneStats(
        stats.n_samples,
        stats.preimages_before,
        stats.preimages_after,
        stats.gold_known,
        stats.gold_retained,
        t3 - t0,
        stats.objective,
        len(edges),
        stats.n_included_edges,
    )
    timings = {"edges": t1 - t0, "model": t2 - t1, "solve": t3 - t2}
    return BatchPruneResult(edges, inc, model, sol, pruned, stats, timings)


def prune_dataset(
    dataset: Dataset,
    emb: EmbeddingTable,
    batch_size: int,
    k: int = 1,
    metric: str = "euclidean",
    theta: float | None = None,
    coupling: str = "implication",
) -> tuple[Dataset, list[BatchPruneResult]]:
    """Prune consecutive batches of ``dataset`` in file order."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    emb.check_covers(dataset)
    results = []
    out: list[NesySample] = []
    for start in range(0, dataset.n, batch_size):
        batch = list(dataset.samples[start : start + batch_size])
        res = prune_batch(batch, emb, k=k, metric=metric, theta=theta, coupling=coupling)
        results.append(res)
        out.extend(res.pruned)
    return dataset.replace_samples(out), results


def aggregate_stats(stats: Sequence[PruneStats]) -> dict:
    before = sum(s.preimages_before for s in stats)
    after = sum(s.preimages_after for s in stats)
    gk = sum(s.gold_known for s in stats)
    gr = sum(s.gold_retained for s in stats)
    return {
        "n_batches": len(stats),
        "n_samples": sum(s.n_samples for s in stats),
        "preimages_before": before,
        "preimages_after": after,
        "retained_pct": 100.0 * after / before if before else 100.0,
        "gold_known": gk,
        "gold_retained": gr,
        "gold_retained_pct": 100.0 * gr / gk if gk else None,
        "objective": sum(s.objective for s in stats),
        "prune_seconds": sum(s.solve_seconds for s in stats),
    }


def random_instance(
    rng: np.random.Generator,
    max_samples: int = 6,
    max_preimages: int = 10,
    max_edges: int = 8,
    classes: int = 4,
    max_arity: int = 3,
) -> tuple[list[NesySample], CandidateEdgeSet]:
    """Random batch with arbitrary pre-image sets and random cross-sample edges."""
    from .core import Constraint

    n = int(rng.integers(2, max_samples + 1))
    batch = []
    for s in range(n):
        arity = int(rng.integers(1, max_arity + 1))
        space = classes**arity
        w = int(rng.integers(1, min(max_preimages, space) + 1))
        codes = rng.choice(space, size=w, replace=False)
        pre = [tuple(int(c // classes**j) % classes for j in range(arity)) for c in codes]
        batch.append(
            NesySample(f"r{s}", tuple(f"r{s}.{j}" for j in range(arity)), Constraint("sum", 0, arity), tuple(pre))
        )
    nodes = [(s, j) for s in range(n) for j in range(batch[s].arity)]
    pairs = [(a, b) for a in nodes for b in nodes if a[0] != b[0]]
    m = int(rng.integers(0, min(max_edges, len(pairs)) + 1))
    picked = sorted(rng.choice(len(pairs), size=m, replace=False).tolist())
    edges = []
    for t in picked:
        (sa, pa), (sb, pb) = pairs[t]
        edges.append(CandidateEdge(sa, pa, sb, pb, 0.0, f"r{sa}.{pa}", f"r{sb}.{pb}"))
    edges.sort(key=lambda e: (e.src_sample, e.src_pos, e.distance, e.dst_id))
    return batch, CandidateEdgeSet(tuple(edges), None, "euclidean")


def oracle_check(seeds: int = 200, seed: int = 0, coupling: str = "implication", **kwargs) -> dict:
    """Compare :func:`solve_exact` with :func:`brute_force_oracle` on random instances."""
    rng = np.random.default_rng(seed)
    mismatches = []
    t0 = time.perf_counter()
    for trial in range(seeds):
        batch, edges = random_instance(rng, **kwargs)
        inc = incidence(batch, edges)
        exact = solve_exact(build_ilp(batch, inc, coupling))
        oracle = brute_force_oracle(batch, inc, coupling)
        if exact.objective != oracle.objective or exact.included_edges != oracle.included_edges:
            mismatches.append(
                {
                    "trial": trial,
                    "exact": exact.objective,
                    "oracle": oracle.objective,
                    "exact_edges": list(exact.included_edges),
                    "oracle_edges": list(oracle.included_edges),
                }
            )
    return {
        "instances": seeds,
        "coupling": coupling,
        "mismatches": mismatches,
        "seconds": time.perf_counter() - t0,
    }
