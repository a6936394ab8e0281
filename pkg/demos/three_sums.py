"""Three two-digit sums and two candidate edges, pruned by hand and by the solver.

Sample 1 says x1 + x2 = 8, sample 2 says y1 + y2 = 2, sample 3 says z1 + z2 = 16.
Suppose x1 looks like y1 (edge e1) and also like z1 (edge e2).
"""

from nesyprune import CandidateEdge, CandidateEdgeSet, Constraint, NesySample, abduce_sum
from nesyprune.consistency import incidence
from nesyprune.pruner import apply_pruning, brute_force_oracle, build_ilp, solve_exact


def sample(sid, target):
    return NesySample(sid, (f"{sid}.1", f"{sid}.2"), Constraint("sum", target, 2), abduce_sum(2, target))


batch = [sample("x", 8), sample("y", 2), sample("z", 16)]
for s in batch:
    print(f"{s.id}: target {s.constraint.target}, {s.omega} pre-images {list(s.preimages)}")

e1 = CandidateEdge(0, 0, 1, 0, 0.1, "x.1", "y.1")
e2 = CandidateEdge(0, 0, 2, 0, 0.2, "x.1", "z.1")
edges = CandidateEdgeSet((e1, e2), 1, "euclidean")

# y1 can only be 0, 1 or 2, so e1 rules out x1 in 3..8; z1 is 7..9, so e2 rules out x1 in 0..6.
inc = incidence(batch, edges)
for eid, bad in enumerate(inc.edge_to_preimages):
    print(f"edge e{eid + 1} is inconsistent with x1 in {sorted(batch[0].preimages[i][0] for _, i in bad)}")

# Taking both edges would empty sample x, so the solver picks the one that discards more.
model = build_ilp(batch, inc)
sol = solve_exact(model)
print("included edges:", [f"e{e + 1}" for e in sol.included_edges], "objective:", sol.objective)
pruned, stats = apply_pruning(batch, sol)
print("x keeps", list(pruned[0].preimages))
print(f"retained {stats.retained_pct:.1f}% of pre-images")

oracle = brute_force_oracle(batch, inc)
assert (oracle.objective, oracle.included_edges) == (sol.objective, sol.included_edges)
print("brute-force oracle agrees")
