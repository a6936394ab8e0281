"""Pre-image pruning for weakly supervised neurosymbolic learning."""

from .abduction import abduce, abduce_dataset, abduce_hwf, abduce_max, abduce_sum
from .consistency import IncidenceMap, incidence, is_consistent
from .core import (
    Constraint,
    Dataset,
    DatasetError,
    EmbeddingTable,
    LabelSpace,
    NesySample,
    load_dataset,
    load_embeddings,
    save_dataset,
    save_embeddings,
)
from .proximity import CandidateEdge, CandidateEdgeSet, candidate_edges, distance
from .pruner import (
    InvariantError,
    PruneSolution,
    apply_pruning,
    brute_force_oracle,
    build_ilp,
    prune_batch,
    prune_dataset,
    solve_exact,
)
from .report import RunReport, report
from .trainer import SynthTask, TrainConfig, evaluate, semantic_loss, synth_generate, train

__version__ = "0.1.0"
