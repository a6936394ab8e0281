"""Semantic-loss training of a small numpy MLP with per-batch pre-image pruning.

Three modes share one loop and differ only in how the retained pre-images of
each mini-batch are chosen:

``baseline``   every pre-image is kept.
``frozen``     pruning uses a fixed embedding table (e.g. the raw features).
``trainable``  pruning uses the classifier's current hidden activations.

Initialisation and batch order come from independent seeded streams, so two
modes run with the same seed see identical parameters at step 0 and identical
batches in every epoch.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .abduction import HWF_CLASS_NAMES, abduce, evaluate as apply_theory, hwf_mask, theory_mask
from .core import Constraint, Dataset, EmbeddingTable, LabelSpace, NesySample, save_dataset, save_embeddings
from .pruner import InvariantError, prune_batch

MODES = ("baseline", "frozen", "trainable")
MASS_EPS = 1e-12


class TrainingError(RuntimeError):
    pass


class DegenerateLossWarning(UserWarning):
    """The retained pre-images carried (numerically) zero probability mass."""


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _omega_array(omega) -> np.ndarray:
    arr = np.asarray(omega, dtype=int)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("omega must be a non-empty list of label tuples")
    return arr


def _mass_terms(scores: np.ndarray, omega) -> tuple[np.ndarray, np.ndarray]:
    om = _omega_array(omega)
    scores = np.asarray(scores, dtype=float)
    if om.shape[1] != scores.shape[0]:
        raise ValueError(f"pre-images have {om.shape[1]} positions, scores have {scores.shape[0]} rows")
    vals = scores[np.arange(scores.shape[0]), om]
    return om, vals


def semantic_loss(scores, omega) -> float:
    """``-log sum_{sigma in omega} prod_j scores[j, sigma_j]``.

    ``scores`` has one probability row per instance. A total mass below
    ``1e-12`` is clamped and reported with :class:`DegenerateLossWarning`.
    """
    _, vals = _mass_terms(scores, omega)
    mass = float(np.prod(vals, axis=1).sum())
    if mass < MASS_EPS:
        warnings.warn(f"pre-image mass {mass:.3g} clamped to {MASS_EPS}", DegenerateLossWarning, stacklevel=2)
        mass = MASS_EPS
    return -math.log(mass)


def semantic_loss_grad(scores, omega) -> np.ndarray:
    """Gradient of :func:`semantic_loss` with respect to the score matrix."""
    om, vals = _mass_terms(scores, omega)
    w, m = vals.shape
    # product over the other positions, via prefix/suffix products (no division by zero scores)
    prefix = np.ones((w, m + 1))
    suffix = np.ones((w, m + 1))
    for j in range(m):
        prefix[:, j + 1] = prefix[:, j] * vals[:, j]
        suffix[:, m - 1 - j] = suffix[:, m - j] * vals[:, m - 1 - j]
    others = prefix[:, :m] * suffix[:, 1:]
    mass = max(float(prefix[:, m].sum()), MASS_EPS)
    grad = np.zeros(np.shape(scores))
    np.add.at(grad, (np.broadcast_to(np.arange(m), om.shape), om), others)
    return -grad / mass


def _posterior(probs: np.ndarray, om: np.ndarray) -> tuple[float, np.ndarray, bool]:
    # returns (loss, per-position posterior marginals over omega, clamped?)
    vals = probs[np.arange(probs.shape[0]), om]
    t = np.prod(vals, axis=1)
    mass = float(t.sum())
    clamped = mass < MASS_EPS
    q = np.zeros_like(probs)
    if clamped:
        return -math.log(MASS_EPS), q, True
    np.add.at(q, (np.broadcast_to(np.arange(om.shape[1]), om.shape), om), t[:, None] / mass)
    return -math.log(mass), q, False


@dataclass
class ClassifierModel:
    """``x -> tanh(x W1 + b1) -> softmax(h W2 + b2)``; ``h`` doubles as the encoder."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, in_dim: int, hidden: int, classes: int, rng: np.random.Generator) -> "ClassifierModel":
        a1, a2 = 1 / math.sqrt(in_dim), 1 / math.sqrt(hidden)
        return cls(
            rng.uniform(-a1, a1, (in_dim, hidden)),
            rng.uniform(-a1, a1, hidden),
            rng.uniform(-a2, a2, (hidden, classes)),
            rng.uniform(-a2, a2, classes),
        )

    @classmethod
    def zeros(cls, in_dim: int, hidden: int, classes: int) -> "ClassifierModel":
        return cls(np.zeros((in_dim, hidden)), np.zeros(hidden), np.zeros((hidden, classes)), np.zeros(classes))

    @property
    def classes(self) -> int:
        return self.w2.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self) -> "ClassifierModel":
        return ClassifierModel(*(p.copy() for p in self.params().values()))

    def hidden(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(x @ self.w1 + self.b1)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = self.hidden(x)
        return h, softmax(h @ self.w2 + self.b2)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.forward(np.asarray(x, dtype=float))[1]

    def predict(self, x: np.ndarray) -> np.ndarray:
        # np.argmax returns the first maximum: ties go to the smallest class id
        return np.argmax(self.predict_proba(x), axis=1)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params().values())

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, **self.params())

    @classmethod
    def load(cls, path: str | Path) -> "ClassifierModel":
        with np.load(path) as z:
            return cls(z["w1"], z["b1"], z["w2"], z["b2"])


def batch_loss_and_grads(
    model: ClassifierModel, x: np.ndarray, omegas: Sequence[Sequence[Sequence[int]]], sizes: Sequence[int]
) -> tuple[float, dict[str, np.ndarray], int]:
    """Mean semantic loss over the samples of a batch and its parameter gradients.

    ``x`` stacks the instances of all samples in order; ``sizes`` gives each
    sample's instance count. Returns ``(loss, grads, n_clamped)``.
    """
    h, probs = model.forward(x)
    dz = np.zeros_like(probs)
    total, clamped, row = 0.0, 0, 0
    for om, m in zip(omegas, sizes):
        p = probs[row : row + m]
        loss, q, bad = _posterior(p, _omega_array(om))
        total += loss
        clamped += bad
        # d(-log mass)/d logits = p - posterior marginals
        dz[row : row + m] = p - q if not bad else 0.0
        row += m
    b = len(sizes)
    dz /= b
    grads = {"w2": h.T @ dz, "b2": dz.sum(axis=0)}
    dh = (dz @ model.w2.T) * (1 - h**2)
    grads["w1"] = x.T @ dh
    grads["b1"] = dh.sum(axis=0)
    return total / b, grads, clamped


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 0.5
    seed: int = 0
    mode: str = "frozen"
    k: int = 1
    metric: str = "euclidean"
    hidden: int = 64
    theta: float | None = None
    coupling: str = "implication"
    timing: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1 or (self.mode != "baseline" and self.batch_size < 2):
            raise ValueError("batch_size must be >= 2 when pruning")

    def to_json(self) -> dict:
        return asdict(self)


METRIC_COLUMNS = (
    "epoch",
    "loss",
    "accuracy",
    "retained_pct",
    "gold_retained_pct",
    "prune_seconds",
    "epoch_seconds",
)


@dataclass
class TrainResult:
    model: ClassifierModel
    initial: ClassifierModel
    metrics: list[dict] = field(default_factory=list)
    audit: list[dict] = field(default_factory=list)


def evaluate(model: ClassifierModel, x: np.ndarray, y: np.ndarray) -> float:
    """Fraction of instances whose argmax prediction equals the gold label."""
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("empty test set")
    return float(np.mean(model.predict(x) == y))


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    init_seq, order_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(order_seq)


def train(
    dataset: Dataset,
    features: EmbeddingTable,
    config: TrainConfig,
    test: tuple[np.ndarray, np.ndarray] | None = None,
    embeddings: EmbeddingTable | None = None,
    callback=None,
) -> TrainResult:
    """Train with mini-batch gradient descent on the semantic loss.

    ``features`` are the classifier inputs. ``embeddings`` is the frozen encoder
    output used for pruning in ``frozen`` mode and defaults to ``features``.
    Gold labels in the dataset are only used for the retention statistics.
    """
    for s in dataset.samples:
        if not s.preimages:
            raise TrainingError(f"sample {s.id!r} has no pre-images; run abduction first")
    features.check_covers(dataset)
    frozen = embeddings if embeddings is not None else features
    if config.mode == "frozen":
        frozen.check_covers(dataset)
    rng_init, rng_order = _streams(config.seed)
    model = ClassifierModel.init(features.dim, config.hidden, dataset.label_space.class_count, rng_init)
    result = TrainResult(model=model, initial=model.copy())
    samples = dataset.samples
    x_all = [features.rows(s.instance_ids) for s in samples]

    batch_id = 0
    for epoch in range(1, config.epochs + 1):
        t_epoch = time.perf_counter()
        order = rng_order.permutation(len(samples))
        loss_sum = 0.0
        prune_seconds = 0.0
        before = after = gold_known = gold_kept = 0
        for start in range(0, len(samples), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = [samples[i] for i in idx]
            x = np.concatenate([x_all[i] for i in idx])
            sizes = [s.arity for s in batch]
            if config.mode == "baseline":
                omegas = [s.preimages for s in batch]
                kept = batch
            else:
                emb = frozen if config.mode == "frozen" else model.hidden(x)
                res = prune_batch(
                    batch, emb, k=config.k, metric=config.metric, theta=config.theta, coupling=config.coupling
                )
                prune_seconds += res.stats.solve_seconds
                kept = res.pruned
                omegas = [s.preimages for s in kept]
            gold_flags = [None if s.gold_labels is None else s.gold_labels in k.preimages for s, k in zip(batch, kept)]
            for s, k in zip(batch, kept):
                if not k.preimages:
                    raise InvariantError(f"sample {s.id!r} has no retained pre-images")
                if len(s.preimages) == 1 and k.preimages != s.preimages:
                    raise InvariantError(f"supervised sample {s.id!r} was modified")
            before += sum(s.omega for s in batch)
            after += sum(len(o) for o in omegas)
            gold_known += sum(g is not None for g in gold_flags)
            gold_kept += sum(bool(g) for g in gold_flags)

            loss, grads, clamped = batch_loss_and_grads(model, x, omegas, sizes)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss in batch {batch_id} (epoch {epoch})")
            if clamped:
                warnings.warn(
                    f"{clamped} sample(s) with zero retained mass in batch {batch_id}", DegenerateLossWarning, stacklevel=2
                )
            for name, g in grads.items():
                getattr(model, name)[...] -= config.lr * g
            if not model.all_finite():
                raise TrainingError(f"non-finite parameters after batch {batch_id} (epoch {epoch})")
            loss_sum += loss * len(batch)
            result.audit.append(
                {
                    "epoch": epoch,
                    "batch": batch_id,
                    "sample_ids": [s.id for s in batch],
                    "omega": [s.omega for s in batch],
                    "kept": [len(o) for o in omegas],
                    "gold_kept": gold_flags,
                    "loss": loss,
                    "clamped": clamped,
                }
            )
            batch_id += 1
        acc = evaluate(model, *test) if test is not None else float("nan")
        if test is not None:
            probs = model.predict_proba(test[0])
            if np.max(np.abs(probs.sum(axis=1) - 1)) > 1e-9:
                raise InvariantError("softmax rows do not sum to one")
        row = {
            "epoch": epoch,
            "loss": loss_sum / len(samples),
            "accuracy": acc,
            "retained_pct": 100.0 * after / before,
            "gold_retained_pct": 100.0 * gold_kept / gold_known if gold_known else float("nan"),
            "prune_seconds": prune_seconds if config.timing else float("nan"),
            "epoch_seconds": time.perf_counter() - t_epoch if config.timing else float("nan"),
        }
        result.metrics.append(row)
        if callback is not None:
            callback(row)
    return result


def format_metric(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(float(value))


def write_metrics(rows: Sequence[dict], path: str | Path) -> None:
    lines = [",".join(METRIC_COLUMNS)]
    for r in rows:
        lines.append(",".join(format_metric(r[c]) for c in METRIC_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_run(result: TrainResult, config: TrainConfig, out_dir: str | Path, extra: dict | None = None) -> dict[str, Path]:
    """Write ``metrics.csv``, ``model.npz`` and ``run.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"metrics": out / "metrics.csv", "model": out / "model.npz", "run": out / "run.json"}
    write_metrics(result.metrics, paths["metrics"])
    result.model.save(paths["model"])
    meta = {"mode": config.mode, "seed": config.seed, "config": config.to_json(), **(extra or {})}
    paths["run"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


# ---------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SynthTask:
    """Weakly supervised task over Gaussian class clusters.

    Class ``y`` has mean ``separation * e_y`` (unit basis vector) when
    ``classes <= dim``, otherwise a random unit direction.
    """

    theory: str = "sum"
    arity: int = 3
    n_samples: int = 100
    classes: int = 10
    dim: int = 16
    noise: float = 0.25
    separation: float = 1.0
    n_test: int = 1000

    def __post_init__(self):
        if self.theory == "hwf" and self.classes != len(HWF_CLASS_NAMES):
            object.__setattr__(self, "classes", len(HWF_CLASS_NAMES))
        if self.n_samples < 1 or self.n_test < 1 or self.dim < 1:
            raise ValueError("n_samples, n_test and dim must be positive")

    @property
    def label_space(self) -> LabelSpace:
        if self.theory == "hwf":
            return LabelSpace(self.classes, HWF_CLASS_NAMES)
        return LabelSpace(self.classes)


@dataclass
class SynthData:
    task: SynthTask
    dataset: Dataset
    features: EmbeddingTable
    test_ids: tuple[str, ...]
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def test(self) -> tuple[np.ndarray, np.ndarray]:
        return self.test_x, self.test_y


def class_means(task: SynthTask, rng: np.random.Generator) -> np.ndarray:
    if task.classes <= task.dim:
        return task.separation * np.eye(task.classes, task.dim)
    dirs = rng.standard_normal((task.classes, task.dim))
    return task.separation * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def synth_generate(task: SynthTask, seed: int = 0) -> SynthData:
    rng = np.random.default_rng(seed)
    means = class_means(task, rng)
    ls = task.label_space
    cons_probe = Constraint(task.theory, 0, task.arity)
    mask = hwf_mask(task.arity) if task.theory == "hwf" else theory_mask(cons_probe, ls)
    allowed = [np.array(sorted(a)) for a in mask.allowed]

    samples, ids, rows = [], [], []
    for s in range(task.n_samples):
        gold = tuple(int(rng.choice(a)) for a in allowed)
        target = apply_theory(task.theory, gold)
        inst = tuple(f"s{s}.{j}" for j in range(task.arity))
        sample = NesySample(f"s{s}", inst, Constraint(task.theory, target, task.arity), (), gold)
        samples.append(abduce(sample, ls))
        for j, y in enumerate(gold):
            ids.append(inst[j])
            rows.append(means[y] + task.noise * rng.standard_normal(task.dim))
    test_y = rng.integers(0, task.classes, task.n_test)
    test_x = means[test_y] + task.noise * rng.standard_normal((task.n_test, task.dim))
    return SynthData(
        task=task,
        dataset=Dataset(ls, tuple(samples)),
        features=EmbeddingTable(tuple(ids), np.array(rows)),
        test_ids=tuple(f"t{i}" for i in range(task.n_test)),
        test_x=test_x,
        test_y=test_y,
    )


def save_test_set(ids: Sequence[str], x: np.ndarray, y: np.ndarray, path: str | Path) -> None:
    lines = ["instance_id,label," + ",".join(f"v{j}" for j in range(x.shape[1]))]
    for iid, label, vec in zip(ids, y, x):
        lines.append(",".join([iid, str(int(label))] + [repr(float(v)) for v in vec]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_test_set(path: str | Path) -> tuple[list[str], np.ndarray, np.ndarray]:
    raw = np.genfromtxt(path, delimiter=",", dtype=str, skip_header=1, ndmin=2)
    if raw.size == 0:
        raise ValueError(f"{path}: empty test set")
    return list(raw[:, 0]), raw[:, 2:].astype(float), raw[:, 1].astype(int)


def write_synth(data: SynthData, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"dataset": out / "dataset.jsonl", "embeddings": out / "embeddings.csv", "test": out / "test.csv"}
    save_dataset(data.dataset, paths["dataset"])
    save_embeddings(data.features, paths["embeddings"])
    save_test_set(data.test_ids, data.test_x, data.test_y, paths["test"])
    return paths
