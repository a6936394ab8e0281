"""Domain types and JSON Lines / CSV serialization for weakly supervised samples.

A dataset file is JSON Lines. The first line is a header::

    {"label_space": {"class_count": 10}}

and every following line is one sample::

    {"id": "s0", "instances": ["s0.0", "s0.1"],
     "constraint": {"theory": "sum", "target": 8, "arity": 2},
     "preimages": [[0, 8], [1, 7], ...], "gold": [1, 7]}

``preimages`` and ``gold`` are optional on input. Pre-images are always held
sorted lexicographically so that the i-th pre-image of a sample is well defined.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

PreImage = tuple[int, ...]

THEORIES = ("sum", "max", "hwf")


class DatasetError(ValueError):
    """Raised when a dataset or embedding file violates a format or invariant rule."""

    def __init__(self, message: str, *, line: int | None = None, sample_id: str | None = None):
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if sample_id is not None:
            prefix.append(f"sample {sample_id!r}")
        full = f"{', '.join(prefix)}: {message}" if prefix else message
        super().__init__(full)
        self.line = line
        self.sample_id = sample_id


@dataclass(frozen=True)
class LabelSpace:
    class_count: int
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if int(self.class_count) != self.class_count or self.class_count < 2:
            raise DatasetError(f"class_count must be an integer >= 2, got {self.class_count!r}")
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(str(n) for n in self.class_names))
            if len(self.class_names) != self.class_count:
                raise DatasetError("class_names length must equal class_count")

    def name(self, class_id: int) -> str:
        if self.class_names is None:
            return str(class_id)
        return self.class_names[class_id]


@dataclass(frozen=True)
class Constraint:
    """Weak label of a sample: ``theory`` applied to the gold labels yields ``target``."""

    theory: str
    target: int
    arity: int

    def __post_init__(self):
        if self.theory not in THEORIES:
            raise DatasetError(f"unknown theory {self.theory!r}; expected one of {THEORIES}")
        if isinstance(self.target, bool) or int(self.target) != self.target:
            raise DatasetError(f"constraint target must be an integer, got {self.target!r}")
        if int(self.arity) != self.arity or self.arity < 1:
            raise DatasetError(f"constraint arity must be >= 1, got {self.arity!r}")
        if self.theory == "hwf" and self.arity % 2 == 0:
            raise DatasetError(f"hwf arity must be odd, got {self.arity}")
        object.__setattr__(self, "target", int(self.target))
        object.__setattr__(self, "arity", int(self.arity))

    def to_json(self) -> dict:
        return {"theory": self.theory, "target": self.target, "arity": self.arity}


@dataclass(frozen=True)
class Instance:
    id: str
    sample_id: str
    position: int


@dataclass(frozen=True)
class NesySample:
    """One training sample: its instances, weak label, and candidate pre-images.

    ``pruned`` marks a sample whose pre-image list is the output of pruning; the
    gold pre-image may legitimately be absent from such a list.
    """

    id: str
    instance_ids: tuple[str, ...]
    constraint: Constraint
    preimages: tuple[PreImage, ...] = ()
    gold_labels: PreImage | None = None
    pruned: bool = False

    def __post_init__(self):
        object.__setattr__(self, "instance_ids", tuple(str(i) for i in self.instance_ids))
        pre = tuple(tuple(int(v) for v in p) for p in self.preimages)
        object.__setattr__(self, "preimages", tuple(sorted(pre)))
        if self.gold_labels is not None:
            object.__setattr__(self, "gold_labels", tuple(int(v) for v in self.gold_labels))
        self._validate()

    def _validate(self):
        m = len(self.instance_ids)
        if m == 0:
            raise DatasetError("sample has no instances", sample_id=self.id)
        if len(set(self.instance_ids)) != m:
            raise DatasetError("duplicate instance ids within sample", sample_id=self.id)
        if self.constraint.arity != m:
            raise DatasetError(
                f"constraint arity {self.constraint.arity} != instance count {m}", sample_id=self.id
            )
        for p in self.preimages:
            if len(p) != m:
                raise DatasetError(f"pre-image {list(p)} has length {len(p)}, expected {m}", sample_id=self.id)
        if len(set(self.preimages)) != len(self.preimages):
            raise DatasetError("duplicate pre-images", sample_id=self.id)
        if self.gold_labels is not None:
            if len(self.gold_labels) != m:
                raise DatasetError("gold labels length differs from instance count", sample_id=self.id)
            if self.preimages and not self.pruned and self.gold_labels not in self.preimages:
                raise DatasetError("gold pre-image missing from pre-images", sample_id=self.id)

    @property
    def arity(self) -> int:
        return len(self.instance_ids)

    @property
    def omega(self) -> int:
        return len(self.preimages)

    def with_preimages(self, preimages: Iterable[Sequence[int]], *, pruned: bool | None = None) -> "NesySample":
        return NesySample(
            id=self.id,
            instance_ids=self.instance_ids,
            constraint=self.constraint,
            preimages=tuple(tuple(p) for p in preimages),
            gold_labels=self.gold_labels,
            pruned=self.pruned if pruned is None else pruned,
        )

    def instances(self) -> list[Instance]:
        return [Instance(iid, self.id, pos) for pos, iid in enumerate(self.instance_ids)]

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "instances": list(self.instance_ids),
            "constraint": self.constraint.to_json(),
            "preimages": [list(p) for p in self.preimages],
        }
        if self.gold_labels is not None:
            out["gold"] = list(self.gold_labels)
        if self.pruned:
            out["pruned"] = True
        return out


@dataclass(frozen=True)
class Dataset:
    label_space: LabelSpace
    samples: tuple[NesySample, ...]

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.samples:
            raise DatasetError("dataset must contain at least one sample")
        c = self.label_space.class_count
        seen_samples: set[str] = set()
        seen_instances: set[str] = set()
        for s in self.samples:
            if s.id in seen_samples:
                raise DatasetError("duplicate sample id", sample_id=s.id)
            seen_samples.add(s.id)
            for iid in s.instance_ids:
                if iid in seen_instances:
                    raise DatasetError(f"instance id {iid!r} used by more than one sample", sample_id=s.id)
                seen_instances.add(iid)
            labelled = list(s.preimages) + ([s.gold_labels] if s.gold_labels is not None else [])
            for p in labelled:
                if any(v < 0 or v >= c for v in p):
                    raise DatasetError(f"label out of range [0, {c}) in {list(p)}", sample_id=s.id)

    @property
    def n(self) -> int:
        return len(self.samples)

    def instances(self) -> Iterator[Instance]:
        for s in self.samples:
            yield from s.instances()

    def instance_ids(self) -> list[str]:
        return [iid for s in self.samples for iid in s.instance_ids]

    def replace_samples(self, samples: Iterable[NesySample]) -> "Dataset":
        return Dataset(self.label_space, tuple(samples))


def _sample_from_json(obj: Mapping, line: int) -> NesySample:
    sid = obj.get("id")
    if not isinstance(sid, str):
        raise DatasetError("sample needs a string 'id'", line=line)
    try:
        instances = obj["instances"]
        cons = obj["constraint"]
        constraint = Constraint(cons["theory"], cons["target"], cons["arity"])
    except KeyError as exc:
        raise DatasetError(f"missing field {exc.args[0]!r}", line=line, sample_id=sid) from None
    except DatasetError as exc:
        raise DatasetError(str(exc), line=line, sample_id=sid) from None
    try:
        return NesySample(
            id=sid,
            instance_ids=tuple(instances),
            constraint=constraint,
            preimages=tuple(tuple(p) for p in obj.get("preimages", [])),
            gold_labels=tuple(obj["gold"]) if obj.get("gold") is not None else None,
            pruned=bool(obj.get("pruned", False)),
        )
    except DatasetError as exc:
        raise DatasetError(str(exc), line=line) from None


def parse_dataset(lines: Iterable[str]) -> Dataset:
    label_space = None
    samples = []
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"invalid JSON ({exc.msg})", line=lineno) from None
        if not isinstance(obj, dict):
            raise DatasetError("each line must be a JSON object", line=lineno)
        if label_space is None:
            if "label_space" not in obj:
                raise DatasetError("first line must be the label_space header", line=lineno)
            ls = obj["label_space"]
            try:
                label_space = LabelSpace(ls["class_count"], ls.get("class_names"))
            except (KeyError, TypeError):
                raise DatasetError("label_space header needs class_count", line=lineno) from None
            except DatasetError as exc:
                raise DatasetError(str(exc), line=lineno) from None
            continue
        samples.append(_sample_from_json(obj, lineno))
    if label_space is None:
        raise DatasetError("empty dataset file")
    return Dataset(label_space, tuple(samples))


def load_dataset(path: str | Path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh)


def dump_dataset(dataset: Dataset) -> str:
    header: dict = {"class_count": dataset.label_space.class_count}
    if dataset.label_space.class_names is not None:
        header["class_names"] = list(dataset.label_space.class_names)
    lines = [json.dumps({"label_space": header}, separators=(",", ":"))]
    for s in dataset.samples:
        lines.append(json.dumps(s.to_json(), separators=(",", ":")))
    return "\n".join(lines) + "\n"


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_text(dump_dataset(dataset), encoding="utf-8")


@dataclass(frozen=True)
class EmbeddingTable:
    """Instance id to vector map backed by one dense matrix."""

    ids: tuple[str, ...]
    matrix: np.ndarray
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        mat = np.asarray(self.matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != len(ids):
            raise DatasetError(f"embedding matrix shape {mat.shape} does not match {len(ids)} ids")
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate instance ids in embedding table")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "_index", {iid: r for r, iid in enumerate(ids)})

    @classmethod
    def from_mapping(cls, rows: Mapping[str, Sequence[float]]) -> "EmbeddingTable":
        ids = list(rows)
        return cls(tuple(ids), np.array([rows[i] for i in ids], dtype=float).reshape(len(ids), -1))

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __contains__(self, iid: str) -> bool:
        return iid in self._index

    def __getitem__(self, iid: str) -> np.ndarray:
        return self.matrix[self._index[iid]]

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        try:
            return self.matrix[[self._index[i] for i in ids]]
        except KeyError as exc:
            raise DatasetError(f"instance {exc.args[0]!r} has no embedding") from None

    def check_covers(self, dataset: Dataset) -> None:
        missing = [i for i in dataset.instance_ids() if i not in self._index]
        if missing:
            raise DatasetError(f"{len(missing)} instances have no embedding, e.g. {missing[0]!r}")


def load_embeddings(path: str | Path) -> EmbeddingTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("empty embedding file") from None
        if not header or header[0] != "instance_id":
            raise DatasetError("embedding header must start with 'instance_id'", line=1)
        dim = len(header) - 1
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise DatasetError(f"expected {dim + 1} fields, got {len(row)}", line=lineno)
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise DatasetError("non-numeric embedding value", line=lineno) from None
            ids.append(row[0])
    return EmbeddingTable(tuple(ids), np.array(rows, dtype=float).reshape(len(ids), dim))


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["instance_id"] + [f"v{j}" for j in range(table.dim)])
        for iid, vec in zip(table.ids, table.matrix):
            writer.writerow([iid] + [repr(float(v)) for v in vec])
