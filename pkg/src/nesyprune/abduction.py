"""Enumerate the pre-images of a sample: every label tuple satisfying its constraint.

Three theories are supported:

* ``sum``: the labels (digits ``0..c-1``) add up to the target.
* ``max``: the largest label equals the target.
* ``hwf``: the labels spell an arithmetic expression ``d op d op ... d`` whose
  value is the target. Digits are 1-9 and operators are ``+ - *``; ``*`` binds
  tighter than ``+`` and ``-``, all operators are left associative.

HWF uses a single 12-class label space. Class ``d - 1`` is digit ``d`` and
classes 9, 10, 11 are ``+``, ``-``, ``*``. Even positions may only hold digits
and odd positions only operators; :func:`hwf_mask` encodes that.

Enumeration is depth-first in ascending label order, so results come out
lexicographically sorted without a final sort.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import Constraint, Dataset, DatasetError, LabelSpace, NesySample, PreImage

__all__ = [
    "AbductionWarning",
    "Constraint",
    "HWF_CLASS_NAMES",
    "HWF_LABEL_SPACE",
    "PositionMask",
    "PreimageLimitError",
    "abduce",
    "abduce_dataset",
    "abduce_hwf",
    "abduce_max",
    "abduce_sum",
    "evaluate",
    "hwf_mask",
    "scan_preimages",
]

HWF_DIGITS = tuple(range(9))
PLUS, MINUS, TIMES = 9, 10, 11
HWF_OPERATORS = (PLUS, MINUS, TIMES)
HWF_CLASS_NAMES = tuple(str(d) for d in range(1, 10)) + ("+", "-", "*")
HWF_LABEL_SPACE = LabelSpace(12, HWF_CLASS_NAMES)


class AbductionWarning(UserWarning):
    """Issued when a constraint admits no pre-image; the sample is rejected."""


class PreimageLimitError(RuntimeError):
    """Raised when enumeration would exceed the caller's pre-image cap."""


@dataclass(frozen=True)
class PositionMask:
    allowed: tuple[frozenset[int], ...]

    def __post_init__(self):
        object.__setattr__(self, "allowed", tuple(frozenset(a) for a in self.allowed))
        if any(not a for a in self.allowed):
            raise ValueError("every position needs at least one allowed class")

    @classmethod
    def uniform(cls, arity: int, classes: int) -> "PositionMask":
        return cls(tuple(frozenset(range(classes)) for _ in range(arity)))

    def __len__(self):
        return len(self.allowed)

    def check(self, classes: int) -> None:
        for a in self.allowed:
            if min(a) < 0 or max(a) >= classes:
                raise ValueError(f"mask refers to classes outside [0, {classes})")


def hwf_mask(arity: int) -> PositionMask:
    if arity < 1 or arity % 2 == 0:
        raise ValueError(f"hwf arity must be odd and positive, got {arity}")
    return PositionMask(tuple(HWF_DIGITS if j % 2 == 0 else HWF_OPERATORS for j in range(arity)))


def _hwf_value(labels: Sequence[int]) -> int | None:
    # None when the sequence is not a well-formed expression.
    if len(labels) % 2 == 0:
        return None
    total, term, sign = 0, 0, 1
    for j, lab in enumerate(labels):
        if j % 2 == 0:
            if lab not in HWF_DIGITS:
                return None
            d = lab + 1
            term = d if j == 0 or labels[j - 1] != TIMES else term * d
        else:
            if lab not in HWF_OPERATORS:
                return None
            if lab != TIMES:
                total += sign * term
                sign = 1 if lab == PLUS else -1
    return total + sign * term


def evaluate(theory: str, labels: Sequence[int]) -> int | None:
    """Apply a theory to a label tuple; None if the tuple is not well formed."""
    if not labels:
        return None
    if theory == "sum":
        return sum(labels)
    if theory == "max":
        return max(labels)
    if theory == "hwf":
        return _hwf_value(labels)
    raise ValueError(f"unknown theory {theory!r}")


def _reject(msg: str) -> tuple[PreImage, ...]:
    warnings.warn(msg, AbductionWarning, stacklevel=3)
    return ()


def _check_limit(out: list, limit: int | None) -> None:
    if limit is not None and len(out) > limit:
        raise PreimageLimitError(f"more than {limit} pre-images")


def abduce_sum(arity: int, target: int, classes: int = 10, limit: int | None = None) -> tuple[PreImage, ...]:
    if arity < 1:
        raise ValueError("arity must be >= 1")
    top = classes - 1
    if not 0 <= target <= top * arity:
        return _reject(f"sum target {target} outside [0, {top * arity}] for arity {arity}")
    out: list[PreImage] = []
    prefix: list[int] = []

    def rec(rest: int, remaining: int):
        if remaining == 0:
            out.append(tuple(prefix))
            _check_limit(out, limit)
            return
        # remaining - 1 positions must absorb rest - v
        lo = max(0, rest - top * (remaining - 1))
        for v in range(lo, min(top, rest) + 1):
            prefix.append(v)
            rec(rest - v, remaining - 1)
            prefix.pop()

    rec(target, arity)
    return tuple(out)


def abduce_max(arity: int, target: int, classes: int = 10, limit: int | None = None) -> tuple[PreImage, ...]:
    if arity < 1:
        raise ValueError("arity must be >= 1")
    if not 0 <= target <= classes - 1:
        return _reject(f"max target {target} outside [0, {classes - 1}]")
    out: list[PreImage] = []
    prefix: list[int] = []

    def rec(remaining: int, hit: bool):
        if remaining == 0:
            out.append(tuple(prefix))
            _check_limit(out, limit)
            return
        if remaining == 1 and not hit:
            choices: Iterable[int] = (target,)
        else:
            choices = range(target + 1)
        for v in choices:
            prefix.append(v)
            rec(remaining - 1, hit or v == target)
            prefix.pop()

    rec(arity, False)
    return tuple(out)


def abduce_hwf(arity: int, target: int, limit: int | None = None) -> tuple[PreImage, ...]:
    if arity < 1 or arity % 2 == 0:
        raise ValueError(f"hwf arity must be odd and positive, got {arity}")
    out: list[PreImage] = []
    prefix: list[int] = []

    # total: signed sum of closed terms; term: running product; sign applies to term
    def rec(pos: int, total: int, term: int, sign: int):
        d_labels = HWF_DIGITS
        for lab in d_labels:
            d = lab + 1
            new_term = term * d if prefix and prefix[-1] == TIMES else d
            prefix.append(lab)
            if pos == arity - 1:
                if total + sign * new_term == target:
                    out.append(tuple(prefix))
                    _check_limit(out, limit)
            else:
                for op in HWF_OPERATORS:
                    prefix.append(op)
                    if op == TIMES:
                        rec(pos + 2, total, new_term, sign)
                    else:
                        rec(pos + 2, total + sign * new_term, 0, 1 if op == PLUS else -1)
                    prefix.pop()
            prefix.pop()

    rec(0, 0, 0, 1)
    out.sort()
    if not out:
        return _reject(f"no hwf expression of length {arity} evaluates to {target}")
    return tuple(out)


def scan_preimages(constraint: Constraint, mask: PositionMask) -> tuple[PreImage, ...]:
    """Exhaustive scan over every masked tuple. Exponential; meant as a reference."""
    if len(mask) != constraint.arity:
        raise ValueError("mask length must equal the constraint arity")
    hits = [
        tup
        for tup in itertools.product(*(sorted(a) for a in mask.allowed))
        if evaluate(constraint.theory, tup) == constraint.target
    ]
    return tuple(sorted(hits))


def theory_mask(constraint: Constraint, label_space: LabelSpace) -> PositionMask:
    if constraint.theory == "hwf":
        return hwf_mask(constraint.arity)
    return PositionMask.uniform(constraint.arity, label_space.class_count)


def abduce(sample: NesySample, label_space: LabelSpace, limit: int | None = None) -> NesySample:
    """Fill ``sample.preimages`` from its constraint.

    An unsatisfiable constraint gives back the sample with no pre-images (and an
    :class:`AbductionWarning`); callers treat that as a rejected sample.
    A gold label tuple that is not among the results is a hard error.
    """
    con = sample.constraint
    if con.arity != sample.arity:
        raise DatasetError(f"constraint arity {con.arity} != instance count {sample.arity}", sample_id=sample.id)
    if con.theory == "sum":
        pre = abduce_sum(con.arity, con.target, label_space.class_count, limit)
    elif con.theory == "max":
        pre = abduce_max(con.arity, con.target, label_space.class_count, limit)
    else:
        if label_space.class_count != len(HWF_CLASS_NAMES):
            raise DatasetError("hwf samples need the 12-class hwf label space", sample_id=sample.id)
        pre = abduce_hwf(con.arity, con.target, limit)
    out = NesySample(sample.id, sample.instance_ids, con, pre, None)
    if sample.gold_labels is not None:
        if pre and sample.gold_labels not in pre:
            raise DatasetError("gold pre-image missing from abduced pre-images", sample_id=sample.id)
        out = NesySample(sample.id, sample.instance_ids, con, pre, sample.gold_labels)
    return out


def abduce_dataset(dataset: Dataset, limit: int | None = None) -> tuple[Dataset, list[str]]:
    """Abduce every sample; returns the dataset of accepted samples and the rejected ids."""
    kept, rejected = [], []
    for s in dataset.samples:
        filled = abduce(s, dataset.label_space, limit)
        if filled.preimages:
            kept.append(filled)
        else:
            rejected.append(s.id)
    if not kept:
        raise DatasetError("every sample was rejected by abduction")
    return dataset.replace_samples(kept), rejected
