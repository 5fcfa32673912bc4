"""Pairwise-comparison datasets: parsing, validation, serialization, splitting.

Comparisons carry a score in [-1, 1]; negative favors the left item,
positive the right, magnitudes near zero mean "no preference". Scores are
stored as 64-bit floats and written back with shortest round-trip decimal
formatting so that serialize(parse(f)) is stable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

COMPARISONS_HEADER = ["user_id", "criterion", "left_item", "right_item", "score"]


@dataclass(frozen=True)
class Comparison:
    """One annotation: a preference between two items by one user."""

    user_id: str
    criterion: str
    left_item: str
    right_item: str
    score: float

    def __post_init__(self) -> None:
        if self.left_item == self.right_item:
            raise ValueError(
                f"self-comparison: left and right are both {self.left_item!r}"
            )
        if not np.isfinite(self.score) or not -1.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [-1, 1]")


@dataclass(frozen=True)
class ComparisonSet:
    """An ordered collection of comparisons with derived user/item sets.

    Iteration order is the input order; users/items are exactly those
    appearing in the comparisons.
    """

    comparisons: tuple[Comparison, ...]
    users: frozenset[str] = field(init=False)
    items: frozenset[str] = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "users", frozenset(c.user_id for c in self.comparisons)
        )
        items: set[str] = set()
        for c in self.comparisons:
            items.add(c.left_item)
            items.add(c.right_item)
        object.__setattr__(self, "items", frozenset(items))

    def __len__(self) -> int:
        return len(self.comparisons)

    def __iter__(self):
        return iter(self.comparisons)

    @property
    def criteria(self) -> frozenset[str]:
        return frozenset(c.criterion for c in self.comparisons)

    def restrict(
        self, user_id: str | None = None, criterion: str | None = None
    ) -> "ComparisonSet":
        """Subset by user and/or criterion, preserving order."""
        kept = tuple(
            c
            for c in self.comparisons
            if (user_id is None or c.user_id == user_id)
            and (criterion is None or c.criterion == criterion)
        )
        return ComparisonSet(kept)

    def filter(self, keep: Callable[[Comparison], bool]) -> "ComparisonSet":
        return ComparisonSet(tuple(c for c in self.comparisons if keep(c)))


@dataclass(frozen=True)
class FeatureTable:
    """Precomputed item features: item_id -> vector of `dim` reals."""

    dim: int
    features: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        for item, vec in self.features.items():
            if vec.shape != (self.dim,):
                raise ValueError(
                    f"feature vector for {item!r} has length {vec.shape}, expected {self.dim}"
                )
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"non-finite feature value for item {item!r}")

    def vector(self, item_id: str) -> np.ndarray:
        try:
            return self.features[item_id]
        except KeyError:
            raise ValueError(f"item {item_id!r} missing from feature table") from None

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.features


def parse_comparisons(path: str | Path) -> ComparisonSet:
    """Read a comparisons CSV (header user_id,criterion,left_item,right_item,score).

    Raises ValueError naming the offending 1-based line number on malformed
    rows, out-of-range scores, or self-comparisons.
    """
    path = Path(path)
    comparisons: list[Comparison] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        if header != COMPARISONS_HEADER:
            raise ValueError(
                f"{path}: bad header {header!r}, expected {COMPARISONS_HEADER!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ValueError(
                    f"{path}: line {lineno}: expected 5 columns, got {len(row)}"
                )
            user_id, criterion, left, right, score_text = row
            try:
                score = float(score_text)
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: unparsable score {score_text!r}"
                ) from None
            if not np.isfinite(score) or not -1.0 <= score <= 1.0:
                raise ValueError(
                    f"{path}: line {lineno}: score {score_text} outside [-1, 1]"
                )
            if left == right:
                raise ValueError(
                    f"{path}: line {lineno}: self-comparison of item {left!r}"
                )
            comparisons.append(Comparison(user_id, criterion, left, right, score))
    return ComparisonSet(tuple(comparisons))


def write_comparisons(cset: ComparisonSet, path: str | Path) -> None:
    """Write the canonical comparisons CSV (UTF-8, LF, shortest float repr)."""
    path = Path(path)
    with path.open("w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(COMPARISONS_HEADER) + "\n")
        for c in cset:
            fh.write(
                f"{c.user_id},{c.criterion},{c.left_item},{c.right_item},{c.score!r}\n"
            )


def parse_features(path: str | Path) -> FeatureTable:
    """Read a features CSV (header item_id,f0,...,f{d-1})."""
    path = Path(path)
    features: dict[str, np.ndarray] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        if len(header) < 2 or header[0] != "item_id":
            raise ValueError(f"{path}: bad header {header!r}")
        dim = len(header) - 1
        expected = ["item_id"] + [f"f{i}" for i in range(dim)]
        if header != expected:
            raise ValueError(f"{path}: bad header {header!r}, expected {expected!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise ValueError(
                    f"{path}: line {lineno}: expected {dim + 1} columns, got {len(row)}"
                )
            item_id = row[0]
            if item_id in features:
                raise ValueError(
                    f"{path}: line {lineno}: duplicate item_id {item_id!r}"
                )
            try:
                vec = np.array([float(v) for v in row[1:]], dtype=np.float64)
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: unparsable feature value"
                ) from None
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"{path}: line {lineno}: non-finite feature value")
            features[item_id] = vec
    return FeatureTable(dim, features)


def write_features(table: FeatureTable, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="\n", encoding="utf-8") as fh:
        fh.write("item_id," + ",".join(f"f{i}" for i in range(table.dim)) + "\n")
        for item in table.features:
            vec = table.features[item]
            fh.write(item + "," + ",".join(repr(float(v)) for v in vec) + "\n")


def split(
    cset: ComparisonSet, train_fraction: float, seed: int
) -> tuple[ComparisonSet, ComparisonSet]:
    """Per-user stratified split, deterministic given the seed.

    Every user keeps floor(n_u * train_fraction) comparisons in the train
    part, adjusted so both parts are non-empty; a global split could leave
    users without test comparisons, which would leave per-user metrics
    undefined. Input order is preserved within both parts.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    per_user: dict[str, list[int]] = {}
    for idx, c in enumerate(cset.comparisons):
        per_user.setdefault(c.user_id, []).append(idx)
    offenders = sorted(u for u, idxs in per_user.items() if len(idxs) < 2)
    if offenders:
        raise ValueError(
            f"users with fewer than 2 comparisons cannot be split: {offenders}"
        )
    rng = np.random.default_rng(seed)
    train_idx: set[int] = set()
    for user in sorted(per_user):
        idxs = per_user[user]
        n = len(idxs)
        n_train = int(np.floor(n * train_fraction))
        n_train = min(max(n_train, 1), n - 1)
        chosen = rng.permutation(n)[:n_train]
        train_idx.update(idxs[i] for i in chosen)
    train = tuple(c for i, c in enumerate(cset.comparisons) if i in train_idx)
    test = tuple(c for i, c in enumerate(cset.comparisons) if i not in train_idx)
    return ComparisonSet(train), ComparisonSet(test)


def comparison_set(rows: Iterable[tuple[str, str, str, str, float]]) -> ComparisonSet:
    """Build a ComparisonSet from plain tuples; convenience for tests/fixtures."""
    return ComparisonSet(tuple(Comparison(*row) for row in rows))
