"""Dataset ingestion: LIBSVM text parsing, label normalization, sharding.

The on-disk format is the classic LIBSVM one: a label followed by
space-separated index:value pairs with 1-based, strictly increasing
indices.  Parsing is strict (malformed input raises ParseError with the
line number) because silently skipping bad rows changes every number
downstream.

Partitioning across clients is deterministic given (num_clients, seed):
a splitmix64-driven Fisher-Yates shuffle fixes the sample order, then
samples are dealt round-robin.  The generator is spelled out here rather
than taken from numpy so the assignment never changes across library
versions.
"""

from __future__ import annotations

import gzip
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .objective import ClientShard, Regularizer

__all__ = [
    "ParseError",
    "Dataset",
    "PartitionPlan",
    "parse_libsvm",
    "format_libsvm",
    "load_libsvm_file",
    "normalize_labels",
    "plan_partition",
    "partition",
    "make_synthetic",
    "load_toy",
]

TOY_RESOURCE = "toy_d10.libsvm"


class ParseError(ValueError):
    """Malformed LIBSVM input; message carries the 1-based line number."""


@dataclass
class Dataset:
    """Sparse binary-classification dataset.

    labels: (N,) float array of raw labels.
    rows:   per sample, a list of (index, value) pairs with 1-based,
            strictly increasing indices.
    num_features: feature dimension; at least the largest index seen.
    """

    labels: np.ndarray
    rows: list[list[tuple[int, float]]]
    num_features: int

    @property
    def num_samples(self) -> int:
        return len(self.rows)

    def to_dense(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.zeros((self.num_samples, self.num_features))
        for i, row in enumerate(self.rows):
            for idx, val in row:
                x[i, idx - 1] = val
        return x, self.labels.astype(np.float64)


def parse_libsvm(source: Iterable[str] | str) -> Dataset:
    """Parse LIBSVM text into a Dataset.

    Accepts a string or any iterable of lines.  Blank lines are skipped;
    a label with no features is a legal all-zero row.
    """
    if isinstance(source, str):
        lines = source.splitlines()
    else:
        lines = source
    labels: list[float] = []
    rows: list[list[tuple[int, float]]] = []
    max_index = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        try:
            label = float(parts[0])
        except ValueError:
            raise ParseError(f"line {lineno}: label {parts[0]!r} is not a number") from None
        row: list[tuple[int, float]] = []
        prev_index = 0
        for token in parts[1:]:
            idx_s, sep, val_s = token.partition(":")
            if not sep:
                raise ParseError(f"line {lineno}: expected index:value, got {token!r}")
            try:
                idx = int(idx_s)
            except ValueError:
                raise ParseError(f"line {lineno}: index {idx_s!r} is not an integer") from None
            try:
                val = float(val_s)
            except ValueError:
                raise ParseError(f"line {lineno}: value {val_s!r} is not a number") from None
            if idx < 1:
                raise ParseError(f"line {lineno}: index {idx} must be >= 1")
            if idx <= prev_index:
                raise ParseError(
                    f"line {lineno}: index {idx} not strictly increasing after {prev_index}"
                )
            if not np.isfinite(val):
                raise ParseError(f"line {lineno}: value {val!r} is not finite")
            prev_index = idx
            row.append((idx, val))
        if prev_index:
            max_index = max(max_index, prev_index)
        labels.append(label)
        rows.append(row)
    if not rows:
        raise ParseError("no samples found")
    return Dataset(
        labels=np.array(labels, dtype=np.float64),
        rows=rows,
        num_features=max(max_index, 1),
    )


def format_libsvm(dataset: Dataset) -> str:
    """Serialize a Dataset back to LIBSVM text (exact float round-trip)."""
    out = io.StringIO()
    for label, row in zip(dataset.labels, dataset.rows):
        fields = [_format_number(float(label))]
        fields.extend(f"{idx}:{_format_number(val)}" for idx, val in row)
        out.write(" ".join(fields))
        out.write("\n")
    return out.getvalue()


def _format_number(v: float) -> str:
    # repr() round-trips doubles exactly; integers print without the dot
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def load_libsvm_file(path: str | Path) -> Dataset:
    """Read a LIBSVM file, transparently decompressing .gz files."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as fh:
        return parse_libsvm(fh)


def normalize_labels(dataset: Dataset) -> Dataset:
    """Map the two raw label values onto -1/+1 (larger raw value -> +1).

    Datasets in the wild use {0,1}, {1,2}, or {-1,+1}; downstream code
    only ever sees the normalized form.
    """
    distinct = sorted(set(float(v) for v in dataset.labels))
    if len(distinct) != 2:
        raise ValueError(
            f"expected exactly 2 distinct labels, found {len(distinct)}: {distinct[:5]}"
        )
    lo, hi = distinct
    mapped = np.where(dataset.labels == hi, 1.0, -1.0)
    return Dataset(labels=mapped, rows=dataset.rows, num_features=dataset.num_features)


# splitmix64 constants (Steele, Lea, Flood 2014); fixed here so shard
# assignments never depend on an external RNG implementation.
_MASK64 = (1 << 64) - 1
_SM64_GAMMA = 0x9E3779B97F4A7C15
_SM64_MUL1 = 0xBF58476D1CE4E5B9
_SM64_MUL2 = 0x94D049BB133111EB


class _SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + _SM64_GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _SM64_MUL1) & _MASK64
        z = ((z ^ (z >> 27)) * _SM64_MUL2) & _MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        return self.next() % bound


@dataclass(frozen=True)
class PartitionPlan:
    """Deterministic assignment of sample indices to clients."""

    num_clients: int
    seed: int
    assignment: tuple[tuple[int, ...], ...] = field(repr=False)

    @property
    def shard_sizes(self) -> list[int]:
        return [len(a) for a in self.assignment]


def plan_partition(num_samples: int, num_clients: int, seed: int) -> PartitionPlan:
    """Shuffle sample indices (Fisher-Yates over splitmix64) and deal
    them round-robin; shard sizes differ by at most one."""
    if num_clients < 1:
        raise ValueError("need at least one client")
    if num_samples < num_clients:
        raise ValueError(
            f"cannot split {num_samples} samples across {num_clients} clients"
        )
    order = list(range(num_samples))
    rng = _SplitMix64(seed)
    for i in range(num_samples - 1, 0, -1):
        j = rng.below(i + 1)
        order[i], order[j] = order[j], order[i]
    assignment = tuple(tuple(order[c::num_clients]) for c in range(num_clients))
    return PartitionPlan(num_clients=num_clients, seed=seed, assignment=assignment)


def partition(
    dataset: Dataset,
    num_clients: int,
    seed: int = 0,
    lam: float = 1e-6,
    regularizer: Regularizer = Regularizer.L2,
    plan: PartitionPlan | None = None,
) -> list[ClientShard]:
    """Split a normalized dataset into per-client shards."""
    if not np.all(np.isin(dataset.labels, (-1.0, 1.0))):
        raise ValueError("labels must be normalized to -1/+1 before partitioning")
    if plan is None:
        plan = plan_partition(dataset.num_samples, num_clients, seed)
    elif plan.num_clients != num_clients:
        raise ValueError("plan was built for a different client count")
    x, y = dataset.to_dense()
    shards = []
    for client_rows in plan.assignment:
        idx = np.array(client_rows, dtype=np.intp)
        shards.append(
            ClientShard(x[idx], y[idx], lam=lam, regularizer=regularizer)
        )
    return shards


def make_synthetic(
    num_samples: int,
    num_features: int,
    seed: int = 0,
    density: float = 0.8,
    flip_fraction: float = 0.1,
    scale: float = 1.0,
) -> Dataset:
    """Generate a non-separable logistic dataset.

    Labels are drawn from the logistic model of a random planted vector,
    then a fraction is flipped outright; the flips keep the optimum at a
    moderate norm so the Hessian stays well-conditioned there.  Feature
    values are rounded to 12 significant digits so the dataset survives a
    text round-trip unchanged.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((num_samples, num_features)) * scale
    keep = rng.random((num_samples, num_features)) < density
    x = np.where(keep, x, 0.0)
    planted = rng.standard_normal(num_features)
    prob = 1.0 / (1.0 + np.exp(-(x @ planted)))
    labels = np.where(rng.random(num_samples) < prob, 1.0, -1.0)
    flips = rng.random(num_samples) < flip_fraction
    labels = np.where(flips, -labels, labels)
    rows: list[list[tuple[int, float]]] = []
    for i in range(num_samples):
        row = [
            (j + 1, float(f"{x[i, j]:.12g}"))
            for j in range(num_features)
            if x[i, j] != 0.0
        ]
        rows.append(row)
    return Dataset(
        labels=labels.astype(np.float64), rows=rows, num_features=num_features
    )


def load_toy() -> Dataset:
    """Load the small bundled dataset (10 features, 200 samples)."""
    from importlib import resources

    ref = resources.files("c2eden").joinpath("data", TOY_RESOURCE)
    return parse_libsvm(ref.read_text(encoding="utf-8"))
