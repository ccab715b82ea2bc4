"""Parametric cumulative CTMC over subsets of a ground set.

Items are indexed 0..n-1 everywhere inside the library.  The serialization
layer (:mod:`hazard_ctmc.io`) converts to 1-based indices for anything a user
reads or writes, and back.

The rate of adding item ``j`` to state ``S`` is
``exp(theta[j, j] + sum(theta[i, j] for i in S))``.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

MAX_ITEMS = 512


class PreconditionError(ValueError):
    """An operation was called with arguments outside its domain."""


def _check_n(n):
    if n < 1:
        raise PreconditionError(f"item count must be positive, got {n}")
    if n > MAX_ITEMS:
        raise PreconditionError(f"item count {n} exceeds capacity {MAX_ITEMS}")


@dataclass(frozen=True, eq=False)
class ParamMatrix:
    """The n x n log-rate matrix of the model.

    ``blocks`` optionally declares a block-diagonal structure as a list of
    ``(start, stop)`` index ranges covering ``0..n``; it is never inferred.
    """

    theta: np.ndarray
    item_names: Optional[tuple] = None
    blocks: Optional[tuple] = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64, copy=True)
        if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
            raise PreconditionError(f"theta must be square, got shape {theta.shape}")
        _check_n(theta.shape[0])
        if not np.all(np.isfinite(theta)):
            raise PreconditionError("theta has non-finite entries")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if self.item_names is not None:
            names = tuple(str(x) for x in self.item_names)
            if len(names) != theta.shape[0]:
                raise PreconditionError("item_names length does not match n")
            object.__setattr__(self, "item_names", names)
        if self.blocks is not None:
            blocks = tuple((int(a), int(b)) for a, b in self.blocks)
            pos = 0
            for a, b in blocks:
                if a != pos or b <= a:
                    raise PreconditionError(f"blocks must tile 0..n contiguously: {blocks}")
                pos = b
            if pos != theta.shape[0]:
                raise PreconditionError(f"blocks must tile 0..n contiguously: {blocks}")
            object.__setattr__(self, "blocks", blocks)

    @property
    def n(self):
        return self.theta.shape[0]

    @property
    def weights(self):
        return np.exp(self.theta)

    def is_diagonal(self):
        off = self.theta - np.diag(np.diag(self.theta))
        return not np.any(off)

    def with_theta(self, theta):
        return ParamMatrix(theta, self.item_names, self.blocks)

    def __eq__(self, other):
        if not isinstance(other, ParamMatrix):
            return NotImplemented
        return (
            np.array_equal(self.theta, other.theta)
            and self.item_names == other.item_names
            and self.blocks == other.blocks
        )

    __hash__ = None


@dataclass(frozen=True)
class ItemSet:
    """A subset of ``{0..n-1}`` stored as an integer bitmask."""

    n: int
    bits: int = 0

    def __post_init__(self):
        _check_n(self.n)
        if self.bits < 0 or self.bits >> self.n:
            raise PreconditionError(f"bitmask {self.bits:#x} out of range for n={self.n}")

    @classmethod
    def from_items(cls, n, items=()):
        bits = 0
        for i in items:
            i = int(i)
            if not 0 <= i < n:
                raise PreconditionError(f"item {i} out of range for n={n}")
            bits |= 1 << i
        return cls(n, bits)

    @classmethod
    def full(cls, n):
        return cls(n, (1 << n) - 1)

    @property
    def size(self):
        return bin(self.bits).count("1")

    def __len__(self):
        return self.size

    def __contains__(self, item):
        return 0 <= item < self.n and bool(self.bits >> item & 1)

    def __iter__(self):
        return iter(self.items)

    @property
    def items(self):
        return tuple(i for i in range(self.n) if self.bits >> i & 1)

    def as_array(self):
        return np.array(self.items, dtype=np.int64)

    def mask(self):
        m = np.zeros(self.n, dtype=bool)
        m[list(self.items)] = True
        return m

    def add(self, item):
        return ItemSet.from_items(self.n, self.items + (item,))

    def __repr__(self):
        return f"ItemSet(n={self.n}, items={set(self.items) or '{}'})"


def as_sequence(sigma, n=None):
    """Validate an ordered, duplicate-free item sequence; returns int64 array."""
    seq = np.asarray(sigma, dtype=np.int64).reshape(-1)
    if len(set(seq.tolist())) != seq.size:
        raise PreconditionError(f"sequence has duplicates: {seq.tolist()}")
    if n is not None and seq.size and (seq.min() < 0 or seq.max() >= n):
        raise PreconditionError(f"sequence items out of range for n={n}: {seq.tolist()}")
    return seq


def _as_items(s, n):
    if isinstance(s, ItemSet):
        if s.n != n:
            raise PreconditionError(f"item set capacity {s.n} does not match n={n}")
        return s.as_array()
    return as_sequence(sorted(int(i) for i in s), n)


@dataclass
class Dataset:
    """N observed item sets, optionally with their true observation times."""

    n: int
    samples: list
    times: Optional[np.ndarray] = None
    item_names: Optional[tuple] = None

    def __post_init__(self):
        _check_n(self.n)
        samples = []
        for s in self.samples:
            if not isinstance(s, ItemSet):
                s = ItemSet.from_items(self.n, s)
            elif s.n != self.n:
                raise PreconditionError(f"sample capacity {s.n} does not match n={self.n}")
            samples.append(s)
        self.samples = samples
        if self.times is not None:
            times = np.asarray(self.times, dtype=np.float64).reshape(-1)
            if times.size != len(samples):
                raise PreconditionError(
                    f"times length {times.size} does not match {len(samples)} samples"
                )
            if np.any(times < 0) or not np.all(np.isfinite(times)):
                raise PreconditionError("observation times must be finite and nonnegative")
            self.times = times
        if self.item_names is not None:
            self.item_names = tuple(str(x) for x in self.item_names)
            if len(self.item_names) != self.n:
                raise PreconditionError("item_names length does not match n")

    def __len__(self):
        return len(self.samples)

    def item_arrays(self):
        return [s.as_array() for s in self.samples]

    def frequencies(self):
        counts = np.zeros(self.n)
        for s in self.samples:
            counts[list(s.items)] += 1
        return counts / max(len(self.samples), 1)

    def restrict(self, items: Sequence[int]):
        """Keep only ``items`` (relabelled 0..len-1 in the given order)."""
        items = list(items)
        index = {old: new for new, old in enumerate(items)}
        samples = [
            ItemSet.from_items(len(items), [index[i] for i in s.items if i in index])
            for s in self.samples
        ]
        names = None
        if self.item_names is not None:
            names = tuple(self.item_names[i] for i in items)
        return Dataset(len(items), samples, self.times, names)


def transition_rate(theta, s, j):
    """Rate of moving from state ``s`` to ``s | {j}``."""
    th = theta.theta if isinstance(theta, ParamMatrix) else np.asarray(theta, float)
    n = th.shape[0]
    if not 0 <= j < n:
        raise PreconditionError(f"item {j} out of range for n={n}")
    items = _as_items(s, n)
    if j in set(items.tolist()):
        raise PreconditionError(f"item {j} already in state")
    return float(np.exp(th[j, j] + th[items, j].sum()))


def transition_rates(theta, s):
    """Vector of rates out of ``s`` for every item (0 for items already in ``s``)."""
    th = theta.theta if isinstance(theta, ParamMatrix) else np.asarray(theta, float)
    items = _as_items(s, th.shape[0])
    logr = np.diag(th) + th[items].sum(axis=0)
    rates = np.exp(logr)
    rates[items] = 0.0
    return rates


def exit_rate(theta, s):
    """Total rate of leaving ``s``; exactly 0 when ``s`` is the full set."""
    return float(transition_rates(theta, s).sum())


def make_block_diagonal(blocks, item_names=None):
    """Stack parameter matrices on the diagonal.

    Block ``b`` occupies indices ``offset_b .. offset_b + n_b`` where
    ``offset_b`` is the total size of the preceding blocks.  The declared
    block structure is recorded on the result.
    """
    if not blocks:
        raise PreconditionError("at least one block is required")
    mats = [b.theta if isinstance(b, ParamMatrix) else np.atleast_2d(np.asarray(b, float))
            for b in blocks]
    n = sum(m.shape[0] for m in mats)
    theta = np.zeros((n, n))
    ranges = []
    pos = 0
    for m in mats:
        k = m.shape[0]
        theta[pos:pos + k, pos:pos + k] = m
        ranges.append((pos, pos + k))
        pos += k
    if item_names is None and all(isinstance(b, ParamMatrix) and b.item_names for b in blocks):
        item_names = sum((b.item_names for b in blocks), ())
    return ParamMatrix(theta, item_names, tuple(ranges))


def two_item_model(alpha=4.0):
    """Two items where item 1 strongly precedes item 2."""
    return ParamMatrix(np.array([[0.0, alpha], [0.0, -alpha]]))


def five_item_model():
    """Five-item synthetic model with mutually repressing items 2-4."""
    return ParamMatrix(np.array([
        [-1.0, 4.0, 0.0, 0.0, 0.0],
        [0.0, -1.0, -2.0, -2.0, 0.0],
        [0.0, -2.0, -1.0, -2.0, 0.0],
        [0.0, -2.0, -2.0, -0.5, 4.0],
        [0.0, 0.0, 0.0, 0.0, -4.0],
    ]))


def with_independent_items(base, diagonals):
    """``base`` plus one non-interacting item per entry of ``diagonals``.

    Each independent item gets its own 1 x 1 block.
    """
    diagonals = np.asarray(diagonals, dtype=float).reshape(-1)
    return make_block_diagonal([base] + [np.array([[d]]) for d in diagonals])
