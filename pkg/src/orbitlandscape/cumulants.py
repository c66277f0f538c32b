"""Set partitions and cumulants of finitely supported laws.

Cumulants are computed from joint moments by the Moebius-inverted
moment-cumulant relation

    kappa(X_1, .., X_k) = sum over partitions pi of [k] of
        (|pi| - 1)! (-1)^(|pi| - 1) prod_{B in pi} E[prod_{i in B} X_i].

Partition lists are enumerated once per ground-set size as restricted growth
strings and cached.  The cost of a cumulant of order ``k`` is ``Bell(k)``
products of block moments.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Hashable, Sequence

import numpy as np

MAX_PARTITION_SIZE = 10
MAX_CUMULANT_ORDER = 8
MAX_TENSOR_ORDER = 4
MAX_TENSOR_ENTRIES = 10**6


class CumulantError(ValueError):
    """Raised when a request exceeds the enumeration caps or is malformed."""


@dataclass(frozen=True)
class SetPartition:
    """A partition of ``{0, .., n-1}`` stored as a restricted growth string."""

    block_of: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.block_of)

    @property
    def num_blocks(self) -> int:
        return max(self.block_of) + 1 if self.block_of else 0

    def blocks(self) -> list[tuple[int, ...]]:
        out: list[list[int]] = [[] for _ in range(self.num_blocks)]
        for i, b in enumerate(self.block_of):
            out[b].append(i)
        return [tuple(b) for b in out]

    def has_singleton(self) -> bool:
        return 1 in Counter(self.block_of).values()


def bell_number(n: int) -> int:
    """Bell numbers via the Bell triangle."""
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for x in row:
            nxt.append(nxt[-1] + x)
        row = nxt
    return row[0]


@lru_cache(maxsize=None)
def _partitions(n: int) -> tuple[SetPartition, ...]:
    if n == 0:
        return (SetPartition(()),)
    out: list[SetPartition] = []
    rgs = [0] * n

    def extend(pos: int, top: int) -> None:
        if pos == n:
            out.append(SetPartition(tuple(rgs)))
            return
        for b in range(top + 2):
            rgs[pos] = b
            extend(pos + 1, max(top, b))

    rgs[0] = 0
    extend(1, 0)
    return tuple(out)


def enumerate_partitions(n: int) -> list[SetPartition]:
    """All ``Bell(n)`` partitions of an ``n``-element set in lexicographic RGS order."""
    if not 0 <= n <= MAX_PARTITION_SIZE:
        raise CumulantError(f"partition ground set size must be in 0..{MAX_PARTITION_SIZE}, got {n}")
    return list(_partitions(n))


@lru_cache(maxsize=None)
def _filtered(ell: int, m: int) -> tuple[SetPartition, ...]:
    return tuple(
        p
        for p in _partitions(ell + m)
        if all(p.block_of[2 * j] != p.block_of[2 * j + 1] for j in range(m))
    )


def filtered_partitions(ell: int, m: int) -> list[SetPartition]:
    """Partitions of ``[ell + m]`` that separate each of the pairs ``(2j, 2j+1)``, ``j < m``."""
    if ell < 0 or m < 0 or m > ell:
        raise CumulantError(f"need 0 <= m <= ell, got ell={ell}, m={m}")
    if ell + m > MAX_PARTITION_SIZE:
        raise CumulantError(f"ell + m = {ell + m} exceeds the cap {MAX_PARTITION_SIZE}")
    return list(_filtered(ell, m))


def moebius_coefficient(num_blocks: int) -> int:
    return math.factorial(num_blocks - 1) * (-1) ** (num_blocks - 1)


@dataclass(frozen=True)
class FiniteLaw:
    """A probability law on finitely many atoms (scalars or vectors)."""

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        sup = np.asarray(self.support, dtype=float)
        if sup.ndim == 1:
            sup = sup[:, None]
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (sup.shape[0],):
            raise CumulantError("weights must have one entry per atom")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise CumulantError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, support: np.ndarray) -> "FiniteLaw":
        support = np.asarray(support, dtype=float)
        return cls(support, np.full(support.shape[0], 1.0 / support.shape[0]))

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.support


def _signature_sum(labels: Sequence[Hashable]) -> list[tuple[int, tuple[tuple, ...]]]:
    """Collapse the partition sum for variables tagged by ``labels``.

    Returns ``(coefficient, blocks)`` pairs where each block is a sorted tuple
    of labels; partitions with equal multisets of blocks are merged.
    """
    acc: Counter = Counter()
    for p in _partitions(len(labels)):
        blocks = tuple(sorted(tuple(sorted(labels[i] for i in b)) for b in p.blocks()))
        acc[blocks] += moebius_coefficient(p.num_blocks)
    return [(c, blocks) for blocks, c in sorted(acc.items()) if c != 0]


@lru_cache(maxsize=None)
def _cached_signature_sum(labels: tuple) -> tuple:
    return tuple(_signature_sum(labels))


def cumulant_from_moments(labels: Sequence[Hashable], moment: Callable[[tuple], np.ndarray | float]):
    """Joint cumulant of variables tagged by ``labels`` given a block-moment oracle.

    ``moment(block)`` must return ``E[prod of the variables tagged in block]``;
    it may return arrays, which lets callers vectorise over many laws at once.
    """
    cache: dict[tuple, np.ndarray | float] = {}
    total: np.ndarray | float = 0.0
    for coef, blocks in _cached_signature_sum(tuple(labels)):
        term: np.ndarray | float = float(coef)
        for b in blocks:
            if b not in cache:
                cache[b] = moment(b)
            term = term * cache[b]
        total = total + term
    return total


def mixed_cumulant(law: FiniteLaw, coords: Sequence[int], center: bool = True) -> float:
    """Joint cumulant of the coordinates ``coords`` of a vector-valued finite law.

    For orders ``k >= 2`` the atoms are centred first; cumulants of order two
    and above are shift invariant, so this only removes cancellation error.
    """
    k = len(coords)
    if not 1 <= k <= MAX_CUMULANT_ORDER:
        raise CumulantError(f"cumulant order must be in 1..{MAX_CUMULANT_ORDER}, got {k}")
    X = law.support
    if k >= 2 and center:
        X = X - law.mean()
    w = law.weights

    def moment(block: tuple) -> float:
        return float(w @ np.prod(X[:, list(block)], axis=1))

    return float(cumulant_from_moments(tuple(coords), moment))


def scalar_cumulant(values: Sequence[float], weights: Sequence[float], k: int) -> float:
    law = FiniteLaw(np.asarray(values, dtype=float)[:, None], np.asarray(weights, dtype=float))
    return mixed_cumulant(law, [0] * k)


_LETTERS = "abcdefgh"


def batched_cumulant_tensor(weights: np.ndarray, atoms: np.ndarray, ell: int) -> np.ndarray:
    """Order-``ell`` cumulant tensors of many finite laws at once.

    ``weights`` has shape ``(n, K)`` and ``atoms`` shape ``(n, K, d)``; the result
    has shape ``(n, d, .., d)``.  Each tensor entry is the mixed cumulant of the
    indexed coordinates, assembled from outer products of block moment tensors.
    """
    if not 1 <= ell <= MAX_TENSOR_ORDER:
        raise CumulantError(f"tensor order must be in 1..{MAX_TENSOR_ORDER}, got {ell}")
    n, K, d = atoms.shape
    if d**ell > MAX_TENSOR_ENTRIES:
        raise CumulantError(f"tensor with {d}^{ell} entries exceeds the cap")
    mean = np.einsum("nk,nkd->nd", weights, atoms)
    if ell == 1:
        return mean
    U = atoms - mean[:, None, :]
    moments: dict[int, np.ndarray] = {}

    def block_moment(size: int) -> np.ndarray:
        if size not in moments:
            idx = _LETTERS[:size]
            ops = ",".join(f"zk{c}" for c in idx)
            moments[size] = np.einsum(f"zk,{ops}->z{idx}", weights, *([U] * size))
        return moments[size]

    out = np.zeros((n,) + (d,) * ell)
    for p in _partitions(ell):
        if p.has_singleton():
            continue
        blocks = p.blocks()
        subs = ",".join("z" + "".join(_LETTERS[i] for i in b) for b in blocks)
        ops = [block_moment(len(b)) for b in blocks]
        out += moebius_coefficient(len(blocks)) * np.einsum(f"{subs}->z{_LETTERS[:ell]}", *ops)
    return out


def cumulant_tensor(law: FiniteLaw, ell: int) -> np.ndarray:
    """Order-``ell`` cumulant tensor of a vector-valued finite law."""
    return batched_cumulant_tensor(law.weights[None], law.support[None], ell)[0]
