"""Finite orthogonal matrix groups, their orbits, and structural decompositions."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_ORDER_CAP = 5040
ORTHO_TOL = 1e-12
CLOSURE_TOL = 1e-10


class GroupError(ValueError):
    """Raised for invalid group parameters or failed group axioms."""


@dataclass(frozen=True)
class GroupAction:
    """A finite group of orthogonal ``d x d`` matrices.

    ``elements`` has shape ``(K, d, d)`` and element 0 is the identity.
    """

    name: str
    elements: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        els = np.array(self.elements, dtype=float, copy=True)
        if els.ndim != 3 or els.shape[1] != els.shape[2]:
            raise GroupError(f"elements must have shape (K, d, d), got {els.shape}")
        els.setflags(write=False)
        object.__setattr__(self, "elements", els)

    @property
    def K(self) -> int:
        return self.elements.shape[0]

    @property
    def d(self) -> int:
        return self.elements.shape[1]

    def act(self, theta: np.ndarray) -> np.ndarray:
        """Return the ``(K, d)`` array of all images ``g @ theta``."""
        return self.elements @ np.asarray(theta, dtype=float)

    def to_json(self) -> str:
        return json.dumps(
            {"name": self.name, "d": self.d, "K": self.K, "elements": self.elements.tolist()}
        )

    @classmethod
    def from_json(cls, text: str) -> "GroupAction":
        rec = json.loads(text)
        els = np.asarray(rec["elements"], dtype=float)
        if els.shape != (rec["K"], rec["d"], rec["d"]):
            raise GroupError("serialized group shape disagrees with its K and d fields")
        return cls(rec["name"], els)


@dataclass(frozen=True)
class Orbit:
    points: np.ndarray
    distinct_count: int


def _check_order(K: int, cap: int) -> None:
    if K > cap:
        raise GroupError(f"group order {K} exceeds the cap {cap}")


def make_rotations(K: int) -> GroupAction:
    """Cyclic group of planar rotations by multiples of ``2 pi / K``."""
    if K < 1:
        raise GroupError(f"rotation group order must be >= 1, got {K}")
    angles = 2.0 * np.pi * np.arange(K) / K
    c, s = np.cos(angles), np.sin(angles)
    els = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], 1)
    els[0] = np.eye(2)
    return GroupAction(f"rotations({K})", els)


def shift_matrix(d: int) -> np.ndarray:
    """Permutation matrix sending ``(x_0, .., x_{d-1})`` to ``(x_{d-1}, x_0, .., x_{d-2})``."""
    return np.roll(np.eye(d), 1, axis=0)


def make_cyclic(d: int) -> GroupAction:
    """All ``d`` cyclic coordinate shifts of ``R^d``."""
    if d < 1:
        raise GroupError(f"cyclic group dimension must be >= 1, got {d}")
    eye = np.eye(d)
    els = np.stack([np.roll(eye, k, axis=0) for k in range(d)])
    return GroupAction(f"cyclic({d})", els)


def make_symmetric(d: int, cap: int = DEFAULT_ORDER_CAP) -> GroupAction:
    """All ``d!`` coordinate permutations, identity first, lexicographic order."""
    if d < 1:
        raise GroupError(f"symmetric group dimension must be >= 1, got {d}")
    _check_order(math.factorial(d), cap)
    eye = np.eye(d)
    els = np.stack([eye[list(p)] for p in itertools.permutations(range(d))])
    return GroupAction(f"symmetric({d})", els)


def make_trivial(d: int) -> GroupAction:
    return GroupAction(f"trivial({d})", np.eye(d)[None])


def make_product(g1: GroupAction, g2: GroupAction, cap: int = DEFAULT_ORDER_CAP) -> GroupAction:
    """Block-diagonal direct product acting on ``R^{d1 + d2}``."""
    _check_order(g1.K * g2.K, cap)
    d1, d2 = g1.d, g2.d
    els = np.zeros((g1.K * g2.K, d1 + d2, d1 + d2))
    for idx, (a, b) in enumerate(itertools.product(g1.elements, g2.elements)):
        els[idx, :d1, :d1] = a
        els[idx, d1:, d1:] = b
    return GroupAction(f"{g1.name}x{g2.name}", els)


def find_element(G: GroupAction, mat: np.ndarray, tol: float = CLOSURE_TOL) -> int:
    """Index of the element equal to ``mat`` within ``tol`` (max norm), or -1."""
    diff = np.abs(G.elements - mat[None]).reshape(G.K, -1).max(axis=1)
    hit = np.flatnonzero(diff <= tol)
    return int(hit[0]) if hit.size else -1


def check_axioms(G: GroupAction) -> None:
    """Raise :class:`GroupError` unless orthogonality, identity, closure and inverses hold."""
    eye = np.eye(G.d)
    if np.abs(G.elements[0] - eye).max() > CLOSURE_TOL:
        raise GroupError("element 0 is not the identity")
    gram = np.einsum("kji,kjl->kil", G.elements, G.elements)
    if np.abs(gram - eye).max() > ORTHO_TOL:
        raise GroupError("an element is not orthogonal")
    for i in range(G.K):
        prods = G.elements[i] @ G.elements
        for j in range(G.K):
            if find_element(G, prods[j]) < 0:
                raise GroupError(f"product of elements {i} and {j} is not in the group")
        if not np.any(np.abs(prods - eye).reshape(G.K, -1).max(axis=1) <= CLOSURE_TOL):
            raise GroupError(f"element {i} has no inverse in the group")


def mean_projection(G: GroupAction) -> np.ndarray:
    """The group average ``E_g[g]``, an orthogonal projection onto the fixed subspace."""
    return G.elements.mean(axis=0)


@dataclass(frozen=True)
class KernelDecomposition:
    fixed_basis: np.ndarray
    moving_basis: np.ndarray
    moving_group: GroupAction


def kernel_decomposition(G: GroupAction) -> KernelDecomposition:
    """Split ``R^d`` into the fixed subspace of ``G`` and its mean-zero complement.

    Returns bases ``V1`` (fixed) and ``V2`` (kernel of the mean projection) and the
    restricted group ``{V2^T g V2}``, which has ``E[g] = 0``.
    """
    P = mean_projection(G)
    vals, vecs = np.linalg.eigh((P + P.T) / 2)
    fixed = vecs[:, vals >= 0.5]
    moving = vecs[:, vals < 0.5]
    restricted = np.einsum("ia,kij,jb->kab", moving, G.elements, moving)
    return KernelDecomposition(fixed, moving, GroupAction(f"{G.name}|kernel", restricted))


def orbit(G: GroupAction, theta: Sequence[float], tol: float = 1e-8) -> Orbit:
    pts = G.act(np.asarray(theta, dtype=float))
    kept: list[np.ndarray] = []
    for p in pts:
        if all(np.linalg.norm(p - q) > tol for q in kept):
            kept.append(p)
    return Orbit(pts, len(kept))


def orbit_distance(G: GroupAction, theta: Sequence[float], mu: Sequence[float]) -> float:
    """``min_g ||theta - g mu||``."""
    images = G.act(np.asarray(mu, dtype=float))
    return float(np.min(np.linalg.norm(images - np.asarray(theta, dtype=float), axis=1)))


def orbit_distances(G: GroupAction, thetas: np.ndarray, mu: Sequence[float]) -> np.ndarray:
    """Vectorised :func:`orbit_distance` over the rows of ``thetas``."""
    images = G.act(np.asarray(mu, dtype=float))
    diff = np.asarray(thetas, dtype=float)[:, None, :] - images[None]
    return np.sqrt((diff**2).sum(axis=2)).min(axis=1)


def min_orbit_separation(G: GroupAction, theta: Sequence[float]) -> float:
    """Smallest distance between two distinct group images of ``theta``."""
    pts = G.act(np.asarray(theta, dtype=float))
    if G.K == 1:
        return math.inf
    diff = pts[:, None, :] - pts[None]
    dist = np.sqrt((diff**2).sum(-1))
    return float(dist[np.triu_indices(G.K, 1)].min())


def parse_group(spec: str) -> GroupAction:
    """Build a group from strings like ``rotations:3``, ``cyclic(6)`` or ``trivial:1*rotations:3``."""
    parts = [p.strip() for p in spec.split("*")]
    if len(parts) > 1:
        out = parse_group(parts[0])
        for p in parts[1:]:
            out = make_product(out, parse_group(p))
        return out
    if spec.endswith(")") and "(" in spec:
        spec = spec[:-1].replace("(", ":", 1)
    kind, _, size = spec.partition(":")
    makers = {
        "rotations": make_rotations,
        "cyclic": make_cyclic,
        "symmetric": make_symmetric,
        "trivial": make_trivial,
    }
    if kind not in makers or not size.strip().isdigit():
        raise GroupError(f"unrecognised group spec {spec!r}")
    return makers[kind](int(size))
