"""High-noise expansion of the population risk.

The population risk admits an expansion ``R = sum_l sigma^{-2l} S_l`` whose
terms are G-invariant polynomials.  Each ``S_l`` is a signed sum, over set
partitions, of expectations ``M_{l,m}`` over independent uniform group
elements of products of two kinds of factors:

* pair factors ``<g_a theta, g_b theta>`` (a Gram entry), and
* single factors ``<theta_star, g_a theta>``.

Each block of a partition carries its own group element, so ``M_{l,m}`` is a
tensor-network contraction of Gram matrices and projection vectors.  It is
evaluated with ``numpy.einsum`` over a batch of parameter vectors, which lets
finite-difference stencils for gradients and Hessians run in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .cumulants import (
    MAX_CUMULANT_ORDER,
    CumulantError,
    SetPartition,
    _filtered,
    cumulant_from_moments,
)
from .groups import GroupAction, kernel_decomposition, mean_projection
from .mra import dft
from .risk import EvalResult

MAX_SERIES_ORDER = 4
MAX_GROUND_SET = 8
MAX_TENSOR_ENTRIES = 10**6
# contraction work per parameter vector allowed for one partition term
MAX_CONTRACTION_FLOPS = 10**9
MAX_EMPIRICAL_ORDER = 8

_BLOCK_LETTERS = "abcdefgh"


class SeriesError(ValueError):
    """Raised for caps, unsupported orders, and closed forms outside their validity."""


# Moment tensors ---------------------------------------------------------------------


def moment_tensor(G: GroupAction, theta: Sequence[float], ell: int) -> np.ndarray:
    """``E_g[(g theta)^{(x) ell}]`` as a dense ``d^ell`` array."""
    if not 1 <= ell <= MAX_SERIES_ORDER:
        raise SeriesError(f"moment tensor order must be in 1..{MAX_SERIES_ORDER}, got {ell}")
    if G.d**ell > MAX_TENSOR_ENTRIES:
        raise SeriesError(f"moment tensor with {G.d}^{ell} entries exceeds the cap")
    pts = G.act(theta)
    idx = _BLOCK_LETTERS[:ell]
    ops = ",".join(f"k{c}" for c in idx)
    return np.einsum(f"{ops}->{idx}", *([pts] * ell)) / G.K


def moment_objective(G: GroupAction, theta: Sequence[float], theta_star: Sequence[float], ell: int) -> float:
    """Squared Frobenius distance between the order-``ell`` moment tensors."""
    diff = moment_tensor(G, theta, ell) - moment_tensor(G, theta_star, ell)
    return float((diff**2).sum())


# Partition sums ---------------------------------------------------------------------


def _gram_proj(G: GroupAction, thetas: np.ndarray, theta_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gram tensor ``A[b, g, h] = <g theta_b, h theta_b>`` and projections ``<theta_star, g theta_b>``."""
    pts = np.einsum("kij,bj->bki", G.elements, thetas)
    return np.einsum("bki,bli->bkl", pts, pts), pts @ theta_star


def _subscripts(block_of: tuple[int, ...], m: int) -> str:
    terms = []
    for j in range(m):
        terms.append("z" + _BLOCK_LETTERS[block_of[2 * j]] + _BLOCK_LETTERS[block_of[2 * j + 1]])
    for pos in range(2 * m, len(block_of)):
        terms.append("z" + _BLOCK_LETTERS[block_of[pos]])
    return ",".join(terms) + "->z"


@lru_cache(maxsize=None)
def _contraction_path(subs: str, B: int, K: int) -> tuple[list, float]:
    shapes = [(B,) + (K,) * (len(t) - 1) for t in subs.split("->")[0].split(",")]
    dummies = [np.empty(s) for s in shapes]
    path, info = np.einsum_path(subs, *dummies, optimize="optimal" if len(shapes) <= 6 else "greedy")
    flops = float(info.split("Optimized FLOP count:")[1].split("\n")[0])
    return path, flops / max(B, 1)


def _check_partition(part: SetPartition, ell: int, m: int) -> None:
    if not 0 <= m <= ell:
        raise SeriesError(f"need 0 <= m <= ell, got ell={ell}, m={m}")
    if part.n != ell + m:
        raise SeriesError(f"partition must cover {ell + m} elements, got {part.n}")
    if ell + m > MAX_GROUND_SET:
        raise SeriesError(f"ground set size {ell + m} exceeds the cap {MAX_GROUND_SET}")


def _m_lm_from(A: np.ndarray, b: np.ndarray, part: SetPartition, m: int) -> np.ndarray:
    subs = _subscripts(part.block_of, m)
    B, K = b.shape
    path, flops = _contraction_path(subs, B, K)
    if flops > MAX_CONTRACTION_FLOPS:
        raise SeriesError(f"partition term needs ~{flops:.3g} operations, above the cap")
    ops = [A] * m + [b] * (part.n - 2 * m)
    return np.einsum(subs, *ops, optimize=path) / float(K) ** part.num_blocks


def m_lm_batch(
    G: GroupAction, part: SetPartition, m: int, thetas: np.ndarray, theta_star: Sequence[float]
) -> np.ndarray:
    """``M_{l,m}`` for a partition of ``[l + m]`` at each row of ``thetas``.

    Elements ``(2j, 2j+1)`` for ``j < m`` form the pair factors; the remaining
    elements are single factors.
    """
    ell = part.n - m
    _check_partition(part, ell, m)
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    A, b = _gram_proj(G, thetas, np.asarray(theta_star, dtype=float))
    return _m_lm_from(A, b, part, m)


def M_lm(G: GroupAction, part: SetPartition, m: int, theta: Sequence[float], theta_star: Sequence[float]) -> float:
    return float(m_lm_batch(G, part, m, np.asarray(theta, dtype=float)[None], theta_star)[0])


def _s_generic(G: GroupAction, thetas: np.ndarray, theta_star: np.ndarray, ell: int) -> np.ndarray:
    # the partition terms cancel heavily near the zeros of S_ell; extended
    # precision keeps the sum accurate relative to its own size
    A, b = _gram_proj(G, thetas.astype(np.longdouble), theta_star.astype(np.longdouble))
    total = np.zeros(thetas.shape[0], dtype=np.longdouble)
    for m in range(ell + 1):
        acc = np.zeros_like(total)
        for part in _filtered(ell, m):
            nb = part.num_blocks
            sign = math.factorial(nb - 1) * (-1) ** nb
            acc += sign * _m_lm_from(A, b, part, m)
        total += math.comb(ell, m) / 2**m * acc
    return (total / math.factorial(ell)).astype(float)


# Closed forms -----------------------------------------------------------------------


def _is_mean_zero(G: GroupAction) -> bool:
    return bool(np.abs(mean_projection(G)).max() <= 1e-12)


def _group_kind(G: GroupAction) -> str:
    return G.name.split("(")[0]


def s_mean_zero(G: GroupAction, thetas: np.ndarray, theta_star: np.ndarray, ell: int) -> np.ndarray:
    """Closed forms of ``S_1 .. S_3`` for groups with ``E_g[g] = 0``."""
    if not _is_mean_zero(G):
        raise SeriesError("mean-zero closed forms need a group with E[g] = 0")
    if ell not in (1, 2, 3):
        raise SeriesError(f"mean-zero closed form exists for ell in 1..3, got {ell}")
    if ell == 1:
        return np.zeros(thetas.shape[0])
    pts = np.einsum("kij,bj->bki", G.elements, thetas)
    proj_star = pts @ theta_star
    proj_self = np.einsum("bki,bi->bk", pts, thetas)
    if ell == 2:
        return -0.5 * (proj_star**2).mean(1) + 0.25 * (proj_self**2).mean(1)
    gram = np.einsum("bki,bli->bkl", pts, pts)
    cross_star = np.einsum("bkl,bk,bl->b", gram, proj_star, proj_star) / G.K**2
    cross_self = np.einsum("bkl,bk,bl->b", gram, proj_self, proj_self) / G.K**2
    return (
        -(proj_star**3).mean(1) / 6
        + (proj_self**3).mean(1) / 12
        + 0.5 * cross_star
        - cross_self / 3
    )


def s_rotations(thetas: np.ndarray, theta_star: np.ndarray, ell: int) -> np.ndarray:
    """Radial closed forms for planar rotation groups of order ``K >= 3``."""
    sq = (thetas**2).sum(1)
    if ell == 1:
        return np.zeros(thetas.shape[0])
    if ell == 2:
        return sq**2 / 8 - sq * float(theta_star @ theta_star) / 4
    raise SeriesError(f"rotation closed form exists for ell in 1..2, got {ell}")


def rotations_s2_derivatives(theta: np.ndarray, theta_star: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient and Hessian of the rotation-group ``S_2``."""
    sq, sq_star = float(theta @ theta), float(theta_star @ theta_star)
    grad = (sq - sq_star) / 2 * theta
    hess = (sq - sq_star) / 2 * np.eye(2) + np.outer(theta, theta)
    return grad, hess


def rotations_phase_term(K: int, thetas: np.ndarray, theta_star: Sequence[float]) -> np.ndarray:
    """Angle-dependent part of ``S_K`` for rotations of order ``K``."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    theta_star = np.asarray(theta_star, dtype=float)
    radius = np.sqrt((thetas**2).sum(1))
    angle = np.arctan2(thetas[:, 1], thetas[:, 0]) - math.atan2(theta_star[1], theta_star[0])
    coef = 1.0 / (2 ** (K - 1) * math.factorial(K))
    return -coef * radius**K * float(np.linalg.norm(theta_star)) ** K * np.cos(K * angle)


def s_cyclic(thetas: np.ndarray, theta_star: np.ndarray, ell: int) -> np.ndarray:
    """Fourier closed forms of ``S_1`` and ``S_2`` for the cyclic shift group."""
    v = dft(thetas)
    vs = dft(theta_star)
    if ell == 1:
        return -vs[0].real * v[:, 0].real + 0.5 * v[:, 0].real ** 2
    if ell == 2:
        r2 = np.abs(v[:, 1:]) ** 2
        rs2 = np.abs(vs[1:]) ** 2
        return (-0.5 * rs2 * r2 + 0.25 * r2**2).sum(1)
    raise SeriesError("the cyclic S_3 has an unspecified radial polynomial; use the generic method")


def s_kernel_split(G: GroupAction, thetas: np.ndarray, theta_star: np.ndarray, ell: int) -> np.ndarray:
    """Mean-zero closed forms applied to a group that fixes a subspace.

    The risk separates into a single-Gaussian part on the fixed subspace, which
    contributes only to ``S_1``, and the restriction of the group to the
    complement, which has zero mean.
    """
    dec = kernel_decomposition(G)
    fixed, fixed_star = thetas @ dec.fixed_basis, theta_star @ dec.fixed_basis
    out = np.zeros(thetas.shape[0])
    if ell == 1:
        out += -fixed @ fixed_star + 0.5 * (fixed**2).sum(1)
    if dec.moving_basis.shape[1]:
        out += s_mean_zero(dec.moving_group, thetas @ dec.moving_basis, theta_star @ dec.moving_basis, ell)
    return out


def s_closed(G: GroupAction, thetas: np.ndarray, theta_star: np.ndarray, ell: int) -> np.ndarray:
    kind = _group_kind(G)
    if kind == "rotations" and G.K >= 3 and ell <= 2:
        return s_rotations(thetas, theta_star, ell)
    if kind == "cyclic" and ell <= 2:
        return s_cyclic(thetas, theta_star, ell)
    if ell <= 3:
        return s_mean_zero(G, thetas, theta_star, ell) if _is_mean_zero(G) else s_kernel_split(G, thetas, theta_star, ell)
    raise SeriesError(f"no closed form for S_{ell} on {G.name}")


# Public term evaluation -------------------------------------------------------------


def s_ell_batch(
    G: GroupAction, thetas: np.ndarray, theta_star: Sequence[float], ell: int, method: str = "generic"
) -> np.ndarray:
    """``S_ell`` at each row of ``thetas``."""
    if not 1 <= ell <= MAX_SERIES_ORDER:
        raise SeriesError(f"series order must be in 1..{MAX_SERIES_ORDER}, got {ell}")
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    theta_star = np.asarray(theta_star, dtype=float)
    if thetas.shape[1] != G.d or theta_star.shape != (G.d,):
        raise SeriesError(f"parameters must have length {G.d}")
    if method == "generic":
        return _s_generic(G, thetas, theta_star, ell)
    if method == "closed":
        return s_closed(G, thetas, theta_star, ell)
    raise SeriesError(f"unknown method {method!r}")


def S_ell(G: GroupAction, theta: Sequence[float], theta_star: Sequence[float], ell: int, method: str = "generic") -> float:
    return float(s_ell_batch(G, np.asarray(theta, dtype=float)[None], theta_star, ell, method)[0])


@dataclass(frozen=True)
class SeriesTerm:
    """A bound ``S_ell`` evaluator."""

    group: GroupAction
    theta_star: np.ndarray
    ell: int
    method: str = "generic"

    def __call__(self, thetas: np.ndarray) -> np.ndarray:
        return s_ell_batch(self.group, thetas, self.theta_star, self.ell, self.method)


# Finite differences -----------------------------------------------------------------


def _gradient_stencil(x: np.ndarray, h: float) -> np.ndarray:
    E = np.eye(x.shape[0]) * h
    return np.concatenate([x + E, x - E])


def _hessian_stencil(x: np.ndarray, h: float) -> np.ndarray:
    d = x.shape[0]
    E = np.eye(d) * h
    pts = []
    for i in range(d):
        for j in range(i, d):
            pts += [x + E[i] + E[j], x + E[i] - E[j], x - E[i] + E[j], x - E[i] - E[j]]
    return np.array(pts)


def _grad_from(vals: np.ndarray, d: int, h: float) -> np.ndarray:
    return (vals[:d] - vals[d:]) / (2 * h)


def _hess_from(vals: np.ndarray, d: int, h: float) -> np.ndarray:
    H = np.empty((d, d))
    q = 0
    for i in range(d):
        for j in range(i, d):
            pp, pm, mp, mm = vals[q : q + 4]
            H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4 * h * h)
            q += 4
    return H


def richardson_derivatives(
    f: Callable[[np.ndarray], np.ndarray], x: Sequence[float], order: int = 2, h: float | None = None
) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Gradient and Hessian of a batched scalar function by Richardson-extrapolated central differences.

    Steps ``h`` and ``h / 2`` are combined as ``(4 D(h/2) - D(h)) / 3``, which
    cancels the leading ``h^2`` error.  All stencil points go through ``f`` in
    one batch.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    h = h if h is not None else 2e-3 * max(1.0, float(np.linalg.norm(x)))
    blocks = []
    for step in (h, h / 2):
        blocks.append(_gradient_stencil(x, step))
        if order >= 2:
            blocks.append(_hessian_stencil(x, step))
    vals = f(np.concatenate(blocks))
    sizes = [b.shape[0] for b in blocks]
    parts = np.split(vals, np.cumsum(sizes)[:-1])
    grad = hess = None
    if order >= 2:
        g1, H1, g2, H2 = parts
        hess = (4 * _hess_from(H2, d, h / 2) - _hess_from(H1, d, h)) / 3
    else:
        g1, g2 = parts
    grad = (4 * _grad_from(g2, d, h / 2) - _grad_from(g1, d, h)) / 3
    return grad, hess


# Truncated risk ---------------------------------------------------------------------


def truncated_batch(
    G: GroupAction, thetas: np.ndarray, theta_star: Sequence[float], sigma: float, k: int, method: str = "generic"
) -> np.ndarray:
    """``sum_{l <= k} sigma^{-2l} S_l`` at each row of ``thetas``."""
    if not 1 <= k <= MAX_SERIES_ORDER:
        raise SeriesError(f"truncation order must be in 1..{MAX_SERIES_ORDER}, got {k}")
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    total = np.zeros(thetas.shape[0])
    for ell in range(1, k + 1):
        total += sigma ** (-2 * ell) * s_ell_batch(G, thetas, theta_star, ell, method)
    return total


def truncated_risk(
    G: GroupAction,
    theta: Sequence[float],
    theta_star: Sequence[float],
    sigma: float,
    k: int,
    order: int = 0,
    method: str = "generic",
) -> EvalResult:
    """Truncated expansion with optional gradient (``order >= 1``) and Hessian (``order >= 2``)."""
    theta = np.asarray(theta, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    f = lambda pts: truncated_batch(G, pts, theta_star, sigma, k, method)  # noqa: E731
    res = EvalResult(float(f(theta[None])[0]))
    if order >= 1:
        if method == "closed" and _group_kind(G) == "rotations" and G.K >= 3 and k <= 2:
            g2, h2 = rotations_s2_derivatives(theta, theta_star)
            res.grad = g2 / sigma**4
            res.hess = h2 / sigma**4
        else:
            res.grad, res.hess = richardson_derivatives(f, theta, min(order, 2))
        if order < 2:
            res.hess = None
    return res


def term_derivatives(
    G: GroupAction, theta: Sequence[float], theta_star: Sequence[float], ell: int, method: str = "generic"
) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient and Hessian of a single ``S_ell``."""
    f = lambda pts: s_ell_batch(G, pts, theta_star, ell, method)  # noqa: E731
    theta = np.asarray(theta, dtype=float)
    grad, hess = richardson_derivatives(f, theta, 2)
    return float(f(theta[None])[0]), grad, hess


# Empirical expansion terms ----------------------------------------------------------


def _centered_powers(x: np.ndarray, top: int) -> list[np.ndarray]:
    out = [np.ones_like(x)]
    for _ in range(top):
        out.append(out[-1] * x)
    return out


def empirical_terms_batch(
    G: GroupAction, eps: np.ndarray, theta: Sequence[float], theta_star: Sequence[float], ell: int
) -> np.ndarray:
    """Expansion term ``P_ell(eps_i, theta, theta_star)`` for each row of ``eps``.

    ``P_ell`` collects the mixed cumulants, under a uniform group element, of
    ``X = <eps, g theta>`` taken ``2k - ell`` times and ``Z = <theta_star, g theta>``
    taken ``ell - k`` times, for ``ceil(ell/2) <= k <= ell``.
    """
    if not 1 <= ell <= MAX_EMPIRICAL_ORDER:
        raise SeriesError(f"empirical term order must be in 1..{MAX_EMPIRICAL_ORDER}, got {ell}")
    theta = np.asarray(theta, dtype=float)
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    pts = G.act(theta)
    X = eps @ pts.T
    Z = pts @ np.asarray(theta_star, dtype=float)
    Xc = X - X.mean(axis=1, keepdims=True)
    Zc = Z - Z.mean()
    xp = _centered_powers(Xc, ell)
    zp = _centered_powers(Zc, ell)
    total = np.zeros(eps.shape[0])
    if ell == 2:
        total += float(theta @ theta) / 2
    for k in range((ell + 1) // 2, ell + 1):
        if k > MAX_CUMULANT_ORDER:
            raise CumulantError(f"cumulant order {k} exceeds the cap")
        nx, nz = 2 * k - ell, ell - k
        if k == 1:
            kap = X.mean(axis=1) if nx else np.full(eps.shape[0], Z.mean())
        else:
            labels = ("x",) * nx + ("z",) * nz

            def moment(block: tuple) -> np.ndarray:
                a = block.count("x")
                return (xp[a] * zp[len(block) - a]).mean(axis=1)

            kap = cumulant_from_moments(labels, moment)
        total -= math.comb(k, ell - k) / math.factorial(k) * kap
    return total


def empirical_term(
    G: GroupAction, eps: Sequence[float], theta: Sequence[float], theta_star: Sequence[float], ell: int
) -> float:
    if ell > MAX_SERIES_ORDER:
        raise SeriesError(f"empirical term order must be in 1..{MAX_SERIES_ORDER}, got {ell}")
    return float(empirical_terms_batch(G, np.asarray(eps, dtype=float)[None], theta, theta_star, ell)[0])


def pointwise_log_likelihood_gap(
    G: GroupAction, eps: np.ndarray, theta: Sequence[float], theta_star: Sequence[float], sigma: float, order: int
) -> np.ndarray:
    """Per-draw residual ``f(eps) - sum_{l <= order} sigma^{-l} P_l(eps)``.

    ``f(eps)`` is the single-observation risk at ``Y = theta_star + sigma eps``;
    its mean over ``eps`` is the population risk, so the mean of this residual
    is the truncation error ``R - R^{floor(order / 2)}``.
    """
    theta = np.asarray(theta, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    pts = G.act(theta)
    logits = (eps @ pts.T) / sigma + (pts @ theta_star) / sigma**2
    shift = logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits - shift).mean(axis=1)) + shift[:, 0]
    f = float(theta @ theta) / (2 * sigma**2) - lse
    for ell in range(1, order + 1):
        f -= sigma ** (-ell) * empirical_terms_batch(G, eps, theta, theta_star, ell)
    return f
