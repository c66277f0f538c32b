"""Empirical and population risk of the orbit model with derivatives of every order up to 4.

For observations ``Y_i`` the empirical risk is

    R_n(theta) = ||theta||^2 / (2 sigma^2) - mean_i log E_g exp(<Y_i, g theta> / sigma^2).

Its derivatives are moments and cumulants of the back-rotated observations
``g^T Y_i`` under the posterior law ``p(g | Y_i, theta)``.  All per-sample sums
run over fixed chunks of rows whose partial results are combined in a fixed
pairwise order, so values do not depend on the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .cumulants import MAX_TENSOR_ORDER, batched_cumulant_tensor
from .groups import GroupAction
from .model import NOISE_STREAM, Dataset, standard_normals

CHUNK = 1024
# exp() cannot overflow below this logit magnitude, so the max shift can be skipped
_SAFE_LOGIT = 300.0


class RiskError(ValueError):
    """Raised for dimension mismatches, unsupported orders and non-finite evaluations."""


@dataclass
class EvalResult:
    value: float
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None
    tensors: dict[int, np.ndarray] = field(default_factory=dict)
    stderr: dict[str, np.ndarray | float] = field(default_factory=dict)


def pairwise_sum(parts: Sequence):
    """Sum a sequence in a fixed balanced-tree order."""
    parts = list(parts)
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def chunked_reduce(n: int, fn: Callable[[int, int], tuple], threads: int = 1, chunk: int = CHUNK) -> tuple:
    """Apply ``fn(start, stop)`` to fixed row chunks and sum the returned tuples pairwise."""
    starts = list(range(0, n, chunk))
    call = lambda s: fn(s, min(s + chunk, n))  # noqa: E731
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(call, starts))
    else:
        results = [call(s) for s in starts]
    return tuple(pairwise_sum([r[k] for r in results]) for k in range(len(results[0])))


def posterior_weights(G: GroupAction, theta: np.ndarray, y: np.ndarray, sigma: float) -> np.ndarray:
    """Softmax over the group of ``<y, g theta> / sigma^2``, computed with a max shift."""
    logits = G.act(np.asarray(theta, dtype=float)) @ np.asarray(y, dtype=float) / sigma**2
    logits = logits - logits.max()
    w = np.exp(logits)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        raise RiskError("non-finite posterior normaliser")
    return w / total


class RiskModel:
    """Risk of a group acting on a fixed sample of observations.

    ``sample_weights`` (summing to one) replaces the uniform average over rows;
    it is used for quadrature approximations of the population risk.
    """

    def __init__(
        self,
        group: GroupAction,
        data: Dataset,
        threads: int = 1,
        sample_weights: np.ndarray | None = None,
        chunk: int = CHUNK,
    ) -> None:
        if group.d != data.d:
            raise RiskError(f"group acts on R^{group.d} but data has dimension {data.d}")
        self.group = group
        self.data = data
        self.sigma = data.sigma
        self.threads = threads
        self.chunk = chunk
        self.weights = None if sample_weights is None else np.asarray(sample_weights, dtype=float)
        self._row_norms = np.sqrt((data.Y**2).sum(axis=1))

    @property
    def d(self) -> int:
        return self.group.d

    def _avg(self, total):
        return total if self.weights is not None else total / self.data.n

    def batch_value_grad(self, thetas: np.ndarray, with_value: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Risk values ``(B,)`` and gradients ``(B, d)`` for a batch of parameters."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if thetas.shape[1] != self.d:
            raise RiskError(f"theta must have length {self.d}")
        G = self.group.elements
        K = self.group.K
        B = thetas.shape[0]
        s2 = self.sigma**2
        # columns ordered (g, b) so the logits reshape to (rows, K, B) without copies
        cols = np.einsum("kij,bj->kbi", G, thetas).reshape(K * B, -1).T / s2
        tnorm = np.sqrt((thetas**2).sum(axis=1))
        Y = self.data.Y
        w = self.weights

        def fn(s: int, e: int):
            Yc = Y[s:e]
            E = (Yc @ cols).reshape(e - s, K, B)
            if self._row_norms[s:e].max() * tnorm.max() / s2 < _SAFE_LOGIT:
                shift = None
            else:
                shift = E.max(axis=1, keepdims=True)
                E -= shift
            np.exp(E, out=E)
            tot = E.sum(axis=1, keepdims=True)
            scale = 1.0 / tot if w is None else w[s:e, None, None] / tot
            E *= scale
            Q = (E.reshape(e - s, K * B).T @ Yc).reshape(K, B, -1)
            if not with_value:
                return (Q,)
            lse = np.log(tot[:, 0, :])
            if shift is not None:
                lse += shift[:, 0, :]
            vals = (w[s:e] @ lse) if w is not None else lse.sum(axis=0)
            return (Q, vals)

        parts = chunked_reduce(self.data.n, fn, self.threads, self.chunk)
        post_mean = self._avg(np.einsum("kji,kbj->bi", G, parts[0]))
        grads = (thetas - post_mean) / s2
        if not np.all(np.isfinite(grads)):
            raise RiskError("non-finite gradient")
        if not with_value:
            return np.full(B, np.nan), grads
        values = (tnorm**2) / (2 * s2) - (self._avg(parts[1]) - math.log(K))
        return values, grads

    def posterior_mean(self, theta: np.ndarray) -> np.ndarray:
        """``mean_i E_g[g^T Y_i | Y_i, theta]``, the EM update."""
        theta = np.asarray(theta, dtype=float)
        _, grad = self.batch_value_grad(theta[None], with_value=False)
        return theta - self.sigma**2 * grad[0]

    def evaluate(self, theta: Sequence[float], order: int = 1, stderr: bool = False) -> EvalResult:
        """Risk value and derivatives up to ``order`` (0..4) at ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.d,):
            raise RiskError(f"theta must have length {self.d}")
        if not 0 <= order <= MAX_TENSOR_ORDER:
            raise RiskError(f"derivative order must be in 0..{MAX_TENSOR_ORDER}, got {order}")
        G = self.group.elements
        K = self.group.K
        d = self.d
        s2 = self.sigma**2
        gtheta = G @ theta
        Y = self.data.Y
        w = self.weights

        def fn(s: int, e: int):
            Yc = Y[s:e]
            L = Yc @ gtheta.T / s2
            shift = L.max(axis=1, keepdims=True)
            E = np.exp(L - shift)
            tot = E.sum(axis=1, keepdims=True)
            P = E / tot
            lse = np.log(tot[:, 0]) + shift[:, 0]
            wc = w[s:e] if w is not None else np.ones(e - s)
            out = [wc @ lse]
            if stderr:
                out.append(wc @ lse**2)
            if order >= 1:
                U = np.einsum("kji,cj->cki", G, Yc)
                m = np.einsum("ck,cki->ci", P, U)
                out.append(wc @ m)
                if stderr:
                    out.append(wc @ m**2)
            if order >= 2:
                cov = np.einsum("ck,cki,ckj->cij", P, U, U) - m[:, :, None] * m[:, None, :]
                out.append(np.einsum("c,cij->ij", wc, cov))
                if stderr:
                    out.append(np.einsum("c,cij->ij", wc, cov**2))
            for ell in range(3, order + 1):
                kap = batched_cumulant_tensor(P, U, ell)
                out.append(np.tensordot(wc, kap, axes=1))
            return tuple(out)

        parts = list(chunked_reduce(self.data.n, fn, self.threads, self.chunk))
        norm = 1.0 if w is not None else 1.0 / self.data.n
        nsamp = self.data.n
        mean_lse = parts.pop(0) * norm
        res = EvalResult(float(theta @ theta / (2 * s2) - (mean_lse - math.log(K))))
        if stderr:
            var = max(parts.pop(0) * norm - mean_lse**2, 0.0)
            res.stderr["value"] = math.sqrt(var / nsamp)
        if order >= 1:
            m_mean = parts.pop(0) * norm
            res.grad = (theta - m_mean) / s2
            if stderr:
                var = np.maximum(parts.pop(0) * norm - m_mean**2, 0.0)
                res.stderr["grad"] = np.sqrt(var / nsamp) / s2
        if order >= 2:
            cov_mean = parts.pop(0) * norm
            cov_mean = (cov_mean + cov_mean.T) / 2
            res.hess = (np.eye(d) - cov_mean / s2) / s2
            if stderr:
                var = np.maximum(parts.pop(0) * norm - cov_mean**2, 0.0)
                res.stderr["hess"] = np.sqrt(var / nsamp) / s2**2
        for ell in range(3, order + 1):
            res.tensors[ell] = -parts.pop(0) * norm / self.sigma ** (2 * ell)
        if not np.isfinite(res.value):
            raise RiskError("non-finite risk value")
        return res

    def value(self, theta: Sequence[float]) -> float:
        return self.evaluate(theta, order=0).value


def empirical_risk(model: RiskModel, theta: Sequence[float], order: int = 1) -> EvalResult:
    return model.evaluate(theta, order)


@lru_cache(maxsize=8)
def _noise(seed: int, N: int, d: int) -> np.ndarray:
    eps = standard_normals(seed, NOISE_STREAM, (N, d))
    eps.setflags(write=False)
    return eps


def population_model(
    G: GroupAction,
    theta_star: Sequence[float],
    sigma: float,
    N: int = 200_000,
    seed: int = 0,
    threads: int = 1,
    method: str = "monte_carlo",
    quad_order: int = 40,
) -> RiskModel:
    """Risk model whose average approximates the expectation over ``eps``.

    ``monte_carlo`` uses one fixed noise stream ``theta_star + sigma eps`` for every
    ``theta`` (common random numbers).  ``quadrature`` uses a tensor Gauss-Hermite
    rule of ``quad_order`` nodes per axis and is only offered for ``d <= 2``.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    d = G.d
    if method == "monte_carlo":
        if N < 1:
            raise RiskError("Monte Carlo sample size must be >= 1")
        Y = theta_star + sigma * _noise(seed, N, d)
        return RiskModel(G, Dataset(Y, sigma, seed), threads)
    if method == "quadrature":
        if d > 2:
            raise RiskError("quadrature is only offered for d <= 2")
        x, wx = np.polynomial.hermite_e.hermegauss(quad_order)
        wx = wx / wx.sum()
        grids = np.meshgrid(*([x] * d), indexing="ij")
        wgrid = np.prod(np.meshgrid(*([wx] * d), indexing="ij"), axis=0)
        eps = np.stack([g.ravel() for g in grids], axis=1)
        Y = theta_star + sigma * eps
        return RiskModel(G, Dataset(Y, sigma, 0), threads, sample_weights=wgrid.ravel())
    raise RiskError(f"unknown population method {method!r}")


def population_risk(
    G: GroupAction,
    theta_star: Sequence[float],
    sigma: float,
    theta: Sequence[float],
    N: int = 200_000,
    seed: int = 0,
    order: int = 1,
    method: str = "monte_carlo",
    stderr: bool = True,
) -> EvalResult:
    model = population_model(G, theta_star, sigma, N, seed, method=method)
    return model.evaluate(theta, order, stderr=stderr and method == "monte_carlo")
