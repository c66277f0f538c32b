"""EM, gradient descent and Nesterov-accelerated gradient descent on the empirical risk."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .groups import GroupAction, kernel_decomposition, orbit_distances
from .risk import RiskModel

METHODS = ("em", "gd", "agd")
DIVERGENCE_FACTOR = 1e3


class OptimError(ValueError):
    """Raised for invalid configurations and diverging iterations."""


@dataclass(frozen=True)
class OptimConfig:
    """Optimizer settings.

    ``eta`` defaults to ``sigma^4`` for GD and AGD and is ignored by EM.
    ``grad_tol`` defaults to ``1e-8 / sigma^2``.  ``preconditioner`` is an
    optional symmetric positive definite matrix that replaces ``eta * I``.
    """

    method: str = "agd"
    eta: float | None = None
    max_iters: int = 250
    grad_tol: float | None = None
    record_every: int = 1
    preconditioner: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise OptimError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.eta is not None and not self.eta > 0:
            raise OptimError(f"step size must be positive, got {self.eta}")
        if self.max_iters < 1:
            raise OptimError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.record_every < 1:
            raise OptimError(f"record_every must be >= 1, got {self.record_every}")

    def step_matrix(self, sigma: float, d: int) -> np.ndarray | float:
        if self.method == "em":
            return sigma**2
        if self.preconditioner is not None:
            return np.asarray(self.preconditioner, dtype=float)
        return self.eta if self.eta is not None else sigma**4

    def tolerance(self, sigma: float) -> float:
        return self.grad_tol if self.grad_tol is not None else 1e-8 / sigma**2


@dataclass
class OptimTrace:
    iters: list[int] = field(default_factory=list)
    risks: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    distances: list[list[float]] = field(default_factory=list)
    thetas: list[np.ndarray] = field(default_factory=list)
    wall_time: float = 0.0
    converged: bool = False
    final: np.ndarray | None = None

    def rows(self) -> list[list[float]]:
        """Rows of ``iter, risk, grad_norm, distances..., theta...`` for CSV output."""
        return [
            [it, r, g, *dist, *th]
            for it, r, g, dist, th in zip(self.iters, self.risks, self.grad_norms, self.distances, self.thetas)
        ]


def block_preconditioner(G: GroupAction, eta_fixed: float, eta_moving: float) -> np.ndarray:
    """Step matrix with one step size on the fixed subspace of ``G`` and another on its complement."""
    dec = kernel_decomposition(G)
    return eta_fixed * dec.fixed_basis @ dec.fixed_basis.T + eta_moving * dec.moving_basis @ dec.moving_basis.T


def nesterov_schedule(T: int) -> tuple[np.ndarray, np.ndarray]:
    """``lambda_0 .. lambda_{T+1}`` and ``tau_0 .. tau_T`` of the momentum recurrence."""
    lam = np.zeros(T + 2)
    for t in range(1, T + 2):
        lam[t] = (1 + math.sqrt(1 + 4 * lam[t - 1] ** 2)) / 2
    tau = (lam[:-1] - 1) / lam[1:]
    return lam, tau


def em_step(model: RiskModel, theta: Sequence[float]) -> np.ndarray:
    """Average of back-rotated observations under the posterior at ``theta``."""
    return model.posterior_mean(np.asarray(theta, dtype=float))


def _apply(step: np.ndarray | float, grads: np.ndarray) -> np.ndarray:
    return grads @ step if isinstance(step, np.ndarray) else step * grads


def _bound(model: RiskModel, orbits: Sequence[np.ndarray], scale: float | None) -> float:
    if scale is None:
        scale = max((float(np.linalg.norm(o)) for o in orbits), default=float(model._row_norms.mean()))
    return DIVERGENCE_FACTOR * (scale + model.sigma * math.sqrt(model.d))


def run(
    model: RiskModel,
    config: OptimConfig,
    theta0: Sequence[float],
    orbits: Sequence[Sequence[float]] = (),
    scale: float | None = None,
) -> OptimTrace:
    """Iterate from ``theta0`` until the gradient norm falls below tolerance or ``max_iters`` steps.

    The trace records iterate 0 and every ``record_every``-th iterate, plus the
    final one.  AGD uses the momentum sequence from index 1 on, so its first
    step is a plain gradient step.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    if theta.shape != (model.d,) or not np.all(np.isfinite(theta)):
        raise OptimError("theta0 must be a finite vector of the model dimension")
    refs = [np.asarray(o, dtype=float) for o in orbits]
    sigma = model.sigma
    step = config.step_matrix(sigma, model.d)
    tol = config.tolerance(sigma)
    limit = _bound(model, refs, scale)
    _, tau = nesterov_schedule(config.max_iters + 1)
    trace = OptimTrace()
    start = time.perf_counter()
    mu_prev = theta.copy()

    def record(t: int, value: float, grad: np.ndarray, th: np.ndarray) -> None:
        trace.iters.append(t)
        trace.risks.append(value)
        trace.grad_norms.append(float(np.linalg.norm(grad)))
        trace.distances.append([float(orbit_distances(model.group, th[None], r)[0]) for r in refs])
        trace.thetas.append(th.copy())

    for t in range(config.max_iters + 1):
        values, grads = model.batch_value_grad(theta[None])
        value, grad = float(values[0]), grads[0]
        gnorm = float(np.linalg.norm(grad))
        done = gnorm <= tol or t == config.max_iters
        if t % config.record_every == 0 or done:
            record(t, value, grad, theta)
        if done:
            trace.converged = gnorm <= tol
            break
        if config.method == "em":
            theta = theta - sigma**2 * grad
        elif config.method == "gd":
            theta = theta - _apply(step, grad)
        else:
            mu = theta - _apply(step, grad)
            theta = (1 + tau[t + 1]) * mu - tau[t + 1] * mu_prev
            mu_prev = mu
        if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > limit:
            raise OptimError(f"iterates diverged at step {t + 1} (norm above {limit:.3g})")
    trace.final = theta
    trace.wall_time = time.perf_counter() - start
    return trace


@dataclass
class BatchResult:
    finals: np.ndarray
    iterations: np.ndarray
    grad_norms: np.ndarray
    diverged: np.ndarray


def run_batch(
    model: RiskModel,
    config: OptimConfig,
    thetas0: np.ndarray,
    scale: float | None = None,
) -> BatchResult:
    """Run GD or AGD from many starts at once, sharing each pass over the data.

    A start stops updating once its gradient norm is below tolerance; starts
    that exceed the divergence bound are frozen and flagged rather than raised.
    Each start follows the same recurrence as a solo :func:`run`.
    """
    if config.method == "em":
        step: np.ndarray | float = model.sigma**2
        agd = False
    else:
        step = config.step_matrix(model.sigma, model.d)
        agd = config.method == "agd"
    theta = np.array(thetas0, dtype=float)
    B = theta.shape[0]
    tol = config.tolerance(model.sigma)
    limit = _bound(model, [], scale)
    _, tau = nesterov_schedule(config.max_iters + 1)
    mu_prev = theta.copy()
    active = np.ones(B, dtype=bool)
    diverged = np.zeros(B, dtype=bool)
    iters = np.full(B, config.max_iters)
    gnorms = np.zeros(B)
    for t in range(config.max_iters + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        _, grads = model.batch_value_grad(theta[idx], with_value=False)
        gn = np.linalg.norm(grads, axis=1)
        gnorms[idx] = gn
        stop = gn <= tol
        iters[idx[stop]] = t
        active[idx[stop]] = False
        if t == config.max_iters:
            break
        go = idx[~stop]
        g = grads[~stop]
        if agd:
            mu = theta[go] - _apply(step, g)
            theta[go] = (1 + tau[t + 1]) * mu - tau[t + 1] * mu_prev[go]
            mu_prev[go] = mu
        else:
            theta[go] = theta[go] - _apply(step, g)
        bad = go[~np.isfinite(theta[go]).all(axis=1) | (np.linalg.norm(theta[go], axis=1) > limit)]
        diverged[bad] = True
        active[bad] = False
        iters[bad] = t + 1
    return BatchResult(theta, iters, gnorms, diverged)
