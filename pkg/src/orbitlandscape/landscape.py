"""Fisher spectra, graded bands, critical-point surveys and basins of attraction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .groups import GroupAction, min_orbit_separation, orbit_distances
from .model import START_STREAM_BASE, standard_normals
from .optim import OptimConfig, run_batch
from .reparam import Chart, pullback
from .risk import RiskModel, population_model
from .series import richardson_derivatives, rotations_phase_term, s_ell_batch, truncated_risk

SEPARATION_TOL = 1e-6
ZERO_BAND = 1e-8
MATCH_RADIUS = 0.2
RESOLVED_SPREAD = 10.0
SURVEY_ITERS = 2000


class LandscapeError(ValueError):
    """Raised for degenerate orbits, singular information matrices and chart failures."""


@dataclass
class FisherResult:
    matrix: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    method: str
    sigma: float
    stderr: np.ndarray | None = None

    def to_record(self) -> dict:
        rec = {"method": self.method, "sigma": self.sigma, "matrix": self.matrix.tolist(), "eigvals": self.eigvals.tolist()}
        if self.stderr is not None:
            rec["stderr"] = self.stderr.tolist()
        return rec


def fisher_information(
    G: GroupAction,
    theta_star: Sequence[float],
    sigma: float,
    method: str = "monte_carlo",
    N: int = 200_000,
    seed: int = 0,
    k: int = 3,
    threads: int = 1,
    quad_order: int = 40,
) -> FisherResult:
    """Hessian of the population risk at ``theta_star``.

    ``monte_carlo`` averages over one fixed noise stream, ``quadrature`` uses a
    Gauss-Hermite rule (``d <= 2``), and ``series`` differentiates the
    ``k``-term high-noise expansion.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    if G.K > 1 and min_orbit_separation(G, theta_star) <= SEPARATION_TOL:
        raise LandscapeError("theta_star has coinciding orbit points; the information matrix is singular")
    stderr = None
    if method in ("monte_carlo", "quadrature"):
        model = population_model(G, theta_star, sigma, N, seed, threads, method, quad_order)
        res = model.evaluate(theta_star, 2, stderr=method == "monte_carlo")
        H = res.hess
        stderr = res.stderr.get("hess")
    elif method == "series":
        H = truncated_risk(G, theta_star, theta_star, sigma, k, order=2).hess
    else:
        raise LandscapeError(f"unknown Fisher method {method!r}")
    H = (H + H.T) / 2
    vals, vecs = np.linalg.eigh(H)
    return FisherResult(H, vals, vecs, method, float(sigma), stderr)


@dataclass
class Band:
    level: int
    dim: int
    eigvals: list[float]
    ratios: list[float]
    resolved: bool


@dataclass
class BandReport:
    bands: list[Band]

    @property
    def resolved(self) -> bool:
        return all(b.resolved for b in self.bands)

    def to_record(self) -> list[dict]:
        return [b.__dict__ for b in self.bands]


def graded_spectrum(F: FisherResult, sigma: float, dims: Sequence[int]) -> BandReport:
    """Assign eigenvalues to degree bands from the largest down.

    Band ``l`` takes the next ``dims[l-1]`` eigenvalues; its ratios are
    ``eig * sigma^{2l}``.  A band is resolved when its ratios are positive and
    span at most a factor of ten, and it sits strictly below the band before it.
    """
    dims = [int(x) for x in dims]
    if sum(dims) != F.eigvals.shape[0]:
        raise LandscapeError(f"band dimensions {dims} do not sum to {F.eigvals.shape[0]}")
    desc = np.sort(F.eigvals)[::-1]
    bands: list[Band] = []
    pos = 0
    prev_min = np.inf
    for level, dim in enumerate(dims, start=1):
        vals = desc[pos : pos + dim]
        pos += dim
        if dim == 0:
            continue
        ratios = vals * sigma ** (2 * level)
        ok = bool(np.all(ratios > 0) and ratios.max() <= RESOLVED_SPREAD * ratios.min() and vals.max() < prev_min)
        prev_min = float(vals.min())
        bands.append(Band(level, dim, vals.tolist(), ratios.tolist(), ok))
    return BandReport(bands)


def plugin_variance(F: FisherResult, grad_psi: Sequence[float]) -> float:
    """``grad_psi^T I^{-1} grad_psi`` through a Cholesky solve."""
    grad_psi = np.asarray(grad_psi, dtype=float)
    if F.eigvals[0] <= 0:
        raise LandscapeError("information matrix is not positive definite")
    fac = cho_factor(F.matrix)
    return float(grad_psi @ cho_solve(fac, grad_psi))


# Pseudo-local minimizers ------------------------------------------------------------


@dataclass
class BandCheck:
    level: int
    coords: list[int]
    grad_norm: float
    min_eig: float
    passed: bool


@dataclass
class PseudoMinReport:
    passed: bool
    bands: list[BandCheck] = field(default_factory=list)

    def to_record(self) -> dict:
        return {"passed": self.passed, "bands": [b.__dict__ for b in self.bands]}


def _term_function(G: GroupAction, theta_star: np.ndarray, ell: int) -> Callable[[np.ndarray], np.ndarray]:
    if G.name.startswith("rotations") and ell == G.K and ell > 4:
        # the radial polynomial of S_K has no angular derivatives, so the phase term suffices
        return lambda pts: rotations_phase_term(G.K, pts, theta_star)
    return lambda pts: s_ell_batch(G, pts, theta_star, ell)


def pseudo_minimizer_check(
    G: GroupAction,
    theta: Sequence[float],
    theta_star: Sequence[float],
    chart: Chart,
    grad_tol: float = 1e-7,
    curv_tol: float = 1e-9,
) -> PseudoMinReport:
    """Check block stationarity and block convexity of each ``S_l`` in chart coordinates.

    For every degree band ``l`` of the chart, ``S_l`` is pulled back to chart
    coordinates and restricted to that band's coordinates.
    """
    theta = np.asarray(theta, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    bands = np.array(chart.bands())
    report = PseudoMinReport(True)
    for level in sorted(set(bands.tolist())):
        coords = np.flatnonzero(bands == level)
        f = _term_function(G, theta_star, level)
        grad, hess = richardson_derivatives(f, theta, 2)
        try:
            g_phi, h_phi = pullback(chart, theta, grad, hess)
        except ValueError as exc:
            raise LandscapeError(f"chart failure: {exc}") from None
        block_g = float(np.linalg.norm(g_phi[coords]))
        block_h = h_phi[np.ix_(coords, coords)]
        min_eig = float(np.linalg.eigvalsh(block_h)[0])
        ok = block_g <= grad_tol and min_eig >= curv_tol
        report.bands.append(BandCheck(level, coords.tolist(), block_g, min_eig, ok))
        report.passed &= ok
    return report


# Critical points --------------------------------------------------------------------


def survey_config(sigma: float, max_iters: int = SURVEY_ITERS) -> OptimConfig:
    """AGD with step ``sigma^2``.

    The risk Hessian never exceeds ``Id / sigma^2``, so this step is stable from
    any start, unlike ``sigma^4`` which overshoots far from the data.
    """
    return OptimConfig("agd", eta=sigma**2, max_iters=max_iters)


@dataclass
class CriticalPoint:
    theta: np.ndarray
    grad_norm: float
    min_eig: float
    max_eig: float
    kind: str
    orbit: str | None = None

    def to_record(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "grad_norm": self.grad_norm,
            "min_eig": self.min_eig,
            "max_eig": self.max_eig,
            "class": self.kind,
            "orbit": self.orbit,
        }


def classify(eigs: np.ndarray, zero_band: float = ZERO_BAND) -> str:
    if np.all(eigs > zero_band):
        return "minimizer"
    if np.all(eigs < -zero_band):
        return "maximizer"
    if eigs.min() < -zero_band and eigs.max() > zero_band:
        return "saddle"
    return "inconclusive"


def clipped_newton_step(grad: np.ndarray, hess: np.ndarray, rel_clip: float = 1e-10) -> np.ndarray:
    """``-H^+ g`` with eigenvalues below ``rel_clip * max|eig|`` treated as zero."""
    vals, vecs = np.linalg.eigh((hess + hess.T) / 2)
    cut = rel_clip * np.abs(vals).max()
    inv = np.where(np.abs(vals) > cut, 1.0 / np.where(vals == 0, 1.0, vals), 0.0)
    return -vecs @ (inv * (vecs.T @ grad))


def newton_polish(
    model: RiskModel, theta: Sequence[float], tol: float | None = None, max_steps: int = 50
) -> tuple[np.ndarray, bool]:
    """Damped Newton iterations on the gradient until its norm is below ``tol`` (default ``1e-10 / sigma^2``)."""
    tol = tol if tol is not None else 1e-10 / model.sigma**2
    theta = np.asarray(theta, dtype=float).copy()
    res = model.evaluate(theta, 2)
    for _ in range(max_steps):
        gnorm = np.linalg.norm(res.grad)
        if gnorm <= tol:
            return theta, True
        step = clipped_newton_step(res.grad, res.hess)
        for _ in range(30):
            trial = model.evaluate(theta + step, 2)
            if np.linalg.norm(trial.grad) < gnorm:
                break
            step = step / 2
        else:
            return theta, False
        theta = theta + step
        res = trial
    return theta, bool(np.linalg.norm(res.grad) <= tol)


def start_points(seed: int, n_starts: int, d: int) -> np.ndarray:
    """Standard normal starts, one Philox stream per start index."""
    return np.stack([standard_normals(seed, START_STREAM_BASE + i, (d,)) for i in range(n_starts)])


def match_orbit(G: GroupAction, theta: np.ndarray, orbits: Mapping[str, np.ndarray], radius: float = MATCH_RADIUS) -> tuple[str | None, dict[str, float]]:
    dists = {name: float(orbit_distances(G, theta[None], ref)[0]) for name, ref in orbits.items()}
    if not dists:
        return None, dists
    best = min(dists, key=dists.get)
    return (best if dists[best] <= radius else None), dists


@dataclass
class Survey:
    points: list[CriticalPoint]
    failed_starts: list[int]


def find_critical_points(
    model: RiskModel,
    n_starts: int,
    seed: int,
    config: OptimConfig | None = None,
    orbits: Mapping[str, Sequence[float]] | None = None,
    dedup_tol: float = 1e-4,
) -> Survey:
    """Multi-start AGD, Newton polish, orbit deduplication and classification."""
    if n_starts < 1:
        raise LandscapeError("n_starts must be >= 1")
    config = config or survey_config(model.sigma)
    refs = {k: np.asarray(v, dtype=float) for k, v in (orbits or {}).items()}
    batch = run_batch(model, config, start_points(seed, n_starts, model.d))
    points: list[CriticalPoint] = []
    failed: list[int] = []
    for i, th in enumerate(batch.finals):
        if batch.diverged[i]:
            failed.append(i)
            continue
        th, ok = newton_polish(model, th)
        if not ok:
            failed.append(i)
            continue
        if any(orbit_distances(model.group, th[None], p.theta)[0] <= dedup_tol for p in points):
            continue
        res = model.evaluate(th, 2)
        eigs = np.linalg.eigvalsh(res.hess)
        name, _ = match_orbit(model.group, th, refs)
        points.append(
            CriticalPoint(th, float(np.linalg.norm(res.grad)), float(eigs[0]), float(eigs[-1]), classify(eigs), name)
        )
    return Survey(points, failed)


@dataclass
class BasinResult:
    fractions: dict[str, float]
    assignments: list[str]
    distances: np.ndarray
    finals: np.ndarray
    iterations: np.ndarray


def basin_fractions(
    model: RiskModel,
    n_starts: int,
    seed: int,
    orbits: Mapping[str, Sequence[float]],
    config: OptimConfig | None = None,
    init_law: str = "standard_normal",
    radius: float = MATCH_RADIUS,
) -> BasinResult:
    """Fraction of descent runs from random starts ending within ``radius`` of each registered orbit."""
    if init_law != "standard_normal":
        raise LandscapeError(f"unsupported initialisation law {init_law!r}")
    if not orbits:
        raise LandscapeError("at least one orbit must be registered")
    config = config or survey_config(model.sigma)
    names = list(orbits)
    refs = [np.asarray(orbits[k], dtype=float) for k in names]
    batch = run_batch(model, config, start_points(seed, n_starts, model.d))
    dist = np.stack([orbit_distances(model.group, batch.finals, r) for r in refs], axis=1)
    assign: list[str] = []
    for i in range(n_starts):
        j = int(np.argmin(dist[i]))
        assign.append(names[j] if dist[i, j] <= radius and not batch.diverged[i] else "unresolved")
    fractions = {k: assign.count(k) / n_starts for k in names + ["unresolved"]}
    return BasinResult(fractions, assign, dist, batch.finals, batch.iterations)
