"""Scripted reproductions of the rotation and cyclic-shift experiments.

Each function writes CSV (and optionally PNG and gnuplot) files into an output
directory and returns a summary dictionary.  CSV contents depend only on the
arguments, never on the thread count or wall-clock time.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from . import plots
from .groups import GroupAction, make_cyclic, make_rotations, orbit_distances
from .landscape import basin_fractions, newton_polish
from .model import sample_dataset
from .mra import critical_family, example_theta_star, theta_from_phase
from .optim import OptimConfig, block_preconditioner, run
from .report import write_csv, write_gnuplot, write_json
from .risk import RiskModel

log = logging.getLogger(__name__)

FIG1_SETTINGS = ((0.4, 10_000), (4.0, 100_000))
FIG4_SIGMAS = (5.0, 5.4, 5.8, 6.2)
# AGD step on the mean-zero subspace as a multiple of sigma^4
FIG4_STEP_SCALE = 0.125
GRID_BATCH = 512


def risk_grid(model: RiskModel, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Empirical risk on the tensor grid ``xs x ys`` (indexed ``[i, j] -> (xs[i], ys[j])``)."""
    pts = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)
    vals = np.concatenate(
        [model.batch_value_grad(pts[s : s + GRID_BATCH])[0] for s in range(0, len(pts), GRID_BATCH)]
    )
    return vals.reshape(len(xs), len(ys))


def grid_local_minima(values: np.ndarray) -> list[tuple[int, int]]:
    """Interior grid points strictly below all eight neighbours."""
    out = []
    for i in range(1, values.shape[0] - 1):
        for j in range(1, values.shape[1] - 1):
            patch = values[i - 1 : i + 2, j - 1 : j + 2].ravel()
            if np.all(values[i, j] < np.delete(patch, 4)):
                out.append((i, j))
    return out


def fig1(out: Path, seed: int = 0, threads: int = 1, grid: int = 81, extent: float = 2.0, plot: bool = True, gnuplot: bool = False) -> dict:
    out = Path(out)
    G = make_rotations(3)
    theta_star = np.array([1.0, 0.0])
    xs = np.linspace(-extent, extent, grid)
    summary: dict = {"settings": []}
    for sigma, n in FIG1_SETTINGS:
        ds = sample_dataset(G, theta_star, sigma, n, seed)
        model = RiskModel(G, ds, threads)
        values = risk_grid(model, xs, xs)
        meta = {"figure": "fig1", "group": G.name, "theta_star": theta_star, "sigma": sigma, "n": n, "seed": seed}
        tag = f"sigma{sigma:g}"
        write_csv(out / f"fig1_samples_{tag}.csv", ["y1", "y2"], ds.Y, meta)
        grid_rows = ([xs[i], xs[j], values[i, j]] for i in range(grid) for j in range(grid))
        write_csv(out / f"fig1_contour_{tag}.csv", ["theta1", "theta2", "risk"], grid_rows, {**meta, "grid": grid, "extent": extent})
        minima = grid_local_minima(values)
        i, j = np.unravel_index(np.argmin(values), values.shape)
        best = np.array([xs[i], xs[j]])
        summary["settings"].append(
            {
                "sigma": sigma,
                "n": n,
                "grid_minima": len(minima),
                "argmin": best,
                "argmin_radius": float(np.linalg.norm(best)),
            }
        )
        if gnuplot:
            write_gnuplot(out / f"fig1_samples_{tag}.gp", f"fig1_samples_{tag}.csv", 1, [2], f"samples, noise {sigma:g}", style="dots")
        if plot:
            plots.contour_png(out / f"fig1_{tag}.png", xs, xs, values, ds.Y, f"empirical risk, noise {sigma:g}")
    write_json(out / "fig1_summary.json", summary)
    return summary


def _polish_registered(model: RiskModel, guess: np.ndarray) -> tuple[np.ndarray, bool]:
    """Newton-polished critical point near ``guess`` and whether it is a strict local minimizer."""
    theta, ok = newton_polish(model, guess)
    if not ok:
        return theta, False
    eigs = np.linalg.eigvalsh(model.evaluate(theta, 2).hess)
    return theta, bool(eigs[0] > 0)


def fig2(
    out: Path,
    seed: int = 0,
    threads: int = 1,
    sigma: float = 4.0,
    n: int = 100_000,
    iters: int = 250,
    methods: Sequence[str] = ("em", "gd", "agd"),
    plot: bool = True,
    gnuplot: bool = False,
) -> dict:
    """Distances of EM, GD and AGD iterates from ``(1, 1)`` to the true orbit and to the empirical minimizer orbit."""
    out = Path(out)
    G = make_rotations(3)
    theta_star = np.array([1.0, 0.0])
    ds = sample_dataset(G, theta_star, sigma, n, seed)
    model = RiskModel(G, ds, threads)
    theta_hat, ok = _polish_registered(model, theta_star)
    summary: dict = {"theta_hat": theta_hat, "theta_hat_is_minimizer": ok, "methods": {}}
    traces = {}
    for method in methods:
        cfg = OptimConfig(method, eta=None if method == "em" else sigma**4, max_iters=iters, grad_tol=0.0)
        tr = run(model, cfg, [1.0, 1.0], [theta_star, theta_hat])
        meta = {
            "figure": "fig2",
            "group": G.name,
            "theta_star": theta_star,
            "sigma": sigma,
            "n": n,
            "seed": seed,
            "method": method,
            "eta": sigma**2 if method == "em" else sigma**4,
            "iters": iters,
            "theta0": [1.0, 1.0],
            "orbit_0": "theta_star",
            "orbit_1": "theta_hat",
        }
        cols = ["iter", "risk", "grad_norm", "dist_orbit_0", "dist_orbit_1", "theta1", "theta2"]
        path = write_csv(out / f"fig2_{method}.csv", cols, tr.rows(), meta)
        dist = np.array(tr.distances)
        hit = np.flatnonzero(dist[:, 1] <= 0.1)
        summary["methods"][method] = {
            "final_dist_theta_star": float(dist[-1, 0]),
            "final_dist_theta_hat": float(dist[-1, 1]),
            "dist_theta_hat_at_50": float(dist[min(50, len(dist) - 1), 1]),
            "first_iter_within_0.1": int(tr.iters[hit[0]]) if hit.size else None,
        }
        traces[method] = (tr.iters, dist[:, 1])
        if gnuplot:
            write_gnuplot(out / f"fig2_{method}.gp", path.name, 1, [5], f"{method} distance", logscale_y=True)
    if plot:
        plots.distance_png(out / "fig2.png", traces, "distance to the empirical minimizer orbit")
    write_json(out / "fig2_summary.json", summary)
    return summary


def fig4(
    out: Path,
    seed: int = 0,
    threads: int = 1,
    sigmas: Sequence[float] = FIG4_SIGMAS,
    n: int = 100_000,
    starts: int = 100,
    iters: int = 250,
    step_scale: float = FIG4_STEP_SCALE,
    plot: bool = True,
    gnuplot: bool = False,
) -> dict:
    """Basins of the true and spurious orbits for cyclic shifts in dimension six.

    For each noise level the data are fixed, ``theta_hat`` and ``mu_hat`` are
    Newton-polished from the true signal and the spurious Fourier-phase point,
    and AGD runs from standard normal starts.  The spurious orbit is registered
    only when its polish ends at a strict local minimizer.
    """
    out = Path(out)
    G = make_cyclic(6)
    theta_star = example_theta_star()
    mu_star = theta_from_phase(theta_star, critical_family(6, 0), "-")
    basin_rows = []
    scatter_rows = []
    scatter: dict[float, np.ndarray] = {}
    summary: dict = {"levels": []}
    for sigma in sigmas:
        ds = sample_dataset(G, theta_star, sigma, n, seed)
        model = RiskModel(G, ds, threads)
        theta_hat, _ = _polish_registered(model, theta_star)
        mu_hat, mu_ok = _polish_registered(model, mu_star)
        orbits = {"theta_hat": theta_hat}
        if mu_ok:
            orbits["mu_hat"] = mu_hat
        cfg = OptimConfig("agd", max_iters=iters, preconditioner=block_preconditioner(G, sigma**2, step_scale * sigma**4))
        res = basin_fractions(model, starts, seed, orbits, cfg)
        d_theta = orbit_distances(G, res.finals, theta_hat)
        d_mu = orbit_distances(G, res.finals, mu_hat) if mu_ok else np.full(starts, np.nan)
        frac_mu = res.fractions.get("mu_hat", 0.0)
        basin_rows.append(
            [sigma, res.fractions["theta_hat"], frac_mu, res.fractions["unresolved"], int(mu_ok), *theta_hat, *mu_hat]
        )
        code = {"theta_hat": 0, "mu_hat": 1, "unresolved": -1}
        for i in range(starts):
            scatter_rows.append([sigma, i, d_theta[i], d_mu[i], code[res.assignments[i]], int(res.iterations[i])])
        scatter[sigma] = np.stack([d_theta, d_mu], axis=1)
        level = {
            "sigma": sigma,
            "fractions": res.fractions,
            "spurious_fraction": frac_mu,
            "mu_registered": mu_ok,
            "theta_hat": theta_hat,
            "mu_hat": mu_hat,
            "theta_hat_dist_to_theta_star": float(orbit_distances(G, theta_hat[None], theta_star)[0]),
            "max_dist_to_assigned": float(np.nanmin(np.stack([d_theta, d_mu]), axis=0).max()),
        }
        summary["levels"].append(level)
        log.info("noise %.2f: spurious fraction %.2f", sigma, frac_mu)
    meta = {
        "figure": "fig4",
        "group": G.name,
        "theta_star": theta_star,
        "mu_star": mu_star,
        "sigmas": list(sigmas),
        "n": n,
        "starts": starts,
        "iters": iters,
        "seed": seed,
        "step_fixed": "sigma^2",
        "step_moving": f"{step_scale:g}*sigma^4",
    }
    cols = ["sigma", "frac_theta_hat", "frac_mu_hat", "frac_unresolved", "mu_registered"]
    cols += [f"theta_hat_{i}" for i in range(6)] + [f"mu_hat_{i}" for i in range(6)]
    path = write_csv(out / "fig4_basins.csv", cols, basin_rows, meta)
    write_csv(
        out / "fig4_scatter.csv",
        ["sigma", "start", "dist_theta_hat", "dist_mu_hat", "assigned", "iterations"],
        scatter_rows,
        meta,
    )
    if gnuplot:
        write_gnuplot(out / "fig4_basins.gp", path.name, 1, [3], "spurious fraction")
    if plot:
        plots.basin_png(out / "fig4.png", list(sigmas), [r[2] for r in basin_rows], scatter)
    write_json(out / "fig4_summary.json", summary)
    return summary
