"""Command-line entry point.

Exit codes: 0 on success, 2 for invalid configuration or input, 3 for
numerical failures (divergence, singular matrices, failed certificates).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import repro
from .config import ConfigError, ExperimentConfig, load_config, resolved
from .cumulants import CumulantError
from .groups import GroupAction, GroupError, parse_group
from .landscape import (
    SURVEY_ITERS,
    LandscapeError,
    basin_fractions,
    find_critical_points,
    fisher_information,
    graded_spectrum,
    survey_config,
)
from .model import DatasetError, HLaw, load_dataset, sample_dataset, save_dataset
from .mra import (
    CertificationError,
    MRAError,
    SpectrumWeights,
    phase_minimize,
    spurious_even,
    spurious_odd,
    theta_from_phase,
    theta_from_spectrum,
)
from .optim import OptimConfig, OptimError, run
from .reparam import ChartError
from .report import write_csv, write_gnuplot, write_json
from .risk import RiskError, RiskModel
from .series import SeriesError, s_ell_batch, truncated_batch

log = logging.getLogger("orbitlandscape")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
CONFIG_ERRORS = (ConfigError, GroupError, DatasetError, CumulantError, SeriesError, OSError)
NUMERIC_ERRORS = (RiskError, OptimError, LandscapeError, ChartError, CertificationError, np.linalg.LinAlgError, FloatingPointError)


class UsageError(ValueError):
    """Raised for missing or inconsistent command-line inputs."""


def _vector(text: str | None) -> np.ndarray | None:
    if text is None:
        return None
    try:
        return np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError:
        raise UsageError(f"cannot parse vector {text!r}") from None


def _floats(text: str | None) -> list[float] | None:
    vec = _vector(text)
    return None if vec is None else vec.tolist()


class Context:
    """Resolved global options: config file values overridden by explicit flags."""

    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args
        self.cfg: ExperimentConfig = load_config(args.config)
        self.seed = args.seed if args.seed is not None else (self.cfg.seed or 0)
        self.threads = args.threads if args.threads is not None else (self.cfg.threads or 1)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.plots = self.cfg.outputs.plots and not args.no_plots
        self.gnuplot = args.gnuplot or self.cfg.outputs.gnuplot

    def pick(self, flag, key: str, default=None):
        if flag is not None:
            return flag
        value = getattr(self.cfg, key)
        return value if value is not None else default

    def group(self, required: bool = True) -> GroupAction | None:
        spec = self.pick(getattr(self.args, "group", None), "group")
        if spec is None:
            if required:
                raise UsageError("a group is required (--group or config 'group')")
            return None
        return parse_group(spec)

    def theta_star(self) -> np.ndarray:
        ts = self.pick(_vector(getattr(self.args, "theta_star", None)), "theta_star")
        if ts is None:
            raise UsageError("theta_star is required (--theta-star or config 'theta_star')")
        return np.asarray(ts, dtype=float)

    def meta(self, **extra) -> dict:
        return {"config": resolved(self.cfg), "seed": self.seed, "command": self.args.command, **extra}


def _load_model(ctx: Context) -> RiskModel:
    ds = load_dataset(ctx.args.data)
    G = ctx.group(required=False)
    if G is None:
        if "group" not in ds.meta:
            raise UsageError("dataset has no group record; pass --group")
        G = parse_group(ds.meta["group"])
    return RiskModel(G, ds, ctx.threads)


# Subcommands ------------------------------------------------------------------------


def cmd_generate(ctx: Context) -> dict:
    a = ctx.args
    G = ctx.group()
    sigma = ctx.pick(a.sigma, "sigma")
    n = ctx.pick(a.n, "n")
    if sigma is None or n is None:
        raise UsageError("generate needs --sigma and --n")
    law = HLaw()
    if a.h_law != "uniform":
        kind, _, idx = a.h_law.partition(":")
        if kind != "fixed" or not idx.isdigit():
            raise UsageError(f"h-law must be 'uniform' or 'fixed:INDEX', got {a.h_law!r}")
        law = HLaw("fixed", int(idx))
    ds = sample_dataset(G, ctx.theta_star(), sigma, n, ctx.seed, law)
    path = Path(a.data_out) if a.data_out else ctx.out / f"data.{a.format}"
    save_dataset(ds, path)
    return {"path": str(path), "n": ds.n, "d": ds.d, "sigma": ds.sigma, "seed": ds.seed}


def cmd_risk_eval(ctx: Context) -> dict:
    a = ctx.args
    model = _load_model(ctx)
    theta = _vector(a.theta)
    res = model.evaluate(theta, a.order, stderr=True)
    payload = {
        "theta": theta,
        "order": a.order,
        "value": res.value,
        "grad": res.grad,
        "hess": res.hess,
        "tensors": {str(k): v for k, v in res.tensors.items()},
        "stderr": res.stderr,
    }
    write_json(ctx.out / "risk_eval.json", payload)
    return payload


def _init_point(spec: str, d: int) -> np.ndarray:
    if spec.startswith("random:"):
        seed = int(spec.split(":", 1)[1])
        from .landscape import start_points

        return start_points(seed, 1, d)[0]
    return _vector(spec)


def cmd_optimize(ctx: Context) -> dict:
    a = ctx.args
    model = _load_model(ctx)
    sigma = model.sigma
    eta = None if a.eta == "auto" else float(a.eta)
    iters = ctx.pick(a.iters, "iters", 250)
    cfg = OptimConfig(a.method, eta=eta, max_iters=iters, grad_tol=a.grad_tol, record_every=a.record_every)
    theta0 = _init_point(a.init, model.d)
    orbits = [_vector(o) for o in a.orbit]
    if not orbits and "theta_star" in model.data.meta:
        orbits = [np.asarray(model.data.meta["theta_star"], dtype=float)]
    tr = run(model, cfg, theta0, orbits)
    cols = ["iter", "risk", "grad_norm"] + [f"dist_orbit_{i}" for i in range(len(orbits))]
    cols += [f"theta_{i}" for i in range(model.d)]
    path = Path(a.trace_out) if a.trace_out else ctx.out / "trace.csv"
    meta = ctx.meta(method=a.method, eta=eta if eta is not None else ("sigma^2" if a.method == "em" else sigma**4), iters=iters, theta0=theta0, orbits=orbits)
    write_csv(path, cols, tr.rows(), meta)
    if ctx.gnuplot:
        write_gnuplot(path.with_suffix(".gp"), path.name, 1, [3], "gradient norm", logscale_y=True)
    return {"trace": str(path), "final": tr.final, "converged": tr.converged, "iterations": tr.iters[-1]}


def cmd_landscape(ctx: Context) -> dict:
    a = ctx.args
    model = _load_model(ctx)
    orbits = {}
    for item in a.orbit:
        name, _, vec = item.partition("=")
        orbits[name] = _vector(vec)
    if not orbits and "theta_star" in model.data.meta:
        orbits["theta_star"] = np.asarray(model.data.meta["theta_star"], dtype=float)
    starts = ctx.pick(a.starts, "starts", 20)
    cfg = survey_config(model.sigma, ctx.pick(a.iters, "iters", SURVEY_ITERS))
    survey = find_critical_points(model, starts, ctx.seed, cfg, orbits)
    report = {
        "critical_points": [p.to_record() for p in survey.points],
        "failed_starts": survey.failed_starts,
    }
    if orbits:
        basins = basin_fractions(model, starts, ctx.seed, orbits, cfg)
        report["basin_fractions"] = basins.fractions
    rows = [[i, p.kind, p.orbit or "", p.grad_norm, p.min_eig, p.max_eig, *p.theta] for i, p in enumerate(survey.points)]
    cols = ["index", "class", "orbit", "grad_norm", "min_eig", "max_eig"] + [f"theta_{i}" for i in range(model.d)]
    write_csv(ctx.out / "critical_points.csv", cols, rows, ctx.meta(starts=starts))
    write_json(ctx.out / "landscape.json", report)
    return report


def cmd_fisher(ctx: Context) -> dict:
    a = ctx.args
    G = ctx.group()
    ts = ctx.theta_star()
    sigma = ctx.pick(a.sigma, "sigma")
    if sigma is None:
        raise UsageError("fisher needs --sigma")
    F = fisher_information(G, ts, sigma, a.method, a.N, ctx.seed, a.k, ctx.threads)
    report = {"fisher": F.to_record()}
    if a.dims:
        dims = [int(x) for x in a.dims.split(",")]
        report["bands"] = graded_spectrum(F, sigma, dims).to_record()
    rows = [[i, v, v * sigma**2] for i, v in enumerate(F.eigvals)]
    write_csv(ctx.out / "fisher_eigvals.csv", ["index", "eigval", "eigval_times_sigma2"], rows, ctx.meta(method=a.method, sigma=sigma))
    write_json(ctx.out / "fisher.json", report)
    return report


def cmd_series(ctx: Context) -> dict:
    a = ctx.args
    G = ctx.group()
    ts = ctx.theta_star()
    theta = _vector(a.theta)
    if theta is None:
        raise UsageError("series needs --theta")
    sigma = ctx.pick(a.sigma, "sigma")
    terms = {str(ell): float(s_ell_batch(G, theta[None], ts, ell)[0]) for ell in range(1, a.lmax + 1)}
    payload: dict = {"theta": theta, "theta_star": ts, "terms": terms}
    if sigma is not None:
        payload["sigma"] = sigma
        payload["truncations"] = {str(k): float(truncated_batch(G, theta[None], ts, sigma, k)[0]) for k in range(1, a.lmax + 1)}
    write_json(ctx.out / "series.json", payload)
    return payload


def _weights_theta(w: SpectrumWeights) -> np.ndarray:
    """A reference signal with zero mean, real positive coefficients and the given squared moduli."""
    return theta_from_spectrum(0.0, np.sqrt(w.s), None if w.s_half is None else float(np.sqrt(w.s_half)))


def cmd_mra(ctx: Context) -> dict:
    a = ctx.args
    certificate = None
    if a.construct == "even":
        w, cert = spurious_even(a.d)
        certificate = cert.to_record()
    elif a.construct == "odd":
        w, cert = spurious_odd(a.m)
        certificate = cert.to_record()
    else:
        if a.s is None:
            raise UsageError("mra needs --s or --construct")
        w = SpectrumWeights.from_list(a.d, _floats(a.s))
    branches = [a.branch] if a.branch else (["+", "-"] if w.d % 2 == 0 else ["+"])
    survey = a.survey or ("none" if a.construct else "grid:12")
    kind, _, count = survey.partition(":")
    if survey != "none" and (kind not in ("grid", "random") or not count.isdigit()):
        raise UsageError(f"survey must be 'grid:N', 'random:N' or 'none', got {survey!r}")
    ref = _weights_theta(w)
    minima = {}
    rows = []
    for br in branches:
        if survey == "none":
            break
        grid, extra = (int(count), 0) if kind == "grid" else (0, int(count))
        found = phase_minimize(w, br, grid, ctx.seed, extra)
        minima[br] = [{"t": t, "theta": theta_from_phase(ref, t, br)} for t in found]
        rows += [[br, i, *t] for i, t in enumerate(found)]
    m = w.s.shape[0]
    write_csv(ctx.out / "mra_minima.csv", ["branch", "index"] + [f"t_{i + 1}" for i in range(m)], rows, ctx.meta(d=w.d, s=w.s, s_half=w.s_half))
    payload = {"d": w.d, "s": w.s, "s_half": w.s_half, "minima": minima, "certificate": certificate, "reference_theta": ref}
    write_json(ctx.out / "mra.json", payload)
    return payload


def cmd_repro(ctx: Context) -> dict:
    a = ctx.args
    kw = dict(seed=ctx.seed, threads=ctx.threads, plot=ctx.plots, gnuplot=ctx.gnuplot)
    if a.figure == "fig1":
        return repro.fig1(ctx.out, **kw)
    if a.figure == "fig2":
        return repro.fig2(
            ctx.out,
            n=ctx.pick(a.n, "n", 100_000),
            iters=ctx.pick(a.iters, "iters", 250),
            methods=ctx.pick(None, "methods", ["em", "gd", "agd"]),
            **kw,
        )
    n_default, starts_default = (1_000_000, 500) if a.full else (100_000, 100)
    sigmas = _floats(a.sigmas) or ctx.cfg.sigmas or list(repro.FIG4_SIGMAS)
    return repro.fig4(
        ctx.out,
        sigmas=sigmas,
        n=ctx.pick(a.n, "n", n_default),
        starts=ctx.pick(a.starts, "starts", starts_default),
        iters=ctx.pick(a.iters, "iters", 250),
        **kw,
    )


COMMANDS: dict[str, Callable[[Context], dict]] = {
    "generate": cmd_generate,
    "risk-eval": cmd_risk_eval,
    "optimize": cmd_optimize,
    "landscape": cmd_landscape,
    "fisher": cmd_fisher,
    "series": cmd_series,
    "mra": cmd_mra,
    "repro": cmd_repro,
}


def _global_options(suppress: bool) -> argparse.ArgumentParser:
    """Options accepted before or after the subcommand.

    The subcommand copy suppresses its defaults so values given before the
    subcommand are not overwritten.
    """
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS if suppress else None)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--threads", type=int, help="worker threads for data reductions")
    common.add_argument("--out", help="output directory (default out)")
    common.add_argument("--gnuplot", action="store_true", help="also write gnuplot scripts")
    common.add_argument("--no-plots", action="store_true", help="skip PNG rendering")
    common.add_argument("-v", "--verbose", action="store_true")
    if not suppress:
        common.set_defaults(out="out")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orbitlandscape", description=__doc__.splitlines()[0], parents=[_global_options(False)]
    )
    common = _global_options(True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="sample a synthetic dataset")
    p.add_argument("--group")
    p.add_argument("--theta-star")
    p.add_argument("--sigma", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--h-law", default="uniform")
    p.add_argument("--format", choices=["csv", "bin"], default="csv")
    p.add_argument("--data-out")

    p = sub.add_parser("risk-eval", parents=[common], help="empirical risk and derivatives at a point")
    p.add_argument("--data", required=True)
    p.add_argument("--group")
    p.add_argument("--theta", required=True)
    p.add_argument("--order", type=int, choices=range(5), default=1)

    p = sub.add_parser("optimize", parents=[common], help="run EM, GD or AGD on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--group")
    p.add_argument("--method", choices=["em", "gd", "agd"], default="agd")
    p.add_argument("--eta", default="auto")
    p.add_argument("--init", default="random:0")
    p.add_argument("--iters", type=int)
    p.add_argument("--grad-tol", type=float)
    p.add_argument("--record-every", type=int, default=1)
    p.add_argument("--orbit", action="append", default=[], help="reference vector for distance columns")
    p.add_argument("--trace-out")

    p = sub.add_parser("landscape", parents=[common], help="critical-point survey and basin fractions")
    p.add_argument("--data", required=True)
    p.add_argument("--group")
    p.add_argument("--starts", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--orbit", action="append", default=[], help="NAME=VECTOR registered orbit")

    p = sub.add_parser("fisher", parents=[common], help="Fisher information spectrum")
    p.add_argument("--group")
    p.add_argument("--theta-star")
    p.add_argument("--sigma", type=float)
    p.add_argument("--method", choices=["monte_carlo", "series", "quadrature"], default="monte_carlo")
    p.add_argument("--N", type=int, default=200_000)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--dims", help="band dimensions, e.g. 1,2,2")

    p = sub.add_parser("series", parents=[common], help="high-noise expansion terms")
    p.add_argument("--group")
    p.add_argument("--theta")
    p.add_argument("--theta-star")
    p.add_argument("--lmax", type=int, default=3)
    p.add_argument("--sigma", type=float)

    p = sub.add_parser("mra", parents=[common], help="Fourier phase surrogate analysis")
    p.add_argument("--d", type=int, default=6, help="signal length (default 6)")
    p.add_argument("--s", help="squared moduli s_1..s_|I| then s_{d/2} for even d")
    p.add_argument("--construct", choices=["even", "odd"], help="certified spurious-minimizer construction")
    p.add_argument("--m", type=int, default=26, help="size parameter of the odd construction (default 26)")
    p.add_argument("--branch", choices=["+", "-"], help="sign of the Nyquist coefficient for even d (default both)")
    p.add_argument("--survey", help="grid:N, random:N or none (default grid:12, none with --construct)")

    p = sub.add_parser("repro", parents=[common], help="reproduce a figure")
    p.add_argument("figure", choices=["fig1", "fig2", "fig4"], help="figure to reproduce")
    p.add_argument("--n", type=int, help="samples per dataset")
    p.add_argument("--iters", type=int, help="optimizer iterations")
    p.add_argument("--starts", type=int, help="random starts (fig4)")
    p.add_argument("--sigmas", help="comma-separated noise levels (fig4)")
    p.add_argument("--full", action="store_true", help="full-size fig4 (n=1e6, 500 starts)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "mra" and args.construct == "odd":
        args.d = 2 * args.m + 1
    try:
        ctx = Context(args)
        result = COMMANDS[args.command](ctx)
    except (UsageError, MRAError, *CONFIG_ERRORS) as exc:
        if isinstance(exc, CertificationError):
            log.error("numeric failure: %s", exc)
            return EXIT_NUMERIC
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    keys = ", ".join(sorted(result)) if isinstance(result, dict) else ""
    print(f"{args.command}: wrote outputs to {ctx.out} ({keys})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
