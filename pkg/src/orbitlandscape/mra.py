"""Cyclic-shift orbit recovery in Fourier coordinates.

The unitary transform ``v_k = d^{-1/2} sum_j exp(2 pi i j k / d) theta_j`` turns
cyclic shifts into phase rotations.  Restricted to the true power spectrum,
the cubic term of the high-noise expansion becomes a weighted sum of cosines
of the phases; its local minima predict the local minimizers of the risk.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

TWO_PI = 2.0 * np.pi
GRAD_TOL = 1e-9
DEDUP_TOL = 1e-4
GRID_CAP = 10**6


# smallest half-dimension for which the odd construction is certified to work
ODD_MIN_M = 26


class MRAError(ValueError):
    """Raised for invalid dimensions, branches, or vanishing reference coefficients."""


class CertificationError(MRAError):
    """Raised when a spurious-minimum construction fails its numeric certificate."""


def index_set(d: int) -> np.ndarray:
    """Frequencies ``1 .. floor((d - 1) / 2)`` carrying an independent complex coefficient."""
    return np.arange(1, (d - 1) // 2 + 1)


def dft(theta: Sequence[float]) -> np.ndarray:
    """All ``d`` unitary Fourier coefficients ``v_0 .. v_{d-1}``."""
    theta = np.asarray(theta, dtype=float)
    return np.sqrt(theta.shape[-1]) * np.fft.ifft(theta, axis=-1)


def idft(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dft`; the imaginary part is dropped."""
    v = np.asarray(v, dtype=complex)
    return np.real(np.fft.fft(v, axis=-1)) / np.sqrt(v.shape[-1])


def wrap(t: np.ndarray | float) -> np.ndarray:
    """Reduce angles to ``[0, 2 pi)``."""
    out = np.mod(t, TWO_PI)
    return np.where(out >= TWO_PI, out - TWO_PI, out)


def circle_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = np.abs(wrap(np.asarray(a) - np.asarray(b)))
    return np.minimum(diff, TWO_PI - diff)


@dataclass(frozen=True)
class FourierCoords:
    d: int
    v0: float
    v: np.ndarray
    v_half: float | None
    r: np.ndarray
    t: np.ndarray


def fourier(theta: Sequence[float], theta_star: Sequence[float] | None = None) -> FourierCoords:
    """Fourier coordinates of ``theta`` with phases measured from those of ``theta_star``."""
    theta = np.asarray(theta, dtype=float)
    d = theta.shape[0]
    idx = index_set(d)
    v_all = dft(theta)
    v = v_all[idx]
    ref = np.ones(len(idx), dtype=complex)
    if theta_star is not None:
        ref = dft(theta_star)[idx]
        bad = np.flatnonzero(np.abs(ref) < 1e-12)
        if bad.size:
            raise MRAError(f"reference Fourier coefficient v_{int(idx[bad[0]])} vanishes")
    t = wrap(np.angle(v) - np.angle(ref))
    v_half = float(v_all[d // 2].real) if d % 2 == 0 else None
    return FourierCoords(d, float(v_all[0].real), v, v_half, np.abs(v), t)


def inv_fourier(coords: FourierCoords) -> np.ndarray:
    """Rebuild the real vector from coordinates via conjugate symmetry."""
    d = coords.d
    full = np.zeros(d, dtype=complex)
    full[0] = coords.v0
    idx = index_set(d)
    full[idx] = coords.v
    full[d - idx] = np.conj(coords.v)
    if d % 2 == 0:
        full[d // 2] = coords.v_half
    return idft(full)


def theta_from_spectrum(v0: float, v: Sequence[complex], v_half: float | None = None) -> np.ndarray:
    d = 2 * len(v) + (1 if v_half is None else 2)
    v = np.asarray(v, dtype=complex)
    return inv_fourier(FourierCoords(d, v0, v, v_half, np.abs(v), np.zeros(len(v))))


def example_theta_star() -> np.ndarray:
    """``d = 6`` signal with zero mean and real positive moduli ``(1, 2, 1)``."""
    return theta_from_spectrum(0.0, [1.0, 2.0], 1.0)


@dataclass(frozen=True)
class SpectrumWeights:
    """Squared reference moduli ``s_i`` for ``i`` in the index set, plus ``s_{d/2}`` if ``d`` is even."""

    d: int
    s: np.ndarray
    s_half: float | None = None

    def __post_init__(self) -> None:
        s = np.asarray(self.s, dtype=float)
        if s.shape != (len(index_set(self.d)),):
            raise MRAError(f"need {len(index_set(self.d))} weights for d={self.d}")
        if (self.d % 2 == 0) != (self.s_half is not None):
            raise MRAError("s_half is required exactly when d is even")
        if np.any(s < 0) or (self.s_half is not None and self.s_half < 0):
            raise MRAError("spectrum weights must be nonnegative")
        object.__setattr__(self, "s", s)

    @classmethod
    def from_theta(cls, theta_star: Sequence[float]) -> "SpectrumWeights":
        c = fourier(theta_star)
        return cls(c.d, c.r**2, None if c.v_half is None else c.v_half**2)

    @classmethod
    def from_list(cls, d: int, values: Sequence[float]) -> "SpectrumWeights":
        """Weights ordered ``s_1 .. s_{|I|}`` followed by ``s_{d/2}`` for even ``d``."""
        values = [float(x) for x in values]
        m = len(index_set(d))
        if len(values) != m + (d % 2 == 0):
            raise MRAError(f"d={d} needs {m + (d % 2 == 0)} weights, got {len(values)}")
        return cls(d, np.array(values[:m]), values[m] if d % 2 == 0 else None)


@dataclass(frozen=True)
class PhaseTerms:
    """``F(t) = sum_j coef_j cos(freq_j . t)`` with integer frequency rows."""

    coef: np.ndarray
    freq: np.ndarray


def _signed(idx: np.ndarray) -> list[int]:
    return [int(i) for i in idx] + [-int(i) for i in idx]


def phase_terms(w: SpectrumWeights, branch: str = "+") -> PhaseTerms:
    """Cosine expansion of the phase surrogate for one branch.

    Triples ``i + j + k = 0 mod d`` over signed frequencies carry weight
    ``-s_i s_j s_k / 6``; for even ``d`` the pairs ``i + j = d/2 mod d`` carry
    ``-/+ s_i s_j s_{d/2} / 2`` on the ``+`` and ``-`` branches.
    """
    d = w.d
    if branch not in ("+", "-"):
        raise MRAError(f"branch must be '+' or '-', got {branch!r}")
    if branch == "-" and d % 2:
        raise MRAError("the '-' branch exists only for even d")
    idx = index_set(d)
    m = len(idx)
    weight = {int(i): w.s[k] for k, i in enumerate(idx)}
    acc: dict[tuple[int, ...], float] = {}

    def add(sign_idx: Sequence[int], c: float) -> None:
        a = [0] * m
        for q in sign_idx:
            a[abs(q) - 1] += 1 if q > 0 else -1
        # cos is even, so a and -a are merged on a canonical sign
        nz = next((x for x in a if x != 0), 0)
        if nz < 0:
            a = [-x for x in a]
        key = tuple(a)
        acc[key] = acc.get(key, 0.0) + c

    signed = _signed(idx)
    for i, j, k in itertools.product(signed, repeat=3):
        if (i + j + k) % d == 0:
            add((i, j, k), -weight[abs(i)] * weight[abs(j)] * weight[abs(k)] / 6.0)
    if d % 2 == 0:
        sgn = 1.0 if branch == "+" else -1.0
        for i, j in itertools.product(signed, repeat=2):
            if (i + j - d // 2) % d == 0:
                add((i, j), -sgn * 0.5 * weight[abs(i)] * weight[abs(j)] * w.s_half)
    keys = sorted(acc)
    coef = np.array([acc[k] for k in keys])
    freq = np.array(keys, dtype=float).reshape(len(keys), m)
    return PhaseTerms(coef, freq)


@dataclass
class PhaseEval:
    value: float
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None


def F_pm(w: SpectrumWeights, t: Sequence[float], branch: str = "+", order: int = 2, terms: PhaseTerms | None = None) -> PhaseEval:
    """Phase surrogate value with analytic gradient and Hessian."""
    terms = terms or phase_terms(w, branch)
    t = np.asarray(t, dtype=float)
    arg = terms.freq @ t
    cos = np.cos(arg)
    out = PhaseEval(float(terms.coef @ cos))
    if order >= 1:
        out.grad = -(terms.coef * np.sin(arg)) @ terms.freq
    if order >= 2:
        out.hess = -np.einsum("j,ja,jb->ab", terms.coef * cos, terms.freq, terms.freq)
    return out


def critical_family(d: int, a: int, variant: str = "plus") -> np.ndarray:
    """Phases ``2 pi a i / d`` over the index set; ``minus`` adds ``pi`` to the first phase."""
    if not 0 <= a < d:
        raise MRAError(f"family index a must be in 0..{d - 1}, got {a}")
    if variant not in ("plus", "minus"):
        raise MRAError(f"variant must be 'plus' or 'minus', got {variant!r}")
    if variant == "minus" and d % 2 == 0:
        raise MRAError("the minus family is defined only for odd d")
    t = wrap(TWO_PI * a * index_set(d) / d)
    if variant == "minus":
        t[0] = wrap(t[0] + np.pi)
    return t


def theta_from_phase(theta_star: Sequence[float], t: Sequence[float], half_sign: str = "+") -> np.ndarray:
    """Vector sharing the power spectrum and mean of ``theta_star`` with phases shifted by ``t``."""
    ref = fourier(theta_star, theta_star)
    v = ref.v * np.exp(1j * np.asarray(t, dtype=float))
    v_half = ref.v_half
    if v_half is not None and half_sign == "-":
        v_half = -v_half
    return inv_fourier(FourierCoords(ref.d, ref.v0, v, v_half, np.abs(v), np.asarray(t, dtype=float)))


@dataclass
class Certificate:
    passed: bool
    points: list[dict] = field(default_factory=list)
    attempts: int = 1

    def to_record(self) -> dict:
        return {"passed": self.passed, "attempts": self.attempts, "points": self.points}


def certify(w: SpectrumWeights, families: Sequence[tuple[str, str]]) -> Certificate:
    """Check stationarity and positive curvature of each branch at each family member.

    ``families`` lists ``(variant, branch)`` pairs; every ``a`` in ``0..d-1`` is checked.
    """
    pts: list[dict] = []
    ok = True
    for variant, branch in families:
        terms = phase_terms(w, branch)
        for a in range(w.d):
            t = critical_family(w.d, a, variant)
            ev = F_pm(w, t, branch, terms=terms)
            eig = np.linalg.eigvalsh(ev.hess)
            gnorm = float(np.abs(ev.grad).max())
            pos = bool(eig[0] > 1e-10 * max(np.trace(ev.hess), 1e-300))
            good = gnorm <= GRAD_TOL and pos
            ok &= good
            pts.append(
                {"variant": variant, "branch": branch, "a": a, "grad_max": gnorm, "min_eig": float(eig[0]), "ok": good}
            )
    return Certificate(ok, pts)


def spurious_even(d: int, s_last: float = 0.1, max_halvings: int = 20) -> tuple[SpectrumWeights, Certificate]:
    """Weights ``s_i = 1`` with small ``s_{d/2}`` making every ``t^a`` a strict minimum of both branches."""
    if d % 2 or d < 6:
        raise MRAError(f"even construction needs even d >= 6, got {d}")
    m = len(index_set(d))
    for attempt in range(max_halvings + 1):
        w = SpectrumWeights(d, np.ones(m), s_last)
        cert = certify(w, [("plus", "+"), ("plus", "-")])
        cert.attempts = attempt + 1
        if cert.passed:
            return w, cert
        s_last /= 2
    raise CertificationError(f"even construction failed to certify for d={d}")


def spurious_odd(m: int, eps: float = 0.01, delta: float = 0.01, max_halvings: int = 10) -> tuple[SpectrumWeights, Certificate]:
    """Weights for ``d = 2m + 1`` making the shifted family ``t^{a,-}`` strict minima of ``F``."""
    if m < ODD_MIN_M:
        raise MRAError(f"odd construction needs m >= {ODD_MIN_M}, got {m}")
    d = 2 * m + 1
    s1 = math.sqrt(m) / 2
    for attempt in range(max_halvings + 1):
        s = np.ones(m)
        s[0] = s1
        s[1] = (2 * m - 5) / (2 * s1) + eps
        s[2] = delta
        w = SpectrumWeights(d, s)
        cert = certify(w, [("minus", "+")])
        cert.attempts = attempt + 1
        if cert.passed:
            return w, cert
        delta /= 2
    raise CertificationError(f"odd construction failed to certify for m={m}")


def dedup_phases(points: Sequence[np.ndarray], tol: float = DEDUP_TOL) -> list[np.ndarray]:
    kept: list[np.ndarray] = []
    for p in points:
        if not any(circle_distance(p, q).max() <= tol for q in kept):
            kept.append(p)
    return kept


def phase_minimize(
    w: SpectrumWeights,
    branch: str = "+",
    grid_per_axis: int = 12,
    seed: int = 0,
    random_starts: int = 0,
) -> list[np.ndarray]:
    """Survey local minima of one surrogate branch on the torus.

    Starts are a regular grid (offset by a seeded sub-cell shift so no start sits
    on a symmetric critical point) plus optional uniform random starts.  Each
    start is refined by a trust-region Newton method; only points with gradient
    below ``1e-9`` and positive-definite Hessian are kept, deduplicated modulo
    ``2 pi`` and sorted lexicographically.
    """
    terms = phase_terms(w, branch)
    m = terms.freq.shape[1]
    rng = np.random.default_rng(seed)
    starts: list[np.ndarray] = []
    if grid_per_axis > 0:
        if grid_per_axis**m > GRID_CAP:
            raise MRAError(f"grid of {grid_per_axis}^{m} points exceeds the cap")
        offset = rng.uniform(0.1, 0.4, size=m) * TWO_PI / grid_per_axis
        axis = np.arange(grid_per_axis) * TWO_PI / grid_per_axis
        starts.extend(np.array(p) + offset for p in itertools.product(axis, repeat=m))
    starts.extend(rng.uniform(0, TWO_PI, size=(random_starts, m)))
    fun = lambda t: F_pm(w, t, branch, 0, terms).value  # noqa: E731
    jac = lambda t: F_pm(w, t, branch, 1, terms).grad  # noqa: E731
    hess = lambda t: F_pm(w, t, branch, 2, terms).hess  # noqa: E731
    found: list[np.ndarray] = []
    for t0 in starts:
        res = minimize(fun, t0, jac=jac, hess=hess, method="trust-exact", options={"gtol": 1e-12})
        t = wrap(res.x)
        ev = F_pm(w, t, branch, 2, terms)
        if np.abs(ev.grad).max() <= GRAD_TOL and np.linalg.eigvalsh(ev.hess)[0] > 0:
            found.append(t)
    minima = dedup_phases(found)
    # snap representatives numerically equal to 2 pi back to 0 before sorting
    minima = [np.where(TWO_PI - p < DEDUP_TOL, 0.0, p) for p in minima]
    return sorted(minima, key=lambda p: tuple(np.round(p, 6)))


def s3_phase_part(theta: Sequence[float], theta_star: Sequence[float]) -> float:
    """Phase-dependent part of the cubic series term for the cyclic group.

    ``-(1/6) Re sum_{i+j+k = 0 mod d} w_i w_j w_k`` over nonzero frequencies,
    with ``w_k = v_k(theta) conj(v_k(theta_star))``.
    """
    v = dft(theta)
    vs = dft(theta_star)
    d = v.shape[0]
    wk = v * np.conj(vs)
    wk[0] = 0.0
    total = 0.0 + 0.0j
    for i in range(1, d):
        for j in range(1, d):
            k = (-i - j) % d
            if k:
                total += wk[i] * wk[j] * wk[k]
    return float(-total.real / 6.0)
