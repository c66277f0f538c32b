"""Invariant coordinate charts and the chain rule between parameter and chart coordinates.

Three charts are provided:

``polar2``
    radius and angle relative to the reference, for planar rotations.
``power_sums``
    normalised power sums ``p_k = mean_j theta_j^k``, ``k = 1..d``, for permutations.
``fourier_mra``
    Fourier mean, moduli, the real Nyquist coefficient (even ``d``) and phases
    relative to the reference, for cyclic shifts.

``identity`` is included for testing the pull-back machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mra import dft, index_set, wrap

COND_MAX = 1e8
KINDS = ("identity", "polar2", "power_sums", "fourier_mra")


class ChartError(ValueError):
    """Raised when a point lies outside a chart's domain or its Jacobian is singular."""


@dataclass(frozen=True)
class Chart:
    kind: str
    reference: np.ndarray = field(repr=False)
    group_order: int = 0
    cond_max: float = COND_MAX

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ChartError(f"unknown chart kind {self.kind!r}")
        ref = np.array(self.reference, dtype=float, copy=True)
        ref.setflags(write=False)
        object.__setattr__(self, "reference", ref)
        if self.kind == "polar2" and ref.shape != (2,):
            raise ChartError("polar2 chart needs a planar reference")

    @property
    def d(self) -> int:
        return self.reference.shape[0]

    def bands(self) -> list[int]:
        """Degree band of each chart coordinate."""
        d = self.d
        if self.kind == "identity":
            return [1] * d
        if self.kind == "polar2":
            return [2, self.group_order]
        if self.kind == "power_sums":
            return list(range(1, d + 1))
        m = len(index_set(d))
        return [1] + [2] * m + ([2] if d % 2 == 0 else []) + [3] * m


@dataclass(frozen=True)
class ChartPoint:
    phi: np.ndarray
    jacobian: np.ndarray
    hessians: np.ndarray


def _polar(theta: np.ndarray, ref: np.ndarray) -> ChartPoint:
    r2 = float(theta @ theta)
    if r2 < 1e-24:
        raise ChartError("polar2 chart undefined at zero radius (coordinate 0)")
    rho = np.sqrt(r2)
    x, y = theta
    t = wrap(np.arctan2(y, x) - np.arctan2(ref[1], ref[0]))
    J = np.array([theta / rho, np.array([-y, x]) / r2])
    H_rho = (np.eye(2) - np.outer(theta, theta) / r2) / rho
    H_t = np.array([[2 * x * y, y * y - x * x], [y * y - x * x, -2 * x * y]]) / r2**2
    return ChartPoint(np.array([rho, float(t)]), J, np.stack([H_rho, H_t]))


def _power_sums(theta: np.ndarray) -> ChartPoint:
    d = theta.shape[0]
    order = np.argsort(theta, kind="stable")
    gaps = np.diff(theta[order])
    tol = 1e-12 * max(1.0, float(np.abs(theta).max()))
    if np.any(gaps <= tol):
        i = int(np.flatnonzero(gaps <= tol)[0])
        raise ChartError(f"power_sums chart undefined: entries {order[i]} and {order[i + 1]} coincide")
    k = np.arange(1, d + 1)
    powers = theta[None, :] ** (k[:, None] - 1)
    phi = (powers * theta[None, :]).mean(axis=1)
    J = k[:, None] / d * powers
    H = np.zeros((d, d, d))
    for row, kk in enumerate(k):
        if kk >= 2:
            H[row] = np.diag(kk * (kk - 1) / d * theta ** (kk - 2))
    return ChartPoint(phi, J, H)


def _fourier(theta: np.ndarray, ref: np.ndarray) -> ChartPoint:
    d = theta.shape[0]
    idx = index_set(d)
    v = dft(theta)
    vref = dft(ref)
    j = np.arange(d)
    rows_phi: list[float] = [v[0].real]
    rows_J: list[np.ndarray] = [np.full(d, 1 / np.sqrt(d))]
    rows_H: list[np.ndarray] = [np.zeros((d, d))]
    phase_phi, phase_J, phase_H = [], [], []
    for k in idx:
        if abs(v[k]) < 1e-12:
            raise ChartError(f"fourier_mra chart undefined: coefficient v_{k} vanishes")
        if abs(vref[k]) < 1e-12:
            raise ChartError(f"fourier_mra chart undefined: reference coefficient v_{k} vanishes")
        c = np.exp(2j * np.pi * j * k / d) / np.sqrt(d)
        q = c / v[k]
        outer = -np.outer(c, c) / v[k] ** 2
        r = abs(v[k])
        rows_phi.append(r)
        rows_J.append(r * q.real)
        rows_H.append(r * (np.outer(q.real, q.real) + outer.real))
        phase_phi.append(float(wrap(np.angle(v[k]) - np.angle(vref[k]))))
        phase_J.append(q.imag)
        phase_H.append(outer.imag)
    if d % 2 == 0:
        rows_phi.append(v[d // 2].real)
        rows_J.append((-1.0) ** j / np.sqrt(d))
        rows_H.append(np.zeros((d, d)))
    phi = np.array(rows_phi + phase_phi)
    return ChartPoint(phi, np.array(rows_J + phase_J), np.array(rows_H + phase_H))


def chart_eval(chart: Chart, theta: Sequence[float], check: bool = True) -> ChartPoint:
    """Coordinates, Jacobian ``d phi / d theta`` and per-coordinate Hessians at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (chart.d,):
        raise ChartError(f"theta must have length {chart.d}")
    if chart.kind == "identity":
        pt = ChartPoint(theta.copy(), np.eye(chart.d), np.zeros((chart.d,) * 3))
    elif chart.kind == "polar2":
        pt = _polar(theta, chart.reference)
    elif chart.kind == "power_sums":
        pt = _power_sums(theta)
    else:
        pt = _fourier(theta, chart.reference)
    if check:
        cond = np.linalg.cond(pt.jacobian)
        if not np.isfinite(cond) or cond > chart.cond_max:
            raise ChartError(f"{chart.kind} Jacobian condition number {cond:.3g} exceeds {chart.cond_max:.0e}")
    return pt


def pullback(
    chart: Chart, theta: Sequence[float], grad: np.ndarray, hess: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray | None]:
    """Gradient and Hessian in chart coordinates from those in ``theta`` coordinates."""
    pt = chart_eval(chart, theta)
    try:
        grad_phi = np.linalg.solve(pt.jacobian.T, np.asarray(grad, dtype=float))
    except np.linalg.LinAlgError:
        raise ChartError("singular chart Jacobian") from None
    if hess is None:
        return grad_phi, None
    Jinv = np.linalg.inv(pt.jacobian)
    inner = np.asarray(hess, dtype=float) - np.einsum("i,ijk->jk", grad_phi, pt.hessians)
    hess_phi = Jinv.T @ inner @ Jinv
    return grad_phi, (hess_phi + hess_phi.T) / 2


def _power_sums_inverse(phi: np.ndarray, hint: np.ndarray) -> np.ndarray:
    d = phi.shape[0]
    sums = d * phi
    # Newton identities: k e_k = sum_{i=1}^k (-1)^{i-1} e_{k-i} P_i
    e = [1.0]
    for k in range(1, d + 1):
        e.append(sum((-1) ** (i - 1) * e[k - i] * sums[i - 1] for i in range(1, k + 1)) / k)
    coeffs = [(-1) ** k * e[k] for k in range(d + 1)]
    roots = np.roots(coeffs)
    if np.abs(roots.imag).max(initial=0.0) > 1e-6 * max(1.0, np.abs(roots).max()):
        raise ChartError("power sums do not correspond to a real vector")
    roots = np.sort(roots.real)
    out = np.empty(d)
    out[np.argsort(hint, kind="stable")] = roots
    return out


def chart_inverse(chart: Chart, phi: Sequence[float], hint: Sequence[float] | None = None) -> np.ndarray:
    """``theta(phi)``.  For ``power_sums`` the entries follow the rank order of ``hint`` (default: the reference)."""
    phi = np.asarray(phi, dtype=float)
    if chart.kind == "identity":
        return phi.copy()
    if chart.kind == "polar2":
        angle = phi[1] + np.arctan2(chart.reference[1], chart.reference[0])
        return phi[0] * np.array([np.cos(angle), np.sin(angle)])
    if chart.kind == "power_sums":
        return _power_sums_inverse(phi, np.asarray(hint if hint is not None else chart.reference, dtype=float))
    d = chart.d
    m = len(index_set(d))
    vref = dft(chart.reference)[index_set(d)]
    v = np.zeros(d, dtype=complex)
    v[0] = phi[0]
    idx = index_set(d)
    coef = phi[1 : 1 + m] * np.exp(1j * (phi[-m:] + np.angle(vref))) if m else np.zeros(0)
    v[idx] = coef
    v[d - idx] = np.conj(coef)
    if d % 2 == 0:
        v[d // 2] = phi[1 + m]
    return np.real(np.fft.fft(v)) / np.sqrt(d)


def make_chart(kind: str, reference: Sequence[float], group_order: int = 0) -> Chart:
    return Chart(kind, np.asarray(reference, dtype=float), group_order)
