"""Stationary points of the phase <k, z> - lambda(k) and the localized oscillatory integral.

    I(t, z) = (2 pi)^{-d/2} int_{|k - k0| < 2} exp(i t (<k, z> - lambda(k))) g(k) (1 - eta^(k)) dk

with eta^ the annular cutoff (0 inside radius 1 around k0, 1 outside radius 2).
The leading stationary-phase term is

    t^{-d/2} |det Hess lambda(k0)|^{-1/2} exp(-i pi sig / 4) exp(i t phase(k0)) g(k0),

sig the signature of Hess lambda(k0).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .extension import ExtendedDispersion, KBox, annular_cutoff
from .geometry import LAMBDA_FLOOR, NewtonDivergence
from .operator import Criterion
from .potential import PotentialSpec

__all__ = [
    "OutsideRegion",
    "ResolutionGuard",
    "SingularHessian",
    "FreeDispersion",
    "local_dispersion",
    "PhasePoint",
    "stationary_point",
    "gaussian_g3",
    "oscillatory_integral",
    "asymptotic_leading",
    "StationaryRow",
    "rows_csv",
]

CSV_HEADER = "t,z_norm,numeric_re,numeric_im,leading_re,leading_im,relerr"


class OutsideRegion(ValueError):
    """|z|^2 does not exceed lambda_*."""


class ResolutionGuard(RuntimeError):
    """The quadrature cannot resolve the phase within the point budget."""


class SingularHessian(ValueError):
    pass


class FreeDispersion:
    """lambda(k) = |k|^2, vectorized over leading axes."""

    coupling = 0.0

    def lam(self, k):
        k = np.asarray(k, dtype=float)
        return np.einsum("...i,...i->...", k, k)

    def grad(self, k):
        return 2.0 * np.asarray(k, dtype=float)

    def hess(self, k):
        return 2.0 * np.eye(np.asarray(k).shape[-1])


def local_dispersion(
    spec: PotentialSpec,
    coupling: float,
    M: int,
    center,
    radius: float = 3.0,
    criterion: Criterion | None = None,
) -> ExtendedDispersion:
    """Selected-branch dispersion on a box of half-width ``radius`` around ``center``."""
    center = np.asarray(center, dtype=float)
    step = radius / 8
    lo = np.floor((center - radius) / step).astype(np.int64)
    box = KBox(step, lo, tuple([17] * center.shape[0]))
    return ExtendedDispersion(spec, coupling, M, box, criterion=criterion)


@dataclass
class PhasePoint:
    z: np.ndarray
    k0: np.ndarray
    hessian: np.ndarray
    residual: float
    iterations: int
    dispersion: object

    @property
    def d(self) -> int:
        return self.z.shape[0]

    def phase(self, k):
        k = np.asarray(k, dtype=float)
        return k @ self.z - _lam_many(self.dispersion, k)

    def localizer(self, k) -> np.ndarray:
        """eta^: 0 for |k - k0| <= 1, 1 for |k - k0| >= 2."""
        return annular_cutoff(np.asarray(k, dtype=float), self.k0, 1.0, 2.0)

    @property
    def offset(self) -> float:
        """||k0 - z/2||."""
        return float(np.linalg.norm(self.k0 - self.z / 2))


def _lam_many(disp, k: np.ndarray) -> np.ndarray:
    if isinstance(disp, FreeDispersion):
        return disp.lam(k)
    flat = k.reshape(-1, k.shape[-1])
    return np.array([disp.lam(p) for p in flat]).reshape(k.shape[:-1])


def stationary_point(
    z,
    dispersion=None,
    lambda_star: float = LAMBDA_FLOOR,
    tol: float = 1e-9,
    max_iter: int = 50,
) -> PhasePoint:
    """Newton for grad lambda(k) = z started at z / 2."""
    z = np.asarray(z, dtype=float)
    disp = dispersion if dispersion is not None else FreeDispersion()
    if not z @ z > lambda_star:
        raise OutsideRegion(f"|z|^2 = {z @ z:.4g} <= lambda_* = {lambda_star:.4g}")
    k = z / 2
    for it in range(max_iter + 1):
        r = disp.grad(k) - z
        res = float(np.linalg.norm(r))
        if res < tol:
            H = np.asarray(disp.hess(k), dtype=float)
            if abs(np.linalg.det(H)) < 1e-12:
                raise SingularHessian("Hessian of lambda is singular at the stationary point")
            return PhasePoint(z, k, H, res, it, disp)
        if not np.isfinite(res) or np.linalg.norm(k - z / 2) > 1.0:
            break
        k = k - np.linalg.solve(disp.hess(k), r)
    raise NewtonDivergence(f"no stationary point for z={z.tolist()} (residual {res:.3g})")


def gaussian_g3(center, width: float, amplitude: complex = 1.0) -> Callable:
    """g(k) = amplitude exp(-|k - center|^2 / width^2)."""
    center = np.asarray(center, dtype=float)

    def g(k):
        q = np.asarray(k, dtype=float) - center
        return amplitude * np.exp(-np.einsum("...i,...i->...", q, q) / width**2)

    return g


def _max_phase_gradient(point: PhasePoint) -> float:
    if isinstance(point.dispersion, FreeDispersion):
        return 4.0  # |z - 2k| = 2 |k - k0| on the disc of radius 2
    lam_max = np.abs(np.linalg.eigvalsh(point.hessian)).max()
    return 2.0 * lam_max * 1.25  # local quadratic model with a margin


def _midpoint(point: PhasePoint, t: float, g3: Callable, h: float, chunk: int) -> complex:
    d = point.d
    n = int(np.ceil(2.0 / h))
    offs = h * (np.arange(-n, n) + 0.5)
    total = 0.0 + 0.0j
    phase0 = point.k0 @ point.z - _lam_many(point.dispersion, point.k0[None, :])[0]
    if d == 2:
        for a in range(0, offs.size, chunk):
            qx = offs[a : a + chunk]
            q = np.stack(np.meshgrid(qx, offs, indexing="ij"), axis=-1)
            total += _chunk_sum(point, t, g3, q, phase0)
    else:
        for a in range(0, offs.size, max(1, chunk // offs.size)):
            qx = offs[a : a + max(1, chunk // offs.size)]
            q = np.stack(np.meshgrid(qx, offs, offs, indexing="ij"), axis=-1)
            total += _chunk_sum(point, t, g3, q, phase0)
    return complex(np.exp(1j * t * phase0) * total * h**d / (2 * np.pi) ** (d / 2))


def _chunk_sum(point, t, g3, q, phase0) -> complex:
    r2 = np.einsum("...i,...i->...", q, q)
    inside = r2 < 4.0
    if not inside.any():
        return 0.0
    q = q[inside]
    k = point.k0 + q
    w = 1.0 - annular_cutoff(k, point.k0, 1.0, 2.0)
    # phase measured from phase(k0) keeps the exponent small at large t
    dphase = q @ point.z - (_lam_many(point.dispersion, k) - _lam_many(point.dispersion, point.k0[None, :])[0])
    return complex(np.sum(np.exp(1j * t * dphase) * g3(k) * w))


def oscillatory_integral(
    t: float,
    point: PhasePoint,
    g3: Callable,
    rtol: float = 1e-6,
    max_halvings: int = 4,
    max_points: float = 4e8,
    chunk: int = 256,
) -> tuple[complex, float]:
    """Midpoint quadrature of I(t, z) with step halving; returns (value, error estimate).

    The first step satisfies step * t * max|grad phase| < 0.5 on the disc.
    Refinement stops when two successive values agree to ``rtol``.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    h = 0.45 / (t * _max_phase_gradient(point))
    prev = None
    for _ in range(max_halvings + 1):
        if (4.0 / h) ** point.d > max_points:
            raise ResolutionGuard(f"step {h:.3g} needs more than {max_points:.3g} points")
        val = _midpoint(point, t, g3, h, chunk)
        if prev is not None:
            err = abs(val - prev)
            scale = max(abs(val), 1e-300)
            if err <= rtol * scale or err == 0.0:
                return val, err
        prev = val
        h /= 2
    raise ResolutionGuard(f"step halving did not reach rtol={rtol} (last change {err:.3g})")


def asymptotic_leading(t: float, point: PhasePoint, g3: Callable) -> complex:
    H = point.hessian
    ev = np.linalg.eigvalsh(H)
    if np.min(np.abs(ev)) < 1e-12:
        raise SingularHessian("Hessian of lambda is singular at the stationary point")
    sig = int(np.sum(ev > 0) - np.sum(ev < 0))
    det = float(np.prod(np.abs(ev)))
    phase0 = float(point.phase(point.k0[None, :])[0])
    g0 = complex(np.asarray(g3(point.k0[None, :])).reshape(-1)[0])
    return complex(t ** (-point.d / 2) * det**-0.5 * np.exp(-1j * np.pi * sig / 4) * np.exp(1j * t * phase0) * g0)


@dataclass
class StationaryRow:
    t: float
    z_norm: float
    numeric: complex
    leading: complex

    @property
    def relerr(self) -> float:
        return abs(self.numeric - self.leading) / abs(self.leading) if self.leading != 0 else np.inf

    def csv(self) -> str:
        n, l = self.numeric, self.leading
        return f"{self.t!r},{self.z_norm!r},{n.real!r},{n.imag!r},{l.real!r},{l.imag!r},{self.relerr!r}"


def rows_csv(rows: list[StationaryRow]) -> str:
    return "\n".join([CSV_HEADER] + [r.csv() for r in rows]) + "\n"
