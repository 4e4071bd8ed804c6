"""Periodic spatial grids, demodulated fields and the Gaussian family.

A field on an :class:`XGrid` is stored as an envelope: the physical value is
``values * exp(i <carrier, x>)`` with the carrier a reciprocal-lattice vector
of the box. Fast-moving packets are then resolved with a coarse grid, and a
grid can be re-centred (co-moving box) without touching the physics.

Fourier convention throughout: F^(p) = (2 pi)^{-d/2} int F(x) exp(-i p.x) dx.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft

__all__ = ["XGrid", "FieldState", "GaussianPacket", "NyquistViolation"]


class NyquistViolation(ValueError):
    """A wave-vector component falls outside the band resolved by the grid."""


@dataclass(frozen=True, eq=False)
class XGrid:
    """Uniform periodic grid with N^d points on a box of side L.

    Points are ``center + (i - N/2) h`` per axis. The reciprocal lattice is
    dk * Z^d with dk = 2 pi / L; ``carrier_index`` J selects the carrier
    dk * J around which the grid band [-pi/h, pi/h)^d is centred.
    """

    N: int
    L: float
    d: int = 2
    center: np.ndarray = field(default=None)
    carrier_index: np.ndarray = field(default=None)

    def __post_init__(self):
        c = np.zeros(self.d) if self.center is None else np.asarray(self.center, dtype=float).reshape(self.d)
        J = np.zeros(self.d, dtype=np.int64) if self.carrier_index is None else np.asarray(self.carrier_index, dtype=np.int64).reshape(self.d)
        if self.N < 2 or self.N % 2:
            raise ValueError("N must be an even integer >= 2")
        if self.L <= 0:
            raise ValueError("L must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "carrier_index", J)

    @classmethod
    def around(cls, N: int, L: float, d: int, carrier=None, center=None) -> "XGrid":
        """Grid whose carrier is the reciprocal-lattice point nearest ``carrier``."""
        J = None
        if carrier is not None:
            J = np.rint(np.asarray(carrier, dtype=float) * L / (2 * np.pi)).astype(np.int64)
        return cls(N, L, d, center, J)

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def dk(self) -> float:
        return 2 * np.pi / self.L

    @property
    def carrier(self) -> np.ndarray:
        return self.dk * self.carrier_index

    @property
    def nyquist(self) -> float:
        return np.pi / self.h

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def moved(self, center) -> "XGrid":
        return replace(self, center=np.asarray(center, dtype=float))

    def axis(self, i: int) -> np.ndarray:
        return self.center[i] + (np.arange(self.N) - self.N // 2) * self.h

    def coords(self) -> list[np.ndarray]:
        """Broadcastable per-axis coordinates (open mesh)."""
        return list(np.meshgrid(*[self.axis(i) for i in range(self.d)], indexing="ij", sparse=True))

    def plane_wave(self, q) -> np.ndarray:
        """exp(i <q, x>) on the grid, built from per-axis factors."""
        q = np.asarray(q, dtype=float)
        out = np.ones((1,) * self.d, dtype=complex)
        for i, xi in enumerate(self.coords()):
            out = out * np.exp(1j * q[i] * xi)
        return out

    def radius2(self, origin=None) -> np.ndarray:
        origin = np.zeros(self.d) if origin is None else np.asarray(origin, dtype=float)
        out = 0.0
        for i, xi in enumerate(self.coords()):
            out = out + (xi - origin[i]) ** 2
        return out

    def band_offsets(self, cells: np.ndarray) -> np.ndarray:
        """Offsets m = j - J of absolute lattice indices j from the carrier."""
        return np.asarray(cells, dtype=np.int64) - self.carrier_index

    def check_band(self, q: np.ndarray, what: str = "wave vector") -> None:
        """Raise if any row of q (absolute wave vectors) is outside the band."""
        q = np.atleast_2d(q)
        rel = np.abs(q - self.carrier[None, :]).max(axis=1)
        worst = float(rel.max()) if rel.size else 0.0
        if worst >= self.nyquist:
            raise NyquistViolation(f"{what} offset {worst:.3f} from carrier exceeds grid Nyquist {self.nyquist:.3f}")

    # Spectral synthesis/analysis between lattice coefficients and the envelope.
    def synthesize(self, cells: np.ndarray, amps: np.ndarray) -> np.ndarray:
        """Envelope of sum_j amps_j exp(i dk j.x), j absolute lattice indices."""
        m = self.band_offsets(cells)
        if m.size and np.abs(m).max() >= self.N // 2:
            raise NyquistViolation("lattice cell outside the grid band")
        phase = np.exp(1j * self.dk * (m @ self.center)) * np.where(m.sum(axis=1) % 2, -1.0, 1.0)
        A = np.zeros(self.shape, dtype=complex)
        np.add.at(A, tuple((m % self.N).T), amps * phase)
        return sfft.ifftn(A, norm="forward")

    def analyze(self, env: np.ndarray, cells: np.ndarray) -> np.ndarray:
        """sum_x env(x) exp(-i dk (j - J).x) at the lattice cells j."""
        m = self.band_offsets(cells)
        if m.size and np.abs(m).max() >= self.N // 2:
            raise NyquistViolation("lattice cell outside the grid band")
        spec = sfft.fftn(env)
        phase = np.exp(-1j * self.dk * (m @ self.center)) * np.where(m.sum(axis=1) % 2, -1.0, 1.0)
        return spec[tuple((m % self.N).T)] * phase

    def kinetic(self) -> np.ndarray:
        """|carrier + p|^2 on the FFT frequency layout of the envelope."""
        p = sfft.fftfreq(self.N, d=self.h) * 2 * np.pi
        out = 0.0
        for i in range(self.d):
            shape = [1] * self.d
            shape[i] = self.N
            out = out + ((self.carrier[i] + p).reshape(shape)) ** 2
        return out


@dataclass(eq=False)
class FieldState:
    """Complex field on an XGrid at time t (envelope representation)."""

    values: np.ndarray
    grid: XGrid
    t: float = 0.0

    def physical(self) -> np.ndarray:
        return self.values * self.grid.plane_wave(self.grid.carrier)

    def norm(self) -> float:
        return float(np.sqrt(self.grid.cell_volume * np.sum(np.abs(self.values) ** 2)))

    def inner(self, other: "FieldState") -> complex:
        """<self, other> = int conj(self) other dx; grids must coincide."""
        if not _same_frame(self.grid, other.grid):
            raise ValueError("fields live on different grids")
        return complex(self.grid.cell_volume * np.vdot(self.values, other.values))

    def distance(self, other: "FieldState") -> float:
        if not _same_frame(self.grid, other.grid):
            raise ValueError("fields live on different grids")
        return float(np.sqrt(self.grid.cell_volume * np.sum(np.abs(self.values - other.values) ** 2)))


def _same_frame(a: XGrid, b: XGrid) -> bool:
    return (
        a.N == b.N
        and a.L == b.L
        and a.d == b.d
        and np.array_equal(a.center, b.center)
        and np.array_equal(a.carrier_index, b.carrier_index)
    )


@dataclass(frozen=True, eq=False)
class GaussianPacket:
    """F(x) = amplitude * exp(-|x - x0|^2 / (4 s^2)) * exp(i <k0, x>).

    ``s`` is the per-axis standard deviation of |F|^2; the momentum density
    |F^|^2 has per-axis standard deviation 1/(2s).
    """

    k0: np.ndarray
    s: float
    x0: np.ndarray = None
    amplitude: float = 1.0

    def __post_init__(self):
        k0 = np.asarray(self.k0, dtype=float).reshape(-1)
        object.__setattr__(self, "k0", k0)
        x0 = np.zeros_like(k0) if self.x0 is None else np.asarray(self.x0, dtype=float).reshape(-1)
        object.__setattr__(self, "x0", x0)
        if self.s <= 0:
            raise ValueError("width must be positive")

    @property
    def d(self) -> int:
        return self.k0.shape[0]

    @property
    def momentum_std(self) -> float:
        return 0.5 / self.s

    def norm2(self) -> float:
        return self.amplitude**2 * (2 * np.pi * self.s**2) ** (self.d / 2)

    def hat(self, p) -> np.ndarray:
        """Closed-form transform at wave vectors p of shape (..., d)."""
        q = np.asarray(p, dtype=float) - self.k0
        pref = self.amplitude * (2 * self.s**2) ** (self.d / 2)
        return pref * np.exp(-(self.s**2) * np.sum(q * q, axis=-1) - 1j * (q @ self.x0))

    def free_evolve(self, grid: XGrid, t: float) -> np.ndarray:
        """Envelope of exp(i t Delta) F on ``grid``."""
        a = self.s**2 + 1j * t
        pref = self.amplitude * (self.s**2 / a) ** (self.d / 2)
        shifted = grid.radius2(self.x0 + 2 * t * self.k0)
        phase = np.ones((1,) * self.d, dtype=complex)
        for i, xi in enumerate(grid.coords()):
            phase = phase * np.exp(1j * (self.k0[i] - grid.carrier[i]) * xi)
        return pref * np.exp(-shifted / (4 * a)) * phase * np.exp(-1j * t * float(self.k0 @ self.k0))

    def values(self, grid: XGrid) -> np.ndarray:
        """Envelope of F on ``grid``."""
        return self.free_evolve(grid, 0.0)

    def mass_outside(self, radius: float) -> float:
        """Fraction of |F^|^2 with |p - k0| > radius (chi-square tail)."""
        from scipy.stats import chi2

        return float(chi2.sf((radius / self.momentum_std) ** 2, df=self.d))
