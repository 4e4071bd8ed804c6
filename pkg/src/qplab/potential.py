"""Quasi-periodic potentials and frequency arithmetic on the lattice Z^l.

A potential is the finite trigonometric sum

    V(x) = sum_{0 < |n| <= Q} V_n exp(i <n.omega, x>),   n.omega = sum_j n_j omega_j,

with |n| the sup norm on Z^l and V_{-n} = conj(V_n), so V is real.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "FrequencyVector",
    "PotentialSpec",
    "HermitianityError",
    "sup_norm",
    "lattice_box",
    "sample_frequencies",
    "frequency_of",
    "diophantine_margin",
    "random_potential",
    "eval_potential",
]

HERMITIAN_TOL = 1e-14


class HermitianityError(ValueError):
    """Raised when a coefficient map violates V_{-n} = conj(V_n)."""


def sup_norm(n: Iterable[int]) -> int:
    return max((abs(int(v)) for v in n), default=0)


def lattice_box(M: int, l: int) -> np.ndarray:
    """All n in Z^l with |n| <= M, lexicographic order, shape ((2M+1)^l, l)."""
    axis = range(-M, M + 1)
    return np.array(list(itertools.product(axis, repeat=l)), dtype=np.int64).reshape(-1, l)


@dataclass(frozen=True)
class FrequencyVector:
    """Basic frequencies omega_1..omega_l in R^d, stored as an (l, d) array."""

    omega: np.ndarray

    def __post_init__(self):
        om = np.array(self.omega, dtype=float)
        if om.ndim != 2:
            raise ValueError("omega must be an (l, d) array")
        l, d = om.shape
        if d < 2:
            raise ValueError(f"spatial dimension must be >= 2, got d={d}")
        if l <= d:
            raise ValueError(f"need l > d basic frequencies, got l={l}, d={d}")
        if np.any(np.abs(om) > 0.5):
            raise ValueError("every frequency component must lie in [-1/2, 1/2]")
        om.setflags(write=False)
        object.__setattr__(self, "omega", om)

    @property
    def l(self) -> int:
        return self.omega.shape[0]

    @property
    def d(self) -> int:
        return self.omega.shape[1]

    def __eq__(self, other):
        return isinstance(other, FrequencyVector) and np.array_equal(self.omega, other.omega)

    def __hash__(self):
        return hash(self.omega.tobytes())


def sample_frequencies(seed: int, d: int, l: int) -> FrequencyVector:
    """Draw l basic frequencies uniformly from [-1/2, 1/2]^d."""
    if d < 2:
        raise ValueError(f"d must be >= 2, got {d}")
    if l <= d:
        raise ValueError(f"need l > d, got l={l}, d={d}")
    rng = np.random.default_rng(seed)
    return FrequencyVector(rng.uniform(-0.5, 0.5, size=(l, d)))


def frequency_of(n: Sequence[int] | np.ndarray, freq: FrequencyVector) -> np.ndarray:
    """The frequency n.omega = sum_j n_j omega_j.

    Accepts a single index of length l or a stack of shape (..., l).
    """
    n = np.asarray(n)
    if n.shape[-1] != freq.l:
        raise ValueError(f"lattice index has length {n.shape[-1]}, expected l={freq.l}")
    return n @ freq.omega


def diophantine_margin(freq: FrequencyVector, N: int, tau: float | None = None):
    """Finite-window small-divisor diagnostic.

    Returns ``(worst_n, margin)`` with margin = min over 0 < |n| <= N of
    |n.omega| * |n|^tau. A positive margin means no exact resonance in the
    window. ``tau`` defaults to l + 1.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if tau is None:
        tau = freq.l + 1.0
    if tau <= 0:
        raise ValueError("tau must be positive")
    box = lattice_box(N, freq.l)
    norms = np.abs(box).max(axis=1)
    box, norms = box[norms > 0], norms[norms > 0]
    vals = np.linalg.norm(box @ freq.omega, axis=1) * norms.astype(float) ** tau
    i = int(np.argmin(vals))
    return tuple(int(v) for v in box[i]), float(vals[i])


def _canonical(n: tuple[int, ...]) -> bool:
    """True for the representative of {n, -n} whose first nonzero entry is positive."""
    for v in n:
        if v:
            return v > 0
    return False


@dataclass(frozen=True)
class PotentialSpec:
    """Fourier data of a real quasi-periodic potential.

    ``coeffs`` maps lattice indices (tuples of length l) to complex amplitudes.
    Both members of each +-n pair are stored; construction checks Hermitian
    symmetry, the support bound |n| <= Q and V_0 = 0. The overall coupling is
    applied by consumers, not stored here.
    """

    freq: FrequencyVector
    Q: int
    coeffs: Mapping[tuple[int, ...], complex] = field(default_factory=dict)

    def __post_init__(self):
        if self.Q < 1:
            raise ValueError("Q must be a positive integer")
        clean: dict[tuple[int, ...], complex] = {}
        for n, v in self.coeffs.items():
            n = tuple(int(a) for a in n)
            if len(n) != self.freq.l:
                raise ValueError(f"index {n} has wrong length, expected l={self.freq.l}")
            if sup_norm(n) > self.Q:
                raise ValueError(f"index {n} lies outside |n| <= Q={self.Q}")
            if sup_norm(n) == 0:
                if v != 0:
                    raise ValueError("V_0 must be zero")
                continue
            clean[n] = complex(v)
        for n, v in clean.items():
            mirror = tuple(-a for a in n)
            if mirror not in clean:
                if v == 0:
                    continue
                raise HermitianityError(f"missing mirror coefficient for {n}")
            if abs(clean[mirror] - v.conjugate()) > HERMITIAN_TOL * max(1.0, abs(v)):
                raise HermitianityError(f"V_{mirror} != conj(V_{n})")
        object.__setattr__(self, "coeffs", dict(sorted(clean.items())))

    @property
    def d(self) -> int:
        return self.freq.d

    @property
    def l(self) -> int:
        return self.freq.l

    @classmethod
    def from_half(cls, freq: FrequencyVector, Q: int, half: Mapping[Sequence[int], complex]):
        """Build from one member of each +-n pair; mirrors are implied."""
        full: dict[tuple[int, ...], complex] = {}
        for n, v in half.items():
            n = tuple(int(a) for a in n)
            full[n] = complex(v)
            full[tuple(-a for a in n)] = complex(v).conjugate()
        return cls(freq, Q, full)

    @classmethod
    def free(cls, freq: FrequencyVector, Q: int = 1):
        return cls(freq, Q, {})

    def indices(self) -> np.ndarray:
        if not self.coeffs:
            return np.zeros((0, self.l), dtype=np.int64)
        return np.array(list(self.coeffs), dtype=np.int64)

    def values(self) -> np.ndarray:
        return np.array(list(self.coeffs.values()), dtype=complex)

    def stencil(self) -> np.ndarray:
        """Coefficients on the (2Q+1)^l box, indexed by n + Q."""
        out = np.zeros((2 * self.Q + 1,) * self.l, dtype=complex)
        for n, v in self.coeffs.items():
            out[tuple(a + self.Q for a in n)] = v
        return out

    def max_amplitude(self) -> float:
        """sum |V_n|, an upper bound for sup |V|."""
        return float(np.abs(self.values()).sum()) if self.coeffs else 0.0

    def __eq__(self, other):
        return (
            isinstance(other, PotentialSpec)
            and self.freq == other.freq
            and self.Q == other.Q
            and self.coeffs == other.coeffs
        )

    def __hash__(self):
        return hash((self.freq, self.Q, tuple(self.coeffs.items())))

    # JSON: only the canonical member of each +-n pair is written.
    def to_dict(self) -> dict:
        rows = [
            {"n": list(n), "re": v.real, "im": v.imag}
            for n, v in self.coeffs.items()
            if _canonical(n)
        ]
        return {
            "d": self.d,
            "l": self.l,
            "Q": self.Q,
            "omega": self.freq.omega.tolist(),
            "coeffs": rows,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PotentialSpec":
        freq = FrequencyVector(np.array(doc["omega"], dtype=float))
        if freq.d != int(doc["d"]) or freq.l != int(doc["l"]):
            raise ValueError("omega shape disagrees with declared d, l")
        half: dict[tuple[int, ...], complex] = {}
        for row in doc["coeffs"]:
            n = tuple(int(a) for a in row["n"])
            mirror = tuple(-a for a in n)
            if n in half or mirror in half:
                raise ValueError(f"coefficient for +-{n} given twice")
            half[n] = complex(row["re"], row["im"])
        return cls.from_half(freq, int(doc["Q"]), half)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "PotentialSpec":
        return cls.from_dict(json.loads(text))


def random_potential(freq: FrequencyVector, Q: int = 1, seed: int = 0, amplitude: float = 1.0) -> PotentialSpec:
    """Hermitian spec with every +-n pair, 0 < |n| <= Q, filled.

    Amplitudes are complex Gaussian with E|V_n|^2 = amplitude^2.
    """
    rng = np.random.default_rng(seed)
    half = {}
    for n in lattice_box(Q, freq.l):
        n = tuple(int(a) for a in n)
        if _canonical(n):
            re, im = rng.normal(size=2) / np.sqrt(2.0)
            half[n] = amplitude * complex(re, im)
    return PotentialSpec.from_half(freq, Q, half)


def eval_potential(spec: PotentialSpec, x: np.ndarray) -> np.ndarray | float:
    """V(x) for a point (d,) or a stack of points (..., d); returns real values.

    The imaginary part of the complex sum is checked against 1e-12 before it
    is dropped.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.d:
        raise ValueError(f"point has dimension {x.shape[-1]}, expected d={spec.d}")
    if not spec.coeffs:
        out = np.zeros(x.shape[:-1])
        return float(out) if out.ndim == 0 else out
    freqs = frequency_of(spec.indices(), spec.freq)
    total = np.zeros(x.shape[:-1], dtype=complex)
    for f, v in zip(freqs, spec.values()):
        total += v * np.exp(1j * (x @ f))
    scale = max(1.0, spec.max_amplitude())
    if np.max(np.abs(total.imag)) > 1e-12 * scale:
        raise HermitianityError("potential has a non-negligible imaginary part")
    out = total.real
    return float(out) if out.ndim == 0 else out
