"""Mollified cutoffs around the accepted set and the extended dispersion.

The cutoff eta lives on a uniform box of k-cells. It is the discrete
convolution of the indicator of the delta/2-neighbourhood of the accepted
cells with a compact bump of radius delta/2, so eta = 1 on accepted cells and
eta = 0 farther than delta from them.

The extended dispersion blends the selected eigenvalue into the free one,

    lambda_ext(k) = |k|^2 + eta(k) * (lambda(k) - |k|^2),

using the perturbation identities for the derivatives where eta = 1 and
finite differences of the blend elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .operator import Criterion, GeneralizedEigenpair, build_operator, select_pair, spectrum
from .potential import PotentialSpec

__all__ = [
    "SMOOTHNESS_ORDER",
    "KBox",
    "SmoothCutoff",
    "ExtendedDispersion",
    "OutsideGrid",
    "bump",
    "build_cutoff",
    "erode",
    "smooth_step",
    "annular_cutoff",
    "pair_hessian",
]


def smoothness_order(d: int) -> int:
    """Number of derivatives the asymptotic analysis asks for: floor(3d/2) + 6."""
    return (3 * d) // 2 + 6


SMOOTHNESS_ORDER = {d: smoothness_order(d) for d in (2, 3)}


class OutsideGrid(ValueError):
    """Query point outside the working k-grid."""


def bump(r: np.ndarray) -> np.ndarray:
    """exp(-1 / (1 - r^2)) for r < 1, zero otherwise (not normalized)."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def smooth_step(x: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, monotone in between."""
    x = np.asarray(x, dtype=float)

    def f(y):
        y = np.maximum(y, 0.0)
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)

    a, b = f(x), f(1.0 - x)
    return a / (a + b)


def annular_cutoff(k: np.ndarray, k0, inner: float = 1.0, outer: float = 2.0) -> np.ndarray:
    """Smooth radial cutoff: 0 for |k - k0| <= inner, 1 for |k - k0| >= outer."""
    r = np.linalg.norm(np.asarray(k, dtype=float) - np.asarray(k0, dtype=float), axis=-1)
    return smooth_step((r - inner) / (outer - inner))


@dataclass(frozen=True, eq=False)
class KBox:
    """Uniform box of k-cells: k = step * (lo + index), index in [0, shape)."""

    step: float
    lo: np.ndarray
    shape: tuple[int, ...]

    @classmethod
    def covering(cls, cells: np.ndarray, step: float, pad: int = 0) -> "KBox":
        cells = np.asarray(cells, dtype=np.int64)
        lo = cells.min(axis=0) - pad
        hi = cells.max(axis=0) + pad
        return cls(float(step), lo, tuple(int(v) for v in hi - lo + 1))

    @property
    def d(self) -> int:
        return len(self.shape)

    def axes(self) -> list[np.ndarray]:
        return [self.step * (self.lo[i] + np.arange(n)) for i, n in enumerate(self.shape)]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def index_of(self, cells: np.ndarray) -> tuple[np.ndarray, ...]:
        idx = np.asarray(cells, dtype=np.int64) - self.lo
        if np.any(idx < 0) or np.any(idx >= np.array(self.shape)):
            raise OutsideGrid("cell outside the box")
        return tuple(idx.T)

    def scatter(self, cells: np.ndarray, values, fill=0) -> np.ndarray:
        values = np.asarray(values)
        out = np.full(self.shape, fill, dtype=values.dtype)
        out[self.index_of(cells)] = values
        return out


@dataclass(frozen=True, eq=False)
class SmoothCutoff:
    """Mollified indicator of a flagged region on a KBox."""

    box: KBox
    region: np.ndarray  # bool, box-shaped
    delta: float
    values: np.ndarray  # eta on the box
    derivative_constants: dict = field(default_factory=dict)  # m -> max |D^m eta| * delta^m

    def at_cells(self, cells: np.ndarray) -> np.ndarray:
        return self.values[self.box.index_of(cells)]

    def __call__(self, k) -> np.ndarray:
        """Multilinear interpolation of eta at wave vectors k of shape (..., d)."""
        k = np.asarray(k, dtype=float)
        interp = RegularGridInterpolator(self.box.axes(), self.values, bounds_error=False, fill_value=None)
        flat = k.reshape(-1, self.box.d)
        lo = np.array([a[0] for a in self.box.axes()])
        hi = np.array([a[-1] for a in self.box.axes()])
        if np.any(flat < lo - 1e-12) or np.any(flat > hi + 1e-12):
            raise OutsideGrid("k outside the cutoff grid")
        return np.clip(interp(flat), 0.0, 1.0).reshape(k.shape[:-1])


def build_cutoff(region: np.ndarray, box: KBox, delta: float, edge: str = "nearest") -> SmoothCutoff:
    """Mollified cutoff of ``region`` (a box-shaped boolean mask).

    Cells beyond the box are treated as copies of the nearest box cell
    (``edge="nearest"``) or as outside the region (``edge="empty"``).
    """
    region = np.asarray(region, dtype=bool)
    if region.shape != box.shape:
        raise ValueError("region mask does not match the box")
    if not delta >= 2 * box.step:
        raise ValueError(f"delta={delta} is below the resolution 2*step={2 * box.step}")
    half = 0.5 * delta
    pad = int(np.ceil(delta / box.step)) + 1
    mode = "edge" if edge == "nearest" else "constant"
    padded = np.pad(region, pad, mode=mode)
    if padded.any():
        dist = ndimage.distance_transform_edt(~padded) * box.step
        dilated = (dist <= half + 1e-12 * box.step).astype(float)
    else:
        dilated = np.zeros(padded.shape)
    r = int(np.floor(half / box.step))
    offs = np.arange(-r, r + 1) * box.step
    mesh = np.meshgrid(*([offs] * box.d), indexing="ij")
    kernel = bump(np.sqrt(sum(m * m for m in mesh)) / half)
    kernel /= kernel.sum()
    eta = ndimage.correlate(dilated, kernel, mode="constant", cval=0.0)
    crop = tuple(slice(pad, pad + n) for n in box.shape)
    eta = eta[crop]
    eta[np.abs(eta) < 1e-12] = 0.0
    eta[np.abs(eta - 1.0) < 1e-12] = 1.0
    eta = np.clip(eta, 0.0, 1.0)
    eta[region] = 1.0
    consts = {}
    g = eta
    for m in (1, 2):
        grads = np.gradient(g, box.step) if box.d > 1 else [np.gradient(g, box.step)]
        mag = np.sqrt(sum(gi * gi for gi in grads))
        consts[m] = float(mag.max() * delta**m) if mag.size else 0.0
        g = mag
    return SmoothCutoff(box, region, float(delta), eta, consts)


def erode(region: np.ndarray, step: float, delta: float) -> np.ndarray:
    """Cells of ``region`` farther than delta from every cell outside it."""
    region = np.asarray(region, dtype=bool)
    if region.all():
        return region.copy()
    return ndimage.distance_transform_edt(region) * step > delta


def pair_hessian(pair: GeneralizedEigenpair, spec: PotentialSpec, coupling: float) -> np.ndarray:
    """Hess lambda by second-order perturbation theory in k.

    With D_i = diag(2 (k + n.omega)_i) the k-derivative of H_M(k),
    Hess_ij = 2 delta_ij + 2 Re sum_{m != sel} <v, D_i v_m><v_m, D_j v> / (lambda - lambda_m).
    """
    op = build_operator(pair.k, pair.M, spec, coupling)
    w, V = spectrum(op, vectors=True)
    v = pair.unit_coeffs()
    sel = int(np.argmax(np.abs(V.conj().T @ v)))
    waves = pair.k[None, :] + pair.freqs
    d = pair.k.shape[0]
    # <v_m, D_i v> for every m and i
    proj = np.stack([V.conj().T @ (2.0 * waves[:, i] * v) for i in range(d)], axis=1)
    denom = pair.lam - w
    denom[sel] = np.inf
    weights = 1.0 / denom
    H = 2.0 * np.eye(d) + 2.0 * np.real((proj.conj().T * weights) @ proj)
    return 0.5 * (H + H.T)


class ExtendedDispersion:
    """lambda_ext, its gradient and Hessian on a working KBox.

    Eigen-data are computed on demand and cached per query point. ``cutoff``
    defines eta; without one the blend is trivial (eta = 1 everywhere on the
    box, i.e. the selected branch is used as is).
    """

    def __init__(
        self,
        spec: PotentialSpec,
        coupling: float,
        M: int,
        box: KBox,
        cutoff: SmoothCutoff | None = None,
        criterion: Criterion | None = None,
        fd_step: float | None = None,
    ):
        self.spec = spec
        self.coupling = float(coupling)
        self.M = M
        self.box = box
        self.cutoff = cutoff
        self.criterion = criterion or Criterion()
        self.fd_step = fd_step if fd_step is not None else 1e-3
        self._cache: dict[tuple, tuple[GeneralizedEigenpair, bool]] = {}
        axes = box.axes()
        self._lo = np.array([a[0] for a in axes])
        self._hi = np.array([a[-1] for a in axes])

    def _check(self, k: np.ndarray) -> None:
        if np.any(k < self._lo - 1e-12) or np.any(k > self._hi + 1e-12):
            raise OutsideGrid(f"k={k.tolist()} outside the working grid")

    def pair(self, k) -> tuple[GeneralizedEigenpair, bool]:
        """Selected pair at k and whether it passes the acceptance criterion."""
        k = np.asarray(k, dtype=float)
        key = tuple(k.tolist())
        hit = self._cache.get(key)
        if hit is None:
            op = build_operator(k, self.M, self.spec, self.coupling)
            pair = select_pair(op)
            gap, dom = self.criterion.floors(k)
            hit = (pair, bool(pair.dominance > dom and pair.gap >= gap))
            if len(self._cache) > 50000:
                self._cache.clear()
            self._cache[key] = hit
        return hit

    def eta(self, k) -> float:
        if self.cutoff is None:
            return 1.0
        return float(self.cutoff(np.asarray(k, dtype=float)))

    def _exact(self, k) -> GeneralizedEigenpair | None:
        """The pair when the blend is trivially the eigenvalue (eta = 1, accepted)."""
        pair, ok = self.pair(k)
        if ok and self.eta(k) == 1.0:
            return pair
        return None

    def lam(self, k) -> float:
        k = np.asarray(k, dtype=float)
        self._check(k)
        return float(k @ k) + self.shift(k)

    def shift(self, k) -> float:
        """lambda_ext(k) - |k|^2, free of the |k|^2 cancellation."""
        k = np.asarray(k, dtype=float)
        self._check(k)
        if self.coupling == 0.0:
            return 0.0
        pair, _ = self.pair(k)
        return self.eta(k) * pair.shift

    def grad(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        self._check(k)
        if self.coupling == 0.0:
            return 2.0 * k
        exact = self._exact(k)
        if exact is not None:
            return exact.gradient()
        h = self.fd_step
        g = np.empty_like(k)
        for i in range(k.shape[0]):
            e = np.zeros_like(k)
            e[i] = h
            g[i] = (self.shift(k + e) - self.shift(k - e)) / (2 * h)
        return 2.0 * k + g

    def hess(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        self._check(k)
        d = k.shape[0]
        if self.coupling == 0.0:
            return 2.0 * np.eye(d)
        exact = self._exact(k)
        if exact is not None:
            return pair_hessian(exact, self.spec, self.coupling)
        h = self.fd_step
        H = np.empty((d, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            H[i] = (self.grad(k + e) - self.grad(k - e)) / (2 * h)
        return 0.5 * (H + H.T)

    def ray_table(self, direction, radii) -> np.ndarray:
        """Rows (r, lambda_ext, eta) along k = r * direction, for CSV dumps."""
        nu = np.asarray(direction, dtype=float)
        nu = nu / np.linalg.norm(nu)
        return np.array([(r, self.lam(r * nu), self.eta(r * nu)) for r in radii])
