"""Analysis T, synthesis S and the projection E = S T over non-resonant cells.

Cells are points k = dk * j of the reciprocal lattice of an :class:`XGrid`, so
synthesis reduces to one inverse FFT per lattice index n:

    (S f)(x) = (2 pi)^{-d/2} sum_cells w f(k) U(k, x),
    U(k, x)  = sum_n c_n(k) exp(i <k + n.omega, x>),

with c(k) the selected eigenvector normalized to unit l2 norm and w = dk^d.
Analysis is the adjoint, (T F)(k) = sum_n conj(c_n(k)) F^(k + n.omega).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import numpy as np

from .fields import FieldState, GaussianPacket, XGrid
from .operator import Criterion, build_operator, select_pair, u_sup_bound
from .parallel import parallel_map
from .potential import PotentialSpec, frequency_of, lattice_box

__all__ = [
    "EigenTable",
    "ProjectionRegion",
    "CoefficientField",
    "EmptyRegion",
    "tabulate",
    "ball_cells",
    "forward_transform",
    "synthesize",
    "apply_projection",
    "parseval_check",
    "compare_free_projection",
    "free_projection",
]

_SKIP = 1e-15  # lattice components with max |amplitude| below this are not synthesized


class EmptyRegion(ValueError):
    pass


@dataclass(eq=False)
class EigenTable:
    """Selected eigen-data on a set of lattice cells k = step * j.

    Rows exist for every cell, accepted or not; ``accepted`` applies the
    criterion used at build time. Coefficients are unit-normalized.
    """

    step: float
    cells: np.ndarray  # (m, d) int
    accepted: np.ndarray
    shift: np.ndarray
    gap: np.ndarray
    dominance: np.ndarray
    coeffs: np.ndarray  # (m, dim) unit l2
    u_sup: np.ndarray
    lattice: np.ndarray  # (dim, l)
    freqs: np.ndarray  # (dim, d)

    @property
    def k(self) -> np.ndarray:
        return self.step * self.cells

    @property
    def lam(self) -> np.ndarray:
        k = self.k
        return np.einsum("ij,ij->i", k, k) + self.shift

    @property
    def center(self) -> int:
        return (self.lattice.shape[0] - 1) // 2

    def subset(self, mask) -> "EigenTable":
        mask = np.asarray(mask, dtype=bool)
        return EigenTable(
            self.step,
            self.cells[mask],
            self.accepted[mask],
            self.shift[mask],
            self.gap[mask],
            self.dominance[mask],
            self.coeffs[mask],
            self.u_sup[mask],
            self.lattice,
            self.freqs,
        )


def _row(k, M, spec, coupling, criterion):
    pair = select_pair(build_operator(k, M, spec, coupling))
    gap, dom = criterion.floors(k)
    ok = bool(pair.dominance > dom and pair.gap >= gap)
    return ok, pair.shift, pair.gap, pair.dominance, pair.unit_coeffs(), u_sup_bound(pair)


def tabulate(
    cells: np.ndarray,
    step: float,
    spec: PotentialSpec,
    coupling: float,
    M: int,
    criterion: Criterion | None = None,
    threads: int | None = None,
) -> EigenTable:
    """Selected eigenpair at every cell; acceptance flags under ``criterion``."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, spec.d)
    criterion = criterion or Criterion()
    lattice = lattice_box(M, spec.l)
    freqs = frequency_of(lattice, spec.freq)
    if coupling == 0.0:
        # n = 0 decouples: the plane wave is the eigenvector and no level can mix with it
        m = cells.shape[0]
        coeffs = np.zeros((m, lattice.shape[0]), dtype=complex)
        coeffs[:, (lattice.shape[0] - 1) // 2] = 1.0
        return EigenTable(
            step, cells, np.ones(m, dtype=bool), np.zeros(m), np.full(m, np.inf), np.ones(m), coeffs,
            np.zeros(m), lattice, freqs,
        )
    rows = parallel_map(
        partial(_row, M=M, spec=spec, coupling=coupling, criterion=criterion), list(step * cells), threads
    )
    ok, shift, gap, dom, coeffs, u = zip(*rows)
    return EigenTable(
        step,
        cells,
        np.array(ok, dtype=bool),
        np.array(shift),
        np.array(gap),
        np.array(dom),
        np.stack(coeffs),
        np.array(u),
        lattice,
        freqs,
    )


def ball_cells(center, radius: float, step: float) -> np.ndarray:
    """Lattice indices j with |step * j - center| <= radius."""
    center = np.asarray(center, dtype=float)
    lo = np.floor((center - radius) / step).astype(np.int64)
    hi = np.ceil((center + radius) / step).astype(np.int64)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, center.shape[0])
    keep = np.linalg.norm(step * mesh - center, axis=1) <= radius
    return mesh[keep]


@dataclass(eq=False)
class ProjectionRegion:
    """Accepted cells with lambda_floor <= lambda < lambda_cap and their weights."""

    table: EigenTable
    lambda_cap: float = np.inf
    lambda_floor: float = -np.inf

    def __post_init__(self):
        lam = self.table.lam
        mask = self.table.accepted & (lam < self.lambda_cap) & (lam >= self.lambda_floor)
        self.table = self.table.subset(mask)

    @property
    def size(self) -> int:
        return int(self.table.cells.shape[0])

    @property
    def weight(self) -> float:
        return self.table.step ** self.table.cells.shape[1]

    @property
    def k(self) -> np.ndarray:
        return self.table.k


@dataclass(eq=False)
class CoefficientField:
    region: ProjectionRegion
    values: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt(self.region.weight * np.sum(np.abs(self.values) ** 2)))


def _grid_transform(state: FieldState, q_cells: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """F^(dk j + shift) of a grid field at absolute lattice cells j."""
    g = state.grid
    env = state.values * g.plane_wave(-shift) if np.any(shift) else state.values
    return (2 * np.pi) ** (-g.d / 2) * g.cell_volume * g.analyze(env, q_cells)


def forward_transform(F, region: ProjectionRegion) -> CoefficientField:
    """(T F)(k) on the region cells.

    ``F`` is a :class:`GaussianPacket` (closed-form transform) or a
    :class:`FieldState` (discrete transform on its grid; cells must lie on the
    grid's reciprocal lattice).
    """
    tab = region.table
    if region.size == 0:
        raise EmptyRegion("projection region has no cells")
    out = np.zeros(region.size, dtype=complex)
    active = np.nonzero(np.abs(tab.coeffs).max(axis=0) > 0)[0]
    if isinstance(F, GaussianPacket):
        k = tab.k
        for j in active:
            out += np.conj(tab.coeffs[:, j]) * F.hat(k + tab.freqs[j])
        return CoefficientField(region, out)
    if isinstance(F, FieldState):
        _check_lattice(F.grid, tab.step)
        for j in active:
            out += np.conj(tab.coeffs[:, j]) * _grid_transform(F, tab.cells, tab.freqs[j])
        return CoefficientField(region, out)
    raise TypeError("F must be a GaussianPacket or a FieldState")


def _check_lattice(grid: XGrid, step: float) -> None:
    if abs(grid.dk - step) > 1e-12 * step:
        raise ValueError(f"cell step {step} does not match the grid reciprocal lattice {grid.dk}")


def synthesize_cells(
    grid: XGrid,
    cells: np.ndarray,
    amps: np.ndarray,
    coeffs: np.ndarray,
    freqs: np.ndarray,
    t: float = 0.0,
) -> FieldState:
    """sum_cells amps * sum_n coeffs[:, n] exp(i <dk j + n.omega, x>) as a FieldState.

    ``amps`` already carries weights and normalization.
    """
    values = np.zeros(grid.shape, dtype=complex)
    if cells.shape[0] == 0:
        return FieldState(values, grid, t)
    k = grid.dk * cells
    scale = np.abs(amps).max()
    for j in range(freqs.shape[0]):
        a = amps * coeffs[:, j]
        if not np.abs(a).max() > _SKIP * scale:
            continue
        grid.check_band(k + freqs[j], "synthesized component")
        part = grid.synthesize(cells, a)
        if np.any(freqs[j]):
            part = part * grid.plane_wave(freqs[j])
        values += part
    return FieldState(values, grid, t)


def synthesize(field: CoefficientField, grid: XGrid) -> FieldState:
    """(S f)(x) on ``grid``; raises NyquistViolation when the band is too small."""
    tab = field.region.table
    _check_lattice(grid, tab.step)
    amps = (2 * np.pi) ** (-grid.d / 2) * field.region.weight * field.values
    return synthesize_cells(grid, tab.cells, amps, tab.coeffs, tab.freqs)


def apply_projection(F, region: ProjectionRegion, grid: XGrid) -> FieldState:
    return synthesize(forward_transform(F, region), grid)


def parseval_check(F, region: ProjectionRegion, grid: XGrid) -> dict:
    """||E F||^2 on the grid against (2 pi)^{-d} int |(F, U(k))|^2 dk."""
    coef = forward_transform(F, region)
    lhs = apply_projection(F, region, grid).norm() ** 2
    rhs = coef.norm() ** 2
    scale = max(lhs, rhs)
    rel = abs(lhs - rhs) / scale if scale > 0 else 0.0
    return {"lhs": float(lhs), "rhs": float(rhs), "relerr": float(rel)}


def free_projection(F, region: ProjectionRegion, grid: XGrid) -> FieldState:
    """Sharp Fourier cutoff of F to the region cells (plane waves only)."""
    tab = region.table
    _check_lattice(grid, tab.step)
    if isinstance(F, GaussianPacket):
        hat = F.hat(tab.k)
    else:
        hat = _grid_transform(F, tab.cells, np.zeros(grid.d))
    amps = (2 * np.pi) ** (-grid.d / 2) * region.weight * hat
    return FieldState(grid.synthesize(tab.cells, amps), grid)


def compare_free_projection(F, region: ProjectionRegion, grid: XGrid) -> float:
    """||E F - F* chi F F|| / ||F||."""
    EF = apply_projection(F, region, grid)
    PF = free_projection(F, region, grid)
    norm = np.sqrt(F.norm2()) if isinstance(F, GaussianPacket) else F.norm()
    return EF.distance(PF) / norm
