"""Non-resonant set scans and isoenergetic surfaces.

A quasi-momentum k is non-resonant at truncation M when H_M(k) has an
isolated, plane-wave-dominated eigenvalue (see :mod:`qplab.operator`). The
isoenergetic surface at energy lambda is the curve/surface k = kappa(nu) nu
with lambda(kappa nu) = lambda, nu a unit vector.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .operator import Criterion, Rejection, extract, u_sup_bound
from .parallel import parallel_map
from .potential import PotentialSpec, frequency_of, lattice_box

__all__ = [
    "LAMBDA_FLOOR",
    "NonResonantScan",
    "IsoenergeticSurface",
    "DirectionRejected",
    "NewtonDivergence",
    "NeighborRejected",
    "scan_nonresonant",
    "ring_scan",
    "kappa",
    "surface",
    "directions",
    "angular_derivative",
    "loglog_slope",
    "resonance_clearance",
    "clearest_direction",
]

LAMBDA_FLOOR = 50.0


class DirectionRejected(Exception):
    """The ray k = kappa nu hits a resonant k during the radial solve."""


class NewtonDivergence(Exception):
    """No root of lambda(kappa nu) = lambda within |kappa - sqrt(lambda)| <= 1."""


class NeighborRejected(Exception):
    """An adjacent direction needed for a finite difference was rejected."""


@dataclass
class NonResonantScan:
    """Per-cell acceptance data over an annulus (or a ring of directions)."""

    annulus: tuple[float, float]
    step: float
    k: np.ndarray  # (n, d)
    accepted: np.ndarray
    gap: np.ndarray
    dominance: np.ndarray
    shift: np.ndarray  # lambda - |k|^2 of the selected candidate
    u_sup: np.ndarray  # sum_{n != 0} |v_n|
    reason: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return int(self.accepted.size)

    @property
    def fraction(self) -> float:
        return float(self.accepted.mean())

    @property
    def stderr(self) -> float:
        f = self.fraction
        return float(np.sqrt(f * (1 - f) / self.n))

    def max_shift(self) -> float:
        """max |lambda(k) - |k|^2| over accepted cells."""
        return float(np.abs(self.shift[self.accepted]).max()) if self.accepted.any() else np.nan

    def max_u(self) -> float:
        return float(self.u_sup[self.accepted].max()) if self.accepted.any() else np.nan

    def to_csv(self) -> str:
        d = self.k.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kx", "ky", "kz"][:d] + ["accepted", "gap", "dominance"])
        for k, a, g, dm in zip(self.k, self.accepted, self.gap, self.dominance):
            w.writerow([repr(float(v)) for v in k] + [int(a), repr(float(g)), repr(float(dm))])
        return buf.getvalue()


def _cell(k, M, spec, coupling, criterion):
    try:
        pair = extract(k, M, spec, coupling, criterion)
        return True, pair.gap, pair.dominance, pair.shift, u_sup_bound(pair), ""
    except Rejection as exc:
        p = exc.pair
        return False, p.gap, p.dominance, p.shift, u_sup_bound(p), exc.reason.value


def _evaluate(points, M, spec, coupling, criterion, threads) -> tuple:
    rows = parallel_map(partial(_cell, M=M, spec=spec, coupling=coupling, criterion=criterion), list(points), threads)
    acc, gap, dom, shift, u, why = zip(*rows) if rows else ((),) * 6
    return (
        np.array(acc, dtype=bool),
        np.array(gap, dtype=float),
        np.array(dom, dtype=float),
        np.array(shift, dtype=float),
        np.array(u, dtype=float),
        list(why),
    )


def _check_radius(R_min: float, M: int, spec: PotentialSpec) -> None:
    bound = 2 * (spec.Q * M + 1) * float(np.abs(spec.freq.omega).max())
    if not R_min > bound:
        raise ValueError(f"inner radius {R_min} must exceed 2(QM+1)max|omega| = {bound:.3f}")


def scan_nonresonant(
    annulus: tuple[float, float],
    step: float,
    M: int,
    spec: PotentialSpec,
    coupling: float,
    gap_floor: float | None = None,
    criterion: Criterion | None = None,
    threads: int = 1,
) -> NonResonantScan:
    """Accepted fraction over the Cartesian cells step*Z^d inside the annulus.

    ``gap_floor`` overrides the gap floor of ``criterion``.
    """
    R_min, R_max = map(float, annulus)
    if step <= 0:
        raise ValueError("step must be positive")
    if not R_max > R_min:
        raise ValueError("annulus must have R_max > R_min")
    _check_radius(R_min, M, spec)
    criterion = criterion or Criterion()
    if gap_floor is not None:
        criterion = Criterion(
            gap_floor=gap_floor,
            min_dominance=criterion.min_dominance,
            corrector_const=criterion.corrector_const,
            sigma=criterion.sigma,
        )
    n = int(np.floor(R_max / step))
    axis = np.arange(-n, n + 1) * step
    mesh = np.stack(np.meshgrid(*([axis] * spec.d), indexing="ij"), axis=-1).reshape(-1, spec.d)
    r = np.linalg.norm(mesh, axis=1)
    pts = mesh[(r >= R_min) & (r <= R_max)]
    if pts.shape[0] == 0:
        raise ValueError("annulus contains no grid cells at this step")
    acc, gap, dom, shift, u, why = _evaluate(pts, M, spec, coupling, criterion, threads)
    return NonResonantScan((R_min, R_max), float(step), pts, acc, gap, dom, shift, u, why)


def directions(n: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-measure unit directions and their angles.

    d = 2: phi_j = 2 pi j / n, angles shape (n, 1).
    d = 3: Fibonacci sphere, angles (phi, theta) shape (n, 2).
    """
    if n < 1:
        raise ValueError("need at least one direction")
    if d == 2:
        phi = 2 * np.pi * np.arange(n) / n
        return np.stack([np.cos(phi), np.sin(phi)], axis=1), phi[:, None]
    if d == 3:
        i = np.arange(n) + 0.5
        cos_t = 1 - 2 * i / n
        theta = np.arccos(cos_t)
        phi = np.mod(np.pi * (1 + 5**0.5) * i, 2 * np.pi)
        st = np.sin(theta)
        return np.stack([st * np.cos(phi), st * np.sin(phi), cos_t], axis=1), np.stack([phi, theta], axis=1)
    raise ValueError(f"unsupported dimension d={d}")


def ring_scan(
    R: float,
    n_directions: int,
    M: int,
    spec: PotentialSpec,
    coupling: float,
    criterion: Criterion | None = None,
    threads: int = 1,
) -> NonResonantScan:
    """Acceptance on the sphere |k| = R sampled at equal-measure directions."""
    _check_radius(R, M, spec)
    nu, _ = directions(n_directions, spec.d)
    pts = R * nu
    acc, gap, dom, shift, u, why = _evaluate(pts, M, spec, coupling, criterion or Criterion(), threads)
    return NonResonantScan((float(R), float(R)), 2 * np.pi * R / n_directions, pts, acc, gap, dom, shift, u, why)


def kappa(
    lambda_target: float,
    nu,
    M: int,
    spec: PotentialSpec,
    coupling: float,
    criterion: Criterion | None = None,
    lambda_floor: float = LAMBDA_FLOOR,
    rtol: float = 1e-12,
    max_iter: int = 60,
) -> float:
    """Radius kappa with lambda(kappa nu) = lambda_target.

    Newton on f(kappa) = kappa^2 + s(kappa nu) - lambda_target from
    kappa = sqrt(lambda_target), safeguarded by bisection on the bracket
    [sqrt(lambda) - 1, sqrt(lambda) + 1].
    """
    if not lambda_target > lambda_floor:
        raise ValueError(f"lambda_target={lambda_target} must exceed the floor {lambda_floor}")
    nu = np.asarray(nu, dtype=float)
    nu = nu / np.linalg.norm(nu)
    root = float(np.sqrt(lambda_target))
    lo, hi = root - 1.0, root + 1.0
    f_lo = f_hi = None

    def f(x):
        try:
            pair = extract(x * nu, M, spec, coupling, criterion)
        except Rejection as exc:
            raise DirectionRejected(str(exc)) from exc
        val = (x * x - lambda_target) + pair.shift
        return val, float(nu @ pair.gradient())

    x = root
    for _ in range(max_iter):
        val, slope = f(x)
        if abs(val) <= rtol * lambda_target:
            return x
        if val < 0:
            lo, f_lo = x, val
        else:
            hi, f_hi = x, val
        step = val / slope if slope > 0 else np.inf
        nxt = x - step
        if not lo < nxt < hi:
            if f_lo is None or f_hi is None:
                # bracket end not yet evaluated; probe it so the sign is known
                end = lo if f_lo is None else hi
                v_end, _ = f(end)
                if (end == lo and v_end > 0) or (end == hi and v_end < 0):
                    raise NewtonDivergence(f"no sign change on [{root - 1}, {root + 1}]")
                if end == lo:
                    f_lo = v_end
                else:
                    f_hi = v_end
            nxt = 0.5 * (lo + hi)
        x = nxt
    raise NewtonDivergence(f"no convergence after {max_iter} iterations")


@dataclass
class IsoenergeticSurface:
    lambda_target: float
    directions: np.ndarray  # (n, d) unit vectors
    angles: np.ndarray  # (n, 1) phi or (n, 2) phi, theta
    accepted: np.ndarray
    kappa: np.ndarray  # nan where rejected
    reason: list = field(default_factory=list)

    @property
    def deviation(self) -> np.ndarray:
        return self.kappa - np.sqrt(self.lambda_target)

    @property
    def good_fraction(self) -> float:
        return float(self.accepted.mean())

    @property
    def resolution(self) -> float:
        """Angular spacing (d = 2) or mean spacing on the unit sphere (d = 3)."""
        n, d = self.directions.shape
        return 2 * np.pi / n if d == 2 else float(np.sqrt(4 * np.pi / n))

    def max_deviation(self) -> float:
        dev = np.abs(self.deviation[self.accepted])
        return float(dev.max()) if dev.size else np.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = ["phi"] if self.angles.shape[1] == 1 else ["phi", "theta"]
        w.writerow(names + ["accepted", "kappa", "deviation"])
        for ang, a, kp, dv in zip(self.angles, self.accepted, self.kappa, self.deviation):
            w.writerow([repr(float(v)) for v in ang] + [int(a), repr(float(kp)), repr(float(dv))])
        return buf.getvalue()


def _direction(nu, lambda_target, M, spec, coupling, criterion, lambda_floor):
    try:
        return kappa(lambda_target, nu, M, spec, coupling, criterion, lambda_floor), ""
    except DirectionRejected:
        return np.nan, "DirectionRejected"
    except NewtonDivergence:
        return np.nan, "NewtonDivergence"


def surface(
    lambda_target: float,
    n_directions: int,
    M: int,
    spec: PotentialSpec,
    coupling: float,
    criterion: Criterion | None = None,
    lambda_floor: float = LAMBDA_FLOOR,
    threads: int = 1,
) -> IsoenergeticSurface:
    """kappa(lambda, nu) over equal-measure directions; rejections recorded."""
    if n_directions < 8:
        raise ValueError("need at least 8 directions")
    if not lambda_target > lambda_floor:
        raise ValueError(f"lambda_target={lambda_target} must exceed the floor {lambda_floor}")
    nu, ang = directions(n_directions, spec.d)
    fn = partial(
        _direction,
        lambda_target=lambda_target,
        M=M,
        spec=spec,
        coupling=coupling,
        criterion=criterion,
        lambda_floor=lambda_floor,
    )
    rows = parallel_map(fn, list(nu), threads)
    kap = np.array([r[0] for r in rows], dtype=float)
    why = [r[1] for r in rows]
    return IsoenergeticSurface(float(lambda_target), nu, ang, np.isfinite(kap), kap, why)


def angular_derivative(surf: IsoenergeticSurface, index: int) -> float:
    """d kappa / d phi by centred differences over the adjacent directions (d = 2)."""
    n, d = surf.directions.shape
    if d != 2:
        raise ValueError("angular derivative is defined for d = 2 surfaces")
    i0, i1 = (index - 1) % n, (index + 1) % n
    if not (surf.accepted[i0] and surf.accepted[i1]):
        raise NeighborRejected(f"neighbours of direction {index} are not both accepted")
    return float((surf.kappa[i1] - surf.kappa[i0]) / (2 * (2 * np.pi / n)))


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def resonance_clearance(k, spec: PotentialSpec, M: int, max_order: int) -> float:
    """Distance from k to the nearest resonance plane |k|^2 = |k + n.omega|^2.

    Only lattice sites n of the M-box with 0 < |n|_1 <= max_order count.
    """
    k = np.asarray(k, dtype=float)
    lat = lattice_box(M, spec.l)
    order = np.abs(lat).sum(axis=1)
    lat = lat[(order > 0) & (order <= max_order)]
    if lat.shape[0] == 0:
        return np.inf
    w = frequency_of(lat, spec.freq)
    wn = np.linalg.norm(w, axis=1)
    return float(np.min(np.abs(w @ k + 0.5 * wn**2) / wn))


def clearest_direction(R: float, spec: PotentialSpec, M: int, n_directions: int = 720, max_order: int = 3) -> np.ndarray:
    """Unit direction nu maximizing the resonance clearance of R nu.

    Orders are weighted: a plane of order m counts at distance times 2^(m-1).
    """
    nu, _ = directions(n_directions, spec.d)
    best, arg = -1.0, 0
    for i, v in enumerate(nu):
        score = min(resonance_clearance(R * v, spec, M, m) * 2.0 ** (m - 1) for m in range(1, max_order + 1))
        if score > best:
            best, arg = score, i
    return nu[arg]
