"""Wave packets built from generalized eigenfunctions, two propagators and
time-averaged transport moments.

The eigen-expansion packet is

    Psi(x, t) = (2 pi)^{-d/2} sum_cells w phi^(k) eta(k) exp(-i lambda(k) t) U(k, x)

over reciprocal-lattice cells k of the grid, with eta either the sharp
indicator of the accepted cells (``delta = 0``) or the mollified cutoff of
width delta. The split-step propagator is an independent Strang scheme for
i d_t Psi = (-Laplace + coupling * V) Psi on the periodic box.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy import integrate, stats

from .extension import KBox, build_cutoff, erode
from .fields import FieldState, GaussianPacket, XGrid
from .operator import Criterion
from .potential import PotentialSpec, frequency_of
from .transforms import EigenTable, EmptyRegion, ball_cells, synthesize_cells, tabulate

__all__ = [
    "GuardViolation",
    "EmptyRegion",
    "WavePacketSpec",
    "PacketExpansion",
    "TransportRecord",
    "expand",
    "build_initial",
    "evolve_eigen",
    "build_w",
    "evolve_splitstep",
    "sampled_potential",
    "energy",
    "second_moment",
    "abel_weights",
    "abel_mean",
    "cesaro_mean",
    "fit_beta",
    "ballistic_check",
    "geometric_T_grid",
    "default_times",
    "transport",
    "remainder_ratio",
    "wavefront_guard_time",
    "self_convergence_order",
    "cross_validate",
]


class GuardViolation(RuntimeError):
    """A numerical guard (step size, resolution, sampling window) tripped."""


@dataclass(frozen=True, eq=False)
class WavePacketSpec:
    """Momentum profile, cutoff width and the operator the packet is built for.

    ``window`` is the radius of the k-window in units of the profile's
    momentum standard deviation. ``cutoff="outer"`` mollifies the accepted
    set itself (eta = 1 on it, support in its delta-neighbourhood), which
    fills resonant holes thinner than delta with unisolated eigen-data.
    ``cutoff="inner"`` mollifies the part of the accepted set farther than
    delta from any rejected cell, so eta vanishes off the accepted set and
    the packet is a superposition of accepted eigenfunctions only.
    """

    profile: GaussianPacket
    delta: float
    potential: PotentialSpec
    coupling: float
    M: int = 2
    criterion: Criterion = field(default_factory=Criterion)
    window: float = 6.0
    lambda_cap: float = np.inf
    cutoff: str = "inner"

    def __post_init__(self):
        if self.cutoff not in ("inner", "outer"):
            raise ValueError("cutoff must be 'inner' or 'outer'")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")

    @property
    def k_c(self) -> np.ndarray:
        return self.profile.k0


@dataclass(eq=False)
class PacketExpansion:
    """Per-cell data of a packet: eigen-table, cutoff values and amplitudes."""

    spec: WavePacketSpec
    table: EigenTable
    eta: np.ndarray  # cutoff on table cells
    lam: np.ndarray  # lambda_ext on table cells
    coeffs: np.ndarray  # unit coefficients (blended with the plane wave for the outer cutoff)
    amplitude: np.ndarray  # phi^ * eta
    mass_outside: float  # profile mass not carried by eta = 1 cells

    @property
    def step(self) -> float:
        return self.table.step

    @property
    def weight(self) -> float:
        return self.step ** self.table.cells.shape[1]

    def coefficient_norm2(self) -> float:
        """sum w |phi^ eta|^2, the norm^2 carried by the coefficients."""
        return float(self.weight * np.sum(np.abs(self.amplitude) ** 2))

    def gradients(self) -> np.ndarray:
        """Hellmann-Feynman gradients of the selected branch on every cell."""
        waves = self.table.k[:, None, :] + self.table.freqs[None, :, :]
        w = np.abs(self.table.coeffs) ** 2
        return 2.0 * np.einsum("mn,mni->mi", w, waves) / w.sum(axis=1)[:, None]

    def max_speed(self) -> float:
        live = np.abs(self.amplitude) > 0
        return float(np.linalg.norm(self.gradients()[live], axis=1).max())

    def group_velocity(self) -> np.ndarray:
        """Gradient of lambda at the window cell closest to the profile centre."""
        i = int(np.argmin(np.linalg.norm(self.table.k - self.spec.k_c, axis=1)))
        return self.gradients()[i]

    def with_cutoff(self, delta: float) -> "PacketExpansion":
        """Same eigen-table, different cutoff width (no new eigen-solves)."""
        spec = WavePacketSpec(
            self.spec.profile,
            delta,
            self.spec.potential,
            self.spec.coupling,
            self.spec.M,
            self.spec.criterion,
            self.spec.window,
            self.spec.lambda_cap,
            self.spec.cutoff,
        )
        return _assemble(spec, self.table)

    def field(self, grid: XGrid, t: float = 0.0) -> FieldState:
        _check_step(grid, self.step)
        k = self.table.k
        k2 = np.einsum("ij,ij->i", k, k)
        phase = np.exp(-1j * k2 * t) * np.exp(-1j * (self.lam - k2) * t)
        amps = (2 * np.pi) ** (-grid.d / 2) * self.weight * self.amplitude * phase
        live = np.abs(self.amplitude) > 0
        return synthesize_cells(grid, self.table.cells[live], amps[live], self.coeffs[live], self.table.freqs, t)


def _check_step(grid: XGrid, step: float) -> None:
    if abs(grid.dk - step) > 1e-12 * step:
        raise ValueError("packet cells are not on the grid reciprocal lattice")


def _assemble(spec: WavePacketSpec, table: EigenTable) -> PacketExpansion:
    k = table.k
    lam_sel = table.lam
    in_region = table.accepted & (lam_sel < spec.lambda_cap)
    if not in_region.any():
        raise EmptyRegion("no accepted cell in the packet window")
    if spec.delta == 0:
        eta = in_region.astype(float)
    else:
        box = KBox.covering(table.cells, table.step)
        # box cells beyond the circular window count as non-resonant; the profile is negligible there
        mask = np.ones(box.shape, dtype=bool)
        mask[box.index_of(table.cells)] = in_region
        if spec.cutoff == "inner":
            mask = erode(mask, box.step, spec.delta)
        eta = build_cutoff(mask, box, spec.delta).at_cells(table.cells)
        if spec.cutoff == "inner":
            eta = np.where(in_region, eta, 0.0)
    if spec.cutoff == "inner":
        # support inside the accepted set: exact eigenpairs carry the packet
        coeffs = table.coeffs.copy()
        lam = lam_sel.copy()
    else:
        c = table.center
        coeffs = table.coeffs * eta[:, None]
        coeffs[:, c] += 1.0 - eta
        lam = np.einsum("ij,ij->i", k, k) + eta * table.shift
    hat = spec.profile.hat(k)
    amp = hat * eta
    total = np.sum(np.abs(hat) ** 2)
    kept = np.sum(np.abs(hat[in_region]) ** 2)
    tail = spec.profile.mass_outside(spec.window * spec.profile.momentum_std)
    outside = float((1 - tail) * (1 - kept / total) + tail) if total > 0 else 1.0
    return PacketExpansion(spec, table, eta, lam, coeffs, amp, outside)


def expand(spec: WavePacketSpec, step: float, threads: int | None = None) -> PacketExpansion:
    """Eigen-solve every cell of the k-window on the lattice step * Z^d."""
    radius = spec.window * spec.profile.momentum_std
    cells = ball_cells(spec.k_c, radius, step)
    table = tabulate(cells, step, spec.potential, spec.coupling, spec.M, spec.criterion, threads)
    return _assemble(spec, table)


def build_initial(spec: WavePacketSpec, grid: XGrid, expansion: PacketExpansion | None = None) -> FieldState:
    exp = expansion if expansion is not None else expand(spec, grid.dk)
    return exp.field(grid, 0.0)


def evolve_eigen(spec: WavePacketSpec, t: float, grid: XGrid, expansion: PacketExpansion | None = None) -> FieldState:
    exp = expansion if expansion is not None else expand(spec, grid.dk)
    return exp.field(grid, t)


def build_w(expansion: PacketExpansion, t: float, grid: XGrid, delta: float) -> FieldState:
    """Packet with the cutoff widened to ``delta`` (delta = 0 gives the sharp packet)."""
    return expansion.with_cutoff(delta).field(grid, t)


# Split-step propagator.
def sampled_potential(potential: PotentialSpec, grid: XGrid) -> np.ndarray:
    """V on the grid from the Fourier data (real part after a Hermitian check)."""
    out = np.zeros(grid.shape, dtype=complex)
    for n, v in potential.coeffs.items():
        out += v * grid.plane_wave(frequency_of(np.array(n), potential.freq))
    scale = max(1.0, potential.max_amplitude())
    if np.abs(out.imag).max(initial=0.0) > 1e-12 * scale:
        raise ValueError("sampled potential is not real")
    return out.real


def _kmax2(grid: XGrid) -> float:
    edge = np.abs(grid.carrier) + grid.nyquist
    return float(np.sum(edge**2))


def evolve_splitstep(
    psi0: FieldState,
    potential: PotentialSpec,
    coupling: float,
    dt: float,
    steps: int,
    V: np.ndarray | None = None,
) -> FieldState:
    """Strang splitting: half potential, full kinetic, half potential."""
    grid = psi0.grid
    if steps < 0 or dt <= 0:
        raise ValueError("need dt > 0 and steps >= 0")
    vmax = abs(coupling) * potential.max_amplitude()
    if not dt * vmax < 0.1:
        raise GuardViolation(f"dt*max|V| = {dt * vmax:.3g} >= 0.1")
    if not dt * _kmax2(grid) < 0.5:
        raise GuardViolation(f"dt*k_max^2 = {dt * _kmax2(grid):.3g} >= 0.5")
    if V is None:
        V = sampled_potential(potential, grid)
    half = np.exp(-0.5j * dt * coupling * V)
    kin = np.exp(-1j * dt * grid.kinetic())
    psi = psi0.values.copy()
    for _ in range(steps):
        psi *= half
        psi = sfft.ifftn(kin * sfft.fftn(psi, workers=-1), workers=-1)
        psi *= half
    return FieldState(psi, grid, psi0.t + steps * dt)


def energy(state: FieldState, potential: PotentialSpec, coupling: float, V: np.ndarray | None = None) -> float:
    """<Psi, H Psi> with the kinetic part evaluated spectrally."""
    g = state.grid
    if V is None:
        V = sampled_potential(potential, g)
    spec = sfft.fftn(state.values, norm="ortho")
    kinetic = float(np.sum(g.kinetic() * np.abs(spec) ** 2)) * g.cell_volume
    pot = float(np.sum(coupling * V * np.abs(state.values) ** 2)) * g.cell_volume
    return kinetic + pot


def second_moment(state: FieldState, origin=None, radius: float | None = None) -> float:
    """int |x - origin|^2 |Psi|^2 dx (origin defaults to the box centre).

    With ``radius`` the integral is restricted to the ball |x - origin| < radius.
    """
    g = state.grid
    origin = g.center if origin is None else np.asarray(origin, dtype=float)
    r2 = g.radius2(origin)
    dens = np.abs(state.values) ** 2
    if radius is not None:
        dens = np.where(r2 < radius * radius, dens, 0.0)
    return float(g.cell_volume * np.sum(r2 * dens))


# Time averages.
def _linear_weights(t: np.ndarray, w_int0, w_int1) -> np.ndarray:
    """Weights W with sum W m2 = int rho(t) * (piecewise-linear m2) dt.

    w_int0(a, b) = int_a^b rho, w_int1(a, b) = int_a^b rho (t - a) / (b - a).
    """
    W = np.zeros_like(t)
    a, b = t[:-1], t[1:]
    I0, I1 = w_int0(a, b), w_int1(a, b)
    W[:-1] += I0 - I1
    W[1:] += I1
    return W


def _check_times(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size < 2 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing and start at 0")
    return t


def abel_weights(t, T: float) -> tuple[np.ndarray, float]:
    """Product-trapezoid weights of (2/T) exp(-2t/T) on [0, t_max] and the
    remaining weight exp(-2 t_max / T) beyond t_max."""
    t = _check_times(t)
    u = 2.0 / T

    def i0(a, b):
        return np.exp(-u * a) - np.exp(-u * b)

    def i1(a, b):
        # int_a^b u e^{-u s} (s - a)/(b - a) ds
        h = b - a
        return (np.exp(-u * a) - np.exp(-u * b) * (1 + u * h)) / (u * h)

    W = _linear_weights(t, i0, i1)
    tail = float(np.exp(-u * t[-1]))
    W *= (1.0 - tail) / W.sum()  # exact for constants despite roundoff in the closed forms
    return W, tail


def abel_mean(t, m2, T: float, envelope: tuple[float, float] | None = None) -> tuple[float, float]:
    """(2/T) int_0^inf exp(-2t/T) m2(t) dt and its tail contribution.

    m2 is interpolated linearly between samples. Beyond t_max the ballistic
    envelope C1 t^2 + C2 bounds m2; without ``envelope`` it is estimated from
    the samples. Returns ``(value, tail)``.
    """
    t = _check_times(t)
    m2 = np.asarray(m2, dtype=float)
    if t[-1] < 5 * T - 1e-9:
        raise GuardViolation(f"t_max={t[-1]} is below 5T={5 * T}")
    W, tail_w = abel_weights(t, T)
    if envelope is None:
        envelope = ballistic_envelope(t, m2)
    C1, C2 = envelope
    a = t[-1]
    tail = tail_w * (C1 * (a * a + a * T + 0.5 * T * T) + C2)
    return float(W @ m2 + tail), float(tail)


def cesaro_mean(t, m2, T: float) -> float:
    """(1/T) int_0^T m2(t) dt with m2 interpolated linearly."""
    t = _check_times(t)
    m2 = np.asarray(m2, dtype=float)
    if t[-1] < T - 1e-12:
        raise GuardViolation(f"t_max={t[-1]} is below T={T}")
    inside = t < T
    tt = np.append(t[inside], T)
    mm = np.append(m2[inside], np.interp(T, t, m2))
    return float(integrate.trapezoid(mm, tt) / T)


def ballistic_envelope(t, m2) -> tuple[float, float]:
    """C1, C2 with m2(t) <= C1 t^2 + C2 on the samples, C2 = m2(0)."""
    t = np.asarray(t, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    C2 = float(m2[0])
    pos = t > 0
    C1 = float(np.max((m2[pos] - C2) / t[pos] ** 2, initial=0.0))
    return max(C1, 0.0), C2


def fit_beta(T, values) -> dict:
    """Half the least-squares slope of log(values) against log(T)."""
    res = stats.linregress(np.log(np.asarray(T, float)), np.log(np.asarray(values, float)))
    return {"beta": float(res.slope / 2), "stderr": float(res.stderr / 2)}


def geometric_T_grid(T0: float = 5.0, Tmax: float = 40.0, ratio: float = np.sqrt(2)) -> np.ndarray:
    n = int(np.floor(np.log(Tmax / T0) / np.log(ratio) + 1e-9)) + 1
    return T0 * ratio ** np.arange(n)


def default_times(t_max: float, fine_until: float = 25.0, fine: float = 0.5, coarse: float = 2.5) -> np.ndarray:
    """Sampling times: step ``fine`` up to ``fine_until``, then ``coarse``."""
    a = np.arange(0.0, min(fine_until, t_max), fine)
    b = np.arange(a[-1] + fine if a.size else 0.0, t_max, coarse) if t_max > fine_until else np.zeros(0)
    t = np.unique(np.concatenate([a, b, [t_max]]))
    return t


@dataclass
class TransportRecord:
    times: np.ndarray
    m2: np.ndarray
    T: np.ndarray
    abel: np.ndarray
    cesaro: np.ndarray
    abel_tail: np.ndarray
    norm0: float
    velocity: np.ndarray
    beta: float = np.nan
    beta_stderr: float = np.nan
    beta_cesaro: float = np.nan
    c1: float = np.nan
    C1: float = np.nan
    C2: float = np.nan
    verdict: str = ""

    def running_beta(self) -> np.ndarray:
        """Local exponent between consecutive T values (first entry repeats the second)."""
        lb = np.diff(np.log(self.abel)) / np.diff(np.log(self.T)) / 2
        return np.concatenate([lb[:1], lb]) if lb.size else np.full(self.T.shape, np.nan)

    def summary(self) -> dict:
        return {
            "beta": self.beta,
            "beta_stderr": self.beta_stderr,
            "c1": self.c1,
            "C1": self.C1,
            "C2": self.C2,
            "verdict": self.verdict,
        }

    def averages_csv(self) -> str:
        rows = ["T,abel_m2,cesaro_m2,beta_running"]
        for T, a, c, b in zip(self.T, self.abel, self.cesaro, self.running_beta()):
            rows.append(f"{T!r},{a!r},{c!r},{b!r}")
        return "\n".join(rows) + "\n"

    def series_csv(self) -> str:
        rows = ["t,m2"] + [f"{t!r},{m!r}" for t, m in zip(self.times, self.m2)]
        return "\n".join(rows) + "\n"


def ballistic_check(record: TransportRecord, T0: float | None = None, Tmax: float | None = None, floor: float | None = None) -> dict:
    """c1 = min abel(T)/T^2 over [T0, Tmax]; verdict ballistic iff c1 > floor.

    The default floor is 1e-3 ||Psi_0||^2 |grad lambda(k_c)|^2 / 4.
    """
    T = record.T
    T0 = T.min() if T0 is None else T0
    Tmax = T.max() if Tmax is None else Tmax
    sel = (T >= T0 - 1e-12) & (T <= Tmax + 1e-12)
    c1 = float(np.min(record.abel[sel] / T[sel] ** 2))
    if floor is None:
        floor = 1e-3 * record.norm0**2 * float(record.velocity @ record.velocity) / 4
    C1, C2 = ballistic_envelope(record.times, record.m2)
    return {"c1": c1, "C1": C1, "C2": C2, "floor": float(floor), "verdict": "ballistic" if c1 > floor else "not ballistic"}


def finish_record(times, m2, T_grid, norm0, velocity) -> TransportRecord:
    times = np.asarray(times, float)
    m2 = np.asarray(m2, float)
    env = ballistic_envelope(times, m2)
    ab = [abel_mean(times, m2, T, env) for T in T_grid]
    abel = np.array([a for a, _ in ab])
    tail = np.array([b for _, b in ab])
    ces = np.array([cesaro_mean(times, m2, T) for T in T_grid])
    rec = TransportRecord(times, m2, np.asarray(T_grid, float), abel, ces, tail, float(norm0), np.asarray(velocity, float))
    fa = fit_beta(rec.T, rec.abel)
    rec.beta, rec.beta_stderr = fa["beta"], fa["stderr"]
    rec.beta_cesaro = fit_beta(rec.T, rec.cesaro)["beta"]
    chk = ballistic_check(rec)
    rec.c1, rec.C1, rec.C2, rec.verdict = chk["c1"], chk["C1"], chk["C2"], chk["verdict"]
    return rec


def transport(
    expansion: PacketExpansion,
    grid: XGrid,
    T_grid=None,
    times=None,
    co_moving: bool = True,
    edge_tol: float = 1e-3,
) -> TransportRecord:
    """Second-moment series of the packet and its Abel/Cesaro averages.

    With ``co_moving`` the grid centre follows x0 + c t, c the group velocity at
    k_c; the moment is always taken about the lab origin. The run stops with
    :class:`GuardViolation` if more than ``edge_tol`` of the mass sits in
    the outer 5% frame of the box.
    """
    T_grid = geometric_T_grid() if T_grid is None else np.asarray(T_grid, float)
    times = default_times(5 * T_grid.max()) if times is None else np.asarray(times, float)
    c = expansion.group_velocity()
    x0 = expansion.spec.profile.x0
    origin = np.zeros(grid.d)
    m2 = np.empty(times.size)
    norm0 = None
    for i, t in enumerate(times):
        g = grid.moved(x0 + c * t) if co_moving else grid
        st = expansion.field(g, t)
        _edge_guard(st, edge_tol)
        if norm0 is None:
            norm0 = st.norm()
        m2[i] = second_moment(st, origin)
    return finish_record(times, m2, T_grid, norm0, c)


def _edge_guard(state: FieldState, tol: float, frame: float = 0.05) -> None:
    """Raise if the mass fraction within ``frame * L`` of the box boundary exceeds ``tol``."""
    dens = np.abs(state.values) ** 2
    total = dens.sum()
    if total == 0:
        return
    g = state.grid
    near = np.zeros(g.shape, dtype=bool)
    for ax, x in enumerate(g.coords()):
        near |= np.abs(x - g.center[ax]) > (0.5 - frame) * g.L
    frac = dens[near].sum() / total
    if frac > tol:
        raise GuardViolation(f"packet reaches the box edge at t={state.t} (edge mass fraction {frac:.2e})")


def remainder_ratio(
    expansion: PacketExpansion,
    T: float,
    grid: XGrid,
    c0: float | None = None,
    times=None,
) -> float:
    """(2/T) int exp(-2t/T) ||X (Psi - w)||^2_{B_R} dt / T^2 with R = c0 T.

    Psi is the sharp packet (accepted cells only), w the packet of the
    expansion's cutoff width; c0 defaults to 2 max |grad lambda|.
    """
    sharp = expansion.with_cutoff(0.0)
    c0 = 2 * expansion.max_speed() if c0 is None else c0
    times = default_times(5 * T, fine_until=5 * T, fine=T / 8) if times is None else np.asarray(times, float)
    c = expansion.group_velocity()
    x0 = expansion.spec.profile.x0
    vals = np.empty(times.size)
    for i, t in enumerate(times):
        g = grid.moved(x0 + c * t)
        diff = FieldState(expansion.field(g, t).values - sharp.field(g, t).values, g, t)
        vals[i] = second_moment(diff, np.zeros(g.d), radius=c0 * T)
    W, tail = abel_weights(times, T)
    return float((W @ vals + tail * vals[-1]) / T**2)


def wavefront_guard_time(expansion: PacketExpansion, grid: XGrid, spread: float = 6.0) -> float:
    """Last time the packet support stays inside 0.8 of the half box.

    The support is a ball around x0 + c t of radius ``spread`` times the
    position width plus (max|grad lambda| - |c|) t.
    """
    prof = expansion.spec.profile
    c = expansion.group_velocity()
    vmax = expansion.max_speed()
    limit = 0.8 * grid.L / 2
    rel = prof.x0 - grid.center

    def inside(t):
        width = np.sqrt(prof.s**2 + (t / prof.s) ** 2)
        r = spread * width + (vmax - np.linalg.norm(c)) * t
        pos = rel + c * t
        return bool(np.all(np.abs(pos) + r <= limit))

    if not inside(0.0):
        return 0.0
    lo, hi = 0.0, 1.0
    while inside(hi):
        lo, hi = hi, 2 * hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if inside(mid) else (lo, mid)
    return lo


def self_convergence_order(psi0: FieldState, potential: PotentialSpec, coupling: float, dt: float, t: float) -> dict:
    """Observed order from runs at dt, dt/2, dt/4 to the same time t."""
    V = sampled_potential(potential, psi0.grid)
    runs = []
    for k in range(3):
        h = dt / 2**k
        n = int(round(t / h))
        runs.append(evolve_splitstep(psi0, potential, coupling, h, n, V))
    e1 = runs[0].distance(runs[1])
    e2 = runs[1].distance(runs[2])
    return {"e1": e1, "e2": e2, "order": float(np.log2(e1 / e2))}


def cross_validate(
    expansion: PacketExpansion,
    grid: XGrid,
    dt: float,
    checks: int = 8,
    t_end: float | None = None,
) -> dict:
    """||Psi_eigen(t) - Psi_splitstep(t)|| / ||Psi0|| at evenly spaced times.

    Times run up to the wavefront guard time unless ``t_end`` is given.
    """
    guard = wavefront_guard_time(expansion, grid)
    t_end = guard if t_end is None else t_end
    if t_end <= 0:
        raise GuardViolation("packet does not fit inside 0.8 of the half box")
    spec = expansion.spec
    V = sampled_potential(spec.potential, grid)
    psi = expansion.field(grid, 0.0)
    norm0 = psi.norm()
    n_per = max(1, int(np.ceil(t_end / checks / dt)))
    h = t_end / checks / n_per
    times, errs = [], []
    for i in range(1, checks + 1):
        psi = evolve_splitstep(psi, spec.potential, spec.coupling, h, n_per, V)
        t = i * t_end / checks
        ref = expansion.field(grid, t)
        times.append(t)
        errs.append(ref.distance(FieldState(psi.values, grid, t)) / norm0)
    return {"times": np.array(times), "relerr": np.array(errs), "guard_time": guard, "max_relerr": float(max(errs))}
