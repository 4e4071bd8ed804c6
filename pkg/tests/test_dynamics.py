import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gamma, gammainc

from qplab.dynamics import (
    GuardViolation,
    WavePacketSpec,
    abel_mean,
    abel_weights,
    cesaro_mean,
    energy,
    evolve_splitstep,
    expand,
    fit_beta,
    geometric_T_grid,
    default_times,
    second_moment,
    self_convergence_order,
    transport,
)
from qplab.fields import FieldState, GaussianPacket, XGrid
from qplab.potential import PotentialSpec

from oracles import free_gaussian, gaussian_norm2


def _abel_power(m, T):
    """(2/T) int_0^inf exp(-2t/T) t^m dt."""
    return gamma(m + 1) * (T / 2) ** m


def _abel_power_truncated(m, T, a):
    """(2/T) int_0^a exp(-2t/T) t^m dt via the regularized incomplete Gamma."""
    return _abel_power(m, T) * gammainc(m + 1, 2 * a / T)


@pytest.mark.parametrize("T", [5.0, 10.0, 40.0])
@pytest.mark.parametrize("m", [0, 1, 2])
def test_abel_mean_of_polynomials(T, m):
    t = np.linspace(0.0, 5 * T, 4001)
    val, tail = abel_mean(t, t**m + 3.0, T)
    body = _abel_power_truncated(m, T, t[-1]) + 3.0 * (1 - np.exp(-10.0))
    assert val - tail == pytest.approx(body, rel=1e-5)
    # the envelope tail bounds the true remainder, exactly for m <= 2 polynomials that are ballistic
    true_tail = _abel_power(m, T) + 3.0 - body
    assert tail >= true_tail * (1 - 1e-9)
    if m != 1:
        assert val == pytest.approx(_abel_power(m, T) + 3.0, rel=1e-5)


def test_constant_moment_is_not_ballistic():
    from qplab.dynamics import finish_record

    t = default_times(200.0)
    rec = finish_record(t, np.full(t.size, 5.0), geometric_T_grid(), 1.0, np.array([24.0, 0.0]))
    assert rec.verdict == "not ballistic"
    assert rec.beta == pytest.approx(0.0, abs=1e-9)


def test_abel_weights_sum():
    t = np.linspace(0.0, 20.0, 41)
    W, tail = abel_weights(t, 4.0)
    assert W.sum() + tail == pytest.approx(1.0, rel=1e-14)
    assert tail == pytest.approx(np.exp(-10.0))
    assert np.all(W > 0)


def test_cesaro_of_polynomials():
    t = np.linspace(0.0, 12.0, 1201)
    assert cesaro_mean(t, t**2, 10.0) == pytest.approx(100.0 / 3, rel=1e-4)
    assert cesaro_mean(t, 2 + t, 10.0) == pytest.approx(7.0)


def test_time_guards():
    t = np.linspace(0.0, 10.0, 11)
    with pytest.raises(GuardViolation):
        abel_mean(t, t**2, 5.0)
    with pytest.raises(GuardViolation):
        cesaro_mean(t, t**2, 20.0)
    with pytest.raises(ValueError):
        abel_mean(t[1:], t[1:] ** 2, 1.0)


@pytest.mark.parametrize("power,beta", [(2, 1.0), (1, 0.5)])
def test_fit_beta_on_power_laws(power, beta):
    T = geometric_T_grid()
    assert fit_beta(T, 7.0 * T**power)["beta"] == pytest.approx(beta)


def test_geometric_grid():
    T = geometric_T_grid(5.0, 40.0, np.sqrt(2))
    assert T.size == 7
    assert T[0] == 5.0 and T[-1] == pytest.approx(40.0)


def test_default_times():
    t = default_times(100.0)
    assert t[0] == 0 and t[-1] == 100.0
    assert np.all(np.diff(t) > 0)
    assert np.diff(t)[0] == 0.5 and np.diff(t)[-1] <= 2.5


def _free_packet_setup(desk_potential, t):
    pk = GaussianPacket(np.array([2.0, 1.0]), 1.5, np.array([0.5, -1.0]))
    grid = XGrid.around(128, 80.0, 2, carrier=pk.k0, center=pk.x0 + 2 * t * pk.k0)
    return pk, grid


@pytest.mark.parametrize("t", [0.5, 4.0])
def test_splitstep_free_is_exact(desk_potential, t):
    free = PotentialSpec.free(desk_potential.freq, 1)
    pk, grid = _free_packet_setup(desk_potential, 0.0)
    grid = grid.moved(pk.x0 + t * pk.k0)
    psi0 = FieldState(pk.values(grid), grid)
    n = int(np.ceil(t / 4e-3))
    out = evolve_splitstep(psi0, free, 0.0, t / n, n)
    pts = np.stack(np.meshgrid(grid.axis(0), grid.axis(1), indexing="ij"), axis=-1)
    ref = free_gaussian(pts, t, pk.k0, pk.s, pk.x0)
    assert np.max(np.abs(out.physical() - ref)) < 1e-9


@settings(max_examples=10, deadline=None)
@given(dt=st.floats(1e-3, 5e-3), steps=st.integers(1, 40))
def test_splitstep_is_unitary(desk_potential, dt, steps):
    pk = GaussianPacket(np.array([1.0, 0.0]), 1.0)
    grid = XGrid.around(32, 20.0, 2, carrier=pk.k0)
    psi0 = FieldState(pk.values(grid), grid)
    out = evolve_splitstep(psi0, desk_potential, 0.3, dt, steps)
    assert out.norm() == pytest.approx(psi0.norm(), rel=1e-12)
    assert out.t == pytest.approx(dt * steps)


def test_splitstep_conserves_energy(desk_potential):
    pk = GaussianPacket(np.array([1.0, 0.0]), 1.0)
    grid = XGrid.around(64, 30.0, 2, carrier=pk.k0)
    psi0 = FieldState(pk.values(grid), grid)
    e0 = energy(psi0, desk_potential, 0.3)
    out = evolve_splitstep(psi0, desk_potential, 0.3, 2e-3, 500)
    assert energy(out, desk_potential, 0.3) == pytest.approx(e0, rel=1e-4)


def test_splitstep_guards(desk_potential):
    grid = XGrid(64, 10.0)
    psi0 = FieldState(np.ones(grid.shape, complex), grid)
    with pytest.raises(GuardViolation):
        evolve_splitstep(psi0, desk_potential, 0.05, 0.1, 1)
    with pytest.raises(GuardViolation):
        evolve_splitstep(psi0, desk_potential, 100.0, 1e-4, 1)
    with pytest.raises(ValueError):
        evolve_splitstep(psi0, desk_potential, 0.05, -1e-4, 1)


def test_self_convergence_is_second_order(desk_potential):
    pk = GaussianPacket(np.array([2.0, 0.0]), 1.5)
    grid = XGrid.around(64, 40.0, 2, carrier=pk.k0)
    psi0 = FieldState(pk.values(grid), grid)
    res = self_convergence_order(psi0, desk_potential, 0.5, 0.005, 2.0)
    assert res["order"] == pytest.approx(2.0, abs=0.3)


def test_second_moment_of_gaussian():
    pk = GaussianPacket(np.array([0.0, 0.0]), 1.3, np.array([2.0, -1.0]))
    grid = XGrid(128, 40.0)
    st_ = FieldState(pk.values(grid), grid)
    # per-axis variance s^2 about x0
    m = second_moment(st_, origin=pk.x0)
    assert m == pytest.approx(2 * 1.3**2 * gaussian_norm2(1.3, 2), rel=1e-8)
    inner = second_moment(st_, origin=pk.x0, radius=1.0)
    assert 0 < inner < m


@pytest.fixture(scope="module")
def free_expansion(desk_potential):
    free = PotentialSpec.free(desk_potential.freq, 1)
    spec = WavePacketSpec(GaussianPacket(np.array([2.0, 0.0]), 2.0), 0.0, free, 0.0)
    grid = XGrid.around(256, 400.0, 2, carrier=spec.k_c)
    return expand(spec, grid.dk), grid


def test_free_expansion_is_the_packet(free_expansion):
    exp, grid = free_expansion
    pk = exp.spec.profile
    t = 6.0
    g = grid.moved(pk.x0 + 2 * t * pk.k0)
    st_ = exp.field(g, t)
    pts = np.stack(np.meshgrid(g.axis(0), g.axis(1), indexing="ij"), axis=-1)
    ref = free_gaussian(pts, t, pk.k0, pk.s, pk.x0)
    err = np.sqrt(g.cell_volume * np.sum(np.abs(st_.physical() - ref) ** 2)) / np.sqrt(pk.norm2())
    assert err < 3 * np.sqrt(pk.mass_outside(6 * pk.momentum_std))
    assert np.allclose(exp.group_velocity(), 2 * pk.k0, atol=2 * grid.dk)


def test_free_transport_moments(free_expansion):
    exp, grid = free_expansion
    pk = exp.spec.profile
    rec = transport(exp, grid, T_grid=[4.0, 8.0], times=np.arange(0.0, 40.05, 0.1))
    n2 = pk.norm2()
    s = pk.s
    # free spreading: |x0 + 2 k0 t|^2 + d (s^2 + t^2 / s^2)
    c0 = 2 * s**2
    c2 = 4 * pk.k0 @ pk.k0 + 2 / s**2
    assert np.allclose(rec.m2, n2 * (c0 + c2 * rec.times**2), rtol=1e-5)
    for T, a in zip(rec.T, rec.abel):
        assert a == pytest.approx(n2 * (c0 + c2 * _abel_power(2, T)), rel=1e-3)
    assert rec.verdict == "ballistic"
    assert rec.beta == pytest.approx(1.0, abs=0.15)


def test_edge_guard_stops_runaway(free_expansion):
    exp, grid = free_expansion
    with pytest.raises(GuardViolation):
        transport(exp, grid, T_grid=[40.0], co_moving=False)


def test_packet_spec_validation(desk_potential):
    pk = GaussianPacket(np.array([12.0, 0.0]), 3.0)
    with pytest.raises(ValueError):
        WavePacketSpec(pk, -0.1, desk_potential, 0.05)
    with pytest.raises(ValueError):
        WavePacketSpec(pk, 0.1, desk_potential, 0.05, cutoff="middle")
