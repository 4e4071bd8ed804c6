import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qplab.operator import (
    Criterion,
    RejectReason,
    Rejection,
    build_operator,
    eigenfunction_value,
    extract,
    extract_pair,
    ladder_converge,
    select_pair,
    spectrum,
    u_sup_bound,
)
from qplab.potential import PotentialSpec, eval_potential, frequency_of

from oracles import laplacian_fd, pt2_eigenvalue


def test_operator_shape_and_hermitian(desk_potential):
    op = build_operator([12.0, 0.0], 2, desk_potential, 0.05)
    H = op.matrix if hasattr(op, "matrix") else op.H
    assert H.shape == (125, 125)
    assert np.allclose(H, H.conj().T)


def test_spectrum_matches_dense_solver(desk_potential):
    op = build_operator([7.3, -4.1], 1, desk_potential, 0.2)
    H = op.matrix if hasattr(op, "matrix") else op.H
    assert np.allclose(np.sort(spectrum(op)), np.linalg.eigvalsh(H), atol=1e-9)


def test_free_pair_is_plane_wave(desk_potential):
    free = PotentialSpec.free(desk_potential.freq, 1)
    pair = select_pair(build_operator([12.0, 0.0], 2, free, 0.0))
    assert pair.lam == pytest.approx(144.0, abs=1e-12)
    assert pair.coeff((0, 0, 0)) == 1
    assert u_sup_bound(pair) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("k", [[12.0, 0.0], [-6.6, 9.2], [15.0, 4.0]])
def test_second_order_perturbation(desk_potential, k):
    eps = 0.02
    pair = select_pair(build_operator(k, 3, desk_potential, eps))
    pt2 = pt2_eigenvalue(k, desk_potential, eps)
    # the remainder is third order in eps
    assert abs(pair.lam - pt2) < 50 * eps**3


def test_first_order_corrector_matches_coefficients(desk_potential):
    k = np.array([-6.6, 9.2])
    eps = 0.01
    pair = select_pair(build_operator(k, 2, desk_potential, eps))
    for n, v in desk_potential.coeffs.items():
        w = frequency_of(np.array(n), desk_potential.freq)
        c1 = eps * v / (k @ k - (k + w) @ (k + w))
        assert pair.coeff(n) == pytest.approx(c1, rel=0.05)


def test_gradient_matches_finite_difference(desk_potential):
    k = np.array([-6.6, 9.2])
    pair = select_pair(build_operator(k, 2, desk_potential, 0.05))
    h = 1e-5
    fd = []
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        lp = select_pair(build_operator(k + e, 2, desk_potential, 0.05)).lam
        lm = select_pair(build_operator(k - e, 2, desk_potential, 0.05)).lam
        fd.append((lp - lm) / (2 * h))
    assert np.allclose(pair.gradient(), fd, rtol=1e-6)


def test_generalized_eigenfunction_residual(desk_potential, rng):
    """-Laplace U + eps V U - lambda U stays small relative to |U|."""
    k = np.array([-6.6, 9.2])
    eps = 0.05
    pair = select_pair(build_operator(k, 3, desk_potential, eps))
    freq = desk_potential.freq

    def U(x):
        return eigenfunction_value(pair, freq, x)

    x = rng.uniform(-20, 20, size=(12, 2))
    res = -laplacian_fd(U, x, 0.01) + eps * eval_potential(desk_potential, x) * U(x) - pair.lam * U(x)
    assert np.max(np.abs(res)) / np.min(np.abs(U(x))) < 1e-3


def test_rejection_near_first_order_resonance(desk_potential):
    w = frequency_of(np.array([1, 0, 0]), desk_potential.freq)
    perp = np.array([-w[1], w[0]]) / np.linalg.norm(w)
    k = -0.5 * w + 12.0 * perp  # |k|^2 = |k + w|^2 exactly
    pair = select_pair(build_operator(k, 2, desk_potential, 0.05))
    assert abs(pair.dominance - 0.5) < 0.05  # two plane waves mix evenly
    with pytest.raises(Rejection) as err:
        extract(k, 2, desk_potential, 0.05, Criterion(corrector_const=0.6))
    assert err.value.reason is RejectReason.DOMINANCE_FAILURE


def test_two_level_splitting_at_resonance(desk_potential):
    """On the plane |k| = |k + w| the pair splits by about 2 eps |V_n|."""
    n = (1, 0, 0)
    w = frequency_of(np.array(n), desk_potential.freq)
    perp = np.array([-w[1], w[0]]) / np.linalg.norm(w)
    k = -0.5 * w + 12.0 * perp
    eps = 0.01
    ev = np.sort(spectrum(build_operator(k, 2, desk_potential, eps)))
    near = ev[np.abs(ev - k @ k) < 0.1]
    assert near.size == 2
    split = near[1] - near[0]
    assert split == pytest.approx(2 * eps * abs(desk_potential.coeffs[n]), rel=0.05)


def test_extract_pair_floors(desk_potential):
    op = build_operator([12.0, 0.0], 2, desk_potential, 0.05)
    with pytest.raises(Rejection):
        extract_pair(op, gap_floor=1e6)
    with pytest.raises(Rejection):
        extract_pair(op, min_dominance=0.999999)


def test_criterion_floors():
    gap, dom = Criterion().floors([10.0, 0.0])
    assert gap == pytest.approx(0.01)
    assert dom == 0.5
    _, strict = Criterion(corrector_const=0.6).floors([20.0, 0.0])
    assert 0.99 < strict < 1.0


def test_ladder_drift_shrinks(desk_potential):
    rows = ladder_converge([-6.6, 9.2], desk_potential, 0.05, levels=(1, 2, 3))
    assert [r[0] for r in rows] == [1, 2, 3]
    assert rows[2][2] < rows[1][2]


def test_ladder_rejects_unsorted(desk_potential):
    with pytest.raises(ValueError):
        ladder_converge([12.0, 0.0], desk_potential, 0.05, levels=(3, 2))


@settings(max_examples=20, deadline=None)
@given(
    kx=st.floats(8, 20),
    ky=st.floats(-20, 20),
)
def test_selected_pair_invariants(desk_potential, kx, ky):
    pair = select_pair(build_operator([kx, ky], 1, desk_potential, 0.05))
    assert pair.coeff((0, 0, 0)) == pytest.approx(1.0)
    assert 0 < pair.dominance <= 1
    assert pair.gap >= 0
    assert pair.lam == pytest.approx(kx * kx + ky * ky + pair.shift)
    assert np.linalg.norm(pair.unit_coeffs()) == pytest.approx(1.0)
