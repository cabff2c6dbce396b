import numpy as np
import pytest

from cpqt.errors import (
    DarkStateError,
    DimensionMismatchError,
    NotHermitianError,
    NotPureError,
    WeightUnderflowError,
)
from cpqt.operators import (
    KET_E,
    KET_G,
    SIGMA_MINUS,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    bloch,
    check_density_operator,
    dissipator,
    fidelity_to_pure,
    heisenberg_dissipator,
    liouvillian_matrix,
    liouvillian_propagate,
    normalize,
    pure_state,
    purity,
    superop_g,
    superop_h,
    unitary_of_hamiltonian,
    unvec,
    vec,
)

from conftest import random_density, random_operator

EXCITED = pure_state(KET_E)
GROUND = pure_state(KET_G)
PLUS = pure_state(KET_E + KET_G)
MIXED = 0.5 * np.eye(2, dtype=complex)


class TestDissipator:
    def test_identity_lindblad_cancels(self, rng):
        rho = random_density(rng)
        assert np.allclose(dissipator(np.eye(2), rho), 0.0, atol=1e-14)

    def test_excited_state_decay(self):
        out = dissipator(SIGMA_MINUS, EXCITED)
        assert np.allclose(out, GROUND - EXCITED, atol=1e-14)

    def test_maximally_mixed(self):
        # direct 2x2 algebra: sm (I/2) sp = |g><g|/2, {sp sm, I/2} = |e><e|
        out = dissipator(SIGMA_MINUS, MIXED)
        assert np.allclose(out, np.diag([-0.5, 0.5]), atol=1e-14)

    def test_traceless_hermitian_property(self, rng):
        for _ in range(50):
            a = random_operator(rng)
            rho = random_density(rng)
            out = dissipator(a, rho)
            assert abs(np.trace(out)) < 1e-12
            assert np.allclose(out, out.conj().T, atol=1e-12)

    def test_adjoint_pairing(self, rng):
        for _ in range(20):
            a = random_operator(rng)
            rho = random_density(rng)
            x = random_operator(rng)
            x = x + x.conj().T
            lhs = np.trace(dissipator(a, rho) @ x)
            rhs = np.trace(rho @ heisenberg_dissipator(a, x))
            assert abs(lhs - rhs) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            dissipator(np.eye(3), MIXED)


class TestNormalizedSuperops:
    def test_g_collapse_from_excited(self):
        assert np.allclose(superop_g(SIGMA_MINUS, EXCITED), GROUND - EXCITED, atol=1e-14)

    def test_g_unitary(self, rng):
        theta = 0.37
        u = unitary_of_hamiltonian(SIGMA_Y, theta)
        rho = random_density(rng)
        assert np.allclose(superop_g(u, rho), u @ rho @ u.conj().T - rho, atol=1e-13)

    def test_g_dark_state_raises(self):
        with pytest.raises(DarkStateError):
            superop_g(SIGMA_MINUS, GROUND)

    def test_h_annihilates_ground(self):
        assert np.allclose(superop_h(SIGMA_MINUS, GROUND), 0.0, atol=1e-14)

    def test_h_identity_operator(self, rng):
        assert np.allclose(superop_h(np.eye(2), random_density(rng)), 0.0, atol=1e-13)

    def test_h_plus_state_frozen(self):
        # hand computation: sm rho + rho sp - rho at rho = |+><+| gives diag(-1/2, 1/2)
        out = superop_h(SIGMA_MINUS, PLUS)
        assert np.allclose(out, np.diag([-0.5, 0.5]), atol=1e-14)

    def test_h_trace_zero(self, rng):
        for _ in range(20):
            out = superop_h(random_operator(rng), random_density(rng))
            assert abs(np.trace(out)) < 1e-12
            assert np.allclose(out, out.conj().T, atol=1e-12)


class TestMetrics:
    def test_purity_pure(self, rng):
        assert purity(random_density(rng, pure=True)) == pytest.approx(1.0, abs=1e-12)

    def test_purity_mixed(self):
        assert purity(MIXED) == pytest.approx(0.5, abs=1e-14)
        assert purity(np.diag([0.75, 0.25])) == pytest.approx(0.625, abs=1e-14)

    def test_fidelity_identical(self):
        assert fidelity_to_pure(PLUS, PLUS) == pytest.approx(1.0, abs=1e-12)

    def test_fidelity_orthogonal(self):
        assert fidelity_to_pure(EXCITED, GROUND) == pytest.approx(0.0, abs=1e-14)

    def test_fidelity_mixed_vs_pure(self, rng):
        assert fidelity_to_pure(MIXED, random_density(rng, pure=True)) == pytest.approx(0.5, abs=1e-12)

    def test_fidelity_requires_pure_reference(self):
        with pytest.raises(NotPureError):
            fidelity_to_pure(EXCITED, MIXED)

    def test_bloch_cardinal_states(self):
        assert bloch(EXCITED) == pytest.approx((0.0, 0.0, 1.0), abs=1e-14)
        assert bloch(GROUND) == pytest.approx((0.0, 0.0, -1.0), abs=1e-14)
        assert bloch(MIXED) == pytest.approx((0.0, 0.0, 0.0), abs=1e-14)

    def test_bloch_dimension(self):
        with pytest.raises(DimensionMismatchError):
            bloch(np.eye(3) / 3)


class TestNormalize:
    def test_scaled_projector(self):
        rho, tr = normalize(2.0 * EXCITED)
        assert tr == pytest.approx(2.0)
        assert np.allclose(rho, EXCITED)

    def test_already_normalized(self, rng):
        rho0 = random_density(rng)
        rho, tr = normalize(rho0)
        assert tr == pytest.approx(1.0, abs=1e-14)
        assert np.allclose(rho, rho0)

    def test_zero_matrix_raises(self):
        with pytest.raises(WeightUnderflowError):
            normalize(np.zeros((2, 2)))


def _su2_closed_form(h, dt):
    """Independent 2x2 oracle: exp(-i(a I + n.sigma) dt) in closed form."""
    a = 0.5 * np.trace(h).real
    n = h - a * np.eye(2)
    nx = n[0, 1].real
    ny = -n[0, 1].imag
    nz = n[0, 0].real
    norm = np.sqrt(nx * nx + ny * ny + nz * nz)
    if norm < 1e-300:
        return np.exp(-1j * a * dt) * np.eye(2)
    unit = (nx * SIGMA_X + ny * SIGMA_Y + nz * SIGMA_Z) / norm
    return np.exp(-1j * a * dt) * (
        np.cos(norm * dt) * np.eye(2) - 1j * np.sin(norm * dt) * unit
    )


class TestUnitary:
    def test_zero_hamiltonian(self):
        assert np.allclose(unitary_of_hamiltonian(np.zeros((2, 2)), 0.3), np.eye(2))

    def test_half_period_rabi(self):
        # Omega*dt = pi: cos(pi/2) I - i sin(pi/2) sx = -i sx
        omega = 2.0
        u = unitary_of_hamiltonian(0.5 * omega * SIGMA_X, np.pi / omega * 1.0)
        assert np.allclose(u, -1j * SIGMA_X, atol=1e-12)

    def test_small_step_closed_form(self):
        omega, dt = 3.0, 5e-3
        u = unitary_of_hamiltonian(0.5 * omega * SIGMA_X, dt)
        theta = 0.5 * omega * dt
        expected = np.cos(theta) * np.eye(2) - 1j * np.sin(theta) * SIGMA_X
        assert np.allclose(u, expected, atol=1e-14)

    def test_agrees_with_su2_oracle(self, rng):
        for _ in range(20):
            h = random_operator(rng)
            h = h + h.conj().T
            dt = rng.uniform(0.001, 2.0)
            assert np.allclose(unitary_of_hamiltonian(h, dt), _su2_closed_form(h, dt), atol=1e-12)

    def test_composition_law(self, rng):
        h = random_operator(rng)
        h = h + h.conj().T
        u1 = unitary_of_hamiltonian(h, 0.013)
        u2 = unitary_of_hamiltonian(h, 0.045)
        u12 = unitary_of_hamiltonian(h, 0.058)
        assert np.max(np.abs(u1 @ u2 - u12)) < 1e-11

    def test_unitarity(self, rng):
        h = random_operator(rng, scale=4.0)
        h = h + h.conj().T
        u = unitary_of_hamiltonian(h, 0.7)
        assert np.max(np.abs(u.conj().T @ u - np.eye(2))) < 1e-12

    def test_non_hermitian_rejected(self, rng):
        with pytest.raises(NotHermitianError):
            unitary_of_hamiltonian(SIGMA_MINUS, 0.1)


class TestKrausInvariants:
    def test_positivity_preserved(self, rng):
        for _ in range(100):
            m = random_operator(rng, scale=1.5)
            rho = random_density(rng) * rng.uniform(0.1, 3.0)
            out = m @ rho @ m.conj().T
            assert np.allclose(out, out.conj().T, atol=1e-12)
            assert np.linalg.eigvalsh(0.5 * (out + out.conj().T)).min() >= -1e-10

    def test_pure_states_stay_pure(self, rng):
        for _ in range(100):
            m = random_operator(rng)
            p = random_density(rng, pure=True)
            out = m @ p @ m.conj().T
            tr = np.trace(out).real
            if tr < 1e-12:
                continue
            assert purity(out / tr) == pytest.approx(1.0, abs=1e-12)


def _rk4_master_equation(h, lindblads, rho0, t, steps=50000):
    """Independent Runge-Kutta oracle for the master equation."""

    def deriv(rho):
        out = -1j * (h @ rho - rho @ h)
        for a in lindblads:
            n = a.conj().T @ a
            out += a @ rho @ a.conj().T - 0.5 * (n @ rho + rho @ n)
        return out

    rho = rho0.astype(complex)
    dt = t / steps
    for _ in range(steps):
        k1 = deriv(rho)
        k2 = deriv(rho + 0.5 * dt * k1)
        k3 = deriv(rho + 0.5 * dt * k2)
        k4 = deriv(rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return rho


class TestLiouvillian:
    def test_pure_decay(self):
        out = liouvillian_propagate(np.zeros((2, 2)), [SIGMA_MINUS], EXCITED, 1.0)
        assert out[0, 0].real == pytest.approx(np.exp(-1.0), abs=1e-10)

    def test_time_zero(self, rng):
        rho = random_density(rng)
        assert np.allclose(liouvillian_propagate(SIGMA_X, [SIGMA_MINUS], rho, 0.0), rho)

    def test_against_rk4_oracle(self):
        h = 0.5 * 3.0 * SIGMA_X
        out = liouvillian_propagate(h, [SIGMA_MINUS], GROUND, 5.0)
        expected = _rk4_master_equation(h, [SIGMA_MINUS], GROUND, 5.0)
        assert np.max(np.abs(out - expected)) < 1e-8

    def test_trace_and_positivity(self, rng):
        h = random_operator(rng)
        h = h + h.conj().T
        a = random_operator(rng)
        rho = random_density(rng)
        out = liouvillian_propagate(h, [a], rho, 2.0)
        assert abs(np.trace(out).real - 1.0) < 1e-10
        assert np.linalg.eigvalsh(out).min() > -1e-10

    def test_zero_lindblads_is_unitary_conjugation(self, rng):
        h = random_operator(rng)
        h = h + h.conj().T
        rho = random_density(rng)
        t = 1.7
        u = unitary_of_hamiltonian(h, t)
        out = liouvillian_propagate(h, [], rho, t)
        assert np.max(np.abs(out - u @ rho @ u.conj().T)) < 1e-10

    def test_vec_round_trip(self, rng):
        a = random_operator(rng)
        assert np.allclose(unvec(vec(a)), a)

    def test_liouvillian_matrix_action(self, rng):
        h = random_operator(rng)
        h = h + h.conj().T
        a = random_operator(rng)
        rho = random_density(rng)
        direct = -1j * (h @ rho - rho @ h) + dissipator(a, rho)
        via_matrix = unvec(liouvillian_matrix(h, [a]) @ vec(rho))
        assert np.allclose(direct, via_matrix, atol=1e-12)


class TestDensityValidation:
    def test_valid_state_passes(self, rng):
        check_density_operator(random_density(rng))

    def test_non_hermitian_rejected(self):
        with pytest.raises(NotHermitianError):
            check_density_operator(np.array([[0.5, 0.1], [0.3, 0.5]], dtype=complex))

    def test_trace_deviation_rejected(self):
        with pytest.raises(ValueError):
            check_density_operator(1.1 * MIXED)

    def test_negative_eigenvalue_rejected(self):
        with pytest.raises(ValueError):
            check_density_operator(np.diag([1.2, -0.2]).astype(complex))

    def test_unnormalized_mode(self):
        check_density_operator(3.0 * MIXED, normalized=False)
