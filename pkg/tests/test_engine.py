import numpy as np
import pytest

from cpqt.channels import DiffusiveChannel, JumpChannel, SchemeOrder
from cpqt.engine import (
    ChannelAssignment,
    MeasurementRecord,
    SystemSpec,
    draw_streams,
    euler_step,
    run_trajectory,
    run_true_ensemble,
    substream,
    true_step,
    unconditioned_step,
)
from cpqt.errors import DimensionMismatchError
from cpqt.operators import (
    KET_E,
    KET_G,
    SIGMA_MINUS,
    SIGMA_X,
    liouvillian_propagate,
    pure_state,
    purity,
    unitary_of_hamiltonian,
)

EXCITED = pure_state(KET_E)
GROUND = pure_state(KET_G)


def two_channel_spec(
    omega=3.0,
    upsilon=1.0,
    eta=0.5,
    phi=0.0,
    dt=5e-3,
    t_final=5.0,
    seed=7,
    rho0=None,
    counts_role="observed",
    homodyne_role="observed",
):
    gamma = upsilon * (1 - eta)
    big_gamma = upsilon * eta
    return SystemSpec(
        hamiltonian=0.5 * omega * SIGMA_X,
        channels=(
            ChannelAssignment(JumpChannel(np.sqrt(gamma) * SIGMA_MINUS, gamma), counts_role),
            ChannelAssignment(DiffusiveChannel(np.sqrt(big_gamma) * SIGMA_MINUS, phi), homodyne_role),
        ),
        dt=dt,
        t_final=t_final,
        rng_seed=seed,
        rho0=GROUND if rho0 is None else rho0,
    )


class TestSpecValidation:
    def test_fractional_steps_rejected(self):
        with pytest.raises(ValueError):
            two_channel_spec(dt=3e-3, t_final=1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            SystemSpec(
                hamiltonian=np.eye(3),
                channels=(ChannelAssignment(JumpChannel(SIGMA_MINUS, 1.0), "observed"),),
                dt=1e-2,
                t_final=1.0,
                rng_seed=0,
                rho0=np.eye(3) / 3,
            )

    def test_zero_rate_with_nonzero_operator(self):
        with pytest.raises(ValueError):
            SystemSpec(
                hamiltonian=np.zeros((2, 2)),
                channels=(ChannelAssignment(JumpChannel(SIGMA_MINUS, 0.0), "observed"),),
                dt=1e-2,
                t_final=1.0,
                rng_seed=0,
                rho0=GROUND,
            )

    def test_counts_record_validation(self):
        with pytest.raises(ValueError):
            MeasurementRecord(0, "counts", np.array([0, 2, 1]))


class TestRandomness:
    def test_substream_reproducibility(self):
        a = substream(42, 3).random(8)
        b = substream(42, 3).random(8)
        c = substream(42, 4).random(8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_draw_layout_blocks(self):
        spec = two_channel_spec(t_final=0.05, dt=5e-3)
        single = draw_streams(spec, 0, 1, stream_offset=5)
        batch = draw_streams(spec, 0, 3, stream_offset=3)
        # member 2 of the batch is stream 5, identical to the single draw
        for k in range(len(spec.channels)):
            assert np.array_equal(batch[k][2], single[k][0])


class TestTrueStepping:
    def test_dark_state_fixed_point(self):
        spec = two_channel_spec(omega=0.0, eta=0.0, t_final=1.0)
        traj = run_trajectory(spec, "true")
        assert np.allclose(traj.states, GROUND, atol=1e-14)
        assert traj.records[0].values.sum() == 0

    def test_purity_stays_one(self):
        for eta in (0.0, 1.0, 0.5):
            spec = two_channel_spec(eta=eta, t_final=5.0)
            traj = run_trajectory(spec, "true")
            purs = np.einsum("tij,tji->t", traj.states, traj.states).real
            assert np.abs(purs - 1.0).max() <= 1e-12

    def test_forced_jump_collapses_to_ground(self):
        spec = two_channel_spec(eta=0.0, omega=0.0, rho0=EXCITED, t_final=1.0)
        # draw below the jump probability for the counting channel
        rho, outs = true_step(EXCITED, spec, [0.0, 0.12])
        assert outs[0] == 1.0
        assert np.allclose(rho, GROUND, atol=1e-14)

    def test_trace_one_every_step(self):
        spec = two_channel_spec(t_final=2.0, seed=3)
        traj = run_trajectory(spec, "true")
        traces = np.einsum("tii->t", traj.states).real
        assert np.abs(traces - 1.0).max() <= 1e-12

    def test_determinism(self):
        spec = two_channel_spec(t_final=1.0, seed=9)
        t1 = run_trajectory(spec, "true")
        t2 = run_trajectory(spec, "true")
        assert np.array_equal(t1.states, t2.states)
        for r1, r2 in zip(t1.records, t2.records):
            assert np.array_equal(r1.values, r2.values)

    def test_batch_matches_single(self):
        spec = two_channel_spec(t_final=0.5, seed=5)
        batch_states, batch_records, _ = run_true_ensemble(spec, 3)
        single_states, single_records, _ = run_true_ensemble(spec, 1, stream_offset=1)
        assert np.array_equal(batch_states[1], single_states[0])
        for k in range(len(spec.channels)):
            assert np.array_equal(batch_records[1][k].values, single_records[0][k].values)

    def test_warns_on_large_jump_probability(self):
        spec = two_channel_spec(
            omega=0.0, upsilon=4.0, eta=0.0, dt=0.1, t_final=1.0, rho0=EXCITED
        )
        with pytest.warns(UserWarning, match="jump probability"):
            run_true_ensemble(spec, 2)

    def test_zero_steps(self):
        spec = two_channel_spec(t_final=0.0)
        traj = run_trajectory(spec, "true")
        assert traj.states.shape == (1, 2, 2)
        assert np.allclose(traj.states[0], GROUND)


class TestEulerStepping:
    def test_no_dynamics_leaves_state(self):
        spec = SystemSpec(
            hamiltonian=np.zeros((2, 2)),
            channels=(
                ChannelAssignment(JumpChannel(np.zeros((2, 2)), 0.0), "observed"),
                ChannelAssignment(DiffusiveChannel(np.zeros((2, 2)), 0.0), "observed"),
            ),
            dt=5e-3,
            t_final=1.0,
            rng_seed=0,
            rho0=EXCITED,
        )
        rho, _ = euler_step(EXCITED, spec, [0.9, 0.3])
        assert np.allclose(rho, EXCITED, atol=1e-15)

    def test_forced_jump_term(self):
        spec = two_channel_spec(eta=0.0, omega=0.0, rho0=EXCITED, t_final=1.0)
        rho, outs = euler_step(EXCITED, spec, [0.0, 0.0])
        # collapse contribution |g><g| - |e><e| on top of the drift
        assert outs[0] == 1.0
        assert rho[1, 1].real > 0.9

    def test_trace_preserved(self):
        spec = two_channel_spec(t_final=1.0, seed=21)
        traj = run_trajectory(spec, "euler")
        traces = np.einsum("tii->t", traj.states).real
        assert np.abs(traces - 1.0).max() < 1e-10

    def test_purity_exceeds_one_on_typical_seed(self):
        spec = two_channel_spec(eta=0.5, t_final=5.0, seed=1)
        traj = run_trajectory(spec, "euler")
        purs = np.einsum("tij,tji->t", traj.states, traj.states).real
        assert purs.max() > 1.0


class TestUnconditioned:
    def test_eigenstate_single_jump_channel(self):
        dt = 5e-3
        spec = SystemSpec(
            hamiltonian=np.zeros((2, 2)),
            channels=(ChannelAssignment(JumpChannel(SIGMA_MINUS, 1.0), "observed"),),
            dt=dt,
            t_final=1.0,
            rng_seed=0,
            rho0=EXCITED,
        )
        out = unconditioned_step(EXCITED, spec)
        # the second-order term vanishes on an eigenstate of c†c
        assert np.allclose(out, np.diag([1 - dt, dt]), atol=1e-15)

    def test_channels_off_reduces_to_unitary(self):
        spec = SystemSpec(
            hamiltonian=0.5 * 3.0 * SIGMA_X,
            channels=(
                ChannelAssignment(JumpChannel(np.zeros((2, 2)), 0.0), "observed"),
                ChannelAssignment(DiffusiveChannel(np.zeros((2, 2)), 0.0), "observed"),
            ),
            dt=5e-3,
            t_final=1.0,
            rng_seed=0,
            rho0=EXCITED,
        )
        v = unitary_of_hamiltonian(spec.hamiltonian, spec.dt)
        out = unconditioned_step(EXCITED, spec)
        assert np.allclose(out, v @ EXCITED @ v.conj().T, atol=1e-14)

    def test_trace_preserved_per_step(self):
        spec = two_channel_spec(t_final=1.0, rho0=EXCITED)
        rho = EXCITED
        for _ in range(50):
            rho = unconditioned_step(rho, spec)
            assert abs(np.trace(rho).real - 1.0) < 1e-12

    def test_local_consistency_with_exact_propagator(self):
        # one step from the exact solution stays within the local tolerance
        spec = two_channel_spec(t_final=5.0, rho0=EXCITED)
        lindblads = spec.lindblad_operators()
        worst = 0.0
        for t in np.linspace(0.0, 4.5, 10):
            rho_t = liouvillian_propagate(spec.hamiltonian, lindblads, EXCITED, t)
            rho_next = liouvillian_propagate(spec.hamiltonian, lindblads, EXCITED, t + spec.dt)
            worst = max(worst, np.abs(unconditioned_step(rho_t, spec) - rho_next).max())
        assert worst < 5e-5


class TestEnsembleAverages:
    def test_ensemble_tracks_unconditioned(self):
        spec = two_channel_spec(t_final=2.0, seed=17, rho0=EXCITED)
        m = 500
        _, _, mean_states = run_true_ensemble(spec, m, store_states=False)
        rho = EXCITED
        dev = 0.0
        for t in range(spec.n_steps):
            rho = unconditioned_step(rho, spec)
            dev = max(dev, np.abs(mean_states[t + 1] - rho).max())
        assert dev <= 4.0 / np.sqrt(m)
