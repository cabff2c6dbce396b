"""Step-by-step trajectory generation.

Four stepping modes share one per-step structure (exact unitary first,
then each monitoring channel in declared order):

* ``true``      - normalized states sampled with the physical outcome
                  statistics; pure states stay exactly pure.
* ``euler``     - the additive first-order baseline; intentionally not
                  projected back to valid states.
* ``hypothetical`` - unnormalized states that replay a stored observed
                  record while sampling the unobserved channel from its
                  ostensible distribution.
* ``unconditioned`` - deterministic propagation of the channel-averaged
                  second-order maps.

Randomness contract
-------------------
Every trajectory (or ensemble member) ``m`` draws from an independent
counter-based substream keyed by ``(rng_seed, stream_offset + m)``.  A
stream is consumed in a fixed layout: for each channel in declared order,
one whole array of per-step variates (uniforms for counting channels,
standard normals for homodyne channels).  The layout depends only on the
spec, so results are bit-identical however members are batched across
workers, and reruns with the same seed reproduce records exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .channels import (
    DiffusiveChannel,
    JumpChannel,
    SchemeOrder,
    diffusive_moment_arrays,
    diffusive_op,
    jump_ops,
    no_signal_op,
    series_unconditional_map,
)
from .errors import DimensionMismatchError, WeightUnderflowError
from .operators import (
    TRACE_FLOOR,
    dag,
    dissipator,
    hermitize,
    superop_g,
    superop_h,
    unitary_of_hamiltonian,
)

__all__ = [
    "ChannelAssignment",
    "SystemSpec",
    "MeasurementRecord",
    "Trajectory",
    "substream",
    "draw_streams",
    "true_step",
    "euler_step",
    "hypothetical_step",
    "unconditioned_step",
    "run_trajectory",
    "run_true_ensemble",
    "run_euler_trajectory",
    "run_hypothetical_batch",
    "HypotheticalBatchResult",
]

Role = Literal["observed", "unobserved"]

#: Ostensible jump rates driven from a filtered context are floored here so
#: the two-branch average map stays continuous through dark contexts.
LAMBDA_FLOOR = 1e-12

#: Steps whose physical jump probability exceeds this trigger a warning.
JUMP_PROB_WARN = 0.1


@dataclass(frozen=True)
class ChannelAssignment:
    """A monitoring channel together with who sees its record."""

    channel: JumpChannel | DiffusiveChannel
    role: Role = "observed"

    @property
    def is_jump(self) -> bool:
        return isinstance(self.channel, JumpChannel)


@dataclass(frozen=True)
class SystemSpec:
    """Immutable description of one simulation setup.

    ``channels`` are applied in declared order within each step, after the
    exact Hamiltonian unitary.  ``order`` selects the Kraus-operator order
    used for state updates; ``moment_order`` independently selects which
    current statistics the true-state sampler draws from (the first-order
    Gaussian is kept available as a baseline).
    """

    hamiltonian: np.ndarray
    channels: tuple[ChannelAssignment, ...]
    dt: float
    t_final: float
    rng_seed: int
    rho0: np.ndarray
    order: SchemeOrder = SchemeOrder.CPQT
    moment_order: SchemeOrder = SchemeOrder.CPQT

    def __post_init__(self) -> None:
        object.__setattr__(self, "hamiltonian", np.asarray(self.hamiltonian, dtype=complex))
        object.__setattr__(self, "rho0", np.asarray(self.rho0, dtype=complex))
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        steps = self.t_final / self.dt
        if self.t_final < 0 or abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("t_final must be a whole number of steps")
        d = self.hamiltonian.shape[0]
        for assignment in self.channels:
            if assignment.channel.dim != d:
                raise DimensionMismatchError("channel dimension does not match Hamiltonian")
            ch = assignment.channel
            if isinstance(ch, JumpChannel) and ch.lambda_ost <= 0 and np.any(ch.c != 0):
                raise ValueError("a counting channel with a nonzero operator needs a positive rate")
        if self.rho0.shape != (d, d):
            raise DimensionMismatchError("initial state dimension does not match Hamiltonian")

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def step_unitary(self) -> np.ndarray:
        return unitary_of_hamiltonian(self.hamiltonian, self.dt)

    def lindblad_operators(self) -> list[np.ndarray]:
        ops = []
        for a in self.channels:
            ops.append(a.channel.c if isinstance(a.channel, JumpChannel) else a.channel.b)
        return ops

    def observed_indices(self) -> list[int]:
        return [i for i, a in enumerate(self.channels) if a.role == "observed"]

    def unobserved_indices(self) -> list[int]:
        return [i for i, a in enumerate(self.channels) if a.role == "unobserved"]


@dataclass
class MeasurementRecord:
    """Per-step outcomes of one channel over the full grid."""

    channel_index: int
    kind: Literal["counts", "current"]
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        if self.kind == "counts" and self.values.size:
            bad = ~np.isin(self.values, (0, 1))
            if bad.any():
                raise ValueError("counts records may contain only 0 and 1")


@dataclass
class Trajectory:
    """States at step boundaries plus the records that produced them."""

    times: np.ndarray
    states: np.ndarray
    records: list[MeasurementRecord] = field(default_factory=list)
    normalized: bool = True


def substream(seed: int, stream: int) -> np.random.Generator:
    """Independent counter-based generator keyed by ``(seed, stream)``."""
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream & 0xFFFFFFFFFFFFFFFF)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def draw_streams(spec: SystemSpec, stream: int, n_members: int, stream_offset: int = 0) -> list[np.ndarray]:
    """Pre-draw the per-channel variate arrays for a block of members.

    Returns one ``(n_members, n_steps)`` array per channel in declared
    order, following the module-level randomness contract.  ``stream`` is
    the index of the first member.
    """
    n = spec.n_steps
    per_channel: list[list[np.ndarray]] = [[] for _ in spec.channels]
    for m in range(n_members):
        gen = substream(spec.rng_seed, stream_offset + stream + m)
        for k, assignment in enumerate(spec.channels):
            if assignment.is_jump:
                per_channel[k].append(gen.random(n))
            else:
                per_channel[k].append(gen.standard_normal(n))
    return [np.vstack(arrs) if arrs else np.empty((0, n)) for arrs in per_channel]


# ---------------------------------------------------------------------------
# batched two-sided products
# ---------------------------------------------------------------------------


def _conj_batch(op: np.ndarray, states: np.ndarray) -> np.ndarray:
    """``op @ rho @ op†`` over a stack of states."""
    return np.einsum("ij,mjk,lk->mil", op, states, op.conj(), optimize=True)


def _linear_op_batch(p_op: np.ndarray, q_op: np.ndarray, y: np.ndarray, states: np.ndarray) -> np.ndarray:
    """``(P + y Q) rho (P + y Q)†`` with a per-member scalar ``y``."""
    left = np.einsum("ij,mjk->mik", p_op, states) + y[:, None, None] * np.einsum(
        "ij,mjk->mik", q_op, states
    )
    return np.einsum("mik,jk->mij", left, p_op.conj()) + y[:, None, None] * np.einsum(
        "mik,jk->mij", left, q_op.conj()
    )


def _traces(states: np.ndarray) -> np.ndarray:
    return np.einsum("mii->m", states).real


def _hermitize_batch(states: np.ndarray) -> np.ndarray:
    return 0.5 * (states + states.conj().transpose(0, 2, 1))


# ---------------------------------------------------------------------------
# true (normalized, physical statistics) stepping
# ---------------------------------------------------------------------------


def _true_step_batch(
    states: np.ndarray,
    spec: SystemSpec,
    v_op: np.ndarray,
    step_draws: list[np.ndarray],
    outcome_sink: list[np.ndarray],
    warn_counter: list[int],
) -> np.ndarray:
    """Advance a stack of normalized states by one step, recording outcomes."""
    dt = spec.dt
    states = _conj_batch(v_op, states)
    for k, assignment in enumerate(spec.channels):
        ch = assignment.channel
        if isinstance(ch, JumpChannel):
            num = ch.coupling_number_op()
            probs = dt * np.einsum("ij,mji->m", num, states).real
            if np.any(probs > JUMP_PROB_WARN):
                warn_counter[0] += int(np.count_nonzero(probs > JUMP_PROB_WARN))
            jumped = step_draws[k] < probs
            m0, _ = jump_ops(ch, dt, spec.order) if ch.lambda_ost > 0 else (None, None)
            if m0 is None:
                # zero-rate channel: never jumps, identity no-jump action
                outcome_sink[k] = jumped.astype(np.int8)
                continue
            no_jump = _conj_batch(m0, states)
            with_jump = _conj_batch(ch.c, states)
            states = np.where(jumped[:, None, None], with_jump, no_jump)
            outcome_sink[k] = jumped.astype(np.int8)
        else:
            mu, sig = diffusive_moment_arrays(ch, states, dt, spec.moment_order)
            y = mu + sig * step_draws[k]
            p_op = no_signal_op(ch, dt, spec.order)
            q_op = (dt * np.exp(-1j * ch.phi)) * ch.b
            states = _linear_op_batch(p_op, q_op, y, states)
            outcome_sink[k] = y
        tr = _traces(states)
        if np.any(tr <= TRACE_FLOOR):
            raise WeightUnderflowError("normalization underflow in true stepping")
        states = states / tr[:, None, None]
    return _hermitize_batch(states)


def run_true_ensemble(
    spec: SystemSpec,
    n_members: int,
    *,
    stream_offset: int = 0,
    store_states: bool = True,
) -> tuple[np.ndarray, list[list[MeasurementRecord]], np.ndarray]:
    """Generate ``n_members`` independent true trajectories in one batch.

    Returns ``(states, records, mean_states)`` where ``states`` has shape
    ``(n_members, n_steps + 1, N, N)`` (empty when ``store_states`` is
    False), ``records`` holds per-member records in channel order, and
    ``mean_states`` is the running ensemble average at each step boundary.
    """
    n, d = spec.n_steps, spec.dim
    draws = draw_streams(spec, 0, n_members, stream_offset=stream_offset)
    v_op = spec.step_unitary()
    states = np.broadcast_to(spec.rho0, (n_members, d, d)).copy()
    all_states = (
        np.empty((n_members, n + 1, d, d), dtype=complex) if store_states else np.empty((n_members, 0, d, d))
    )
    mean_states = np.empty((n + 1, d, d), dtype=complex)
    outcomes = [np.empty((n_members, n)) for _ in spec.channels]
    if store_states:
        all_states[:, 0] = states
    mean_states[0] = states.mean(axis=0)
    warn_counter = [0]
    sink: list[np.ndarray] = [np.empty(0)] * len(spec.channels)
    for t in range(n):
        step_draws = [draws[k][:, t] for k in range(len(spec.channels))]
        states = _true_step_batch(states, spec, v_op, step_draws, sink, warn_counter)
        for k in range(len(spec.channels)):
            outcomes[k][:, t] = sink[k]
        if store_states:
            all_states[:, t + 1] = states
        mean_states[t + 1] = states.mean(axis=0)
    if warn_counter[0]:
        warnings.warn(
            f"physical jump probability exceeded {JUMP_PROB_WARN} on {warn_counter[0]} steps;"
            " consider a smaller dt",
            stacklevel=2,
        )
    records = []
    for m in range(n_members):
        member = []
        for k, assignment in enumerate(spec.channels):
            kind = "counts" if assignment.is_jump else "current"
            vals = outcomes[k][m].astype(np.int8) if kind == "counts" else outcomes[k][m]
            member.append(MeasurementRecord(k, kind, vals))
        records.append(member)
    return all_states, records, mean_states


def true_step(
    rho: np.ndarray, spec: SystemSpec, step_draws: Sequence[float]
) -> tuple[np.ndarray, list[float]]:
    """Single normalized step; ``step_draws`` holds one variate per channel.

    Scalar wrapper over the batched kernel so that single trajectories and
    ensembles follow identical code paths.
    """
    sink: list[np.ndarray] = [np.empty(0)] * len(spec.channels)
    out = _true_step_batch(
        rho[None, :, :].astype(complex),
        spec,
        spec.step_unitary(),
        [np.atleast_1d(np.asarray(dr)) for dr in step_draws],
        sink,
        [0],
    )
    return out[0], [float(s[0]) for s in sink]


# ---------------------------------------------------------------------------
# Euler baseline
# ---------------------------------------------------------------------------


def euler_step(
    rho: np.ndarray, spec: SystemSpec, step_draws: Sequence[float]
) -> tuple[np.ndarray, list[float]]:
    """Additive first-order update; intentionally not projected to positivity.

    The Hamiltonian commutator enters once; each counting channel adds its
    deterministic no-jump drift plus the normalized collapse term when a
    count fires, and each homodyne channel adds its deterministic drift
    plus the innovation term.
    """
    dt = spec.dt
    h = spec.hamiltonian
    delta = -1j * (h @ rho - rho @ h) * dt
    outcomes: list[float] = []
    for k, assignment in enumerate(spec.channels):
        ch = assignment.channel
        if isinstance(ch, JumpChannel):
            num = ch.coupling_number_op()
            delta += -superop_h(0.5 * num, rho) * dt
            prob = float(np.trace(num @ rho).real * dt)
            dn = 1 if step_draws[k] < prob else 0
            if dn:
                delta += superop_g(ch.c, rho)
            outcomes.append(float(dn))
        else:
            delta += dissipator(ch.b, rho) * dt
            mean = 2.0 * float(np.trace(np.exp(-1j * ch.phi) * ch.b @ rho).real)
            y = mean + step_draws[k] / np.sqrt(dt)
            dw = (y - mean) * dt
            delta += superop_h(np.exp(-1j * ch.phi) * ch.b, rho) * dw
            outcomes.append(float(y))
    return hermitize(rho + delta), outcomes


def run_euler_trajectory(spec: SystemSpec, *, stream_offset: int = 0) -> Trajectory:
    """Full Euler-baseline trajectory from the spec's initial state."""
    n, d = spec.n_steps, spec.dim
    draws = draw_streams(spec, 0, 1, stream_offset=stream_offset)
    states = np.empty((n + 1, d, d), dtype=complex)
    outcomes = [np.empty(n) for _ in spec.channels]
    states[0] = spec.rho0
    rho = np.array(spec.rho0)
    for t in range(n):
        rho, outs = euler_step(rho, spec, [draws[k][0, t] for k in range(len(spec.channels))])
        states[t + 1] = rho
        for k, val in enumerate(outs):
            outcomes[k][t] = val
    records = [
        MeasurementRecord(k, "counts" if a.is_jump else "current",
                          outcomes[k].astype(np.int8) if a.is_jump else outcomes[k])
        for k, a in enumerate(spec.channels)
    ]
    return Trajectory(spec.times, states, records, normalized=False)


# ---------------------------------------------------------------------------
# unconditioned (deterministic) stepping
# ---------------------------------------------------------------------------


def unconditioned_step(rho: np.ndarray, spec: SystemSpec) -> np.ndarray:
    """Deterministic second-order average step: exact unitary, then
    ``rho + D[a] rho dt + D[a†a] rho dt^2/4`` for every channel in order."""
    v_op = spec.step_unitary()
    rho = v_op @ rho @ dag(v_op)
    for assignment in spec.channels:
        ch = assignment.channel
        a = ch.c if isinstance(ch, JumpChannel) else ch.b
        rho = series_unconditional_map(a, rho, spec.dt)
    return hermitize(rho)


# ---------------------------------------------------------------------------
# hypothetical (unnormalized, replayed observed record) stepping
# ---------------------------------------------------------------------------


def observed_step_op(
    spec: SystemSpec, channel_index: int, outcome: float
) -> np.ndarray:
    """Kraus operator of one observed channel for a recorded outcome."""
    ch = spec.channels[channel_index].channel
    if isinstance(ch, JumpChannel):
        if ch.lambda_ost <= 0:
            return np.eye(spec.dim, dtype=complex)
        m0, m1 = jump_ops(ch, spec.dt, spec.order)
        return m1 if outcome else m0
    return diffusive_op(ch, float(outcome), spec.dt, spec.order)


@dataclass
class HypotheticalBatchResult:
    """Raw per-step accumulations over a block of hypothetical members."""

    traces: np.ndarray  # (M, n+1) traces of the unnormalized member states
    effect_weights: np.ndarray | None  # (M, n+1) Tr[E(t) rho_k(t)] if effects given
    linear_sum: np.ndarray  # (n+1, N, N) sum of unnormalized member states
    smoothed_sum: np.ndarray | None  # (n+1, N, N) sum of w_k * rho_k / tr_k
    member_z: np.ndarray | None  # (M, n+1) normalized sigma_z expectation (qubits)
    unobserved_records: dict[int, np.ndarray]  # channel index -> (M, n) outcomes
    strided_states: np.ndarray | None  # (M, n_stored, N, N)
    state_stride: int


def run_hypothetical_batch(
    spec: SystemSpec,
    observed: dict[int, MeasurementRecord],
    jump_context_rates: dict[int, np.ndarray],
    n_members: int,
    *,
    effects: np.ndarray | None = None,
    stream_offset: int = 0,
    first_stream: int = 0,
    state_stride: int = 0,
    renorm_every: int = 100,
    track_z: bool = True,
) -> HypotheticalBatchResult:
    """Evolve a block of unnormalized hypothetical members against one
    observed record.

    ``jump_context_rates`` maps each unobserved counting channel to its
    per-step ostensible rate sequence (driven by the filtered state for
    the same observed record).  Members share the observed Kraus operators
    and the context rates; only their unobserved outcomes differ.  The
    whole ensemble is renormalized by its mean trace every
    ``renorm_every`` steps, which leaves every weighted average reported
    here invariant while keeping traces in floating range.
    """
    n, d = spec.n_steps, spec.dim
    dt = spec.dt
    draws = draw_streams(spec, first_stream, n_members, stream_offset=stream_offset)
    v_op = spec.step_unitary()
    states = np.broadcast_to(spec.rho0.astype(complex), (n_members, d, d)).copy()

    traces = np.empty((n_members, n + 1))
    traces[:, 0] = _traces(states)
    eff_w = np.empty((n_members, n + 1)) if effects is not None else None
    if effects is not None:
        eff_w[:, 0] = np.einsum("mij,ji->m", states, effects[0]).real
    linear_sum = np.empty((n + 1, d, d), dtype=complex)
    linear_sum[0] = states.sum(axis=0)
    smoothed_sum = np.empty((n + 1, d, d), dtype=complex) if effects is not None else None
    if smoothed_sum is not None:
        smoothed_sum[0] = _weighted_normalized_sum(states, eff_w[:, 0], traces[:, 0])
    member_z = np.empty((n_members, n + 1)) if (track_z and d == 2) else None
    if member_z is not None:
        member_z[:, 0] = _z_expectation(states, traces[:, 0])
    unobs_records = {k: np.empty((n_members, n)) for k in spec.unobserved_indices()}
    stride = max(int(state_stride), 0)
    strided_states = None
    if stride:
        n_stored = n // stride + 1
        strided_states = np.empty((n_members, n_stored, d, d), dtype=complex)
        strided_states[:, 0] = states

    # static per-channel operator pieces, hoisted out of the time loop
    static_ops: dict[int, tuple] = {}
    for k, assignment in enumerate(spec.channels):
        ch = assignment.channel
        if assignment.role == "observed":
            if isinstance(ch, JumpChannel):
                if ch.lambda_ost > 0:
                    static_ops[k] = jump_ops(ch, dt, spec.order)
                else:
                    eye = np.eye(d, dtype=complex)
                    static_ops[k] = (eye, eye)
            else:
                static_ops[k] = (
                    no_signal_op(ch, dt, spec.order),
                    (dt * np.exp(-1j * ch.phi)) * ch.b,
                )
        elif isinstance(ch, DiffusiveChannel):
            static_ops[k] = (
                no_signal_op(ch, dt, spec.order),
                (dt * np.exp(-1j * ch.phi)) * ch.b,
            )
        else:
            static_ops[k] = (ch.coupling_number_op(), np.eye(d))

    inv_sqrt_dt = 1.0 / np.sqrt(dt)
    for t in range(n):
        states = _conj_batch(v_op, states)
        for k, assignment in enumerate(spec.channels):
            ch = assignment.channel
            if assignment.role == "observed":
                if isinstance(ch, JumpChannel):
                    m0, m1 = static_ops[k]
                    states = _conj_batch(m1 if observed[k].values[t] else m0, states)
                else:
                    p_op, q_op = static_ops[k]
                    states = _conj_batch(p_op + float(observed[k].values[t]) * q_op, states)
            elif isinstance(ch, JumpChannel):
                lam = max(float(jump_context_rates[k][t]), LAMBDA_FLOOR)
                prob = lam * dt
                jumped = draws[k][:, t] < prob
                num, eye = static_ops[k]
                shifted = num - lam * eye
                if spec.order is SchemeOrder.CPQT:
                    m0 = eye - 0.5 * shifted * (1.0 + lam * dt) * dt - 0.125 * (shifted @ shifted) * dt * dt
                else:
                    m0 = eye - 0.5 * shifted * dt
                no_jump = _conj_batch(m0, states)
                with_jump = _conj_batch(ch.c, states) / lam
                states = np.where(jumped[:, None, None], with_jump, no_jump)
                unobs_records[k][:, t] = jumped
            else:
                y = draws[k][:, t] * inv_sqrt_dt
                p_op, q_op = static_ops[k]
                states = _linear_op_batch(p_op, q_op, y, states)
                unobs_records[k][:, t] = y
        states = _hermitize_batch(states)

        # Global rescale: every reported quantity is a weight ratio at fixed
        # time, so dividing all members by one scalar changes nothing except
        # keeping traces inside floating-point range over long runs.
        if renorm_every and (t + 1) % renorm_every == 0:
            mean_tr = float(_traces(states).mean())
            if mean_tr > TRACE_FLOOR:
                states = states / mean_tr

        tr = _traces(states)
        traces[:, t + 1] = tr
        linear_sum[t + 1] = states.sum(axis=0)
        if effects is not None:
            w = np.einsum("mij,ji->m", states, effects[t + 1]).real
            eff_w[:, t + 1] = w
            smoothed_sum[t + 1] = _weighted_normalized_sum(states, w, tr)
        if member_z is not None:
            member_z[:, t + 1] = _z_expectation(states, tr)
        if stride and (t + 1) % stride == 0:
            strided_states[:, (t + 1) // stride] = states

    return HypotheticalBatchResult(
        traces=traces,
        effect_weights=eff_w,
        linear_sum=linear_sum,
        smoothed_sum=smoothed_sum,
        member_z=member_z,
        unobserved_records={k: v for k, v in unobs_records.items()},
        strided_states=strided_states,
        state_stride=stride,
    )


def _weighted_normalized_sum(states: np.ndarray, weights: np.ndarray, traces: np.ndarray) -> np.ndarray:
    safe = traces > TRACE_FLOOR
    coeff = np.where(safe, weights / np.where(safe, traces, 1.0), 0.0)
    return np.einsum("m,mij->ij", coeff, states)


def _z_expectation(states: np.ndarray, traces: np.ndarray) -> np.ndarray:
    safe = traces > TRACE_FLOOR
    z_raw = (states[:, 0, 0] - states[:, 1, 1]).real
    return np.where(safe, z_raw / np.where(safe, traces, 1.0), 0.0)


def hypothetical_step(
    rho_tilde: np.ndarray,
    observed_ops: Sequence[np.ndarray],
    unobserved: ChannelAssignment,
    context_rate: float,
    spec: SystemSpec,
    draw: float,
) -> tuple[np.ndarray, float]:
    """One unnormalized step: exact unitary, replayed observed operators,
    then the unobserved channel sampled from its ostensible distribution.

    For an unobserved counting channel the Bernoulli probability is
    ``context_rate * dt`` with the rate taken from the filtered state for
    the observed record (so it varies in time but, given that record,
    factorizes across steps).  Returns the updated state and the sampled
    unobserved outcome.
    """
    dt = spec.dt
    v_op = spec.step_unitary()
    rho = v_op @ rho_tilde @ dag(v_op)
    for op in observed_ops:
        rho = op @ rho @ dag(op)
    ch = unobserved.channel
    if isinstance(ch, JumpChannel):
        lam = max(context_rate, LAMBDA_FLOOR)
        if draw < lam * dt:
            rho = ch.c @ rho @ dag(ch.c) / lam
            outcome = 1.0
        else:
            shifted = ch.coupling_number_op() - lam * np.eye(spec.dim)
            if spec.order is SchemeOrder.CPQT:
                m0 = np.eye(spec.dim) - 0.5 * shifted * (1 + lam * dt) * dt - 0.125 * (shifted @ shifted) * dt**2
            else:
                m0 = np.eye(spec.dim) - 0.5 * shifted * dt
            rho = m0 @ rho @ dag(m0)
            outcome = 0.0
    else:
        y = draw / np.sqrt(dt)
        m = diffusive_op(ch, y, dt, spec.order)
        rho = m @ rho @ dag(m)
        outcome = y
    return hermitize(rho), outcome


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def run_trajectory(
    spec: SystemSpec,
    mode: Literal["true", "euler", "unconditioned"] = "true",
    *,
    stream_offset: int = 0,
) -> Trajectory:
    """Generate a single trajectory in the requested mode.

    ``true`` and ``euler`` draw their outcomes from the stream keyed by
    ``(rng_seed, stream_offset)``; ``unconditioned`` is deterministic.
    """
    if mode == "unconditioned":
        n, d = spec.n_steps, spec.dim
        states = np.empty((n + 1, d, d), dtype=complex)
        states[0] = spec.rho0
        rho = np.array(spec.rho0)
        for t in range(n):
            rho = unconditioned_step(rho, spec)
            states[t + 1] = rho
        return Trajectory(spec.times, states, [], normalized=True)
    if mode == "euler":
        return run_euler_trajectory(spec, stream_offset=stream_offset)
    if mode == "true":
        all_states, records, _ = run_true_ensemble(spec, 1, stream_offset=stream_offset)
        return Trajectory(spec.times, all_states[0], records[0], normalized=True)
    raise ValueError(f"unknown trajectory mode {mode!r}")
