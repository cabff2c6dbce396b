"""Filtering, retrofiltering and smoothing from measurement records.

The filtered state advances with the exact expectation of one
hypothetical-member step: the exact unitary, then for each channel in
declared order either the recorded Kraus operator (observed) or the exact
outcome-averaged channel map (unobserved).  The effect operator runs the
exact adjoint of that same per-step map backwards from the identity, so
``Tr[rho_tilde_F(t) E(t)]`` is constant to machine precision and the
weighted hypothetical-record averages reproduce the filtered state up to
Monte Carlo error only.

Smoothing weights each member's normalized state at time ``t`` by
``Tr[E(t) rho_tilde_k(t)]``.  Members are sampled from the ostensible
distribution, so the ostensible probability factors in the smoothing sum
cancel against the sampling measure; the importance weights that remain
are exactly these effect-operator traces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channels import (
    DiffusiveChannel,
    JumpChannel,
    averaged_diffusive_map,
    averaged_diffusive_map_adjoint,
    averaged_jump_map,
    averaged_jump_map_adjoint,
)
from .engine import (
    LAMBDA_FLOOR,
    HypotheticalBatchResult,
    MeasurementRecord,
    SystemSpec,
    observed_step_op,
    run_hypothetical_batch,
)
from .errors import InsufficientEnsembleError, WeightUnderflowError
from .operators import TRACE_FLOOR, dag, hermitize

__all__ = [
    "FilteredTrajectory",
    "EffectTrajectory",
    "HypotheticalEnsemble",
    "SmoothedTrajectory",
    "ConsistencyReport",
    "EffectConsistencyReport",
    "filter_record",
    "retrofilter",
    "build_hypothetical_ensemble",
    "smooth",
    "n_eff",
    "filter_consistency",
    "effect_consistency",
]


@dataclass
class FilteredTrajectory:
    """Normalized filtered states plus their unnormalized twin.

    ``jump_context_rates`` holds, for every unobserved counting channel,
    the per-step ostensible rate ``Tr[c rho_F c†]`` evaluated at the start
    of each step; the hypothetical-record sampler and the retrofilter must
    reuse exactly these rates.
    """

    times: np.ndarray
    states: np.ndarray
    unnormalized_states: np.ndarray
    jump_context_rates: dict[int, np.ndarray]
    observed: dict[int, MeasurementRecord]


@dataclass
class EffectTrajectory:
    """Backward-propagated effect operators, ``effects[-1]`` the identity."""

    times: np.ndarray
    effects: np.ndarray


@dataclass
class SmoothedTrajectory:
    """Smoothed states with the effective member count at each time."""

    times: np.ndarray
    states: np.ndarray
    n_eff: np.ndarray


def _apply_unobserved_average(
    spec: SystemSpec, k: int, x: np.ndarray, lam: float | None
) -> np.ndarray:
    ch = spec.channels[k].channel
    if isinstance(ch, JumpChannel):
        return averaged_jump_map(ch, x, spec.dt, spec.order, lam=lam)
    return averaged_diffusive_map(ch, x, spec.dt, spec.order)


def _apply_unobserved_average_adjoint(
    spec: SystemSpec, k: int, x: np.ndarray, lam: float | None
) -> np.ndarray:
    ch = spec.channels[k].channel
    if isinstance(ch, JumpChannel):
        return averaged_jump_map_adjoint(ch, x, spec.dt, spec.order, lam=lam)
    return averaged_diffusive_map_adjoint(ch, x, spec.dt, spec.order)


def filter_record(
    spec: SystemSpec,
    observed: dict[int, MeasurementRecord],
    *,
    context_rate_floor: float = LAMBDA_FLOOR,
) -> FilteredTrajectory:
    """Filtered state conditioned on the observed record.

    Deterministic given the record.  ``context_rate_floor`` bounds the
    stored ostensible rates from below: conditional expectations are
    independent of the ostensible choice, and a floor of a few percent of
    the channel rate keeps the rare jump branch populated in finite
    hypothetical ensembles (with the importance weights compensating
    exactly).  The default keeps the rates at the filtered-state value up
    to a numerical floor.  Raises
    :class:`~cpqt.errors.WeightUnderflowError` if a recorded outcome is so
    unlikely under the current state that normalization underflows.
    """
    n, d = spec.n_steps, spec.dim
    for k in spec.observed_indices():
        if k not in observed:
            raise ValueError(f"missing record for observed channel {k}")
        if len(observed[k].values) != n:
            raise ValueError("record length does not match the time grid")
    v_op = spec.step_unitary()
    states = np.empty((n + 1, d, d), dtype=complex)
    unnorm = np.empty((n + 1, d, d), dtype=complex)
    states[0] = spec.rho0
    unnorm[0] = spec.rho0
    rates = {
        k: np.empty(n)
        for k in spec.unobserved_indices()
        if isinstance(spec.channels[k].channel, JumpChannel)
    }
    rho = np.array(spec.rho0, dtype=complex)
    rho_tilde = np.array(spec.rho0, dtype=complex)
    floor = max(context_rate_floor, LAMBDA_FLOOR)
    for t in range(n):
        lam_t: dict[int, float] = {}
        for k in rates:
            c = spec.channels[k].channel.c
            lam_t[k] = max(float(np.trace(c @ rho @ dag(c)).real), floor)
            rates[k][t] = lam_t[k]
        rho = v_op @ rho @ dag(v_op)
        rho_tilde = v_op @ rho_tilde @ dag(v_op)
        for k, assignment in enumerate(spec.channels):
            if assignment.role == "observed":
                op = observed_step_op(spec, k, float(observed[k].values[t]))
                rho = op @ rho @ dag(op)
                rho_tilde = op @ rho_tilde @ dag(op)
            else:
                rho = _apply_unobserved_average(spec, k, rho, lam_t.get(k))
                rho_tilde = _apply_unobserved_average(spec, k, rho_tilde, lam_t.get(k))
        tr = np.trace(rho).real
        if tr <= TRACE_FLOOR:
            raise WeightUnderflowError(
                f"filter normalization underflow at step {t}: record inconsistent with dynamics"
            )
        rho = hermitize(rho / tr)
        rho_tilde = hermitize(rho_tilde)
        states[t + 1] = rho
        unnorm[t + 1] = rho_tilde
    return FilteredTrajectory(spec.times, states, unnorm, rates, dict(observed))


def retrofilter(
    spec: SystemSpec,
    observed: dict[int, MeasurementRecord],
    filtered: FilteredTrajectory | None = None,
) -> EffectTrajectory:
    """Effect operators propagated backwards from the identity.

    Each backward step is the exact Hilbert-Schmidt adjoint of the forward
    filter step, channel adjoints in reverse declared order and the
    unitary last.  When an unobserved counting channel is present the
    forward pass (which fixes the per-step ostensible rates) is required;
    it is computed on demand if not supplied.
    """
    needs_context = any(
        isinstance(spec.channels[k].channel, JumpChannel) for k in spec.unobserved_indices()
    )
    if filtered is None and needs_context:
        filtered = filter_record(spec, observed)
    n, d = spec.n_steps, spec.dim
    v_op = spec.step_unitary()
    effects = np.empty((n + 1, d, d), dtype=complex)
    effects[n] = np.eye(d)
    e_op = np.eye(d, dtype=complex)
    for t in range(n - 1, -1, -1):
        for k in range(len(spec.channels) - 1, -1, -1):
            assignment = spec.channels[k]
            if assignment.role == "observed":
                op = observed_step_op(spec, k, float(observed[k].values[t]))
                e_op = dag(op) @ e_op @ op
            else:
                lam = None
                if filtered is not None and k in filtered.jump_context_rates:
                    lam = float(filtered.jump_context_rates[k][t])
                e_op = _apply_unobserved_average_adjoint(spec, k, e_op, lam)
        e_op = hermitize(dag(v_op) @ e_op @ v_op)
        effects[t] = e_op
    return EffectTrajectory(spec.times, effects)


@dataclass
class HypotheticalEnsemble:
    """A batch of ostensibly sampled unobserved records and their states.

    Wraps the raw engine accumulations; ``weights`` are the effect-operator
    traces when effects were supplied at build time, otherwise the plain
    state traces.
    """

    n_members: int
    result: HypotheticalBatchResult
    has_effects: bool

    @property
    def traces(self) -> np.ndarray:
        return self.result.traces

    @property
    def weights(self) -> np.ndarray:
        if self.has_effects:
            return self.result.effect_weights
        return self.result.traces

    def n_eff_trace(self) -> np.ndarray:
        """Effective member count over time from the state traces."""
        return np.array([n_eff(self.result.traces[:, t]) for t in range(self.result.traces.shape[1])])

    def n_eff_weights(self) -> np.ndarray:
        """Effective member count over time from the smoothing weights."""
        w = self.weights
        return np.array([n_eff(w[:, t]) for t in range(w.shape[1])])


def build_hypothetical_ensemble(
    spec: SystemSpec,
    filtered: FilteredTrajectory,
    n_members: int,
    *,
    effects: EffectTrajectory | None = None,
    stream_offset: int = 0,
    first_stream: int = 0,
    state_stride: int = 0,
    renorm_every: int = 100,
) -> HypotheticalEnsemble:
    """Sample ``n_members`` hypothetical unobserved records for one observed
    record and accumulate everything smoothing and the consistency checks
    need in a single pass."""
    result = run_hypothetical_batch(
        spec,
        filtered.observed,
        filtered.jump_context_rates,
        n_members,
        effects=None if effects is None else effects.effects,
        stream_offset=stream_offset,
        first_stream=first_stream,
        state_stride=state_stride,
        renorm_every=renorm_every,
    )
    return HypotheticalEnsemble(n_members, result, effects is not None)


def n_eff(weights: np.ndarray) -> float:
    """Effective sample size ``(sum w)^2 / sum w^2`` of non-negative weights."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise ValueError("need at least one weight")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    s2 = float(np.sum(w * w))
    if s2 == 0.0:
        raise InsufficientEnsembleError("all weights are zero")
    return float(np.sum(w)) ** 2 / s2


def smooth(
    filtered: FilteredTrajectory,
    effects: EffectTrajectory,
    ensemble: HypotheticalEnsemble,
) -> SmoothedTrajectory:
    """Smoothed states from an effect-weighted hypothetical ensemble.

    ``rho_S(t)`` is the weighted average of the normalized member states
    with weights ``Tr[E(t) rho_tilde_k(t)]``, renormalized.  At the final
    time the effect operator is the identity, so smoothing reduces to the
    (filtering-consistent) trace-weighted average.
    """
    if not ensemble.has_effects or ensemble.result.smoothed_sum is None:
        raise ValueError("ensemble must be built with the effect trajectory to smooth")
    sums = ensemble.result.smoothed_sum
    n_plus_1 = sums.shape[0]
    states = np.empty_like(sums)
    neff = np.empty(n_plus_1)
    for t in range(n_plus_1):
        tr = np.trace(sums[t]).real
        if tr <= TRACE_FLOOR:
            raise InsufficientEnsembleError(
                f"all smoothing weights underflowed at step {t}; enlarge the ensemble"
            )
        states[t] = hermitize(sums[t] / tr)
        neff[t] = n_eff(ensemble.result.effect_weights[:, t])
    return SmoothedTrajectory(filtered.times, states, neff)


@dataclass
class ConsistencyReport:
    """Deviation of the ensemble average from the filtered state."""

    times: np.ndarray
    delta_z: np.ndarray
    stderr: np.ndarray
    fraction_within_3se: float
    n_eff_trace: np.ndarray


def filter_consistency(
    ensemble: HypotheticalEnsemble, filtered: FilteredTrajectory
) -> ConsistencyReport:
    """Compare the trace-weighted member average against the filtered state.

    The average uses the unnormalized member states divided by the sum of
    their traces (normalizing members first would bias the estimate).  The
    deviation is reported for the Bloch ``z`` component together with the
    delta-method standard error of the weighted mean, and the fraction of
    grid points within three standard errors.
    """
    res = ensemble.result
    if res.member_z is None:
        raise ValueError("ensemble was built without member z tracking")
    n_plus_1 = res.traces.shape[1]
    z_f = (filtered.states[:, 0, 0] - filtered.states[:, 1, 1]).real
    delta = np.empty(n_plus_1)
    stderr = np.empty(n_plus_1)
    for t in range(n_plus_1):
        w = res.traces[:, t]
        z_k = res.member_z[:, t]
        total = w.sum()
        if total <= TRACE_FLOOR:
            raise InsufficientEnsembleError(f"ensemble weight underflow at step {t}")
        z_bar = float((res.linear_sum[t][0, 0] - res.linear_sum[t][1, 1]).real / total)
        delta[t] = z_bar - z_f[t]
        stderr[t] = np.sqrt(float(np.sum((w * (z_k - z_bar)) ** 2)) / total**2)
    # The absolute allowance covers machine-noise-degenerate points (after an
    # observed count every member collapses to the same state, so the
    # empirical spread is roundoff-sized while the deviation is too).
    within = np.abs(delta) <= 3.0 * stderr + 1e-12
    return ConsistencyReport(
        times=filtered.times,
        delta_z=delta,
        stderr=stderr,
        fraction_within_3se=float(np.mean(within)),
        n_eff_trace=ensemble.n_eff_trace(),
    )


@dataclass
class EffectConsistencyReport:
    """Constancy of the filter/effect pairing along one record."""

    times: np.ndarray
    pairing: np.ndarray  # Tr[rho_tilde_F(t) E(t)]
    trace_filter_unnorm: np.ndarray
    trace_effect: np.ndarray
    max_relative_drift: float


def effect_consistency(
    spec: SystemSpec, observed: dict[int, MeasurementRecord]
) -> EffectConsistencyReport:
    """Verify ``Tr[rho_tilde_F(t) E(t)]`` is constant along the record.

    The backward map is the exact adjoint of the forward map, so the
    product equals the final unnormalized filter trace at every time up to
    roundoff; the maximum relative drift is returned.
    """
    filtered = filter_record(spec, observed)
    effects = retrofilter(spec, observed, filtered)
    n_plus_1 = filtered.states.shape[0]
    pairing = np.empty(n_plus_1)
    tr_f = np.empty(n_plus_1)
    tr_e = np.empty(n_plus_1)
    for t in range(n_plus_1):
        pairing[t] = np.trace(filtered.unnormalized_states[t] @ effects.effects[t]).real
        tr_f[t] = np.trace(filtered.unnormalized_states[t]).real
        tr_e[t] = np.trace(effects.effects[t]).real
    ref = pairing[-1]
    drift = float(np.max(np.abs(pairing - ref)) / abs(ref))
    return EffectConsistencyReport(
        times=filtered.times,
        pairing=pairing,
        trace_filter_unnorm=tr_f,
        trace_effect=tr_e,
        max_relative_drift=drift,
    )
