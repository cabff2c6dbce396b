"""Measurement channels and their one-step Kraus operators.

Two detection modes are supported for a Lindblad coupling operator:

* jump (photon-counting) channels with a Bernoulli outcome per step, and
* diffusive (homodyne) channels with a real current outcome per step.

For each mode two operator orders are available: the first-order Euler
operators, and the higher-order variants whose weighted completeness sum
deviates from the identity only at third order in the step size.  The
latter keep every step an (approximately complete) Kraus map, so states
remain positive and pure states remain exactly pure.

Hamiltonian evolution is never part of these operators; the trajectory
engine applies the exact unitary for the step separately.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import QuadratureError, StepSizeError
from .operators import dag

__all__ = [
    "SchemeOrder",
    "JumpChannel",
    "DiffusiveChannel",
    "OutcomeMoments",
    "GaussianSufficiencyReport",
    "jump_ops",
    "diffusive_op",
    "no_signal_op",
    "ostensible_jump_prob",
    "actual_jump_prob",
    "actual_diffusive_moments",
    "diffusive_moment_arrays",
    "completeness_residual",
    "averaged_jump_map",
    "averaged_jump_map_adjoint",
    "averaged_diffusive_map",
    "averaged_diffusive_map_adjoint",
    "series_unconditional_map",
    "quadrature_outcome_moments",
    "gaussian_sufficiency_check",
]


class SchemeOrder(enum.Enum):
    """Operator order: first-order Euler or the higher-order CPQT variant."""

    EULER = "euler"
    CPQT = "cpqt"


@dataclass(frozen=True)
class JumpChannel:
    """Photon-counting channel: coupling operator ``c`` (units of sqrt(rate))
    and ostensible jump rate ``lambda_ost`` used for the Bernoulli sampling
    weights.  Outcomes per step are counts ``dn in {0, 1}``.
    """

    c: np.ndarray
    lambda_ost: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "c", np.asarray(self.c, dtype=complex))
        if self.lambda_ost < 0:
            raise ValueError("ostensible rate must be non-negative")

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    def coupling_number_op(self) -> np.ndarray:
        return dag(self.c) @ self.c


@dataclass(frozen=True)
class DiffusiveChannel:
    """Homodyne channel: coupling operator ``b`` and local-oscillator phase
    ``phi`` in radians.  Outcomes per step are real currents ``y``; the
    state update uses the increment ``y * dt``.
    """

    b: np.ndarray
    phi: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "b", np.asarray(self.b, dtype=complex))

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def coupling_number_op(self) -> np.ndarray:
        return dag(self.b) @ self.b


@dataclass(frozen=True)
class OutcomeMoments:
    """First four moments of the per-step current distribution."""

    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float


def jump_ops(ch: JumpChannel, dt: float, order: SchemeOrder) -> tuple[np.ndarray, np.ndarray]:
    """One-step Kraus pair ``(no_jump, jump)`` for a counting channel.

    The jump operator is ``c / sqrt(lambda)`` at either order.  The
    no-jump operator is ``1 - (n - lambda) dt / 2`` at Euler order; the
    higher-order variant adds the ``(1 + lambda dt)`` dressing and the
    quadratic correction ``-(n - lambda)^2 dt^2 / 8`` so that the
    Bernoulli-weighted completeness sum is the identity up to third order.
    """
    lam = ch.lambda_ost
    if lam <= 0:
        raise ValueError("jump operators require a positive ostensible rate")
    if lam * dt >= 1:
        raise StepSizeError(f"lambda*dt = {lam * dt} must be below one")
    n = ch.coupling_number_op()
    eye = np.eye(ch.dim)
    shifted = n - lam * eye
    if order is SchemeOrder.EULER:
        m0 = eye - 0.5 * shifted * dt
    else:
        m0 = eye - 0.5 * shifted * (1.0 + lam * dt) * dt - 0.125 * (shifted @ shifted) * dt * dt
    m1 = ch.c / np.sqrt(lam)
    return m0, m1


def no_signal_op(ch: DiffusiveChannel, dt: float, order: SchemeOrder) -> np.ndarray:
    """The current-independent part of the homodyne Kraus operator."""
    n = ch.coupling_number_op()
    eye = np.eye(ch.dim)
    if order is SchemeOrder.EULER:
        return eye - 0.5 * n * dt
    return eye - 0.5 * n * dt - 0.125 * (n @ n) * dt * dt


def diffusive_op(ch: DiffusiveChannel, y: float, dt: float, order: SchemeOrder) -> np.ndarray:
    """One-step homodyne Kraus operator for current value ``y``.

    ``M_y = 1 + (exp(-i phi) y b - b†b/2) dt`` at Euler order, with the
    additional ``-(b†b)^2 dt^2 / 8`` correction at the higher order.
    """
    if dt <= 0:
        raise StepSizeError("dt must be positive")
    return no_signal_op(ch, dt, order) + (np.exp(-1j * ch.phi) * y * dt) * ch.b


def ostensible_jump_prob(ch: JumpChannel, dt: float) -> float:
    """Bernoulli probability ``lambda * dt`` of a count under ostensible sampling."""
    p = ch.lambda_ost * dt
    if not 0.0 <= p < 1.0:
        raise StepSizeError(f"ostensible jump probability {p} outside [0, 1)")
    return p


def actual_jump_prob(ch: JumpChannel, rho: np.ndarray, dt: float) -> float:
    """Physical count probability ``Tr[c†c rho] dt`` for a normalized state."""
    p = float(np.trace(ch.coupling_number_op() @ rho).real * dt)
    p = max(p, 0.0)
    if p >= 1.0:
        raise StepSizeError(f"actual jump probability {p} >= 1; reduce the step size")
    return p


def _quadratic_trace_coeffs(
    ch: DiffusiveChannel, rho: np.ndarray, dt: float, order: SchemeOrder
) -> tuple[float, float, float]:
    """Coefficients of ``Tr[M_y rho M_y†] = p + q y + r y^2``.

    ``M_y`` is linear in ``y`` (``M_y = P + y Q`` with ``Q = dt e^{-i phi} b``),
    so the trace is an exact quadratic in the current.
    """
    p_op = no_signal_op(ch, dt, order)
    q_op = (dt * np.exp(-1j * ch.phi)) * ch.b
    p = float(np.trace(p_op @ rho @ dag(p_op)).real)
    q = 2.0 * float(np.trace(q_op @ rho @ dag(p_op)).real)
    r = float(np.trace(q_op @ rho @ dag(q_op)).real)
    return p, q, r


def _moments_from_quadratic(p: float, q: float, r: float, dt: float) -> OutcomeMoments:
    """Exact moments of ``N(0, 1/dt)-density x (p + q y + r y^2)``.

    Gaussian moment identities close the integrals, so no series
    truncation is involved; this is the closed-form counterpart of the
    numerical quadrature oracle.
    """
    v = 1.0 / dt
    z = p + r * v
    m1 = q * v / z
    m2 = (p * v + 3.0 * r * v * v) / z
    m3 = 3.0 * q * v * v / z
    m4 = (3.0 * p * v * v + 15.0 * r * v**3) / z
    var = m2 - m1 * m1
    if var <= 0:
        raise StepSizeError("current variance non-positive; step too large for corrections")
    c3 = m3 - 3.0 * m1 * m2 + 2.0 * m1**3
    c4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1**4
    return OutcomeMoments(
        mean=m1,
        variance=var,
        skewness=c3 / var**1.5,
        excess_kurtosis=c4 / (var * var) - 3.0,
    )


def actual_diffusive_moments(
    ch: DiffusiveChannel, rho: np.ndarray, dt: float, order: SchemeOrder
) -> OutcomeMoments:
    """Moments of the physical current distribution at a normalized state.

    At Euler order the distribution is the first-order Gaussian with mean
    ``<e^{i phi} b† + e^{-i phi} b>`` and variance ``1/dt``.  At the higher
    order the distribution ``p_ost(y) Tr[M_y rho M_y†]`` is a Gaussian times
    an exact quadratic in ``y``, and all four moments are evaluated in
    closed form.  To leading orders the mean is
    ``2 Re<e^{-i phi} b> - Re<e^{-i phi} b†bb> dt`` and the variance
    ``1/dt + 2<b†b> - 4 Re^2<e^{-i phi} b>``; the sign conventions here are
    fixed by the numerical quadrature oracle, which is authoritative.
    """
    if order is SchemeOrder.EULER:
        mean = 2.0 * float(np.trace(np.exp(-1j * ch.phi) * ch.b @ rho).real)
        return OutcomeMoments(mean=mean, variance=1.0 / dt, skewness=0.0, excess_kurtosis=0.0)
    p, q, r = _quadratic_trace_coeffs(ch, rho, dt, order)
    return _moments_from_quadratic(p, q, r, dt)


def diffusive_moment_arrays(
    ch: DiffusiveChannel, rhos: np.ndarray, dt: float, order: SchemeOrder
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``(mean, std)`` of the current over a stack of states.

    ``rhos`` has shape ``(M, N, N)``.  Used by the trajectory engine to
    sample currents for whole ensembles at once.
    """
    phase_b = np.exp(-1j * ch.phi) * ch.b
    if order is SchemeOrder.EULER:
        mean = 2.0 * np.einsum("ij,mji->m", phase_b, rhos).real
        return mean, np.full(rhos.shape[0], 1.0 / np.sqrt(dt))
    p_op = no_signal_op(ch, dt, order)
    q_op = dt * phase_b
    p = np.einsum("ij,mjk,ik->m", p_op, rhos, p_op.conj()).real
    q = 2.0 * np.einsum("ij,mjk,ik->m", q_op, rhos, p_op.conj()).real
    r = np.einsum("ij,mjk,ik->m", q_op, rhos, q_op.conj()).real
    v = 1.0 / dt
    z = p + r * v
    m1 = q * v / z
    m2 = (p * v + 3.0 * r * v * v) / z
    var = m2 - m1 * m1
    if np.any(var <= 0):
        raise StepSizeError("current variance non-positive; step too large for corrections")
    return m1, np.sqrt(var)


def completeness_residual(
    ch: JumpChannel | DiffusiveChannel, dt: float, order: SchemeOrder
) -> float:
    """Spectral norm of the weighted completeness sum minus the identity.

    For counting channels the sum runs over the two Bernoulli branches.
    For homodyne channels the Gaussian integral over the current is done in
    closed form with the Gaussian moment identities (mean 0, variance 1/dt),
    not numerically.
    """
    if dt <= 0:
        raise StepSizeError("dt must be positive")
    eye = np.eye(ch.dim)
    if isinstance(ch, JumpChannel):
        m0, m1 = jump_ops(ch, dt, order)
        p1 = ostensible_jump_prob(ch, dt)
        total = (1.0 - p1) * dag(m0) @ m0 + p1 * dag(m1) @ m1
    else:
        p_op = no_signal_op(ch, dt, order)
        q_op = (dt * np.exp(-1j * ch.phi)) * ch.b
        total = dag(p_op) @ p_op + (1.0 / dt) * dag(q_op) @ q_op
    return float(np.linalg.norm(total - eye, 2))


def _zero_rate_no_jump_op(ch: JumpChannel, dt: float, order: SchemeOrder) -> np.ndarray:
    """No-jump operator in the lambda -> 0 limit."""
    n = ch.coupling_number_op()
    m0 = np.eye(ch.dim) - 0.5 * n * dt
    if order is SchemeOrder.CPQT:
        m0 = m0 - 0.125 * (n @ n) * dt * dt
    return m0


def averaged_jump_map(
    ch: JumpChannel,
    x: np.ndarray,
    dt: float,
    order: SchemeOrder,
    lam: float | None = None,
) -> np.ndarray:
    """Exact Bernoulli-weighted average of the counting-channel Kraus map.

    ``(1 - lam dt) M0 x M0† + lam dt M1 x M1†``, which equals
    ``x + D[c]x dt + D[c†c]x dt^2/4`` up to third order.  Keeping the exact
    branch average (rather than that series) makes the filtered state the
    exact expectation of ostensibly sampled linear trajectories, which the
    consistency tests rely on.  ``lam`` overrides the channel's static
    ostensible rate (the hypothetical-record machinery drives it from the
    filtered state, step by step).
    """
    eff = JumpChannel(ch.c, ch.lambda_ost if lam is None else lam)
    if eff.lambda_ost <= 0.0:
        # Degenerate sampling: the jump branch has zero weight.
        m0 = _zero_rate_no_jump_op(eff, dt, order)
        return m0 @ x @ dag(m0)
    m0, m1 = jump_ops(eff, dt, order)
    p1 = eff.lambda_ost * dt
    return (1.0 - p1) * m0 @ x @ dag(m0) + p1 * m1 @ x @ dag(m1)


def averaged_jump_map_adjoint(
    ch: JumpChannel,
    x: np.ndarray,
    dt: float,
    order: SchemeOrder,
    lam: float | None = None,
) -> np.ndarray:
    """Hilbert-Schmidt adjoint of :func:`averaged_jump_map` (same branches,
    conjugation reversed); unital, and exactly trace-dual to the forward map."""
    eff = JumpChannel(ch.c, ch.lambda_ost if lam is None else lam)
    if eff.lambda_ost <= 0.0:
        m0 = _zero_rate_no_jump_op(eff, dt, order)
        return dag(m0) @ x @ m0
    m0, m1 = jump_ops(eff, dt, order)
    p1 = eff.lambda_ost * dt
    return (1.0 - p1) * dag(m0) @ x @ m0 + p1 * dag(m1) @ x @ m1


def averaged_diffusive_map(
    ch: DiffusiveChannel, x: np.ndarray, dt: float, order: SchemeOrder
) -> np.ndarray:
    """Exact Gaussian average of the homodyne Kraus map over the current.

    With ``M_y = P + y Q`` and ostensible variance ``1/dt`` the integral
    closes to ``P x P† + (1/dt) Q x Q† = P x P† + dt b x b†``, which equals
    ``x + D[b]x dt + D[b†b]x dt^2/4`` up to third order.
    """
    p_op = no_signal_op(ch, dt, order)
    return p_op @ x @ dag(p_op) + dt * ch.b @ x @ dag(ch.b)


def averaged_diffusive_map_adjoint(
    ch: DiffusiveChannel, x: np.ndarray, dt: float, order: SchemeOrder
) -> np.ndarray:
    """Hilbert-Schmidt adjoint of :func:`averaged_diffusive_map`."""
    p_op = no_signal_op(ch, dt, order)
    return dag(p_op) @ x @ p_op + dt * dag(ch.b) @ x @ ch.b


def series_unconditional_map(a: np.ndarray, x: np.ndarray, dt: float) -> np.ndarray:
    """Second-order unconditional increment ``x + D[a]x dt + D[a†a]x dt^2/4``."""
    from .operators import dissipator

    n = dag(a) @ a
    return x + dissipator(a, x) * dt + 0.25 * dissipator(n, x) * dt * dt


def quadrature_outcome_moments(
    ch: DiffusiveChannel,
    rho: np.ndarray,
    dt: float,
    order: SchemeOrder,
    *,
    nodes: int = 4001,
    span_sigmas: float = 8.0,
    rtol: float = 1e-9,
    max_doublings: int = 6,
) -> OutcomeMoments:
    """Moments of the physical current density by direct numerical quadrature.

    Trapezoid rule over ``±span_sigmas`` ostensible standard deviations,
    with node doubling until the first four moments are stable to ``rtol``.
    This is the brute-force route against which the closed-form moment
    algebra is validated.
    """
    if nodes < 2001:
        nodes = 2001
    sigma = 1.0 / np.sqrt(dt)

    def compute(n_nodes: int) -> np.ndarray:
        ys = np.linspace(-span_sigmas * sigma, span_sigmas * sigma, n_nodes)
        p_op = no_signal_op(ch, dt, order)
        q_op = (dt * np.exp(-1j * ch.phi)) * ch.b
        # Evaluate Tr[M_y rho M_y+] pointwise from the operators themselves.
        a = p_op @ rho @ dag(p_op)
        bq = q_op @ rho @ dag(p_op)
        cq = q_op @ rho @ dag(q_op)
        t_of_y = (
            np.trace(a).real
            + ys * (2.0 * np.trace(bq).real)
            + ys * ys * np.trace(cq).real
        )
        dens = np.sqrt(dt / (2.0 * np.pi)) * np.exp(-0.5 * ys * ys * dt) * t_of_y
        raw = np.empty(5)
        for k in range(5):
            raw[k] = np.trapezoid(dens * ys**k, ys)
        return raw

    # Convergence scale per raw moment: identically-zero moments (dark or
    # symmetric states) would otherwise compare roundoff against roundoff.
    natural = np.array([1.0, sigma, sigma**2, sigma**3, sigma**4])
    prev = compute(nodes)
    for _ in range(max_doublings):
        nodes = 2 * nodes - 1
        cur = compute(nodes)
        scale = np.maximum(np.abs(cur), natural)
        if np.max(np.abs(cur - prev) / scale) < rtol:
            prev = cur
            break
        prev = cur
    else:
        raise QuadratureError("moment quadrature failed to converge under node doubling")

    z, m1, m2, m3, m4 = prev
    m1, m2, m3, m4 = m1 / z, m2 / z, m3 / z, m4 / z
    var = m2 - m1 * m1
    c3 = m3 - 3 * m1 * m2 + 2 * m1**3
    c4 = m4 - 4 * m1 * m3 + 6 * m1 * m1 * m2 - 3 * m1**4
    return OutcomeMoments(m1, var, c3 / var**1.5, c4 / var**2 - 3.0)


@dataclass(frozen=True)
class GaussianSufficiencyReport:
    """Scaling of the non-Gaussian moment corrections with the step size.

    Sampling currents from a Gaussian with the matched mean and variance
    perturbs the averaged map only through terms proportional to
    ``skewness * dt^(3/2)`` and ``excess_kurtosis * dt^2``; this report
    records how fast those prefactors themselves vanish.
    """

    dt_list: tuple[float, ...]
    skewness: tuple[float, ...]
    excess_kurtosis: tuple[float, ...]
    skew_exponent: float
    kurtosis_exponent: float
    skew_exponent_in_band: bool
    kurtosis_exponent_in_band: bool
    #: magnitude of the map-level correction terms per step
    skew_correction: tuple[float, ...]
    kurtosis_correction: tuple[float, ...]

    SKEW_TARGET = 1.5
    KURT_TARGET = 1.0
    BAND = 0.2


def _fit_exponent(dts: np.ndarray, values: np.ndarray) -> float:
    mags = np.abs(values)
    if np.any(mags < 1e-10):
        # corrections at the quadrature noise floor carry no scaling information
        return float("nan")
    slope = np.polyfit(np.log(dts), np.log(mags), 1)[0]
    return float(slope)


def gaussian_sufficiency_check(
    ch: DiffusiveChannel,
    rho: np.ndarray,
    dt_list: list[float] | tuple[float, ...],
    order: SchemeOrder = SchemeOrder.CPQT,
) -> GaussianSufficiencyReport:
    """Quadrature-based scaling check of the non-Gaussian corrections.

    For each step size the exact current density is integrated numerically
    and the skewness and excess kurtosis extracted; log-log fits give their
    scaling exponents.  Identically-zero corrections (for example a zero
    coupling operator, where the density is exactly the ostensible
    Gaussian) yield NaN exponents and in-band flags of True.
    """
    dts = np.asarray(dt_list, dtype=float)
    if len(dts) < 2 or np.any(np.diff(dts) >= 0):
        raise ValueError("dt_list must contain at least two strictly decreasing steps")
    skews, kurts = [], []
    for dt in dts:
        mom = quadrature_outcome_moments(ch, np.asarray(rho, dtype=complex), float(dt), order)
        skews.append(mom.skewness)
        kurts.append(mom.excess_kurtosis)
    skews_arr = np.array(skews)
    kurts_arr = np.array(kurts)
    e_skew = _fit_exponent(dts, skews_arr)
    e_kurt = _fit_exponent(dts, kurts_arr)
    in_band_skew = (
        True if np.isnan(e_skew) else abs(e_skew - GaussianSufficiencyReport.SKEW_TARGET) <= GaussianSufficiencyReport.BAND
    )
    in_band_kurt = (
        True if np.isnan(e_kurt) else abs(e_kurt - GaussianSufficiencyReport.KURT_TARGET) <= GaussianSufficiencyReport.BAND
    )
    return GaussianSufficiencyReport(
        dt_list=tuple(float(d) for d in dts),
        skewness=tuple(skews),
        excess_kurtosis=tuple(kurts),
        skew_exponent=e_skew,
        kurtosis_exponent=e_kurt,
        skew_exponent_in_band=in_band_skew,
        kurtosis_exponent_in_band=in_band_kurt,
        skew_correction=tuple(abs(s) * d**1.5 for s, d in zip(skews, dts)),
        kurtosis_correction=tuple(abs(k) * d**2 for k, d in zip(kurts, dts)),
    )
