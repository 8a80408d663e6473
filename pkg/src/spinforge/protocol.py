"""Pseudopure-state preparation, phase cycling and ideal-pulse sequences.

States are deviation density matrices (Hermitian, generally traceless) in
the high-temperature convention.  Coherence orders are defined by the
collective z-rotation R_z(phi) = exp(-i Z' phi / 2): an order-n component
picks up exp(-i n phi).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import spincore
from .pulse import ShapedPulse, pulse_propagator
from .spincore import collective, expm_hermitian, n_spins_of
from .spinsys import SpinSystem, internal_hamiltonian
from .targets import pseudopure_ideal_state


def collective_z_rotation(phi: float, n_spins: int) -> np.ndarray:
    """R_z(phi) = exp(-i Z' phi / 2)."""
    z_diag = np.real(np.diag(collective("Z", n_spins)))
    return np.diag(np.exp(-0.5j * phi * z_diag))


def coherence_orders(n_spins: int) -> np.ndarray:
    """Matrix of coherence orders: order[a, b] = (z_a - z_b)/2."""
    z = np.real(np.diag(collective("Z", n_spins)))
    return np.rint((z[:, None] - z[None, :]) / 2.0).astype(int)


def coherence_decompose(rho: np.ndarray) -> dict[int, np.ndarray]:
    """Split a state by coherence order; the components sum to rho exactly."""
    n = n_spins_of(rho.shape[0])
    orders = coherence_orders(n)
    out = {}
    for order in range(-n, n + 1):
        mask = orders == order
        comp = np.where(mask, rho, 0.0)
        out[order] = comp
    return out


def phase_shifted_unitary(u: np.ndarray, phi: float) -> np.ndarray:
    """Conjugation by the collective z-rotation: R_z(phi) U R_z(-phi)."""
    n = n_spins_of(u.shape[0])
    r = collective_z_rotation(phi, n)
    return r @ u @ r.conj().T


@dataclass(frozen=True)
class PhaseCycle:
    """RF phase-cycling scheme with receiver bookkeeping.

    Step k (1-based) shifts the gate phase by k*phase_increment, weights the
    scan by signs[k-1], and unwinds the receiver rotation receiver_phases[k-1].
    ``receiver_sign`` is an overall signal inversion applied by the receiver
    convention (see :func:`three_quantum_filter_cycle`).
    """

    n_steps: int
    phase_increment: float
    signs: tuple[int, ...]
    receiver_phases: tuple[float, ...]
    receiver_sign: int = 1

    def __post_init__(self):
        if len(self.signs) != self.n_steps or len(self.receiver_phases) != self.n_steps:
            raise ValueError("signs and receiver_phases must have n_steps entries")
        if any(s not in (-1, 1) for s in self.signs):
            raise ValueError("signs must be +/-1")
        if self.receiver_sign not in (-1, 1):
            raise ValueError("receiver_sign must be +/-1")


def three_quantum_filter_cycle() -> PhaseCycle:
    """Six-step pi/3 cycle passing coherence orders n = 3 (mod 6).

    The alternating-sign sum over the six steps evaluates to -6 for n = 3
    (see :func:`phase_cycle_sum`); the receiver convention inverts the
    signal so the filtered component carries a +1 coefficient.
    """
    k = np.arange(1, 7)
    return PhaseCycle(
        n_steps=6,
        phase_increment=np.pi / 3,
        signs=tuple(int((-1) ** (kk - 1)) for kk in k),
        receiver_phases=tuple(float(kk * np.pi / 3) for kk in k),
        receiver_sign=-1,
    )


def phase_cycle_sum(n: int, n_steps: int = 6, increment: float = np.pi / 3) -> complex:
    """Raw alternating phase sum sum_k (-1)^(k-1) exp(+i n k increment)."""
    k = np.arange(1, n_steps + 1)
    return complex(np.sum((-1.0) ** (k - 1) * np.exp(1j * n * k * increment)))


def phase_cycle_filter(u_gate: np.ndarray, rho_in: np.ndarray, cycle: PhaseCycle) -> np.ndarray:
    """Receiver-combined phase-cycled application of a gate unitary.

    Averages sign_k R_z(-r_k) U(phi_k) rho U(phi_k)^dag R_z(+r_k) over the
    cycle (phi_k = k * increment, r_k the receiver phase), multiplied by the
    cycle's receiver sign.  For the six-step three-quantum cycle this equals
    U P3Q(rho) U^dag, the gate applied to the order +/-3 part of the input.
    """
    n = n_spins_of(u_gate.shape[0])
    out = np.zeros_like(rho_in, dtype=complex)
    for k in range(1, cycle.n_steps + 1):
        phi = k * cycle.phase_increment
        u_phi = phase_shifted_unitary(u_gate, phi)
        r = collective_z_rotation(cycle.receiver_phases[k - 1], n)
        term = r.conj().T @ (u_phi @ rho_in @ u_phi.conj().T) @ r
        out += cycle.signs[k - 1] * term
    return cycle.receiver_sign * out / cycle.n_steps


def state_correlation(rho: np.ndarray, rho_ideal: np.ndarray) -> float:
    """Normalized overlap Tr(rho rho_ideal)/sqrt(Tr rho^2 Tr rho_ideal^2)."""
    if rho.shape != rho_ideal.shape:
        raise ValueError("states must have equal dimensions")
    norm_ideal = np.real(np.trace(rho_ideal @ rho_ideal))
    if norm_ideal <= 0:
        raise ValueError("ideal state must be nonzero")
    norm = np.real(np.trace(rho @ rho))
    if norm <= 0:
        return 0.0
    overlap = np.real(np.trace(rho @ rho_ideal))
    return float(overlap / np.sqrt(norm * norm_ideal))


def transfer_time(d_ch: float) -> float:
    """Polarization-exchange time 3/(4|d|) in ms for a coupling in kHz."""
    if d_ch == 0:
        raise ValueError("coupling must be nonzero")
    return 3.0 / (4.0 * abs(d_ch))


GateLike = Union[ShapedPulse, np.ndarray]


@dataclass
class PseudopureResult:
    state: np.ndarray
    correlation: float
    ideal_state: np.ndarray
    stage_fidelities: dict


def _gate_unitary(sys: SpinSystem, gate: GateLike, rf_scale: float, offset: float) -> np.ndarray:
    if isinstance(gate, ShapedPulse):
        return pulse_propagator(sys, gate, rf_scale, offset)
    return np.asarray(gate, dtype=complex)


def pseudopure_protocol(sys: SpinSystem, iiz_to_zzz: GateLike, tqpp: GateLike,
                        rf_scale: float = 1.0, zeeman_offset: float = 0.0) -> PseudopureResult:
    """Simulate the labelled pseudopure-state preparation chain.

    Starting from 1l 1l Z (the post-transfer state): apply the IIZ->ZZZ
    gate, an ideal collective y 90, then the six-step phase-cycled
    three-quantum gate.  Returns the final state and its correlation with
    the ideal X(1l+Z)(1l+Z)/4.
    """
    if sys.n_spins != 3:
        raise ValueError("the pseudopure protocol is defined for 3 spins")
    rho = spincore.product_operator("IIZ")
    u1 = _gate_unitary(sys, iiz_to_zzz, rf_scale, zeeman_offset)
    rho = u1 @ rho @ u1.conj().T

    sy = collective("Y", 3)
    lam, v = np.linalg.eigh(sy)
    y90 = (v * np.exp(-1j * np.pi / 4 * lam)) @ v.conj().T
    rho = y90 @ rho @ y90.conj().T

    u2 = _gate_unitary(sys, tqpp, rf_scale, zeeman_offset)
    rho_out = phase_cycle_filter(u2, rho, three_quantum_filter_cycle())

    ideal = pseudopure_ideal_state()
    corr = state_correlation(rho_out, ideal)
    stage = {"after_iiz_vs_zzz": state_correlation(
        u1 @ spincore.product_operator("IIZ") @ u1.conj().T,
        spincore.product_operator("ZZZ"))}
    return PseudopureResult(state=rho_out, correlation=corr, ideal_state=ideal,
                            stage_fidelities=stage)


@dataclass(frozen=True)
class IdealPulse:
    axis: str
    angle: float
    spins: tuple[int, ...] | None = None  # None = all spins

    def __post_init__(self):
        if self.axis not in ("X", "Y", "Z"):
            raise ValueError(f"axis must be X, Y or Z, got {self.axis!r}")
        if not np.isfinite(self.angle):
            raise ValueError("angle must be finite")


@dataclass(frozen=True)
class Delay:
    duration: float

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("delay duration must be >= 0")


@dataclass(frozen=True)
class ShapedPulseRef:
    pulse: ShapedPulse
    rf_scale: float = 1.0
    zeeman_offset: float = 0.0


SequenceElement = Union[IdealPulse, Delay, ShapedPulseRef]


def ideal_pulse_unitary(pulse: IdealPulse, n_spins: int) -> np.ndarray:
    spins = pulse.spins if pulse.spins is not None else tuple(range(1, n_spins + 1))
    if any(not 1 <= s <= n_spins for s in spins):
        raise ValueError(f"pulse spin subset {spins} out of range 1..{n_spins}")
    op = collective(pulse.axis, n_spins, spins)
    lam, v = np.linalg.eigh(op)
    return (v * np.exp(-1j * pulse.angle / 2 * lam)) @ v.conj().T


def run_sequence(sys: SpinSystem, elements: Sequence[SequenceElement], rho_in: np.ndarray,
                 coupling_form="full") -> np.ndarray:
    """Apply sequence elements left to right to a deviation density matrix.

    Ideal pulses are instantaneous; delays evolve under the system's
    internal Hamiltonian with the given coupling form.
    """
    u = sequence_propagator(sys, elements, coupling_form)
    rho = np.array(rho_in, dtype=complex)
    return u @ rho @ u.conj().T


def hahn_echo_elements(total_time: float, pi_axis: str = "Y") -> list[SequenceElement]:
    """delay - pi pulse - delay, refocusing linear (Zeeman) evolution."""
    return [Delay(total_time / 2), IdealPulse(pi_axis, np.pi), Delay(total_time / 2)]


def mrev8_cycle_elements(tau_spacing: float) -> list[SequenceElement]:
    """One cycle of the eight-pulse homonuclear decoupling sequence.

    Pulse pattern (90-degree pulses) -x, y, .., -y, x and its x-inverted
    mirror with 1-2-1 spacing; total cycle length 12*tau_spacing.  The
    zeroth-order average removes like-spin dipolar couplings and scales the
    Zeeman field onto an axis in the z-x plane (factor sqrt(2)/3).
    """
    if tau_spacing <= 0:
        raise ValueError("tau_spacing must be > 0")
    t = tau_spacing
    p = np.pi / 2
    return [
        Delay(t), IdealPulse("X", -p),
        Delay(t), IdealPulse("Y", +p),
        Delay(2 * t), IdealPulse("Y", -p),
        Delay(t), IdealPulse("X", +p),
        Delay(2 * t), IdealPulse("X", +p),
        Delay(t), IdealPulse("Y", +p),
        Delay(2 * t), IdealPulse("Y", -p),
        Delay(t), IdealPulse("X", -p),
        Delay(t),
    ]


def sequence_propagator(sys: SpinSystem, elements: Sequence[SequenceElement],
                        coupling_form="full") -> np.ndarray:
    """Total unitary of an ideal-pulse sequence (shaped refs included)."""
    h_int = internal_hamiltonian(sys, coupling_form)
    u_total = np.eye(sys.dim, dtype=complex)
    for el in elements:
        if isinstance(el, Delay):
            if el.duration == 0:
                continue
            u = expm_hermitian(h_int, el.duration)
        elif isinstance(el, IdealPulse):
            u = ideal_pulse_unitary(el, sys.n_spins)
        elif isinstance(el, ShapedPulseRef):
            u = pulse_propagator(sys, el.pulse, el.rf_scale, el.zeeman_offset)
        else:
            raise ValueError(f"unknown sequence element {el!r}")
        u_total = u @ u_total
    return u_total
