"""Transition spectra: synthesis, Lorentzian broadening, parameter fitting.

Line positions and intensities come from the eigenbasis of the internal
Hamiltonian (Zeeman + full dipolar).  The default detection operator is
the collective lowering operator sum_j (X - iY)_j and the default initial
state is the thermal state after an ideal 90-degree pulse, sum_j X_j.
Frequencies are reported so a lone spin with positive Zeeman frequency
appears at positive frequency.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .simplex import nelder_mead
from .spincore import collective, embed_pauli
from .spinsys import SpinSystem, internal_hamiltonian

MERGE_TOL_KHZ = 1e-9
INTENSITY_FLOOR = 1e-9


@dataclass(frozen=True)
class TransitionLine:
    frequency: float      # kHz
    intensity: float      # signed absorption amplitude (>= 0 for thermal states)
    assignment: str
    spin: int             # 1-based index of the dominant spin


@dataclass(frozen=True)
class TransitionList:
    lines: tuple[TransitionLine, ...]

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        for ln in self.lines:
            if not np.isfinite(ln.frequency):
                raise ValueError("line frequencies must be finite")

    @property
    def total_intensity(self) -> float:
        return float(sum(ln.intensity for ln in self.lines))

    def spin_total(self, spin: int) -> float:
        return float(sum(ln.intensity for ln in self.lines if ln.spin == spin))


@dataclass(frozen=True)
class LineshapeParams:
    t2star: tuple[float, ...]    # per spin, ms

    def __post_init__(self):
        vals = tuple(float(x) for x in self.t2star)
        if any(v <= 0 for v in vals):
            raise ValueError("T2* values must be > 0")
        object.__setattr__(self, "t2star", vals)


def malonic_lineshape() -> LineshapeParams:
    return LineshapeParams((2.4, 2.0, 1.5))


def lowering_observable(n_spins: int) -> np.ndarray:
    """Collective lowering operator sum_j (X_j - i Y_j)."""
    return collective("X", n_spins) - 1j * collective("Y", n_spins)


def thermal_transverse_state(sys: SpinSystem) -> np.ndarray:
    """Thermal deviation state after an ideal collective 90: sum_j X_j."""
    return collective("X", sys.n_spins)


def transition_spectrum(sys: SpinSystem, initial: np.ndarray | None = None,
                        observable: np.ndarray | None = None) -> TransitionList:
    """Stick spectrum of the internal Hamiltonian.

    Each eigenpair (a, b) with a nonvanishing product of detection and
    state matrix elements contributes intensity Re(O_ab rho_ba) at the
    eigenfrequency difference; nearly degenerate lines are merged.
    """
    h = internal_hamiltonian(sys, "full")
    lam, v = np.linalg.eigh(h)
    obs = lowering_observable(sys.n_spins) if observable is None else observable
    rho = thermal_transverse_state(sys) if initial is None else initial
    obs_e = v.conj().T @ obs @ v
    rho_e = v.conj().T @ rho @ v
    intensity = np.real(obs_e * rho_e.T)
    freq = lam[None, :] - lam[:, None]   # freq[a, b] = lam_b - lam_a

    # dominant-spin assignment from single-spin lowering matrix elements
    per_spin = []
    for j in range(1, sys.n_spins + 1):
        op = embed_pauli("X", j, sys.n_spins) - 1j * embed_pauli("Y", j, sys.n_spins)
        per_spin.append(np.abs(v.conj().T @ op @ v))
    per_spin = np.stack(per_spin)        # (n_spins, dim, dim)

    peak = np.abs(intensity).max()
    if peak <= 0:
        return TransitionList(())
    raw = []
    dim = lam.size
    for a in range(dim):
        for b in range(dim):
            amp = intensity[a, b]
            if abs(amp) < INTENSITY_FLOOR * peak:
                continue
            spin = int(np.argmax(per_spin[:, a, b])) + 1
            raw.append((freq[a, b], amp, spin))

    raw.sort(key=lambda item: item[0])
    merged: list[list] = []
    for f, amp, spin in raw:
        if merged and abs(f - merged[-1][0]) <= MERGE_TOL_KHZ:
            entry = merged[-1]
            w_old, w_new = entry[1], amp
            entry[0] = (entry[0] * abs(w_old) + f * abs(w_new)) / max(abs(w_old) + abs(w_new), 1e-300)
            entry[1] += amp
            if abs(w_new) > abs(w_old):
                entry[2] = spin
        else:
            merged.append([f, amp, spin])

    lines = tuple(
        TransitionLine(frequency=float(f), intensity=float(amp),
                       assignment=sys.labels[spin - 1], spin=spin)
        for f, amp, spin in merged if abs(amp) >= INTENSITY_FLOOR * peak
    )
    return TransitionList(lines)


def natural_abundance_overlay(sys: SpinSystem, eta_label: float,
                              lines: TransitionList | None = None) -> TransitionList:
    """Labelled-molecule lines plus uncoupled natural-abundance center lines.

    Each spin gains a line at its bare Zeeman frequency with weight
    0.011 (1 - eta) / eta relative to that spin's labelled multiplet total.
    """
    if not 0.0 < eta_label <= 1.0:
        raise ValueError("eta must be in (0, 1]")
    if lines is None:
        lines = transition_spectrum(sys)
    ratio = 0.011 * (1.0 - eta_label) / eta_label
    extra = []
    for j in range(1, sys.n_spins + 1):
        total = lines.spin_total(j)
        if total <= 0:
            continue
        extra.append(TransitionLine(
            frequency=float(sys.nu[j - 1]),
            intensity=ratio * total,
            assignment=f"{sys.labels[j - 1]}-na",
            spin=j,
        ))
    return TransitionList(lines.lines + tuple(extra))


def broaden(lines: TransitionList, params: LineshapeParams, grid: np.ndarray,
            clip_outside: bool = False) -> np.ndarray:
    """Sum of unit-area Lorentzians; each line's FWHM is 1/(pi T2*) of its spin.

    T2* in ms gives widths in kHz on a kHz grid.  Raises if any line falls
    outside the grid unless ``clip_outside`` drops such lines (used when
    comparing against an observation window).
    """
    grid = np.asarray(grid, dtype=float)
    out = np.zeros_like(grid)
    if not lines.lines:
        return out
    lo, hi = grid.min(), grid.max()
    for ln in lines.lines:
        if not lo <= ln.frequency <= hi:
            if clip_outside:
                continue
            raise ValueError(
                f"line at {ln.frequency} kHz outside grid [{lo}, {hi}]; widen the grid")
        if ln.spin > len(params.t2star):
            raise ValueError(f"no T2* value for spin {ln.spin}")
        w = 1.0 / (np.pi * params.t2star[ln.spin - 1])
        out += ln.intensity * (w / (2 * np.pi)) / ((grid - ln.frequency) ** 2 + (w / 2) ** 2)
    return out


@dataclass
class SpectrumFitResult:
    system: SpinSystem
    lineshape: LineshapeParams
    residual: float
    n_evaluations: int
    converged: bool


def _pack(sys: SpinSystem, params: LineshapeParams) -> np.ndarray:
    n = sys.n_spins
    pairs = [(j, k) for j in range(n) for k in range(j + 1, n)]
    return np.concatenate([
        sys.nu,
        np.array([sys.d[j, k] for j, k in pairs]),
        np.array(params.t2star),
    ])


def _unpack(x: np.ndarray, template: SpinSystem) -> tuple[SpinSystem, LineshapeParams]:
    n = template.n_spins
    pairs = [(j, k) for j in range(n) for k in range(j + 1, n)]
    nu = x[:n]
    d = np.zeros((n, n))
    for idx, (j, k) in enumerate(pairs):
        d[j, k] = d[k, j] = x[n + idx]
    t2 = np.abs(x[n + len(pairs):])
    sys = SpinSystem(labels=template.labels, species=template.species, nu=nu.copy(), d=d)
    return sys, LineshapeParams(tuple(np.maximum(t2, 1e-6)))


def fit_spectrum(grid: np.ndarray, observed: np.ndarray, guess: SpinSystem,
                 guess_lineshape: LineshapeParams,
                 frozen: Sequence[bool] | None = None,
                 max_evaluations: int = 20000,
                 residual_threshold: float = 0.1) -> SpectrumFitResult:
    """Simplex least-squares fit of (nu_j, d_jk, T2*_j) to a spectrum.

    ``frozen`` masks parameters (in pack order nu, d upper triangle, T2*)
    that stay at their guess values.  The residual is ||sim - obs|| /
    ||obs||; a residual above ``residual_threshold`` is reported as a
    non-converged fit with the best-found parameters.
    """
    grid = np.asarray(grid, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if grid.shape != observed.shape:
        raise ValueError("grid and observed spectrum must have the same shape")
    x_full = _pack(guess, guess_lineshape)
    frozen = np.zeros(x_full.size, dtype=bool) if frozen is None else np.asarray(frozen, dtype=bool)
    if frozen.shape != x_full.shape:
        raise ValueError(f"frozen mask must have {x_full.size} entries")
    free = ~frozen
    obs_norm = float(np.linalg.norm(observed))
    if obs_norm == 0:
        raise ValueError("observed spectrum is identically zero")

    def residual_of(x_free: np.ndarray) -> float:
        x = x_full.copy()
        x[free] = x_free
        try:
            sys_i, ls_i = _unpack(x, guess)
            sim = broaden(transition_spectrum(sys_i), ls_i, grid, clip_outside=True)
        except ValueError:
            return 10.0
        return float(np.linalg.norm(sim - observed) / obs_norm)

    n_evals = 0
    if free.any():
        x0 = x_full[free]
        scale = np.maximum(np.abs(x0), 0.05)
        result = nelder_mead(residual_of, x0, steps=0.08 * scale,
                             max_evaluations=max_evaluations // 2, ftol=1e-12)
        result = nelder_mead(residual_of, result.x, steps=0.01 * scale,
                             max_evaluations=max_evaluations - result.n_evaluations,
                             ftol=1e-14)
        x_full[free] = result.x
        best = result.fun
        n_evals = result.n_evaluations
    else:
        best = residual_of(x_full[free])
        n_evals = 1

    sys_fit, ls_fit = _unpack(x_full, guess)
    return SpectrumFitResult(system=sys_fit, lineshape=ls_fit, residual=float(best),
                             n_evaluations=n_evals, converged=bool(best <= residual_threshold))
