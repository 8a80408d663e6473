"""Spin-system definitions and internal Hamiltonians.

A :class:`SpinSystem` carries rotating-frame Zeeman frequencies (kHz) and
a symmetric pairwise dipolar coupling matrix (kHz).  Hamiltonian builders
return dense matrices in kHz on the 2**n space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .spincore import MAX_SPINS, collective, embed_pauli, expm_hermitian

FULL = "full"
HETERONUCLEAR = "heteronuclear"

_FORM_ALIASES = {"full": FULL, "het": HETERONUCLEAR, "heteronuclear": HETERONUCLEAR}


@dataclass(frozen=True)
class SpinSystem:
    """n coupled spins: labels, isotope species, nu (kHz), d matrix (kHz)."""

    labels: tuple[str, ...]
    species: tuple[str, ...]
    nu: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "species", tuple(self.species))
        nu = np.asarray(self.nu, dtype=float)
        d = np.asarray(self.d, dtype=float)
        n = len(self.labels)
        if not 1 <= n <= MAX_SPINS:
            raise ValueError(f"need 1..{MAX_SPINS} spins, got {n}")
        if len(self.species) != n or nu.shape != (n,):
            raise ValueError("labels, species and nu must have equal length")
        if d.shape != (n, n):
            raise ValueError(f"d must be {n}x{n}, got {d.shape}")
        if np.abs(d - d.T).max() > 0:
            raise ValueError("d must be exactly symmetric")
        if np.abs(np.diag(d)).max() > 0:
            raise ValueError("d must have an exactly zero diagonal")
        nu.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "d", d)

    @property
    def n_spins(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return 2**self.n_spins

    def spin_index(self, label: str) -> int:
        """1-based index of a spin label."""
        return self.labels.index(label) + 1

    def species_indices(self, species: str | None) -> tuple[int, ...]:
        """1-based indices of spins of one species (all spins if None)."""
        if species is None:
            return tuple(range(1, self.n_spins + 1))
        return tuple(j + 1 for j, s in enumerate(self.species) if s == species)

    def to_json(self) -> str:
        doc = {
            "labels": list(self.labels),
            "species": list(self.species),
            "nu_khz": [float(x) for x in self.nu],
            "d_khz": [[float(x) for x in row] for row in self.d],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "SpinSystem":
        doc = json.loads(text)
        return cls(
            labels=tuple(doc["labels"]),
            species=tuple(doc["species"]),
            nu=np.array(doc["nu_khz"], dtype=float),
            d=np.array(doc["d_khz"], dtype=float),
        )


def malonic_system() -> SpinSystem:
    """The built-in three-carbon system (C1, C2, Cm), parameters in kHz."""
    d = np.zeros((3, 3))
    d[0, 1] = d[1, 0] = 0.227   # C1-C2
    d[0, 2] = d[2, 0] = 0.935   # C1-Cm
    d[1, 2] = d[2, 1] = 1.070   # C2-Cm
    return SpinSystem(
        labels=("C1", "C2", "Cm"),
        species=("13C", "13C", "13C"),
        nu=np.array([5.893, 1.057, -3.445]),
        d=d,
    )


def zeeman_hamiltonian(sys: SpinSystem) -> np.ndarray:
    """Sum_j (nu_j/2) Z_j, diagonal and traceless."""
    h = np.zeros((sys.dim, sys.dim), dtype=complex)
    for j in range(sys.n_spins):
        h += 0.5 * sys.nu[j] * embed_pauli("Z", j + 1, sys.n_spins)
    return h


def _pair_term(form: str, j: int, k: int, d_jk: float, n: int) -> np.ndarray:
    zz = embed_pauli("Z", j, n) @ embed_pauli("Z", k, n)
    if form == HETERONUCLEAR:
        return 0.5 * d_jk * zz
    xx = embed_pauli("X", j, n) @ embed_pauli("X", k, n)
    yy = embed_pauli("Y", j, n) @ embed_pauli("Y", k, n)
    return 0.25 * d_jk * (2.0 * zz - xx - yy)


def _normalize_form(form, pairs) -> dict:
    """Expand a coupling-form spec into a per-pair {(j,k): form} map."""
    if isinstance(form, str):
        key = _FORM_ALIASES.get(form.lower())
        if key is None:
            raise ValueError(f"unknown coupling form {form!r}")
        return {p: key for p in pairs}
    per_pair = {}
    for (j, k), f in dict(form).items():
        key = _FORM_ALIASES.get(str(f).lower())
        if key is None:
            raise ValueError(f"unknown coupling form {f!r} for pair {(j, k)}")
        per_pair[(min(j, k), max(j, k))] = key
    missing = [p for p in pairs if p not in per_pair]
    extra = [p for p in per_pair if p not in pairs]
    if missing or extra:
        raise ValueError(
            f"mixed coupling form must cover every pair exactly once "
            f"(missing {missing}, unknown {extra})"
        )
    return per_pair


def dipolar_hamiltonian(sys: SpinSystem, form="full") -> np.ndarray:
    """Pairwise dipolar Hamiltonian.

    ``form`` is ``"full"`` (d/4)(2ZZ - XX - YY), ``"heteronuclear"``
    (d/2) ZZ, or a {(j,k): form} map assigning a form to every pair.
    """
    n = sys.n_spins
    pairs = [(j, k) for j in range(1, n + 1) for k in range(j + 1, n + 1)]
    per_pair = _normalize_form(form, pairs)
    h = np.zeros((sys.dim, sys.dim), dtype=complex)
    for j, k in pairs:
        d_jk = sys.d[j - 1, k - 1]
        if d_jk != 0.0:
            h += _pair_term(per_pair[(j, k)], j, k, d_jk, n)
    return h


def internal_hamiltonian(sys: SpinSystem, form="full") -> np.ndarray:
    """Zeeman plus dipolar Hamiltonian (kHz)."""
    return zeeman_hamiltonian(sys) + dipolar_hamiltonian(sys, form)


def exchange_hamiltonian(n_spins: int, pairs: Sequence[tuple[int, int, float]]) -> np.ndarray:
    """Isotropic exchange Sum (d_jk/3)(ZZ + YY + XX)/2 over given pairs.

    Evolution under a single pair for t = 3/(4 d) swaps the two spin
    states up to a global phase.
    """
    seen = set()
    h = np.zeros((2**n_spins, 2**n_spins), dtype=complex)
    for j, k, d_jk in pairs:
        if j == k or not (1 <= j <= n_spins and 1 <= k <= n_spins):
            raise ValueError(f"invalid pair ({j}, {k})")
        key = (min(j, k), max(j, k))
        if key in seen:
            raise ValueError(f"duplicate pair {key}")
        seen.add(key)
        term = np.zeros_like(h)
        for axis in ("X", "Y", "Z"):
            term += embed_pauli(axis, j, n_spins) @ embed_pauli(axis, k, n_spins)
        h += (d_jk / 6.0) * term
    return h


def exchange_propagator(n_spins: int, pairs, t: float) -> np.ndarray:
    return expm_hermitian(exchange_hamiltonian(n_spins, pairs), t)


def internal_norm(sys: SpinSystem) -> float:
    """Root-mean-square eigenvalue sqrt(Tr(H^2)/2^n) of Zeeman + full dipolar."""
    h = internal_hamiltonian(sys, FULL)
    return float(np.sqrt(np.real(np.trace(h @ h)) / sys.dim))
