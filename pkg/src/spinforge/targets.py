"""Built-in gate targets for pulse optimization and protocol simulation."""

from __future__ import annotations

import numpy as np

from .pulse import GateTarget
from .spincore import collective, embed_pauli, kron_all, PAULI


def x90_all(n_spins: int) -> GateTarget:
    """Collective 90-degree rotation about x."""
    sx = collective("X", n_spins)
    lam, v = np.linalg.eigh(sx)
    u = (v * np.exp(-1j * (np.pi / 4) * lam)) @ v.conj().T
    return GateTarget(u, name="X90_all")


def y90_all(n_spins: int) -> GateTarget:
    sy = collective("Y", n_spins)
    lam, v = np.linalg.eigh(sy)
    u = (v * np.exp(-1j * (np.pi / 4) * lam)) @ v.conj().T
    return GateTarget(u, name="Y90_all")


def selective_90(spin_index: int, n_spins: int, axis: str = "X") -> GateTarget:
    """90-degree rotation of one spin about x (or y)."""
    op = embed_pauli(axis, spin_index, n_spins)
    lam, v = np.linalg.eigh(op)
    u = (v * np.exp(-1j * (np.pi / 4) * lam)) @ v.conj().T
    return GateTarget(u, name=f"{axis}90_{spin_index}")


def swap(i: int, j: int, n_spins: int) -> GateTarget:
    """SWAP of spins i and j (1-based)."""
    dim = 2**n_spins
    u = np.zeros((dim, dim), dtype=complex)
    for b in range(dim):
        bits = [(b >> (n_spins - 1 - k)) & 1 for k in range(n_spins)]
        bits[i - 1], bits[j - 1] = bits[j - 1], bits[i - 1]
        b2 = 0
        for bit in bits:
            b2 = (b2 << 1) | bit
        u[b2, b] = 1.0
    return GateTarget(u, name=f"SWAP_{i}{j}")


def cnn(control: int, targets: tuple[int, int], n_spins: int = 3) -> GateTarget:
    """Controlled-(NOT x NOT): flips both targets when the control is |1>."""
    dim = 2**n_spins
    u = np.zeros((dim, dim), dtype=complex)
    for b in range(dim):
        bits = [(b >> (n_spins - 1 - k)) & 1 for k in range(n_spins)]
        if bits[control - 1] == 1:
            for t in targets:
                bits[t - 1] ^= 1
        b2 = 0
        for bit in bits:
            b2 = (b2 << 1) | bit
        u[b2, b] = 1.0
    return GateTarget(u, name=f"CNN_c{control}")


def cnot(control: int, target: int, n_spins: int) -> np.ndarray:
    dim = 2**n_spins
    u = np.zeros((dim, dim), dtype=complex)
    for b in range(dim):
        bits = [(b >> (n_spins - 1 - k)) & 1 for k in range(n_spins)]
        if bits[control - 1] == 1:
            bits[target - 1] ^= 1
        b2 = 0
        for bit in bits:
            b2 = (b2 << 1) | bit
        u[b2, b] = 1.0
    return u


def iiz_to_zzz() -> GateTarget:
    """Unitary conjugating 1l 1l Z into Z Z Z (a pair of CNOTs onto spin 3)."""
    u = cnot(2, 3, 3) @ cnot(1, 3, 3)
    return GateTarget(u, name="IIZ_to_ZZZ")


def tqpp_completion() -> GateTarget:
    """Deterministic completion of the three-quantum to labelled-state map.

    Constrained columns: |000> -> |000> and |111> -> |100>, which sends the
    three-quantum operator (|000><111| + h.c.) onto X(1l+Z)(1l+Z)/4.  The
    remaining columns are filled with the first unused computational basis
    vectors in index order (Gram-Schmidt against the fixed columns).
    """
    dim = 8
    u = np.zeros((dim, dim), dtype=complex)
    images = {0: 0, 7: 4}
    used = set(images.values())
    free_targets = [k for k in range(dim) if k not in used]
    for col in range(dim):
        if col in images:
            u[images[col], col] = 1.0
        else:
            u[free_targets.pop(0), col] = 1.0
    return GateTarget(u, name="TQPP_completion")


def pseudopure_ideal_state() -> np.ndarray:
    """The labelled state X(1l+Z)(1l+Z)/4 as an 8x8 deviation matrix."""
    x = PAULI["X"]
    one_plus_z = PAULI["I"] + PAULI["Z"]
    return kron_all([x, one_plus_z, one_plus_z]) / 4.0


def three_quantum_operator(n_spins: int = 3) -> np.ndarray:
    """sigma_+^n + sigma_-^n over all spins, scaled to unit corner entries."""
    dim = 2**n_spins
    op = np.zeros((dim, dim), dtype=complex)
    op[0, dim - 1] = 1.0
    op[dim - 1, 0] = 1.0
    return op


BY_NAME = {
    "X90_all": lambda n: x90_all(n),
    "TQPP_completion": lambda n: tqpp_completion(),
    "IIZ_to_ZZZ": lambda n: iiz_to_zzz(),
}
