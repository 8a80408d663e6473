"""Dense complex linear algebra for multi-spin operators.

All operators live on the 2**n Hilbert space of n spin-1/2 nuclei, stored
as dense complex numpy arrays.  Spin ordering is big-endian throughout the
package: spin 1 is the leftmost Kronecker factor.  Hamiltonians carry
frequency units (kHz) and times are in ms, so propagators are
exp(-i*2*pi*H*t) with a dimensionless phase in cycles.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "Y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "Z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
    # raising/lowering convention sigma_pm = X +/- iY (magnitude-2 entries)
    "+": np.array([[0.0, 2.0], [0.0, 0.0]], dtype=complex),
    "-": np.array([[0.0, 0.0], [2.0, 0.0]], dtype=complex),
}

_SYMBOL_ALIASES = {"sigma+": "+", "sigma-": "-", "s+": "+", "s-": "-"}

MAX_SPINS = 8

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10


def n_spins_of(dim: int) -> int:
    """Number of spins for a Hilbert-space dimension (must be a power of 2)."""
    n = int(dim).bit_length() - 1
    if dim < 2 or 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of 2 (>= 2)")
    return n


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return bool(np.abs(m - m.conj().T).max() < tol)


def is_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    eye = np.eye(u.shape[0])
    return bool(np.abs(u.conj().T @ u - eye).max() < tol)


def kron_all(ops: Iterable[np.ndarray]) -> np.ndarray:
    """Kronecker product of a sequence of matrices, left to right."""
    out = np.array([[1.0 + 0.0j]])
    for op in ops:
        out = np.kron(out, op)
    return out


def embed_pauli(axis: str, spin_index: int, n_spins: int) -> np.ndarray:
    """Single-spin Pauli operator embedded in an n-spin space.

    ``spin_index`` is 1-based; spin 1 is the leftmost Kronecker factor.
    """
    if axis not in ("X", "Y", "Z"):
        raise ValueError(f"axis must be X, Y or Z, got {axis!r}")
    if not 1 <= n_spins <= MAX_SPINS:
        raise ValueError(f"n_spins must be in 1..{MAX_SPINS}, got {n_spins}")
    if not 1 <= spin_index <= n_spins:
        raise ValueError(f"spin_index {spin_index} out of range 1..{n_spins}")
    ops = [PAULI["I"]] * n_spins
    ops[spin_index - 1] = PAULI[axis]
    return kron_all(ops)


def product_operator(spec: Sequence[str]) -> np.ndarray:
    """Kronecker product of per-spin symbols from {I, X, Y, Z, +, -}.

    The raising/lowering symbols follow sigma_pm = X +/- iY, so e.g.
    ``product_operator("+++")`` has two entries of magnitude 8.
    """
    symbols = list(spec)
    if not 1 <= len(symbols) <= MAX_SPINS:
        raise ValueError(f"need 1..{MAX_SPINS} symbols, got {len(symbols)}")
    ops = []
    for s in symbols:
        s = _SYMBOL_ALIASES.get(s, s)
        if s not in PAULI:
            raise ValueError(f"unknown operator symbol {s!r}")
        ops.append(PAULI[s])
    return kron_all(ops)


def collective(axis: str, n_spins: int, subset: Sequence[int] | None = None) -> np.ndarray:
    """Sum of single-spin Pauli operators over a subset (default: all spins)."""
    indices = range(1, n_spins + 1) if subset is None else subset
    out = np.zeros((2**n_spins, 2**n_spins), dtype=complex)
    for j in indices:
        out += embed_pauli(axis, j, n_spins)
    return out


def expm_hermitian(h: np.ndarray, t: float) -> np.ndarray:
    """Propagator exp(-i*2*pi*h*t) of a Hermitian h (kHz) over time t (ms).

    Computed by eigendecomposition, which keeps the result unitary to
    machine precision.
    """
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    if not is_hermitian(h, tol=1e-9):
        raise ValueError("expm_hermitian requires a Hermitian matrix")
    lam, v = np.linalg.eigh(h)
    return (v * np.exp(-2j * np.pi * lam * t)) @ v.conj().T


def expm_hermitian_batch(h: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Batched propagators: h has shape (..., N, N), t broadcastable to (...)."""
    lam, v = np.linalg.eigh(h)
    phase = np.exp(-2j * np.pi * lam * np.asarray(t)[..., None])
    return np.einsum("...ij,...j,...kj->...ik", v, phase, v.conj())


def partial_trace(rho: np.ndarray, keep: Sequence[int], n_spins: int | None = None) -> np.ndarray:
    """Reduced density matrix over the kept spins (1-based indices).

    Kept spins stay in their original relative order; the total trace is
    preserved.
    """
    dim = rho.shape[0]
    n = n_spins_of(dim) if n_spins is None else n_spins
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ValueError("keep must be a nonempty set of spin indices")
    if keep[0] < 1 or keep[-1] > n:
        raise ValueError(f"keep indices {keep} out of range 1..{n}")
    traced = [j for j in range(1, n + 1) if j not in keep]
    tensor = rho.reshape((2,) * (2 * n))
    for j in reversed(traced):
        ax1 = j - 1
        ax2 = j - 1 + tensor.ndim // 2
        tensor = np.trace(tensor, axis1=ax1, axis2=ax2)
    d_keep = 2 ** len(keep)
    return tensor.reshape(d_keep, d_keep)


def frobenius_overlap(a: np.ndarray, b: np.ndarray) -> float:
    """Re Tr(a b) for Hermitian deviation matrices."""
    return float(np.real(np.trace(a @ b)))
