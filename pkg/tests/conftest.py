"""Shared independent oracles for the test suite.

These deliberately avoid the library's own computation paths: Kronecker
embeddings by direct index arithmetic, matrix exponentials by Taylor
series with scaling and squaring, partial traces by explicit index sums,
and pulse propagators by fixed-frame Trotter products of the explicitly
time-dependent Hamiltonian.
"""

import numpy as np
import pytest

PAULI_1Q = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def embed_oracle(axis: str, spin_index: int, n_spins: int) -> np.ndarray:
    """Big-endian single-spin embedding via direct bit arithmetic."""
    dim = 2**n_spins
    sigma = PAULI_1Q[axis]
    out = np.zeros((dim, dim), dtype=complex)
    shift = n_spins - spin_index  # bit position of the target spin
    for row in range(dim):
        for col in range(dim):
            if (row & ~(1 << shift)) != (col & ~(1 << shift)):
                continue
            rb = (row >> shift) & 1
            cb = (col >> shift) & 1
            out[row, col] = sigma[rb, cb]
    return out


def kron_oracle(ops) -> np.ndarray:
    """Kronecker product by direct index arithmetic (no np.kron)."""
    dims = [op.shape[0] for op in ops]
    dim = int(np.prod(dims))
    out = np.ones((dim, dim), dtype=complex)
    for row in range(dim):
        for col in range(dim):
            r, c = row, col
            val = 1.0 + 0.0j
            for op, d in zip(reversed(ops), reversed(dims)):
                val *= op[r % d, c % d]
                r //= d
                c //= d
            out[row, col] = val
    return out


def series_expm(h: np.ndarray, t: float, terms: int = 50) -> np.ndarray:
    """exp(-i 2 pi h t) by Taylor series with scaling and squaring."""
    a = -2j * np.pi * t * np.asarray(h, dtype=complex)
    norm = np.linalg.norm(a, ord=np.inf)
    squarings = max(0, int(np.ceil(np.log2(max(norm, 1e-30)))) + 1)
    a = a / (2**squarings)
    out = np.eye(a.shape[0], dtype=complex)
    term = np.eye(a.shape[0], dtype=complex)
    for k in range(1, terms + 1):
        term = term @ a / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def partial_trace_oracle(rho: np.ndarray, keep, n_spins: int) -> np.ndarray:
    """Reduced matrix by an explicit sum over traced-spin computational indices."""
    keep = sorted(keep)
    traced = [j for j in range(1, n_spins + 1) if j not in keep]
    dim_keep = 2 ** len(keep)
    out = np.zeros((dim_keep, dim_keep), dtype=complex)

    def full_index(keep_bits, traced_bits):
        bits = {}
        for j, b in zip(keep, keep_bits):
            bits[j] = b
        for j, b in zip(traced, traced_bits):
            bits[j] = b
        idx = 0
        for j in range(1, n_spins + 1):
            idx = (idx << 1) | bits[j]
        return idx

    for r in range(dim_keep):
        rbits = [(r >> (len(keep) - 1 - i)) & 1 for i in range(len(keep))]
        for c in range(dim_keep):
            cbits = [(c >> (len(keep) - 1 - i)) & 1 for i in range(len(keep))]
            acc = 0.0 + 0.0j
            for m in range(2 ** len(traced)):
                tbits = [(m >> (len(traced) - 1 - i)) & 1 for i in range(len(traced))]
                acc += rho[full_index(rbits, tbits), full_index(cbits, tbits)]
            out[r, c] = acc
    return out


def trotter_segment_oracle(sys, seg, rf_scale=1.0, zeeman_offset=0.0,
                           target_species=None, n_steps=10000) -> np.ndarray:
    """Fixed-frame propagator of one segment by midpoint Trotter product.

    The drive is kept explicitly time dependent in the base rotating frame:
    H(t) = H_int + offset Z'/2
           + s A [cos(2 pi delta t + phi) Sx + sin(...) Sy] / 2.
    Steps are exponentiated by Taylor series (the per-step phase is tiny).
    """
    from spinforge.spincore import collective
    from spinforge.spinsys import internal_hamiltonian

    n = sys.n_spins
    h_int = internal_hamiltonian(sys, "full")
    z_all = collective("Z", n)
    rf_spins = sys.species_indices(target_species)
    sx = collective("X", n, rf_spins)
    sy = collective("Y", n, rf_spins)

    tau = seg.duration
    dt = tau / n_steps
    t_mid = (np.arange(n_steps) + 0.5) * dt
    arg = 2 * np.pi * seg.freq_offset * t_mid + seg.phase
    amp = rf_scale * seg.amplitude / 2.0
    h_stack = (h_int + zeeman_offset * 0.5 * z_all)[None, :, :] \
        + amp * (np.cos(arg)[:, None, None] * sx + np.sin(arg)[:, None, None] * sy)

    a = -2j * np.pi * dt * h_stack
    u = np.broadcast_to(np.eye(2**n, dtype=complex), a.shape).copy()
    term = u.copy()
    for k in range(1, 13):
        term = term @ a / k
        u = u + term
    while u.shape[0] > 1:
        m = u.shape[0]
        if m % 2 == 1:
            tail = u[-1]
            u = u[1::2] @ u[0:-1:2]
            u[-1] = tail @ u[-1]
        else:
            u = u[1::2] @ u[0::2]
    return u[0]


def trotter_pulse_oracle(sys, pulse, rf_scale=1.0, zeeman_offset=0.0, n_steps=10000):
    out = np.eye(sys.dim, dtype=complex)
    for seg in pulse.segments:
        out = trotter_segment_oracle(sys, seg, rf_scale, zeeman_offset,
                                     pulse.target_species, n_steps) @ out
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_hermitian(rng, dim):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (a + a.conj().T) / 2


def random_density(rng, dim):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (a + a.conj().T) / 2


def random_unitary(rng, dim):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(a)
    return q * (np.diagonal(r) / np.abs(np.diagonal(r)))
