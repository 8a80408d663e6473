import numpy as np
import pytest

from spinforge import protocol as pr
from spinforge import spincore as sc
from spinforge import spinsys as ss
from spinforge import targets
from spinforge.pulse import PulseSegment, ShapedPulse

from conftest import random_density, series_expm


@pytest.fixture
def malonic():
    return ss.malonic_system()


class TestTargets:
    def test_cnn_flips_targets_when_control_set(self):
        u = targets.cnn(3, (1, 2)).unitary
        # |001> (index 1) -> |111> (index 7); |000> untouched
        assert u[7, 1] == 1.0 and u[0, 0] == 1.0 and u[1, 1] == 0.0

    def test_iiz_to_zzz_action(self):
        u = targets.iiz_to_zzz().unitary
        out = u @ sc.product_operator("IIZ") @ u.conj().T
        np.testing.assert_allclose(out, sc.product_operator("ZZZ"), atol=1e-12)

    def test_tqpp_completion_action(self):
        u = targets.tqpp_completion().unitary
        tq = targets.three_quantum_operator(3)
        out = u @ tq @ u.conj().T
        np.testing.assert_allclose(out, targets.pseudopure_ideal_state(), atol=1e-12)

    def test_swap_unitary(self):
        u = targets.swap(1, 3, 3).unitary
        rho = sc.product_operator("XIZ")
        np.testing.assert_allclose(u @ rho @ u.conj().T, sc.product_operator("ZIX"), atol=1e-12)


class TestCoherenceDecompose:
    def test_xxx_orders(self):
        rho = sc.product_operator("XXX")
        comps = pr.coherence_decompose(rho)
        present = {n for n, c in comps.items() if np.abs(c).max() > 1e-14}
        assert present == {-3, -1, 1, 3}
        three_q = comps[3] + comps[-3]
        expected = (sc.product_operator("+++") + sc.product_operator("---")) / 8
        np.testing.assert_allclose(three_q, expected, atol=1e-14)
        # Frobenius-squared weight of the 3Q part is exactly 1/4 of the state
        w3 = np.real(np.trace(three_q @ three_q.conj().T))
        wall = np.real(np.trace(rho @ rho.conj().T))
        assert np.isclose(w3 / wall, 0.25, atol=1e-14)

    def test_zzz_is_order_zero(self):
        comps = pr.coherence_decompose(sc.product_operator("ZZZ"))
        for n, c in comps.items():
            if n != 0:
                assert np.abs(c).max() == 0

    def test_rotation_phases(self, rng):
        rho = random_density(rng, 8)
        comps = pr.coherence_decompose(rho)
        phi = np.pi / 7
        r = pr.collective_z_rotation(phi, 3)
        for n, c in comps.items():
            rotated = r @ c @ r.conj().T
            np.testing.assert_allclose(rotated, np.exp(-1j * n * phi) * c, atol=1e-12)

    def test_components_sum_exactly(self, rng):
        rho = random_density(rng, 8)
        total = sum(pr.coherence_decompose(rho).values())
        np.testing.assert_array_equal(total, rho)


class TestPhaseShiftedUnitary:
    def test_zero_shift(self, rng):
        u = series_expm(random_density(rng, 8), 0.2)
        np.testing.assert_allclose(pr.phase_shifted_unitary(u, 0.0), u, atol=1e-14)

    def test_two_pi_shift(self, rng):
        u = series_expm(random_density(rng, 8), 0.2)
        np.testing.assert_allclose(pr.phase_shifted_unitary(u, 2 * np.pi), u, atol=1e-12)

    def test_diagonal_invariant(self):
        u = np.diag(np.exp(1j * np.array([0.1, 0.4, -0.3, 2.2, 0.0, 1.0, -1.0, 0.6])))
        np.testing.assert_allclose(pr.phase_shifted_unitary(u, 1.23), u, atol=1e-14)


class TestPhaseCycleFilter:
    def test_raw_sum_values(self):
        s3 = pr.phase_cycle_sum(3)
        assert np.isclose(s3.real, -6.0, atol=1e-12) and abs(s3.imag) < 1e-12
        assert abs(pr.phase_cycle_sum(1)) < 1e-12
        assert abs(pr.phase_cycle_sum(2)) < 1e-12
        assert abs(pr.phase_cycle_sum(-3).real + 6.0) < 1e-12

    def test_identity_gate_recovers_three_quantum(self):
        rho = targets.three_quantum_operator(3)
        out = pr.phase_cycle_filter(np.eye(8, dtype=complex), rho,
                                    pr.three_quantum_filter_cycle())
        np.testing.assert_allclose(out, rho, atol=1e-12)

    def test_one_quantum_cancels(self):
        rho = sc.product_operator("+II") + sc.product_operator("-II")
        u = np.diag(np.exp(1j * np.linspace(0.0, 2.1, 8)))
        out = pr.phase_cycle_filter(u, rho, pr.three_quantum_filter_cycle())
        assert np.abs(out).max() < 1e-12

    def test_ideal_tqpp_gives_labelled_state(self):
        rho = sc.product_operator("XXX")
        out = pr.phase_cycle_filter(targets.tqpp_completion().unitary, rho,
                                    pr.three_quantum_filter_cycle())
        np.testing.assert_allclose(out, targets.pseudopure_ideal_state(), atol=1e-12)

    def test_passes_only_order_three(self, rng):
        rho = random_density(rng, 8)
        out = pr.phase_cycle_filter(np.eye(8, dtype=complex), rho,
                                    pr.three_quantum_filter_cycle())
        comps = pr.coherence_decompose(out)
        for n, c in comps.items():
            if abs(n) != 3:
                assert np.abs(c).max() < 1e-10
        expected = pr.coherence_decompose(rho)[3] + pr.coherence_decompose(rho)[-3]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_geometric_sum_oracle(self, rng):
        # filter coefficient for each input order from the literal sum
        rho = random_density(rng, 8)
        cycle = pr.three_quantum_filter_cycle()
        out = pr.phase_cycle_filter(np.eye(8, dtype=complex), rho, cycle)
        acc = np.zeros_like(rho)
        for n, comp in pr.coherence_decompose(rho).items():
            coeff = cycle.receiver_sign * pr.phase_cycle_sum(n) / 6.0
            acc += coeff * comp
        np.testing.assert_allclose(out, acc, atol=1e-12)


class TestPseudopureProtocol:
    def test_ideal_chain_exact(self, malonic):
        res = pr.pseudopure_protocol(malonic, targets.iiz_to_zzz().unitary,
                                     targets.tqpp_completion().unitary)
        assert np.isclose(res.correlation, 1.0, atol=1e-12)
        np.testing.assert_allclose(res.state, targets.pseudopure_ideal_state(), atol=1e-10)
        # signal weight is exactly 1/4 of the XXX input weight
        w_out = np.real(np.trace(res.state @ res.state))
        w_in = np.real(np.trace(sc.product_operator("XXX") @ sc.product_operator("XXX")))
        assert np.isclose(w_out / w_in, 0.25, atol=1e-12)

    def test_signal_weight_quarter(self, malonic):
        # the filtered 3Q part carries 1/4 of the XXX Frobenius weight
        rho = sc.product_operator("XXX")
        filtered = pr.phase_cycle_filter(np.eye(8, dtype=complex), rho,
                                         pr.three_quantum_filter_cycle())
        w = np.real(np.trace(filtered @ filtered)) / np.real(np.trace(rho @ rho))
        assert np.isclose(w, 0.25, atol=1e-14)

    def test_zero_amplitude_pulses_fail(self, malonic):
        dead = ShapedPulse((PulseSegment(0.54, 0.0, 0.0), ), "13C")
        dead2 = ShapedPulse((PulseSegment(1.10, 0.0, 0.0), ), "13C")
        res = pr.pseudopure_protocol(malonic, dead, dead2)
        assert abs(res.correlation) < 0.2

    def test_wrong_size_system(self):
        two = ss.SpinSystem(("a", "b"), ("13C",) * 2, np.zeros(2), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            pr.pseudopure_protocol(two, np.eye(4, dtype=complex), np.eye(4, dtype=complex))


class TestStateCorrelation:
    def test_self_correlation(self, rng):
        rho = random_density(rng, 8)
        assert np.isclose(pr.state_correlation(rho, rho), 1.0, atol=1e-12)

    def test_orthogonal_products(self):
        a = sc.product_operator("XII")
        b = sc.product_operator("IXI")
        assert np.isclose(pr.state_correlation(a, b), 0.0, atol=1e-14)

    def test_mixed_state_arithmetic(self):
        ideal = targets.pseudopure_ideal_state()
        rho = ideal + 0.1 * sc.product_operator("ZZZ")
        got = pr.state_correlation(rho, ideal)
        # independent trace arithmetic: ZZZ is orthogonal to the ideal state
        t_ii = np.real(np.trace(ideal @ ideal))
        t_zz = np.real(np.trace(sc.product_operator("ZZZ") @ sc.product_operator("ZZZ")))
        expected = t_ii / np.sqrt((t_ii + 0.01 * t_zz) * t_ii)
        assert np.isclose(got, expected, atol=1e-12)

    def test_zero_ideal_rejected(self, rng):
        with pytest.raises(ValueError):
            pr.state_correlation(random_density(rng, 4), np.zeros((4, 4)))


class TestTransferTime:
    def test_strong_methylene_coupling(self):
        tau = pr.transfer_time(18.7)
        assert np.isclose(tau, 0.0401069518716, atol=1e-10)
        assert abs(tau - 0.040) / 0.040 < 0.01

    def test_arithmetic(self):
        assert np.isclose(pr.transfer_time(0.75), 1.0)
        assert np.isclose(pr.transfer_time(-0.75), 1.0)

    def test_exchange_swaps_product_state(self, rng):
        d = 18.7
        tau = pr.transfer_time(d)
        u = ss.exchange_propagator(2, [(1, 2, d)], tau)
        rho_h = random_density(rng, 2)
        rho_c = random_density(rng, 2)
        out = u @ np.kron(rho_h, rho_c) @ u.conj().T
        np.testing.assert_allclose(out, np.kron(rho_c, rho_h), atol=1e-8)

    def test_zero_coupling(self):
        with pytest.raises(ValueError):
            pr.transfer_time(0.0)


class TestRunSequence:
    def test_hahn_refocuses_zeeman(self, rng):
        sys = ss.SpinSystem(("a", "b"), ("13C",) * 2,
                            np.array([3.1, -1.7]), np.zeros((2, 2)))
        rho = sc.product_operator("XI")
        for _ in range(10):
            t = rng.uniform(0.01, 3.0)
            out = pr.run_sequence(sys, pr.hahn_echo_elements(t), rho)
            corr = pr.state_correlation(out, rho)
            assert np.isclose(abs(corr), 1.0, atol=1e-10)

    def test_empty_sequence(self, malonic, rng):
        rho = random_density(rng, 8)
        np.testing.assert_array_equal(pr.run_sequence(malonic, [], rho), rho)

    def test_hahn_on_three_quantum_against_expm_oracle(self, malonic):
        rho = targets.three_quantum_operator(3)
        t = 0.8
        out = pr.run_sequence(malonic, pr.hahn_echo_elements(t), rho)
        h = ss.internal_hamiltonian(malonic, "full")
        u_half = series_expm(h, t / 2)
        sy = sc.collective("Y", 3)
        lam, v = np.linalg.eigh(sy)
        y180 = (v * np.exp(-1j * np.pi / 2 * lam)) @ v.conj().T
        u = u_half @ y180 @ u_half
        np.testing.assert_allclose(out, u @ rho @ u.conj().T, atol=1e-8)

    def test_preserves_hermiticity_and_trace(self, malonic, rng):
        rho = random_density(rng, 8) + 2.0 * np.eye(8)
        els = [pr.Delay(0.3), pr.IdealPulse("X", 1.1, (1, 3)), pr.Delay(0.2),
               pr.IdealPulse("Y", -0.4)]
        out = pr.run_sequence(malonic, els, rho)
        assert np.abs(out - out.conj().T).max() < 1e-12
        assert np.isclose(np.trace(out), np.trace(rho), atol=1e-12)

    def test_invalid_subset(self, malonic):
        with pytest.raises(ValueError):
            pr.run_sequence(malonic, [pr.IdealPulse("X", 1.0, (5,))], np.eye(8, dtype=complex))


class TestMrev8:
    def test_cycle_structure(self):
        els = pr.mrev8_cycle_elements(0.01)
        pulses = [e for e in els if isinstance(e, pr.IdealPulse)]
        delays = [e for e in els if isinstance(e, pr.Delay)]
        assert len(pulses) == 8
        assert np.isclose(sum(d.duration for d in delays), 12 * 0.01)
        assert all(np.isclose(abs(p.angle), np.pi / 2) for p in pulses)

    def test_dipolar_suppression_one_cycle(self):
        d = 0.4
        tau = 0.1 / (2 * np.pi * d) / 12   # 2*pi*d*t_c = 0.1
        sys = ss.SpinSystem(("a", "b"), ("13C",) * 2, np.zeros(2),
                            np.array([[0.0, d], [d, 0.0]]))
        u = pr.sequence_propagator(sys, pr.mrev8_cycle_elements(tau))
        tr = np.abs(np.trace(u) / 4) ** 2
        theta = 2 * np.pi * d * 12 * tau
        assert tr >= 1 - 10 * theta**2

    def test_zero_hamiltonian_cycle_is_identity(self):
        sys = ss.SpinSystem(("a", "b"), ("13C",) * 2, np.zeros(2), np.zeros((2, 2)))
        u = pr.sequence_propagator(sys, pr.mrev8_cycle_elements(0.05))
        phase = u[0, 0] / abs(u[0, 0])
        np.testing.assert_allclose(u / phase, np.eye(4), atol=1e-12)

    def test_effective_field_in_zx_plane_with_root2_over_3_scale(self):
        nu = 0.05
        tau = 0.02
        sys = ss.SpinSystem(("a",), ("13C",), np.array([nu]), np.zeros((1, 1)))
        u = pr.sequence_propagator(sys, pr.mrev8_cycle_elements(tau))
        t_c = 12 * tau
        # effective Hamiltonian from the one-cycle propagator eigenphases
        w, vec = np.linalg.eig(u)
        angles = np.angle(w)
        h_eff = vec @ np.diag(-angles / (2 * np.pi * t_c)) @ np.linalg.inv(vec)
        coeff = {ax: np.real(np.trace(h_eff @ sc.PAULI[ax])) / 2 for ax in "XYZ"}
        scale = np.hypot(coeff["X"], coeff["Z"]) / (nu / 2)
        assert abs(coeff["Y"]) < 1e-10 * nu
        assert abs(scale - np.sqrt(2) / 3) < 0.01 * np.sqrt(2) / 3
        # the recorded effective-field direction: z and -x components equal
        assert np.isclose(coeff["X"] / coeff["Z"], -1.0, atol=0.02)


class TestSequenceSerialmisc:
    def test_shaped_ref_element(self, malonic):
        pulse = ShapedPulse((PulseSegment(0.02, 5.0, 0.1),), "13C")
        rho = sc.product_operator("XII")
        out = pr.run_sequence(malonic, [pr.ShapedPulseRef(pulse)], rho)
        from spinforge.pulse import pulse_propagator
        u = pulse_propagator(malonic, pulse)
        np.testing.assert_allclose(out, u @ rho @ u.conj().T, atol=1e-12)

    def test_delay_validation(self):
        with pytest.raises(ValueError):
            pr.Delay(-0.1)
        with pytest.raises(ValueError):
            pr.IdealPulse("Q", 1.0)
