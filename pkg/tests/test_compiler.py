import math
import unittest

import numpy as np

from msgate.compiler import (
    Circuit,
    FrameState,
    Gate,
    circuit_unitary,
    direct_unitary,
    equal_up_to_phase,
    expand_zz,
    format_circuit,
    frame,
    gate_matrix,
    ms,
    parse_angle,
    parse_circuit,
    resolve_waveform_phases,
    rz,
    ry_co,
    ry_cu,
    z_frames,
    zz,
)
from msgate.errors import CircuitError, CircuitSyntaxError, FrameError

ZZ_ANGLES = (math.pi / 2, -math.pi / 2, math.pi / 4, -math.pi / 4, math.pi / 8, -math.pi / 8)


def zz_oracle(theta):
    return np.diag(np.exp(-0.5j * theta * np.array([1, -1, -1, 1])))


def random_single(rng, qubit_count):
    q = int(rng.integers(qubit_count))
    kind = rng.choice(["rz", "ry_co", "ry_cu", "frame"])
    return Gate(str(kind), (q,), float(rng.uniform(-math.pi, math.pi)))


def random_circuit(rng, qubit_count, length):
    circuit = Circuit(qubit_count)
    for _ in range(length):
        if rng.random() < 0.6:
            circuit.append(random_single(rng, qubit_count))
            continue
        i, j = (int(q) for q in rng.choice(qubit_count, size=2, replace=False))
        if rng.random() < 0.5:
            circuit.append(zz(i, j, float(rng.uniform(-math.pi / 2, math.pi / 2))))
        else:
            circuit.append(ms(i, j, float(rng.uniform(-math.pi, math.pi)), float(rng.uniform(-math.pi, math.pi))))
    return circuit


class TestZZSynthesis(unittest.TestCase):
    def test_zz_matches_oracle(self):
        for theta in ZZ_ANGLES:
            u = circuit_unitary(Circuit(2, [zz(0, 1, theta)]))
            self.assertTrue(equal_up_to_phase(u, zz_oracle(theta)), theta)

    def test_zz_on_reversed_pair(self):
        for theta in ZZ_ANGLES:
            u = circuit_unitary(Circuit(2, [zz(1, 0, theta)]))
            self.assertTrue(equal_up_to_phase(u, zz_oracle(theta)), theta)

    def test_zero_angle_is_identity(self):
        u = circuit_unitary(Circuit(2, [zz(0, 1, 0.0)]))
        self.assertTrue(equal_up_to_phase(u, np.eye(4)))

    def test_wrappers(self):
        sequence = expand_zz(zz(0, 1, -math.pi / 4))
        self.assertEqual([g.kind for g in sequence], ["ry_cu", "ry_cu", "ms", "ry_cu", "ry_cu"])
        self.assertAlmostEqual(sequence[0].angle, math.pi / 2)
        self.assertAlmostEqual(sequence[1].angle, -math.pi / 2)
        self.assertAlmostEqual(sequence[2].angle, math.pi / 4)
        self.assertEqual(sequence[2].phase, 0.0)
        self.assertAlmostEqual(sequence[4].angle, math.pi / 2)

    def test_wrappers_with_frame_rotation(self):
        sequence = expand_zz(zz(0, 1, math.pi / 2), frame_rotation=0.2)
        self.assertEqual([g.kind for g in sequence], ["ry_cu", "ry_cu", "ms", "frame", "frame", "ry_cu", "ry_cu"])

    def test_expand_rejects_other_kinds(self):
        with self.assertRaises(CircuitError):
            expand_zz(ms(0, 1, 0.5))

    def test_angle_limit(self):
        with self.assertRaises(CircuitError):
            Circuit(2).append(zz(0, 1, 1.6))

    def test_native_minus_xx(self):
        circuit = Circuit(2, [zz(0, 1, math.pi / 4)], {"native_sign": "-1"})
        self.assertTrue(equal_up_to_phase(circuit_unitary(circuit), zz_oracle(math.pi / 4)))
        pulses = resolve_waveform_phases(circuit)
        played = [p for p in pulses if p.kind == "ms"][0]
        self.assertAlmostEqual(abs(played.phases[1]), math.pi)
        self.assertEqual(played.phases[0], 0.0)

    def test_bad_native_sign(self):
        with self.assertRaises(CircuitError):
            Circuit(2, [], {"native_sign": "2"}).validate()


class TestPhaseFrames(unittest.TestCase):
    def test_zz_is_phase_agnostic(self):
        rng = np.random.default_rng(7)
        theta = math.pi / 4
        for _ in range(100):
            prefix = [rz(int(q), float(rng.uniform(-4, 4))) for q in rng.integers(2, size=3)]
            circuit = Circuit(2, prefix + [zz(0, 1, theta)])
            pulses = [p for p in resolve_waveform_phases(circuit) if p.kind != "frame"]
            self.assertEqual([p.phases for p in pulses if p.kind == "ms"], [(0.0, 0.0)])
            for p in pulses:
                if p.kind == "ry_cu":
                    self.assertAlmostEqual(p.phases[0], math.pi / 2)
                    self.assertEqual(p.frame, "temporary")
            self.assertTrue(equal_up_to_phase(circuit_unitary(circuit), direct_unitary(circuit)))

    def test_rz_shifts_following_ms_phase(self):
        circuit = Circuit(2, [rz(0, math.pi / 2), ms(0, 1, math.pi / 2)])
        (pulse,) = resolve_waveform_phases(circuit)
        self.assertAlmostEqual(pulse.phases[0], -math.pi / 2)
        self.assertEqual(pulse.phases[1], 0.0)
        self.assertEqual(pulse.frame, "default")

    def test_temporary_frame_is_discarded(self):
        circuit = Circuit(2, [rz(0, 0.3), zz(0, 1, math.pi / 4), ms(0, 1, math.pi / 2)])
        pulses = resolve_waveform_phases(circuit, frame_rotation=lambda pair, theta: 0.25)
        played = [p for p in pulses if p.kind == "ms"]
        self.assertEqual(played[0].phases, (0.0, 0.0))
        self.assertAlmostEqual(played[1].phases[0], -0.3)
        self.assertEqual(played[1].phases[1], 0.0)
        unwrap = [p for p in pulses if p.kind == "ry_cu"][2:]
        for p in unwrap:
            self.assertAlmostEqual(p.phases[0], math.pi / 2 - 0.25)

    def test_random_circuits_match_direct_product(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            circuit = random_circuit(rng, 3, 25)
            self.assertTrue(equal_up_to_phase(circuit_unitary(circuit), direct_unitary(circuit), 1e-10))

    def test_ms_frame_rotation_compensates_light_shift(self):
        f = 0.37
        circuit = Circuit(2, [ry_co(0, 0.4), ms(0, 1, math.pi / 2, 0.2), ry_co(1, -0.9)])
        u = circuit_unitary(circuit, frame_rotation=lambda p, t: f, lightshift=lambda p, t: -f)
        self.assertTrue(equal_up_to_phase(u, direct_unitary(circuit), 1e-10))
        uncompensated = circuit_unitary(circuit, lightshift=lambda p, t: -f)
        self.assertFalse(equal_up_to_phase(uncompensated, direct_unitary(circuit), 1e-6))

    def test_zz_frame_rotation_leaves_z_residual(self):
        f = 0.21
        theta = math.pi / 4
        u = circuit_unitary(Circuit(2, [zz(0, 1, theta)]), frame_rotation=lambda p, t: f,
                            lightshift=lambda p, t: -f)
        self.assertTrue(equal_up_to_phase(u, z_frames([-f, -f]) @ zz_oracle(theta), 1e-10))

    def test_hardware_unitary_hook(self):
        def ideal(pair, theta):
            return gate_matrix(ms(0, 1, theta), 2)

        rng = np.random.default_rng(3)
        circuit = random_circuit(rng, 3, 15)
        u = circuit_unitary(circuit, ms_unitary=ideal)
        self.assertTrue(equal_up_to_phase(u, direct_unitary(circuit), 1e-10))

    def test_frame_state_nesting(self):
        frames = FrameState(2)
        frames.advance(0, 0.5)
        frames.enter([0])
        self.assertEqual(frames.active(0), 0.0)
        frames.advance(0, 0.1)
        with self.assertRaises(FrameError):
            frames.enter([0, 1])
        frames.restore([0])
        self.assertAlmostEqual(frames.active(0), 0.5)
        with self.assertRaises(FrameError):
            frames.restore([0])

    def test_frame_gate_emits_update(self):
        pulses = resolve_waveform_phases(Circuit(1, [frame(0, 0.2), ry_cu(0, math.pi)]))
        self.assertEqual([p.kind for p in pulses], ["frame", "ry_cu"])
        self.assertAlmostEqual(pulses[1].phases[0], math.pi / 2 - 0.2)

    def test_unitary_size_limit(self):
        with self.assertRaises(CircuitError):
            circuit_unitary(Circuit(5, [zz(0, 4, 0.1)]))


class TestCircuitText(unittest.TestCase):
    def test_parse_angle(self):
        self.assertAlmostEqual(parse_angle("pi/2"), math.pi / 2)
        self.assertAlmostEqual(parse_angle("-pi/4"), -math.pi / 4)
        self.assertAlmostEqual(parse_angle("3*pi/8"), 3 * math.pi / 8)
        self.assertAlmostEqual(parse_angle("0.25"), 0.25)
        with self.assertRaises(ValueError):
            parse_angle("tau")

    def test_parse(self):
        text = "# bell\nqubits 2\nmeta native_sign -1\nry_cu 0 pi/2\nzz 0 1 -pi/4  # entangle\nms 0 1 pi/2 pi\n"
        circuit = parse_circuit(text)
        self.assertEqual(circuit.qubit_count, 2)
        self.assertEqual(circuit.native_sign, -1)
        self.assertEqual([g.kind for g in circuit.gates], ["ry_cu", "zz", "ms"])
        self.assertAlmostEqual(circuit.gates[1].angle, -math.pi / 4)
        self.assertAlmostEqual(circuit.gates[2].phase, math.pi)

    def test_format_round_trip(self):
        circuit = random_circuit(np.random.default_rng(5), 3, 12)
        parsed = parse_circuit(format_circuit(circuit))
        self.assertEqual(parsed.gates, circuit.gates)
        self.assertEqual(parsed.qubit_count, 3)

    def test_syntax_errors_carry_line(self):
        with self.assertRaises(CircuitSyntaxError) as ctx:
            parse_circuit("qubits 2\nry_cu 0 pi\nswap 0 1\n")
        self.assertEqual(ctx.exception.line, 3)
        with self.assertRaises(CircuitSyntaxError) as ctx:
            parse_circuit("qubits 2\n\nzz 0 1 pi\n")
        self.assertEqual(ctx.exception.line, 3)
        with self.assertRaises(CircuitSyntaxError) as ctx:
            parse_circuit("qubits 2\nms 0 2 pi/2\n")
        self.assertEqual(ctx.exception.line, 2)
        with self.assertRaises(CircuitSyntaxError) as ctx:
            parse_circuit("ry_cu 0 pi\n")
        self.assertEqual(ctx.exception.line, 0)


if __name__ == "__main__":
    unittest.main()
