import io
import math
import unittest

import numpy as np

from msgate import constants as c
from msgate.backend import (
    HEADER,
    ExperimentJob,
    ExperimentResult,
    StreamBackend,
    read_frame,
    serve,
    write_frame,
)
from msgate.dynamics import entangling_angle
from msgate.errors import BackendError, ProtocolError
from msgate.models import TrapConfig
from msgate.pulse import aom_inverse, aom_response
from msgate.virtual import Truth, VirtualExperiment

TRAP = TrapConfig(ion_count=2, axial_freq=c.TWO_PI * 0.75e6, radial_com_freqs=(c.TWO_PI * 2.4e6, c.TWO_PI * 2.2e6))


def alignment_job(**overrides):
    fields = dict(kind="alignment", params={"pulse_area": 0.95 * math.pi}, sweep_parameter="well_position_m",
                  sweep_values=np.linspace(-1e-6, 1e-6, 5), shots=100, measure=[0, 1])
    fields.update(overrides)
    return ExperimentJob(**fields)


class TestFrames(unittest.TestCase):
    def test_frame_round_trip(self):
        stream = io.BytesIO()
        write_frame(stream, {"job": {"kind": "alignment"}})
        write_frame(stream, {"value": np.float64(2.5)})
        stream.seek(0)
        self.assertEqual(read_frame(stream), {"job": {"kind": "alignment"}})
        self.assertEqual(read_frame(stream), {"value": 2.5})
        self.assertIsNone(read_frame(stream))

    def test_truncated_frame(self):
        body = b'{"job": {}}'
        with self.assertRaises(ProtocolError):
            read_frame(io.BytesIO(HEADER.pack(len(body)) + body[:-3]))
        with self.assertRaises(ProtocolError):
            read_frame(io.BytesIO(b"\x00\x00"))

    def test_non_object_payload(self):
        body = b"[1, 2]"
        with self.assertRaises(ProtocolError):
            read_frame(io.BytesIO(HEADER.pack(len(body)) + body))


class TestMessages(unittest.TestCase):
    def test_job_dict(self):
        job = alignment_job(job_id=4)
        again = ExperimentJob.from_dict(job.to_dict())
        self.assertEqual(again.kind, "alignment")
        self.assertEqual(again.sweep_values, job.sweep_values)
        self.assertEqual(again.measure, [0, 1])
        self.assertEqual(again.job_id, 4)

    def test_job_validation(self):
        with self.assertRaises(ProtocolError):
            alignment_job(shots=0)
        with self.assertRaises(ProtocolError):
            alignment_job(measure=[])
        data = alignment_job().to_dict()
        data["schema_version"] = 2
        with self.assertRaises(ProtocolError):
            ExperimentJob.from_dict(data)
        data = alignment_job().to_dict()
        del data["sweep"]
        with self.assertRaises(ProtocolError):
            ExperimentJob.from_dict(data)

    def test_counts_must_sum_to_shots(self):
        with self.assertRaises(ProtocolError):
            ExperimentResult(job_id=1, x=[0.0], counts=[{"0": 60.0, "1": 30.0}], shots=100)
        with self.assertRaises(ProtocolError):
            ExperimentResult(job_id=1, x=[0.0, 1.0], counts=[{"0": 100.0}], shots=100)

    def test_select_and_marginal(self):
        result = ExperimentResult(job_id=1, x=[0.0, 1.0],
                                  counts=[{"00": 50.0, "01": 10.0, "10": 20.0, "11": 20.0},
                                          {"00": 0.0, "01": 0.0, "10": 0.0, "11": 100.0}], shots=100)
        first = result.marginal(0)
        np.testing.assert_allclose(first.successes, [40.0, 100.0])
        second = result.marginal(1)
        np.testing.assert_allclose(second.successes, [30.0, 100.0])
        even = result.select(["00", "11"], "even")
        np.testing.assert_allclose(even.fraction, [0.7, 1.0])
        pops = result.populations()
        np.testing.assert_allclose(pops["01"], [0.1, 0.0])


class TestServe(unittest.TestCase):
    def test_serve_virtual_experiment(self):
        requests = io.BytesIO()
        write_frame(requests, {"job": alignment_job(job_id=1).to_dict()})
        write_frame(requests, {"job": alignment_job(kind="nonsense", job_id=2).to_dict()})
        requests.seek(0)
        replies = io.BytesIO()
        served = serve(VirtualExperiment(TRAP, seed=1), requests, replies)
        self.assertEqual(served, 2)
        replies.seek(0)
        first = read_frame(replies)
        result = ExperimentResult.from_dict(first["result"])
        self.assertEqual(result.job_id, 1)
        self.assertEqual(len(result.counts), 5)
        self.assertIn("error", read_frame(replies))

    def test_client_over_buffers(self):
        served = io.BytesIO()
        expected = VirtualExperiment(TRAP, seed=None).run(alignment_job(job_id=1))
        write_frame(served, {"result": expected.to_dict()})
        served.seek(0)
        client = StreamBackend(served, io.BytesIO())
        result = client.run(alignment_job())
        self.assertEqual(result.counts, expected.counts)

    def test_client_reports_errors(self):
        replies = io.BytesIO()
        write_frame(replies, {"error": "unknown job kind"})
        replies.seek(0)
        with self.assertRaises(BackendError):
            StreamBackend(replies, io.BytesIO()).run(alignment_job())
        with self.assertRaises(BackendError):
            StreamBackend(io.BytesIO(), io.BytesIO()).run(alignment_job())

    def test_client_checks_job_id(self):
        replies = io.BytesIO()
        stale = VirtualExperiment(TRAP, seed=None).run(alignment_job(job_id=7))
        write_frame(replies, {"result": stale.to_dict()})
        replies.seek(0)
        with self.assertRaises(ProtocolError):
            StreamBackend(replies, io.BytesIO()).run(alignment_job())


class TestVirtualExperiment(unittest.TestCase):
    def test_same_seed_same_counts(self):
        a = VirtualExperiment(TRAP, seed=5)
        b = VirtualExperiment(TRAP, seed=5)
        for _ in range(2):
            self.assertEqual(a.run(alignment_job()).counts, b.run(alignment_job()).counts)
        c_ = VirtualExperiment(TRAP, seed=6)
        self.assertNotEqual(a.run(alignment_job()).counts, c_.run(alignment_job()).counts)

    def test_noiseless_counts_are_expectations(self):
        virtual = VirtualExperiment(TRAP, seed=None)
        result = virtual.run(alignment_job(sweep_values=[-virtual.truth.well_offset], measure=[0]))
        expected = math.sin(0.5 * 0.95 * math.pi) ** 2
        self.assertAlmostEqual(result.counts[0]["1"], 100 * expected)

    def test_spam_flips_dark_outcomes(self):
        virtual = VirtualExperiment(TRAP, Truth(spam=(0.1, 0.0)), seed=None)
        job = ExperimentJob("zeta_echo", {"gates": 8}, "zeta", [1.10], shots=100, measure=[0])
        self.assertAlmostEqual(virtual.run(job).counts[0]["1"], 10.0)

    def test_measure_out_of_range(self):
        with self.assertRaises(ProtocolError):
            VirtualExperiment(TRAP).run(alignment_job(measure=[2]))

    def test_unknown_kind(self):
        with self.assertRaises(BackendError):
            VirtualExperiment(TRAP).run(alignment_job(kind="teleport"))

    def test_ms_gate_measures_the_pair(self):
        virtual = VirtualExperiment(TRAP, seed=None)
        params = {"pair": [0, 1], "manifold": "x", "drive_frequency_hz": 2.39e6, "duration_s": 250e-6,
                  "rabi_hz": [50e3, 50e3]}
        with self.assertRaises(ProtocolError):
            virtual.run(ExperimentJob("ms_gate", params, "none", [0.0], shots=10, measure=[0]))
        with self.assertRaises(ProtocolError):
            virtual.run(ExperimentJob("ms_gate", params, "phase", [0.0], shots=10, measure=[0, 1]))

    def test_halving_global_intensity_halves_angle(self):
        virtual = VirtualExperiment(TRAP, seed=None)
        model = virtual.truth.aom["counter"]
        params = {"pair": [0, 1], "manifold": "x", "drive_frequency_hz": 2.39e6, "duration_s": 250e-6,
                  "rabi_hz": [50e3, 50e3], "global_amplitude": 150.0}
        full = entangling_angle(virtual.ms_drive(params))
        params["global_amplitude"] = aom_inverse(model, aom_response(model, 150.0) / math.sqrt(2.0))
        half = entangling_angle(virtual.ms_drive(params))
        self.assertNotEqual(full, 0.0)
        self.assertAlmostEqual(half / full, 0.5, places=10)

    def echo_return(self, virtual, zeta):
        job = ExperimentJob("zeta_echo", {"gates": 8}, "zeta", [zeta], shots=1000, measure=[0])
        return 1.0 - virtual.run(job).counts[0]["1"] / 1000

    def test_zeta_echo_from_simulated_blocks(self):
        virtual = VirtualExperiment(TRAP, seed=None)
        star = float(virtual.zeta_star[0])
        self.assertAlmostEqual(self.echo_return(virtual, star), 1.0, places=9)
        below, above = self.echo_return(virtual, star - 0.05), self.echo_return(virtual, star + 0.05)
        self.assertAlmostEqual(below, above, delta=1e-4)
        phase = 8 * virtual.truth.zeta_slope * 0.05
        closed_form = 0.5 * (1.0 + math.exp(-0.5 * (virtual.truth.echo_noise * phase) ** 2))
        self.assertAlmostEqual(above, closed_form, delta=0.1 * (1.0 - closed_form))
        self.assertLess(self.echo_return(virtual, star + 0.2), above)

    def test_echo_phase_includes_residual_shift(self):
        virtual = VirtualExperiment(TRAP, seed=None)
        star = float(virtual.zeta_star[1])
        self.assertAlmostEqual(virtual.echo_phase(1, star), virtual.residual_shift[1], delta=0.1 * virtual.residual_shift[1])

    def test_gate_loop_populations(self):
        virtual = VirtualExperiment(TRAP, seed=None)
        job = ExperimentJob("gate_loop", {"pair": [0, 1], "theta": math.pi / 2}, "repetitions", [1, 2, 3],
                            shots=1000, measure=[0, 1])
        for point in virtual.run(job).counts:
            self.assertAlmostEqual(point["01"], point["10"])
            self.assertAlmostEqual(sum(point.values()), 1000.0)


if __name__ == "__main__":
    unittest.main()
