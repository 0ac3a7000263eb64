import copy
import math
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from msgate import constants as c
from msgate.backend import ExperimentJob
from msgate.chain import all_radial_modes
from msgate.config import config_from_dict
from msgate.dynamics import entangling_angle, simulate_gate_analytic
from msgate.errors import BackendError, ConfigError, FitError, StageError
from msgate.pipeline import (
    ALIGN,
    FIDELITY,
    PI_TIMES,
    SIDEBANDS,
    Calibration,
    PipelineSettings,
    assign_sidebands,
    run_schedule,
    schedule_for,
    stage,
)
from msgate.record import CalibrationRecord
from msgate.virtual import VirtualExperiment

FAST = {
    "shots": 200,
    "coarse_kappa_points": 11,
    "fine_kappa_points": 21,
    "frame_points": 21,
    "parity_points": 16,
    "diagnostics": [],
}


def fast_config(**pipeline):
    return config_from_dict({"pipeline": dict(FAST, **pipeline), "run": {"noiseless": True}}, environ={})


class FailingBackend:
    """Virtual experiment that rejects one job kind."""

    def __init__(self, inner, kind):
        self.inner = inner
        self.kind = kind
        self.jobs = []

    def run(self, job: ExperimentJob):
        self.jobs.append(job.kind)
        if job.kind == self.kind:
            raise BackendError(f"{job.kind} unavailable")
        return self.inner.run(job)


class TestNoiselessSchedule(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.config = fast_config()
        cls.virtual = VirtualExperiment(cls.config.trap, cls.config.truth, seed=None)
        cls.stages = []
        cls.tables = {}
        cls.record = run_schedule(cls.virtual, cls.config, sink=cls.tables.__setitem__,
                                  on_stage=lambda name, state: cls.stages.append((name, state)))
        cls.session = Calibration(cls.virtual, cls.config.trap, cls.config.pipeline, cls.record)

    def test_every_stage_completes(self):
        expected = schedule_for(self.config.pipeline)
        self.assertEqual(self.record.completed, expected)
        self.assertEqual([s for s in self.stages if s[1] == "done"], [(name, "done") for name in expected])
        self.assertIn("alignment", self.tables)

    def test_well_position(self):
        self.assertAlmostEqual(self.record.well_position, -self.virtual.truth.well_offset, delta=0.02e-6)

    def test_aom_models(self):
        for q in range(2):
            for geometry in ("co", "counter"):
                fitted = self.record.aom[q][geometry]
                truth = self.virtual.truth.aom[geometry]
                self.assertLess(abs(fitted.a_sat / truth.a_sat - 1), 1e-3)
                self.assertLess(abs(fitted.Xi / truth.Xi - 1), 1e-3)

    def test_sidebands(self):
        for spec in self.virtual.spectra:
            measured = np.asarray(self.record.sidebands[spec.manifold])
            np.testing.assert_allclose(measured / c.TWO_PI, spec.frequencies / c.TWO_PI, atol=500.0)

    def test_zeta(self):
        for q in range(2):
            self.assertAlmostEqual(self.record.zeta[q], self.virtual.zeta_star[q], delta=0.02)

    def fresh_session(self, virtual=None, **settings):
        pipeline = replace(self.config.pipeline, **settings)
        return Calibration(virtual or self.virtual, self.config.trap, pipeline, copy.deepcopy(self.record))

    def achieved_angle(self, session, kappa):
        entry = session.record.pair((0, 1))
        return abs(entangling_angle(self.virtual.ms_drive(session.ms_params(entry, kappa))))

    def test_kappa_gives_target_angle(self):
        # first pass runs before the frame rotation is known
        theta = self.achieved_angle(self.session, self.record.pair((0, 1)).kappa)
        self.assertLess(abs(theta / (math.pi / 2) - 1.0), 0.01)

    def test_recalibrated_kappa_with_frame_rotation(self):
        session = self.fresh_session()
        kappa = session.calibrate_kappa((0, 1))
        self.assertAlmostEqual(self.achieved_angle(session, kappa), math.pi / 2, delta=1e-3)

    def test_kappa_under_shot_noise(self):
        misses = 0
        for seed in range(20):
            virtual = VirtualExperiment(self.config.trap, self.config.truth, seed=seed)
            session = self.fresh_session(virtual, shots=500, coarse_kappa_points=21, fine_kappa_points=61)
            theta = self.achieved_angle(session, session.calibrate_kappa((0, 1)))
            misses += abs(theta / (math.pi / 2) - 1.0) > 0.01
        self.assertLessEqual(misses, 1)

    def test_interpolated_frame_matches_direct_calibration(self):
        session = self.fresh_session()
        interpolated = session.record.pair((0, 1)).frame_rotation_for(math.pi / 8)
        direct = session.calibrate_frame_rotation((0, 1), gate_counts=(8,))[8]
        self.assertAlmostEqual(math.degrees(direct), math.degrees(interpolated), delta=1.0)

    def test_frame_rotation_anchors(self):
        entry = self.record.pair((0, 1))
        shift = self.virtual.residual_shift[0]
        for m in self.config.pipeline.anchors:
            self.assertAlmostEqual(math.degrees(entry.anchors[m]), -math.degrees(shift * 2 / m), delta=0.5)
            self.assertIn("gaussian_rad", self.record.diagnostics[f"frame_rotation:0-1:{m}"])

    def test_fidelity_report(self):
        report = self.record.diagnostics[f"{FIDELITY}:0-1"]
        self.assertLessEqual(report["lower"], report["fidelity"])
        self.assertLessEqual(report["fidelity"], report["upper"])
        self.assertGreater(report["fidelity"], 0.9)
        self.assertIn("^{+", report["report"])


class TestDetuningScan(unittest.TestCase):
    def test_crossings_match_root_oracle(self):
        config = fast_config(detuning_points=41, detuning_span_hz=20e3)
        virtual = VirtualExperiment(config.trap, config.truth, seed=None)
        session = Calibration(virtual, config.trap, config.pipeline)
        scan = session.symmetric_detuning_scan((0, 1))
        entry = session.record.pair((0, 1))
        base = session.ms_params(entry, 1.0)

        def difference(offset):
            params = dict(base, drive_frequency_hz=base["drive_frequency_hz"] + offset / c.TWO_PI)
            pops = np.real(np.diag(simulate_gate_analytic(virtual.ms_drive(params)).spin_state))
            return pops[0] - pops[3]

        step = scan.offsets[1] - scan.offsets[0]
        for crossing in scan.crossings:
            n = int(np.searchsorted(scan.offsets, crossing)) - 1
            root = brentq(difference, scan.offsets[n], scan.offsets[n + 1])
            self.assertLess(abs(root - crossing), 0.25 * step)
        self.assertIn("detuning_scan:0-1", session.record.diagnostics)


class TestScheduleControl(unittest.TestCase):
    def test_failure_names_stage_and_keeps_checkpoint(self):
        config = fast_config()
        virtual = VirtualExperiment(config.trap, config.truth, seed=None)
        with tempfile.TemporaryDirectory() as tmp:
            checkpoint = Path(tmp) / "checkpoint.json"
            with self.assertRaises(StageError) as ctx:
                run_schedule(FailingBackend(virtual, "sideband_scan"), config, checkpoint=checkpoint)
            self.assertEqual(ctx.exception.stage, SIDEBANDS)
            saved = CalibrationRecord.load(checkpoint)
            self.assertEqual(saved.completed, [ALIGN, PI_TIMES])

            states = []
            backend = FailingBackend(virtual, "sideband_scan")
            with self.assertRaises(StageError):
                run_schedule(backend, config, checkpoint=checkpoint, resume=True,
                             on_stage=lambda name, state: states.append((name, state)))
            self.assertEqual(states[:2], [(ALIGN, "skipped"), (PI_TIMES, "skipped")])
            self.assertEqual(states[-1], (SIDEBANDS, "failed"))
            self.assertEqual(backend.jobs, ["sideband_scan"])

    def test_stage_wraps_module_errors(self):
        with self.assertRaises(StageError) as ctx:
            with stage("kappa"):
                raise FitError("no crossing")
        self.assertEqual(ctx.exception.stage, "kappa")
        self.assertIn("no crossing", str(ctx.exception))
        self.assertIsInstance(ctx.exception.__cause__, FitError)

    def test_schedule_order(self):
        settings = PipelineSettings(diagnostics=("gate_loops", "detuning_scan"))
        names = schedule_for(settings)
        self.assertEqual(names[:4], ["align", "pi_times", "sidebands", "detuning_scan"])
        self.assertLess(names.index("frame_rotation"), names.index("gate_loops"))
        self.assertNotIn("ramsey", names)

    def test_settings_validation(self):
        with self.assertRaises(ConfigError):
            PipelineSettings(frame_fit="median").validate()
        with self.assertRaises(ConfigError):
            PipelineSettings(anchors=(2,)).validate()
        with self.assertRaises(ConfigError):
            PipelineSettings(diagnostics=("fidelity",)).validate()

    def test_frame_rotation_needs_kappa(self):
        config = fast_config()
        session = Calibration(VirtualExperiment(config.trap, seed=None), config.trap, config.pipeline)
        with self.assertRaises(StageError):
            session.calibrate_frame_rotation((0, 1))


class TestSidebandAssignment(unittest.TestCase):
    def test_every_mode_assigned_and_balanced(self):
        config = config_from_dict({"trap": {"ion_count": 4}}, environ={})
        spectra = all_radial_modes(config.trap)
        assignment = assign_sidebands(spectra)
        self.assertEqual(len(assignment), 8)
        for (manifold, k), ion in assignment.items():
            spec = next(s for s in spectra if s.manifold == manifold)
            eta = np.abs(spec.lamb_dicke[k])
            self.assertGreaterEqual(eta[ion], eta.max() * (1 - 1e-9))
        loads = np.bincount(list(assignment.values()), minlength=4)
        self.assertLessEqual(loads.max() - loads.min(), 2)


if __name__ == "__main__":
    unittest.main()
