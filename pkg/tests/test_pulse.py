import math
import unittest

import numpy as np
from scipy.integrate import quad
from scipy.special import erf

from msgate import constants as c
from msgate.errors import OverSaturationError, ThetaRangeError, UnreachableRateError
from msgate.models import AomModel, PulseProgram
from msgate.pulse import (
    aom_inverse,
    aom_response,
    envelope_square_integral,
    erf_frame_profile,
    gaussian_envelope,
    theta_to_global_scale,
)
from msgate.record import CalibrationRecord, PairCalibration

MODEL = AomModel(a_sat=188.5, Xi=c.TWO_PI * 73.6e3)
TAU = 250e-6


def program(**kwargs):
    kwargs.setdefault("frame_rotation_total", (0.3, -0.2))
    return PulseProgram(duration=TAU, pair=(0, 1), detuning=c.TWO_PI * 52e3, **kwargs)


class TestAom(unittest.TestCase):

    def test_response_points(self):
        self.assertEqual(aom_response(MODEL, 0.0), 0.0)
        self.assertAlmostEqual(aom_response(MODEL, MODEL.a_sat), MODEL.Xi, places=6)
        self.assertAlmostEqual(aom_response(MODEL, MODEL.a_sat / 3) / (MODEL.Xi / 2), 1.0, places=12)

    def test_over_saturation(self):
        with self.assertRaises(OverSaturationError):
            aom_response(MODEL, 1.01 * MODEL.a_sat)

    def test_inverse(self):
        self.assertEqual(aom_inverse(MODEL, 0.0), 0.0)
        self.assertAlmostEqual(aom_inverse(MODEL, MODEL.Xi), MODEL.a_sat, places=9)
        with self.assertRaises(UnreachableRateError):
            aom_inverse(MODEL, 1.001 * MODEL.Xi)

    def test_round_trip(self):
        rng = np.random.default_rng(7)
        for omega in rng.uniform(0.0, MODEL.Xi, 1000):
            back = aom_response(MODEL, aom_inverse(MODEL, omega))
            self.assertLess(abs(back - omega) / MODEL.Xi, 1e-12)

    def test_monotone_below_saturation(self):
        a = np.linspace(0.0, MODEL.a_sat, 500)
        values = [aom_response(MODEL, x) for x in a]
        self.assertTrue(np.all(np.diff(values) > 0))


class TestEnvelope(unittest.TestCase):

    def test_sigma(self):
        self.assertAlmostEqual(program().envelope_sigma, 0.133 * TAU)

    def test_peak_and_symmetry(self):
        p = program()
        self.assertEqual(gaussian_envelope(p, TAU / 2), 1.0)
        x = np.linspace(0, TAU / 2, 101)
        np.testing.assert_allclose(gaussian_envelope(p, TAU / 2 - x), gaussian_envelope(p, TAU / 2 + x), atol=1e-12)

    def test_tails_not_zeroed(self):
        p = program()
        sigma = p.envelope_sigma
        self.assertAlmostEqual(gaussian_envelope(p, 0.0), math.exp(-(TAU / 2) ** 2 / (2 * sigma ** 2)), places=14)
        self.assertGreater(gaussian_envelope(p, 0.0), 0.0)

    def test_spline_fidelity(self):
        t = np.linspace(0, TAU, 20001)
        for knots in (64, 65, 129):
            p = program(knots=knots)
            exact = np.exp(-((t - TAU / 2) ** 2) / (2 * p.envelope_sigma ** 2))
            self.assertLess(np.max(np.abs(gaussian_envelope(p, t) - exact)), 1e-4)

    def test_square_integral(self):
        p = program()
        energy = envelope_square_integral(p)
        oracle, _ = quad(lambda t: gaussian_envelope(p, t) ** 2, 0, TAU, limit=400, epsabs=1e-16, epsrel=1e-13)
        self.assertAlmostEqual(energy / oracle, 1.0, places=10)
        sigma = p.envelope_sigma
        closed = sigma * math.sqrt(math.pi) * erf(TAU / (2 * sigma))
        self.assertAlmostEqual(energy / closed, 1.0, places=5)


class TestFrameProfile(unittest.TestCase):

    def test_endpoints_and_midpoint(self):
        p = program()
        self.assertEqual(erf_frame_profile(p, 0.0), 0.0)
        self.assertAlmostEqual(erf_frame_profile(p, TAU), 0.3, places=14)
        self.assertAlmostEqual(erf_frame_profile(p, TAU, ion=1), -0.2, places=14)
        self.assertAlmostEqual(erf_frame_profile(p, TAU / 2), 0.15, places=12)

    def test_monotone(self):
        p = program()
        values = erf_frame_profile(p, np.linspace(0, TAU, 2001))
        self.assertTrue(np.all(np.diff(values) >= 0))


class TestThetaScale(unittest.TestCase):

    def setUp(self):
        self.record = CalibrationRecord(ion_count=2)
        self.record.pairs["0-1"] = PairCalibration(
            qubit_i=0, qubit_j=1, manifold="x", mode_lower=1, mode_upper=0, reference_mode=0,
            detuning=c.TWO_PI * 8e3, drive_frequency=c.TWO_PI * 3e6, balanced=True,
            ia_rabi=(c.TWO_PI * 60e3, c.TWO_PI * 60e3), global_amplitude=150.0, global_aom=MODEL, kappa=1.0,
        )

    def test_calibrated_angle_keeps_amplitude(self):
        scale = theta_to_global_scale(self.record, (0, 1), math.pi / 2)
        self.assertAlmostEqual(scale * MODEL.a_sat, 150.0, places=9)

    def test_angle_follows_global_intensity(self):
        omega_cal = aom_response(MODEL, 150.0)
        for theta in (math.pi / 4, math.pi / 16, math.pi / 32):
            a = theta_to_global_scale(self.record, (1, 0), theta) * MODEL.a_sat
            ratio = (aom_response(MODEL, a) / omega_cal) ** 2
            self.assertAlmostEqual(ratio, theta / (math.pi / 2), places=10)
        self.assertEqual(theta_to_global_scale(self.record, (0, 1), 0.0), 0.0)

    def test_near_saturation_amplitude(self):
        a_cal = 0.95 * MODEL.a_sat
        self.record.pair((0, 1)).global_amplitude = a_cal
        a = theta_to_global_scale(self.record, (0, 1), math.pi / 8) * MODEL.a_sat
        self.assertGreater(a, a_cal / 4)
        self.assertLess(a, a_cal / 2)
        ratio = (aom_response(MODEL, a) / aom_response(MODEL, a_cal)) ** 2
        self.assertAlmostEqual(ratio, 0.25, places=10)

    def test_range(self):
        with self.assertRaises(ThetaRangeError):
            theta_to_global_scale(self.record, (0, 1), 1.01 * math.pi / 2)
        with self.assertRaises(ThetaRangeError):
            theta_to_global_scale(self.record, (0, 1), -0.1)


if __name__ == '__main__':
    unittest.main()
