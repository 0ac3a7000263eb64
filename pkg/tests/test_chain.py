import itertools
import unittest

import numpy as np

from msgate import constants as c
from msgate.chain import (
    all_radial_modes,
    equilibrium_positions,
    ion_index,
    ion_label,
    length_scale,
    pair_couplings,
    plan_all_pairs,
    radial_modes,
    select_mode_pair,
)
from msgate.errors import ChainInstabilityError, ConfigError, ModeSelectionError
from msgate.models import TrapConfig

TWO_PI = c.TWO_PI


def trap(n, axial_hz=0.75e6, radial_hz=(2.4e6, 2.2e6), **kwargs):
    return TrapConfig(
        ion_count=n,
        axial_freq=TWO_PI * axial_hz,
        radial_com_freqs=(TWO_PI * radial_hz[0], TWO_PI * radial_hz[1]),
        **kwargs,
    )


class TestEquilibrium(unittest.TestCase):

    def test_single_ion_at_center(self):
        self.assertEqual(equilibrium_positions(trap(1)).tolist(), [0.0])

    def test_empty_chain_is_a_config_error(self):
        with self.assertRaises(ConfigError):
            equilibrium_positions(trap(0))

    def test_three_ions_symmetric(self):
        z = equilibrium_positions(trap(3))
        self.assertEqual(z[1], 0.0)
        self.assertAlmostEqual(z[0], -z[2], delta=1e-18)

    def test_two_ion_spacing_closed_form(self):
        config = trap(2, axial_hz=0.7e6)
        z = equilibrium_positions(config)
        expected = 2 ** (1 / 3) * length_scale(config)
        self.assertAlmostEqual((z[1] - z[0]) / expected, 1.0, places=12)
        # Roughly 5 um for Yb at 700 kHz.
        self.assertTrue(4e-6 < z[1] - z[0] < 7e-6)

    def test_force_balance(self):
        for n in range(2, 9):
            config = trap(n, axial_hz=0.4e6)
            u = equilibrium_positions(config) / length_scale(config)
            self.assertTrue(np.all(np.diff(u) > 0))
            diff = u[:, None] - u[None, :]
            np.fill_diagonal(diff, np.inf)
            forces = -u + np.sum(np.sign(diff) / diff ** 2, axis=1)
            self.assertLess(np.max(np.abs(forces)), 1e-12)
            self.assertAlmostEqual(float(u.mean()), 0.0, places=12)


class TestRadialModes(unittest.TestCase):

    def test_single_ion(self):
        config = trap(1)
        spec = radial_modes(config, [0.0])
        self.assertAlmostEqual(spec.frequencies[0], config.radial_com_freqs[0])
        self.assertEqual(spec.participation.tolist(), [[1.0]])

    def test_com_mode_exact(self):
        for n in range(1, 9):
            config = trap(n, axial_hz=0.4e6)
            spec = radial_modes(config, equilibrium_positions(config))
            self.assertLess(abs(spec.frequencies[0] / config.radial_com_freqs[0] - 1.0), 1e-12)
            np.testing.assert_allclose(spec.participation[0], np.full(n, 1 / np.sqrt(n)), atol=1e-10)
            self.assertTrue(np.all(np.diff(spec.frequencies) <= 0))

    def test_orthonormal_participation(self):
        for n in range(1, 9):
            config = trap(n, axial_hz=0.4e6)
            b = radial_modes(config, equilibrium_positions(config)).participation
            self.assertLess(np.max(np.abs(b @ b.T - np.eye(n))), 1e-10)

    def test_two_ion_tilt_frequency(self):
        config = trap(2, axial_hz=0.7e6)
        spec = radial_modes(config, equilibrium_positions(config))
        expected = np.sqrt(spec.frequencies[0] ** 2 - config.axial_freq ** 2)
        self.assertAlmostEqual(spec.frequencies[1] / expected, 1.0, places=12)

    def test_lamb_dicke_formula_and_scaling(self):
        config = trap(2)
        spec = radial_modes(config, equilibrium_positions(config))
        eta = spec.participation[0, 0] * config.raman_delta_k * np.sqrt(c.HBAR / (2 * config.ion_mass * spec.frequencies[0]))
        self.assertAlmostEqual(spec.lamb_dicke[0, 0], eta, places=15)
        doubled = trap(2, raman_delta_k=2 * config.raman_delta_k)
        spec2 = radial_modes(doubled, equilibrium_positions(doubled))
        np.testing.assert_allclose(spec2.lamb_dicke, 2 * spec.lamb_dicke, rtol=1e-14)

    def test_instability_raises(self):
        config = trap(6, axial_hz=1.5e6, radial_hz=(2.4e6, 2.2e6))
        with self.assertRaises(ChainInstabilityError):
            config.validate()
        soft = trap(6, axial_hz=1.5e6, radial_hz=(1.2e6, 1.1e6))
        with self.assertRaises(ChainInstabilityError):
            radial_modes(soft, equilibrium_positions(soft))


class TestModeSelection(unittest.TestCase):

    def test_labels(self):
        self.assertEqual([ion_label(k, 3) for k in range(3)], [-1, 0, 1])
        self.assertEqual([ion_label(k, 4) for k in range(4)], [-1, 0, 1, 2])
        self.assertEqual(ion_index(2, 4), 3)
        with self.assertRaises(ModeSelectionError):
            ion_index(3, 4)

    def test_two_ion_plan_balanced(self):
        spectra = all_radial_modes(trap(2))
        plan = select_mode_pair(spectra[0], (0, 1), spectra[1:])
        self.assertTrue(plan.balanced)
        self.assertEqual((plan.mode_upper, plan.mode_lower), (0, 1))
        f = spectra[0].frequencies
        self.assertTrue(f[1] < plan.drive_frequency < f[0])
        self.assertTrue(30e3 < abs(plan.detuning) / TWO_PI < 90e3)

    def test_balanced_point_has_zero_sensitivity(self):
        spectra = all_radial_modes(trap(2))
        plan = select_mode_pair(spectra[0], (0, 1), spectra[1:])
        mu = plan.drive_frequency
        slope = sum(np.sum(pair_couplings(s, (0, 1)) / (mu - s.frequencies) ** 2) for s in spectra)
        scale = sum(np.sum(np.abs(pair_couplings(s, (0, 1))) / (mu - s.frequencies) ** 2) for s in spectra)
        self.assertLess(abs(slope) / scale, 1e-9)

    def test_three_ion_plans(self):
        spectra = all_radial_modes(trap(3))
        outer = select_mode_pair(spectra[0], (ion_index(-1, 3), ion_index(1, 3)), spectra[1:])
        self.assertTrue(outer.balanced)
        center = select_mode_pair(spectra[0], (ion_index(0, 3), ion_index(1, 3)), spectra[1:])
        self.assertFalse(center.balanced)
        self.assertAlmostEqual(abs(center.detuning), TWO_PI * c.FALLBACK_OFFSET_HZ)

    def test_objective_is_maximal(self):
        for n in range(2, 9):
            spec = all_radial_modes(trap(n, axial_hz=0.4e6))[0]
            for pair in itertools.combinations(range(n), 2):
                plan = select_mode_pair(spec, pair)
                cpl = pair_couplings(spec, pair)
                best = np.max(np.abs(cpl[:-1] - cpl[1:]))
                chosen = abs(cpl[plan.mode_upper] - cpl[plan.mode_lower])
                self.assertGreaterEqual(chosen, best)

    def test_six_ion_plan_count(self):
        plans = plan_all_pairs(all_radial_modes(trap(6, axial_hz=0.5e6)))
        self.assertEqual(len(plans), 15)

    def test_invalid_pair(self):
        spec = all_radial_modes(trap(2))[0]
        with self.assertRaises(ModeSelectionError):
            select_mode_pair(spec, (0, 0))
        with self.assertRaises(ModeSelectionError):
            select_mode_pair(spec, (0, 2))


if __name__ == '__main__':
    unittest.main()
