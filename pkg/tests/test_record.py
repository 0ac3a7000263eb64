import json
import math
import tempfile
import unittest
from pathlib import Path

from msgate import constants as c
from msgate.errors import CalibrationError
from msgate.models import AomModel
from msgate.record import CalibrationRecord, PairCalibration, pair_key


def sample_pair(**overrides):
    fields = dict(
        qubit_i=0,
        qubit_j=1,
        manifold="x",
        mode_lower=1,
        mode_upper=0,
        reference_mode=0,
        detuning=c.TWO_PI * 8.3e3,
        drive_frequency=c.TWO_PI * 3.05e6,
        balanced=True,
        ia_rabi=(c.TWO_PI * 61e3, c.TWO_PI * 59e3),
        global_amplitude=150.0,
        global_aom=AomModel(188.5, c.TWO_PI * 73.6e3),
        kappa=0.93,
        anchors={2: math.radians(-6.25), 32: math.radians(-0.39)},
    )
    fields.update(overrides)
    return PairCalibration(**fields)


def sample_record():
    record = CalibrationRecord(ion_count=2, well_position=0.4e-6)
    record.aom = {0: {"co": AomModel(210.0, c.TWO_PI * 30e3), "counter": AomModel(188.5, c.TWO_PI * 73.6e3)}}
    record.pi_amplitudes = {0: {"co": 95.0, "counter": 120.0}}
    record.sidebands = {"x": [c.TWO_PI * 3.1e6, c.TWO_PI * 3.0e6]}
    record.zeta = {0: 1.1, 1: 1.09}
    record.pairs = {"0-1": sample_pair()}
    record.diagnostics = {"frame_rotation:0-1": {"difference_rad": 0.001}}
    record.completed = ["align", "pi_times"]
    return record


class TestPairCalibration(unittest.TestCase):
    def test_pair_key_is_sorted(self):
        self.assertEqual(pair_key((3, 1)), "1-3")
        self.assertEqual(sample_pair().key, "0-1")

    def test_frame_rotation_interpolates_anchors(self):
        entry = sample_pair()
        self.assertAlmostEqual(entry.frame_rotation_for(math.pi / 2), entry.anchors[2])
        self.assertAlmostEqual(entry.frame_rotation_for(math.pi / 32), entry.anchors[32])
        slope = (entry.anchors[2] - entry.anchors[32]) / (math.pi / 2 - math.pi / 32)
        self.assertAlmostEqual(entry.frame_rotation_for(math.pi / 4), entry.anchors[2] - slope * math.pi / 4)

    def test_frame_rotation_needs_two_anchors(self):
        with self.assertRaises(CalibrationError):
            sample_pair(anchors={2: 0.1}).frame_rotation_for(0.3)

    def test_ms_rabi_scales_with_kappa(self):
        entry = sample_pair()
        self.assertAlmostEqual(entry.ms_rabi()[0], 0.93 * entry.ia_rabi[0])
        with self.assertRaises(CalibrationError):
            sample_pair(kappa=None).ms_rabi()


class TestCalibrationRecord(unittest.TestCase):
    def test_save_load(self):
        record = sample_record()
        with tempfile.TemporaryDirectory() as tmp:
            path = record.save(Path(tmp) / "record.json")
            loaded = CalibrationRecord.load(path)
        self.assertEqual(loaded.ion_count, 2)
        self.assertEqual(loaded.completed, ["align", "pi_times"])
        self.assertAlmostEqual(loaded.zeta[1], 1.09)
        self.assertAlmostEqual(loaded.aom[0]["counter"].Xi, record.aom[0]["counter"].Xi)
        self.assertAlmostEqual(loaded.sidebands["x"][0], record.sidebands["x"][0])
        entry = loaded.pair((1, 0))
        self.assertAlmostEqual(entry.detuning, c.TWO_PI * 8.3e3)
        self.assertEqual(entry.anchors.keys(), {2, 32})
        self.assertEqual(loaded.diagnostics["frame_rotation:0-1"]["difference_rad"], 0.001)
        self.assertNotEqual(loaded.updated, "")

    def test_record_is_plain_json_in_hz(self):
        data = json.loads(sample_record().dumps())
        self.assertAlmostEqual(data["pairs"]["0-1"]["detuning_hz"], 8.3e3)
        self.assertAlmostEqual(data["sidebands_hz"]["x"][1], 3.0e6)
        self.assertEqual(data["aom"]["0"]["co"]["a_sat"], 210.0)

    def test_unknown_schema(self):
        data = json.loads(sample_record().dumps())
        data["schema_version"] = 99
        with self.assertRaises(CalibrationError):
            CalibrationRecord.from_dict(data)

    def test_missing_pair(self):
        with self.assertRaises(CalibrationError):
            sample_record().pair((0, 2))

    def test_unreadable_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "broken.json"
            path.write_text("{not json", encoding="utf-8")
            with self.assertRaises(CalibrationError):
                CalibrationRecord.load(path)


if __name__ == "__main__":
    unittest.main()
