import json
import tempfile
import unittest
from datetime import datetime
from pathlib import Path

import numpy as np

from msgate.errors import ConfigError, InsufficientDataError
from msgate.utils import humanize_hz, jsonable, read_shots, run_directory, write_csv, write_json


class TestUtils(unittest.TestCase):

    def test_humanize_hz(self):
        self.assertEqual(humanize_hz(0), "0 Hz")
        self.assertEqual(humanize_hz(418), "418 Hz")
        self.assertEqual(humanize_hz(2.346e6), "2.346 MHz")
        self.assertEqual(humanize_hz(-12.5e3), "-12.5 kHz")

    def test_jsonable(self):
        text = json.dumps({"a": np.float64(1.5), "b": np.arange(3), "c": 1 + 2j}, default=jsonable)
        self.assertEqual(json.loads(text), {"a": 1.5, "b": [0, 1, 2], "c": [1.0, 2.0]})
        with self.assertRaises(TypeError):
            jsonable(object())

    def test_run_directory_is_unique(self):
        now = datetime(2026, 1, 2, 3, 4, 5)
        with tempfile.TemporaryDirectory() as tmp:
            first = run_directory(Path(tmp), "calibrate", now)
            second = run_directory(Path(tmp), "calibrate", now)
            self.assertEqual(first.name, "20260102-030405-calibrate")
            self.assertEqual(second.name, "20260102-030405-calibrate-2")
            write_json(first / "x.json", {"k": np.int64(3)})
            self.assertEqual(json.loads((first / "x.json").read_text()), {"k": 3})

    def test_shot_files(self):

        with tempfile.TemporaryDirectory() as tmp:
            path = write_csv(Path(tmp) / "scan.csv", ["kappa", "successes", "trials"], [(0.0, 3, 10), (1.0, 7, 10)])
            loaded = read_shots(path)
            np.testing.assert_allclose(loaded.fraction, [0.3, 0.7])
            bad = Path(tmp) / "bad.csv"
            bad.write_text("kappa,hits,trials\n0,1,2\n")
            with self.assertRaises(ConfigError):
                read_shots(bad)
            bad.write_text("kappa,successes,trials\n0,x,2\n")
            with self.assertRaises(InsufficientDataError):
                read_shots(bad)


if __name__ == '__main__':
    unittest.main()
