import contextlib
import csv
import io
import json
import math
import tempfile
import unittest
from pathlib import Path

from msgate.main import build_parser, main


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.output = self.root / "runs"

    def tearDown(self):
        self.tmp.cleanup()

    def config(self, trap: str = "") -> Path:
        path = self.root / "msgate.toml"
        path.write_text(f'{trap}\n[run]\nnoiseless = true\noutput_dir = "{self.output.as_posix()}"\n', encoding="utf-8")
        return path

    def run_cli(self, *argv):
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            code = main(["-q", *argv])
        return code, stdout.getvalue(), stderr.getvalue()

    def run_dir(self, command: str) -> Path:
        (path,) = self.output.glob(f"*-{command}")
        return path


class TestModesCommand(CliTestCase):
    def plan_rows(self):
        with (self.run_dir("modes") / "plans.csv").open(newline="", encoding="utf-8") as handle:
            return list(csv.reader(handle))[1:]

    def test_two_ions(self):
        code, out, _ = self.run_cli("-c", str(self.config()), "modes")
        self.assertEqual(code, 0)
        self.assertIn("pair 0-1", out)
        self.assertEqual(len(self.plan_rows()), 1)
        self.assertTrue((self.run_dir("modes") / "config.json").exists())

    def test_single_ion_has_no_plans(self):
        code, _, _ = self.run_cli("-c", str(self.config("[trap]\nion_count = 1")), "modes")
        self.assertEqual(code, 0)
        self.assertEqual(self.plan_rows(), [])

    def test_six_ions_plan_every_pair(self):
        trap = "[trap]\nion_count = 6\naxial_freq_hz = 0.5e6"
        code, _, _ = self.run_cli("-c", str(self.config(trap)), "modes")
        self.assertEqual(code, 0)
        self.assertEqual(len(self.plan_rows()), 15)


class TestCircuitCommands(CliTestCase):
    def circuit(self, text: str) -> Path:
        path = self.root / "circuit.txt"
        path.write_text(text, encoding="utf-8")
        return path

    def test_compile(self):
        path = self.circuit("qubits 2\nrz 0 pi/2\nzz 0 1 -pi/4\n")
        code, out, _ = self.run_cli("-c", str(self.config()), "compile", str(path))
        self.assertEqual(code, 0)
        pulses = json.loads((self.run_dir("compile") / "pulses.json").read_text(encoding="utf-8"))
        self.assertEqual([p["kind"] for p in pulses], ["ry_cu", "ry_cu", "ms", "ry_cu", "ry_cu"])
        self.assertEqual({p["frame"] for p in pulses}, {"temporary"})
        self.assertIn("[temporary]", out)

    def test_simulate_bell_state(self):
        path = self.circuit("qubits 2\nms 0 1 pi/2\n")
        code, out, _ = self.run_cli("-c", str(self.config()), "simulate", str(path), "--shots", "1000")
        self.assertEqual(code, 0)
        with (self.run_dir("simulate") / "populations.csv").open(newline="", encoding="utf-8") as handle:
            rows = {row["state"]: float(row["probability"]) for row in csv.DictReader(handle)}
        self.assertAlmostEqual(rows["00"], 0.5)
        self.assertAlmostEqual(rows["11"], 0.5)
        self.assertAlmostEqual(rows["01"], 0.0)
        self.assertIn("P11 = 0.500000", out)

    def test_syntax_error_exits_one(self):
        path = self.circuit("qubits 2\nswap 0 1\n")
        code, _, err = self.run_cli("-c", str(self.config()), "compile", str(path))
        self.assertEqual(code, 1)
        self.assertIn("line 2", err)

    def test_missing_circuit_exits_one(self):
        code, _, err = self.run_cli("-c", str(self.config()), "simulate", str(self.root / "nope.txt"))
        self.assertEqual(code, 1)
        self.assertTrue(err.startswith("error:"))


class TestFitCommand(CliTestCase):
    def test_gaussian_scan(self):
        x = [(-10 + k) * 0.1 for k in range(21)]
        rows = [f"{v},{round(1000 * (0.1 + 0.8 * math.exp(-((v - 0.2) ** 2) / (2 * 0.3 ** 2))))},1000" for v in x]
        path = self.root / "scan.csv"
        path.write_text("frame_rad,successes,trials\n" + "\n".join(rows) + "\n", encoding="utf-8")
        code, out, _ = self.run_cli("-c", str(self.config()), "fit", "gaussian", str(path))
        self.assertEqual(code, 0)
        fit = json.loads((self.run_dir("fit") / "fit.json").read_text(encoding="utf-8"))
        self.assertAlmostEqual(fit["params"]["center"], 0.2, delta=0.01)
        self.assertIn("center = ", out)

    def test_amplitude_needs_duration(self):
        path = self.root / "scan.csv"
        path.write_text("amplitude,successes,trials\n0,0,10\n", encoding="utf-8")
        code, _, err = self.run_cli("-c", str(self.config()), "fit", "amplitude", str(path))
        self.assertEqual(code, 2)
        self.assertIn("--duration", err)


class TestErrors(CliTestCase):
    def test_bad_config_exits_two(self):
        path = self.root / "bad.toml"
        path.write_text("[trap]\nions = 2\n", encoding="utf-8")
        code, _, err = self.run_cli("-c", str(path), "modes")
        self.assertEqual(code, 2)
        self.assertIn("trap.ions", err)

    def test_parser_requires_command(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit):
                build_parser().parse_args([])


if __name__ == "__main__":
    unittest.main()
