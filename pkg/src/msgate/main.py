import argparse
import logging
import math
import shlex
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import constants as c
from .backend import StreamBackend, serve
from .chain import all_radial_modes, plan_all_pairs
from .comb import balance_ratio, per_gate_phase, total_shift, zeta_scan
from .compiler import circuit_unitary, parse_circuit, resolve_waveform_phases
from .config import ArtifactConfig, load_config
from .dynamics import gate_unitary
from .errors import ConfigError, LightShiftError, MsGateError
from .fitkit import (
    fit_amplitude_scan,
    fit_gaussian_peak,
    fit_ramsey_decay,
    mle_parity_contrast,
    mle_upper_half_gaussian,
)
from .models import PulseProgram
from .pipeline import Calibration, run_schedule
from .pulse import envelope_square_integral
from .record import CalibrationRecord
from .utils import humanize_hz, read_shots, run_directory, write_csv, write_dict_rows, write_json
from .virtual import VirtualExperiment

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _zeta_grid(text: str) -> np.ndarray:
    try:
        start, stop, count = text.split(":")
        return np.linspace(float(start), float(stop), int(count))
    except ValueError:
        raise ConfigError(f"--zeta expects start:stop:count, got {text!r}") from None


def _virtual(config: ArtifactConfig) -> VirtualExperiment:
    return VirtualExperiment(config.trap, config.truth, seed=config.run.seed, comb=config.comb.spec)


def _open_run(config: ArtifactConfig, command: str) -> Path:
    path = run_directory(config.run.output_dir, command)
    write_json(path / "config.json", config.to_dict())
    return path


def cmd_modes(config: ArtifactConfig, args) -> int:
    out = _open_run(config, "modes")
    spectra = all_radial_modes(config.trap)
    n = config.trap.ion_count
    rows = []
    for spec in spectra:
        for k in range(spec.mode_count):
            row = [spec.manifold, k, spec.frequencies[k] / c.TWO_PI]
            row += list(spec.participation[k]) + list(spec.lamb_dicke[k])
            rows.append(row)
    header = ["manifold", "mode", "frequency_hz"]
    header += [f"participation_{q}" for q in range(n)] + [f"eta_{q}" for q in range(n)]
    write_csv(out / "modes.csv", header, rows)
    plans = plan_all_pairs(spectra) if n > 1 else []
    write_dict_rows(out / "plans.csv", [p.to_dict() for p in plans])
    write_json(out / "modes.json", {"spectra": [s.to_dict() for s in spectra], "plans": [p.to_dict() for p in plans]})

    for spec in spectra:
        print(f"{spec.manifold}: " + ", ".join(humanize_hz(f / c.TWO_PI) for f in spec.frequencies))
    for plan in plans:
        kind = "balanced" if plan.balanced else "unbalanced"
        print(f"pair {plan.qubit_i}-{plan.qubit_j}: modes {plan.mode_upper}/{plan.mode_lower}, "
              f"detuning {humanize_hz(plan.detuning / c.TWO_PI)} ({kind})")
    print(f"wrote {out}")
    return 0


def cmd_lightshift(config: ArtifactConfig, args) -> int:
    out = _open_run(config, "lightshift")
    settings = config.comb
    if args.rabi_hz is not None:
        settings.rabi_target = c.TWO_PI * args.rabi_hz
    point = settings.operating_point()
    breakdown = total_shift(point)
    program = PulseProgram(duration=config.pipeline.gate_duration, pair=(0, 1), detuning=0.0)
    phase = per_gate_phase(breakdown.total, envelope_square_integral(program))
    report = {**breakdown.to_dict(), "zeta_br": settings.zeta, "phase_per_gate_deg": math.degrees(phase)}

    zetas = _zeta_grid(args.zeta)
    if settings.rabi_target == 0.0:
        scan = [breakdown] * len(zetas)
    else:
        scan = zeta_scan(point, zetas, settings.rabi_target)
        try:
            zeta, residual = balance_ratio(point, settings.rabi_target)
            report["balance_zeta_br"] = zeta
            report["balance_residual_hz"] = residual / c.TWO_PI
        except LightShiftError as exc:
            logger.warning("no balance point: %s", exc)
    labels = [f"{a}{b}" for a, b in breakdown.per_pair]
    write_csv(
        out / "zeta_scan.csv",
        ["zeta_br", "total_shift_hz", *(f"shift_{label}_hz" for label in labels)],
        ([z, b.total / c.TWO_PI, *(v / c.TWO_PI for v in b.per_pair.values())] for z, b in zip(zetas, scan)),
    )
    write_json(out / "shift.json", report)

    print(f"total differential shift {breakdown.total / c.TWO_PI:.1f} Hz at zeta_br {settings.zeta:.3f}")
    print(f"phase per gate {math.degrees(phase):.1f} deg")
    if "balance_zeta_br" in report:
        print(f"balance point zeta_br {report['balance_zeta_br']:.4f}")
    print(f"wrote {out}")
    return 0


def _backend(config: ArtifactConfig, args):
    if getattr(args, "backend_command", None):
        return StreamBackend.spawn(shlex.split(args.backend_command))
    return _virtual(config)


def cmd_calibrate(config: ArtifactConfig, args) -> int:
    out = Path(args.resume).parent if args.resume else _open_run(config, "calibrate")
    checkpoint = Path(args.resume) if args.resume else out / "checkpoint.json"
    backend = _backend(config, args)

    def sink(name: str, rows: List[dict]) -> None:
        write_dict_rows(out / f"{name}.csv", rows)

    def on_stage(name: str, status: str) -> None:
        print(f"{name}: {status}")

    try:
        record = run_schedule(backend, config, checkpoint=checkpoint, resume=bool(args.resume),
                              sink=sink, on_stage=on_stage)
    finally:
        if isinstance(backend, StreamBackend):
            backend.close()
    record.save(out / "record.json")
    for key, entry in sorted(record.pairs.items()):
        anchors = ", ".join(f"M={m}: {math.degrees(v):.2f} deg" for m, v in sorted(entry.anchors.items()))
        kappa = "uncalibrated" if entry.kappa is None else f"{entry.kappa:.4f}"
        print(f"pair {key}: kappa {kappa}; frame rotation {anchors or 'none'}")
        fidelity = record.diagnostics.get(f"fidelity:{key}")
        if fidelity:
            print(f"pair {key}: fidelity {fidelity['report']}")
    print(f"wrote {out / 'record.json'}")
    return 0


def _physical_ms(config: ArtifactConfig, record: CalibrationRecord):
    """Hardware MS unitaries of the virtual experiment at the recorded calibration."""
    virtual = _virtual(config)
    session = Calibration(virtual, config.trap, config.pipeline, record)
    swap = np.eye(4)[[0, 2, 1, 3]]

    def unitary(qubits, theta):
        entry = record.pair(qubits)
        frame = entry.frame_rotation_for(theta)
        params = session.ms_params(entry, entry.kappa, session.global_amplitude_for(entry.pair, theta), frame=(frame, frame))
        u = gate_unitary(virtual.ms_drive(params))
        return u if tuple(qubits) == entry.pair else swap @ u @ swap

    return unitary


def cmd_simulate(config: ArtifactConfig, args) -> int:
    circuit = parse_circuit(Path(args.circuit).read_text(encoding="utf-8"))
    out = _open_run(config, "simulate")
    if args.record:
        unitary = circuit_unitary(circuit, ms_unitary=_physical_ms(config, CalibrationRecord.load(args.record)))
    else:
        unitary = circuit_unitary(circuit)
    probabilities = np.abs(unitary[:, 0]) ** 2
    probabilities /= probabilities.sum()
    n = circuit.qubit_count
    states = [format(k, f"0{n}b") for k in range(2 ** n)]
    rng = np.random.default_rng(config.run.seed) if config.run.seed is not None else None
    counts = rng.multinomial(args.shots, probabilities) if rng is not None else probabilities * args.shots
    write_csv(out / "populations.csv", ["state", "probability", "counts"], zip(states, probabilities, counts))
    for state, p in zip(states, probabilities):
        print(f"P{state} = {p:.6f}")
    print(f"wrote {out}")
    return 0


def cmd_fidelity(config: ArtifactConfig, args) -> int:
    record = CalibrationRecord.load(args.record)
    out = _open_run(config, "fidelity")
    session = Calibration(_virtual(config), config.trap, config.pipeline, record)
    report = session.estimate_fidelity(tuple(args.pair), args.theta)
    write_json(out / "fidelity.json", report.to_dict())
    print(f"pair {args.pair[0]}-{args.pair[1]} theta {args.theta:.4f} rad: F = {report.text}")
    print(f"wrote {out}")
    return 0


def cmd_compile(config: ArtifactConfig, args) -> int:
    circuit = parse_circuit(Path(args.circuit).read_text(encoding="utf-8"))
    source = None
    if args.record:
        record = CalibrationRecord.load(args.record)

        def source(pair, theta):
            return record.pair(pair).frame_rotation_for(theta)
    pulses = resolve_waveform_phases(circuit, source)
    out = _open_run(config, "compile")
    write_json(out / "pulses.json", [p.to_dict() for p in pulses])
    for pulse in pulses:
        qubits = ",".join(str(q) for q in pulse.qubits)
        phases = " ".join(f"{p:+.6f}" for p in pulse.phases)
        print(f"{pulse.kind:6s} q{qubits:4s} angle {pulse.angle:+.6f} phase {phases} [{pulse.frame}]")
    print(f"wrote {out}")
    return 0


FIT_MODELS = ("gaussian", "upper_half_gaussian", "amplitude", "ramsey", "parity_contrast")


def cmd_fit(config: ArtifactConfig, args) -> int:
    data = read_shots(args.scan)
    if args.model == "amplitude":
        if args.duration is None:
            raise ConfigError("--duration is required for the amplitude model")
        fit = fit_amplitude_scan(data, args.duration)
    elif args.model == "gaussian":
        fit = fit_gaussian_peak(data)
    elif args.model == "upper_half_gaussian":
        fit = mle_upper_half_gaussian(data)
    elif args.model == "ramsey":
        fit = fit_ramsey_decay(data)
    else:
        fit = mle_parity_contrast(data)
    out = _open_run(config, "fit")
    write_json(out / "fit.json", {"scan": str(args.scan), **fit.to_dict()})
    for name, value in fit.params.items():
        lo, hi = fit.ci95.get(name, (math.nan, math.nan))
        print(f"{name} = {value:.6g}  [{lo:.6g}, {hi:.6g}]")
    if not fit.converged:
        print(f"not converged: {fit.message}")
    print(f"wrote {out}")
    return 0 if fit.converged else 1


def cmd_serve(config: ArtifactConfig, args) -> int:
    serve(_virtual(config), sys.stdin.buffer, sys.stdout.buffer)
    return 0


def cmd_dashboard(config: ArtifactConfig, args) -> int:
    from .ui.app import CalibrationDashboardApp

    out = _open_run(config, "dashboard")
    app = CalibrationDashboardApp(config, _backend(config, args), out)
    app.run()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msgate", description="MS gate simulator and calibration engine")
    parser.add_argument("-c", "--config", type=Path, help="TOML configuration file")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("modes", help="Radial mode spectra and gate plans for every pair").set_defaults(func=cmd_modes)

    p = commands.add_parser("lightshift", help="Comb fourth-order light shift and zeta_br scan")
    p.add_argument("--zeta", default="1.0:1.2:21", help="zeta_br sweep as start:stop:count")
    p.add_argument("--rabi-hz", type=float, help="Two-photon Rabi target in Hz")
    p.set_defaults(func=cmd_lightshift)

    p = commands.add_parser("calibrate", help="Run the calibration schedule")
    p.add_argument("--resume", type=Path, help="Checkpoint file of an interrupted run")
    p.add_argument("--backend-command", help="Command of an external backend speaking the job protocol")
    p.set_defaults(func=cmd_calibrate)

    p = commands.add_parser("simulate", help="Final-state populations of a circuit")
    p.add_argument("circuit", type=Path)
    p.add_argument("--shots", type=int, default=1000)
    p.add_argument("--record", type=Path, help="Calibration record; MS pulses use the virtual hardware")
    p.set_defaults(func=cmd_simulate)

    p = commands.add_parser("fidelity", help="Bell-state fidelity estimate of one pair")
    p.add_argument("--pair", type=int, nargs=2, default=[0, 1], metavar=("I", "J"))
    p.add_argument("--theta", type=float, default=math.pi / 2, help="Entangling angle in rad")
    p.add_argument("--record", type=Path, required=True)
    p.set_defaults(func=cmd_fidelity)

    p = commands.add_parser("compile", help="Resolve waveform phases of a circuit")
    p.add_argument("circuit", type=Path)
    p.add_argument("--record", type=Path, help="Calibration record with frame-rotation anchors")
    p.set_defaults(func=cmd_compile)

    p = commands.add_parser("fit", help="Fit an externally recorded scan (columns x, successes, trials)")
    p.add_argument("model", choices=FIT_MODELS)
    p.add_argument("scan", type=Path)
    p.add_argument("--duration", type=float, help="Pulse duration in s (amplitude model)")
    p.set_defaults(func=cmd_fit)

    commands.add_parser("serve", help="Serve the virtual experiment over stdin/stdout").set_defaults(func=cmd_serve)

    p = commands.add_parser("dashboard", help="Terminal dashboard running the schedule")
    p.add_argument("--backend-command", help="Command of an external backend speaking the job protocol")
    p.set_defaults(func=cmd_dashboard)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else getattr(logging, config.run.log_level)
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)

    try:
        return args.func(config, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MsGateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
