"""Calibration workflow: alignment, pi-times, sidebands, zeta, kappa, frame rotation, fidelity.

Each stage issues jobs to a :class:`~msgate.backend.Backend`, fits the returned counts and
writes its result into a :class:`~msgate.record.CalibrationRecord`. Module errors raised
inside a stage surface as :class:`~msgate.errors.StageError` carrying the stage name.
"""
import itertools
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import find_peaks

from . import constants as c
from .backend import Backend, ExperimentJob, ExperimentResult
from .chain import all_radial_modes, select_mode_pair
from .errors import CalibrationError, FitError, MsGateError, StageError
from .fitkit import (
    fidelity_estimate,
    fidelity_interval,
    fit_amplitude_scan,
    fit_gaussian_peak,
    fit_parity_decay,
    fit_ramsey_decay,
    format_interval,
    gaussian,
    linear_crossing,
    mle_parity_contrast,
    mle_upper_half_gaussian,
    wilson_interval,
)
from .models import AomModel, FitResult, ModeSpectrum, ShotData, TrapConfig
from .pulse import aom_inverse, theta_to_global_scale
from .record import ANCHOR_GATE_COUNTS, GEOMETRIES, CalibrationRecord, PairCalibration, pair_key

if TYPE_CHECKING:
    from .config import ArtifactConfig

logger = logging.getLogger(__name__)

ALIGN = "align"
PI_TIMES = "pi_times"
SIDEBANDS = "sidebands"
DETUNING_SCAN = "detuning_scan"
ZETA = "zeta"
RAMSEY = "ramsey"
KAPPA = "kappa"
FRAME_ROTATION = "frame_rotation"
GATE_LOOPS = "gate_loops"
FIDELITY = "fidelity"

SCHEDULE = (ALIGN, PI_TIMES, SIDEBANDS, DETUNING_SCAN, ZETA, RAMSEY, KAPPA, FRAME_ROTATION, GATE_LOOPS, FIDELITY)
DIAGNOSTIC_STAGES = (DETUNING_SCAN, RAMSEY, GATE_LOOPS)
# Fine kappa scans are re-centred until the crossing moves less than this fraction.
RECENTER_TOLERANCE = 0.01

Sink = Callable[[str, List[dict]], None]


@dataclass
class PipelineSettings:
    shots: int = 200
    fidelity_shots: int = 500
    gate_duration: float = c.GATE_DURATION
    # Empty selects every ion pair.
    pairs: Tuple[Tuple[int, int], ...] = ()
    well_span: float = 2.0e-6
    well_points: int = 41
    alignment_area: float = 0.95 * math.pi
    pi_times: Dict[str, float] = field(default_factory=lambda: {"co": 25e-6, "counter": 10e-6})
    scan_durations: Dict[str, float] = field(default_factory=lambda: {"co": 250e-6, "counter": 30e-6})
    amplitude_max: float = 250.0
    amplitude_points: int = 60
    sideband_margin: float = c.TWO_PI * 40e3
    sideband_step: float = c.TWO_PI * 2e3
    sideband_duration: float = 150e-6
    fine_span: float = c.TWO_PI * 12e3
    fine_points: int = 25
    echo_gates: int = 8
    zeta_range: Tuple[float, float] = (0.7, 1.5)
    zeta_points: int = 41
    ia_rabi: float = c.TWO_PI * c.COMB_RABI_TARGET_HZ
    global_amplitude: float = 150.0
    coarse_kappa_span: float = 0.2
    coarse_kappa_points: int = 21
    fine_kappa_span: float = 0.03
    fine_kappa_points: int = 41
    anchors: Tuple[int, ...] = ANCHOR_GATE_COUNTS
    # Half-width of the frame sweep is frame_span / M.
    frame_span: float = math.pi / 2
    frame_points: int = 41
    frame_fit: str = "gaussian"
    parity_points: int = 25
    detuning_span: float = c.TWO_PI * 60e3
    detuning_points: int = 61
    ramsey_gates: int = 20
    diagnostics: Tuple[str, ...] = (DETUNING_SCAN,)

    def validate(self) -> None:
        from .errors import ConfigError

        if self.shots < 1 or self.fidelity_shots < 1:
            raise ConfigError("shot counts must be >= 1")
        if self.frame_fit not in ("gaussian", "mle"):
            raise ConfigError(f"frame_fit must be 'gaussian' or 'mle', got {self.frame_fit!r}")
        if len(self.anchors) < 2 or any(m < 1 for m in self.anchors):
            raise ConfigError("frame rotation needs at least two positive anchor gate counts")
        unknown = set(self.diagnostics) - set(DIAGNOSTIC_STAGES)
        if unknown:
            raise ConfigError(f"unknown diagnostic stages {sorted(unknown)}")
        if not self.zeta_range[0] < self.zeta_range[1]:
            raise ConfigError("zeta range must be increasing")


@dataclass
class DetuningScan:
    offsets: np.ndarray
    p00: np.ndarray
    p11: np.ndarray
    p_one: np.ndarray
    # Offsets (rad/s) where P00 and P11 cross with the one-bright population suppressed.
    crossings: List[float]

    def to_dict(self) -> dict:
        return {
            "offsets_hz": (self.offsets / c.TWO_PI).tolist(),
            "crossings_hz": [x / c.TWO_PI for x in self.crossings],
        }


@dataclass
class FidelityReport:
    pair: Tuple[int, int]
    theta: float
    fidelity: float
    lower: float
    upper: float
    p00: float
    p11: float
    parity_amplitude: float

    @property
    def text(self) -> str:
        return format_interval(self.fidelity, self.lower, self.upper)

    def to_dict(self) -> dict:
        return {
            "pair": list(self.pair),
            "theta_rad": self.theta,
            "fidelity": self.fidelity,
            "lower": self.lower,
            "upper": self.upper,
            "p00": self.p00,
            "p11": self.p11,
            "parity_amplitude": self.parity_amplitude,
            "report": self.text,
        }


@contextmanager
def stage(name: str):
    logger.info("stage %s: start", name)
    try:
        yield
    except StageError:
        raise
    except MsGateError as exc:
        raise StageError(name, str(exc)) from exc
    logger.info("stage %s: done", name)


def assign_sidebands(spectra: Sequence[ModeSpectrum]) -> Dict[Tuple[str, int], int]:
    """Measuring ion for every mode: the ion coupling most strongly, ties to the least loaded."""
    load: Dict[int, int] = {}
    assignment = {}
    for spec in spectra:
        for k in range(spec.mode_count):
            eta = np.abs(spec.lamb_dicke[k])
            best = float(eta.max())
            tied = [q for q in range(spec.ion_count) if eta[q] >= best * (1.0 - 1e-9)]
            ion = min(tied, key=lambda q: (load.get(q, 0), q))
            load[ion] = load.get(ion, 0) + 1
            assignment[(spec.manifold, k)] = ion
    return assignment


def _rows(result: ExperimentResult, x_name: str, scale: float = 1.0) -> List[dict]:
    populations = result.populations()
    return [
        {x_name: x * scale, **{f"p_{k}": float(v[n]) for k, v in populations.items()}}
        for n, x in enumerate(result.x)
    ]


def _dark(data: ShotData, label: str) -> ShotData:
    return ShotData(data.x, data.trials - data.successes, data.trials, label)


def _require(fit: FitResult, what: str) -> FitResult:
    if not fit.converged:
        raise FitError(f"{what}: {fit.message}")
    return fit


class Calibration:
    """One calibration session against a backend."""

    def __init__(self, backend: Backend, trap: TrapConfig, settings: Optional[PipelineSettings] = None,
                 record: Optional[CalibrationRecord] = None, sink: Optional[Sink] = None):
        trap.validate()
        self.backend = backend
        self.trap = trap
        self.settings = settings or PipelineSettings()
        self.settings.validate()
        self.record = record or CalibrationRecord(ion_count=trap.ion_count)
        if self.record.ion_count != trap.ion_count:
            raise CalibrationError(f"record is for {self.record.ion_count} ions, trap has {trap.ion_count}")
        self.sink = sink
        self.model_spectra = all_radial_modes(trap)

    # Plumbing.

    def _run(self, kind: str, params: dict, parameter: str, values, measure: Sequence[int],
             shots: Optional[int] = None) -> ExperimentResult:
        job = ExperimentJob(
            kind=kind, params=params, sweep_parameter=parameter, sweep_values=list(np.asarray(values, dtype=float)),
            shots=shots or self.settings.shots, measure=list(measure),
        )
        return self.backend.run(job)

    def _emit(self, name: str, rows: List[dict]) -> None:
        if self.sink is not None:
            self.sink(name, rows)

    @property
    def ions(self) -> range:
        return range(self.trap.ion_count)

    @property
    def pairs(self) -> List[Tuple[int, int]]:
        if self.settings.pairs:
            return [tuple(p) for p in self.settings.pairs]
        return list(itertools.combinations(self.ions, 2))

    def _well(self) -> float:
        return 0.0 if self.record.well_position is None else self.record.well_position

    def calibrated_spectra(self) -> List[ModeSpectrum]:
        """Model spectra with the measured sideband frequencies where available."""
        spectra = []
        for spec in self.model_spectra:
            measured = self.record.sidebands.get(spec.manifold)
            if measured is not None and len(measured) == spec.mode_count:
                spec = ModeSpectrum(spec.manifold, np.asarray(measured, dtype=float), spec.participation, spec.lamb_dicke)
            spectra.append(spec)
        return spectra

    def pair_calibration(self, pair: Tuple[int, int]) -> PairCalibration:
        """Existing pair entry, or a new one planned on the calibrated spectra."""
        key = pair_key(pair)
        if key in self.record.pairs:
            return self.record.pairs[key]
        spectra = self.calibrated_spectra()
        plan = select_mode_pair(spectra[0], tuple(sorted(pair)), spectra[1:])
        aom = self.record.aom.get(plan.qubit_i, {}).get("counter")
        if aom is None:
            logger.warning("pair %s: no counter-propagating AOM fit, using defaults", key)
            aom = AomModel(a_sat=c.AOM_A_SAT, Xi=c.TWO_PI * c.AOM_XI_HZ)
        entry = PairCalibration(
            qubit_i=plan.qubit_i, qubit_j=plan.qubit_j, manifold=plan.manifold,
            mode_lower=plan.mode_lower, mode_upper=plan.mode_upper, reference_mode=plan.reference_mode,
            detuning=plan.detuning, drive_frequency=plan.drive_frequency, balanced=plan.balanced,
            ia_rabi=(self.settings.ia_rabi, self.settings.ia_rabi),
            global_amplitude=self.settings.global_amplitude, global_aom=aom,
            duration=self.settings.gate_duration,
        )
        self.record.pairs[key] = entry
        return entry

    def _zeta_pair(self, entry: PairCalibration) -> List[float]:
        return [self.record.zeta.get(q, 1.0) for q in entry.pair]

    def ms_params(self, entry: PairCalibration, kappa: float, amplitude: Optional[float] = None,
                   frame: Tuple[float, float] = (0.0, 0.0), repetitions: int = 1) -> dict:
        return {
            "pair": list(entry.pair),
            "manifold": entry.manifold,
            "drive_frequency_hz": entry.drive_frequency / c.TWO_PI,
            "duration_s": entry.duration,
            "rabi_hz": [r / c.TWO_PI for r in entry.ia_rabi],
            "kappa": kappa,
            "global_amplitude": entry.global_amplitude if amplitude is None else amplitude,
            "zeta": self._zeta_pair(entry),
            "frame_rad": list(frame),
            "repetitions": repetitions,
            "well_position_m": self._well(),
        }

    def global_amplitude_for(self, pair: Tuple[int, int], theta: float) -> float:
        entry = self.record.pair(pair)
        return theta_to_global_scale(self.record, pair, theta) * entry.global_aom.a_sat

    # Stages.

    def align_chain(self) -> float:
        s = self.settings
        with stage(ALIGN):
            wells = np.linspace(-s.well_span, s.well_span, s.well_points)
            result = self._run("alignment", {"pulse_area": s.alignment_area}, "well_position_m", wells, list(self.ions))
            self._emit("alignment", _rows(result, "well_position_m"))
            fits = {}
            for position, q in enumerate(self.ions):
                fits[q] = _require(fit_gaussian_peak(result.marginal(position)), f"no transfer peak for ion {q}")
            fine = np.linspace(-s.well_span, s.well_span, 4001)
            average = np.mean(
                [gaussian(fine, f["center"], f["sigma"], f["amplitude"], f["offset"]) for f in fits.values()], axis=0
            )
            top = np.flatnonzero(average >= average.max() - 1e-12 * abs(average.max()))
            best = float(fine[top[np.argmin(np.abs(fine[top]))]])
            self.record.well_position = best
            self.record.diagnostics[ALIGN] = {
                "centers_m": {str(q): f["center"] for q, f in fits.items()},
                "well_position_m": best,
            }
            logger.info("well position %.3f um", best * 1e6)
        return best

    def calibrate_pi_times(self) -> Dict[int, Dict[str, float]]:
        s = self.settings
        with stage(PI_TIMES):
            amplitudes = np.linspace(0.0, s.amplitude_max, s.amplitude_points)
            for geometry in GEOMETRIES:
                duration = s.scan_durations[geometry]
                params = {"geometry": geometry, "duration_s": duration, "well_position_m": self._well()}
                result = self._run("amplitude_scan", params, "amplitude", amplitudes, list(self.ions))
                self._emit(f"amplitude_{geometry}", _rows(result, "amplitude"))
                for position, q in enumerate(self.ions):
                    fit = _require(fit_amplitude_scan(result.marginal(position), duration),
                                   f"ion {q} {geometry} amplitude scan")
                    model = AomModel(a_sat=fit["a_sat"], Xi=fit["Xi"])
                    self.record.aom.setdefault(q, {})[geometry] = model
                    amplitude = aom_inverse(model, math.pi / s.pi_times[geometry])
                    self.record.pi_amplitudes.setdefault(q, {})[geometry] = amplitude
                    self.record.diagnostics[f"{PI_TIMES}:{q}:{geometry}"] = fit.to_dict()
                    logger.info("ion %d %s: a_sat %.2f, Xi 2pi x %.2f kHz, pi amplitude %.2f",
                                q, geometry, model.a_sat, model.Xi / c.TWO_PI / 1e3, amplitude)
        return self.record.pi_amplitudes

    def _carrier_rabi_hz(self) -> float:
        return 1.0 / (2.0 * self.settings.pi_times["counter"])

    def find_sidebands(self) -> Dict[str, List[float]]:
        s = self.settings
        with stage(SIDEBANDS):
            modes = sorted(
                ((float(spec.frequencies[k]), spec.manifold, k) for spec in self.model_spectra
                 for k in range(spec.mode_count)),
            )
            lo = modes[0][0] - s.sideband_margin
            hi = modes[-1][0] + s.sideband_margin
            grid = np.arange(lo, hi + 0.5 * s.sideband_step, s.sideband_step)
            base = {"duration_s": s.sideband_duration, "carrier_rabi_hz": self._carrier_rabi_hz(),
                    "well_position_m": self._well()}
            coarse = self._run("sideband_scan", base, "frequency_hz", grid / c.TWO_PI, list(self.ions))
            self._emit("sidebands_coarse", _rows(coarse, "frequency_hz"))
            signal = np.max([coarse.marginal(p).fraction for p, _ in enumerate(self.ions)], axis=0)
            distance = max(1, int(round(c.TWO_PI * 5e3 / s.sideband_step)))
            peaks, _ = find_peaks(signal, prominence=0.15, distance=distance)
            if len(peaks) != len(modes):
                raise StageError(SIDEBANDS, f"expected {len(modes)} sidebands, found {len(peaks)}")
            rough = {(m, k): float(grid[p]) for (_, m, k), p in zip(modes, peaks)}

            assignment = assign_sidebands(self.model_spectra)
            queues: Dict[int, List[Tuple[str, int]]] = {}
            for mode, ion in sorted(assignment.items(), key=lambda item: rough[item[0]]):
                queues.setdefault(ion, []).append(mode)
            found: Dict[Tuple[str, int], float] = {}
            offsets = np.linspace(-s.fine_span, s.fine_span, s.fine_points)
            for round_index in range(max(len(q) for q in queues.values())):
                batch = [(ion, q[round_index]) for ion, q in sorted(queues.items()) if round_index < len(q)]
                params = dict(base, tones_hz=[rough[mode] / c.TWO_PI for _, mode in batch])
                result = self._run("sideband_scan", params, "offset_hz", offsets / c.TWO_PI, [ion for ion, _ in batch])
                self._emit(f"sidebands_fine_{round_index}", _rows(result, "offset_hz"))
                for position, (ion, mode) in enumerate(batch):
                    fit = _require(fit_gaussian_peak(result.marginal(position)), f"sideband {mode[0]}{mode[1]} (ion {ion})")
                    found[mode] = rough[mode] + c.TWO_PI * fit["center"]
            for spec in self.model_spectra:
                self.record.sidebands[spec.manifold] = [found[(spec.manifold, k)] for k in range(spec.mode_count)]
            self.record.diagnostics[SIDEBANDS] = {
                "assignment": {f"{m}{k}": ion for (m, k), ion in sorted(assignment.items())},
            }
            logger.info("sidebands: %s", ", ".join(f"{m}{k} {f / c.TWO_PI / 1e6:.6f} MHz" for (m, k), f in sorted(found.items())))
        return self.record.sidebands

    def symmetric_detuning_scan(self, pair: Tuple[int, int]) -> DetuningScan:
        s = self.settings
        with stage(DETUNING_SCAN):
            entry = self.pair_calibration(pair)
            offsets = np.linspace(-s.detuning_span, s.detuning_span, s.detuning_points)
            params = self.ms_params(entry, entry.kappa or 1.0)
            result = self._run("ms_gate", params, "detuning_hz", offsets / c.TWO_PI, list(entry.pair))
            self._emit(f"detuning_{entry.key}", _rows(result, "detuning_offset_hz"))
            pops = result.populations()
            p00, p11 = pops.get("00", 0 * offsets), pops.get("11", 0 * offsets)
            p_one = pops.get("01", 0 * offsets) + pops.get("10", 0 * offsets)
            difference = p00 - p11
            crossings = []
            for n in range(len(offsets) - 1):
                a, b = difference[n], difference[n + 1]
                if a * b < 0 and max(p_one[n], p_one[n + 1]) < 0.2:
                    crossings.append(float(offsets[n] - a * (offsets[n + 1] - offsets[n]) / (b - a)))
            scan = DetuningScan(offsets=offsets, p00=p00, p11=p11, p_one=p_one, crossings=crossings)
            self.record.diagnostics[f"{DETUNING_SCAN}:{entry.key}"] = scan.to_dict()
        return scan

    def calibrate_zeta(self) -> Dict[int, float]:
        s = self.settings
        with stage(ZETA):
            zetas = np.linspace(s.zeta_range[0], s.zeta_range[1], s.zeta_points)
            for q in self.ions:
                # One ion at a time.
                result = self._run("zeta_echo", {"gates": s.echo_gates}, "zeta", zetas, [q])
                self._emit(f"zeta_echo_{q}", _rows(result, "zeta_br"))
                fit = fit_gaussian_peak(_dark(result.marginal(0), "return"))
                if not fit.converged:
                    raise StageError(ZETA, f"no echo peak for ion {q} in zeta [{zetas[0]:.3g}, {zetas[-1]:.3g}]: {fit.message}")
                self.record.zeta[q] = fit["center"]
                self.record.diagnostics[f"{ZETA}:{q}"] = fit.to_dict()
                logger.info("ion %d: zeta_br %.4f", q, fit["center"])
        return self.record.zeta

    def ramsey_zeta_scan(self, ion: int, zeta: float, gate_counts: Optional[Sequence[int]] = None) -> FitResult:
        with stage(RAMSEY):
            counts = np.arange(0, self.settings.ramsey_gates + 1) if gate_counts is None else np.asarray(gate_counts)
            result = self._run("ramsey", {"zeta": zeta}, "gates", counts, [ion])
            self._emit(f"ramsey_{ion}_{zeta:.3f}", _rows(result, "gates"))
            fit = fit_ramsey_decay(result.marginal(0))
            self.record.diagnostics[f"{RAMSEY}:{ion}:{zeta:.4f}"] = fit.to_dict()
        return fit

    def _kappa_crossing(self, entry: PairCalibration, center: float, span: float, points: int, label: str) -> float:
        kappas = center * np.linspace(1.0 - span, 1.0 + span, points)
        # A residual light shift biases the crossing; cancel it once the frame rotation is known.
        frame = entry.frame_rotation_for(math.pi / 2) if len(entry.anchors) >= 2 else 0.0
        params = self.ms_params(entry, center, frame=(frame, frame))
        result = self._run("ms_gate", params, "kappa", kappas, list(entry.pair))
        self._emit(f"kappa_{label}_{entry.key}", _rows(result, "kappa"))
        fit = linear_crossing(result.select(["00"], "p00"), result.select(["11"], "p11"))
        logger.debug("pair %s %s kappa scan: crossing %.5f", entry.key, label, fit["crossing"])
        return fit["crossing"]

    def calibrate_kappa(self, pair: Tuple[int, int]) -> float:
        s = self.settings
        with stage(KAPPA):
            entry = self.pair_calibration(pair)
            if not all(q in self.record.zeta for q in entry.pair):
                logger.warning("pair %s: zeta not calibrated, using 1.0", entry.key)
            center = entry.kappa or 1.0
            for _ in range(3):
                coarse = self._kappa_crossing(entry, center, s.coarse_kappa_span, s.coarse_kappa_points, "coarse")
                inside = abs(coarse / center - 1.0) <= s.coarse_kappa_span
                center = coarse
                if inside:
                    break
            kappa = center
            for _ in range(3):
                fine = self._kappa_crossing(entry, kappa, s.fine_kappa_span, s.fine_kappa_points, "fine")
                moved = abs(fine / kappa - 1.0)
                kappa = fine
                if moved <= RECENTER_TOLERANCE:
                    break
            if not kappa > 0:
                raise StageError(KAPPA, f"pair {entry.key}: nonpositive kappa {kappa:.4g}")
            entry.kappa = float(kappa)
            logger.info("pair %s: kappa %.5f", entry.key, kappa)
        return entry.kappa

    def _frame_sweep(self, entry: PairCalibration, m: int, center: float, half_width: float) -> Tuple[FitResult, ShotData]:
        s = self.settings
        amplitude = self.global_amplitude_for(entry.pair, math.pi / m)
        frames = center + np.linspace(-half_width, half_width, s.frame_points)
        params = self.ms_params(entry, entry.kappa, amplitude, repetitions=m)
        result = self._run("ms_gate", params, "frame_rad", frames, list(entry.pair))
        self._emit(f"frame_{entry.key}_M{m}", _rows(result, "frame_rotation_rad"))
        data = result.select(["11"], "p11")
        return _require(fit_gaussian_peak(data), f"pair {entry.key} frame sweep M={m}"), data

    def calibrate_frame_rotation(self, pair: Tuple[int, int], gate_counts: Optional[Sequence[int]] = None) -> Dict[int, float]:
        s = self.settings
        with stage(FRAME_ROTATION):
            entry = self.pair_calibration(pair)
            if entry.kappa is None:
                raise StageError(FRAME_ROTATION, f"pair {entry.key}: kappa not calibrated")
            counts = tuple(gate_counts or s.anchors)
            for m in counts:
                prior = entry.frame_rotation_for(math.pi / m) if len(entry.anchors) >= 2 else 0.0
                half = s.frame_span / m
                first, _ = self._frame_sweep(entry, m, prior, half)
                fit, data = self._frame_sweep(entry, m, first["center"], 0.5 * half)
                diagnostic = {"gaussian_rad": fit["center"], "gaussian": fit.to_dict()}
                try:
                    mle = mle_upper_half_gaussian(data)
                    diagnostic["mle_rad"] = mle["center"]
                    diagnostic["difference_rad"] = mle["center"] - fit["center"]
                except FitError as exc:
                    mle = None
                    diagnostic["mle_error"] = str(exc)
                anchor = mle["center"] if (s.frame_fit == "mle" and mle is not None) else fit["center"]
                entry.anchors[m] = float(anchor)
                self.record.diagnostics[f"{FRAME_ROTATION}:{entry.key}:{m}"] = diagnostic
                logger.info("pair %s: M=%d frame rotation %.3f deg", entry.key, m, math.degrees(anchor))
        return {m: entry.anchors[m] for m in counts}

    def characterize_gate_loops(self, pair: Tuple[int, int], theta: float,
                                gate_counts: Optional[Sequence[int]] = None) -> FitResult:
        with stage(GATE_LOOPS):
            entry = self.record.pair(pair)
            if gate_counts is None:
                gate_counts = np.unique(np.concatenate([np.arange(1, 41), np.round(np.linspace(41, 240, 40))]))
            result = self._run("gate_loop", {"pair": list(entry.pair), "theta": theta}, "repetitions",
                               gate_counts, list(entry.pair))
            self._emit(f"gate_loop_{entry.key}", _rows(result, "gates"))
            fit = fit_parity_decay(result.select(["01", "10"], "odd"), result.select(["11"], "p11"), theta)
            self.record.diagnostics[f"{GATE_LOOPS}:{entry.key}"] = fit.to_dict()
        return fit

    def estimate_fidelity(self, pair: Tuple[int, int], theta: float = math.pi / 2) -> FidelityReport:
        s = self.settings
        with stage(FIDELITY):
            entry = self.record.pair(pair)
            amplitude = self.global_amplitude_for(entry.pair, theta)
            frame = entry.frame_rotation_for(theta)
            params = self.ms_params(entry, entry.kappa, amplitude, frame=(frame, frame))
            populations = self._run("ms_gate", params, "repetitions", [1], list(entry.pair), s.fidelity_shots)
            p00_data = populations.select(["00"], "p00")
            p11_data = populations.select(["11"], "p11")
            p00, p11 = float(p00_data.fraction[0]), float(p11_data.fraction[0])
            n = float(p00_data.trials[0])

            phases = np.linspace(0.0, 2.0 * math.pi, s.parity_points, endpoint=False)
            parity = self._run("ms_gate", params, "analysis_phase", phases, list(entry.pair), s.fidelity_shots)
            self._emit(f"parity_{entry.key}", _rows(parity, "analysis_phase_rad"))
            contrast = mle_parity_contrast(parity.select(["00", "11"], "even"))
            amplitude_fit = contrast["amplitude"]

            intervals = {
                "p00": wilson_interval(p00_data.successes[0], n, z=2.0),
                "p11": wilson_interval(p11_data.successes[0], n, z=2.0),
                "parity_amplitude": contrast.ci95["amplitude"],
            }
            value, lower, upper = fidelity_interval(p00, p11, amplitude_fit, theta, intervals)
            report = FidelityReport(
                pair=entry.pair, theta=theta, fidelity=fidelity_estimate(p00, p11, amplitude_fit, theta),
                lower=lower, upper=upper, p00=p00, p11=p11, parity_amplitude=amplitude_fit,
            )
            self.record.diagnostics[f"{FIDELITY}:{entry.key}"] = report.to_dict()
            logger.info("pair %s: fidelity %s", entry.key, report.text)
        return report

    # Schedule.

    def run_stage(self, name: str) -> None:
        s = self.settings
        if name == ALIGN:
            self.align_chain()
        elif name == PI_TIMES:
            self.calibrate_pi_times()
        elif name == SIDEBANDS:
            self.find_sidebands()
        elif name == DETUNING_SCAN:
            for pair in self.pairs:
                self.symmetric_detuning_scan(pair)
        elif name == ZETA:
            self.calibrate_zeta()
        elif name == RAMSEY:
            for q in self.ions:
                self.ramsey_zeta_scan(q, self.record.zeta.get(q, 1.0) + 0.05)
        elif name == KAPPA:
            for pair in self.pairs:
                self.calibrate_kappa(pair)
        elif name == FRAME_ROTATION:
            for pair in self.pairs:
                self.calibrate_frame_rotation(pair)
        elif name == GATE_LOOPS:
            for pair in self.pairs:
                self.characterize_gate_loops(pair, math.pi / 2)
        elif name == FIDELITY:
            for pair in self.pairs:
                self.estimate_fidelity(pair)
        else:
            raise CalibrationError(f"unknown stage {name!r}")


def schedule_for(settings: PipelineSettings) -> List[str]:
    return [name for name in SCHEDULE if name not in DIAGNOSTIC_STAGES or name in settings.diagnostics]


def run_schedule(backend: Backend, config: "ArtifactConfig", record: Optional[CalibrationRecord] = None,
                 checkpoint: Optional[Path] = None, resume: bool = False, sink: Optional[Sink] = None,
                 on_stage: Optional[Callable[[str, str], None]] = None) -> CalibrationRecord:
    """Run every stage in workflow order, saving ``checkpoint`` after each one.

    With ``resume`` the checkpoint (when present) is loaded and its completed stages are
    skipped. A failing stage leaves the checkpoint at the last completed stage.
    """
    if resume and checkpoint is not None and Path(checkpoint).exists():
        record = CalibrationRecord.load(checkpoint)
        logger.info("resuming from %s after %s", checkpoint, ", ".join(record.completed) or "nothing")
    session = Calibration(backend, config.trap, config.pipeline, record, sink)
    record = session.record
    if not resume:
        record.completed = []

    for name in schedule_for(config.pipeline):
        if name in record.completed:
            logger.info("stage %s: already complete", name)
            if on_stage:
                on_stage(name, "skipped")
            continue
        if on_stage:
            on_stage(name, "running")
        try:
            session.run_stage(name)
        except MsGateError:
            if on_stage:
                on_stage(name, "failed")
            if checkpoint is not None:
                record.save(checkpoint)
            raise
        record.completed.append(name)
        if checkpoint is not None:
            record.save(checkpoint)
        if on_stage:
            on_stage(name, "done")
    record.touch()
    return record
