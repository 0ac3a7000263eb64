"""Simulated apparatus answering calibration jobs from a hidden ground truth.

Every job kind models one measurement of the calibration workflow. Counts are drawn
from a single seeded generator in job order, so a fixed seed and job sequence always
give the same counts. With ``seed=None`` the expected counts are returned instead.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import constants as c
from .backend import ExperimentJob, ExperimentResult
from .chain import all_radial_modes, equilibrium_positions
from .comb import balance_ratio, operating_point
from .dynamics import entangling_angle, gate_unitary, simulate_gate_analytic
from .errors import BackendError, ProtocolError
from .fitkit import amplitude_scan_p1, p00_loop, p11_loop, p_odd, ramsey_p1
from .models import AomModel, CombSpec, GateDrive, ModeSpectrum, PulseProgram, TrapConfig
from .pulse import envelope_square_integral

logger = logging.getLogger(__name__)

DEFAULT_MODE_OFFSETS_HZ = (0.8e3, -1.1e3, 0.5e3, -0.4e3)
DEFAULT_RABI_SCALE = (1.04, 0.97)
ECHO_DETUNING = c.TWO_PI * 52e3
ECHO_QUADRATURE = 40


def _per_ion(values: Sequence[float], default: Sequence[float], count: int) -> np.ndarray:
    source = values if len(values) else default
    return np.resize(np.asarray(source, dtype=float), count)


@dataclass
class Truth:
    """Hidden parameters of the simulated apparatus (angular units, metres)."""
    mode_offsets: Tuple[float, ...] = ()
    aom: Dict[str, AomModel] = field(default_factory=lambda: {
        "co": AomModel(a_sat=210.0, Xi=c.TWO_PI * 30e3),
        "counter": AomModel(a_sat=c.AOM_A_SAT, Xi=c.TWO_PI * c.AOM_XI_HZ),
    })
    aom_decay: Dict[str, float] = field(default_factory=lambda: {"co": 25.0, "counter": 20.0})
    well_offset: float = 0.4e-6
    well_offset_drift: float = 0.0
    beam_offsets: Tuple[float, ...] = ()
    beam_waist: float = 2.0e-6
    zeta_star: Tuple[float, ...] = ()
    zeta_from_comb: bool = False
    # Single-qubit phase per MS(pi/2) per unit of zeta away from the balance point.
    zeta_slope: float = math.radians(-196.0)
    residual_shift: Tuple[float, ...] = ()
    # Relative rms change of the fourth-order shift between the two halves of an echo.
    echo_noise: float = 0.36
    ramsey_m_sigma: float = 5.7
    ramsey_contrast: float = 0.95
    rabi_scale: Tuple[float, ...] = ()
    global_reference_amplitude: float = 150.0
    n_bar: float = 0.0
    spam: Tuple[float, float] = (0.0, 0.0)
    loop_amplitude: float = 0.98
    loop_m_sigma_odd: float = 83.0
    loop_m_sigma_even: float = 12.9


class VirtualExperiment:
    def __init__(self, trap: TrapConfig, truth: Optional[Truth] = None, seed: Optional[int] = 0,
                 comb: Optional[CombSpec] = None):
        trap.validate()
        self.trap = trap
        self.truth = truth or Truth()
        self.seed = seed
        self.rng = None if seed is None else np.random.default_rng(seed)
        self.comb = comb or CombSpec()
        self.jobs_run = 0
        self._echo_static: Dict[int, float] = {}
        n = trap.ion_count
        self.positions = equilibrium_positions(trap)

        model = all_radial_modes(trap)
        total = sum(s.mode_count for s in model)
        offsets = _per_ion(self.truth.mode_offsets, [c.TWO_PI * f for f in DEFAULT_MODE_OFFSETS_HZ], total)
        self.spectra: List[ModeSpectrum] = []
        start = 0
        for s in model:
            shift = offsets[start:start + s.mode_count]
            self.spectra.append(ModeSpectrum(s.manifold, s.frequencies + shift, s.participation, s.lamb_dicke))
            start += s.mode_count

        self.beam_offsets = _per_ion(self.truth.beam_offsets, [0.0], n)
        self.rabi_scale = _per_ion(self.truth.rabi_scale, DEFAULT_RABI_SCALE, n)
        self.residual_shift = _per_ion(self.truth.residual_shift, [math.radians(6.25)], n)
        if self.truth.zeta_from_comb:
            zeta, _ = balance_ratio(operating_point(self.comb), c.TWO_PI * c.COMB_RABI_TARGET_HZ)
            self.zeta_star = np.full(n, zeta)
        else:
            self.zeta_star = _per_ion(self.truth.zeta_star, [1.10], n)

        self._handlers: Dict[str, Callable[[ExperimentJob, float], np.ndarray]] = {
            "alignment": self._alignment,
            "amplitude_scan": self._amplitude_scan,
            "sideband_scan": self._sideband_scan,
            "zeta_echo": self._zeta_echo,
            "ramsey": self._ramsey,
            "ms_gate": self._ms_gate,
            "gate_loop": self._gate_loop,
        }

    # Ground-truth helpers, also used as oracles.

    def spectrum(self, manifold: str) -> ModeSpectrum:
        for s in self.spectra:
            if s.manifold == manifold:
                return s
        raise ProtocolError(f"unknown manifold {manifold!r}")

    def displacement(self, well_position: float) -> np.ndarray:
        """Ion offsets from their addressing beams (m) at a well position."""
        drift = self.truth.well_offset_drift * self.jobs_run
        return well_position + self.truth.well_offset + drift - self.beam_offsets

    def coupling(self, well_position: float) -> np.ndarray:
        """Relative addressing-beam field at each ion."""
        d = self.displacement(well_position)
        return np.exp(-np.square(d) / self.truth.beam_waist ** 2)

    def average_transfer(self, well_positions, pulse_area: float) -> np.ndarray:
        """Mean bright probability over ions after a pulse of ``pulse_area`` at full coupling."""
        wells = np.atleast_1d(np.asarray(well_positions, dtype=float))
        values = [np.mean(np.sin(0.5 * pulse_area * self.coupling(w)) ** 2) for w in wells]
        return np.asarray(values)

    def global_factor(self, amplitude: float) -> float:
        model = self.truth.aom["counter"]
        reference = math.sin(math.pi * self.truth.global_reference_amplitude / (2.0 * model.a_sat))
        return math.sin(math.pi * amplitude / (2.0 * model.a_sat)) / reference

    def ms_drive(self, params: dict) -> GateDrive:
        """True drive of an ``ms_gate`` job, light shift included."""
        i, j = (int(q) for q in params["pair"])
        spectrum = self.spectrum(params.get("manifold", "x"))
        others = [s for s in self.spectra if s.manifold != spectrum.manifold]
        mu = c.TWO_PI * float(params["drive_frequency_hz"])
        kappa = float(params.get("kappa", 1.0))
        g = self.global_factor(float(params.get("global_amplitude", self.truth.global_reference_amplitude)))
        coupling = self.coupling(float(params.get("well_position_m", -self.truth.well_offset)))
        rabi = [
            c.TWO_PI * float(r) * kappa * g * self.rabi_scale[q] * coupling[q]
            for r, q in zip(params["rabi_hz"], (i, j))
        ]
        frames = params.get("frame_rad", (0.0, 0.0))
        pulse = PulseProgram(
            duration=float(params["duration_s"]),
            pair=(i, j),
            detuning=mu - spectrum.frequencies[0],
            frame_rotation_total=(float(frames[0]), float(frames[1])),
        )
        drive = GateDrive(
            pulse=pulse, modes=spectrum, pair=(i, j), rabi_peak_i=rabi[0], rabi_peak_j=rabi[1],
            other_modes=others[0] if others else None, drive_frequency=mu, n_bar=self.truth.n_bar,
        )
        theta = entangling_angle(drive)
        zeta = params.get("zeta", (float(self.zeta_star[i]), float(self.zeta_star[j])))
        energy = envelope_square_integral(pulse)
        shifts = []
        for q, z in zip((i, j), zeta):
            per_gate = self.residual_shift[q] + self.truth.zeta_slope * (float(z) - self.zeta_star[q])
            shifts.append(per_gate * theta / (math.pi / 2) / energy)
        return replace(drive, lightshift_peak=(shifts[0], shifts[1]))

    # Job handling.

    def run(self, job: ExperimentJob) -> ExperimentResult:
        handler = self._handlers.get(job.kind)
        if handler is None:
            raise BackendError(f"unknown job kind {job.kind!r}")
        n = self.trap.ion_count
        if any(not 0 <= q < n for q in job.measure):
            raise ProtocolError(f"job {job.kind}: measured qubit out of range for {n} ions")
        counts = []
        for x in job.sweep_values:
            probabilities = self._with_spam(handler(job, x), len(job.measure))
            counts.append(self._draw(probabilities, job.shots, len(job.measure)))
        self.jobs_run += 1
        logger.debug("job %d %s: %d points x %d shots", job.job_id, job.kind, len(counts), job.shots)
        return ExperimentResult(job_id=job.job_id, x=list(job.sweep_values), counts=counts, shots=job.shots)

    def _with_spam(self, probabilities: np.ndarray, qubits: int) -> np.ndarray:
        e0, e1 = self.truth.spam
        if e0 == 0.0 and e1 == 0.0:
            return probabilities
        confusion = np.array([[1.0 - e0, e1], [e0, 1.0 - e1]])
        tensor = probabilities.reshape((2,) * qubits)
        for axis in range(qubits):
            tensor = np.moveaxis(np.tensordot(confusion, tensor, axes=([1], [axis])), 0, axis)
        return tensor.reshape(-1)

    def _draw(self, probabilities: np.ndarray, shots: int, qubits: int) -> Dict[str, float]:
        p = np.clip(np.real(probabilities), 0.0, None)
        p = p / p.sum()
        keys = [format(k, f"0{qubits}b") for k in range(p.size)]
        if self.rng is None:
            draws = p * shots
        else:
            draws = self.rng.multinomial(shots, p).astype(float)
        return {k: float(v) for k, v in zip(keys, draws)}

    @staticmethod
    def _independent(p1: Sequence[float]) -> np.ndarray:
        """Joint outcome distribution of independent qubits with bright probabilities ``p1``."""
        joint = np.ones(1)
        for p in p1:
            p = float(np.clip(p, 0.0, 1.0))
            joint = np.kron(joint, [1.0 - p, p])
        return joint

    def _alignment(self, job: ExperimentJob, well: float) -> np.ndarray:
        area = float(job.params.get("pulse_area", 0.95 * math.pi))
        coupling = self.coupling(well)
        return self._independent([math.sin(0.5 * area * coupling[q]) ** 2 for q in job.measure])

    def _amplitude_scan(self, job: ExperimentJob, amplitude: float) -> np.ndarray:
        geometry = job.params["geometry"]
        model = self.truth.aom[geometry]
        coupling = self.coupling(float(job.params.get("well_position_m", -self.truth.well_offset)))
        p1 = [
            amplitude_scan_p1(amplitude, model.a_sat, model.Xi * coupling[q], self.truth.aom_decay[geometry],
                              float(job.params["duration_s"]))
            for q in job.measure
        ]
        return self._independent(p1)

    def _sideband_scan(self, job: ExperimentJob, x: float) -> np.ndarray:
        duration = float(job.params["duration_s"])
        carrier = c.TWO_PI * float(job.params["carrier_rabi_hz"])
        coupling = self.coupling(float(job.params.get("well_position_m", -self.truth.well_offset)))
        tones = job.params.get("tones_hz")
        p1 = []
        for position, q in enumerate(job.measure):
            tone = c.TWO_PI * (x + (float(tones[position]) if tones is not None else 0.0))
            total = 0.0
            for s in self.spectra:
                rates = carrier * coupling[q] * np.abs(s.lamb_dicke[:, q])
                delta = tone - s.frequencies
                general = np.sqrt(rates ** 2 + delta ** 2)
                with np.errstate(invalid="ignore", divide="ignore"):
                    weight = np.where(general > 0, rates ** 2 / general ** 2, 0.0)
                total += float(np.sum(weight * np.sin(0.5 * general * duration) ** 2))
            p1.append(min(total, 1.0))
        return self._independent(p1)

    def echo_phase(self, ion: int, zeta: float, scale: float = 1.0) -> float:
        """Rz phase of one simulated single-ion MS(pi/2) gate.

        The tones drive ``ion`` alone; its fourth-order shift away from zeta* is multiplied by
        ``scale`` on top of the static residual shift.
        """
        pulse = PulseProgram(duration=c.GATE_DURATION, pair=(ion, ion), detuning=ECHO_DETUNING)
        per_gate = self.residual_shift[ion] + scale * self.truth.zeta_slope * (zeta - self.zeta_star[ion])
        drive = GateDrive(
            pulse=pulse, modes=self.spectra[0], pair=(ion, ion),
            rabi_peak_i=c.TWO_PI * c.COMB_RABI_TARGET_HZ * self.rabi_scale[ion], rabi_peak_j=0.0,
            lightshift_peak=(per_gate / envelope_square_integral(pulse), 0.0),
        )
        u = gate_unitary(drive)
        return float(np.angle(u[2, 2] / u[0, 0]))

    def _zeta_echo(self, job: ExperimentJob, zeta: float) -> np.ndarray:
        gates = int(job.params.get("gates", 8))
        nodes, weights = np.polynomial.hermite_e.hermegauss(ECHO_QUADRATURE)
        weights = weights / weights.sum()
        p1 = []
        for q in job.measure:
            if q not in self._echo_static:
                self._echo_static[q] = self.echo_phase(q, zeta, scale=0.0)
            static = self._echo_static[q]
            fluctuating = self.echo_phase(q, zeta) - static
            first = _z_turn(gates * (static + fluctuating))
            # Intensity noise between the halves rescales the mirrored block's fourth-order phase.
            returned = 0.0
            for eps, w in zip(self.truth.echo_noise * nodes, weights):
                mirrored = _z_turn(gates * (static + (1.0 + eps) * fluctuating))
                u = _x_turn(0.5 * math.pi) @ mirrored @ _x_turn(math.pi) @ first @ _x_turn(0.5 * math.pi)
                returned += w * abs(u[1, 0]) ** 2
            p1.append(returned)
        return self._independent(p1)

    def _ramsey(self, job: ExperimentJob, gates: float) -> np.ndarray:
        zeta = float(job.params["zeta"])
        p1 = []
        for q in job.measure:
            phase = self.truth.zeta_slope * (zeta - self.zeta_star[q])
            p1.append(ramsey_p1(gates, phase, self.truth.ramsey_m_sigma, self.truth.ramsey_contrast))
        return self._independent(p1)

    def _ms_gate(self, job: ExperimentJob, x: float) -> np.ndarray:
        params = dict(job.params)
        name = job.sweep_parameter
        if name == "detuning_hz":
            params["drive_frequency_hz"] = float(params["drive_frequency_hz"]) + x
        elif name == "frame_rad":
            params["frame_rad"] = (x, x)
        elif name in ("kappa", "global_amplitude", "repetitions", "analysis_phase"):
            params[name] = x
        elif name != "none":
            raise ProtocolError(f"ms_gate cannot sweep {name!r}")
        pair = tuple(int(q) for q in params["pair"])
        if list(job.measure) != list(pair):
            raise ProtocolError(f"ms_gate measures {job.measure}, expected the pair {list(pair)}")

        drive = self.ms_drive(params)
        repetitions = int(round(float(params.get("repetitions", 1))))
        if repetitions == 1:
            rho = simulate_gate_analytic(drive).spin_state
        else:
            psi = np.linalg.matrix_power(gate_unitary(drive), repetitions)[:, 0]
            rho = np.outer(psi, psi.conj())
        phase = params.get("analysis_phase")
        if phase is not None:
            rotation = np.kron(_analysis_pulse(float(phase)), _analysis_pulse(float(phase)))
            rho = rotation @ rho @ rotation.conj().T
        return np.real(np.diag(rho))

    def _gate_loop(self, job: ExperimentJob, repetitions: float) -> np.ndarray:
        t = self.truth
        theta = float(job.params["theta"])
        odd = p_odd(repetitions, t.loop_amplitude, t.loop_m_sigma_odd)
        p11 = p11_loop(repetitions, t.loop_amplitude, t.loop_m_sigma_odd, t.loop_m_sigma_even, theta)
        p00 = p00_loop(repetitions, t.loop_amplitude, t.loop_m_sigma_odd, t.loop_m_sigma_even, theta)
        return np.array([p00, 0.5 * odd, 0.5 * odd, p11])


def _analysis_pulse(phase: float) -> np.ndarray:
    """pi/2 rotation about cos(phase) X + sin(phase) Y."""
    s = 1.0 / math.sqrt(2.0)
    return np.array([[s, -1j * s * np.exp(-1j * phase)], [-1j * s * np.exp(1j * phase), s]])


def _x_turn(angle: float) -> np.ndarray:
    return np.array([[math.cos(angle / 2), -1j * math.sin(angle / 2)], [-1j * math.sin(angle / 2), math.cos(angle / 2)]])


def _z_turn(phi: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * phi), np.exp(0.5j * phi)])
