from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import constants as c


@dataclass
class TrapConfig:
    ion_count: int
    axial_freq: float
    radial_com_freqs: Tuple[float, float]
    ion_mass: float = c.YB171_MASS
    raman_delta_k: float = c.RAMAN_DELTA_K
    # Projection of the Raman wavevector difference on each radial axis.
    axis_projection: Tuple[float, float] = c.DEFAULT_AXIS_PROJECTION
    manifolds: Tuple[str, str] = ("x", "y")

    def validate(self) -> None:
        from .errors import ChainInstabilityError, ConfigError

        if self.ion_count < 1:
            raise ConfigError("ion_count must be >= 1")
        if self.axial_freq <= 0 or min(self.radial_com_freqs) <= 0:
            raise ConfigError("trap frequencies must be positive")
        if self.ion_mass <= 0 or self.raman_delta_k <= 0:
            raise ConfigError("ion_mass and raman_delta_k must be positive")
        if self.ion_count > 1:
            limit = c.STABILITY_PREFACTOR * self.ion_count ** c.STABILITY_EXPONENT
            ratio = min(self.radial_com_freqs) / self.axial_freq
            if ratio <= limit:
                raise ChainInstabilityError(
                    f"radial/axial ratio {ratio:.3f} below linear-chain limit {limit:.3f} "
                    f"for {self.ion_count} ions"
                )


@dataclass
class ModeSpectrum:
    manifold: str
    frequencies: np.ndarray
    participation: np.ndarray
    lamb_dicke: np.ndarray

    @property
    def ion_count(self) -> int:
        return int(self.participation.shape[1])

    @property
    def mode_count(self) -> int:
        return int(self.frequencies.shape[0])

    def shifted(self, offset: float) -> "ModeSpectrum":
        return ModeSpectrum(self.manifold, self.frequencies + offset, self.participation, self.lamb_dicke)

    def to_dict(self) -> dict:
        return {
            "manifold": self.manifold,
            "frequencies_hz": (self.frequencies / c.TWO_PI).tolist(),
            "participation": self.participation.tolist(),
            "lamb_dicke": self.lamb_dicke.tolist(),
        }


@dataclass
class GatePairPlan:
    qubit_i: int
    qubit_j: int
    mode_lower: int
    mode_upper: int
    reference_mode: int
    detuning: float
    drive_frequency: float
    balanced: bool
    manifold: str = "x"
    objective: float = 0.0

    def to_dict(self) -> dict:
        return {
            "qubit_i": self.qubit_i,
            "qubit_j": self.qubit_j,
            "manifold": self.manifold,
            "mode_lower": self.mode_lower,
            "mode_upper": self.mode_upper,
            "reference_mode": self.reference_mode,
            "detuning_hz": self.detuning / c.TWO_PI,
            "drive_frequency_hz": self.drive_frequency / c.TWO_PI,
            "balanced": self.balanced,
            "objective": self.objective,
        }


COMB_LABELS = ("g", "b", "r")


def default_pair_scalings() -> Dict[Tuple[str, str], float]:
    scalings = {(a, b): 1.0 for a in COMB_LABELS for b in COMB_LABELS}
    scalings[("g", "g")] = c.COMB_GLOBAL_INTRA_SUPPRESSION
    return scalings


@dataclass
class CombSpec:
    f_rep: float = c.COMB_F_REP_HZ
    tau_pulse: float = c.COMB_TAU_PULSE
    delta_single_photon: float = c.TWO_PI * c.COMB_DELTA_HZ
    omega_pp: float = c.TWO_PI * c.COMB_OMEGA_PP_HZ
    omega_qubit: float = c.TWO_PI * c.YB171_QUBIT_HZ
    # None selects the carrier-resonant offset omega_qubit - harmonic_offset * 2 pi f_rep.
    delta_aom: Optional[float] = None
    delta_c: float = c.TWO_PI * c.COMB_DELTA_C_HZ
    base_rabi: Dict[str, float] = field(default_factory=lambda: {"g": 0.0, "b": 0.0, "r": 0.0})
    harmonic_offset: int = c.COMB_HARMONIC_OFFSET
    tooth_truncation: int = c.COMB_TOOTH_TRUNCATION
    pair_scalings: Dict[Tuple[str, str], float] = field(default_factory=default_pair_scalings)

    def __post_init__(self):
        from .errors import ConfigError

        if self.f_rep <= 0 or self.tau_pulse <= 0 or self.omega_qubit <= 0:
            raise ConfigError("f_rep, tau_pulse and omega_qubit must be positive")
        if self.tooth_truncation < 1:
            raise ConfigError("tooth_truncation must be >= 1")
        for pair, value in self.pair_scalings.items():
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"pair scaling {pair} must lie in (0, 1], got {value}")
        for label in COMB_LABELS:
            self.base_rabi.setdefault(label, 0.0)

    @property
    def aom_offset(self) -> float:
        if self.delta_aom is not None:
            return self.delta_aom
        return self.omega_qubit - self.harmonic_offset * c.TWO_PI * self.f_rep

    @property
    def tooth_phase(self) -> float:
        """Dimensionless sech argument per tooth, 2 pi f_rep tau_pulse."""
        return c.TWO_PI * self.f_rep * self.tau_pulse

    def with_base_rabi(self, **amplitudes: float) -> "CombSpec":
        rabi = dict(self.base_rabi)
        rabi.update(amplitudes)
        return CombSpec(
            f_rep=self.f_rep,
            tau_pulse=self.tau_pulse,
            delta_single_photon=self.delta_single_photon,
            omega_pp=self.omega_pp,
            omega_qubit=self.omega_qubit,
            delta_aom=self.delta_aom,
            delta_c=self.delta_c,
            base_rabi=rabi,
            harmonic_offset=self.harmonic_offset,
            tooth_truncation=self.tooth_truncation,
            pair_scalings=dict(self.pair_scalings),
        )

    def with_truncation(self, tooth_truncation: int) -> "CombSpec":
        spec = self.with_base_rabi()
        spec.tooth_truncation = tooth_truncation
        return spec

    def with_delta_c(self, delta_c: float) -> "CombSpec":
        spec = self.with_base_rabi()
        spec.delta_c = delta_c
        return spec


@dataclass
class ShiftBreakdown:
    per_pair: Dict[Tuple[str, str], float]
    total: float

    def to_dict(self) -> dict:
        return {
            "per_pair_hz": {f"{a}{b}": v / c.TWO_PI for (a, b), v in self.per_pair.items()},
            "total_hz": self.total / c.TWO_PI,
        }


@dataclass
class AomModel:
    a_sat: float
    Xi: float

    def __post_init__(self):
        from .errors import ConfigError

        if self.a_sat <= 0 or self.Xi <= 0:
            raise ConfigError("AomModel requires a_sat > 0 and Xi > 0")

    def to_dict(self) -> dict:
        return {"a_sat": self.a_sat, "xi_hz": self.Xi / c.TWO_PI}

    @classmethod
    def from_dict(cls, data: dict) -> "AomModel":
        return cls(a_sat=float(data["a_sat"]), Xi=c.TWO_PI * float(data["xi_hz"]))


@dataclass
class PulseProgram:
    duration: float
    pair: Tuple[int, int]
    detuning: float
    reference_mode: int = 0
    knots: int = c.DEFAULT_KNOTS
    amp_red: float = 0.0
    amp_blue: float = 0.0
    amp_global_scale: float = 1.0
    # Frame rotation at t = duration, per ion of the pair.
    frame_rotation_total: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        from .errors import PulseError

        if self.duration <= 0:
            raise PulseError("pulse duration must be positive")
        if self.knots < 4:
            raise PulseError("envelope spline needs at least 4 knots")
        if not 0.0 <= self.amp_global_scale <= 1.0:
            raise PulseError(f"amp_global_scale {self.amp_global_scale} outside [0, 1]")

    @property
    def envelope_sigma(self) -> float:
        return c.SIGMA_FRACTION * self.duration


@dataclass
class GateDrive:
    pulse: PulseProgram
    modes: ModeSpectrum
    pair: Tuple[int, int]
    rabi_peak_i: float
    rabi_peak_j: float
    lightshift_peak: Tuple[float, float] = (0.0, 0.0)
    other_modes: Optional[ModeSpectrum] = None
    drive_frequency: Optional[float] = None
    n_bar: float = 0.0

    def __post_init__(self):
        if self.drive_frequency is None:
            self.drive_frequency = float(self.modes.frequencies[self.pulse.reference_mode] + self.pulse.detuning)

    @property
    def spectra(self) -> List[ModeSpectrum]:
        return [self.modes] if self.other_modes is None else [self.modes, self.other_modes]

    @property
    def mode_labels(self) -> List[str]:
        return [f"{s.manifold}{k}" for s in self.spectra for k in range(s.mode_count)]

    @property
    def frequencies(self) -> np.ndarray:
        return np.concatenate([s.frequencies for s in self.spectra])

    @property
    def detunings(self) -> np.ndarray:
        """delta_k = mu - nu_k, positive on the blue side of mode k."""
        return self.drive_frequency - self.frequencies

    def eta(self, ion: int) -> np.ndarray:
        return np.concatenate([s.lamb_dicke[:, ion] for s in self.spectra])

    @property
    def rabi(self) -> Tuple[float, float]:
        return (self.rabi_peak_i, self.rabi_peak_j)


@dataclass
class GateOutcome:
    theta: float
    residual_alpha: Dict[str, complex]
    ls_phase_i: float
    ls_phase_j: float
    populations: Dict[str, float]
    parity_amplitude: float
    spin_state: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "theta_rad": self.theta,
            "residual_alpha": {k: [v.real, v.imag] for k, v in self.residual_alpha.items()},
            "ls_phase_i_rad": self.ls_phase_i,
            "ls_phase_j_rad": self.ls_phase_j,
            "populations": dict(self.populations),
            "parity_amplitude": self.parity_amplitude,
        }


@dataclass
class ShotData:
    x: np.ndarray
    successes: np.ndarray
    trials: np.ndarray
    outcome_label: str = "p1"

    def __post_init__(self):
        from .errors import InsufficientDataError

        self.x = np.asarray(self.x, dtype=float)
        self.successes = np.asarray(self.successes, dtype=float)
        self.trials = np.asarray(self.trials, dtype=float)
        if not (self.x.shape == self.successes.shape == self.trials.shape):
            raise InsufficientDataError("x, successes and trials must have equal lengths")
        if np.any(self.trials < 1) or np.any(self.successes < 0) or np.any(self.successes > self.trials):
            raise InsufficientDataError("shot counts must satisfy 0 <= successes <= trials, trials >= 1")

    @property
    def fraction(self) -> np.ndarray:
        return self.successes / self.trials

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "successes": self.successes.tolist(),
            "trials": self.trials.tolist(),
            "outcome_label": self.outcome_label,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ShotData":
        return cls(data["x"], data["successes"], data["trials"], data.get("outcome_label", "p1"))


@dataclass
class FitResult:
    model: str
    params: Dict[str, float]
    stderr: Dict[str, float] = field(default_factory=dict)
    covariance: Optional[np.ndarray] = None
    ci95: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    residual_norm: float = float("nan")
    converged: bool = False
    message: str = ""

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": dict(self.params),
            "stderr": dict(self.stderr),
            "covariance": None if self.covariance is None else np.asarray(self.covariance).tolist(),
            "ci95": {k: list(v) for k, v in self.ci95.items()},
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FitResult":
        cov = data.get("covariance")
        return cls(
            model=data["model"],
            params=dict(data["params"]),
            stderr=dict(data.get("stderr", {})),
            covariance=None if cov is None else np.asarray(cov, dtype=float),
            ci95={k: tuple(v) for k, v in data.get("ci95", {}).items()},
            residual_norm=float(data.get("residual_norm", float("nan"))),
            converged=bool(data.get("converged", False)),
            message=data.get("message", ""),
        )
