"""AOM saturation, gate envelopes, dynamic frame-rotation profiles and global scaling."""
import functools
import math
from typing import Tuple

import numpy as np
from scipy.interpolate import CubicSpline, PPoly

from . import constants as c
from .errors import OverSaturationError, PulseError, ThetaRangeError, UnreachableRateError
from .models import AomModel, GatePairPlan, PulseProgram

RATE_TOLERANCE = 1e-12


def aom_response(model: AomModel, a: float) -> float:
    """Rabi rate Xi sin(pi a / 2 a_sat) for software amplitude ``a``."""
    if a < 0:
        raise PulseError(f"negative AOM amplitude {a}")
    if a > model.a_sat * (1.0 + RATE_TOLERANCE):
        raise OverSaturationError(f"amplitude {a:.4g} beyond saturation {model.a_sat:.4g}")
    return model.Xi * math.sin(math.pi * min(a, model.a_sat) / (2.0 * model.a_sat))


def aom_inverse(model: AomModel, omega: float) -> float:
    if omega < 0:
        raise PulseError(f"negative Rabi rate {omega}")
    if omega > model.Xi * (1.0 + RATE_TOLERANCE):
        raise UnreachableRateError(
            f"Rabi rate {omega / c.TWO_PI:.4g} Hz exceeds AOM maximum {model.Xi / c.TWO_PI:.4g} Hz"
        )
    return 2.0 * model.a_sat / math.pi * math.asin(min(omega / model.Xi, 1.0))


class Envelope:
    """Cubic spline through Gaussian samples, plus the exact integral of its square."""

    def __init__(self, duration: float, knots: int):
        self.duration = duration
        sigma = c.SIGMA_FRACTION * duration
        self.knot_times = np.linspace(0.0, duration, knots)
        samples = np.exp(-((self.knot_times - duration / 2.0) ** 2) / (2.0 * sigma ** 2))
        self.spline = CubicSpline(self.knot_times, samples)
        coeffs = self.spline.c
        squared = np.zeros((7, coeffs.shape[1]))
        for p in range(4):
            for q in range(4):
                squared[p + q] += coeffs[p] * coeffs[q]
        self.square_integral = PPoly(squared, self.spline.x).antiderivative()

    @property
    def breakpoints(self) -> np.ndarray:
        return self.spline.x

    @property
    def coefficients(self) -> np.ndarray:
        """PPoly coefficients, shape (4, segments), highest power first."""
        return self.spline.c

    def __call__(self, t):
        return self.spline(t)

    def energy(self, t=None):
        """Integral of the squared envelope from 0 to t (default: whole pulse)."""
        return self.square_integral(self.duration if t is None else t)


@functools.lru_cache(maxsize=64)
def envelope_for(duration: float, knots: int) -> Envelope:
    return Envelope(duration, knots)


def _envelope(program: PulseProgram) -> Envelope:
    return envelope_for(program.duration, program.knots)


def _check_time(program: PulseProgram, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > program.duration * (1 + 1e-12)):
        raise PulseError("time outside the pulse window")
    return t


def gaussian_envelope(program: PulseProgram, t):
    values = _envelope(program)(_check_time(program, t))
    return float(values) if np.ndim(values) == 0 else values


def envelope_square_integral(program: PulseProgram, t=None):
    env = _envelope(program)
    return float(env.energy(None if t is None else _check_time(program, t)))


def erf_frame_profile(program: PulseProgram, t, ion: int = 0):
    """Frame rotation accumulated by time t, following the squared-envelope integral."""
    env = _envelope(program)
    fraction = env.energy(_check_time(program, t)) / env.energy()
    values = program.frame_rotation_total[ion] * fraction
    return float(values) if np.ndim(values) == 0 else values


def program_for_plan(plan: GatePairPlan, duration: float = c.GATE_DURATION, **kwargs) -> PulseProgram:
    return PulseProgram(
        duration=duration,
        pair=(plan.qubit_i, plan.qubit_j),
        detuning=plan.detuning,
        reference_mode=plan.reference_mode,
        **kwargs,
    )


def theta_to_global_scale(calib, pair: Tuple[int, int], theta_target: float) -> float:
    """Global-tone amplitude (fraction of a_sat) giving ``theta_target``.

    Both ions' two-photon rates carry the global beam, so theta follows the global
    intensity: the post-saturation global Rabi rate scales as sqrt(theta).
    """
    pair_cal = calib.pair(pair)
    theta_cal = pair_cal.theta_cal
    if theta_target < 0 or theta_target > theta_cal * (1 + 1e-12):
        raise ThetaRangeError(f"theta {theta_target:.4g} outside [0, {theta_cal:.4g}]")
    model = pair_cal.global_aom
    omega_cal = aom_response(model, pair_cal.global_amplitude)
    omega = omega_cal * math.sqrt(min(theta_target / theta_cal, 1.0))
    return aom_inverse(model, omega) / model.a_sat
