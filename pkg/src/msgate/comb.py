"""Frequency-comb two-photon Rabi rates and fourth-order light shifts.

Comb labels: ``g`` global beam, ``b``/``r`` blue and red individual-addressing tones.
All tooth frequencies are reported relative to the global comb's tooth 0 unless an
absolute ``base`` is supplied.

Shift orientation: the pair (alpha, beta) is the beat of comb beta tooth l against comb
alpha tooth 0. A beat below the qubit frequency raises the qubit frequency, so

    shift(alpha, beta) = sum_l Omega_l^2 / (2 * (omega_qubit - (w_beta(l) - w_alpha(0))))
"""
import functools
import logging
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.signal import correlate

from . import constants as c
from .errors import LightShiftError, NoRootError, ResonanceError, SumConvergenceError
from .models import COMB_LABELS, CombSpec, ShiftBreakdown

logger = logging.getLogger(__name__)

Pair = Tuple[str, str]


def _check_label(label: str) -> None:
    if label not in COMB_LABELS:
        raise LightShiftError(f"unknown comb label {label!r}, expected one of {COMB_LABELS}")


def comb_offset(spec: CombSpec, label: str) -> float:
    _check_label(label)
    if label == "g":
        return 0.0
    sign = 1.0 if label == "b" else -1.0
    return spec.aom_offset + sign * spec.delta_c


def comb_tooth_frequency(spec: CombSpec, label: str, j: int, base: float = 0.0) -> float:
    """omega_label(j); ``base`` is the absolute global tooth-0 frequency."""
    return base + j * c.TWO_PI * spec.f_rep + comb_offset(spec, label)


def tooth_envelope(spec: CombSpec, label: str, j: int) -> float:
    _check_label(label)
    return spec.base_rabi[label] / np.cosh(j * spec.tooth_phase)


def _denominator_weight(spec: CombSpec, j: np.ndarray) -> np.ndarray:
    detuning = spec.delta_single_photon + j * c.TWO_PI * spec.f_rep
    weight = 0.5 * (1.0 / detuning - 2.0 / (detuning - spec.omega_pp))
    weight[np.abs(detuning) < c.COMB_DENOMINATOR_GUARD] = 0.0
    return weight


@functools.lru_cache(maxsize=32)
def _unit_correlation(
    f_rep: float, tau_pulse: float, delta: float, omega_pp: float, truncation: int, l_min: int, l_max: int
) -> np.ndarray:
    """Sum over |j| <= J of sech(jx) sech((j+l)x) w(j) for l in [l_min, l_max]."""
    spec = CombSpec(f_rep=f_rep, tau_pulse=tau_pulse, delta_single_photon=delta, omega_pp=omega_pp)
    x = spec.tooth_phase
    j = np.arange(-truncation, truncation + 1)
    k = np.arange(-truncation + l_min, truncation + l_max + 1)
    weighted = _denominator_weight(spec, j.astype(float)) / np.cosh(j * x)
    shifted = 1.0 / np.cosh(k * x)
    result = correlate(shifted, weighted, mode="valid", method="fft")
    result.setflags(write=False)
    return result


def _lags(spec: CombSpec, truncation: int) -> np.ndarray:
    return np.arange(spec.harmonic_offset - truncation, spec.harmonic_offset + truncation + 1)


def _rabi_profile(spec: CombSpec, alpha: str, beta: str, truncation: int) -> Tuple[np.ndarray, np.ndarray]:
    lags = _lags(spec, truncation)
    unit = _unit_correlation(
        spec.f_rep, spec.tau_pulse, spec.delta_single_photon, spec.omega_pp,
        truncation, int(lags[0]), int(lags[-1]),
    )
    return lags, spec.base_rabi[alpha] * spec.base_rabi[beta] * unit


def _relative_gap(a: float, b: float, scale: Optional[float] = None) -> float:
    scale = max(abs(a), abs(b)) if scale is None else scale
    return 0.0 if scale == 0.0 else abs(a - b) / scale


def two_photon_rabi(spec: CombSpec, alpha: str, beta: str, l: int, check: bool = True) -> float:
    """Omega^(l) between tooth j of alpha and tooth j + l of beta, in rad/s."""
    _check_label(alpha)
    _check_label(beta)
    values = []
    for truncation in (spec.tooth_truncation, 2 * spec.tooth_truncation) if check else (spec.tooth_truncation,):
        lags, profile = _rabi_profile(spec, alpha, beta, truncation)
        index = l - int(lags[0])
        if not 0 <= index < lags.size:
            raise LightShiftError(f"l={l} outside the summed range")
        values.append(float(profile[index]))
    if check and _relative_gap(*values) > c.COMB_CONVERGENCE_RTOL:
        raise SumConvergenceError(
            f"two-photon sum for ({alpha},{beta}) l={l} not converged at J={spec.tooth_truncation}"
        )
    return values[0]


def _shift_at(spec: CombSpec, alpha: str, beta: str, truncation: int) -> float:
    lags, profile = _rabi_profile(spec, alpha, beta, truncation)
    beat = lags * c.TWO_PI * spec.f_rep + comb_offset(spec, beta) - comb_offset(spec, alpha)
    denominator = spec.omega_qubit - beat
    close = np.abs(denominator) < c.COMB_RESONANCE_GUARD
    if np.any(close):
        raise ResonanceError(f"accidental resonance for pair ({alpha},{beta})", int(lags[np.argmax(close)]))
    return float(np.sum(profile ** 2 / (2.0 * denominator)))


def fourth_order_shift(spec: CombSpec, alpha: str, beta: str, check: bool = True) -> float:
    """Differential qubit shift from combs alpha and beta (before pair scaling), rad/s."""
    _check_label(alpha)
    _check_label(beta)
    if spec.base_rabi[alpha] == 0.0 or spec.base_rabi[beta] == 0.0:
        return 0.0
    value = _shift_at(spec, alpha, beta, spec.tooth_truncation)
    if check:
        doubled = _shift_at(spec, alpha, beta, 2 * spec.tooth_truncation)
        if _relative_gap(value, doubled) > c.COMB_CONVERGENCE_RTOL:
            raise SumConvergenceError(
                f"fourth-order sum for ({alpha},{beta}) not converged at J={spec.tooth_truncation}"
            )
    return value


def level_shift(spec: CombSpec, alpha: str, beta: str) -> float:
    """Shift of the upper qubit level alone (half the differential shift)."""
    return 0.5 * fourth_order_shift(spec, alpha, beta)


def total_shift(spec: CombSpec, check: bool = True) -> ShiftBreakdown:
    """Scaled sum over every pair listed in ``spec.pair_scalings``."""
    per_pair: Dict[Pair, float] = {}
    doubled: Dict[Pair, float] = {}
    for (alpha, beta), scaling in spec.pair_scalings.items():
        if spec.base_rabi[alpha] == 0.0 or spec.base_rabi[beta] == 0.0:
            per_pair[(alpha, beta)] = 0.0
            doubled[(alpha, beta)] = 0.0
            continue
        per_pair[(alpha, beta)] = scaling * _shift_at(spec, alpha, beta, spec.tooth_truncation)
        if check:
            doubled[(alpha, beta)] = scaling * _shift_at(spec, alpha, beta, 2 * spec.tooth_truncation)
    if check:
        scale = sum(abs(v) for v in per_pair.values())
        drift = sum(abs(per_pair[p] - doubled[p]) for p in per_pair)
        if scale > 0.0 and drift > c.COMB_CONVERGENCE_RTOL * scale:
            raise SumConvergenceError(f"total shift not converged at J={spec.tooth_truncation}")
    return ShiftBreakdown(per_pair=per_pair, total=float(sum(per_pair.values())))


def operating_point(
    spec: CombSpec,
    rabi_target: float = c.TWO_PI * c.COMB_RABI_TARGET_HZ,
    global_to_ia: float = c.COMB_GLOBAL_TO_IA,
    zeta: float = 1.0,
) -> CombSpec:
    """Scale the comb amplitudes so Omega_(g,b) at the harmonic offset equals ``rabi_target``.

    The global amplitude is ``global_to_ia`` times the individual amplitude; blue and red
    tones are set to sqrt(zeta) and 1/sqrt(zeta) of it.
    """
    unit = CombSpec(
        f_rep=spec.f_rep, tau_pulse=spec.tau_pulse,
        delta_single_photon=spec.delta_single_photon, omega_pp=spec.omega_pp,
        harmonic_offset=spec.harmonic_offset, tooth_truncation=spec.tooth_truncation,
        base_rabi={"g": 1.0, "b": 1.0, "r": 1.0},
    )
    per_unit = abs(two_photon_rabi(unit, "g", "b", spec.harmonic_offset, check=False))
    h_ia = np.sqrt(rabi_target / (global_to_ia * per_unit))
    return spec.with_base_rabi(g=global_to_ia * h_ia, b=h_ia * np.sqrt(zeta), r=h_ia / np.sqrt(zeta))


def _at_ratio(spec: CombSpec, zeta: float, h_ia: float) -> CombSpec:
    return spec.with_base_rabi(b=h_ia * np.sqrt(zeta), r=h_ia / np.sqrt(zeta))


def _ia_amplitude(spec: CombSpec, rabi_target: float) -> float:
    """Geometric-mean individual amplitude that reaches ``rabi_target`` with the comb's global amplitude."""
    h_g = spec.base_rabi["g"]
    if h_g <= 0.0:
        raise LightShiftError("balance ratio needs a nonzero global comb amplitude")
    unit = spec.with_base_rabi(g=1.0, b=1.0, r=1.0)
    per_unit = abs(two_photon_rabi(unit, "g", "b", spec.harmonic_offset, check=False))
    return rabi_target / (h_g * per_unit)


def zeta_scan(spec: CombSpec, zetas: Iterable[float], rabi_target: float) -> List[ShiftBreakdown]:
    h_ia = _ia_amplitude(spec, rabi_target)
    return [total_shift(_at_ratio(spec, float(z), h_ia)) for z in zetas]


def balance_ratio(
    spec: CombSpec, rabi_target: float, bracket: Tuple[float, float] = (0.5, 2.0)
) -> Tuple[float, float]:
    """Blue/red amplitude ratio cancelling the total shift; returns (zeta, residual rad/s)."""
    h_ia = _ia_amplitude(spec, rabi_target)

    def shift(zeta: float) -> float:
        return total_shift(_at_ratio(spec, zeta, h_ia), check=False).total

    lo, hi = shift(bracket[0]), shift(bracket[1])
    if lo * hi > 0:
        raise NoRootError(f"total shift keeps its sign on zeta in {bracket}", (lo, hi))
    # One converged evaluation at the bracket end guards the truncation.
    total_shift(_at_ratio(spec, bracket[0], h_ia))
    zeta = brentq(shift, bracket[0], bracket[1], xtol=1e-12, rtol=1e-14)
    residual = shift(zeta)
    logger.debug("balance ratio %.6f, residual %.3e rad/s", zeta, residual)
    return float(zeta), float(residual)


def per_gate_phase(shift: float, envelope_square_integral: float) -> float:
    """Phase accumulated by a peak shift applied with the squared gate envelope."""
    return shift * envelope_square_integral
