"""Fits used by the calibration stages.

Curve fits are weighted Levenberg-Marquardt least squares started from the eight best
points of a coarse chi-square screen, so identical data always give identical results.
Binomial maximum-likelihood fits report 2-sigma profile-likelihood intervals; curve fits
report 1-sigma errors from the covariance scaled by the reduced chi-square.
"""
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.optimize import brentq, least_squares, minimize

from .errors import FitError, InsufficientDataError, NoCrossingError
from .models import FitResult, ShotData

logger = logging.getLogger(__name__)

START_COUNT = 8
LM_TOLERANCE = 1e-12
PROBABILITY_FLOOR = 1e-12


def _sigma(data: ShotData) -> np.ndarray:
    """Binomial standard error with a Laplace-smoothed proportion (never zero)."""
    p = (data.successes + 1.0) / (data.trials + 2.0)
    return np.sqrt(p * (1.0 - p) / data.trials)


def _clamp(p):
    return np.clip(p, 0.0, 1.0)


def _screen(model: Callable, x: np.ndarray, y: np.ndarray, sigma: np.ndarray,
            axes: Sequence[np.ndarray], count: int = START_COUNT) -> List[Tuple[float, ...]]:
    """Best ``count`` points of a chi-square grid over ``axes``."""
    grids = np.meshgrid(*axes, indexing="ij")
    shaped = [g[..., None] for g in grids]
    chi2 = np.sum(((_clamp(model(x, *shaped)) - y) / sigma) ** 2, axis=-1)
    order = np.argsort(chi2, axis=None, kind="stable")[:count]
    return [tuple(float(g.ravel()[k]) for g in grids) for k in order]


def _least_squares(model: Callable, x: np.ndarray, y: np.ndarray, sigma: np.ndarray,
                   starts: Sequence[Sequence[float]], names: Sequence[str], label: str) -> FitResult:
    def residuals(params):
        return (_clamp(model(x, *params)) - y) / sigma

    best = None
    for start in starts:
        try:
            result = least_squares(
                residuals, np.asarray(start, dtype=float), method="lm",
                xtol=LM_TOLERANCE, ftol=LM_TOLERANCE, gtol=LM_TOLERANCE, max_nfev=4000,
            )
        except (ValueError, FloatingPointError) as exc:
            logger.debug("%s: start %s failed: %s", label, start, exc)
            continue
        logger.debug("%s: start %s -> cost %.6g", label, start, result.cost)
        if best is None or result.cost < best.cost:
            best = result
    if best is None:
        raise FitError(f"{label}: every start failed")

    n_params = len(names)
    dof = x.size - n_params
    jac = best.jac
    jtj = jac.T @ jac
    rank = np.linalg.matrix_rank(jtj)
    scale = 2.0 * best.cost / dof if dof > 0 else 1.0
    covariance = np.linalg.pinv(jtj) * scale
    stderr = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    converged = bool(best.success and rank == n_params and np.all(np.isfinite(covariance)))
    message = best.message if rank == n_params else f"singular Jacobian (rank {rank} of {n_params})"
    params = {n: float(v) for n, v in zip(names, best.x)}
    return FitResult(
        model=label,
        params=params,
        stderr={n: float(s) for n, s in zip(names, stderr)},
        covariance=0.5 * (covariance + covariance.T),
        ci95={n: (params[n] - 1.96 * s, params[n] + 1.96 * s) for n, s in zip(names, stderr)},
        residual_norm=float(np.sqrt(2.0 * best.cost)),
        converged=converged,
        message=message,
    )


def _require_points(data: ShotData, minimum: int, label: str) -> None:
    if data.x.size < minimum:
        raise InsufficientDataError(f"{label} needs at least {minimum} points, got {data.x.size}")


# Amplitude scans.


def amplitude_scan_p1(a, a_sat, Xi, xi, duration):
    """Bright probability after a square pulse of software amplitude ``a``."""
    omega = Xi * np.sin(np.pi * a / (2.0 * a_sat))
    return 0.5 * (1.0 - np.exp(-np.abs(omega) * duration / xi) * np.cos(omega * duration))


def _scan_model(duration: float):
    def model(a, a_sat, phase, decay):
        # phase = Xi * duration, decay = 1 / xi
        omega_t = phase * np.sin(np.pi * a / (2.0 * a_sat))
        return 0.5 * (1.0 - np.exp(-np.abs(omega_t) * decay) * np.cos(omega_t))
    return model


def fit_amplitude_scan(data: ShotData, duration: float) -> FitResult:
    """Fit a_sat, Xi (rad/s) and the dimensionless decay constant xi."""
    _require_points(data, 10, "amplitude scan")
    if duration <= 0:
        raise FitError("scan pulse duration must be positive")
    x, y, sigma = data.x, data.fraction, _sigma(data)
    model = _scan_model(duration)
    x_max = float(np.max(np.abs(x)))
    axes = [
        np.geomspace(0.3 * x_max, 4.0 * x_max, 48),
        np.linspace(0.5, 80.0, 160),
        np.array([0.02]),
    ]
    starts = _screen(model, x, y, sigma, axes)
    raw = _least_squares(model, x, y, sigma, starts, ("a_sat", "phase", "decay"), "amplitude_scan")

    a_sat = abs(raw["a_sat"])
    phase = abs(raw["phase"])
    decay = raw["decay"]
    xi = 1.0 / decay if decay > 1e-12 else math.inf
    stderr = {
        "a_sat": raw.stderr["a_sat"],
        "Xi": raw.stderr["phase"] / duration,
        "xi": raw.stderr["decay"] / decay ** 2 if math.isfinite(xi) else math.inf,
    }
    params = {"a_sat": a_sat, "Xi": phase / duration, "xi": xi}
    converged = raw.converged
    message = raw.message
    if np.ptp(y) < 0.1:
        converged, message = False, "no oscillation in scan"
    return FitResult(
        model="amplitude_scan",
        params=params,
        stderr=stderr,
        covariance=raw.covariance,
        ci95={k: (params[k] - 1.96 * s, params[k] + 1.96 * s) for k, s in stderr.items()},
        residual_norm=raw.residual_norm,
        converged=converged,
        message=message,
    )


# Sequential-gate decay phenomenology.


def p_odd(m, amplitude, m_sigma_odd):
    """Leakage into the odd-parity subspace after m gates."""
    return 0.5 * (1.0 - amplitude * np.exp(-np.square(m) / (2.0 * np.square(m_sigma_odd))))


def p_even(m, amplitude, m_sigma_odd):
    return 1.0 - p_odd(m, amplitude, m_sigma_odd)


def _even_envelope(m, m_sigma_even, theta):
    return np.exp(-np.square(m) / (2.0 * np.square(m_sigma_even))) * np.cos(theta * m)


def p11_loop(m, amplitude, m_sigma_odd, m_sigma_even, theta):
    return 0.5 * p_even(m, amplitude, m_sigma_odd) * (1.0 - _even_envelope(m, m_sigma_even, theta))


def p00_loop(m, amplitude, m_sigma_odd, m_sigma_even, theta):
    return 0.5 * p_even(m, amplitude, m_sigma_odd) * (1.0 + _even_envelope(m, m_sigma_even, theta))


def fit_parity_decay(data_odd: ShotData, data_11: ShotData, theta_guess: float) -> FitResult:
    """Two stages: A and M_sigma_odd from P_odd, then M_sigma_even and theta from P_11."""
    _require_points(data_odd, 3, "odd-parity decay")
    _require_points(data_11, 3, "|11> decay")
    span_odd = float(np.max(data_odd.x))
    odd_starts = [(a, f * span_odd) for a in (0.9, 1.0) for f in (0.25, 0.5, 1.0, 2.0)]
    odd = _least_squares(
        p_odd, data_odd.x, data_odd.fraction, _sigma(data_odd), odd_starts,
        ("A", "M_sigma_odd"), "parity_decay_odd",
    )
    amplitude, m_odd = odd["A"], abs(odd["M_sigma_odd"])

    def even_model(m, m_sigma_even, theta):
        return p11_loop(m, amplitude, m_odd, m_sigma_even, theta)

    span = float(np.max(data_11.x))
    even_starts = [(f * span, t * theta_guess) for f in (0.1, 0.25, 0.5, 1.0) for t in (0.98, 1.02)]
    even = _least_squares(
        even_model, data_11.x, data_11.fraction, _sigma(data_11), even_starts,
        ("M_sigma_even", "theta"), "parity_decay_even",
    )

    params = {"A": amplitude, "M_sigma_odd": m_odd, "M_sigma_even": abs(even["M_sigma_even"]), "theta": even["theta"]}
    stderr = {
        "A": odd.stderr["A"],
        "M_sigma_odd": odd.stderr["M_sigma_odd"],
        "M_sigma_even": even.stderr["M_sigma_even"],
        "theta": even.stderr["theta"],
    }
    covariance = np.zeros((4, 4))
    covariance[:2, :2] = odd.covariance
    covariance[2:, 2:] = even.covariance
    message = f"odd stage: {'ok' if odd.converged else odd.message}; even stage: {'ok' if even.converged else even.message}"
    return FitResult(
        model="parity_decay",
        params=params,
        stderr=stderr,
        covariance=covariance,
        ci95={k: (params[k] - 1.96 * s, params[k] + 1.96 * s) for k, s in stderr.items()},
        residual_norm=float(math.hypot(odd.residual_norm, even.residual_norm)),
        converged=odd.converged and even.converged,
        message=message,
    )


def ramsey_p1(m, phase_per_gate, m_sigma, contrast):
    """Bright probability of a Ramsey sequence enclosing m single-qubit gates."""
    return 0.5 * (1.0 + contrast * np.exp(-np.square(m) / (2.0 * np.square(m_sigma))) * np.cos(phase_per_gate * m))


def fit_ramsey_decay(data: ShotData) -> FitResult:
    """Phase per gate in [0, pi] (rad) and coherence gate count from a Ramsey gate-count scan."""
    _require_points(data, 5, "Ramsey decay")
    x, y, sigma = data.x, data.fraction, _sigma(data)
    span = float(np.max(x))
    axes = [np.linspace(0.01, math.pi, 200), span * np.geomspace(0.1, 10.0, 12), np.array([1.0])]
    starts = _screen(ramsey_p1, x, y, sigma, axes)
    result = _least_squares(ramsey_p1, x, y, sigma, starts, ("phase_per_gate", "M_sigma", "contrast"), "ramsey_decay")
    # cos is even in the phase; fold the sign into the reported value.
    result.params["phase_per_gate"] = abs(result.params["phase_per_gate"])
    result.params["M_sigma"] = abs(result.params["M_sigma"])
    lo, hi = result.ci95["phase_per_gate"]
    half = 0.5 * (hi - lo)
    result.ci95["phase_per_gate"] = (result.params["phase_per_gate"] - half, result.params["phase_per_gate"] + half)
    return result


# Peak fits.


def gaussian(x, center, sigma, amplitude, offset):
    return offset + amplitude * np.exp(-np.square(x - center) / (2.0 * np.square(sigma)))


def fit_gaussian_peak(data: ShotData) -> FitResult:
    _require_points(data, 5, "Gaussian peak")
    x, y, sigma = data.x, data.fraction, _sigma(data)
    x_min, x_max = float(np.min(x)), float(np.max(x))
    span = x_max - x_min
    baseline = float(np.median(y))
    if np.ptp(y) < 1e-9:
        return FitResult(
            model="gaussian_peak",
            params={"center": 0.5 * (x_min + x_max), "sigma": math.nan, "amplitude": 0.0, "offset": baseline},
            converged=False,
            message="flat data",
        )
    peak = int(np.argmax(np.abs(y - baseline)))
    weights = np.abs(y - baseline)
    centroid = float(np.sum(weights * x) / np.sum(weights))
    amplitude = float(y[peak] - baseline)
    starts = [
        (center, f * span, amplitude, baseline)
        for center in (float(x[peak]), centroid)
        for f in (0.05, 0.1, 0.2, 0.4)
    ]
    result = _least_squares(gaussian, x, y, sigma, starts, ("center", "sigma", "amplitude", "offset"), "gaussian_peak")
    result.params["sigma"] = abs(result.params["sigma"])
    center = result.params["center"]
    if not x_min <= center <= x_max:
        result.converged = False
        result.message = f"center {center:.4g} outside sweep [{x_min:.4g}, {x_max:.4g}]"
    elif result.stderr["amplitude"] > abs(result.params["amplitude"]):
        result.converged = False
        result.message = "peak amplitude not resolved"
    return result


# Binomial maximum likelihood.


def _binomial_nll(p: np.ndarray, successes: np.ndarray, trials: np.ndarray) -> float:
    p = np.clip(p, PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
    return float(-np.sum(successes * np.log(p) + (trials - successes) * np.log1p(-p)))


def _saturated_nll(successes: np.ndarray, trials: np.ndarray) -> float:
    """NLL of the per-point model; subtracting it keeps the objective near zero at the optimum."""
    return _binomial_nll(successes / trials, successes, trials)


def _minimize(fun: Callable, start: np.ndarray, bounds, jac: bool) -> Tuple[np.ndarray, float, bool]:
    result = minimize(
        fun, start, jac=jac, method="L-BFGS-B", bounds=bounds,
        options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 20000},
    )
    value = result.fun if np.ndim(result.fun) == 0 else result.fun[0]
    return result.x, float(value), bool(result.success)


def _profile_interval(fun: Callable, best: np.ndarray, best_value: float, index: int, bounds,
                      step: float, z: float, jac: bool) -> Tuple[float, float]:
    """Values of parameter ``index`` where the profile NLL rises by z^2 / 2."""
    target = best_value + 0.5 * z ** 2
    others = [k for k in range(best.size) if k != index]

    def profile(value: float) -> float:
        def reduced(free):
            full = best.copy()
            full[index] = value
            full[others] = free
            if not jac:
                return fun(full)
            f, g = fun(full)
            return f, g[others]

        _, fval, _ = _minimize(reduced, best[others], [bounds[k] for k in others], jac)
        return fval - target

    lo_limit, hi_limit = bounds[index]
    edges = []
    for direction, limit in ((-1.0, lo_limit), (1.0, hi_limit)):
        width = step
        edge = None
        for _ in range(60):
            candidate = best[index] + direction * width
            if limit is not None and direction * (candidate - limit) >= 0:
                if profile(limit) < 0:
                    edge = limit
                    break
                candidate = limit
            if profile(candidate) > 0:
                a, b = sorted((best[index], candidate))
                edge = brentq(profile, a, b, xtol=1e-10 * max(1.0, abs(best[index])))
                break
            width *= 2.0
        edges.append(best[index] + direction * math.inf if edge is None else edge)
    return float(edges[0]), float(edges[1])


def mle_upper_half_gaussian(data: ShotData, z: float = 2.0) -> FitResult:
    """Binomial-likelihood Gaussian fit to the points above the smoothed curve's half-max."""
    smooth = uniform_filter1d(data.fraction, size=3, mode="nearest")
    threshold = 0.5 * (float(smooth.min()) + float(smooth.max()))
    keep = smooth >= threshold
    if int(np.count_nonzero(keep)) < 4:
        raise InsufficientDataError(f"only {int(np.count_nonzero(keep))} points above half maximum")
    x, s, n = data.x[keep], data.successes[keep], data.trials[keep]
    span = float(np.ptp(data.x)) or 1.0
    floor = _saturated_nll(s, n)

    def nll(params):
        center, width, amplitude = params
        u = (x - center) / width
        shape = np.exp(-0.5 * u ** 2)
        p = np.clip(amplitude * shape, PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
        score = -(s / p - (n - s) / (1.0 - p))
        grad = np.array([
            np.sum(score * p * u / width),
            np.sum(score * p * u ** 2 / width),
            np.sum(score * shape),
        ])
        return _binomial_nll(p, s, n) - floor, grad

    peak = int(np.argmax(smooth[keep]))
    start = np.array([
        float(x[peak]),
        max(float(np.ptp(x)) / 2.0, 1e-3 * span),
        float(np.clip(smooth[keep][peak], 0.05, 0.999)),
    ])
    bounds = [(float(x.min()) - span, float(x.max()) + span), (1e-3 * span, 10.0 * span), (1e-6, 1.0)]
    best, value, ok = _minimize(nll, start, bounds, jac=True)
    best, value, _ = _minimize(nll, best, bounds, jac=True)

    center_ci = _profile_interval(nll, best, value, 0, bounds, 0.05 * best[1], z, jac=True)
    amplitude_ci = _profile_interval(nll, best, value, 2, bounds, 0.01, z, jac=True)
    params = {"center": float(best[0]), "sigma": float(best[1]), "amplitude": float(best[2])}
    return FitResult(
        model="upper_half_gaussian",
        params=params,
        stderr={
            "center": (center_ci[1] - center_ci[0]) / (2.0 * z),
            "amplitude": (amplitude_ci[1] - amplitude_ci[0]) / (2.0 * z),
        },
        ci95={"center": center_ci, "amplitude": amplitude_ci},
        residual_norm=value,
        converged=ok,
        message=f"{int(np.count_nonzero(keep))} points above threshold {threshold:.3f}",
    )


def mle_parity_contrast(data: ShotData, z: float = 2.0) -> FitResult:
    """Parity B + A cos(2 phi + phi0) from even-parity counts over analysis phase phi (rad)."""
    _require_points(data, 4, "parity scan")
    phi, s, n = data.x, data.successes, data.trials
    parity = 2.0 * data.fraction - 1.0
    basis = np.column_stack([np.ones_like(phi), np.cos(2 * phi), np.sin(2 * phi)])
    (b0, ca, sa), *_ = np.linalg.lstsq(basis, parity, rcond=None)
    start = np.array([float(np.clip(math.hypot(ca, sa), 0.0, 1.0)), math.atan2(-sa, ca), float(np.clip(b0, -0.99, 0.99))])
    floor = _saturated_nll(s, n)

    def nll(params):
        amplitude, phase, offset = params
        p_even = 0.5 * (1.0 + offset + amplitude * np.cos(2 * phi + phase))
        return _binomial_nll(p_even, s, n) - floor

    bounds = [(0.0, 1.0), (None, None), (-1.0, 1.0)]
    best, value, ok = _minimize(nll, start, bounds, jac=False)
    amplitude_ci = _profile_interval(nll, best, value, 0, bounds, 0.01, z, jac=False)
    params = {"amplitude": float(best[0]), "phase": float(math.remainder(best[1], 2 * math.pi)), "offset": float(best[2])}
    return FitResult(
        model="parity_contrast",
        params=params,
        stderr={"amplitude": (amplitude_ci[1] - amplitude_ci[0]) / (2.0 * z)},
        ci95={"amplitude": amplitude_ci},
        residual_norm=value,
        converged=ok,
        message="",
    )


# Intervals and estimators.


def wilson_interval(successes: float, trials: float, z: float = 1.0) -> Tuple[float, float]:
    if trials < 1:
        raise InsufficientDataError("Wilson interval needs at least one trial")
    p = successes / trials
    denom = 1.0 + z ** 2 / trials
    center = (p + z ** 2 / (2.0 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials + z ** 2 / (4.0 * trials ** 2)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def fidelity_estimate(p00: float, p11: float, parity_amplitude: float, theta: float) -> float:
    c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
    value = p00 * c ** 2 + p11 * s ** 2 + parity_amplitude * c * s
    return min(1.0, max(0.0, value))


def fidelity_interval(p00: float, p11: float, parity_amplitude: float, theta: float,
                      intervals: Dict[str, Tuple[float, float]]) -> Tuple[float, float, float]:
    """Fidelity with lower/upper bounds; per-input errors summed in quadrature.

    ``intervals`` maps any of ``p00``, ``p11``, ``parity_amplitude`` to (lo, hi).
    """
    c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
    values = {"p00": p00, "p11": p11, "parity_amplitude": parity_amplitude}
    slopes = {"p00": c ** 2, "p11": s ** 2, "parity_amplitude": c * s}
    unknown = set(intervals) - set(values)
    if unknown:
        raise FitError(f"unknown fidelity inputs {sorted(unknown)}")
    value = fidelity_estimate(p00, p11, parity_amplitude, theta)
    down = math.sqrt(sum((slopes[k] * (values[k] - lo)) ** 2 for k, (lo, _) in intervals.items()))
    up = math.sqrt(sum((slopes[k] * (hi - values[k])) ** 2 for k, (_, hi) in intervals.items()))
    return value, max(0.0, value - down), min(1.0, value + up)


def format_interval(value: float, lo: float, hi: float, digits: int = 3) -> str:
    """``0.972^{+0.003}_{-0.004}`` style report string."""
    return f"{value:.{digits}f}^{{+{hi - value:.{digits}f}}}_{{-{value - lo:.{digits}f}}}"


def _weighted_line(data: ShotData) -> Tuple[np.ndarray, np.ndarray]:
    if data.x.size < 2 or np.ptp(data.x) == 0:
        raise InsufficientDataError("a line fit needs two distinct abscissae")
    coeffs, cov = np.polyfit(data.x, data.fraction, 1, w=1.0 / _sigma(data), cov="unscaled")
    return coeffs, cov


def linear_crossing(data_00: ShotData, data_11: ShotData, tolerance: float = 1e-9) -> FitResult:
    """Intersection of weighted straight-line fits to the two population series."""
    (m00, b00), cov00 = _weighted_line(data_00)
    (m11, b11), cov11 = _weighted_line(data_11)
    d_slope = m00 - m11
    if abs(d_slope) <= tolerance * max(abs(m00) + abs(m11), 1e-300):
        raise NoCrossingError(f"population lines are parallel (slopes {m00:.4g}, {m11:.4g})")
    crossing = (b11 - b00) / d_slope
    g00 = np.array([-crossing / d_slope, -1.0 / d_slope])
    g11 = np.array([crossing / d_slope, 1.0 / d_slope])
    stderr = math.sqrt(float(g00 @ cov00 @ g00 + g11 @ cov11 @ g11))
    lo = max(float(data_00.x.min()), float(data_11.x.min()))
    hi = min(float(data_00.x.max()), float(data_11.x.max()))
    message = ""
    if not lo <= crossing <= hi:
        message = f"crossing {crossing:.5g} outside scanned range [{lo:.5g}, {hi:.5g}]"
        logger.warning(message)
    params = {"crossing": float(crossing), "slope_00": float(m00), "intercept_00": float(b00),
              "slope_11": float(m11), "intercept_11": float(b11)}
    return FitResult(
        model="linear_crossing",
        params=params,
        stderr={"crossing": stderr},
        ci95={"crossing": (crossing - 1.96 * stderr, crossing + 1.96 * stderr)},
        residual_norm=0.0,
        converged=not message,
        message=message,
    )


def synthetic_counts(probabilities: np.ndarray, trials: int, rng: Optional[np.random.Generator]) -> np.ndarray:
    """Binomial draws, or exact expectation counts when ``rng`` is None."""
    probabilities = _clamp(np.asarray(probabilities, dtype=float))
    if rng is None:
        return probabilities * trials
    return rng.binomial(trials, probabilities).astype(float)
