"""Equilibrium positions, radial normal modes and gate mode planning for a linear chain."""
import itertools
import logging
from typing import List, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from . import constants as c
from .errors import ChainConvergenceError, ChainInstabilityError, ConfigError, ModeSelectionError
from .models import GatePairPlan, ModeSpectrum, TrapConfig

logger = logging.getLogger(__name__)

NEWTON_TOLERANCE = 1e-12
NEWTON_MAX_ITER = 200


def length_scale(config: TrapConfig) -> float:
    """Characteristic Coulomb length (e^2 / (4 pi eps0 m wz^2))^(1/3)."""
    k = c.ELEMENTARY_CHARGE ** 2 / (4.0 * np.pi * c.EPSILON_0)
    return (k / (config.ion_mass * config.axial_freq ** 2)) ** (1.0 / 3.0)


def ion_label(index: int, ion_count: int) -> int:
    """Center-indexed label of an ion (index 0 is the leftmost ion)."""
    return index - (ion_count - 1) // 2


def ion_index(label: int, ion_count: int) -> int:
    index = label + (ion_count - 1) // 2
    if not 0 <= index < ion_count:
        raise ModeSelectionError(f"ion label {label} out of range for {ion_count} ions")
    return index


def _forces(u: np.ndarray) -> np.ndarray:
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, np.inf)
    return -u + np.sum(np.sign(diff) / diff ** 2, axis=1)


def _force_jacobian(u: np.ndarray) -> np.ndarray:
    diff = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(diff, np.inf)
    coupling = 2.0 / diff ** 3
    jac = coupling.copy()
    np.fill_diagonal(jac, -1.0 - coupling.sum(axis=1))
    return jac


def _dimensionless_positions(n: int) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    spacing = 2.018 / n ** 0.559
    u = (np.arange(n) - (n - 1) / 2.0) * spacing
    residual = np.max(np.abs(_forces(u)))
    for _ in range(NEWTON_MAX_ITER):
        if residual < NEWTON_TOLERANCE:
            break
        step = np.linalg.solve(_force_jacobian(u), -_forces(u))
        damping = 1.0
        while damping > 1e-6:
            trial = u + damping * step
            if np.all(np.diff(trial) > 0):
                trial_residual = np.max(np.abs(_forces(trial)))
                if trial_residual < residual:
                    break
            damping *= 0.5
        else:
            raise ChainConvergenceError(f"equilibrium solve stalled for {n} ions", residual)
        u, residual = trial, trial_residual
    else:
        raise ChainConvergenceError(f"equilibrium solve did not converge for {n} ions", residual)
    # Exact reflection symmetry, middle ion at 0 for odd n.
    u = 0.5 * (u - u[::-1])
    return u


def equilibrium_positions(config: TrapConfig) -> np.ndarray:
    """Axial equilibrium positions in metres, ascending, centered on 0."""
    if config.ion_count < 1:
        raise ConfigError("ion_count must be >= 1")
    return _dimensionless_positions(config.ion_count) * length_scale(config)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    fixed = vectors.copy()
    for row in fixed:
        total = row.sum()
        if abs(total) > 1e-9:
            if total < 0:
                row *= -1.0
        else:
            first = row[np.argmax(np.abs(row) > 1e-9)]
            if first < 0:
                row *= -1.0
    return fixed


def radial_modes(config: TrapConfig, positions: Sequence[float], manifold: int = 0) -> ModeSpectrum:
    u = np.asarray(positions, dtype=float) / length_scale(config)
    n = u.size
    beta = config.radial_com_freqs[manifold] / config.axial_freq
    diff = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(diff, np.inf)
    coupling = 1.0 / diff ** 3
    hessian = coupling.copy()
    np.fill_diagonal(hessian, beta ** 2 - coupling.sum(axis=1))

    eigenvalues, eigenvectors = np.linalg.eigh(hessian)
    if np.any(eigenvalues <= 0):
        raise ChainInstabilityError(
            f"radial manifold {config.manifolds[manifold]} unstable: smallest eigenvalue "
            f"{eigenvalues.min():.4g} (zig-zag transition)"
        )
    order = np.argsort(eigenvalues)[::-1]
    frequencies = config.axial_freq * np.sqrt(eigenvalues[order])
    participation = _fix_signs(eigenvectors[:, order].T)

    zero_point = np.sqrt(c.HBAR / (2.0 * config.ion_mass * frequencies))
    dk = config.raman_delta_k * config.axis_projection[manifold]
    lamb_dicke = participation * dk * zero_point[:, None]
    return ModeSpectrum(config.manifolds[manifold], frequencies, participation, lamb_dicke)


def all_radial_modes(config: TrapConfig) -> List[ModeSpectrum]:
    positions = equilibrium_positions(config)
    return [radial_modes(config, positions, m) for m in range(len(config.radial_com_freqs))]


def pair_couplings(spec: ModeSpectrum, pair: Tuple[int, int]) -> np.ndarray:
    i, j = pair
    return spec.lamb_dicke[:, i] * spec.lamb_dicke[:, j]


def _sensitivity(mu: float, spectra: Sequence[ModeSpectrum], pair: Tuple[int, int]) -> float:
    return sum(float(np.sum(pair_couplings(s, pair) / (mu - s.frequencies) ** 2)) for s in spectra)


def _strength(mu: float, spectra: Sequence[ModeSpectrum], pair: Tuple[int, int]) -> float:
    return sum(float(np.sum(pair_couplings(s, pair) / (mu - s.frequencies))) for s in spectra)


def select_mode_pair(
    spec: ModeSpectrum,
    pair: Tuple[int, int],
    other_spectra: Sequence[ModeSpectrum] = (),
    fallback_offset: float = c.TWO_PI * c.FALLBACK_OFFSET_HZ,
    floor: float = c.PARTICIPATION_FLOOR,
) -> GatePairPlan:
    """Pick the adjacent modes maximizing |c(k+) - c(k-)| and a drive frequency between them.

    c(k) = eta[k, i] * eta[k, j]. A balanced plan puts the drive where a common shift of all
    mode frequencies leaves the gate strength unchanged to first order.
    """
    i, j = pair
    n = spec.ion_count
    if i == j or not (0 <= i < n and 0 <= j < n):
        raise ModeSelectionError(f"invalid ion pair {pair} for {n} ions")
    if spec.mode_count < 2:
        raise ModeSelectionError(f"pair {pair}: need at least two modes")

    coupling = pair_couplings(spec, pair)
    usable = (np.abs(spec.participation[:, i]) > floor) & (np.abs(spec.participation[:, j]) > floor)
    if not usable.any():
        raise ModeSelectionError(f"pair {pair}: no mode couples to both ions above {floor}")

    objectives = np.abs(coupling[:-1] - coupling[1:])
    upper = int(np.argmax(objectives))
    lower = upper + 1
    spectra = [spec, *other_spectra]
    nu_upper, nu_lower = spec.frequencies[upper], spec.frequencies[lower]

    balanced = bool(usable[upper] and usable[lower] and coupling[upper] * coupling[lower] < 0)
    if balanced:
        gap = nu_upper - nu_lower
        eps = 1e-6 * gap
        mu = brentq(_sensitivity, nu_lower + eps, nu_upper - eps, args=(spectra, pair), xtol=1e-9, rtol=1e-15)
        reference = upper if (nu_upper - mu) < (mu - nu_lower) else lower
        detuning = mu - spec.frequencies[reference]
    else:
        candidates = [k for k in (upper, lower) if usable[k]] or [int(np.argmax(np.abs(coupling)))]
        reference = max(candidates, key=lambda k: abs(coupling[k]))
        nu = spec.frequencies[reference]
        detuning = max(
            (fallback_offset, -fallback_offset),
            key=lambda d: abs(_strength(nu + d, spectra, pair)),
        )
        mu = nu + detuning
        logger.info("pair %s: unbalanced plan on mode %d (offset %.1f kHz)", pair, reference, detuning / c.TWO_PI / 1e3)

    return GatePairPlan(
        qubit_i=i,
        qubit_j=j,
        mode_lower=lower,
        mode_upper=upper,
        reference_mode=reference,
        detuning=float(detuning),
        drive_frequency=float(mu),
        balanced=balanced,
        manifold=spec.manifold,
        objective=float(objectives[upper]),
    )


def plan_all_pairs(spectra: Sequence[ModeSpectrum], **kwargs) -> List[GatePairPlan]:
    """Plans for every ion pair, driven on the first manifold."""
    primary, others = spectra[0], list(spectra[1:])
    return [
        select_mode_pair(primary, pair, others, **kwargs)
        for pair in itertools.combinations(range(primary.ion_count), 2)
    ]
