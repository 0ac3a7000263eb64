"""Molmer-Sorensen gate dynamics: a second-order Magnus analytic path and a truncated-Fock oracle.

Conventions used throughout the package. With delta_k = mu - nu_k (blue-positive), the
interaction-picture Hamiltonian is

    H(t) = sum_k sum_n c_kn g(t) X_n (a_k^+ exp(i delta_k t) + a_k exp(-i delta_k t))
         + sum_n r_n g(t)^2 Z_n / 2

where c_kn = eta_kn Omega_n / 2, g is the unit-peak envelope and
r_n = lightshift_peak_n + frame_rotation_total_n / E(tau) is the light shift left over after
the dynamic frame rotation (E is the squared-envelope integral). With it,

    alpha_kn = c_kn * int_0^tau g(t) exp(i delta_k t) dt
    theta    = -sum_k eta_ki eta_kj Omega_i Omega_j G_k,
    G_k      = int int_{t' < t} g(t) g(t') sin(delta_k (t - t')) dt' dt

and MS(theta) = exp(-i theta/2 XX) sends |00> to cos(theta/2)|00> - i sin(theta/2)|11>.
A sigma_x eigenstate s ends with mode k displaced by -i sum_n s_n alpha_kn.
Two-qubit states are ordered |q_i q_j> with Z = diag(1, -1); light-shift phases are
reported as Rz(phi) = exp(-i phi Z / 2).

With a residual shift the Z term no longer commutes with the force. The analytic path then
works in the frame of the Z term, where X_n turns into
S_n(t) = sigma+_n exp(i phi_n(t)) + sigma-_n exp(-i phi_n(t)), phi_n = r_n E(t). The mode
forces F_k(t) = g exp(i delta_k t) sum_n c_kn S_n(t) and their running integrals B_k give the
second-order spin generator -(i/2) sum_k (F_k^+ B_k - B_k^+ F_k), which is time-ordered slice by
slice. The modes are left displaced by -i B_k(tau) and traced out to second order.
"""
import functools
import logging
import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.integrate import IntegrationWarning, dblquad, quad
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply

from . import constants as c
from .errors import DynamicsError, QuadratureError, TruncationError
from .models import GateDrive, GateOutcome
from .pulse import envelope_for

logger = logging.getLogger(__name__)

GAUSS_ORDER = 8
SUBDIVISIONS = 8
STEPS_PER_SEGMENT = 16
RICHARDSON_TOLERANCE = 1e-8
MAX_DOUBLINGS = 3

_SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
_SZ = np.diag([1.0, -1.0]).astype(complex)
_I2 = np.eye(2, dtype=complex)
XX = np.kron(_SX, _SX)
# sigma_x eigenvalues (s_i, s_j) of the x-basis states, in Hadamard order.
_X_SIGNS = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
_HADAMARD = np.kron(np.array([[1, 1], [1, -1]]) / math.sqrt(2), np.array([[1, 1], [1, -1]]) / math.sqrt(2))
# Rz(phi) diagonal signs for |00>, |01>, |10>, |11>.
_Z_SIGNS = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
_RAISE = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
# Force channels (ion, sign): sigma+ and sigma- on each ion of the pair.
_LADDERS = np.stack([np.kron(_RAISE, _I2), np.kron(_RAISE.T, _I2), np.kron(_I2, _RAISE), np.kron(_I2, _RAISE.T)])
_CHANNEL_ION = np.array([0, 0, 1, 1])
_CHANNEL_SIGN = np.array([1.0, -1.0, 1.0, -1.0])
_PRODUCTS = np.einsum("aji,bjk->abik", _LADDERS.conj(), _LADDERS)


def ms_unitary(theta: float) -> np.ndarray:
    return math.cos(theta / 2) * np.eye(4, dtype=complex) - 1j * math.sin(theta / 2) * XX


def z_rotation(phi_i: float, phi_j: float) -> np.ndarray:
    return np.diag(np.exp(-0.5j * (_Z_SIGNS[:, 0] * phi_i + _Z_SIGNS[:, 1] * phi_j)))


def _envelope(drive: GateDrive):
    return envelope_for(drive.pulse.duration, drive.pulse.knots)


def _rabi_of(drive: GateDrive, ion: int) -> float:
    if ion == drive.pair[0]:
        return drive.rabi_peak_i
    if ion == drive.pair[1]:
        return drive.rabi_peak_j
    raise DynamicsError(f"ion {ion} is not part of the driven pair {drive.pair}")


def coupling_rates(drive: GateDrive) -> np.ndarray:
    """c[k, n] = eta_k,n * Omega_n / 2 for n over the two ions of the pair."""
    i, j = drive.pair
    return 0.5 * np.stack([drive.eta(i) * drive.rabi_peak_i, drive.eta(j) * drive.rabi_peak_j], axis=1)


def residual_lightshift(drive: GateDrive) -> np.ndarray:
    """Peak residual shift r_n (rad/s) after the programmed frame rotation."""
    energy = _envelope(drive).energy()
    return np.asarray(drive.lightshift_peak, dtype=float) + np.asarray(drive.pulse.frame_rotation_total, dtype=float) / energy


@dataclass(frozen=True)
class _Grid:
    edges: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    inner_nodes: np.ndarray
    inner_weights: np.ndarray
    g_nodes: np.ndarray
    g_inner: np.ndarray
    energy: np.ndarray
    energy_nodes: np.ndarray
    energy_inner: np.ndarray


@functools.lru_cache(maxsize=16)
def _grid(duration: float, knots: int, subdivisions: int, order: int) -> _Grid:
    """Gauss-Legendre nodes on sub-intervals of the spline segments.

    Inner nodes cover [edge, node] for every outer node, so running integrals at the
    outer nodes are exact for the piecewise-polynomial envelope up to the exponential.
    """
    env = envelope_for(duration, knots)
    bp = env.breakpoints
    fractions = np.arange(subdivisions) / subdivisions
    starts = (bp[:-1, None] + np.diff(bp)[:, None] * fractions).ravel()
    edges = np.append(starts, bp[-1])
    x, w = np.polynomial.legendre.leggauss(order)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    width = np.diff(edges)[:, None]
    nodes = edges[:-1, None] + width * x
    weights = width * w
    span = nodes - edges[:-1, None]
    inner_nodes = edges[:-1, None, None] + span[:, :, None] * x
    inner_weights = span[:, :, None] * w
    return _Grid(
        edges=edges,
        nodes=nodes,
        weights=weights,
        inner_nodes=inner_nodes,
        inner_weights=inner_weights,
        g_nodes=env(nodes),
        g_inner=env(inner_nodes),
        energy=env.energy(edges),
        energy_nodes=env.energy(nodes),
        energy_inner=env.energy(inner_nodes),
    )


def _drive_grid(drive: GateDrive) -> _Grid:
    return _grid(drive.pulse.duration, drive.pulse.knots, SUBDIVISIONS, GAUSS_ORDER)


def _mode_integrals(grid: _Grid, detunings: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Running D_k(t) = int_0^t g exp(i delta_k s) ds and G_k(t) at the grid edges."""
    d = np.asarray(detunings, dtype=float)[:, None, None]
    phase = np.exp(1j * d * grid.nodes)
    pieces = np.sum(grid.weights * grid.g_nodes * phase, axis=2)
    zeros = np.zeros((d.shape[0], 1))
    running = np.concatenate([zeros, np.cumsum(pieces, axis=1)], axis=1)

    inner = np.sum(grid.inner_weights * grid.g_inner * np.exp(-1j * d[..., None] * grid.inner_nodes), axis=3)
    backward = np.conj(running[:, :-1])[:, :, None] + inner
    g_pieces = np.sum(grid.weights * grid.g_nodes * np.imag(phase * backward), axis=2)
    geometric = np.concatenate([zeros, np.cumsum(g_pieces, axis=1)], axis=1)
    return running, geometric


def _quad(func, a: float, b: float, **kwargs) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            value, _ = quad(func, a, b, limit=400, epsabs=1e-13, epsrel=1e-10, **kwargs)
        except IntegrationWarning as exc:
            raise QuadratureError(f"quadrature did not converge: {exc}") from exc
    return value


def _quad_displacement(drive: GateDrive, detuning: float) -> complex:
    env = _envelope(drive)
    tau = drive.pulse.duration
    wvar = detuning * tau
    unit = lambda x: float(env(tau * x))  # noqa: E731
    if wvar == 0.0:
        return tau * _quad(unit, 0.0, 1.0)
    real = _quad(unit, 0.0, 1.0, weight="cos", wvar=wvar)
    imag = _quad(unit, 0.0, 1.0, weight="sin", wvar=wvar)
    return tau * complex(real, imag)


def _quad_geometric(drive: GateDrive, detuning: float) -> float:
    env = _envelope(drive)
    tau = drive.pulse.duration
    wvar = detuning * tau

    def integrand(xp: float, x: float) -> float:
        return float(env(tau * x)) * float(env(tau * xp)) * math.sin(wvar * (x - xp))

    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            value, _ = dblquad(integrand, 0.0, 1.0, 0.0, lambda x: x, epsabs=1e-13, epsrel=1e-10)
        except IntegrationWarning as exc:
            raise QuadratureError(f"nested quadrature did not converge: {exc}") from exc
    return tau ** 2 * value


def displacement_integral(drive: GateDrive, mode: int, ion: int, method: str = "gauss") -> complex:
    """alpha for mode index ``mode`` (over all driven manifolds) and ``ion``."""
    eta = drive.eta(ion)
    if not 0 <= mode < eta.size:
        raise DynamicsError(f"mode {mode} out of range ({eta.size} modes)")
    rate = 0.5 * eta[mode] * _rabi_of(drive, ion)
    if rate == 0.0:
        return 0j
    detuning = float(drive.detunings[mode])
    if method == "quad":
        return rate * _quad_displacement(drive, detuning)
    if method != "gauss":
        raise DynamicsError(f"unknown integration method {method!r}")
    running, _ = _mode_integrals(_drive_grid(drive), np.array([detuning]))
    return complex(rate * running[0, -1])


def _pair_weights(drive: GateDrive) -> np.ndarray:
    """eta_ki eta_kj Omega_i Omega_j per mode."""
    cpl = coupling_rates(drive)
    return 4.0 * cpl[:, 0] * cpl[:, 1]


def entangling_angle(drive: GateDrive, method: str = "gauss") -> float:
    weights = _pair_weights(drive)
    if not np.any(weights):
        return 0.0
    if method == "quad":
        geometric = np.array([
            _quad_geometric(drive, float(d)) if w != 0.0 else 0.0
            for d, w in zip(drive.detunings, weights)
        ])
        return float(-np.sum(weights * geometric))
    if method != "gauss":
        raise DynamicsError(f"unknown integration method {method!r}")
    _, geometric = _mode_integrals(_drive_grid(drive), drive.detunings)
    return float(-np.sum(weights * geometric[:, -1]))


def _rotated_integrals(grid: _Grid, detunings: np.ndarray, rates: np.ndarray):
    """Force samples f and running integrals b per mode and channel in the Z frame.

    Channel (n, s) carries g(t) exp(i delta_k t + i s r_n E(t)). Returns f and b at the outer
    nodes, shape (modes, 4, slices, order), and b over the whole gate, shape (modes, 4).
    """
    d = np.asarray(detunings, dtype=float)[:, None, None, None]
    turn = (_CHANNEL_SIGN * np.asarray(rates, dtype=float)[_CHANNEL_ION])[None, :, None, None]
    f = grid.g_nodes * np.exp(1j * (d * grid.nodes + turn * grid.energy_nodes))
    pieces = np.sum(grid.weights * f, axis=3)
    zeros = np.zeros(pieces.shape[:2] + (1,))
    running = np.concatenate([zeros, np.cumsum(pieces, axis=2)], axis=2)
    inner = grid.g_inner * np.exp(1j * (d[..., None] * grid.inner_nodes + turn[..., None] * grid.energy_inner))
    b = running[:, :, :-1, None] + np.sum(grid.inner_weights * inner, axis=4)
    return f, b, running[:, :, -1]


def _rotating_frame(drive: GateDrive, grid: _Grid, rates: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Spin propagator in the frame of the residual Z term, and the final mode displacements.

    The displacement of mode k is -i times the returned spin operator ``displacements[k]``.
    """
    cpl = coupling_rates(drive)[:, _CHANNEL_ION]
    f, b, final = _rotated_integrals(grid, drive.detunings, rates)
    f = cpl[:, :, None, None] * f
    b = cpl[:, :, None, None] * b
    mix = np.einsum("kasm,kbsm->absm", f.conj(), b)
    kernel = -0.5j * (mix - np.conj(np.swapaxes(mix, 0, 1)))
    slices = np.einsum("absm,sm,abij->sij", kernel, grid.weights, _PRODUCTS, optimize=True)
    slices -= np.trace(slices, axis1=1, axis2=2)[:, None, None] / 4.0 * np.eye(4)

    unitary = np.eye(4, dtype=complex)
    for step in expm(-1j * slices):
        unitary = step @ unitary
    displacements = np.einsum("ka,aij->kij", cpl * final, _LADDERS)
    return unitary, displacements


def _trace_displacements(rho: np.ndarray, displacements: np.ndarray, n_bar: float) -> np.ndarray:
    """Trace out thermal modes displaced by spin operators, to second order and exponentiated.

    Exact when the operators commute, where it reduces to ``_dephase``.
    """
    eye = np.eye(4)
    generator = np.zeros((16, 16), dtype=complex)
    for a in displacements:
        for weight, jump in ((n_bar + 1.0, a), (n_bar, a.conj().T)):
            if weight == 0.0:
                continue
            decay = jump.conj().T @ jump
            generator += weight * (np.kron(jump, jump.conj()) - 0.5 * np.kron(decay, eye) - 0.5 * np.kron(eye, decay.T))
    return (expm(generator) @ rho.reshape(16)).reshape(4, 4)


def _dephase(rho: np.ndarray, alpha: np.ndarray, n_bar: float) -> np.ndarray:
    """Trace out modes left displaced by ``alpha`` (shape (modes, 2)) from a thermal state."""
    beta = -1j * (alpha @ _X_SIGNS.T)
    overlap = np.ones((4, 4), dtype=complex)
    for row in beta:
        diff = row[:, None] - row[None, :]
        overlap *= np.exp(1j * np.imag(np.conj(row[None, :]) * row[:, None]))
        overlap *= np.exp(-(n_bar + 0.5) * np.abs(diff) ** 2)
    rho_x = _HADAMARD @ rho @ _HADAMARD
    return _HADAMARD @ (rho_x * overlap) @ _HADAMARD


def _outcome(rho: np.ndarray, theta: float, alpha: np.ndarray, labels: Sequence[str], pair, phases) -> GateOutcome:
    populations = np.clip(np.real(np.diag(rho)), 0.0, 1.0)
    residual = {}
    for k, label in enumerate(labels):
        for n, ion in enumerate(pair):
            residual[f"{label}.{ion}"] = complex(alpha[k, n])
    return GateOutcome(
        theta=float(theta),
        residual_alpha=residual,
        ls_phase_i=float(phases[0]),
        ls_phase_j=float(phases[1]),
        populations={state: float(p) for state, p in zip(c.QUBIT_STATES, populations)},
        parity_amplitude=float(min(1.0, 2.0 * abs(rho[0, 3]))),
        spin_state=rho,
    )


def gate_unitary(drive: GateDrive) -> np.ndarray:
    """Two-qubit part of one gate, motion left in place (closed loops assumed)."""
    rates = residual_lightshift(drive)
    if not np.any(rates):
        return ms_unitary(entangling_angle(drive))
    grid = _drive_grid(drive)
    unitary, _ = _rotating_frame(drive, grid, rates)
    return z_rotation(*(rates * grid.energy[-1])) @ unitary


def simulate_gate_analytic(drive: GateDrive) -> GateOutcome:
    """Exact for commuting drives (no residual light shift); second-order Magnus in the Z frame otherwise.

    Contrast loss from open phase-space loops enters as the coherent-state overlap of the
    displaced motional states, averaged over a thermal state with ``drive.n_bar``. The reported
    ``theta`` and ``residual_alpha`` are the light-shift-free values; ``ls_phase`` is the residual
    Z phase r_n E(tau) accumulated over the gate.
    """
    grid = _drive_grid(drive)
    running, geometric = _mode_integrals(grid, drive.detunings)
    alpha = coupling_rates(drive) * running[:, -1][:, None]
    theta = float(-np.sum(_pair_weights(drive) * geometric[:, -1]))
    rates = residual_lightshift(drive)
    phases = rates * grid.energy[-1]

    if not np.any(rates):
        psi = ms_unitary(theta)[:, 0]
        rho = _dephase(np.outer(psi, psi.conj()), alpha, drive.n_bar)
    else:
        unitary, displacements = _rotating_frame(drive, grid, rates)
        psi = unitary[:, 0]
        rho = _trace_displacements(np.outer(psi, psi.conj()), displacements, drive.n_bar)
        turn = z_rotation(*phases)
        rho = turn @ rho @ turn.conj().T
    return _outcome(rho, theta, alpha, drive.mode_labels, drive.pair, phases)


def repeated_gate_populations(unitary: np.ndarray, repetitions: int) -> Dict[str, float]:
    """Populations after ``repetitions`` back-to-back gates from |00>."""
    if repetitions < 0:
        raise DynamicsError("repetitions must be >= 0")
    psi = np.linalg.matrix_power(unitary, repetitions)[:, 0]
    return {state: float(abs(a) ** 2) for state, a in zip(c.QUBIT_STATES, psi)}


def scale_to_theta(drive: GateDrive, theta: float) -> GateDrive:
    """Rescale the global intensity: Rabi rates by sqrt(ratio), light shift by ratio."""
    current = entangling_angle(drive)
    if current == 0.0 or theta / current < 0.0:
        raise DynamicsError(f"cannot reach theta={theta:.4g} from {current:.4g} by intensity scaling")
    ratio = theta / current
    root = math.sqrt(ratio)
    return replace(
        drive,
        rabi_peak_i=drive.rabi_peak_i * root,
        rabi_peak_j=drive.rabi_peak_j * root,
        lightshift_peak=tuple(ratio * float(s) for s in drive.lightshift_peak),
    )


# Truncated-Fock oracle.


class _FockSpace:
    def __init__(self, modes: int, n_max: int):
        self.modes = modes
        self.levels = n_max + 1
        self.motion_dim = self.levels ** modes
        ladder = sparse.diags(np.sqrt(np.arange(1, self.levels)), 1, format="csr", dtype=complex)
        self.ladders = [self._embed_mode(ladder, k) for k in range(modes)]
        occupation = np.indices((self.levels,) * modes).reshape(modes, -1)
        self.top = np.any(occupation == n_max, axis=0)

    def _embed_mode(self, op, k: int):
        out = sparse.identity(1, format="csr", dtype=complex)
        for m in range(self.modes):
            factor = op if m == k else sparse.identity(self.levels, format="csr", dtype=complex)
            out = sparse.kron(out, factor, format="csr")
        return out

    def spin(self, spin_op: np.ndarray, motion=None):
        motion = sparse.identity(self.motion_dim, format="csr", dtype=complex) if motion is None else motion
        return sparse.kron(sparse.csr_matrix(spin_op), motion, format="csr")

    def leakage(self, psi: np.ndarray) -> float:
        blocks = psi.reshape(4, self.motion_dim, -1)
        return float(np.max(np.sum(np.abs(blocks[:, self.top, :]) ** 2, axis=(0, 1))))


def _check_steps(drive: GateDrive, steps: Optional[int]) -> int:
    segments = drive.pulse.knots - 1
    steps = STEPS_PER_SEGMENT * segments if steps is None else steps
    if steps < segments or steps % segments:
        raise DynamicsError(f"steps={steps} must be a positive multiple of the {segments} envelope segments")
    return steps


def _propagate(
    drive: GateDrive,
    columns: np.ndarray,
    space: _FockSpace,
    steps: int,
    check_leakage: bool,
    observe: Optional[Callable[[np.ndarray], None]] = None,
) -> np.ndarray:
    """Fourth-order commutator-free Magnus stepping of ``columns`` over the gate.

    ``observe`` sees the propagated columns after every step.
    """
    env = _envelope(drive)
    cpl = coupling_rates(drive)
    sx_i, sx_j = np.kron(_SX, _I2), np.kron(_I2, _SX)
    forces = [space.spin(cpl[k, 0] * sx_i + cpl[k, 1] * sx_j, a) for k, a in enumerate(space.ladders)]
    raising = [f.conj().T.tocsr() for f in forces]
    rates = residual_lightshift(drive)
    shift = space.spin(0.5 * (rates[0] * np.kron(_SZ, _I2) + rates[1] * np.kron(_I2, _SZ)))
    detunings = drive.detunings

    h = drive.pulse.duration / steps
    root3 = math.sqrt(3.0)
    nodes = np.array([0.5 - root3 / 6.0, 0.5 + root3 / 6.0])
    heavy, light = (3.0 + 2.0 * root3) / 12.0, (3.0 - 2.0 * root3) / 12.0

    def generator(times: np.ndarray, weights: Tuple[float, float]):
        g = env(times)
        total = sum(w * gi ** 2 for w, gi in zip(weights, g)) * shift
        for k in range(len(forces)):
            coeff = sum(w * gi * np.exp(1j * detunings[k] * t) for w, gi, t in zip(weights, g, times))
            total = total + coeff * raising[k] + np.conj(coeff) * forces[k]
        return (-1j * h) * total

    psi = columns.astype(complex)
    for n in range(steps):
        times = (n + nodes) * h
        psi = expm_multiply(generator(times, (heavy, light)), psi, traceA=0.0)
        psi = expm_multiply(generator(times, (light, heavy)), psi, traceA=0.0)
        if check_leakage:
            leak = space.leakage(psi)
            if leak > c.LEAKAGE_TOLERANCE:
                raise TruncationError(
                    f"top Fock level population {leak:.2e} at t={(n + 1) * h * 1e6:.1f} us; increase n_max"
                )
        if observe is not None:
            observe(psi)
    return psi


def fock_propagator(drive: GateDrive, n_max: int = c.DEFAULT_N_MAX, steps: Optional[int] = None) -> np.ndarray:
    """Dense propagator on spin x Fock space (small truncations only)."""
    space = _FockSpace(len(drive.frequencies), n_max)
    identity = np.eye(4 * space.motion_dim, dtype=complex)
    return _propagate(drive, identity, space, _check_steps(drive, steps), check_leakage=False)


def _spin_column(spin: Sequence[float], space: _FockSpace) -> np.ndarray:
    vacuum = np.zeros(space.motion_dim)
    vacuum[0] = 1.0
    return np.kron(np.asarray(spin, dtype=complex), vacuum)


def _pair_phases(v: np.ndarray) -> Tuple[float, float]:
    """Rz phases (phi_i, phi_j) from the vacuum-projected 4x4 block."""

    def combined(diag: complex, flip: complex) -> float:
        if abs(diag) > 1e-6 and abs(flip) > 1e-6:
            value = np.angle(1j * flip) - np.angle(diag)
        elif abs(diag) > 1e-6:
            value = -2.0 * np.angle(diag)
        else:
            value = 2.0 * np.angle(1j * flip)
        return float(np.angle(np.exp(1j * value)))

    total = combined(v[0, 0], v[3, 0])
    difference = combined(v[1, 1], v[2, 1])
    return 0.5 * (total + difference), 0.5 * (total - difference)


def _fock_run(drive: GateDrive, n_max: int, steps: int) -> GateOutcome:
    space = _FockSpace(len(drive.frequencies), n_max)
    half = 0.5
    spins = [
        (1, 0, 0, 0),
        (0, 1, 0, 0),
        (half, half, half, half),
        (half, -half, half, -half),
    ]
    columns = np.stack([_spin_column(s, space) for s in spins], axis=1)
    flip = 3 * space.motion_dim
    turns = [0.0]

    def track(psi: np.ndarray) -> None:
        # on the vacuum, a00 - a11 = exp(i theta / 2) and a00 + a11 = exp(-i theta / 2)
        ground, pair = psi[0, 0], psi[flip, 0]
        turns.append(float(np.angle(ground - pair) - np.angle(ground + pair)))

    psi = _propagate(drive, columns, space, steps, check_leakage=True, observe=track)

    state = psi[:, 0].reshape(4, space.motion_dim)
    rho = state @ state.conj().T
    block = psi[:, :2].reshape(4, space.motion_dim, 2)[:, 0, :]
    phases = _pair_phases(block)

    alpha = np.zeros((space.modes, 2), dtype=complex)
    for k, ladder in enumerate(space.ladders):
        lowered = space.spin(np.eye(4), ladder) @ psi[:, 2:]
        plus_plus = np.vdot(psi[:, 2], lowered[:, 0])
        plus_minus = np.vdot(psi[:, 3], lowered[:, 1])
        alpha[k] = (0.5j * (plus_plus + plus_minus), 0.5j * (plus_plus - plus_minus))

    theta = float(np.unwrap(turns)[-1])
    return _outcome(rho, theta, alpha, drive.mode_labels, drive.pair, phases)


def simulate_gate_fock(
    drive: GateDrive, n_max: int = c.DEFAULT_N_MAX, steps: Optional[int] = None, check: bool = False
) -> GateOutcome:
    """Brute-force propagation of the gate on the truncated Fock space, starting from |00, vac>.

    With ``check`` the step count is doubled until populations move by less than 1e-8.
    """
    if n_max < 5:
        raise DynamicsError("Fock oracle needs n_max >= 5")
    if drive.n_bar > 0.0:
        raise DynamicsError("the Fock oracle starts from the motional ground state (n_bar = 0)")
    steps = _check_steps(drive, steps)
    outcome = _fock_run(drive, n_max, steps)
    if not check:
        return outcome
    for _ in range(MAX_DOUBLINGS):
        steps *= 2
        finer = _fock_run(drive, n_max, steps)
        change = max(abs(finer.populations[s] - outcome.populations[s]) for s in c.QUBIT_STATES)
        logger.debug("Fock oracle: %d steps, population change %.2e", steps, change)
        outcome = finer
        if change < RICHARDSON_TOLERANCE:
            return outcome
    raise DynamicsError(f"Fock oracle populations not converged at {steps} steps")


@dataclass
class RobustnessCurve:
    shifts: np.ndarray
    thetas: np.ndarray
    theta_zero: float

    @property
    def relative_deviation(self) -> np.ndarray:
        return np.abs(self.thetas - self.theta_zero) / abs(self.theta_zero)

    @property
    def max_relative_deviation(self) -> float:
        return float(np.max(self.relative_deviation))

    def to_rows(self):
        return [
            {"shift_hz": s / c.TWO_PI, "theta_rad": t, "relative_deviation": d}
            for s, t, d in zip(self.shifts, self.thetas, self.relative_deviation)
        ]


def shift_modes(drive: GateDrive, offset: float) -> GateDrive:
    """Same drive tone, every mode frequency moved by ``offset`` (rad/s)."""
    return replace(
        drive,
        modes=drive.modes.shifted(offset),
        other_modes=None if drive.other_modes is None else drive.other_modes.shifted(offset),
        drive_frequency=drive.drive_frequency,
    )


def frequency_robustness(drive: GateDrive, shifts: Sequence[float]) -> RobustnessCurve:
    shifts = np.asarray(shifts, dtype=float)
    theta_zero = entangling_angle(drive)
    if theta_zero == 0.0:
        raise DynamicsError("robustness of a zero-angle gate is undefined")
    thetas = np.array([entangling_angle(shift_modes(drive, s)) for s in shifts])
    return RobustnessCurve(shifts=shifts, thetas=thetas, theta_zero=theta_zero)
