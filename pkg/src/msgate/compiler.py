"""Circuit IR with dual per-qubit phase frames and ZZ(theta) wrapper synthesis.

Conventions: R(theta, psi) = exp(-i theta/2 (cos psi X + sin psi Y)), Rz(phi) = exp(-i phi Z/2),
MS(theta; psi_i, psi_j) = exp(-i theta/2 sigma_psi_i sigma_psi_j), ZZ(theta) = exp(-i theta/2 Z Z).
Qubit 0 is the most significant bit of the state index.

A virtual Rz(phi) is never played: R(theta, psi) Rz(phi) = Rz(phi) R(theta, psi - phi), so every
later pulse on the qubit plays at ``psi - Phi`` and the accumulated frame Rz(Phi) is applied at
the end of the circuit.
"""
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CircuitError, CircuitSyntaxError, FrameError

logger = logging.getLogger(__name__)

MAX_UNITARY_QUBITS = 4
ZZ_LIMIT = math.pi / 2
Y_PHASE = math.pi / 2
PHASE_TOLERANCE = 1e-12

PULSE_KINDS = ("ry_co", "ry_cu", "ms", "frame")
GATE_KINDS = ("ry_co", "ry_cu", "rz", "ms", "zz", "frame")
_ARITY = {"ry_co": 1, "ry_cu": 1, "rz": 1, "frame": 1, "ms": 2, "zz": 2}

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.diag([1.0, -1.0]).astype(complex)

# (pair, theta) -> per-gate total of the dynamic frame rotation, rad.
FrameRotationSource = Callable[[Tuple[int, int], float], float]


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: Tuple[int, ...]
    angle: float
    # Nominal drive phase of an MS gate.
    phase: float = 0.0


def ry_co(qubit: int, angle: float) -> Gate:
    return Gate("ry_co", (qubit,), angle)


def ry_cu(qubit: int, angle: float) -> Gate:
    return Gate("ry_cu", (qubit,), angle)


def rz(qubit: int, angle: float) -> Gate:
    return Gate("rz", (qubit,), angle)


def frame(qubit: int, angle: float) -> Gate:
    return Gate("frame", (qubit,), angle)


def ms(i: int, j: int, theta: float, phase: float = 0.0) -> Gate:
    return Gate("ms", (i, j), theta, phase)


def zz(i: int, j: int, theta: float) -> Gate:
    return Gate("zz", (i, j), theta)


@dataclass
class Circuit:
    qubit_count: int
    gates: List[Gate] = field(default_factory=list)
    metadata: Dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        if self.qubit_count < 1:
            raise CircuitError("a circuit needs at least one qubit")
        for index, gate in enumerate(self.gates):
            _check_gate(gate, self.qubit_count, index)
        if self.native_sign not in (1, -1):
            raise CircuitError("native_sign must be 1 or -1")

    @property
    def native_sign(self) -> int:
        """Sign of the hardware XX interaction at drive phase 0."""
        value = self.metadata.get("native_sign", "1")
        try:
            sign = int(value)
        except ValueError:
            raise CircuitError(f"native_sign must be 1 or -1, got {value!r}") from None
        if sign not in (1, -1):
            raise CircuitError(f"native_sign must be 1 or -1, got {sign}")
        return sign

    def append(self, gate: Gate) -> "Circuit":
        _check_gate(gate, self.qubit_count, len(self.gates))
        self.gates.append(gate)
        return self


def _check_gate(gate: Gate, qubit_count: int, index: int) -> None:
    if gate.kind not in GATE_KINDS:
        raise CircuitError(f"gate {index}: unknown kind {gate.kind!r}")
    if len(gate.qubits) != _ARITY[gate.kind]:
        raise CircuitError(f"gate {index}: {gate.kind} acts on {_ARITY[gate.kind]} qubit(s), got {len(gate.qubits)}")
    if any(not 0 <= q < qubit_count for q in gate.qubits):
        raise CircuitError(f"gate {index}: qubit index out of range in {gate.qubits} for {qubit_count} qubits")
    if len(set(gate.qubits)) != len(gate.qubits):
        raise CircuitError(f"gate {index}: {gate.kind} needs two distinct qubits")
    if not (math.isfinite(gate.angle) and math.isfinite(gate.phase)):
        raise CircuitError(f"gate {index}: non-finite angle")
    if gate.kind == "zz" and abs(gate.angle) > ZZ_LIMIT + PHASE_TOLERANCE:
        raise CircuitError(f"gate {index}: ZZ angle {gate.angle:.6g} outside [-pi/2, pi/2]")


class FrameState:
    """Default (Phi0) and temporary (Phi1) frame of every qubit."""

    def __init__(self, qubit_count: int):
        self.phi0 = np.zeros(qubit_count)
        self.phi1 = np.zeros(qubit_count)
        self.temporary = np.zeros(qubit_count, dtype=bool)

    def active(self, qubit: int) -> float:
        return float(self.phi1[qubit] if self.temporary[qubit] else self.phi0[qubit])

    def advance(self, qubit: int, angle: float) -> None:
        if self.temporary[qubit]:
            self.phi1[qubit] += angle
        else:
            self.phi0[qubit] += angle

    def enter(self, qubits: Sequence[int]) -> None:
        """Switch ``qubits`` to a fresh temporary frame."""
        busy = [q for q in qubits if self.temporary[q]]
        if busy:
            raise FrameError(f"qubits {busy} already in a temporary frame")
        for q in qubits:
            self.phi1[q] = 0.0
            self.temporary[q] = True

    def restore(self, qubits: Sequence[int]) -> None:
        idle = [q for q in qubits if not self.temporary[q]]
        if idle:
            raise FrameError(f"qubits {idle} are not in a temporary frame")
        for q in qubits:
            self.temporary[q] = False


@dataclass
class ResolvedPulse:
    kind: str
    qubits: Tuple[int, ...]
    angle: float
    # Absolute waveform phase per qubit (empty for frame updates).
    phases: Tuple[float, ...] = ()
    # Frame the pulse was referenced to: "default" or "temporary".
    frame: str = "default"
    source: int = 0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "qubits": list(self.qubits),
            "angle_rad": self.angle,
            "phases_rad": list(self.phases),
            "frame": self.frame,
            "source": self.source,
        }


def _wrap(phase: float) -> float:
    wrapped = math.remainder(phase, 2.0 * math.pi)
    return 0.0 if abs(wrapped) < PHASE_TOLERANCE else wrapped


def expand_zz(gate: Gate, frame_rotation: float = 0.0) -> List[Gate]:
    """Wrapper synthesis of ZZ(theta) around one MS(|theta|) at drive phase 0.

    Qubit j's wrappers match qubit i's for theta >= 0 and are mismatched for theta < 0.
    On native -XX hardware the MS pulse is played at phase pi on qubit j. A nonzero
    ``frame_rotation`` is accumulated on both temporary frames right after the MS pulse.
    """
    if gate.kind != "zz":
        raise CircuitError(f"expand_zz needs a zz gate, got {gate.kind}")
    theta = gate.angle
    if abs(theta) > ZZ_LIMIT + PHASE_TOLERANCE:
        raise CircuitError(f"ZZ angle {theta:.6g} outside [-pi/2, pi/2]")
    i, j = gate.qubits
    sign_j = 1.0 if theta >= 0 else -1.0
    sequence = [
        ry_cu(i, math.pi / 2),
        ry_cu(j, sign_j * math.pi / 2),
        Gate("ms", (i, j), abs(theta), 0.0),
    ]
    if frame_rotation:
        sequence += [frame(i, frame_rotation), frame(j, frame_rotation)]
    sequence += [ry_cu(i, -math.pi / 2), ry_cu(j, -sign_j * math.pi / 2)]
    return sequence


def _ms_phases(gate: Gate, frames: FrameState, native_sign: int) -> Tuple[float, float]:
    i, j = gate.qubits
    # Phase pi on qubit j flips the sign of a native -XX interaction.
    offset_j = math.pi if native_sign < 0 else 0.0
    return (_wrap(gate.phase - frames.active(i)), _wrap(gate.phase + offset_j - frames.active(j)))


def _resolve(circuit: Circuit, frame_rotation: Optional[FrameRotationSource]) -> Tuple[List[ResolvedPulse], FrameState]:
    circuit.validate()
    frames = FrameState(circuit.qubit_count)
    sign = circuit.native_sign
    pulses: List[ResolvedPulse] = []

    def emit(gate: Gate, source: int, in_zz: bool) -> None:
        label = "temporary" if in_zz else "default"
        if gate.kind == "rz":
            frames.advance(gate.qubits[0], gate.angle)
        elif gate.kind == "frame":
            frames.advance(gate.qubits[0], gate.angle)
            pulses.append(ResolvedPulse("frame", gate.qubits, gate.angle, (), label, source))
        elif gate.kind in ("ry_co", "ry_cu"):
            q = gate.qubits[0]
            pulses.append(ResolvedPulse(gate.kind, gate.qubits, gate.angle, (_wrap(Y_PHASE - frames.active(q)),), label, source))
        elif gate.kind == "ms":
            phases = _ms_phases(gate, frames, sign)
            pulses.append(ResolvedPulse("ms", gate.qubits, gate.angle, phases, label, source))
            if not in_zz and frame_rotation is not None:
                total = frame_rotation(tuple(sorted(gate.qubits)), gate.angle)
                for q in gate.qubits:
                    emit(frame(q, total), source, in_zz)

    for index, gate in enumerate(circuit.gates):
        if gate.kind != "zz":
            emit(gate, index, False)
            continue
        total = 0.0
        if frame_rotation is not None and gate.angle != 0.0:
            total = frame_rotation(tuple(sorted(gate.qubits)), abs(gate.angle))
        frames.enter(gate.qubits)
        for inner in expand_zz(gate, total):
            emit(inner, index, True)
        frames.restore(gate.qubits)
    return pulses, frames


def resolve_waveform_phases(circuit: Circuit, frame_rotation: Optional[FrameRotationSource] = None) -> List[ResolvedPulse]:
    """Played pulses of ``circuit`` with absolute waveform phases.

    ``frame_rotation(pair, theta)`` supplies the calibrated dynamic frame rotation of every
    MS pulse; it advances the frame the pulse was played in.
    """
    pulses, frames = _resolve(circuit, frame_rotation)
    logger.debug("resolved %d gates into %d pulses; final frames %s", len(circuit.gates), len(pulses), frames.phi0)
    return pulses


# Dense unitaries.


def _embed(ops: Dict[int, np.ndarray], qubit_count: int) -> np.ndarray:
    result = np.ones((1, 1), dtype=complex)
    for q in range(qubit_count):
        result = np.kron(result, ops.get(q, _I2))
    return result


def _sigma(phase: float) -> np.ndarray:
    return math.cos(phase) * _X + math.sin(phase) * _Y


def _rotation(generator: np.ndarray, angle: float) -> np.ndarray:
    """exp(-i angle/2 G) for an involutory G."""
    return math.cos(angle / 2) * np.eye(generator.shape[0]) - 1j * math.sin(angle / 2) * generator


def z_frames(phases: Sequence[float]) -> np.ndarray:
    """Rz(phases[q]) on every qubit."""
    n = len(phases)
    return _embed({q: np.diag([np.exp(-0.5j * p), np.exp(0.5j * p)]) for q, p in enumerate(phases)}, n)


def _embed_pair(u: np.ndarray, i: int, j: int, qubit_count: int) -> np.ndarray:
    """Two-qubit operator on qubits (i, j), i as the more significant factor of ``u``."""
    order = [i, j, *(q for q in range(qubit_count) if q not in (i, j))]
    full = np.kron(u, np.eye(2 ** (qubit_count - 2)))
    inverse = list(np.argsort(order))
    axes = inverse + [qubit_count + k for k in inverse]
    return full.reshape((2,) * (2 * qubit_count)).transpose(axes).reshape(2 ** qubit_count, 2 ** qubit_count)


def _check_size(circuit: Circuit) -> None:
    if circuit.qubit_count > MAX_UNITARY_QUBITS:
        raise CircuitError(f"dense unitaries are limited to {MAX_UNITARY_QUBITS} qubits, circuit has {circuit.qubit_count}")


def circuit_unitary(circuit: Circuit, frame_rotation: Optional[FrameRotationSource] = None,
                    lightshift: Optional[FrameRotationSource] = None,
                    ms_unitary: Optional[Callable[[Tuple[int, int], float], np.ndarray]] = None) -> np.ndarray:
    """Unitary of the played pulses followed by the final default frames.

    ``lightshift(pair, theta)`` adds the physical Z phase an MS pulse leaves on each of its qubits.
    ``ms_unitary(pair, theta)`` replaces the ideal MS pulse by a 4x4 hardware unitary at
    drive phase 0; the resolved waveform phases are applied around it.
    """
    _check_size(circuit)
    pulses, frames = _resolve(circuit, frame_rotation)
    n = circuit.qubit_count
    sign = circuit.native_sign
    unitary = np.eye(2 ** n, dtype=complex)
    for pulse in pulses:
        if pulse.kind == "frame":
            continue
        if pulse.kind == "ms" and ms_unitary is not None:
            i, j = pulse.qubits
            phases = np.zeros(n)
            phases[[i, j]] = pulse.phases
            step = z_frames(phases) @ _embed_pair(ms_unitary(pulse.qubits, pulse.angle), i, j, n) @ z_frames(-phases)
        elif pulse.kind == "ms":
            i, j = pulse.qubits
            generator = _embed({i: _sigma(pulse.phases[0]), j: _sigma(pulse.phases[1])}, n)
            step = _rotation(generator, sign * pulse.angle)
            if lightshift is not None:
                shift = lightshift(tuple(sorted(pulse.qubits)), pulse.angle)
                phases = np.zeros(n)
                phases[[i, j]] = shift
                step = z_frames(phases) @ step
        else:
            (q,) = pulse.qubits
            step = _rotation(_embed({q: _sigma(pulse.phases[0])}, n), pulse.angle)
        unitary = step @ unitary
    return z_frames(frames.phi0) @ unitary


def gate_matrix(gate: Gate, qubit_count: int) -> np.ndarray:
    """Logical unitary of one gate."""
    if gate.kind in ("rz", "frame"):
        phases = np.zeros(qubit_count)
        phases[gate.qubits[0]] = gate.angle
        return z_frames(phases)
    if gate.kind in ("ry_co", "ry_cu"):
        return _rotation(_embed({gate.qubits[0]: _Y}, qubit_count), gate.angle)
    i, j = gate.qubits
    if gate.kind == "ms":
        generator = _embed({i: _sigma(gate.phase), j: _sigma(gate.phase)}, qubit_count)
    else:
        generator = _embed({i: _Z, j: _Z}, qubit_count)
    return _rotation(generator, gate.angle)


def direct_unitary(circuit: Circuit) -> np.ndarray:
    """Product of the logical gate matrices, no frame tracking."""
    circuit.validate()
    _check_size(circuit)
    unitary = np.eye(2 ** circuit.qubit_count, dtype=complex)
    for gate in circuit.gates:
        unitary = gate_matrix(gate, circuit.qubit_count) @ unitary
    return unitary


def equal_up_to_phase(a: np.ndarray, b: np.ndarray, tolerance: float = PHASE_TOLERANCE) -> bool:
    """Equality after removing the phase of the largest-magnitude entry of ``a``."""
    if a.shape != b.shape:
        return False
    k = np.unravel_index(np.argmax(np.abs(a)), a.shape)
    if abs(b[k]) == 0:
        return False
    phase = b[k] / abs(b[k]) * abs(a[k]) / a[k]
    return bool(np.max(np.abs(a * phase - b)) <= tolerance)


# Text format.

_PI_EXPR = re.compile(r"^([+-]?)(?:(\d+(?:\.\d*)?|\.\d+)\s*\*\s*)?pi(?:\s*/\s*(\d+(?:\.\d*)?|\.\d+))?$")


def parse_angle(text: str) -> float:
    """Float literal or ``[-][k*]pi[/d]``."""
    token = text.strip().lower()
    match = _PI_EXPR.match(token)
    if match:
        sign, factor, divisor = match.groups()
        value = math.pi * (float(factor) if factor else 1.0) / (float(divisor) if divisor else 1.0)
        return -value if sign == "-" else value
    return float(token)


def parse_circuit(text: str) -> Circuit:
    """Parse the line format::

        # comment
        qubits 2
        meta native_sign -1
        ry_cu 0 pi/2
        rz 1 0.3
        ms 0 1 pi/2 [phase]
        zz 0 1 -pi/4
        frame 0 0.1
    """
    qubit_count = None
    metadata: Dict[str, str] = {}
    pending: List[Tuple[int, Gate]] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *args = line.split()
        head = head.lower()
        try:
            if head == "qubits":
                if qubit_count is not None:
                    raise CircuitSyntaxError("qubit count given twice", number)
                if len(args) != 1:
                    raise CircuitSyntaxError("qubits takes one integer", number)
                qubit_count = int(args[0])
            elif head == "meta":
                if len(args) != 2:
                    raise CircuitSyntaxError("meta takes a key and a value", number)
                metadata[args[0]] = args[1]
            elif head in _ARITY:
                arity = _ARITY[head]
                allowed = (arity + 1, arity + 2) if head == "ms" else (arity + 1,)
                if len(args) not in allowed:
                    raise CircuitSyntaxError(f"{head} takes {arity} qubit(s) and an angle", number)
                qubits = tuple(int(a) for a in args[:arity])
                angle = parse_angle(args[arity])
                phase = parse_angle(args[arity + 1]) if len(args) > arity + 1 else 0.0
                pending.append((number, Gate(head, qubits, angle, phase)))
            else:
                raise CircuitSyntaxError(f"unknown statement {head!r}", number)
        except ValueError as exc:
            raise CircuitSyntaxError(f"bad number: {exc}", number) from exc
    if qubit_count is None:
        raise CircuitSyntaxError("missing 'qubits N' statement", 0)
    circuit = Circuit(qubit_count, [], metadata)
    try:
        circuit.validate()
    except CircuitError as exc:
        raise CircuitSyntaxError(str(exc), 0) from exc
    for number, gate in pending:
        try:
            circuit.append(gate)
        except CircuitError as exc:
            raise CircuitSyntaxError(str(exc), number) from exc
    return circuit


def format_circuit(circuit: Circuit) -> str:
    """Inverse of :func:`parse_circuit`; angles are written with ``repr`` so they round-trip."""
    lines = [f"qubits {circuit.qubit_count}"]
    lines += [f"meta {k} {v}" for k, v in sorted(circuit.metadata.items())]
    for gate in circuit.gates:
        fields = [gate.kind, *(str(q) for q in gate.qubits), repr(float(gate.angle))]
        if gate.kind == "ms" and gate.phase != 0.0:
            fields.append(repr(float(gate.phase)))
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"
