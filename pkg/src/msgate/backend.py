"""Experiment jobs, results and the length-prefixed JSON transport.

A frame is a 4-byte big-endian payload length followed by UTF-8 JSON. Clients send
``{"job": {...}}`` and receive either ``{"result": {...}}`` or ``{"error": "..."}``.
"""
import json
import logging
import struct
import subprocess
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Dict, Iterable, List, Optional, Protocol, Sequence

import numpy as np

from .errors import BackendError, MsGateError, ProtocolError
from .models import ShotData
from .utils import jsonable

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
HEADER = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024


@dataclass
class ExperimentJob:
    kind: str
    params: Dict[str, Any]
    sweep_parameter: str
    sweep_values: List[float]
    shots: int
    # Read-out qubits; outcome keys are bitstrings in this order.
    measure: List[int] = field(default_factory=lambda: [0])
    job_id: int = 0
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.shots < 1:
            raise ProtocolError(f"job {self.kind}: shots must be >= 1")
        if not self.measure:
            raise ProtocolError(f"job {self.kind}: no qubits measured")
        self.sweep_values = [float(v) for v in self.sweep_values]

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "job_id": self.job_id,
            "kind": self.kind,
            "params": self.params,
            "sweep": {"parameter": self.sweep_parameter, "values": list(self.sweep_values)},
            "shots": self.shots,
            "measure": list(self.measure),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentJob":
        _check_version(data)
        try:
            return cls(
                kind=str(data["kind"]),
                params=dict(data.get("params", {})),
                sweep_parameter=str(data["sweep"]["parameter"]),
                sweep_values=list(data["sweep"]["values"]),
                shots=int(data["shots"]),
                measure=[int(q) for q in data.get("measure", [0])],
                job_id=int(data.get("job_id", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed job: {exc}") from exc


@dataclass
class ExperimentResult:
    job_id: int
    x: List[float]
    counts: List[Dict[str, float]]
    shots: int
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if len(self.x) != len(self.counts):
            raise ProtocolError(f"result {self.job_id}: {len(self.x)} sweep points but {len(self.counts)} count sets")
        for point in self.counts:
            total = sum(point.values())
            if abs(total - self.shots) > 1e-6 * self.shots:
                raise ProtocolError(f"result {self.job_id}: counts sum to {total}, expected {self.shots}")

    def select(self, outcomes: Iterable[str], label: str) -> ShotData:
        """Shot data counting any of ``outcomes`` as a success."""
        wanted = set(outcomes)
        successes = [sum(v for k, v in point.items() if k in wanted) for point in self.counts]
        return ShotData(np.asarray(self.x), np.asarray(successes), np.full(len(self.x), float(self.shots)), label)

    def marginal(self, position: int, label: str = "p1") -> ShotData:
        """Bright fraction of the qubit at ``position`` in the measured list."""
        keys = {k for point in self.counts for k in point}
        return self.select([k for k in keys if k[position] == "1"], label)

    def populations(self) -> Dict[str, np.ndarray]:
        keys = sorted({k for point in self.counts for k in point})
        return {k: np.array([point.get(k, 0.0) for point in self.counts]) / self.shots for k in keys}

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "job_id": self.job_id,
            "x": list(self.x),
            "counts": [dict(sorted(p.items())) for p in self.counts],
            "shots": self.shots,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentResult":
        _check_version(data)
        try:
            return cls(
                job_id=int(data["job_id"]),
                x=[float(v) for v in data["x"]],
                counts=[{str(k): float(v) for k, v in p.items()} for p in data["counts"]],
                shots=int(data["shots"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed result: {exc}") from exc


def _check_version(data: dict) -> None:
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ProtocolError(f"unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")


class Backend(Protocol):
    def run(self, job: ExperimentJob) -> ExperimentResult:
        ...


def write_frame(stream: BinaryIO, payload: dict) -> None:
    body = json.dumps(payload, sort_keys=True, default=jsonable).encode("utf-8")
    stream.write(HEADER.pack(len(body)) + body)
    stream.flush()


def _read_exact(stream: BinaryIO, size: int) -> bytes:
    chunks = []
    remaining = size
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> Optional[dict]:
    """Next frame, or None on a clean end of stream."""
    header = _read_exact(stream, HEADER.size)
    if not header:
        return None
    if len(header) < HEADER.size:
        raise ProtocolError("truncated frame header")
    (size,) = HEADER.unpack(header)
    if size > MAX_FRAME:
        raise ProtocolError(f"frame of {size} bytes exceeds limit")
    body = _read_exact(stream, size)
    if len(body) < size:
        raise ProtocolError(f"truncated frame: {len(body)} of {size} bytes")
    try:
        payload = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"frame is not JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ProtocolError("frame payload must be a JSON object")
    return payload


class StreamBackend:
    """Client side of the job protocol over a pair of byte streams."""

    def __init__(self, reader: BinaryIO, writer: BinaryIO, process: Optional[subprocess.Popen] = None):
        self.reader = reader
        self.writer = writer
        self.process = process
        self._next_id = 0

    @classmethod
    def spawn(cls, command: Sequence[str]) -> "StreamBackend":
        try:
            process = subprocess.Popen(list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except OSError as exc:
            raise BackendError(f"cannot start backend {' '.join(command)}: {exc}") from exc
        return cls(process.stdout, process.stdin, process)

    def run(self, job: ExperimentJob) -> ExperimentResult:
        self._next_id += 1
        job.job_id = self._next_id
        try:
            write_frame(self.writer, {"job": job.to_dict()})
            reply = read_frame(self.reader)
        except (BrokenPipeError, OSError) as exc:
            raise BackendError(f"backend connection lost: {exc}") from exc
        if reply is None:
            raise BackendError("backend closed the stream")
        if "error" in reply:
            raise BackendError(f"backend rejected job {job.kind}: {reply['error']}")
        if "result" not in reply:
            raise ProtocolError("reply carries neither result nor error")
        result = ExperimentResult.from_dict(reply["result"])
        if result.job_id != job.job_id:
            raise ProtocolError(f"reply for job {result.job_id}, expected {job.job_id}")
        return result

    def close(self) -> None:
        if self.process is None:
            return
        try:
            self.writer.close()
        except OSError:
            pass
        try:
            self.process.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self.process.terminate()
            self.process.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(backend: Backend, reader: BinaryIO, writer: BinaryIO) -> int:
    """Answer jobs from ``reader`` until end of stream; returns the number served."""
    served = 0
    while True:
        try:
            frame = read_frame(reader)
        except ProtocolError as exc:
            write_frame(writer, {"error": str(exc)})
            break
        if frame is None:
            break
        try:
            job = ExperimentJob.from_dict(frame["job"] if "job" in frame else {})
            result = backend.run(job)
            write_frame(writer, {"result": result.to_dict()})
        except MsGateError as exc:
            logger.warning("job failed: %s", exc)
            write_frame(writer, {"error": str(exc)})
        served += 1
    logger.info("served %d jobs", served)
    return served
