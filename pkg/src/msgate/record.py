"""Persistent calibration state of one chain."""
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import constants as c
from .errors import CalibrationError
from .models import AomModel
from .utils import jsonable

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ANCHOR_GATE_COUNTS = (2, 32)
GEOMETRIES = ("co", "counter")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def pair_key(pair: Tuple[int, int]) -> str:
    i, j = sorted(pair)
    return f"{i}-{j}"


@dataclass
class PairCalibration:
    qubit_i: int
    qubit_j: int
    manifold: str
    mode_lower: int
    mode_upper: int
    reference_mode: int
    detuning: float
    drive_frequency: float
    balanced: bool
    # Two-photon Rabi rates of the pair at kappa = 1 and the reference global amplitude.
    ia_rabi: Tuple[float, float]
    global_amplitude: float
    global_aom: AomModel
    duration: float = c.GATE_DURATION
    kappa: Optional[float] = None
    theta_cal: float = math.pi / 2
    # Gate count M of the M x MS(pi/M) calibration -> frame rotation total (rad).
    anchors: Dict[int, float] = field(default_factory=dict)

    @property
    def pair(self) -> Tuple[int, int]:
        return (self.qubit_i, self.qubit_j)

    @property
    def key(self) -> str:
        return pair_key(self.pair)

    def ms_rabi(self, kappa: Optional[float] = None) -> Tuple[float, float]:
        kappa = self.kappa if kappa is None else kappa
        if kappa is None:
            raise CalibrationError(f"pair {self.key}: kappa not calibrated")
        return (kappa * self.ia_rabi[0], kappa * self.ia_rabi[1])

    def frame_rotation_for(self, theta: float) -> float:
        """Frame rotation total for MS(theta), linear in theta through the anchors."""
        if len(self.anchors) < 2:
            raise CalibrationError(f"pair {self.key}: frame rotation needs two anchors, have {sorted(self.anchors)}")
        counts = sorted(self.anchors)
        thetas = np.array([math.pi / m for m in counts])
        values = np.array([self.anchors[m] for m in counts])
        slope, intercept = np.polyfit(thetas, values, 1)
        if not math.isfinite(slope):
            raise CalibrationError(f"pair {self.key}: frame rotation slope is not finite")
        return float(intercept + slope * theta)

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
            "ia_rabi_hz": [r / c.TWO_PI for r in self.ia_rabi],
            "global_amplitude": self.global_amplitude,
            "global_aom": self.global_aom.to_dict(),
            "duration_s": self.duration,
            "kappa": self.kappa,
            "theta_cal_rad": self.theta_cal,
            "anchors_rad": {str(m): v for m, v in sorted(self.anchors.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PairCalibration":
        return cls(
            qubit_i=int(data["qubit_i"]),
            qubit_j=int(data["qubit_j"]),
            manifold=data["manifold"],
            mode_lower=int(data["mode_lower"]),
            mode_upper=int(data["mode_upper"]),
            reference_mode=int(data["reference_mode"]),
            detuning=c.TWO_PI * float(data["detuning_hz"]),
            drive_frequency=c.TWO_PI * float(data["drive_frequency_hz"]),
            balanced=bool(data["balanced"]),
            ia_rabi=tuple(c.TWO_PI * float(r) for r in data["ia_rabi_hz"]),
            global_amplitude=float(data["global_amplitude"]),
            global_aom=AomModel.from_dict(data["global_aom"]),
            duration=float(data["duration_s"]),
            kappa=None if data.get("kappa") is None else float(data["kappa"]),
            theta_cal=float(data["theta_cal_rad"]),
            anchors={int(m): float(v) for m, v in data.get("anchors_rad", {}).items()},
        )


@dataclass
class CalibrationRecord:
    ion_count: int
    well_position: Optional[float] = None
    aom: Dict[int, Dict[str, AomModel]] = field(default_factory=dict)
    pi_amplitudes: Dict[int, Dict[str, float]] = field(default_factory=dict)
    # Manifold label -> sideband (mode) frequencies, rad/s.
    sidebands: Dict[str, List[float]] = field(default_factory=dict)
    zeta: Dict[int, float] = field(default_factory=dict)
    pairs: Dict[str, PairCalibration] = field(default_factory=dict)
    diagnostics: Dict[str, dict] = field(default_factory=dict)
    completed: List[str] = field(default_factory=list)
    created: str = field(default_factory=_now)
    updated: str = ""

    def pair(self, pair: Tuple[int, int]) -> PairCalibration:
        try:
            return self.pairs[pair_key(pair)]
        except KeyError:
            raise CalibrationError(f"no calibration for pair {pair_key(pair)}") from None

    def touch(self) -> None:
        self.updated = _now()

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "ion_count": self.ion_count,
            "well_position_m": self.well_position,
            "aom": {str(i): {g: m.to_dict() for g, m in sorted(models.items())} for i, models in sorted(self.aom.items())},
            "pi_amplitudes": {str(i): dict(sorted(a.items())) for i, a in sorted(self.pi_amplitudes.items())},
            "sidebands_hz": {m: [f / c.TWO_PI for f in freqs] for m, freqs in sorted(self.sidebands.items())},
            "zeta_br": {str(i): z for i, z in sorted(self.zeta.items())},
            "pairs": {k: p.to_dict() for k, p in sorted(self.pairs.items())},
            "diagnostics": self.diagnostics,
            "completed": list(self.completed),
            "created": self.created,
            "updated": self.updated,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationRecord":
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise CalibrationError(f"unsupported calibration record schema {version!r}")
        return cls(
            ion_count=int(data["ion_count"]),
            well_position=data.get("well_position_m"),
            aom={int(i): {g: AomModel.from_dict(m) for g, m in models.items()} for i, models in data.get("aom", {}).items()},
            pi_amplitudes={int(i): {g: float(v) for g, v in a.items()} for i, a in data.get("pi_amplitudes", {}).items()},
            sidebands={m: [c.TWO_PI * float(f) for f in freqs] for m, freqs in data.get("sidebands_hz", {}).items()},
            zeta={int(i): float(z) for i, z in data.get("zeta_br", {}).items()},
            pairs={k: PairCalibration.from_dict(p) for k, p in data.get("pairs", {}).items()},
            diagnostics=dict(data.get("diagnostics", {})),
            completed=list(data.get("completed", [])),
            created=data.get("created", ""),
            updated=data.get("updated", ""),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=jsonable)

    def save(self, path: Path) -> Path:
        path = Path(path)
        self.touch()
        path.write_text(self.dumps() + "\n", encoding="utf-8")
        logger.debug("wrote calibration record %s", path)
        return path

    @classmethod
    def load(cls, path: Path) -> "CalibrationRecord":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CalibrationError(f"cannot read calibration record {path}: {exc}") from exc
        return cls.from_dict(data)

