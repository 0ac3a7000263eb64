import csv
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, InsufficientDataError
from .models import ShotData

logger = logging.getLogger(__name__)


def humanize_hz(value: float) -> str:
    """
    Format a frequency in Hz with an SI prefix (e.g., 418 Hz, 2.346 MHz).
    """
    if value == 0:
        return "0 Hz"

    prefixes = ['', 'k', 'M', 'G', 'T']
    i = 0
    magnitude = abs(value)
    while magnitude >= 1000 and i < len(prefixes) - 1:
        magnitude /= 1000.0
        i += 1

    sign = "-" if value < 0 else ""
    return f"{sign}{magnitude:.4g} {prefixes[i]}Hz"


def jsonable(value):
    """``default`` hook for json.dump: numpy scalars/arrays and complex numbers."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def run_directory(output_dir: Path, command: str, now: datetime = None) -> Path:
    """Create ``<output_dir>/<YYYYmmdd-HHMMSS>-<command>/``."""
    now = now or datetime.now()
    path = Path(output_dir) / f"{now:%Y%m%d-%H%M%S}-{command}"
    suffix = 1
    while path.exists():
        suffix += 1
        path = Path(output_dir) / f"{now:%Y%m%d-%H%M%S}-{command}-{suffix}"
    path.mkdir(parents=True)
    logger.debug("run directory %s", path)
    return path


def write_json(path: Path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=jsonable) + "\n", encoding="utf-8")
    return path


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([jsonable(v) if isinstance(v, np.generic) else v for v in row])
    return path


def write_dict_rows(path: Path, rows: Sequence[Mapping]) -> Path:
    if not rows:
        return write_csv(path, [], [])
    header = list(rows[0].keys())
    return write_csv(path, header, ([row[k] for k in header] for row in rows))


def read_shots(path: Path, label: str = "p1") -> ShotData:
    """Read a scan CSV whose columns are ``<x>, successes, trials[, ...]``."""
    try:
        with Path(path).open(newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            header = next(reader)
            rows = [r for r in reader if r]
    except (OSError, StopIteration) as exc:
        raise ConfigError(f"cannot read shot data from {path}: {exc}") from exc
    if len(header) < 3 or header[1:3] != ["successes", "trials"]:
        raise ConfigError(f"{path}: expected columns <x>, successes, trials; got {header}")
    try:
        x, s, n = (np.array([float(r[k]) for r in rows]) for k in range(3))
    except (ValueError, IndexError) as exc:
        raise InsufficientDataError(f"{path}: malformed row: {exc}") from exc
    return ShotData(x, s, n, label)
