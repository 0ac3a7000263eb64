"""TOML configuration: trap, comb, virtual-experiment truth, pipeline grids and run options.

Frequencies in the file are ordinary Hz (``*_hz`` keys) and become rad/s on load; angles
in ``*_deg`` keys become radians. Unknown sections or keys are rejected.
"""
import logging
import math
import os
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from . import constants as c
from .comb import operating_point
from .errors import ConfigError
from .models import AomModel, CombSpec, TrapConfig
from .pipeline import PipelineSettings
from .virtual import Truth

logger = logging.getLogger(__name__)

SECTIONS = ("trap", "comb", "truth", "pipeline", "run")
ENV_OUTPUT_DIR = "MSGATE_OUTPUT_DIR"
ENV_SEED = "MSGATE_SEED"


class _Section:
    """Typed reads from one table; remembers every key it resolved."""

    def __init__(self, name: str, data: Any):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"[{name}] must be a table")
        self.name = name
        self.data = data
        self.resolved: Dict[str, Any] = {}

    def _fail(self, key: str, expected: str) -> ConfigError:
        return ConfigError(f"{self.name}.{key}: expected {expected}, got {self.data[key]!r}")

    def _scalar(self, key: str, value, kind: type):
        if kind is bool:
            if not isinstance(value, bool):
                raise self._fail(key, "a boolean")
            return value
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise self._fail(key, "an integer")
            return value
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise self._fail(key, "a number")
            return float(value)
        if not isinstance(value, str):
            raise self._fail(key, "a string")
        return value

    def get(self, key: str, kind: type, default):
        value = self.data.get(key, default)
        if key in self.data:
            value = self._scalar(key, value, kind)
        self.resolved[key] = value
        return value

    def get_list(self, key: str, kind: type, default, length: Optional[int] = None) -> list:
        if key not in self.data:
            self.resolved[key] = list(default)
            return list(default)
        value = self.data[key]
        if not isinstance(value, list):
            raise self._fail(key, "a list")
        items = [self._scalar(key, v, kind) for v in value]
        if length is not None and len(items) != length:
            raise ConfigError(f"{self.name}.{key}: expected {length} values, got {len(items)}")
        self.resolved[key] = items
        return items

    def get_raw(self, key: str, default):
        value = self.data.get(key, default)
        self.resolved[key] = value
        return value

    def finish(self) -> None:
        unknown = sorted(set(self.data) - set(self.resolved))
        if unknown:
            raise ConfigError(f"unknown key {self.name}.{unknown[0]}")


@dataclass
class CombSettings:
    spec: CombSpec = field(default_factory=CombSpec)
    rabi_target: float = c.TWO_PI * c.COMB_RABI_TARGET_HZ
    global_to_ia: float = c.COMB_GLOBAL_TO_IA
    zeta: float = 1.0

    def operating_point(self) -> CombSpec:
        return operating_point(self.spec, self.rabi_target, self.global_to_ia, self.zeta)


@dataclass
class RunSettings:
    output_dir: Path = Path("runs")
    # None asks the virtual experiment for expectation counts.
    seed: Optional[int] = 0
    log_level: str = "INFO"


@dataclass
class ArtifactConfig:
    trap: TrapConfig = field(default_factory=lambda: TrapConfig(
        ion_count=2, axial_freq=c.TWO_PI * c.DEFAULT_AXIAL_HZ,
        radial_com_freqs=tuple(c.TWO_PI * f for f in c.DEFAULT_RADIAL_HZ),
    ))
    comb: CombSettings = field(default_factory=CombSettings)
    truth: Truth = field(default_factory=Truth)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    run: RunSettings = field(default_factory=RunSettings)
    # Resolved values in file units, section -> key -> value.
    source: Dict[str, Dict[str, Any]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        data = {name: dict(values) for name, values in self.source.items()}
        run = data.setdefault("run", {})
        run["output_dir"] = str(self.run.output_dir)
        run["seed"] = self.run.seed
        return data


def _hz(values) -> tuple:
    return tuple(c.TWO_PI * v for v in values)


def _trap(s: _Section) -> TrapConfig:
    trap = TrapConfig(
        ion_count=s.get("ion_count", int, 2),
        axial_freq=c.TWO_PI * s.get("axial_freq_hz", float, c.DEFAULT_AXIAL_HZ),
        radial_com_freqs=_hz(s.get_list("radial_com_freqs_hz", float, c.DEFAULT_RADIAL_HZ, 2)),
        ion_mass=s.get("ion_mass_amu", float, c.YB171_MASS_AMU) * c.AMU,
        raman_delta_k=2.0 * c.TWO_PI / s.get("raman_wavelength_m", float, c.RAMAN_WAVELENGTH),
        axis_projection=tuple(s.get_list("axis_projection", float, c.DEFAULT_AXIS_PROJECTION, 2)),
    )
    trap.validate()
    return trap


def _comb(s: _Section) -> CombSettings:
    delta_aom = s.get("delta_aom_hz", float, None)
    spec = CombSpec(
        f_rep=s.get("f_rep_hz", float, c.COMB_F_REP_HZ),
        tau_pulse=s.get("tau_pulse_s", float, c.COMB_TAU_PULSE),
        delta_single_photon=c.TWO_PI * s.get("delta_hz", float, c.COMB_DELTA_HZ),
        omega_pp=c.TWO_PI * s.get("omega_pp_hz", float, c.COMB_OMEGA_PP_HZ),
        omega_qubit=c.TWO_PI * s.get("qubit_hz", float, c.YB171_QUBIT_HZ),
        delta_aom=None if delta_aom is None else c.TWO_PI * delta_aom,
        delta_c=c.TWO_PI * s.get("delta_c_hz", float, c.COMB_DELTA_C_HZ),
        harmonic_offset=s.get("harmonic_offset", int, c.COMB_HARMONIC_OFFSET),
        tooth_truncation=s.get("tooth_truncation", int, c.COMB_TOOTH_TRUNCATION),
    )
    suppression = s.get("global_intra_suppression", float, c.COMB_GLOBAL_INTRA_SUPPRESSION)
    if not 0.0 < suppression <= 1.0:
        raise ConfigError(f"comb.global_intra_suppression must lie in (0, 1], got {suppression}")
    spec.pair_scalings[("g", "g")] = suppression
    return CombSettings(
        spec=spec,
        rabi_target=c.TWO_PI * s.get("rabi_target_hz", float, c.COMB_RABI_TARGET_HZ),
        global_to_ia=s.get("global_to_ia", float, c.COMB_GLOBAL_TO_IA),
        zeta=s.get("zeta", float, 1.0),
    )


def _truth(s: _Section) -> Truth:
    d = Truth()
    spam = s.get_list("spam", float, d.spam, 2)
    if not all(0.0 <= e < 0.5 for e in spam):
        raise ConfigError(f"truth.spam errors must lie in [0, 0.5), got {spam}")
    return Truth(
        mode_offsets=_hz(s.get_list("mode_offsets_hz", float, ())),
        aom={
            "co": AomModel(a_sat=s.get("co_a_sat", float, d.aom["co"].a_sat),
                           Xi=c.TWO_PI * s.get("co_xi_hz", float, d.aom["co"].Xi / c.TWO_PI)),
            "counter": AomModel(a_sat=s.get("counter_a_sat", float, d.aom["counter"].a_sat),
                                Xi=c.TWO_PI * s.get("counter_xi_hz", float, d.aom["counter"].Xi / c.TWO_PI)),
        },
        aom_decay={
            "co": s.get("co_decay", float, d.aom_decay["co"]),
            "counter": s.get("counter_decay", float, d.aom_decay["counter"]),
        },
        well_offset=s.get("well_offset_m", float, d.well_offset),
        well_offset_drift=s.get("well_offset_drift_m", float, d.well_offset_drift),
        beam_offsets=tuple(s.get_list("beam_offsets_m", float, ())),
        beam_waist=s.get("beam_waist_m", float, d.beam_waist),
        zeta_star=tuple(s.get_list("zeta_star", float, ())),
        zeta_from_comb=s.get("zeta_from_comb", bool, d.zeta_from_comb),
        zeta_slope=math.radians(s.get("zeta_slope_deg", float, math.degrees(d.zeta_slope))),
        residual_shift=tuple(math.radians(v) for v in s.get_list("residual_shift_deg", float, ())),
        echo_noise=s.get("echo_noise", float, d.echo_noise),
        ramsey_m_sigma=s.get("ramsey_m_sigma", float, d.ramsey_m_sigma),
        ramsey_contrast=s.get("ramsey_contrast", float, d.ramsey_contrast),
        rabi_scale=tuple(s.get_list("rabi_scale", float, ())),
        global_reference_amplitude=s.get("global_reference_amplitude", float, d.global_reference_amplitude),
        n_bar=s.get("n_bar", float, d.n_bar),
        spam=tuple(spam),
        loop_amplitude=s.get("loop_amplitude", float, d.loop_amplitude),
        loop_m_sigma_odd=s.get("loop_m_sigma_odd", float, d.loop_m_sigma_odd),
        loop_m_sigma_even=s.get("loop_m_sigma_even", float, d.loop_m_sigma_even),
    )


def _pipeline(s: _Section) -> PipelineSettings:
    d = PipelineSettings()
    pairs = s.get_raw("pairs", [])
    if not isinstance(pairs, list):
        raise ConfigError(f"pipeline.pairs: expected a list of pairs, got {pairs!r}")
    for pair in pairs:
        if not isinstance(pair, list) or len(pair) != 2 or not all(isinstance(q, int) and not isinstance(q, bool) for q in pair):
            raise ConfigError(f"pipeline.pairs: each pair must be two integers, got {pair!r}")
    settings = PipelineSettings(
        shots=s.get("shots", int, d.shots),
        fidelity_shots=s.get("fidelity_shots", int, d.fidelity_shots),
        gate_duration=s.get("gate_duration_s", float, d.gate_duration),
        pairs=tuple(tuple(p) for p in pairs),
        well_span=s.get("well_span_m", float, d.well_span),
        well_points=s.get("well_points", int, d.well_points),
        alignment_area=math.pi * s.get("alignment_area_pi", float, d.alignment_area / math.pi),
        pi_times={
            "co": s.get("co_pi_time_s", float, d.pi_times["co"]),
            "counter": s.get("counter_pi_time_s", float, d.pi_times["counter"]),
        },
        scan_durations={
            "co": s.get("co_scan_duration_s", float, d.scan_durations["co"]),
            "counter": s.get("counter_scan_duration_s", float, d.scan_durations["counter"]),
        },
        amplitude_max=s.get("amplitude_max", float, d.amplitude_max),
        amplitude_points=s.get("amplitude_points", int, d.amplitude_points),
        sideband_margin=c.TWO_PI * s.get("sideband_margin_hz", float, d.sideband_margin / c.TWO_PI),
        sideband_step=c.TWO_PI * s.get("sideband_step_hz", float, d.sideband_step / c.TWO_PI),
        sideband_duration=s.get("sideband_duration_s", float, d.sideband_duration),
        fine_span=c.TWO_PI * s.get("fine_span_hz", float, d.fine_span / c.TWO_PI),
        fine_points=s.get("fine_points", int, d.fine_points),
        echo_gates=s.get("echo_gates", int, d.echo_gates),
        zeta_range=(s.get("zeta_min", float, d.zeta_range[0]), s.get("zeta_max", float, d.zeta_range[1])),
        zeta_points=s.get("zeta_points", int, d.zeta_points),
        ia_rabi=c.TWO_PI * s.get("ia_rabi_hz", float, d.ia_rabi / c.TWO_PI),
        global_amplitude=s.get("global_amplitude", float, d.global_amplitude),
        coarse_kappa_span=s.get("coarse_kappa_span", float, d.coarse_kappa_span),
        coarse_kappa_points=s.get("coarse_kappa_points", int, d.coarse_kappa_points),
        fine_kappa_span=s.get("fine_kappa_span", float, d.fine_kappa_span),
        fine_kappa_points=s.get("fine_kappa_points", int, d.fine_kappa_points),
        anchors=tuple(s.get_list("anchors", int, d.anchors)),
        frame_span=math.radians(s.get("frame_span_deg", float, math.degrees(d.frame_span))),
        frame_points=s.get("frame_points", int, d.frame_points),
        frame_fit=s.get("frame_fit", str, d.frame_fit),
        parity_points=s.get("parity_points", int, d.parity_points),
        detuning_span=c.TWO_PI * s.get("detuning_span_hz", float, d.detuning_span / c.TWO_PI),
        detuning_points=s.get("detuning_points", int, d.detuning_points),
        ramsey_gates=s.get("ramsey_gates", int, d.ramsey_gates),
        diagnostics=tuple(s.get_list("diagnostics", str, d.diagnostics)),
    )
    settings.validate()
    return settings


def _run(s: _Section) -> RunSettings:
    seed = s.get("seed", int, 0)
    noiseless = s.get("noiseless", bool, False)
    level = s.get("log_level", str, "INFO").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        raise ConfigError(f"run.log_level: unknown level {level!r}")
    return RunSettings(
        output_dir=Path(s.get("output_dir", str, "runs")),
        seed=None if noiseless else seed,
        log_level=level,
    )


def _apply_environment(run: RunSettings, environ) -> None:
    if environ.get(ENV_OUTPUT_DIR):
        run.output_dir = Path(environ[ENV_OUTPUT_DIR])
    if environ.get(ENV_SEED):
        try:
            run.seed = int(environ[ENV_SEED])
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer, got {environ[ENV_SEED]!r}") from None


def config_from_dict(data: Dict[str, Any], environ=None) -> ArtifactConfig:
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]")
    sections = {name: _Section(name, data.get(name)) for name in SECTIONS}
    config = ArtifactConfig(
        trap=_trap(sections["trap"]),
        comb=_comb(sections["comb"]),
        truth=_truth(sections["truth"]),
        pipeline=_pipeline(sections["pipeline"]),
        run=_run(sections["run"]),
    )
    for section in sections.values():
        section.finish()
    config.source = {name: section.resolved for name, section in sections.items()}
    _apply_environment(config.run, os.environ if environ is None else environ)
    return config


def load_config(path: Optional[Path] = None, environ=None) -> ArtifactConfig:
    """Read ``path`` (or nothing, for the defaults) into an :class:`ArtifactConfig`."""
    if path is None:
        return config_from_dict({}, environ)
    try:
        with Path(path).open("rb") as handle:
            data = tomllib.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    logger.debug("loaded config %s", path)
    return config_from_dict(data, environ)
