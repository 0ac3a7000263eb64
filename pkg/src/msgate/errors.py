from typing import Optional, Sequence


class MsGateError(Exception):
    """Base class for every error raised by msgate."""

    stage: Optional[str] = None


class ConfigError(MsGateError):
    pass


class ChainError(MsGateError):
    pass


class ChainConvergenceError(ChainError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class ChainInstabilityError(ChainError):
    pass


class ModeSelectionError(ChainError):
    pass


class LightShiftError(MsGateError):
    pass


class SumConvergenceError(LightShiftError):
    pass


class ResonanceError(LightShiftError):
    def __init__(self, message: str, l: int):
        super().__init__(f"{message} (l={l})")
        self.l = l


class NoRootError(LightShiftError):
    def __init__(self, message: str, endpoint_shifts: Sequence[float]):
        shifts = ", ".join(f"{s:.4g}" for s in endpoint_shifts)
        super().__init__(f"{message} (endpoint shifts: {shifts} rad/s)")
        self.endpoint_shifts = tuple(endpoint_shifts)


class PulseError(MsGateError):
    pass


class OverSaturationError(PulseError):
    pass


class UnreachableRateError(PulseError):
    pass


class ThetaRangeError(PulseError):
    pass


class DynamicsError(MsGateError):
    pass


class QuadratureError(DynamicsError):
    pass


class TruncationError(DynamicsError):
    pass


class FitError(MsGateError):
    pass


class InsufficientDataError(FitError):
    pass


class NoCrossingError(FitError):
    pass


class CalibrationError(MsGateError):
    pass


class StageError(CalibrationError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        return f"[{self.stage}] {self.args[0]}"


class BackendError(MsGateError):
    pass


class ProtocolError(BackendError):
    pass


class CircuitError(MsGateError):
    pass


class CircuitSyntaxError(CircuitError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class FrameError(CircuitError):
    pass
