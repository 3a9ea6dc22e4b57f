"""Exception types shared across the package."""


class FedV2GError(Exception):
    """Base class for all package-specific errors."""


# --- price data ---

class MalformedRow(FedV2GError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class GapDetected(FedV2GError):
    pass


class DuplicateTimestamp(FedV2GError):
    pass


class NonFinitePrice(FedV2GError):
    pass


class InvalidParam(FedV2GError):
    pass


class IndexOutOfRange(FedV2GError):
    pass


# --- environment ---

class ScheduleInfeasible(FedV2GError):
    pass


class DomainError(FedV2GError):
    pass


class EpisodeFinished(FedV2GError):
    pass


# --- networks / serialization ---

class ShapeMismatch(FedV2GError):
    pass


class CorruptPayload(FedV2GError):
    pass


class LayoutMismatch(FedV2GError):
    pass


# --- agent / federation ---

class InsufficientData(FedV2GError):
    pass


class EmptyInput(FedV2GError):
    pass


class VersionMismatch(FedV2GError):
    pass


class NanParameters(FedV2GError):
    pass


# --- evaluation ---

class DegenerateVariance(FedV2GError):
    pass


# --- config ---

class ConfigError(FedV2GError):
    pass
