"""Exception types shared across the toolkit."""


class MvgError(Exception):
    """Base class for all toolkit errors."""


class DomainError(MvgError, ValueError):
    """A parameter or input violates a documented precondition."""


class InvalidDepthError(DomainError):
    """Depth value is zero, negative, or non-finite where a valid one is required."""


class BehindCameraError(MvgError):
    """A point projects behind the camera (camera-frame z <= 0)."""


class DegenerateDistributionError(MvgError):
    """All samples are identical; density and quantiles collapse to a point."""

    def __init__(self, value: float):
        super().__init__(f"degenerate sample distribution at value {value!r}")
        self.value = float(value)


class EmptyCloudError(MvgError):
    """An operation that needs points received or produced an empty cloud."""


class ConfigError(MvgError, ValueError):
    """Invalid or inconsistent configuration."""


class SceneFormatError(MvgError):
    """A scene directory or file does not match the documented layout."""

    def __init__(self, path, detail: str):
        super().__init__(f"{path}: {detail}")
        self.path = str(path)
        self.detail = detail
