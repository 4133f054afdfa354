"""Exception hierarchy shared by the simulator apps."""


class SensingError(Exception):
    """Base class for every error raised by the simulator."""


class GeometryError(SensingError, ValueError):
    """Invalid array layout, target position or propagated state."""


class DegenerateModelError(SensingError):
    """The noise-free model X has zero energy, so the likelihood is undefined."""


class NonFiniteObjectiveError(SensingError):
    """The likelihood or its gradient evaluated to NaN or infinity."""


class EstimationFailure(SensingError):
    """A tracking step failed; carries the CPI index where it happened."""

    def __init__(self, cpi_index, message):
        super().__init__(f"CPI {cpi_index}: {message}")
        self.cpi_index = cpi_index


class ConfigError(SensingError, ValueError):
    """Scenario configuration violates the schema or a physical invariant."""
