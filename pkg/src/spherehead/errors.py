"""Exception types shared across the library."""


class SphereheadError(Exception):
    """Base class for all library errors."""


class ShapeError(SphereheadError, ValueError):
    """Tensor shapes or dimensions do not fit the requested operation."""


class DomainError(SphereheadError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class PoleSingularityError(DomainError):
    """Input at or too close to the projection pole, where the inverse map blows up."""


class DegenerateInputError(DomainError):
    """Zero-norm feature or weight where a direction is required."""


class ConfigError(SphereheadError, ValueError):
    """Invalid or inconsistent configuration values."""


class LabelError(SphereheadError, IndexError):
    """Class label outside the valid range."""


class ParseError(SphereheadError, ValueError):
    """Malformed delimited-text input; message carries line/column coordinates."""


class FormatError(SphereheadError, ValueError):
    """Binary file does not match the expected record layout."""


class StateError(SphereheadError, RuntimeError):
    """Mutable state (queue, optimizer, results store) is inconsistent with the inputs."""


class LayoutError(SphereheadError, ValueError):
    """Report layout cannot be produced from the available runs."""


class TrainingDiverged(SphereheadError, RuntimeError):
    """Training aborted on a non-finite loss.

    Carries enough context to diagnose the blow-up.
    """

    def __init__(self, epoch: int, batch: int, loss_trajectory: list[float]):
        self.epoch = epoch
        self.batch = batch
        self.loss_trajectory = list(loss_trajectory)
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}; "
            f"recent losses: {loss_trajectory[-5:]}"
        )
