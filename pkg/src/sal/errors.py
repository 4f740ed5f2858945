"""Exception hierarchy shared across the package."""


class SalError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SalError):
    """Invalid or malformed experiment configuration."""


class DatasetError(SalError):
    """Dataset layout, image, or depth files could not be read."""


class PerturbationError(SalError):
    """Invalid perturbation parameters or an effect could not be applied."""


class SlamRunError(SalError):
    """SLAM wrapper staging or execution failed."""


class TrajectoryFormatError(SalError):
    """A trajectory file could not be parsed."""


class MetricsError(SalError):
    """Trajectory metrics could not be computed."""


class AssociationError(MetricsError):
    """No timestamp pairs could be associated between two trajectories."""


class DegenerateGeometryError(MetricsError):
    """Point sets are collinear or coincident; alignment is not well posed."""


class BoundarySearchError(SalError):
    """Boundary search could not be set up or an evaluator failed."""
