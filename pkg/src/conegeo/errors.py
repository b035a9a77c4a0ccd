"""Exception hierarchy shared by all modules."""


class ConeGeoError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(ConeGeoError, ValueError):
    """Invalid geometry, grid or run configuration."""


class NonPositive(ConeGeoError):
    """A metric that must be positive is not (bad delta, bad potential)."""


class NonPositiveMetric(NonPositive):
    pass


class DegenerateFit(ConeGeoError):
    pass


class BadResolution(ConfigError):
    pass


class NonEllipticNode(ConeGeoError):
    def __init__(self, node, message=None):
        self.node = node
        super().__init__(message or f"metric not positive definite at node {node}")


class SolverStall(ConeGeoError):
    pass


class NoAdmissibleM(ConeGeoError):
    pass


class NonPositiveDeterminant(ConeGeoError):
    def __init__(self, node, message=None):
        self.node = node
        super().__init__(message or f"determinant not positive at node {node}")


class LineSearchFail(ConeGeoError):
    pass


class ContinuationAbort(ConeGeoError):
    """Continuation stopped early; carries the last converged parameter."""

    def __init__(self, last_good, message, partial=None):
        self.last_good = last_good
        self.partial = partial
        super().__init__(f"{message} (last good parameter {last_good:g})")


class MissingArtifacts(ConeGeoError, FileNotFoundError):
    pass
