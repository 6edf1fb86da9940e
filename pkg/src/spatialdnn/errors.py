"""Exception hierarchy shared by all submodules."""


class SpatialDNNError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(SpatialDNNError, ValueError):
    pass


class NotPositiveDefiniteError(SpatialDNNError, ArithmeticError):
    pass


class DivergenceError(SpatialDNNError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class DomainError(SpatialDNNError, ValueError):
    """An intermediate value left its declared layer domain."""

    def __init__(self, layer, message=None):
        self.layer = layer
        super().__init__(message or f"value outside declared domain at layer {layer}")


class PreconditionError(SpatialDNNError, ValueError):
    pass


class SchemaError(SpatialDNNError, ValueError):
    pass


class UnsupportedReplicateCountError(SpatialDNNError, ValueError):
    pass


class DegenerateCovariateError(InvalidInputError):
    """A covariate is constant, so min-max scaling is undefined."""
