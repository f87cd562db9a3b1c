"""Exception types shared across the package."""


class ParameterDomainError(ValueError):
    """A model parameter lies outside its admissible domain."""


class DegenerateWeightsError(RuntimeError):
    """Every weight vanished; the model cannot explain the data."""


class IngestionError(ValueError):
    """A price file could not be turned into a return series."""
