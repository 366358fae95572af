"""Exception types shared across the package."""


class CapabilityError(RuntimeError):
    """An algorithm requires a model capability that is not available.

    Typical case: a transition log-density is needed (auxiliary filter,
    backward smoother) but the model only supports forward simulation.
    """


class DegenerateWeightsError(RuntimeError):
    """All particle weights collapsed to zero; the ensemble carries no mass."""


class DegenerateModelError(RuntimeError):
    """The model assigns zero probability to an observed sequence."""


class NumericalError(RuntimeError):
    """A linear-algebra step failed (non positive definite matrix etc.)."""


class ConfigError(ValueError):
    """An experiment configuration is malformed; the message names the field."""
