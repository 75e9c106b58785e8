"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the domain of an operation (non-finite, wrong shape)."""


class CapabilityError(TypeError):
    """The model lacks something the algorithm needs, e.g. a transition density."""


class DegenerateWeightsError(FloatingPointError):
    """All importance weights are zero; the particle system has failed."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class IntegrationError(FloatingPointError):
    """An ODE integrator produced a non-finite stage."""


class DivergenceError(FloatingPointError):
    """Ensemble blew up during assimilation."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class NumericalError(FloatingPointError):
    """Singular or indefinite matrix where a well-conditioned one is required."""
