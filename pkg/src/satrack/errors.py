"""Exception hierarchy shared by all satrack modules."""


class SatrackError(Exception):
    """Base class for every error raised by satrack."""


class ConfigError(SatrackError, ValueError):
    """Invalid configuration value, missing field or unknown key."""


class DimensionError(SatrackError, ValueError):
    """An argument does not have the dimension the model expects."""

    def __init__(self, argument, expected, got):
        self.argument = argument
        self.expected = expected
        self.got = got
        super().__init__(f"{argument}: expected dimension {expected}, got {got}")


class NumericalError(SatrackError, ArithmeticError):
    """A numerical procedure failed or produced an unusable answer."""


class DivergenceError(NumericalError):
    """The iterate became non-finite or left the divergence guard."""

    def __init__(self, step, replica=None):
        self.step = int(step)
        self.replica = replica
        where = f"divergence at step {self.step}"
        if replica is not None:
            where += f" (replica {replica})"
        super().__init__(where)


class TargetUnboundedError(NumericalError):
    def __init__(self, radius):
        self.radius = radius
        super().__init__(
            f"target unbounded: C_gamma assumption violated (path reached radius {radius:g})"
        )


class StabilityAssumptionError(NumericalError):
    def __init__(self, beta):
        self.beta = beta
        super().__init__(
            f"exponential stability assumption violated on this path (fitted beta={beta:.3g})"
        )


class HeavyTailError(NumericalError):
    def __init__(self, family):
        self.family = family
        super().__init__(f"noise family too heavy-tailed: {family}")


class PathCoverageError(SatrackError, ValueError):
    """Requested times are not covered by a base path."""
