"""Exception hierarchy shared by all solver components."""


class EdgeADMMError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(EdgeADMMError, ValueError):
    pass


class RankDeficient(EdgeADMMError, ValueError):
    pass


class EmptySlice(EdgeADMMError, ValueError):
    """Raised when a constraint set is certified empty at construction."""


class SingularSystem(EdgeADMMError, ArithmeticError):
    pass


class Infeasible(EdgeADMMError):
    pass


class InfeasibleDemand(Infeasible):
    """The demand profile cannot be met by a node's local constraint set."""

    def __init__(self, message, node=None, step=None):
        super().__init__(message)
        self.node = node
        self.step = step


class NotConverged(EdgeADMMError, RuntimeError):
    """An iterative routine hit its iteration cap before reaching tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class NonFiniteIterate(EdgeADMMError, FloatingPointError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConfigError(EdgeADMMError, ValueError):
    """Scenario file could not be parsed or failed schema validation."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
