"""Exception hierarchy.

Everything raised on purpose by the package derives from ``LoopforgeError``;
the CLI maps those to exit code 1.
"""


class LoopforgeError(Exception):
    """Base class for domain errors."""


class PointOutsideChart(LoopforgeError):
    pass


class SingularMetric(LoopforgeError):
    pass


class ZeroVectorAngle(LoopforgeError):
    pass


class LeftChartDomain(LoopforgeError):
    """A trajectory left the chart at arclength ``t_exit``.

    ``partial`` optionally carries whatever was computed before the exit
    (a partial conjugacy scan, for instance).
    """

    def __init__(self, t_exit, message=None, partial=None):
        self.t_exit = float(t_exit)
        self.partial = partial
        super().__init__(message or f"trajectory left the chart domain at t={t_exit:.6g}")


class StepUnderflow(LoopforgeError):
    pass


class NearSingular(LoopforgeError):
    def __init__(self, condition, message=None):
        self.condition = float(condition)
        super().__init__(message or f"exponential differential near singular (cond={condition:.3e})")


class SingularDifferentialOnPath(LoopforgeError):
    def __init__(self, s, condition):
        self.s = float(s)
        self.condition = float(condition)
        super().__init__(f"singular exp differential on lift path at s={s:.6g} (cond={condition:.3e})")


class NewtonDivergence(LoopforgeError):
    pass


class NoLoopsFound(LoopforgeError):
    pass


class DeltaUnderflow(LoopforgeError):
    pass


class DeltaTooLarge(LoopforgeError):
    pass


class SelfConjugateObstruction(LoopforgeError):
    pass


class InequalityViolation(LoopforgeError):
    pass


class AlreadyClosed(LoopforgeError):
    """A basepoint shift was requested on a loop that is already a closed geodesic."""


class UnknownManifold(LoopforgeError):
    pass


class BadParams(LoopforgeError):
    pass


class NotASurfaceOfRevolution(LoopforgeError):
    pass


class ExprSyntaxError(LoopforgeError):
    def __init__(self, message, position, expected=None):
        self.position = position
        self.expected = expected
        detail = f" (expected {expected})" if expected else ""
        super().__init__(f"{message} at position {position}{detail}")


class UnknownIdentifier(LoopforgeError):
    def __init__(self, name, position):
        self.name = name
        self.position = position
        super().__init__(f"unknown identifier {name!r} at position {position}")


class DomainError(LoopforgeError):
    pass


class SpecFileError(LoopforgeError):
    pass
