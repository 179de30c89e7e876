class HyloadError(Exception):
    """Base class for every error raised by hyload modules"""


class InvalidParameterError(HyloadError, ValueError):
    def __init__(self, field, element, value, reason=""):
        self.field = field
        self.element = element
        self.value = value
        message = f"Invalid {field} for {element}: {value!r}"
        if reason:
            message += f" ({reason})"
        super().__init__(message)


class DisconnectedGraphError(HyloadError, ValueError):
    pass


class DimensionMismatchError(HyloadError, ValueError):
    def __init__(self, name, expected, got):
        self.name = name
        self.expected = expected
        self.got = got
        super().__init__(f"{name} has dimension {got}, expected {expected}")


class UnbalancedInjectionsError(HyloadError, ValueError):
    def __init__(self, imbalance, tolerance):
        self.imbalance = imbalance
        self.tolerance = tolerance
        super().__init__(
            f"Injections sum to {imbalance:.3e} p.u., tolerance is {tolerance:.1e}")


class TooManyLoadsError(HyloadError, ValueError):
    def __init__(self, count, limit):
        self.count = count
        self.limit = limit
        super().__init__(f"{count} on-off loads exceed the enumeration limit of {limit}")


class DesignConditionViolatedError(HyloadError, ValueError):
    def __init__(self, report):
        self.report = report
        failed = ", ".join(f"{c.condition}@bus{c.bus}" for c in report.failures())
        super().__init__(f"Design condition violated: {failed}")


class ScenarioParseError(HyloadError, ValueError):
    def __init__(self, message, line=None, column=None, field=None):
        self.line = line
        self.column = column
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}, column {column}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{message} ({'; '.join(where)})" if where else message)


class ScenarioValidationError(HyloadError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NonFiniteStateError(HyloadError, RuntimeError):
    def __init__(self, time):
        self.time = time
        super().__init__(f"State became non-finite at t={time:.6f} s")


class MaxJumpsExceededError(HyloadError, RuntimeError):
    def __init__(self, limit, time):
        self.limit = limit
        self.time = time
        super().__init__(f"More than {limit} jumps by t={time:.6f} s")
