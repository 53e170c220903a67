# goal_lab/exceptions.py


class GoalLabError(Exception):
    """Base class for errors raised by the laboratory code."""


class DimensionError(GoalLabError, ValueError):
    pass


class NonFiniteError(GoalLabError, ArithmeticError):
    """A gradient, loss or target went NaN/inf; the run must stop."""


class InvalidActionError(GoalLabError, ValueError):
    pass


class EpisodeError(GoalLabError, ValueError):
    pass


class EmptyBufferError(GoalLabError):
    pass


class UnsupportedEnvError(GoalLabError, ValueError):
    pass


class ManifestMismatchError(GoalLabError, ValueError):
    pass


class UnknownAlgorithmError(GoalLabError, ValueError):
    pass


class MalformedMetricsError(GoalLabError, ValueError):
    """A metrics CSV is missing columns or holds unparsable values."""
