"""Exception and warning types raised across the package."""


class WalkcauseError(Exception):
    """Base class for all package errors."""


class SchemaError(WalkcauseError, ValueError):
    pass


class MissingColumn(SchemaError):
    pass


class NonBinaryTreatment(SchemaError):
    pass


class OutcomeOutOfScale(SchemaError):
    pass


class EmptyDataset(SchemaError):
    pass


class OutOfScale(WalkcauseError, ValueError):
    pass


class DegenerateScenario(WalkcauseError, ValueError):
    """A scenario has too few exposed or control units to define a contrast."""


class UnsupportedSize(WalkcauseError, ValueError):
    pass


class TooFewRows(WalkcauseError, ValueError):
    pass


class SignatureMismatch(WalkcauseError, ValueError):
    """Features passed to ``predict`` differ from the training signature."""


class NoMatches(WalkcauseError, ValueError):
    pass


class ZeroTruth(WalkcauseError, ZeroDivisionError):
    pass


class PositivityWarning(UserWarning):
    """Propensity scores had to be clipped into the configured bounds."""


class DegenerateTargetWarning(UserWarning):
    """A constant target was replaced by an intercept-only fit."""
