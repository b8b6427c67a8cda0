"""Exception hierarchy shared by every stage of the pipeline."""


class RiskmineError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(RiskmineError, ValueError):
    """Malformed input data (unsorted events, out-of-window timestamps, ...)."""


class ConfigError(RiskmineError, ValueError):
    """A configuration value is outside its documented range."""


class ShortageError(RiskmineError):
    """Not enough matching controls in one or more strata."""

    def __init__(self, deficits):
        self.deficits = dict(deficits)
        parts = [f"{k}: need {need}, have {have}" for k, (need, have) in sorted(self.deficits.items())]
        super().__init__("insufficient matching controls in " + "; ".join(parts))


class SeparationError(RiskmineError):
    """Maximum-likelihood estimates diverge (complete or quasi-complete separation)."""


class CollinearityError(RiskmineError):
    """The design matrix is rank deficient."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__("rank-deficient design; offending columns: " + ", ".join(self.columns))


class NumericError(RiskmineError, ArithmeticError):
    """A numerical routine failed (non positive-definite information, ...)."""
