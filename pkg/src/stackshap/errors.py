"""Exception hierarchy.

The CLI maps each branch to an exit code: configuration problems exit 2,
data problems exit 3 and numerical failures exit 4.
"""


class StackShapError(Exception):
    exit_code = 1


class ConfigError(StackShapError):
    exit_code = 2


class DataError(StackShapError):
    exit_code = 3


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ValidationError(DataError):
    pass


class EmptyClassError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class StratificationError(DataError):
    pass


class FeatureOrderError(DataError):
    pass


class NumericError(StackShapError):
    exit_code = 4


class DivergenceError(NumericError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class UndefinedAUCError(NumericError):
    pass


class DegenerateStackError(NumericError):
    pass


class ExactLimitError(ConfigError):
    pass


class ConvergenceWarning(UserWarning):
    """Raised through ``warnings`` when an optimizer hits its iteration cap."""
