"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, data errors 2,
numeric errors 3.
"""


class PromptClassError(Exception):
    pass


class UsageError(PromptClassError, ValueError):
    pass


class DataError(PromptClassError, ValueError):
    pass


class NumericError(PromptClassError, ArithmeticError):
    pass
