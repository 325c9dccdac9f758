"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError -> 2, NumericError -> 3.
"""


class DataError(Exception):
    """Malformed or invalid input data (bad file, bad record, OOV query)."""


class NumericError(Exception):
    """Numeric failure: NaN/Inf encountered or an algorithm failed to converge."""
