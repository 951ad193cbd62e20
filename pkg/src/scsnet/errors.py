"""Error taxonomy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class UsageError(Exception):
    """Bad arguments or configuration supplied by the caller."""


class DataError(Exception):
    """Missing/corrupt files, incompatible checkpoints, empty datasets."""


class NumericalError(Exception):
    """Non-finite losses or failed gradient verification."""
