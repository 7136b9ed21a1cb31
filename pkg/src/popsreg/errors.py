"""Exception types raised by popsreg."""


class PopsError(Exception):
    """Base class for every error raised by this package."""


class DatasetError(PopsError):
    pass


class EmptyFile(DatasetError):
    pass


class MissingColumn(DatasetError):
    def __init__(self, column):
        super().__init__(f"column {column!r} not found in header")
        self.column = column


class NonFiniteValue(DatasetError):
    def __init__(self, row, col, raw=None):
        msg = f"non-finite or unparsable value at row {row}, column {col!r}"
        if raw is not None:
            msg += f": {raw!r}"
        super().__init__(msg)
        self.row = row
        self.col = col


class EmptyPopsRow(DatasetError):
    """A row with all-zero features and a nonzero target: no parameter reproduces it."""

    def __init__(self, row):
        super().__init__(f"row {row} has all-zero features but a nonzero target")
        self.row = row


class InvalidSpec(DatasetError):
    pass


class DegenerateSplit(DatasetError):
    pass


class DimensionMismatch(PopsError):
    pass


class SingularSystem(PopsError):
    pass


class LeverageUnderflow(PopsError):
    def __init__(self, index, value):
        super().__init__(f"leverage of row {index} is {value:.3g} (< 1e-12)")
        self.index = index
        self.value = value


class SpecifiedModel(PopsError):
    """Residuals vanish: the ensemble mass function is undefined."""


class DegenerateColumn(PopsError):
    def __init__(self, column):
        super().__init__(
            f"mass column {column} underflows everywhere; increase sigma_scale"
        )
        self.column = column


class ScaleTooSmall(PopsError):
    pass


class PreconditionError(PopsError):
    pass


class InvariantViolation(PopsError):
    """A post-condition the library guarantees did not hold (a bug, not bad input)."""
