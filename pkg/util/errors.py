"""Exception types raised by the estimation library.

Input problems derive from ValueError, numeric breakdowns from ArithmeticError,
so callers may catch either the library family or the builtin.
"""


class SardirError(Exception):
    """Base for every error raised by this package."""


class InputError(SardirError, ValueError):
    """Invalid data, design, weights or configuration."""


class NumericError(SardirError, ArithmeticError):
    """A numerical quantity broke down during evaluation or fitting."""


# --- compositions -----------------------------------------------------------

class NonFinite(InputError):
    def __init__(self, row: int, col: int):
        self.row = row
        self.col = col
        super().__init__(f"Non-finite entry at row {row}, column {col}")


class NegativeEntry(InputError):
    def __init__(self, row: int, col: int, value: float | None = None):
        self.row = row
        self.col = col
        self.value = value
        super().__init__(f"Negative entry at row {row}, column {col}: {value}")


class RowSumViolation(InputError):
    def __init__(self, row: int, deviation: float):
        self.row = row
        self.deviation = deviation
        super().__init__(f"Row {row} does not sum to 1 (deviation {deviation:.3g})")


class NonPositiveLabel(InputError):
    def __init__(self, row: int, col: int):
        self.row = row
        self.col = col
        super().__init__(
            f"Label at row {row}, column {col} is not strictly positive; apply zero replacement first"
        )


class NonPositiveProbability(InputError):
    def __init__(self, row: int, col: int):
        self.row = row
        self.col = col
        super().__init__(f"Predicted probability at row {row}, column {col} is zero where the label is positive")


# --- special functions ------------------------------------------------------

class DomainError(InputError):
    def __init__(self, x: float):
        self.x = x
        super().__init__(f"Argument {x} outside the domain (0, inf)")


# --- spatial weights --------------------------------------------------------

class InvalidK(InputError):
    def __init__(self, k: int, n: int):
        self.k = k
        self.n = n
        super().__init__(f"Neighbour count k={k} must satisfy 1 <= k < n (n={n})")


class InvalidCutoff(InputError):
    def __init__(self, cutoff: float):
        self.cutoff = cutoff
        super().__init__(f"Distance cutoff must be > 0, got {cutoff}")


class DuplicatePoints(InputError):
    def __init__(self, i: int, j: int):
        self.i = i
        self.j = j
        super().__init__(f"Points {i} and {j} coincide; nearest neighbours are ambiguous")


class ZeroDistance(InputError):
    def __init__(self, i: int, j: int):
        self.i = i
        self.j = j
        super().__init__(f"Points {i} and {j} are at distance 0; inverse distance undefined")


class IsolatedPoint(InputError):
    def __init__(self, index: int, cutoff: float | None = None):
        self.index = index
        self.cutoff = cutoff
        super().__init__(f"Point {index} has no neighbour within cutoff {cutoff}")


class NonSquare(InputError):
    def __init__(self, shape: tuple[int, ...]):
        self.shape = shape
        super().__init__(f"Weights matrix must be square, got shape {shape}")


class NegativeWeight(InputError):
    def __init__(self, i: int, j: int):
        self.i = i
        self.j = j
        super().__init__(f"Negative weight at ({i}, {j})")


class NonzeroDiagonal(InputError):
    def __init__(self, i: int):
        self.i = i
        super().__init__(f"Weights diagonal entry {i} is not zero")


class RhoOutOfBounds(InputError):
    def __init__(self, rho: float):
        self.rho = rho
        super().__init__(f"rho={rho} lies outside [-1, 1]")


class MissingWeightsContext(InputError):
    pass


# --- shapes and metrics -----------------------------------------------------

class DimensionMismatch(InputError):
    pass


class ShapeMismatch(InputError):
    def __init__(self, left: tuple[int, ...], right: tuple[int, ...]):
        self.left = left
        self.right = right
        super().__init__(f"Shapes differ: {left} vs {right}")


class ZeroVariance(InputError):
    def __init__(self, classes: list[int]):
        self.classes = list(classes)
        super().__init__(f"Classes with zero variance: {self.classes}")


class ZeroRow(InputError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"Row {row} is identically zero")


# --- ingestion and configuration --------------------------------------------

class ParseError(InputError):
    def __init__(self, row: int, col: str, value: str | None = None, path: str | None = None):
        self.row = row
        self.col = col
        self.value = value
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"Cannot parse {value!r} at row {row}, column {col!r}{where}")


class RowCountMismatch(InputError):
    def __init__(self, counts: dict[str, int]):
        self.counts = dict(counts)
        super().__init__(f"Row counts disagree across inputs: {self.counts}")


class ConfigError(InputError):
    pass


# --- numerics ---------------------------------------------------------------

class SingularLag(NumericError):
    def __init__(self, rho: float, rcond: float):
        self.rho = rho
        self.rcond = rcond
        super().__init__(f"I - rho*W is numerically singular at rho={rho} (rcond={rcond:.3g})")


class NonFiniteLinearPredictor(NumericError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"Linear predictor is not finite at row {row}")


class Overflow(NumericError):
    def __init__(self, row: int, value: float):
        self.row = row
        self.value = value
        super().__init__(f"Precision predictor {value:.6g} at row {row} overflows exp()")


class NonFiniteObjective(NumericError):
    pass


class LineSearchFailure(NumericError):
    pass


class SingularInformation(NumericError):
    pass
