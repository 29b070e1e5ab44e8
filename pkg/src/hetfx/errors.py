"""Exception hierarchy shared across the package.

Three branches matter for the CLI exit codes: usage problems (exit 1),
data problems (exit 2), and estimation problems (exit 3).
"""

from __future__ import annotations


class HetfxError(Exception):
    """Base class for all package errors."""


class UsageError(HetfxError):
    """Bad command-line or configuration input."""


class DataError(HetfxError):
    """Raised when input data violates a contract."""


class EstimationError(HetfxError):
    """Raised when an estimator cannot produce a valid result."""


# ---------------------------------------------------------------------------
# data errors

class MalformedRow(DataError):
    def __init__(self, line: int, column: str, detail: str = ""):
        self.line = line
        self.column = column
        msg = f"malformed value in column '{column}' at line {line}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DuplicatePairYear(DataError):
    pass


class MissingDeflator(DataError):
    pass


class NonPositiveGdp(DataError):
    pass


class EmptyPretreatmentWindow(DataError):
    def __init__(self, pair):
        self.pair = pair
        super().__init__(f"pair {pair} has no usable observation in the pretreatment window")


class EmptyResult(DataError):
    pass


class MissingControl(DataError):
    pass


class InvalidSpec(DataError):
    pass


# ---------------------------------------------------------------------------
# estimation errors

class TooFewRows(EstimationError):
    pass


class FoldMissingClass(EstimationError):
    def __init__(self, fold: int, detail: str = ""):
        self.fold = fold
        msg = f"training complement of fold {fold} lacks a treatment class"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class PropensityOutOfRange(EstimationError):
    pass


class NoTreatmentVariation(EstimationError):
    pass


class DimensionMismatch(EstimationError):
    pass


class AllZeroWeights(EstimationError):
    pass


class RankDeficient(EstimationError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"collinear regressors after absorption: {', '.join(self.columns)}")


class TooFewClusters(EstimationError):
    pass


class NonConvergence(EstimationError):
    def __init__(self, iterations: int, last_change: float):
        self.iterations = iterations
        self.last_change = last_change
        super().__init__(
            f"did not converge after {iterations} iterations (last change {last_change:.3e})"
        )


class EmptyGroup(EstimationError):
    pass


class NoPreTreatmentRows(EstimationError):
    pass


class PeriodTooSmall(EstimationError):
    pass


class DegenerateR2(EstimationError):
    pass


class MissingBaseYear(EstimationError):
    pass


# ---------------------------------------------------------------------------
# warnings

class HetfxWarning(UserWarning):
    """Base warning category."""


class SingleClassWarning(HetfxWarning):
    pass


class DegenerateTargetWarning(HetfxWarning):
    pass


class ClampedPropensityWarning(HetfxWarning):
    pass


class GridOutOfRangeWarning(HetfxWarning):
    pass


class MirrorFlowWarning(HetfxWarning):
    pass


class LogitNonConvergenceWarning(HetfxWarning):
    pass


class SolverNonConvergenceWarning(HetfxWarning):
    pass
