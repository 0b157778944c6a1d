"""Exception hierarchy shared across the package."""


class ExcursionError(Exception):
    """Base class for all package errors."""


class InputError(ExcursionError):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class MissingColumn(InputError):
    def __init__(self, column, source=None):
        self.column = column
        where = f" in {source}" if source else ""
        super().__init__(f"missing required column '{column}'{where}")


class NonIntegerOutcome(InputError):
    pass


class ProbabilityOutOfRange(InputError):
    pass


class DuplicateDecisionPoint(InputError):
    pass


class InvalidPanel(InputError):
    pass


class EmptyDataset(InputError):
    pass


class UnknownFeature(InputError):
    pass


class LagBeforeStart(InputError):
    pass


class InvalidConfig(InputError):
    pass


class EstimationError(ExcursionError):
    """Numerical failure during fitting or solving (CLI exit code 1)."""


class IrlsDiverged(EstimationError):
    pass


class SeparationDetected(EstimationError):
    pass


class NoRecordsForArm(EstimationError):
    pass


class MissingKnownProbabilities(EstimationError):
    pass


class DegenerateArm(EstimationError):
    pass


class MissingNuisance(EstimationError):
    pass


class RankDeficientControls(EstimationError):
    pass


class NoConvergence(EstimationError):
    def __init__(self, message, theta=None, norm=None):
        super().__init__(message)
        self.theta = theta
        self.norm = norm


class SingularBread(EstimationError):
    pass


class SingularInformation(EstimationError):
    pass


class AllReplicatesFailed(EstimationError):
    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)
