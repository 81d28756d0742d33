"""Exception hierarchy shared by every module."""


class MvAssocError(Exception):
    """Base class for all package errors."""


class ConstantOutcome(MvAssocError):
    pass


class BadFoldCount(MvAssocError):
    pass


class DegenerateNull(MvAssocError):
    """A null-model MSE is zero (or numerically so)."""


# association-level name for the same condition
Degenerate = DegenerateNull


class SingularFit(MvAssocError):
    pass


class InvalidHyperparameter(MvAssocError):
    pass


class DimensionMismatch(MvAssocError):
    pass


class OptimizerFailure(MvAssocError):
    pass


class SingularError(MvAssocError):
    pass


class EmptyComplement(MvAssocError):
    pass


class ConfigError(MvAssocError):
    pass


class DataError(MvAssocError):
    pass


class LearnerError(MvAssocError):
    """A learner failure annotated with where it happened."""

    def __init__(self, message, *, learner=None, fold=None, outcome=None):
        super().__init__(message)
        self.learner = learner
        self.fold = fold
        self.outcome = outcome


class ReplicateFailures(MvAssocError):
    """More Monte Carlo replicates failed than the tolerated fraction."""
