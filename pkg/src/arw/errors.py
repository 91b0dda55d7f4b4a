"""Exception types raised across the package."""


class ARWError(Exception):
    """Base class for all package errors."""


class ToppleError(ARWError):
    """A toppling was not admissible.  ``index`` is the position in a sequence
    when raised from ``apply_sequence``."""

    def __init__(self, msg, site=None, index=None):
        super().__init__(msg)
        self.site = site
        self.index = index


class ToppleOnEmpty(ToppleError):
    pass


class ToppleSleepingWhenLegal(ToppleError):
    pass


class BudgetError(ARWError):
    """A run hit one of its resource limits."""


class DepthCapExceeded(BudgetError):
    pass


class WindowOverflow(BudgetError):
    """A particle left the finite window of a run without a kill boundary."""


class BudgetExhausted(BudgetError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class MarchBudgetExhausted(BudgetError):
    pass


class BlockWindowOverflow(WindowOverflow):
    pass


class OverrideError(ARWError):
    """Attempt to rewrite an instruction that was already read or consumed."""


class CouplingInvariantError(ARWError):
    """One of the coupling's structural invariants failed at runtime."""


class InsufficientSamples(ARWError):
    pass


class EmptySample(ARWError):
    pass


class EpsilonOutOfRange(ARWError):
    pass


class AllTrialsTruncated(ARWError):
    pass


class NonMonotoneCriterion(ARWError):
    pass
