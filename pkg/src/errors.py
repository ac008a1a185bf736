"""
Exceptions and warnings for the LPP conditional-distribution toolkit

Every error carries the CLI exit code it maps to:
2 = validation, 3 = numeric tolerance, 4 = budget.
"""


class LPPError(Exception):
    """Base class for toolkit errors"""
    exit_code = 1


# Validation errors (exit code 2)

class DomainError(LPPError, ValueError):
    """Inputs outside the mathematical domain of an operation"""
    exit_code = 2


class ValidationError(LPPError, ValueError):
    """Experiment configuration failed validation"""
    exit_code = 2


class HypothesisError(LPPError, ValueError):
    """Observation plan violates the ordering/distinctness hypotheses"""
    exit_code = 2


class ShapeError(LPPError, ValueError):
    """Mismatched vector or list sizes"""
    exit_code = 2


class RangeError(LPPError, IndexError):
    """Lattice coordinates outside the sampled field"""
    exit_code = 2


class RuleError(LPPError, ValueError):
    """List rewrite requested at a position without adjacent blocks"""
    exit_code = 2


class MethodError(LPPError, ValueError):
    """Requested method does not support the given input"""
    exit_code = 2


class ContourNestingError(LPPError, ValueError):
    """Contour radii violate the nesting or disjointness requirements"""
    exit_code = 2


class SingularBasisError(LPPError, ArithmeticError):
    """Projection basis is degenerate"""
    exit_code = 2


# Numeric tolerance errors (exit code 3)

class PoleError(LPPError, ZeroDivisionError):
    """Evaluation exactly at a pole"""
    exit_code = 3


class NonRealResult(LPPError, ArithmeticError):
    """Imaginary residue of a quantity that must be real is too large"""
    exit_code = 3


class DivisionError(LPPError, ZeroDivisionError):
    """Denominator statistically indistinguishable from zero"""
    exit_code = 3


class ToleranceError(LPPError):
    """A residual exceeded its tolerance tier"""
    exit_code = 3


# Budget errors (exit code 4)

class BudgetExceeded(LPPError):
    """Monte Carlo draw budget exhausted before the target was reached"""
    exit_code = 4

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class AllocationError(LPPError, MemoryError):
    """Requested array exceeds the configured cell cap"""
    exit_code = 4


# Warnings

class LPPWarning(UserWarning):
    """Base class for toolkit warnings"""


class CancellationWarning(LPPWarning):
    """Sum lost more than the configured fraction of its pivot magnitude"""


class TruncationWarning(LPPWarning):
    """Series tail estimate is large relative to the value"""


class PoleProximityWarning(LPPWarning):
    """Quadrature nodes of interacting variables nearly coincide"""
