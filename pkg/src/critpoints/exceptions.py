"""Exception and warning types raised across the package."""


class CritPointsError(Exception):
    """Base class for all errors raised by critpoints."""


class ModelSpecError(CritPointsError, ValueError):
    """A model specification string could not be parsed."""


class NonSmoothKernel(CritPointsError):
    """Analytic derivatives disagree with finite differences of the kernel."""


class NegativeCoefficient(CritPointsError):
    """A Taylor coefficient g_2k came out negative."""


class DegenerateField(CritPointsError):
    """The field is almost surely constant (g2 = 0)."""


class InadmissibleCoefficients(CritPointsError):
    """The coefficients violate g4**2 <= (5/2) g2 g6; no such field exists."""


class RadiusTooSmall(CritPointsError, ValueError):
    """Exact covariance entries are unreliable below the minimal radius."""


class RadiusTooLarge(CritPointsError, ValueError):
    """The assembled covariance failed the positive semidefiniteness probe."""


class DegenerateGradientPair(CritPointsError):
    """The law of (grad F(x), grad F(y)) is degenerate."""


class NonPositiveEigenvalue(CritPointsError):
    """The conditional covariance has a non-positive eigenvalue."""


class ComplexBranch(CritPointsError):
    """A square root in the closed forms has a negative argument."""


class G8BranchNegative(ComplexBranch):
    """280 g4 g8 - 153 g6**2 < 0, so the second order b/c terms are complex."""


class QuadratureUnderResolved(CritPointsError):
    """Monte Carlo relative standard error exceeds the requested tolerance."""


class NonPositiveValue(CritPointsError, ValueError):
    """A log-log fit received a non-positive value."""


class ModeBudgetTooSmall(CritPointsError):
    """Spectral truncation discards more mass than allowed."""


class DegenerateHessian(CritPointsError):
    """A critical point has a (numerically) singular Hessian."""


class CoefficientWarning(UserWarning):
    """Boundary or sign-ambiguous coefficient configuration."""


class EigenvectorDegeneracy(UserWarning):
    """Closed-form eigenvectors were replaced by a generic eigensolve."""


class EmptyBin(UserWarning):
    """A histogram bin received no pairs."""
