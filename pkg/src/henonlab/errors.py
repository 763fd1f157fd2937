"""Exception types shared across the package."""


class HenonLabError(Exception):
    """Base class for all library-specific failures."""


class NotRenormalizable(HenonLabError):
    """No invariant interval / renormalization structure was found."""


class NoInvariantInterval(NotRenormalizable):
    """Search for a forward-invariant vertical strip V x I^v failed.

    ``side`` classifies the failure for parameter tuning: ``"low"`` when the
    return map has collapsed onto an attracting low-period regime (parameter
    below the doubling accumulation), ``"high"`` when the forward hull
    escapes (parameter beyond it), ``None`` when unclassified.
    """

    def __init__(self, message, side=None):
        super().__init__(message)
        self.side = side


class NoConvergence(HenonLabError):
    """An iterative scheme exhausted its budget before reaching tolerance."""


class NewtonDiverged(NoConvergence):
    """A Newton solve left its bracket or stopped contracting."""


class NotHenonLike(HenonLabError):
    """A computed return map failed the structural checks of the class."""


class WrongCount(HenonLabError):
    """A search found a different number of objects than the theory allows."""


class NormBoundExceeded(HenonLabError):
    """A perturbation is larger than the configured smallness budget."""


class BranchUndefined(HenonLabError):
    """An inverse-branch evaluation was requested outside the branch range."""


class OrbitEscaped(HenonLabError):
    """An orbit left the map's domain box."""


class NonpositiveJacobian(HenonLabError):
    """det DF <= 0 somewhere it must be positive (orientation/dissipation)."""


class BlockStructureViolated(HenonLabError):
    """A derivative matrix did not have the expected triangular block form."""


class DiagonalDominanceFailed(HenonLabError):
    """The implicit surface system lost diagonal dominance in z."""


class PreimageNewtonFailed(NewtonDiverged):
    """Horizontal preimage solve for the graph transform failed."""


class NoContraction(NoConvergence):
    """The graph transform stopped contracting before tolerance."""
