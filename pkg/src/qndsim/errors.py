"""Exception types shared across the package."""


class QndsimError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatchError(QndsimError, ValueError):
    """Operands live on incompatible Hilbert spaces."""


class HermiticityError(QndsimError, ValueError):
    """An operator required to be Hermitian is not, beyond tolerance."""


class NormalizationError(QndsimError, ValueError):
    """A state or density matrix violates its normalization invariant."""


class ZeroLikelihoodError(QndsimError, ValueError):
    """Conditioning on an outcome of (numerically) zero probability."""


class NondemolitionError(QndsimError, ValueError):
    """No conditional probability exists: the projectors do not commute."""


class CompletenessError(QndsimError, ValueError):
    """An instrument's reduction family does not resolve the identity."""


class MatrixOverflowError(QndsimError, OverflowError):
    """A matrix function produced entries outside the representable range."""


class BlowUpError(QndsimError, RuntimeError):
    """A trajectory integration diverged."""


class ConfigError(QndsimError, ValueError):
    """A run configuration file is invalid; the message names the field."""
