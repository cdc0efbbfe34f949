"""Exception taxonomy for the toolkit.

Every guard in the package raises one of these; the CLI maps them to exit
code 2 (usage/configuration) or 1 (assertion failed) as appropriate.
"""


class HypospecError(Exception):
    """Base class for all package errors."""


class NonMorse(HypospecError):
    """Potential has a degenerate critical point (|V''| below tolerance)."""


class CutoffTooSmall(HypospecError):
    """Fourier cutoff K cannot represent the requested multiplier exactly."""


class NoGap(HypospecError):
    """Low-lying spectrum does not split from the rest with the required ratio."""


class PerpSolveIllConditioned(HypospecError):
    """Factorization of the off-kernel block is too ill conditioned to trust."""


class NearSpectrum(HypospecError):
    """Requested resolvent point is too close to the reference spectrum."""


class CountMismatch(HypospecError):
    """Cluster rank disagrees with the Morse-theoretic count."""


class RFormNotPositive(HypospecError):
    """Restricted r-form Gram matrix is not positive definite."""


class QuadratureNotConverged(HypospecError):
    """Contour quadrature rank/projector did not stabilize under refinement."""


class FactorizationSingular(HypospecError):
    """Shift used for the inverse iteration sits on the spectrum."""


class NotConverged(HypospecError):
    """Iterative eigensolver failed to converge."""


class AdmissibilityError(HypospecError):
    """Parameter set violates an admissibility condition required by the run."""


class ConfigError(HypospecError):
    """Malformed configuration file or CLI usage."""
