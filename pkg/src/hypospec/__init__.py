"""Spectral toolkit for the hypoelliptic Laplacian of a circle Morse potential.

Modules:
    potential  trig polynomials, critical points, sublevel barcodes
    basis      Fourier x Hermite tensor basis and the fiber exterior algebra
    witten     semiclassical Witten complex, gap certificate, truncation
    bismut     the phase-space operator B, projectors, Hodge factor
    grushin    block inversion and resolvent comparison with the Witten side
    spectral   eigensolvers, contour projectors, semigroup
    harness    parameter sets, experiments, config-driven runs
"""

__version__ = "0.1.0"

from .basis import Discretization, FiberAlgebra
from .bismut import (
    BismutAssembly,
    assemble_bismut,
    bismut_identity_check,
    build_hodge,
    build_projectors,
    scaling_equivalence,
)
from .errors import (
    AdmissibilityError,
    ConfigError,
    HypospecError,
    NoGap,
)
from .grushin import (
    build_blocks,
    effective_operator_error,
    region_table,
    resolvent_difference,
    schur_reconstruction_residual,
)
from .harness import (
    Config,
    ParameterSet,
    load_config,
    resolve_config,
    run_config,
    run_experiment,
    sweep,
)
from .potential import Barcode, Potential, barcode, critical_points
from .spectral import (
    cluster_bases,
    compare_with_witten,
    contour_projector,
    eigs_in_disc,
    semigroup,
    semigroup_split,
)
from .witten import (
    GapCertificate,
    WittenAssembly,
    assemble_witten,
    gap_certificate,
    spectral_truncation,
    suggest_K,
)

__all__ = [
    "AdmissibilityError", "Barcode", "BismutAssembly", "Config",
    "ConfigError", "Discretization", "FiberAlgebra", "GapCertificate",
    "HypospecError", "NoGap", "ParameterSet", "Potential", "WittenAssembly",
    "assemble_bismut", "assemble_witten", "barcode", "bismut_identity_check",
    "build_blocks", "build_hodge", "build_projectors", "cluster_bases",
    "compare_with_witten", "contour_projector", "critical_points",
    "effective_operator_error", "eigs_in_disc", "gap_certificate",
    "load_config", "region_table", "resolve_config", "resolvent_difference",
    "run_config", "run_experiment", "scaling_equivalence",
    "schur_reconstruction_residual", "semigroup", "semigroup_split",
    "spectral_truncation", "suggest_K", "sweep", "__version__",
]
