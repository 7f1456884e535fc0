"""Domain-perturbation laboratory for mixed Dirichlet-Neumann elliptic spectra.

Pull-back finite-element operators on a fixed reference mesh, Schatten-norm
resolvent comparisons, eigenprojector/eigenfunction pairing and explicit
bi-Lipschitz deformations, with drivers that measure stability rates against
the area of the symmetric difference of two domains.
"""

from domperturb.geometry import (
    BoundaryGraph,
    DeformationMap,
    ReferenceDomain,
    VicinityReport,
    build_graph_map,
    build_normal_map,
    delta_p,
    displaced_measure,
    symmetric_difference,
    vicinity_report,
)
from domperturb.pullback import (
    CoefficientBundle,
    CoefficientField,
    build_coefficient_bundle,
    ellipticity_check,
    pullback_coefficients,
    s_matrix,
)
from domperturb.mesh import DofMap, Mesh, generate_mesh
from domperturb.assembly import (
    OperatorBundle,
    assemble_bundle,
    tilde_operator_identity_check,
)
from domperturb.spectral import (
    EigenSystem,
    Projector,
    SchattenReport,
    cstar_partial,
    deift_residual,
    deviation_series,
    identity_decomposition,
    projector_distance,
    property_p_fit,
    resolvent_difference_norm,
    riesz_projector,
    solve_eigs,
)
from domperturb.selection import SubspacePair, pair_eigenfunctions, select_basis
from domperturb.fitting import SlopeFit, fit_loglog_slope
from domperturb.config import ConfigError, StudyConfig, config_from_dict, load_config
from domperturb.study import (
    mf_concentration,
    run_perturbation_study,
    run_poisson_study,
    verify_suite,
)

__version__ = "0.1.0"
