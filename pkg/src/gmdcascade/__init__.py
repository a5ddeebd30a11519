"""GMD-induced cascading failure simulation for power transmission networks.

Pipeline: geomagnetic series -> geoelectric fields (magnetotelluric
transfer functions) -> coupled dc line voltages -> GIC network solve ->
transformer reactive losses -> relaxation-based minimum-load-shed cascade
loop with relays, breakers and islanding.
"""

from .netmodel import (
    Branch,
    BranchKind,
    Bus,
    CaseError,
    CaseParseError,
    CaseValidationError,
    ContingencySpec,
    Generator,
    GsuDefaults,
    Load,
    NetworkCase,
    RelaySpec,
    Substation,
    TransformerGicModel,
    XfmrConfig,
    apply_contingencies,
    attach_gsu_transformers,
    case_from_dict,
    case_to_dict,
    load_case,
    save_case,
    validate_case,
)
from .geofield import (
    FieldGrid,
    FieldSeries,
    MagneticSeries,
    TransferFunction,
    compute_geoelectric,
    grid_from_tf_sites,
    interpolate_tf,
    nearest_tf,
    uniform_field_grid,
)
from .coupling import (
    CoupledVoltageSeries,
    LineGeometry,
    couple_case,
    coupled_voltage,
    field_at_midpoint,
    line_displacement,
    line_geometries,
    read_branch_voltages,
    write_branch_voltages,
)
from .gicsolve import (
    GicError,
    GicNetwork,
    GicSolution,
    build_gic_network,
    effective_gic,
    qloss,
    solve_gic,
)
from .conic import (
    AuditReport,
    ConicError,
    ConicProgram,
    ConicSolution,
    ConicStatus,
    audit,
    solve,
)
from .mls import (
    MlsError,
    MlsMode,
    MlsProgram,
    MlsSnapshot,
    MlsSolution,
    build_cascading_mls,
    build_steady_mls,
    extract_solution,
    solve_mls,
)
from .cascade import (
    CascadeConfig,
    CascadeTrace,
    IterationRecord,
    RelayState,
    TerminationCause,
    run_cascade,
    select_largest_island,
    update_generator_breakers,
    update_generator_ramp,
    update_load_breakers,
    update_relays,
)
from .synth import synth_case

__version__ = "0.1.0"
