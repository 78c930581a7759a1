"""loccforge: fixed-round LOCC protocol optimization on product Stiefel
manifolds, with PPT-relaxation upper bounds to sandwich the results."""

from .manifold import (
    ProductManifold,
    RankDeficientStep,
    Stiefel,
    project_tangent,
    qr_retract,
    random_point,
    riemannian_gradient,
)
from .objectives import (
    NoiseKind,
    Objective,
    ObjectiveKind,
    avg_distill_fidelity,
    avg_merge_fidelity,
    block_coherent_info,
    build_coherent_protocol,
    build_distill_protocol,
    build_merge_protocol,
    coherent_objective,
    distill_fidelity,
    distill_objective,
    euclidean_gradient,
    evaluate,
    gadc_choi,
    hashing_bound,
    make_noise,
    merge_fidelity,
    merge_objective,
    noisy_bell_input,
    objective_value,
    value_and_grad,
)
from .optimizer import (
    MultiRestartResult,
    OptimOptions,
    OptimResult,
    OptimTrace,
    minimize,
    multi_restart,
)
from .protocol import (
    BranchOutcome,
    Instrument,
    InstrumentSpec,
    LoccProtocol,
    Scheme,
    apply_cmps,
    apply_protocol,
    cmps,
    export_protocol,
    general_locc,
    import_protocol,
    instrument_from_point,
    ips,
    layout,
    read_protocol,
    write_protocol,
)
from .sdp import (
    SdpProblem,
    SdpSolution,
    partial_transpose,
    ppt_avg_fidelity_bound,
    ppt_fidelity_bound,
    ppt_merging_bound,
    solve,
)
from .states import (
    KrausSet,
    PureState,
    QState,
    apply_kraus,
    choi_state,
    coherent_information,
    conditional_entropy,
    fidelity_to_pure,
    haar_random_pure,
    max_entangled,
    partial_trace,
    permute_subsystems,
    tensor,
    von_neumann_entropy,
)

__version__ = "0.1.0"
