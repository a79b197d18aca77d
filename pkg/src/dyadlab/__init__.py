"""dyadlab: numerical laboratory for weighted dyadic harmonic analysis."""

from .grid import (
    DyadicCube,
    DyadicGrid,
    GridError,
    GridFunction,
    HaarFunction,
    build_grid,
    haar_basis,
    haar_coefficient,
    inner_product,
    l2_norm,
)
from .weights import (
    ApReport,
    Weight,
    WeightError,
    a_infty_modulus,
    ap_characteristic,
    dual_weight,
    power_weight,
    random_a2_weight,
    two_weight_a2,
)
from .shifts import (
    CZDecomposition,
    GenericHaarShift,
    OperatorNormError,
    ShiftError,
    SimpleHaarShift,
    adjoint,
    apply_shift,
    cz_decompose,
    default_levels,
    dense_matrix,
    hilbert_shift,
    martingale_transform,
    operator_norm,
    random_signs,
    random_simple_shift,
    weak_l1_ratio,
    zero_shift,
)
from .corona import (
    CoronaDecomposition,
    CoronaStructureError,
    CubeSet,
    PnAlphaPartition,
    QnPartition,
    build_corona,
    carleson_check,
    carleson_sum,
    corona_invariant_violation,
    descendant_mass_drop,
    packing_check,
    pn_alpha,
    qn_partition,
)
from .estimates import (
    ABSplitReport,
    BoldHReport,
    DistributionCurve,
    EssenceReport,
    JNReport,
    ProfileFamily,
    SufficiencyReport,
    TestingReport,
    bold_h,
    brute_testing_constants,
    corona_ab_split,
    essence_check,
    h_functional,
    jn_check,
    paraproduct_apply,
    paraproduct_identity,
    sufficiency_experiment,
    testing_constants,
    weak_boundedness_from_t1_check,
)

__version__ = "0.1.0"
