"""Byzantine fault-tolerant scalar convex optimization toolkit.

Library + deterministic synchronous simulator for six fault-tolerant
optimization algorithms over scalar convex cost functions, with weight
certificates proving each output minimizes a convex combination of the
non-faulty costs whose qualifying weights stay bounded away from zero.
"""

from .convexlib import (
    AdmissibleFunction,
    Huber,
    PiecewiseLinearDerivative,
    Quadratic,
    argmin_interval,
    check_admissible,
    default_function,
    evaluate,
    function_from_dict,
    function_to_dict,
    gradient,
)
from .trimagg import (
    FunctionEnsemble,
    aggregate_antiderivative,
    rank_gradient,
    rank_gradient_sum,
    root_bracket,
    sign_partition,
    solve_root,
    trimmed_gradient_aggregate,
    trimmed_negative_gradient_sum,
    trimmed_positive_gradient_sum,
)
from .certify import (
    WeightCertificate,
    WeightSpec,
    extract_weights,
    impossibility_scenarios,
    quadratic_weighted_optimum,
    verify_certificate,
    y_membership,
)
from .simnet import (
    AdversaryStrategy,
    RoundLog,
    Scenario,
    StepSchedule,
    byz_broadcast,
    exact_consensus,
    point_to_point_send,
)
from .algorithms import (
    AlgorithmOutcome,
    GradientRecord,
    check_gradient_admissible,
    run_alg1,
    run_alg2,
    run_alg3,
    run_alg4,
    run_alg5,
    run_alg6,
    run_algorithm,
)
from .kernels import BACKEND

__version__ = "0.1.0"
