"""Bayesian low-rank matrix reconstruction with Kronecker-structured priors.

Public surface: tensor-algebra utilities, measurement-operator and
instance construction, the full / symmetric / accelerated solvers, the
nuclear-norm baseline, and the benchmark driver.
"""

from .accel import BlockPartition, block_map_update, partition_blocks, solve_accelerated
from .bench import (
    AggregateRow,
    ConfigError,
    ExperimentConfig,
    ResultRow,
    aggregate,
    m_from_fraction,
    nmse,
    run_experiment,
    write_csv,
)
from .core import (
    Estimate,
    Hyperparameters,
    PrecisionState,
    SolverDivergenceError,
    SolverState,
    balance_precisions,
    effective_rank,
    init_state,
    map_estimate,
    neg_log_joint,
    solve,
    update_noise_precision,
    update_precisions,
)
from .kronops import (
    FactorizationError,
    KronSum,
    kron,
    nearest_kron_sum,
    posterior_covariance,
    spd_inverse,
    trace_contract_left,
    trace_contract_right,
    unvec,
    vec,
)
from .nuclear import (
    NuclearConfig,
    delta_from_sigma,
    solve_constrained,
    solve_lagrangian,
    svt_prox,
)
from .sensing import (
    MeasurementOperator,
    ProblemInstance,
    completion_operator,
    gaussian_operator,
    generate_low_rank,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    measure,
    noise_sigma_for_snr,
    save_instance,
)
from .symmetric import SymmetricState, solve_symmetric, update_precision_symmetric

__all__ = [name for name in dir() if not name.startswith("_")]
