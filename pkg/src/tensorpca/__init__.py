"""Spiked tensor PCA by multi-start power iteration.

The main entry points are :func:`smpi_recover` for the symmetric problem,
:func:`asymmetric_recover` and :func:`cp_decompose` for the asymmetric and
multi-spike variants, and :func:`run_sweep` for paired experiments.
"""

__version__ = "0.1.0"

from .baselines import UnfoldingResult, naive_pi_recover, unfolding_recover  # noqa: E402
from .diagnostics import (  # noqa: E402
    EscapeEvent,
    GradientSplit,
    empirical_alpha,
    empirical_threshold,
    escape_analysis,
    escape_condition,
    gradient_split,
    load_reference_curve,
    plateau_predicted,
    plateau_statistic,
    record_trial,
    refine_fixed_point,
    transverse_eigen,
)
from .errors import (  # noqa: E402
    DegenerateDirectionError,
    DimensionMismatchError,
    NoConvergedTrialsError,
    NonFiniteError,
    SingularPlateauError,
    TensorPCAError,
    UnsupportedOrderError,
)
from .harness import SweepConfig, SweepReport, run_sweep, write_report  # noqa: E402
from .power_methods import (  # noqa: E402
    IterationConfig,
    Trajectory,
    power_step,
    projected_gradient,
    run_iteration,
    symmetrized_power_step,
)
from .smpi import (  # noqa: E402
    RecoveryResult,
    SuccessStats,
    TrialResult,
    m_for_rate,
    select_best,
    smpi_recover,
    success_stats,
)
from .tensor_core import (  # noqa: E402
    DenseTensor,
    Spike,
    SpikedInstance,
    contract_all,
    contract_leave_one,
    contract_leave_two,
    generate_spiked,
    outer,
    outer_power,
    signal_scale,
    symmetrize,
)
from .tensor_io import read_tensor_file, write_tensor_file  # noqa: E402
from .variants import (  # noqa: E402
    AsymmetricRecovery,
    CPResult,
    asymmetric_recover,
    cp_decompose,
    deflate,
    match_components,
)

__all__ = [
    "__version__",
    "AsymmetricRecovery",
    "CPResult",
    "DegenerateDirectionError",
    "DenseTensor",
    "DimensionMismatchError",
    "EscapeEvent",
    "GradientSplit",
    "IterationConfig",
    "NoConvergedTrialsError",
    "NonFiniteError",
    "RecoveryResult",
    "SingularPlateauError",
    "Spike",
    "SpikedInstance",
    "SuccessStats",
    "SweepConfig",
    "SweepReport",
    "TensorPCAError",
    "Trajectory",
    "TrialResult",
    "UnfoldingResult",
    "UnsupportedOrderError",
    "asymmetric_recover",
    "contract_all",
    "contract_leave_one",
    "contract_leave_two",
    "cp_decompose",
    "deflate",
    "empirical_alpha",
    "empirical_threshold",
    "escape_analysis",
    "escape_condition",
    "generate_spiked",
    "gradient_split",
    "load_reference_curve",
    "m_for_rate",
    "match_components",
    "naive_pi_recover",
    "outer",
    "outer_power",
    "plateau_predicted",
    "plateau_statistic",
    "power_step",
    "projected_gradient",
    "read_tensor_file",
    "record_trial",
    "refine_fixed_point",
    "run_iteration",
    "run_sweep",
    "select_best",
    "signal_scale",
    "smpi_recover",
    "success_stats",
    "symmetrize",
    "symmetrized_power_step",
    "transverse_eigen",
    "unfolding_recover",
    "write_report",
    "write_tensor_file",
]
