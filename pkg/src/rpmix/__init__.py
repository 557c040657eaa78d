"""rpmix: mixture estimation via random projections and characteristic
functions, plus projected-KS agreement between model-based partitions."""

__version__ = "0.1.0"

from .agreement import (
    AgreementResult,
    KsProfile,
    agree_one_sample_two_fits,
    agree_two_samples,
    ks_statistic,
    prewhiten,
)
from .align import AlignmentPlan, align, average_weights, choose_pivot
from .directions import (
    Certificate,
    DirectionSet,
    certify_sm_uniqueness,
    required_directions,
    sample_directions,
)
from .ecf import (
    EcfFitResult,
    EcfGrid,
    cf_weights,
    default_grid,
    empirical_cf,
    fit_step1,
    fit_step2,
    init_step,
    model_cf,
)
from .em import em_baseline
from .errors import (
    ConfigError,
    EstimationError,
    InvalidArgumentError,
    NumericalError,
    ParseError,
    RpmixError,
)
from .metrics import MetricsReport, compute_ari, confusion_joint, parameter_errors
from .model import (
    GAUSSIAN,
    STUDENT_T,
    LabeledSample,
    MixtureModel,
    UnivariateMixture,
    density,
    log_density,
    map_allocate,
    project_model,
    project_sample,
    sample,
)
from .pipeline import EstimateConfig, EstimateResult, run_estimate
from .reconstruct import (
    ConstrainedResult,
    ProjectedEstimates,
    ReconstructionResult,
    reconstruct,
    reconstruct_constrained,
    reconstruct_covariances,
    reconstruct_means,
    reconstruct_robust,
)
from .simulate import SimulationConfig, run_simulation

__all__ = [name for name in dir() if not name.startswith("_")]
