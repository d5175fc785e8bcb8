"""Direct data-driven control of uncertain linear systems via convex certificates.

Synthesizes state-feedback gains at every control step from raw input-state
data: offline experiments at the extreme points of the uncertainty set plus a
rolling window of recent closed-loop samples, combined through linear matrix
inequalities and solved as one conic program.
"""

from .dataset import (
    DatasetError,
    SystemPair,
    TrajectoryDataset,
    RollingWindow,
    ConsistencyGram,
    InformativityReport,
    build_dataset,
    dataset_from_matrices,
    push_sample,
    consistency_gram,
    consistency_residual,
    informativity_for_identification,
    least_squares_fit,
    identify_system,
    read_dataset_csv,
    write_dataset_csv,
    read_manifest,
    write_manifest,
)
from .lmi import (
    AssemblyError,
    GainRecoveryError,
    CostWeights,
    ConstraintPolytope,
    EllipsoidalSet,
    VariableLayout,
    LMIBlock,
    ConicProblem,
    SynthesisSolution,
    make_layout,
    evaluate_block,
    assemble,
    adaptive_problem,
    robust_problem,
    stabilization_problem,
    recover_gain,
)
from .solver import SolverTolerances, SolveOutcome, solve
from .sdpa import SdpaFormatError, SdpaData, problem_to_sdpa, export_sdpa, parse_sdpa
from .plant import (
    PlantError,
    DeltaSchedule,
    PlantModel,
    BenchmarkPlant,
    vertex_system,
    benchmark_vertices,
    delta_to_weights,
    generate_offline_data,
    step_plant,
    true_cost,
    step_of_time,
    SAMPLING_PERIOD,
)
from .controller import (
    AssumptionError,
    ControlDecision,
    StepRecord,
    ControllerState,
    DecreaseReport,
    make_controller,
    adaptive_step,
    robust_step,
    record_transition,
    certify_decrease,
)
from .experiments import (
    ExperimentError,
    ExperimentConfig,
    RunRecord,
    SweepCell,
    default_config,
    load_config,
    save_config,
    run_single,
    run_sweep,
    check_datasets,
    check_run,
)

__version__ = "0.1.0"

__all__ = [
    "DatasetError", "SystemPair", "TrajectoryDataset", "RollingWindow",
    "ConsistencyGram", "InformativityReport", "build_dataset",
    "dataset_from_matrices", "push_sample", "consistency_gram",
    "consistency_residual", "informativity_for_identification",
    "least_squares_fit", "identify_system", "read_dataset_csv",
    "write_dataset_csv", "read_manifest", "write_manifest",
    "AssemblyError", "GainRecoveryError", "CostWeights", "ConstraintPolytope",
    "EllipsoidalSet", "VariableLayout", "LMIBlock", "ConicProblem",
    "SynthesisSolution", "make_layout", "evaluate_block", "assemble",
    "adaptive_problem", "robust_problem", "stabilization_problem",
    "recover_gain",
    "SolverTolerances", "SolveOutcome", "solve",
    "SdpaFormatError", "SdpaData", "problem_to_sdpa", "export_sdpa",
    "parse_sdpa",
    "PlantError", "DeltaSchedule", "PlantModel", "BenchmarkPlant",
    "vertex_system", "benchmark_vertices", "delta_to_weights",
    "generate_offline_data", "step_plant", "true_cost", "step_of_time",
    "SAMPLING_PERIOD",
    "AssumptionError", "ControlDecision", "StepRecord", "ControllerState",
    "DecreaseReport", "make_controller", "adaptive_step", "robust_step",
    "record_transition", "certify_decrease",
    "ExperimentError", "ExperimentConfig", "RunRecord", "SweepCell",
    "default_config", "load_config", "save_config", "run_single", "run_sweep",
    "check_datasets", "check_run",
    "__version__",
]
