"""tvkit: checkpoint editing via task-vector algebra and depth-wise scaling.

The toolkit reads and writes safetensors-layout checkpoints, extracts and
recombines fine-tuning residuals, scales them by block depth, merges many
fine-tuned models into one, and tunes coefficients against pluggable
evaluators. See the README for the command-line interface.
"""

from .errors import (
    ByteRangeError,
    CompatibilityError,
    DegenerateMergeError,
    EvaluatorError,
    MalformedHeaderError,
    NonFiniteTensorError,
    ScheduleError,
    SearchError,
    StoreError,
    ToolkitError,
    TopologyError,
    UnknownDtypeError,
)
from .mergers import (
    MergeResult,
    SoupResult,
    consensus_merge,
    greedy_soup,
    merge_pipeline,
    rewarded_interpolate,
    task_arithmetic_merge,
    ties_merge,
    uniform_soup,
    wiseft_interpolate,
)
from .schedule import (
    ScalingSchedule,
    TradeoffCandidate,
    alpha_heuristic,
    factor,
    scale,
    select_gamma,
)
from .search import (
    EvalResult,
    Grid,
    GridSearchResult,
    grid_search,
    make_checkpoint_evaluator,
    run_evaluator,
)
from .store import (
    CompatibilityReport,
    NamedTensorMap,
    content_hash,
    read_checkpoint,
    validate_compatibility,
    write_checkpoint,
)
from .topology import DepthMap, TopologyConfig, infer_depths
from .vectors import (
    TaskVector,
    apply,
    combine,
    extract,
    load_task_vector,
    norm,
    save_task_vector,
    zeros_like,
)

__version__ = "0.1.0"

__all__ = [
    "ByteRangeError",
    "CompatibilityError",
    "CompatibilityReport",
    "DegenerateMergeError",
    "DepthMap",
    "EvalResult",
    "EvaluatorError",
    "Grid",
    "GridSearchResult",
    "MalformedHeaderError",
    "MergeResult",
    "NamedTensorMap",
    "NonFiniteTensorError",
    "ScalingSchedule",
    "ScheduleError",
    "SearchError",
    "SoupResult",
    "StoreError",
    "TaskVector",
    "ToolkitError",
    "TopologyConfig",
    "TopologyError",
    "TradeoffCandidate",
    "UnknownDtypeError",
    "alpha_heuristic",
    "apply",
    "combine",
    "consensus_merge",
    "content_hash",
    "extract",
    "factor",
    "greedy_soup",
    "grid_search",
    "infer_depths",
    "load_task_vector",
    "make_checkpoint_evaluator",
    "merge_pipeline",
    "norm",
    "read_checkpoint",
    "rewarded_interpolate",
    "run_evaluator",
    "save_task_vector",
    "scale",
    "select_gamma",
    "task_arithmetic_merge",
    "ties_merge",
    "uniform_soup",
    "validate_compatibility",
    "wiseft_interpolate",
    "write_checkpoint",
    "zeros_like",
]
