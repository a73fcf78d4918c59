"""Budget-constrained binary grid layout optimization via progressive quadtree search."""

from .layout import (
    DesignMatrix,
    LayoutStack,
    QuadNode,
    QuadtreeLayout,
    Region,
    deserialize,
    deserialize_stack,
    leaf_count,
    leaves,
    reconstruct,
    reconstruct_stack,
    resample_leaf,
    serialize,
    serialize_stack,
    split_leaf,
    split_region,
)
from .oracle import (
    BandSpec,
    BudgetExhaustedError,
    BudgetLedger,
    Dataset,
    EvaluationRecord,
    Oracle,
    OracleSpec,
    aggregate_objective,
    build_oracle,
    evaluate,
    evaluate_batch,
    resolve_oracle_spec,
)
from .predictor import PredictorModel, TrainConfig, bootstrap_ensemble, train
from .search import (
    CapSchedule,
    SearchConfig,
    TopKEntry,
    TopKList,
    grow_cap,
    importance_assignment,
    random_stack,
    tree_search,
)
from .selection import (
    ConsistencyReport,
    SelectionPlan,
    initial_tau,
    kendall_tau,
    mixed_select,
    split_counts,
)
from .loop import RunConfig, RunResult, resume, run_pqs
from .baselines import (
    BaselineConfig,
    random_search,
    run_method,
    selection_efficiency_experiment,
    surrogate_ga,
    surrogate_rs,
)

__version__ = "0.1.0"
