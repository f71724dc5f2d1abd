"""tariffkit: smart-meter customer segmentation, per-group price-demand
models, and profit-maximizing multi-group dynamic tariffs."""

from .clustering import (ClusterModel, LloydKMeans, WardAgglomerative,
                         davies_bouldin, hierarchical, kmeans, select_model,
                         silhouette)
from .demand import (DemandModel, ElasticDemandRegressor, FitHistory,
                     aggregate_models, check_market_consistency,
                     fit_demand_model, history_from_readings, predict_demand)
from .errors import (DegenerateDataError, InfeasibleError, SchemaError,
                     SolverError, TariffkitError)
from .ingest import (FeatureMatrix, ReadingSet, TariffSeries, build_attributes,
                     load_readings, load_tariffs, normalize_profiles,
                     normalize_readings, resample, resample_tariffs,
                     write_readings_csv, write_tariffs_csv)
from .optim import NlpProblem, QpProblem, Solution, grid_oracle, maximize_pricing, solve_qp
from .pricing import (BenchmarkReport, PricingProblem, PricingSolution,
                      benchmark, build_problem, evaluate_profit, solve_multiple,
                      solve_uniform, write_solution_csv)
from .segmentation import (SegmentationConfig, SegmentationResult,
                           SubClusterProfile, fit_group_models, merge_by_centroid,
                           merge_by_model, run_cycle, sub_cluster)
from .synthgen import (ArchetypeSpec, SyntheticTruth, default_archetypes,
                       default_cost_shape, generate_costs, generate_dynamic_tariff,
                       generate_population, generate_readings, household_model)

__version__ = "0.1.0"

__all__ = [
    "ArchetypeSpec", "BenchmarkReport", "ClusterModel", "DegenerateDataError",
    "DemandModel", "ElasticDemandRegressor", "FeatureMatrix", "FitHistory",
    "InfeasibleError", "LloydKMeans", "NlpProblem", "PricingProblem",
    "PricingSolution", "QpProblem", "ReadingSet", "SchemaError",
    "SegmentationConfig", "SegmentationResult", "Solution", "SolverError",
    "SubClusterProfile", "SyntheticTruth", "TariffSeries", "TariffkitError",
    "WardAgglomerative", "aggregate_models", "benchmark", "build_attributes",
    "build_problem", "check_market_consistency", "davies_bouldin",
    "default_archetypes", "default_cost_shape", "evaluate_profit",
    "fit_demand_model", "fit_group_models", "generate_costs",
    "generate_dynamic_tariff", "generate_population", "generate_readings",
    "grid_oracle", "hierarchical", "history_from_readings", "household_model",
    "kmeans", "load_readings", "load_tariffs", "maximize_pricing",
    "merge_by_centroid", "merge_by_model", "normalize_profiles",
    "normalize_readings", "predict_demand", "resample", "resample_tariffs",
    "run_cycle", "select_model", "silhouette", "solve_multiple", "solve_qp",
    "solve_uniform", "sub_cluster", "write_readings_csv", "write_solution_csv",
    "write_tariffs_csv",
]
