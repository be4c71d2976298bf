"""Bayesian model averaging estimators of intervention effects in linear Gaussian SCMs."""

from .baselines import (
    DegenerateInputError,
    K2Trace,
    PropensityModel,
    estimate_via_graph,
    ipw_ate,
    k2_search,
    logistic_l1_fit,
)
from .exact import (
    GraphPosterior,
    NodePosterior,
    PriorConfig,
    bma_mie_mc,
    bma_mie_quasi,
    graph_posterior,
    log_marginal_graph,
    node_posterior,
)
from .experiments import (
    BenchmarkReport,
    ExperimentConfig,
    build_wz_space,
    emit_report,
    estimate_ate,
    load_csv_dataset,
    run_benchmark,
)
from .scm import (
    CandidateSpace,
    Dag,
    Dataset,
    EnumerationLimitError,
    GraphError,
    LinearScm,
    enumerate_candidates,
    graph_prior,
    sample_model,
    simulate,
    total_effect,
    total_effect_closed,
)
from .vb import VBConfig, VBNodeState, vb_expectations, vb_fit_all, vb_fit_node, vb_mie

__version__ = "0.1.0"
