"""Hidden Markov and mixture hidden Markov models for multichannel
categorical sequence data: build, fit, infer, summarize, simulate."""

__version__ = "0.1.0"

from .errors import MarkovSeqError
from .seqdata import (
    MISSING,
    Alphabet,
    Channel,
    CovariateDesign,
    SequenceDataset,
    define_alphabet,
    effective_size,
    ingest_dataset,
    mc_to_sc,
)
from .model import (
    HmmModel,
    MixtureModel,
    ParamCount,
    build_hmm,
    build_mhmm,
    build_mm,
    build_restricted_mixture,
    combine_clusters,
    count_parameters,
    model_from_json,
    model_to_json,
    separate_clusters,
    trim_model,
)
from .inference import (
    FBResult,
    InformationCriteria,
    MixtureSummary,
    ViterbiResult,
    cluster_posterior_probs,
    cluster_prior_probs,
    forward_backward,
    information_criteria,
    log_likelihood,
    mixture_summary,
    posterior_state_probs,
    viterbi_paths,
)
from .estimation import (
    FitControl,
    FitResult,
    ParameterMap,
    covariate_standard_errors,
    fit_em,
    fit_local,
    fit_model,
    gamma_m_step,
    loglik_gradient,
)
from .simulate import (
    SimSpec,
    simulate_hmm_data,
    simulate_mhmm_data,
    simulate_parameters,
)
from .svgplot import render_state_distribution_svg

__all__ = [
    "MISSING",
    "Alphabet",
    "Channel",
    "CovariateDesign",
    "FBResult",
    "FitControl",
    "FitResult",
    "HmmModel",
    "InformationCriteria",
    "MarkovSeqError",
    "MixtureModel",
    "MixtureSummary",
    "ParamCount",
    "ParameterMap",
    "SequenceDataset",
    "SimSpec",
    "ViterbiResult",
    "build_hmm",
    "build_mhmm",
    "build_mm",
    "build_restricted_mixture",
    "cluster_posterior_probs",
    "cluster_prior_probs",
    "combine_clusters",
    "count_parameters",
    "covariate_standard_errors",
    "define_alphabet",
    "effective_size",
    "fit_em",
    "fit_local",
    "fit_model",
    "forward_backward",
    "gamma_m_step",
    "information_criteria",
    "ingest_dataset",
    "log_likelihood",
    "loglik_gradient",
    "mc_to_sc",
    "mixture_summary",
    "model_from_json",
    "model_to_json",
    "posterior_state_probs",
    "render_state_distribution_svg",
    "separate_clusters",
    "simulate_hmm_data",
    "simulate_mhmm_data",
    "simulate_parameters",
    "trim_model",
    "viterbi_paths",
]
