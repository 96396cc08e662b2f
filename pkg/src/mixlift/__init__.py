"""Lifted variational inference for relational hybrid models.

Potentials over exchangeable populations are learned as mixtures of iid
components (binomials/multinomials for discrete atoms, Gaussian-kernel
density products for continuous atoms).  Marginal queries are answered
by latent-variable elimination or lifted Gibbs sampling, without ever
instantiating ground random variables.  Exact brute-force oracles and
analytic error bounds certify the approximations at desk scale.
"""

from mixlift.model import (
    Atom,
    AtomDomain,
    HistTable,
    Histogram,
    ParametricDensity,
    Parfactor,
    Rhm,
    Valuation,
    eval_potential,
    ground,
    histogram_of,
    multinomial_coefficient,
    shatter_non_exchangeable,
)
from mixlift.discrete import (
    FitReport,
    MixtureOfIidDiscrete,
    binomial_pdf,
    fit_joint_mixture_discrete,
    fit_mixture_discrete,
    multinomial_pdf,
    normalize_hist_table,
    total_variation,
)
from mixlift.continuous import (
    Kde,
    KdeMixture,
    SampleSet,
    bandwidth_select,
    fit_kde_mixture,
    kde_eval,
    sample_potential,
)
from mixlift.lve import (
    GaussianApproxComponent,
    VariationalModel,
    collapse_mixture,
    eliminate_continuous_atom,
    eliminate_discrete_atom,
    latent_variable_elimination,
    multiply_continuous_potentials,
    multiply_discrete_potentials,
    normal_overlap,
    update_obs,
)

__all__ = [
    "Atom",
    "AtomDomain",
    "HistTable",
    "Histogram",
    "ParametricDensity",
    "Parfactor",
    "Rhm",
    "Valuation",
    "eval_potential",
    "ground",
    "histogram_of",
    "multinomial_coefficient",
    "shatter_non_exchangeable",
    "FitReport",
    "MixtureOfIidDiscrete",
    "binomial_pdf",
    "fit_joint_mixture_discrete",
    "fit_mixture_discrete",
    "multinomial_pdf",
    "normalize_hist_table",
    "total_variation",
    "Kde",
    "KdeMixture",
    "SampleSet",
    "bandwidth_select",
    "fit_kde_mixture",
    "kde_eval",
    "sample_potential",
    "GaussianApproxComponent",
    "VariationalModel",
    "collapse_mixture",
    "eliminate_continuous_atom",
    "eliminate_discrete_atom",
    "latent_variable_elimination",
    "multiply_continuous_potentials",
    "multiply_discrete_potentials",
    "normal_overlap",
    "update_obs",
]
