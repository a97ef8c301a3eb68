"""latentmix: latent class mixed models for longitudinal data.

Linear mixed models with latent classes, latent process models with
curvilinear/ordinal links, multivariate marker extensions, and joint models
with cause-specific survival, estimated by maximum likelihood with a
Marquardt-Levenberg algorithm.
"""

__version__ = "0.1.0"

from .data import LongDataset  # noqa: F401
from .modelspec import CorSpec, ModelSpec, SurvivalSpec, SurvivalTerm  # noqa: F401
from .design import build_model  # noqa: F401
from .fitting import FitSettings, FittedModel, fit, gridsearch  # noqa: F401
from .simulate import Covariate, SimDesign, replicate_outcomes, simulate_dataset  # noqa: F401
from .specfile import parse_spec_file, parse_spec_text, spec_text  # noqa: F401
from .postfit import (  # noqa: F401
    cumulative_incidence,
    dynamic_prediction,
    empirical_bayes,
    fit_outcome_scale,
    posterior_probs,
    postprob_summary,
    predict_link,
    predict_trajectory,
    predictions_residuals,
    var_explained,
    varcov_re,
    wald_test,
)
