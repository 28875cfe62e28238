"""Learning ancestral ADMGs from Gaussian data with skeleton-posterior guidance."""
from .abic import AbicConfig, AbicDivergenceError, AbicResult, abic_fit, h_admg, h_admg_gradient
from .fci import FciConfig, fci_learn, fci_pag, pag_to_mag
from .graph import (ARROW, CIRCLE, NONE, TAIL, Admg, GraphError, Pag, Skeleton, is_ancestral,
                    m_separated, mag_to_pag, maximal_ancestral_projection, skeleton_of)
from .metrics import pag_metrics, posterior_quality, shd
from .ricf import ricf_fit
from .simulate import Dataset, GraphSamplerConfig, ScmParams, simulate_instance, simulate_suite
from .spot import GuideConfig, accept_probability, posterior_guided_update, spot_fit

__version__ = "0.1.0"
