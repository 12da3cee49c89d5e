"""Estimate detector error models from syndrome data.

Subset algebra and dense transforms live in ``bitcore``; file formats in
``demio``; the DEM container, sampling and round reshaping in ``demmodel``;
shot statistics in ``stats``; rate estimation and structure learning in
``estmoment`` (moments) and ``estparity`` (parities); likelihood scoring in
``score``; tracking and anomaly detection in ``diagnostics``.
"""
__version__ = "0.1.0"

from .bitcore import (
    DetectorSet,
    SubsetVector,
    hadamard_transform,
    marginal_prob,
    probs_to_attenuations,
    probs_to_rates,
    rates_to_probs,
)
from .demio import FrameSpec, parse_dem, pool_frames, read_dem, read_syndromes, write_dem, write_syndromes
from .demmodel import Dem, DetectorCoords, classify, sample, tile_rounds, restrict_rounds, time_average
from .errors import (
    ConvergenceError,
    DemkitError,
    DemParseError,
    DimensionError,
    DomainError,
    MissingCoordsError,
    PoleError,
    RankDeficientError,
    SizeGuardError,
    SyndromeFormatError,
)
from .estmoment import build_reduced_system, estimate_from_moments, learn_from_moments, solve_moment_equations
from .estparity import estimate_from_parities, estimate_lsqr, learn_from_parities, suggest_queries
from .report import AttenuationReport, EstimateReport
from .score import FitScore, compare_models, exact_likelihood, kl_score
from .stats import correlation_graph, jackknife_variance, moments, pairwise_theta
from .syndromes import SyndromeBatch

