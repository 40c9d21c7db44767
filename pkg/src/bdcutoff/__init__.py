"""Exact analysis of finite birth-and-death chains and cutoff criteria for families."""
from .chain import (Chain, TimeParameter, chain_from_dict, flip, lazy_transform, load_chain,
                    new_chain, quantile_state, stationary)
from .cutoff import (FamilyReport, FamilyRow, Thresholds, analyze_family,
                     boundary_vs_max_comparison, cutoff_time_window, random_family_experiment,
                     verdict)
from .errors import (BDError, ChainError, ConfigError, NumericError, PreconditionError,
                     SpectralError)
from .evolve import (distance, distance_profile, evolve, mixing_time, separation, tv_distance)
from .families import family_names, load_family, make_family
from .hitting import hit_moments, mean_hit, moments_via_spectrum, var_hit
from .spectral import full_spectrum, leading_spectrum, punctured_spectrum, spectral_gap

__version__ = "0.1.0"
