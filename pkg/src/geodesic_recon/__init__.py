"""Geodesic trees, Busemann functions and landscape reconstruction for exponential LPP."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("geodesic-recon")
except PackageNotFoundError:  # running from a source tree without installation
    __version__ = "0.1.0"

from ._validation import (
    MINUS_INFINITY,
    PLUS_INFINITY,
    Box,
    BoxError,
    MonotonicityError,
    NotFoundError,
    NotStabilizedError,
    ReconError,
    StuckError,
    TieError,
)
from .busemann import (
    BusemannEstimator,
    BusemannField,
    GeodesicTree,
    busemann_value,
    competition_interface,
    interface_escape_stat,
    load_tree,
    save_tree,
    semi_infinite_ray,
    variational_check,
)
from .delta import (
    coalescence_prob_estimate,
    continuum_match,
    cross_time_anchor,
    delta_increment_sample,
    delta_row,
    equivalent,
    horizon_sample,
    partition_from_trees,
    plateau_partition,
)
from .differential import d_length, differential_distance, is_ancestral, relative_differential
from .gauge import GaugeReconstructor, gauge_measure, gauge_study, simulate_bm, support_set
from .lpp import (
    WeightField,
    brute_force_passage,
    geodesic,
    load_field,
    passage_time,
    passage_times_from,
    path_length,
    sample_field,
    save_field,
)
from .modified import argmax_walk, build_switching_dag, greedy_decompose, modified_distance
from .pipeline import (
    DeltaField,
    ExperimentConfig,
    ReconstructionReport,
    agreement,
    chain_rows,
    distance_reconstructor,
    end_to_end,
    nested_windows,
    reconstruct_distance,
    reconstruct_tree,
    shock_measure,
    window_directions,
)
