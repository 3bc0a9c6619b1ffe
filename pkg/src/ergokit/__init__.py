"""Finitary multiple ergodic averages and regularity decompositions on Z_P^l."""

from .errors import *  # noqa: F401,F403
from .grid import (FiniteProbabilitySpace, GridFunction, RandomizedGridFunction, expectation,
                   inner_product, lp_norm, random_grid_function, set_memory_cap, shift)
from .averaging import (EdgeFunction, diagonal_projection, diagonal_projection_product,
                        is_measurable, lift_functions, module_multiply, multiple_average,
                        sliding_average)
from .factors import (Factor, Polynomial, atom_polynomial, build_interval_factor, cond_expectation,
                      edge_factor, energy, join, join_all)
from .antiuniform import (AntiUniform, Witness, basic_antiuniform_1, basic_antiuniform_e,
                          correlate_search_1, correlate_search_e, hyperedges)
from .growth import GrowthFunction
from .kvn import (Decomposition, HypergraphDecomposition, KvnConfig, ScaleLadder,
                  kvn_decompose_1d, kvn_decompose_hypergraph, telescoping_residual)
from .dynamics import DynamicalSystem, Observable, orbit_sample
from .metastability import (CallableSequence, DiagonalSequence, MetastabilityReport,
                            MultipleAverageSequence, SlidingSequence, extend_probability_space,
                            find_metastable_window, finitary_dct_probe, j_reduction_sides)
from .experiment import ExperimentConfig, RunReport, emit_report, run_experiment
from . import kernels

__version__ = "0.1.0"
