"""Fictitious play with inertia over communication networks.

Submodules: ``games`` (normal-form and congestion games), ``consensus``
(graphs, weight construction and tracking), ``dynamics`` (central and
distributed learning runs), ``experiments`` (UAV study) and ``cli``.
"""

from netfp.consensus import CommGraph, build_doubly_stochastic, build_fp_weights, make_topology
from netfp.dynamics import DynamicsConfig, RunTrace, run_dfp, run_djsfp, run_fp_inertia, run_jsfp_central
from netfp.games import CongestionFormGame, NormalFormGame, find_pure_nash, is_pure_nash

__version__ = "0.1.0"

__all__ = [
    "CommGraph",
    "CongestionFormGame",
    "DynamicsConfig",
    "NormalFormGame",
    "RunTrace",
    "build_doubly_stochastic",
    "build_fp_weights",
    "find_pure_nash",
    "is_pure_nash",
    "make_topology",
    "run_dfp",
    "run_djsfp",
    "run_fp_inertia",
    "run_jsfp_central",
]
