"""Clustered receding-horizon power management for large battery packs."""

from __future__ import annotations

from clusterbess.aggregate import ClusterModel, ClusterSet, aggregate, aggregate_all, singleton_set
from clusterbess.cell import CellParams, CellState, electrical_step, thermal_step
from clusterbess.clustering import gap_statistic, kmeans, normalize_features, select_k_tolerance
from clusterbess.conic import ConicProblem, Solution, solve
from clusterbess.dispatch import HorizonInput, build_inter_cluster, extract_first_step
from clusterbess.pack import Pack, PackState, table2_population
from clusterbess.profiles import LoadProfile, load_profile_csv, reference_profile
from clusterbess.sim import SimConfig, SimTrace, baseline_cell_level, baseline_uniform, run

__version__ = "0.1.0"

__all__ = [
    "CellParams",
    "CellState",
    "ClusterModel",
    "ClusterSet",
    "ConicProblem",
    "HorizonInput",
    "LoadProfile",
    "Pack",
    "PackState",
    "SimConfig",
    "SimTrace",
    "Solution",
    "aggregate",
    "aggregate_all",
    "baseline_cell_level",
    "baseline_uniform",
    "build_inter_cluster",
    "electrical_step",
    "extract_first_step",
    "gap_statistic",
    "kmeans",
    "load_profile_csv",
    "normalize_features",
    "reference_profile",
    "run",
    "select_k_tolerance",
    "singleton_set",
    "solve",
    "table2_population",
    "thermal_step",
]
