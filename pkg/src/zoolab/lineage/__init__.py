"""Lineage recovery from model weights."""

from .experiments import VARIATIONS, build_experiment, run_experiment, zoo_truth
from .kmeans import KMeansResult, kmeans, purity, select_k, silhouette
from .mother import Arborescence, MotherMatrix, kurtosis_comparison, min_arborescence, mother_matrix
from .tree import LineageTree, TreeEvalReport, evaluate_tree, recover_model_tree

__all__ = [
    "Arborescence",
    "KMeansResult",
    "LineageTree",
    "MotherMatrix",
    "TreeEvalReport",
    "VARIATIONS",
    "build_experiment",
    "evaluate_tree",
    "kmeans",
    "kurtosis_comparison",
    "min_arborescence",
    "mother_matrix",
    "purity",
    "recover_model_tree",
    "run_experiment",
    "select_k",
    "silhouette",
    "zoo_truth",
]
