"""Within-class and between-class similarity graphs and their Laplacians.

This module gathers the public names of ``graphs`` under one import.
"""

from .graphs import (  # noqa: F401
    SimilarityGraphs,
    GraphLaplacian,
    knn_indices,
    build_graphs_from_distances,
    build_graphs,
    laplacian,
)

__all__ = [
    "SimilarityGraphs",
    "GraphLaplacian",
    "knn_indices",
    "build_graphs_from_distances",
    "build_graphs",
    "laplacian",
]
