from .knn import KnnGraph, knn_graph, pairwise_distances
from .ksweep import NoPlateauWarning, SweepPoint, k_sweep, pick_plateau, select_k_opt
from .louvain import Clustering, louvain, modularity
from .pca import FeatureMatrix, PCAResult, pca_reduce
from .repro import ClusterConfig, ClusterRun, cluster_features, reproducibility_suite

__all__ = [
    "FeatureMatrix", "PCAResult", "pca_reduce", "KnnGraph", "knn_graph", "pairwise_distances",
    "Clustering", "louvain", "modularity", "SweepPoint", "NoPlateauWarning", "k_sweep",
    "pick_plateau", "select_k_opt", "ClusterConfig", "ClusterRun", "cluster_features",
    "reproducibility_suite",
]
