"""Clustering, oversampling, trees, neural networks and scores."""

from .cart import CartModel, best_split, cart_fit, cart_predict
from .kmeans import (
    ClusterModel, DegenerateClusterError, assign, kmeans_fit, label_clusters, minmax_scale,
    superior_clusters,
)
from .metrics import (
    ClassificationReport, ExploratoryStats, box_summary, classification_metrics,
    exploratory_stats,
)
from .mlp import DivergenceError, MlpConfig, MlpModel, mlp_train, softmax, train_test_split
from .smote import InsufficientDataError, nearest_neighbors, smote_oversample
