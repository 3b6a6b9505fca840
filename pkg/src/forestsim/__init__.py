"""Supervised similarity from random-forest proximities, with a KNN yardstick."""

from .dataset import (
    DataValidationError,
    Dataset,
    EncodedMatrix,
    FeatureSchema,
    GeneratorConfig,
    MixedTypeEncoder,
    SplitIndices,
    generate_synthetic_bonds,
    kfold_indices,
    load_csv,
    one_hot_encode,
    train_test_split,
)
from .distances import EuclideanDistance, GowerDistance, GowerRanges, euclidean_matrix, gower_matrix
from .evaluation import EvalReport, grid_search_cv, k_sweep, mape, mse, rmse
from .forest import ForestRegressor, LeafAssignment, fit_forest, load_model, permutation_importance, save_model
from .knn import KnnConfig, PrecomputedKNNRegressor, knn_predict
from .proximity import (
    DistanceMatrix,
    ProximityDistance,
    ProximityMatrix,
    external_proximity,
    oob_proximity,
    proximity_bruteforce,
    to_distance,
)
from .tree import RegressionTree, TreeParams, fit_tree, leaf_index, predict_tree

__version__ = "0.1.0"
