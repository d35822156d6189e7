"""Feature selection by pruning a diverse tree ensemble with a weighted lasso."""

from .dataset import Dataset, DataValidationError, load_csv, make_signal_dataset
from .estimators import ControlBurnClassifier, ControlBurnRegressor
from .grow import Forest, grow_forest
from .prune import CostSpec, build_problem, solve
from .select import baseline_mdi_select, controlburn
from .tree import fit_tree, mdi_importances

__version__ = "0.1.0"

__all__ = [
    "ControlBurnClassifier",
    "ControlBurnRegressor",
    "CostSpec",
    "DataValidationError",
    "Dataset",
    "Forest",
    "baseline_mdi_select",
    "build_problem",
    "controlburn",
    "fit_tree",
    "grow_forest",
    "load_csv",
    "make_signal_dataset",
    "mdi_importances",
    "solve",
]
