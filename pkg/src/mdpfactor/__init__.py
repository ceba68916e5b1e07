"""Factor a sequential decision process into independent sub-problems from logged transitions."""

__version__ = "0.1.0"

from .dataset import (
    DatasetError,
    TransitionDataset,
    VariableSpec,
    load_dataset,
    make_schema,
    minmax_normalize,
    save_dataset,
    shuffle_column,
)
from .estimators import MutualInformationMatrix, StructureFactorizer, dataset_from_arrays
from .factorizer import (
    AdjacencyMatrix,
    Cluster,
    Factorization,
    block_diagonalize,
    export_factorization,
    frobenius_error,
    threshold_matrix,
    tune_threshold,
)
from .mi import (
    MiMatrix,
    bias_corrected_mi,
    compute_mi_matrix,
    estimate_pair_mi,
    estimate_pair_mi_bruteforce,
)
