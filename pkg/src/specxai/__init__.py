"""Spectral decomposition toolkit for locally linear deep networks.

The toolkit extracts the exact affine form a network takes at any given
input, splits the operator chain at a chosen layer, and decomposes the
prediction into ranked singular-vector contributions with per-location
heatmaps and an additive symbolic representation.
"""

from .errors import (
    CapabilityError,
    DimensionError,
    ModelFormatError,
    NormalizationError,
    NumericError,
    RegionBoundaryError,
    ResourceError,
    SpecxaiError,
    TrainingError,
    UsageError,
)
from .linalg import SvdResult, conv2d_to_matrix, matmul, thin_svd
from .modelio import load_model, load_tensor, save_model, save_tensor
from .netgraph import (
    AvgPool,
    Concat,
    Conv2d,
    Dense,
    Flatten,
    LayerLinearization,
    MaxPool,
    NetworkModel,
    ReLU,
    Residual,
    Sigmoid,
    Tanh,
    activation_pattern,
    forward,
    linearize_layer,
)
from .pwa import (
    AffineOperator,
    BiasDecomposition,
    bias_decomposition,
    extract_affine,
    jacobian_check,
    same_region,
)
from .spectral import (
    AlphaDecomposition,
    ContractionMap,
    ReducedCoefficients,
    SpectralSplit,
    SymbolicDecomposition,
    alpha_decomposition,
    change_of_basis,
    feature_average,
    feature_contraction,
    layer_sweep,
    reduce_coefficients,
    split_at,
    sv_similarity,
    symbolic,
)
from .toylab import (
    SquaresConfig,
    TrainConfig,
    bias_study,
    compare_spectra,
    data_matrix_svd,
    generate_squares,
    train_autoencoder,
)

__version__ = "0.1.0"
