"""Spectral surgery on the operator chain.

The whole-network operator factors at any layer into a left and right
piece, ``u = L @ R``.  Taking the SVD of the right piece turns the
output into an additive series over singular vectors: each vector
contributes ``alpha_k = psi_k * sigma_k * (phi_k . x)``.  The helpers
here compute that decomposition, cancel opposing contributions into a
single-signed ranking, contract vectors channel-wise into per-location
heatmaps, and assemble the final additive symbolic form of the output.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import netgraph
from .errors import (
    DimensionError,
    NormalizationError,
    NumericError,
    ResourceError,
)
from .linalg import SvdResult, as_tensor, element_budget, thin_svd
from .netgraph import NetworkModel
from .pwa import _chain_with_betas, _linearize_all

SPLIT_RTOL = 1e-8
ZERO_MAP_SUM = 1e-12


@dataclass(frozen=True)
class SpectralSplit:
    """Operator chain split at layer ``l_s`` with the right piece decomposed.

    ``R`` maps input to the layer-``l_s`` representation, ``L`` maps that
    to the output; ``L_hat = L @ U`` and ``c = sigma * (V.T @ x)`` give
    ``y = L_hat @ c + b``.
    """

    l_s: int
    R: np.ndarray
    L: np.ndarray
    svd: SvdResult
    L_hat: np.ndarray
    c: np.ndarray
    output_index: int
    bias: np.ndarray
    x: np.ndarray
    y: np.ndarray

    @property
    def singular_vectors(self) -> np.ndarray:
        """Columns are the input-space singular vectors phi_k."""
        return self.svd.V


@dataclass(frozen=True)
class AlphaDecomposition:
    """Additive contributions of each singular vector to one output row."""

    alphas: np.ndarray
    psi: np.ndarray
    residual_bias: float


@dataclass(frozen=True)
class ReducedCoefficients:
    """Order-wise cancelled coefficients of homogeneous sign.

    ``spectral_index_map[i]`` names the singular vector that dominated
    the pairings behind ``a_hat[i]``; ``a_tilde`` normalizes a_hat to
    proportional contributions summing to one.  ``pass_totals`` records
    the running sum after every pairing pass (conservation witness).
    """

    a_hat: np.ndarray
    a_tilde: np.ndarray
    spectral_index_map: tuple[int, ...]
    iterations: int
    pass_totals: tuple[float, ...] = ()


@dataclass(frozen=True)
class ContractionMap:
    """Per-location contributions whose total equals the full dot product."""

    values: np.ndarray
    spectral_index: int | None = None


@dataclass(frozen=True)
class SymbolicTerm:
    spectral_index: int
    alpha: float  # sum-preserving coefficient (raw alpha, or a_hat when reduced)
    weight: float | None  # proportional contribution a_tilde (reduced mode only)
    map: np.ndarray  # normalized contraction, sums to 1


@dataclass(frozen=True)
class SymbolicDecomposition:
    """Additive grid form of one output: sum_k alpha_k * c_hat_k + bias.

    ``remainder`` folds coefficients whose maps cannot be normalized
    (zero sum) or that fall below the rank/threshold cut, keeping
    ``reconstructed == target`` exact.
    """

    terms: tuple[SymbolicTerm, ...]
    bias_map: np.ndarray
    remainder: float
    reconstructed: float
    target: float
    output_index: int
    l_s: int

    @property
    def residual(self) -> float:
        return abs(self.reconstructed - self.target)


def _fold_chain(lins, budget):
    u, _ = _chain_with_betas(lins, budget)
    return u


def split_at(
    model: NetworkModel,
    x,
    l_s: int,
    output_index: int | None = None,
    mode: str = "secant",
    rank_tol: float = 1e-10,
    budget: int | None = None,
) -> SpectralSplit:
    """Split the linearization chain after layer ``l_s`` and SVD the right piece.

    ``l_s`` counts layers from 1; ``l_s == len(model.layers)`` makes L the
    identity row selector.  The factorization is verified against the
    directly folded whole-network operator before it is returned.
    """
    n_layers = len(model.layers)
    if not 1 <= l_s <= n_layers:
        raise DimensionError(f"split layer {l_s} outside [1, {n_layers}]")
    x, zs, lins = _linearize_all(model, x, mode, budget)
    y = zs[-1].ravel()
    if output_index is None:
        output_index = int(np.argmax(y))
    if not 0 <= output_index < y.shape[0]:
        raise DimensionError(f"output index {output_index} outside [0, {y.shape[0]})")

    u, betas = _chain_with_betas(lins, budget)
    b = np.zeros(u.shape[0])
    for beta in betas:
        b = b + beta
    right = _fold_chain(lins[:l_s], budget)
    if l_s == n_layers:
        left = np.eye(u.shape[0])
    else:
        left = _fold_chain(lins[l_s:], budget)
    limit = element_budget(budget)
    if left.shape[0] * right.shape[1] > limit:
        raise ResourceError(
            f"split product {left.shape[0]}x{right.shape[1]} exceeds "
            f"element budget {limit}"
        )

    scale = 1.0 + float(np.max(np.abs(u), initial=0.0))
    if float(np.max(np.abs(left @ right - u), initial=0.0)) > SPLIT_RTOL * scale:
        raise NumericError("left/right factorization disagrees with the operator")

    svd = thin_svd(right, rank_tol=rank_tol)
    l_hat = left @ svd.U
    c = svd.sigma * (svd.V.T @ x.ravel())

    y_scale = 1.0 + float(np.max(np.abs(y), initial=0.0))
    if float(np.max(np.abs(l_hat @ c + b - y), initial=0.0)) > SPLIT_RTOL * y_scale:
        raise NumericError("spectral reconstruction does not match the forward pass")
    return SpectralSplit(
        l_s=l_s,
        R=right,
        L=left,
        svd=svd,
        L_hat=l_hat,
        c=c,
        output_index=output_index,
        bias=b,
        x=x.ravel(),
        y=y,
    )


def alpha_decomposition(split: SpectralSplit) -> AlphaDecomposition:
    """Contributions alpha_k of each singular vector to the explained row.

    Signs are unconstrained and magnitudes need not follow the singular
    value order; only the sum plus bias is pinned to the output.
    """
    psi = split.L_hat[split.output_index, :]
    alphas = psi * split.c
    b_j = float(split.bias[split.output_index])
    y_j = float(split.y[split.output_index])
    if abs(float(alphas.sum()) + b_j - y_j) > SPLIT_RTOL * (1.0 + abs(y_j)):
        raise NumericError("alpha components do not sum back to the output")
    return AlphaDecomposition(alphas=alphas, psi=psi, residual_bias=b_j)


def reduce_coefficients(alphas) -> ReducedCoefficients:
    """Cancel opposing contributions until one sign remains.

    Positive and negative coefficients are each ordered by descending
    magnitude and added pair-wise; unpaired values carry over and the
    pass repeats on the result until all entries share a sign.  Each
    surviving entry keeps the spectral index of the larger-magnitude
    member of its pairings.  The total is preserved at every pass.
    """
    alphas = np.asarray(alphas, dtype=np.float64).ravel()
    if not np.all(np.isfinite(alphas)):
        raise NumericError("coefficients must be finite")
    entries = [(float(a), k) for k, a in enumerate(alphas) if a != 0.0]
    iterations = 0
    pass_totals = [float(sum(e[0] for e in entries))]
    while True:
        pos = sorted((e for e in entries if e[0] > 0.0), key=lambda e: -e[0])
        neg = sorted((e for e in entries if e[0] < 0.0), key=lambda e: e[0])
        if not pos or not neg:
            break
        iterations += 1
        n_pairs = min(len(pos), len(neg))
        merged = []
        for i in range(n_pairs):
            total = pos[i][0] + neg[i][0]
            if total == 0.0:
                continue
            winner = pos[i][1] if pos[i][0] >= -neg[i][0] else neg[i][1]
            merged.append((total, winner))
        merged.extend(pos[n_pairs:])
        merged.extend(neg[n_pairs:])
        entries = merged
        pass_totals.append(float(sum(e[0] for e in entries)))
    if not entries:
        warnings.warn(
            "all spectral contributions cancel; reduction is empty",
            stacklevel=2,
        )
        return ReducedCoefficients(
            a_hat=np.empty(0),
            a_tilde=np.empty(0),
            spectral_index_map=(),
            iterations=iterations,
            pass_totals=tuple(pass_totals),
        )
    a_hat = np.array([e[0] for e in entries])
    index_map = tuple(e[1] for e in entries)
    return ReducedCoefficients(
        a_hat=a_hat,
        a_tilde=a_hat / a_hat.sum(),
        spectral_index_map=index_map,
        iterations=iterations,
        pass_totals=tuple(pass_totals),
    )


def feature_contraction(
    phi, x, axis: int = -1, spectral_index: int | None = None
) -> ContractionMap:
    """Dot product carried out along the channel axis only.

    The resulting per-location map sums to the full dot product
    ``phi . x``, so locations whose channels cancel show up as zero
    instead of inflating the attribution.
    """
    phi = as_tensor(phi)
    x = as_tensor(x)
    if phi.shape != x.shape:
        raise DimensionError(f"shape mismatch: {phi.shape} vs {x.shape}")
    prod = phi * x
    values = prod if phi.ndim == 1 else prod.sum(axis=axis)
    return ContractionMap(values=values, spectral_index=spectral_index)


def feature_average(
    phi, axis: int = -1, spectral_index: int | None = None
) -> ContractionMap:
    """Plain channel average of a singular vector, for side-by-side output.

    Unlike the contraction this ignores the input, so it cannot show
    location-wise cancellation; it exists only as a comparison rendering.
    """
    phi = as_tensor(phi)
    values = phi.copy() if phi.ndim == 1 else phi.mean(axis=axis)
    return ContractionMap(values=values, spectral_index=spectral_index)


def change_of_basis(split: SpectralSplit) -> np.ndarray:
    """Raw projections phi_k . x of the input onto every singular vector.

    Diagnostic only: the projections tend to be of similar size across
    the spectrum, so they rank components poorly compared to alphas.
    """
    return split.svd.V.T @ split.x


def _map_shape(model: NetworkModel, grid_shape):
    """Tensor shape to reshape input-space vectors into for heatmaps.

    Normalized to either (H, W, C) or a 1-D point list; a bare (H, W)
    grid is treated as single-channel.
    """
    if grid_shape is not None:
        shape = tuple(int(s) for s in grid_shape)
    elif model.display_shape is not None:
        shape = model.display_shape
    else:
        shape = model.input_shape
    if len(shape) == 2:
        shape = shape + (1,)
    size = int(np.prod(shape))
    if size != int(np.prod(model.input_shape)):
        raise DimensionError(
            f"grid shape {shape} incompatible with input size "
            f"{int(np.prod(model.input_shape))}"
        )
    return shape


def contract_input_vector(
    model: NetworkModel, vec, x, grid_shape=None, spectral_index=None, average=False
) -> ContractionMap:
    """Contraction (or average) of an input-space vector on the model's grid."""
    shape = _map_shape(model, grid_shape)
    vec = as_tensor(vec).reshape(shape)
    if average:
        return feature_average(vec, spectral_index=spectral_index)
    x = as_tensor(x).reshape(shape)
    return feature_contraction(vec, x, spectral_index=spectral_index)


def symbolic(
    model: NetworkModel,
    x,
    l_s: int,
    output_index: int | None = None,
    reduce: bool = False,
    grid_shape=None,
    alpha_threshold: float | None = None,
    mode: str = "secant",
    rank_tol: float = 1e-10,
    budget: int | None = None,
) -> SymbolicDecomposition:
    """Additive symbolic form of one output over the input grid.

    Components beyond the numerical rank (or, optionally, below
    ``alpha_threshold`` in magnitude) fold into the remainder, as do
    components whose contraction sums to zero and therefore cannot be
    normalized.  With ``reduce=True`` the coefficients are first
    cancelled into a homogeneous sign and each term shows the dominant
    singular vector of its pairing chain.
    """
    split = split_at(
        model, x, l_s, output_index, mode=mode, rank_tol=rank_tol, budget=budget
    )
    return symbolic_from_split(
        model,
        split,
        reduce=reduce,
        grid_shape=grid_shape,
        alpha_threshold=alpha_threshold,
    )


def symbolic_from_split(
    model: NetworkModel,
    split: SpectralSplit,
    reduce: bool = False,
    grid_shape=None,
    alpha_threshold: float | None = None,
) -> SymbolicDecomposition:
    """Symbolic form built from an existing split (no recomputation)."""
    decomp = alpha_decomposition(split)
    rank = split.svd.rank_used
    remainder = float(decomp.alphas[rank:].sum())
    kept: list[tuple[float, int, float | None]] = []  # (coeff, spectral idx, weight)
    if reduce:
        reduced = reduce_coefficients(decomp.alphas[:rank])
        denom = reduced.a_hat.sum() if reduced.a_hat.size else 1.0
        for a, k in zip(reduced.a_hat, reduced.spectral_index_map):
            if alpha_threshold is not None and abs(a) < alpha_threshold:
                remainder += float(a)
                continue
            kept.append((float(a), int(k), float(a / denom)))
    else:
        for k, a in enumerate(decomp.alphas[:rank]):
            if alpha_threshold is not None and abs(a) < alpha_threshold:
                remainder += float(a)
                continue
            kept.append((float(a), int(k), None))

    shape = _map_shape(model, grid_shape)
    x_shaped = split.x.reshape(shape)
    terms = []
    for coeff, k, weight in kept:
        phi = split.svd.V[:, k].reshape(shape)
        cmap = feature_contraction(phi, x_shaped, spectral_index=k)
        total = float(cmap.values.sum())
        if abs(total) < ZERO_MAP_SUM:
            remainder += coeff
            continue
        terms.append(
            SymbolicTerm(
                spectral_index=k,
                alpha=coeff,
                weight=weight,
                map=cmap.values / total,
            )
        )

    grid_cells = shape[:-1] if len(shape) == 3 else shape
    n_cells = int(np.prod(grid_cells))
    b_j = float(decomp.residual_bias)
    bias_map = np.full(grid_cells, b_j / n_cells)

    grid = bias_map.copy()
    for term in terms:
        grid = grid + term.alpha * term.map
    reconstructed = float(grid.sum()) + remainder
    return SymbolicDecomposition(
        terms=tuple(terms),
        bias_map=bias_map,
        remainder=remainder,
        reconstructed=reconstructed,
        target=float(split.y[split.output_index]),
        output_index=split.output_index,
        l_s=split.l_s,
    )


def sv_similarity(vectors, tol: float = 1e-8) -> np.ndarray:
    """Gram matrix of pairwise inner products between unit vectors.

    Inputs must already be unit normalized (singular vectors are); the
    result is then a cosine similarity in [-1, 1] up to roundoff.
    """
    rows = [as_tensor(v).ravel() for v in vectors]
    if not rows:
        return np.empty((0, 0))
    dim = rows[0].shape[0]
    for v in rows:
        if v.shape[0] != dim:
            raise DimensionError("similarity inputs must share one dimension")
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > tol:
            raise NormalizationError(f"vector norm {norm} is not 1 within {tol}")
    stack = np.stack(rows)
    return stack @ stack.T


@dataclass(frozen=True)
class LayerSummary:
    """One stop of the per-layer sweep."""

    l_s: int
    spectrum: np.ndarray | None
    alphas: np.ndarray | None
    reduced: ReducedCoefficients | None
    top_index: int | None
    top_map: ContractionMap | None
    residual: float | None
    error: str | None = None


def layer_sweep(
    model: NetworkModel,
    x,
    output_index: int | None = None,
    grid_shape=None,
    mode: str = "secant",
    rank_tol: float = 1e-10,
    budget: int | None = None,
) -> list[LayerSummary]:
    """Spectral summaries at every split layer.

    Resource failures at one layer are recorded and the sweep continues;
    the reconstruction identity is checked at each successful stop.
    """
    summaries: list[LayerSummary] = []
    for l_s in range(1, len(model.layers) + 1):
        try:
            split = split_at(
                model, x, l_s, output_index,
                mode=mode, rank_tol=rank_tol, budget=budget,
            )
            decomp = alpha_decomposition(split)
        except ResourceError as exc:
            summaries.append(
                LayerSummary(
                    l_s=l_s, spectrum=None, alphas=None, reduced=None,
                    top_index=None, top_map=None, residual=None, error=str(exc),
                )
            )
            continue
        rank = split.svd.rank_used
        reduced = reduce_coefficients(decomp.alphas[:rank])
        y_j = float(split.y[split.output_index])
        residual = abs(float(decomp.alphas.sum()) + decomp.residual_bias - y_j)
        if reduced.a_tilde.size:
            best = int(np.argmax(np.abs(reduced.a_tilde)))
            top_index = int(reduced.spectral_index_map[best])
            top_map = contract_input_vector(
                model, split.svd.V[:, top_index], x,
                grid_shape=grid_shape, spectral_index=top_index,
            )
        else:
            top_index, top_map = None, None
        summaries.append(
            LayerSummary(
                l_s=l_s,
                spectrum=split.svd.sigma,
                alphas=decomp.alphas,
                reduced=reduced,
                top_index=top_index,
                top_map=top_map,
                residual=residual,
            )
        )
    return summaries
