"""The rotated-squares study.

A synthetic dataset of randomly rotated bright squares is autoencoded by
a small fully connected network (optionally bias-free), and the learned
operator's spectrum is compared against the SVD of the raw data matrix.
Everything here is seed-deterministic so the study can be pinned in
tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import netgraph, pwa
from .errors import DimensionError, NumericError, TrainingError
from .linalg import SvdResult, as_tensor, thin_svd
from .netgraph import Dense, NetworkModel, ReLU
from .spectral import ContractionMap, feature_contraction


@dataclass(frozen=True)
class SquaresConfig:
    canvas: int = 64
    square_side: int = 32
    count: int = 2048
    seed: int = 0
    angle_start: float = 0.0
    angle_stop: float = 90.0  # square symmetry makes [0, 90) exhaustive

    def __post_init__(self):
        if self.square_side * np.sqrt(2.0) > self.canvas:
            raise DimensionError(
                "square does not fit the canvas under rotation "
                f"({self.square_side} * sqrt(2) > {self.canvas})"
            )
        if self.count < 1:
            raise DimensionError("count must be positive")


def rasterize_square(canvas: int, side: int, angle_deg: float) -> np.ndarray:
    """Binary image of a centered square rotated by ``angle_deg``.

    A pixel lights up iff its center, rotated back by the angle about
    the canvas center, falls inside the axis-aligned square.  No
    anti-aliasing: the dataset is exactly reproducible.
    """
    ctr = canvas / 2.0
    coords = np.arange(canvas) + 0.5 - ctr
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    back_x = cos_t * xx + sin_t * yy
    back_y = -sin_t * xx + cos_t * yy
    half = side / 2.0
    inside = (np.abs(back_x) <= half) & (np.abs(back_y) <= half)
    return inside.astype(np.float64)


def generate_squares(cfg: SquaresConfig) -> tuple[np.ndarray, np.ndarray]:
    """Dataset stack (count, canvas, canvas) plus the angle labels."""
    rng = np.random.default_rng(cfg.seed)
    angles = rng.uniform(cfg.angle_start, cfg.angle_stop, size=cfg.count)
    images = np.stack(
        [rasterize_square(cfg.canvas, cfg.square_side, a) for a in angles]
    )
    return images, angles


def rotate_image(img: np.ndarray, angle_deg: float) -> np.ndarray:
    """Bilinear rotation about the image center, zero outside."""
    img = as_tensor(img)
    if img.ndim != 2:
        raise DimensionError("rotate_image expects a 2-D image")
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    src_x = cos_t * xx + sin_t * yy + cx
    src_y = -sin_t * xx + cos_t * yy + cy
    x0 = np.floor(src_x).astype(int)
    y0 = np.floor(src_y).astype(int)
    fx = src_x - x0
    fy = src_y - y0
    out = np.zeros_like(img)
    for dy in (0, 1):
        for dx in (0, 1):
            wgt = (fx if dx else 1 - fx) * (fy if dy else 1 - fy)
            xs = x0 + dx
            ys = y0 + dy
            valid = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
            vals = np.zeros_like(img)
            vals[valid] = img[ys[valid], xs[valid]]
            out += wgt * vals
    return out


def angular_variance(img: np.ndarray, step_deg: float = 15.0) -> float:
    """Mean squared change of an image under rotations, norm-relative.

    Rotationally symmetric images score near zero; square-like ones
    score high.  Used to compare data-derived and operator-derived
    singular vectors.
    """
    img = as_tensor(img)
    denom = float(np.sum(img * img))
    if denom == 0.0:
        return 0.0
    angles = np.arange(step_deg, 360.0, step_deg)
    diffs = [float(np.sum((rotate_image(img, a) - img) ** 2)) for a in angles]
    return float(np.mean(diffs)) / denom


@dataclass(frozen=True)
class TrainConfig:
    widths: tuple[int, ...] = (4096, 512, 64, 8, 64, 512, 4096)
    use_bias: bool = False
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    # He init throughout; the last layer is scaled down so training starts
    # near the zero function instead of collapsing into it (a bias-free
    # ReLU chain cannot recover once every unit is dead).
    final_init_scale: float = 0.1

    def __post_init__(self):
        if len(self.widths) < 2:
            raise DimensionError("need at least input and output widths")
        if min(self.widths[1:-1], default=8) != 8:
            raise DimensionError("architecture must bottleneck at width 8")


def _init_params(cfg: TrainConfig, rng) -> list[list[np.ndarray | None]]:
    params = []
    last = len(cfg.widths) - 2
    for i, (fan_in, fan_out) in enumerate(zip(cfg.widths[:-1], cfg.widths[1:])):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        if i == last:
            w *= cfg.final_init_scale
        b = np.zeros(fan_out) if cfg.use_bias else None
        params.append([w, b])
    return params


def _params_to_model(params, cfg: TrainConfig, name: str) -> NetworkModel:
    layers: list = []
    last = len(params) - 1
    for i, (w, b) in enumerate(params):
        layers.append(Dense(w, b))
        if i != last:
            layers.append(ReLU())
    return NetworkModel(
        input_shape=(cfg.widths[0],),
        layers=tuple(layers),
        name=name,
        display_shape=_square_display(cfg.widths[0]),
    )


def _square_display(size: int):
    side = int(round(np.sqrt(size)))
    return (side, side, 1) if side * side == size else None


def train_autoencoder(
    data: np.ndarray, cfg: TrainConfig
) -> tuple[NetworkModel, np.ndarray]:
    """Mini-batch SGD with momentum on the reconstruction MSE.

    ``data`` is (n, input_width); returns the trained model and the
    per-epoch mean batch loss.  Deterministic for a fixed seed.
    """
    data = as_tensor(data)
    if data.ndim != 2 or data.shape[1] != cfg.widths[0]:
        raise DimensionError(
            f"data must be (n, {cfg.widths[0]}), got {data.shape}"
        )
    rng = np.random.default_rng(cfg.seed)
    params = _init_params(cfg, rng)
    velocity = [
        [np.zeros_like(w), None if b is None else np.zeros_like(b)]
        for w, b in params
    ]
    n = data.shape[0]
    n_layers = len(params)
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            batch = data[order[start : start + cfg.batch_size]]
            acts = [batch]
            z = batch
            for i, (w, b) in enumerate(params):
                z = z @ w.T
                if b is not None:
                    z = z + b
                if i != n_layers - 1:
                    z = np.maximum(z, 0.0)
                acts.append(z)
            diff = z - batch
            loss = float(np.mean(diff * diff))
            batch_losses.append(loss)
            grad = 2.0 * diff / diff.size
            for i in range(n_layers - 1, -1, -1):
                w, b = params[i]
                g_w = grad.T @ acts[i]
                g_b = grad.sum(axis=0) if b is not None else None
                grad = grad @ w
                if i > 0:
                    grad = grad * (acts[i] > 0.0)
                vw, vb = velocity[i]
                vw *= cfg.momentum
                vw -= cfg.learning_rate * g_w
                params[i][0] = w + vw
                if b is not None:
                    vb *= cfg.momentum
                    vb -= cfg.learning_rate * g_b
                    params[i][1] = b + vb
        epoch_loss = float(np.mean(batch_losses))
        if not np.isfinite(epoch_loss):
            raise TrainingError(
                f"loss became non-finite at epoch {epoch}", epoch=epoch
            )
        losses.append(epoch_loss)
    bias_tag = "bias" if cfg.use_bias else "nobias"
    name = f"toy-ae-{bias_tag}-seed{cfg.seed}"
    return _params_to_model(params, cfg, name), np.array(losses)


def data_matrix_svd(data: np.ndarray) -> SvdResult:
    """Thin SVD of the matrix whose rows are the flattened samples.

    No mean centering: the comparison is against raw reconstruction
    bases, and centering would change the leading vector.
    """
    data = as_tensor(data)
    if data.ndim != 2 or data.shape[0] < 2:
        raise DimensionError("need a 2-D matrix with at least 2 samples")
    return thin_svd(data)


@dataclass(frozen=True)
class OperatorSpectrum:
    """Whole-operator SVD summary for one sample."""

    sample_index: int
    sigma: np.ndarray
    sigma_normalized: np.ndarray
    rank_used: int
    coefficients: np.ndarray  # sigma_k * (phi_k . x)
    top_vectors: tuple[np.ndarray, ...]  # right SVs, input space
    top_contractions: tuple[ContractionMap, ...]
    top_left_vectors: tuple[np.ndarray, ...]  # left SVs, output space
    degenerate: bool


@dataclass(frozen=True)
class SpectraComparison:
    data_sigma: np.ndarray
    data_sigma_normalized: np.ndarray
    data_top_vectors: tuple[np.ndarray, ...]
    samples: tuple[OperatorSpectrum, ...]
    bottleneck: int


def _model_bottleneck(model: NetworkModel) -> int:
    widths = [int(np.prod(s)) for s in model.shapes()]
    return min(widths)


def compare_spectra(
    model: NetworkModel,
    data: np.ndarray,
    sample_indices,
    top_k: int = 4,
    rank_tol: float = 1e-10,
) -> SpectraComparison:
    """Data-matrix spectrum vs. per-sample operator spectra.

    The operator factors through the bottleneck, so its numerical rank
    must never exceed the bottleneck width; this is enforced here.
    """
    data = as_tensor(data)
    flat = data.reshape(data.shape[0], -1)
    d_svd = data_matrix_svd(flat)
    d_norm = d_svd.sigma / d_svd.sigma[0] if d_svd.sigma[0] > 0 else d_svd.sigma
    d_top = tuple(d_svd.V[:, i].copy() for i in range(min(top_k, d_svd.V.shape[1])))

    bottleneck = _model_bottleneck(model)
    samples = []
    for idx in sample_indices:
        x = flat[int(idx)]
        op = pwa.extract_affine(model, x)
        svd = thin_svd(op.u, rank_tol=rank_tol)
        if svd.rank_used > bottleneck:
            raise NumericError(
                f"operator rank {svd.rank_used} exceeds bottleneck {bottleneck}"
            )
        degenerate = bool(svd.sigma.size == 0 or svd.sigma[0] == 0.0)
        if degenerate:
            norm = svd.sigma.copy()
            tops: tuple = ()
            contractions: tuple = ()
            lefts: tuple = ()
        else:
            norm = svd.sigma / svd.sigma[0]
            k = min(top_k, svd.V.shape[1])
            tops = tuple(svd.V[:, i].copy() for i in range(k))
            shape = model.display_shape or model.input_shape
            contractions = tuple(
                feature_contraction(
                    svd.V[:, i].reshape(shape), x.reshape(shape), spectral_index=i
                )
                for i in range(k)
            )
            lefts = tuple(svd.U[:, i].copy() for i in range(k))
        samples.append(
            OperatorSpectrum(
                sample_index=int(idx),
                sigma=svd.sigma,
                sigma_normalized=norm,
                rank_used=svd.rank_used,
                coefficients=svd.sigma * (svd.V.T @ x),
                top_vectors=tops,
                top_contractions=contractions,
                top_left_vectors=lefts,
                degenerate=degenerate,
            )
        )
    return SpectraComparison(
        data_sigma=d_svd.sigma,
        data_sigma_normalized=d_norm,
        data_top_vectors=d_top,
        samples=tuple(samples),
        bottleneck=bottleneck,
    )


@dataclass(frozen=True)
class BiasStudy:
    """Bias-term contributions next to the matched-filter part u @ x."""

    betas: tuple[np.ndarray, ...]
    bias_layers: tuple[int, ...]  # indices of layers with a bias parameter
    total: np.ndarray
    ux: np.ndarray
    output: np.ndarray
    residual: float


def bias_study(model: NetworkModel, x) -> BiasStudy:
    """Per-layer bias maps and the reconstruction identity check."""
    x = as_tensor(x)
    op = pwa.extract_affine(model, x)
    decomp = pwa.bias_decomposition(model, x)
    ux = op.u @ x.ravel()
    y = netgraph.forward(model, x)[-1].ravel()
    residual = float(np.max(np.abs(y - ux - decomp.total), initial=0.0))
    bias_layers = tuple(
        i
        for i, layer in enumerate(model.layers)
        if getattr(layer, "bias", None) is not None
    )
    return BiasStudy(
        betas=decomp.betas,
        bias_layers=bias_layers,
        total=decomp.total,
        ux=ux,
        output=y,
        residual=residual,
    )
