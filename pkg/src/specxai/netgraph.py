"""Layer vocabulary for locally linear networks.

Each supported layer is an affine map for any fixed input, so a whole
network linearizes into an explicit (matrix, bias) pair at any point.
This module runs forward passes and produces the per-layer linearization
``z_out.ravel() == W_eff @ z_in.ravel() + b_eff`` together with the
activation signature that identifies the surrounding linear region.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import CapabilityError, DimensionError
from .linalg import as_tensor, conv2d_output_shape, conv2d_to_matrix

Shape = tuple[int, ...]

# Below |z| = ZERO_PREACT the secant slope of a smooth activation is
# replaced by its slope at the origin.
ZERO_PREACT = 1e-12

# Ternary signature states for indicator-style activations.
SIG_OFF, SIG_ON, SIG_BOUNDARY = 0, 1, 2


def _freeze(obj, name, value):
    object.__setattr__(obj, name, value)


def _opt_tensor(v):
    return None if v is None else as_tensor(v)


@dataclass(frozen=True)
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray | None = None

    def __post_init__(self):
        _freeze(self, "weight", as_tensor(self.weight))
        _freeze(self, "bias", _opt_tensor(self.bias))
        if self.weight.ndim != 2:
            raise DimensionError("Dense weight must be 2-D")
        if self.bias is not None and self.bias.shape != (self.weight.shape[0],):
            raise DimensionError("Dense bias does not match weight rows")


@dataclass(frozen=True)
class Conv2d:
    kernel: np.ndarray  # (KH, KW, Cin, Cout), channels-last
    bias: np.ndarray | None = None
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    dilation: tuple[int, int] = (1, 1)

    def __post_init__(self):
        _freeze(self, "kernel", as_tensor(self.kernel))
        _freeze(self, "bias", _opt_tensor(self.bias))
        _freeze(self, "stride", tuple(int(s) for s in self.stride))
        _freeze(self, "padding", tuple(int(p) for p in self.padding))
        _freeze(self, "dilation", tuple(int(d) for d in self.dilation))
        if self.kernel.ndim != 4:
            raise DimensionError("Conv2d kernel must be 4-D (KH,KW,Cin,Cout)")
        if self.bias is not None and self.bias.shape != (self.kernel.shape[3],):
            raise DimensionError("Conv2d bias does not match output channels")


@dataclass(frozen=True)
class AvgPool:
    window: tuple[int, int]
    stride: tuple[int, int] | None = None

    def __post_init__(self):
        _freeze(self, "window", tuple(int(w) for w in self.window))
        _freeze(self, "stride", self.window if self.stride is None
                else tuple(int(s) for s in self.stride))


@dataclass(frozen=True)
class MaxPool:
    window: tuple[int, int]
    stride: tuple[int, int] | None = None

    def __post_init__(self):
        _freeze(self, "window", tuple(int(w) for w in self.window))
        _freeze(self, "stride", self.window if self.stride is None
                else tuple(int(s) for s in self.stride))


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Sigmoid:
    pass


@dataclass(frozen=True)
class Tanh:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Residual:
    """y = skip @ x.ravel() + inner(x); skip defaults to identity."""

    inner: tuple["LayerSpec", ...]
    skip: np.ndarray | None = None

    def __post_init__(self):
        _freeze(self, "inner", tuple(self.inner))
        _freeze(self, "skip", _opt_tensor(self.skip))
        if not self.inner:
            raise DimensionError("Residual needs a non-empty inner chain")


@dataclass(frozen=True)
class Concat:
    """Two branches combined as w_a @ f_a(x) + w_b @ f_b(x) + bias."""

    branch_a: tuple["LayerSpec", ...]
    branch_b: tuple["LayerSpec", ...]
    w_a: np.ndarray
    w_b: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        _freeze(self, "branch_a", tuple(self.branch_a))
        _freeze(self, "branch_b", tuple(self.branch_b))
        _freeze(self, "w_a", as_tensor(self.w_a))
        _freeze(self, "w_b", as_tensor(self.w_b))
        _freeze(self, "bias", _opt_tensor(self.bias))
        if not self.branch_a or not self.branch_b:
            raise DimensionError("Concat needs two non-empty branches")
        if self.w_a.shape[0] != self.w_b.shape[0]:
            raise DimensionError("Concat combiners must agree on output size")


LayerSpec = Union[
    Dense, Conv2d, AvgPool, MaxPool, ReLU, Sigmoid, Tanh, Flatten, Residual, Concat
]


def _pool_output_shape(layer, in_shape: Shape) -> Shape:
    if len(in_shape) != 3:
        raise DimensionError(f"pool layers need (H, W, C) input, got {in_shape}")
    h, w, c = in_shape
    (wh, ww), (sh, sw) = layer.window, layer.stride
    if wh > h or ww > w:
        raise DimensionError(f"pool window {layer.window} larger than input {in_shape}")
    return ((h - wh) // sh + 1, (w - ww) // sw + 1, c)


def layer_output_shape(layer: LayerSpec, in_shape: Shape) -> Shape:
    """Shape a layer produces for the given input shape (validating)."""
    size = int(np.prod(in_shape))
    if isinstance(layer, Dense):
        if size != layer.weight.shape[1]:
            raise DimensionError(
                f"Dense expects input size {layer.weight.shape[1]}, got {in_shape}"
            )
        return (layer.weight.shape[0],)
    if isinstance(layer, Conv2d):
        if len(in_shape) != 3:
            raise DimensionError(f"Conv2d needs (H, W, C) input, got {in_shape}")
        return conv2d_output_shape(
            in_shape, layer.kernel.shape, layer.stride, layer.padding, layer.dilation
        )
    if isinstance(layer, (AvgPool, MaxPool)):
        return _pool_output_shape(layer, in_shape)
    if isinstance(layer, (ReLU, Sigmoid, Tanh)):
        return in_shape
    if isinstance(layer, Flatten):
        return (size,)
    if isinstance(layer, Residual):
        inner_out = chain_output_shape(layer.inner, in_shape)
        inner_size = int(np.prod(inner_out))
        if layer.skip is None:
            if inner_size != size:
                raise DimensionError(
                    "Residual without skip matrix needs matching sizes "
                    f"({size} vs {inner_size})"
                )
        elif layer.skip.shape != (inner_size, size):
            raise DimensionError(
                f"Residual skip must be {(inner_size, size)}, got {layer.skip.shape}"
            )
        return inner_out
    if isinstance(layer, Concat):
        out_a = int(np.prod(chain_output_shape(layer.branch_a, in_shape)))
        out_b = int(np.prod(chain_output_shape(layer.branch_b, in_shape)))
        if layer.w_a.shape[1] != out_a or layer.w_b.shape[1] != out_b:
            raise DimensionError("Concat combiner columns do not match branch outputs")
        return (layer.w_a.shape[0],)
    raise CapabilityError(f"unsupported layer kind: {type(layer).__name__}")


def chain_output_shape(layers, in_shape: Shape) -> Shape:
    shape = tuple(in_shape)
    for layer in layers:
        shape = layer_output_shape(layer, shape)
    return shape


@dataclass(frozen=True)
class NetworkModel:
    """An ordered chain of layer specs with a fixed input shape.

    ``display_shape`` optionally records the (H, W, C) grid used to
    render heatmaps when the input itself is stored flat.
    """

    input_shape: Shape
    layers: tuple[LayerSpec, ...]
    name: str = "model"
    display_shape: Shape | None = None

    def __post_init__(self):
        _freeze(self, "input_shape", tuple(int(s) for s in self.input_shape))
        _freeze(self, "layers", tuple(self.layers))
        if self.display_shape is not None:
            _freeze(self, "display_shape", tuple(int(s) for s in self.display_shape))
        if not self.layers:
            raise DimensionError("a model needs at least one layer")
        chain_output_shape(self.layers, self.input_shape)  # validates the chain

    def shapes(self) -> list[Shape]:
        """Shapes of z_0 .. z_L through the chain."""
        out = [self.input_shape]
        for layer in self.layers:
            out.append(layer_output_shape(layer, out[-1]))
        return out

    @property
    def output_shape(self) -> Shape:
        return self.shapes()[-1]


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def layer_forward(layer: LayerSpec, z: np.ndarray) -> np.ndarray:
    """Apply one layer to a single (unbatched) tensor."""
    if isinstance(layer, Dense):
        out = layer.weight @ z.ravel()
        return out + layer.bias if layer.bias is not None else out
    if isinstance(layer, Conv2d):
        out_shape = layer_output_shape(layer, z.shape)
        m = conv2d_to_matrix(
            layer.kernel, z.shape, layer.stride, layer.padding, layer.dilation
        )
        out = (m @ z.ravel()).reshape(out_shape)
        if layer.bias is not None:
            out = out + layer.bias
        return out
    if isinstance(layer, AvgPool):
        return _pool_reduce(layer, z, np.mean)
    if isinstance(layer, MaxPool):
        return _pool_reduce(layer, z, np.max)
    if isinstance(layer, ReLU):
        return np.maximum(z, 0.0)
    if isinstance(layer, Sigmoid):
        return _sigmoid(z)
    if isinstance(layer, Tanh):
        return np.tanh(z)
    if isinstance(layer, Flatten):
        return z.reshape(-1)
    if isinstance(layer, Residual):
        inner = chain_forward(layer.inner, z)[-1]
        skipped = z.ravel() if layer.skip is None else layer.skip @ z.ravel()
        return inner + skipped.reshape(inner.shape)
    if isinstance(layer, Concat):
        za = chain_forward(layer.branch_a, z)[-1].ravel()
        zb = chain_forward(layer.branch_b, z)[-1].ravel()
        out = layer.w_a @ za + layer.w_b @ zb
        return out + layer.bias if layer.bias is not None else out
    raise CapabilityError(f"unsupported layer kind: {type(layer).__name__}")


def _pool_reduce(layer, z, reducer):
    out_shape = _pool_output_shape(layer, z.shape)
    (wh, ww), (sh, sw) = layer.window, layer.stride
    h_out, w_out, c = out_shape
    out = np.empty(out_shape)
    for i in range(h_out):
        for j in range(w_out):
            win = z[i * sh : i * sh + wh, j * sw : j * sw + ww, :]
            out[i, j, :] = reducer(win.reshape(-1, c), axis=0)
    return out


def chain_forward(layers, x: np.ndarray) -> list[np.ndarray]:
    zs = [as_tensor(x)]
    for layer in layers:
        zs.append(layer_forward(layer, zs[-1]))
    return zs


def forward(model: NetworkModel, x: np.ndarray) -> list[np.ndarray]:
    """All intermediate representations z_0 .. z_L for one input."""
    x = as_tensor(x)
    if tuple(x.shape) != model.input_shape:
        raise DimensionError(
            f"input shape {x.shape} does not match model input {model.input_shape}"
        )
    return chain_forward(model.layers, x)


@dataclass(frozen=True)
class LayerLinearization:
    """Exact affine form of one layer at one input.

    ``signature`` records the indicator states that pin down the linear
    region (ReLU on/off/boundary, max-pool argmax choices); it is empty
    for layers whose affine form does not switch discretely.
    """

    W_eff: np.ndarray
    b_eff: np.ndarray
    signature: tuple[int, ...] = field(default=())
    boundary: bool = False


def _secant_slopes(z_flat: np.ndarray, func, slope_at_zero: float) -> np.ndarray:
    slopes = np.empty_like(z_flat)
    near_zero = np.abs(z_flat) < ZERO_PREACT
    slopes[near_zero] = slope_at_zero
    zs = z_flat[~near_zero]
    slopes[~near_zero] = func(zs) / zs
    return slopes


def linearize_layer(
    layer: LayerSpec,
    z_in: np.ndarray,
    mode: str = "secant",
    budget: int | None = None,
) -> LayerLinearization:
    """Input-specific (W_eff, b_eff) with its activation signature.

    ``mode`` selects how smooth activations (Sigmoid/Tanh) are
    represented: "secant" keeps the reconstruction identity exact,
    "gradient" uses the derivative (cheap but only approximate).
    """
    if mode not in ("secant", "gradient"):
        raise CapabilityError(f"unknown linearization mode: {mode!r}")
    z_in = as_tensor(z_in)
    flat = z_in.ravel()
    n = flat.shape[0]

    if isinstance(layer, Dense):
        b = layer.bias if layer.bias is not None else np.zeros(layer.weight.shape[0])
        return LayerLinearization(layer.weight, np.asarray(b, dtype=np.float64))
    if isinstance(layer, Conv2d):
        h_out, w_out, c_out = layer_output_shape(layer, z_in.shape)
        m = conv2d_to_matrix(
            layer.kernel, z_in.shape, layer.stride, layer.padding, layer.dilation,
            budget=budget,
        )
        if layer.bias is not None:
            b = np.tile(layer.bias, h_out * w_out)
        else:
            b = np.zeros(h_out * w_out * c_out)
        return LayerLinearization(m, b)
    if isinstance(layer, AvgPool):
        return _linearize_avg_pool(layer, z_in.shape)
    if isinstance(layer, MaxPool):
        return _linearize_max_pool(layer, z_in)
    if isinstance(layer, ReLU):
        on = flat > 0.0
        states = np.where(on, SIG_ON, np.where(flat < 0.0, SIG_OFF, SIG_BOUNDARY))
        w = np.diag(on.astype(np.float64))  # indicator at exactly 0 is off
        return LayerLinearization(
            w, np.zeros(n),
            signature=tuple(int(s) for s in states),
            boundary=bool(np.any(states == SIG_BOUNDARY)),
        )
    if isinstance(layer, Sigmoid):
        if mode == "gradient":
            s = _sigmoid(flat)
            slopes = s * (1.0 - s)
        else:
            slopes = _secant_slopes(flat, _sigmoid, 0.25)
        return LayerLinearization(np.diag(slopes), np.zeros(n))
    if isinstance(layer, Tanh):
        if mode == "gradient":
            slopes = 1.0 - np.tanh(flat) ** 2
        else:
            slopes = _secant_slopes(flat, np.tanh, 1.0)
        return LayerLinearization(np.diag(slopes), np.zeros(n))
    if isinstance(layer, Flatten):
        return LayerLinearization(np.eye(n), np.zeros(n))
    if isinstance(layer, Residual):
        lins = linearize_chain(layer.inner, z_in, mode=mode, budget=budget)
        w_inner, b_inner = chain_operators(lins)
        skip = np.eye(n) if layer.skip is None else layer.skip
        sig = _merge_signatures(lins)
        return LayerLinearization(
            skip + w_inner, b_inner,
            signature=sig, boundary=any(l.boundary for l in lins),
        )
    if isinstance(layer, Concat):
        lins_a = linearize_chain(layer.branch_a, z_in, mode=mode, budget=budget)
        lins_b = linearize_chain(layer.branch_b, z_in, mode=mode, budget=budget)
        w_a, b_a = chain_operators(lins_a)
        w_b, b_b = chain_operators(lins_b)
        w = layer.w_a @ w_a + layer.w_b @ w_b
        b = layer.w_a @ b_a + layer.w_b @ b_b
        if layer.bias is not None:
            b = b + layer.bias
        sig = _merge_signatures(lins_a) + _merge_signatures(lins_b)
        return LayerLinearization(
            w, b, signature=sig,
            boundary=any(l.boundary for l in lins_a + lins_b),
        )
    raise CapabilityError(f"unsupported layer kind: {type(layer).__name__}")


def _linearize_avg_pool(layer: AvgPool, in_shape: Shape) -> LayerLinearization:
    h, w, c = in_shape
    h_out, w_out, _ = _pool_output_shape(layer, in_shape)
    (wh, ww), (sh, sw) = layer.window, layer.stride
    m = np.zeros((h_out * w_out * c, h * w * c))
    weight = 1.0 / (wh * ww)
    for i in range(h_out):
        for j in range(w_out):
            for ch in range(c):
                row = (i * w_out + j) * c + ch
                for di in range(wh):
                    for dj in range(ww):
                        col = ((i * sh + di) * w + (j * sw + dj)) * c + ch
                        m[row, col] = weight
    return LayerLinearization(m, np.zeros(m.shape[0]))


def _linearize_max_pool(layer: MaxPool, z_in: np.ndarray) -> LayerLinearization:
    h, w, c = z_in.shape
    h_out, w_out, _ = _pool_output_shape(layer, z_in.shape)
    (wh, ww), (sh, sw) = layer.window, layer.stride
    m = np.zeros((h_out * w_out * c, h * w * c))
    chosen = []
    for i in range(h_out):
        for j in range(w_out):
            for ch in range(c):
                row = (i * w_out + j) * c + ch
                best_col = -1
                best_val = -np.inf
                # ties resolve to the lowest flat input index
                for di in range(wh):
                    for dj in range(ww):
                        col = ((i * sh + di) * w + (j * sw + dj)) * c + ch
                        val = z_in[i * sh + di, j * sw + dj, ch]
                        if val > best_val:
                            best_val = val
                            best_col = col
                m[row, best_col] = 1.0
                chosen.append(best_col)
    return LayerLinearization(m, np.zeros(m.shape[0]), signature=tuple(chosen))


def _merge_signatures(lins) -> tuple[int, ...]:
    merged: tuple[int, ...] = ()
    for lin in lins:
        merged += lin.signature
    return merged


def linearize_chain(
    layers, x: np.ndarray, mode: str = "secant", budget: int | None = None
) -> list[LayerLinearization]:
    """Linearize every layer of a chain at its actual intermediate input."""
    zs = chain_forward(layers, x)
    return [
        linearize_layer(layer, zs[i], mode=mode, budget=budget)
        for i, layer in enumerate(layers)
    ]


def chain_operators(lins) -> tuple[np.ndarray, np.ndarray]:
    """Collapse a list of linearizations into one (W, b) pair.

    W is the ordered product (last layer leftmost); b accumulates each
    layer bias pushed through everything downstream of it.
    """
    w, b = None, None
    for lin in lins:
        if w is None:
            w, b = lin.W_eff, lin.b_eff
        else:
            w = lin.W_eff @ w
            b = lin.W_eff @ b + lin.b_eff
    return w, b


def layer_signature(layer: LayerSpec, z_in: np.ndarray) -> tuple[int, ...]:
    """Signature of one layer without materializing any matrix."""
    if isinstance(layer, ReLU):
        flat = z_in.ravel()
        states = np.where(flat > 0.0, SIG_ON, np.where(flat < 0.0, SIG_OFF, SIG_BOUNDARY))
        return tuple(int(s) for s in states)
    if isinstance(layer, MaxPool):
        h, w, c = z_in.shape
        h_out, w_out, _ = _pool_output_shape(layer, z_in.shape)
        (wh, ww), (sh, sw) = layer.window, layer.stride
        chosen = []
        for i in range(h_out):
            for j in range(w_out):
                win = z_in[i * sh : i * sh + wh, j * sw : j * sw + ww, :]
                for ch in range(c):
                    flat_win = win[:, :, ch].ravel()
                    k = int(np.argmax(flat_win))
                    di, dj = divmod(k, ww)
                    chosen.append(((i * sh + di) * w + (j * sw + dj)) * c + ch)
        return tuple(chosen)
    if isinstance(layer, Residual):
        return _chain_signature(layer.inner, z_in)
    if isinstance(layer, Concat):
        return _chain_signature(layer.branch_a, z_in) + _chain_signature(
            layer.branch_b, z_in
        )
    return ()


def _chain_signature(layers, x: np.ndarray) -> tuple[int, ...]:
    zs = chain_forward(layers, x)
    merged: tuple[int, ...] = ()
    for i, layer in enumerate(layers):
        merged += layer_signature(layer, zs[i])
    return merged


def activation_pattern(model: NetworkModel, x: np.ndarray) -> tuple:
    """Per-layer activation signatures concatenated into one pattern.

    Two inputs with equal patterns share a linear region, hence the
    same affine operator.
    """
    zs = forward(model, x)
    return tuple(
        layer_signature(layer, zs[i]) for i, layer in enumerate(model.layers)
    )
