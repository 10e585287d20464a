"""Dense tensor arithmetic, thin SVD, and convolution matricization.

All analysis math runs in 64-bit floats regardless of how model weights
are stored.  Matrices are plain ``numpy`` arrays in row-major order; the
helpers here add the validation and conventions the rest of the toolkit
relies on (finiteness, deterministic singular-vector signs, element
budgets for explicit operators).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError, ResourceError

# Largest explicit matrix (in elements) the toolkit will materialize.
# Overridable per call, or globally via the SPECXAI_BUDGET env var.
DEFAULT_ELEMENT_BUDGET = 1 << 26


def element_budget(budget: int | None = None) -> int:
    """Resolve the element budget: explicit arg > env var > default."""
    if budget is not None:
        return int(budget)
    env = os.environ.get("SPECXAI_BUDGET")
    if env:
        return int(env)
    return DEFAULT_ELEMENT_BUDGET


def as_tensor(values, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Coerce to a C-contiguous float64 array and check finiteness."""
    a = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None:
        a = a.reshape(shape)
    check_finite(a)
    return a


def as_matrix(values) -> np.ndarray:
    """Coerce to a 2-D float64 matrix."""
    a = as_tensor(values)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def check_finite(a: np.ndarray, what: str = "array") -> None:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{what} contains non-finite values")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape guard."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def matvec(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64).ravel()
    if a.shape[1] != x.shape[0]:
        raise DimensionError(f"matvec shape mismatch: {a.shape} x {x.shape}")
    return a @ x


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``m = U @ diag(sigma) @ V.T`` with deterministic signs.

    ``U`` is (m, r), ``V`` is (n, r) with r = min(m, n); ``sigma`` is
    non-negative and sorted descending.  ``rank_used`` counts singular
    values above ``rank_tol * sigma[0]``.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray
    rank_used: int

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.sigma) @ self.V.T


def thin_svd(m: np.ndarray, rank_tol: float = 1e-10) -> SvdResult:
    """Thin SVD with a fixed sign convention.

    For each singular pair, the entry of largest magnitude in the V
    column is made positive (U flips along), which makes singular
    vectors reproducible across inputs and runs.
    """
    m = as_matrix(m)
    if rank_tol < 0:
        raise NumericError("rank_tol must be non-negative")
    U, sigma, Vh = np.linalg.svd(m, full_matrices=False)
    V = Vh.T.copy()
    U = U.copy()
    for i in range(sigma.shape[0]):
        k = int(np.argmax(np.abs(V[:, i])))
        if V[k, i] < 0.0:
            V[:, i] = -V[:, i]
            U[:, i] = -U[:, i]
    if sigma.size and sigma[0] > 0.0:
        rank_used = int(np.count_nonzero(sigma > rank_tol * sigma[0]))
    else:
        rank_used = 0
    return SvdResult(U=U, sigma=sigma, V=V, rank_used=rank_used)


def conv2d_output_shape(
    in_shape: tuple[int, int, int],
    kernel_shape: tuple[int, int, int, int],
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
    dilation: tuple[int, int] = (1, 1),
) -> tuple[int, int, int]:
    """Output (H', W', C') of a 2-D convolution, channels-last."""
    h, w, c_in = in_shape
    kh, kw, kc_in, c_out = kernel_shape
    if kc_in != c_in:
        raise DimensionError(
            f"kernel expects {kc_in} input channels, input has {c_in}"
        )
    (sh, sw), (ph, pw), (dh, dw) = stride, padding, dilation
    if min(sh, sw) < 1 or min(dh, dw) < 1 or min(ph, pw) < 0:
        raise DimensionError("stride/dilation must be >= 1 and padding >= 0")
    eff_h = dh * (kh - 1) + 1
    eff_w = dw * (kw - 1) + 1
    if eff_h > h + 2 * ph or eff_w > w + 2 * pw:
        raise DimensionError(
            f"kernel extent ({eff_h}x{eff_w}) larger than padded input "
            f"({h + 2 * ph}x{w + 2 * pw})"
        )
    h_out = (h + 2 * ph - eff_h) // sh + 1
    w_out = (w + 2 * pw - eff_w) // sw + 1
    return h_out, w_out, c_out


def conv2d_to_matrix(
    kernel: np.ndarray,
    in_shape: tuple[int, int, int],
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
    dilation: tuple[int, int] = (1, 1),
    budget: int | None = None,
) -> np.ndarray:
    """Explicit matrix form of a channels-last 2-D convolution.

    Returns W of shape (H'*W'*C', H*W*C) such that ``W @ z.ravel()``
    equals the flattened direct convolution of z (zero padding).  The
    kernel is (KH, KW, C_in, C_out); inputs and outputs flatten in
    row-major (h, w, c) order.
    """
    kernel = as_tensor(kernel)
    if kernel.ndim != 4:
        raise DimensionError(f"kernel must be 4-D (KH,KW,Cin,Cout), got {kernel.shape}")
    h, w, c_in = in_shape
    h_out, w_out, c_out = conv2d_output_shape(
        in_shape, kernel.shape, stride, padding, dilation
    )
    rows = h_out * w_out * c_out
    cols = h * w * c_in
    limit = element_budget(budget)
    if rows * cols > limit:
        raise ResourceError(
            f"convolution matrix {rows}x{cols} exceeds element budget {limit}"
        )
    (sh, sw), (ph, pw), (dh, dw) = stride, padding, dilation
    kh, kw = kernel.shape[:2]
    out = np.zeros((rows, cols))
    # kernel[i, j] is (Cin, Cout); the matrix block wants (Cout, Cin).
    taps = kernel.transpose(0, 1, 3, 2)
    for ho in range(h_out):
        for wo in range(w_out):
            r0 = (ho * w_out + wo) * c_out
            for i in range(kh):
                hi = ho * sh + i * dh - ph
                if hi < 0 or hi >= h:
                    continue
                for j in range(kw):
                    wi = wo * sw + j * dw - pw
                    if wi < 0 or wi >= w:
                        continue
                    c0 = (hi * w + wi) * c_in
                    out[r0 : r0 + c_out, c0 : c0 + c_in] = taps[i, j]
    return out
