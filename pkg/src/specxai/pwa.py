"""Whole-network affine operators and their bias decomposition.

Within one linear region a supported network is exactly
``f(x) = u @ x + b``.  This module assembles u by chaining the per-layer
linearizations, derives b two independent ways (direct residual and
per-layer propagation), and offers region diagnostics: a finite-difference
check of u and a same-region predicate on activation signatures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import netgraph
from .errors import NumericError, RegionBoundaryError, ResourceError
from .linalg import as_tensor, element_budget
from .netgraph import NetworkModel

BIAS_RTOL = 1e-8


@dataclass(frozen=True)
class AffineOperator:
    """The exact affine form of a network at one anchoring input."""

    u: np.ndarray
    b: np.ndarray
    signature: tuple
    x_ref: np.ndarray
    boundary: bool = False


@dataclass(frozen=True)
class BiasDecomposition:
    """Per-layer bias contributions in output space; total == sum."""

    betas: tuple[np.ndarray, ...]
    total: np.ndarray


def _chain_with_betas(lins, budget: int | None, shapes=None):
    """Fold linearizations into (u, betas), guarding the element budget.

    betas[l] is layer l's own bias pushed through all downstream layers,
    so ``sum(betas) == b``.
    """
    limit = element_budget(budget)
    u = None
    betas: list[np.ndarray] = []
    for idx, lin in enumerate(lins):
        w = lin.W_eff
        if u is None:
            u = w
        else:
            if w.shape[0] * u.shape[1] > limit:
                raise ResourceError(
                    f"operator {w.shape[0]}x{u.shape[1]} at layer {idx + 1} "
                    f"exceeds element budget {limit}"
                )
            u = w @ u
        betas = [w @ beta for beta in betas]
        betas.append(lin.b_eff)
    return u, betas


def _linearize_all(model: NetworkModel, x, mode, budget):
    x = as_tensor(x)
    zs = netgraph.forward(model, x)
    lins = [
        netgraph.linearize_layer(layer, zs[i], mode=mode, budget=budget)
        for i, layer in enumerate(model.layers)
    ]
    return x, zs, lins


def extract_affine(
    model: NetworkModel,
    x,
    mode: str = "secant",
    budget: int | None = None,
) -> AffineOperator:
    """The input-dependent (u, b) pair anchored at x.

    b is stored as the sum of propagated per-layer biases; the direct
    residual ``f(x) - u @ x`` must agree with it to BIAS_RTOL, which
    guards the chaining against silent numerical damage.
    """
    x, zs, lins = _linearize_all(model, x, mode, budget)
    u, betas = _chain_with_betas(lins, budget)
    b = np.zeros(u.shape[0])
    for beta in betas:
        b = b + beta
    y = zs[-1].ravel()
    residual_b = y - u @ x.ravel()
    scale = 1.0 + float(np.max(np.abs(y))) if y.size else 1.0
    if float(np.max(np.abs(residual_b - b), initial=0.0)) > BIAS_RTOL * scale:
        raise NumericError(
            "bias computed by residual and by layer propagation disagree; "
            "the linearization chain is numerically inconsistent"
        )
    return AffineOperator(
        u=u,
        b=b,
        signature=tuple(lin.signature for lin in lins),
        x_ref=x,
        boundary=any(lin.boundary for lin in lins),
    )


def bias_decomposition(
    model: NetworkModel,
    x,
    mode: str = "secant",
    budget: int | None = None,
) -> BiasDecomposition:
    """Split b into one contribution per layer (zeros for bias-free layers)."""
    _, _, lins = _linearize_all(model, x, mode, budget)
    _, betas = _chain_with_betas(lins, budget)
    total = np.zeros(betas[-1].shape[0])
    for beta in betas:
        total = total + beta
    return BiasDecomposition(betas=tuple(betas), total=total)


def same_region(model: NetworkModel, x1, x2) -> bool:
    """True iff both inputs share every activation indicator state."""
    return netgraph.activation_pattern(model, x1) == netgraph.activation_pattern(
        model, x2
    )


def jacobian_check(
    model: NetworkModel,
    x,
    step: float = 1e-5,
    max_shrink: int = 20,
    budget: int | None = None,
) -> float:
    """Max-abs difference between u and central finite differences.

    The probe step is halved (up to ``max_shrink`` times) until every
    probe x +- h*e_i stays in the linear region of x; if no such step
    exists the input sits on a region boundary and the check refuses to
    produce a number.
    """
    x = as_tensor(x)
    op = extract_affine(model, x, budget=budget)
    if op.boundary:
        raise RegionBoundaryError(
            "a pre-activation is exactly zero; the operator is not "
            "two-sided differentiable here"
        )
    ref_pattern = netgraph.activation_pattern(model, x)
    flat = x.ravel()
    m = flat.shape[0]

    h = float(step)
    for _ in range(max_shrink + 1):
        probes = []
        in_region = True
        for i in range(m):
            for sign in (1.0, -1.0):
                xp = flat.copy()
                xp[i] += sign * h
                xp = xp.reshape(x.shape)
                if netgraph.activation_pattern(model, xp) != ref_pattern:
                    in_region = False
                    break
                probes.append(xp)
            if not in_region:
                break
        if in_region:
            break
        h *= 0.5
    else:
        raise RegionBoundaryError(
            f"no in-region finite-difference step found after {max_shrink} halvings"
        )

    u_fd = np.empty_like(op.u)
    for i in range(m):
        y_plus = netgraph.forward(model, probes[2 * i])[-1].ravel()
        y_minus = netgraph.forward(model, probes[2 * i + 1])[-1].ravel()
        u_fd[:, i] = (y_plus - y_minus) / (2.0 * h)
    return float(np.max(np.abs(op.u - u_fd), initial=0.0))
