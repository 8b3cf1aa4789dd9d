"""Dominant-eigencomponent gradient projection and the SGD step around it.

A rank-k gradient tensor is reshaped row-major to (d1, prod(d2..dk)); the
projection subtracts its best rank-1 approximation, leaving the gradient
orthogonal to the dominant singular direction. The projection has no
tunable constants: it is fully determined by the gradient itself (plus the
SVD tolerance). Rank-1 tensors (biases) bypass the projection, since their
matrixization is itself rank <= 1 and would be zeroed forever.

Ordering per optimizer step: batch-averaged gradient -> projection ->
weight decay -> momentum -> parameter update. The momentum buffer therefore
stores post-projection gradients, keeping the dominant direction out of the
velocity as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg as la
from .snn import GradientSet, Model, ShapeMismatch

DENSE_FALLBACK_LIMIT = 64


@dataclass(frozen=True)
class MatrixizedGradient:
    matrix: np.ndarray
    original_shape: tuple

    def __post_init__(self):
        if self.matrix.size != int(np.prod(self.original_shape)):
            raise ValueError(
                f"matrix size {self.matrix.size} cannot hold shape "
                f"{self.original_shape}"
            )


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float
    weight_decay: float = 0.0
    momentum: float = 0.0
    dep_enabled: bool = False
    dep_min_rank_dims: int = 2

    def __post_init__(self):
        # lr=0 is legal: a null update, useful as a determinism control.
        if not self.learning_rate >= 0.0:
            raise ValueError(f"learning_rate must be >= 0 (got {self.learning_rate})")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0 (got {self.weight_decay})")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1) (got {self.momentum})")
        if self.dep_min_rank_dims < 1:
            raise ValueError("dep_min_rank_dims must be >= 1")


def matrixize(g: np.ndarray) -> MatrixizedGradient:
    """Row-major reshape of a rank-k tensor to (d1, prod of the rest)."""
    g = np.asarray(g, dtype=np.float64)
    if g.ndim < 1:
        raise ValueError("need a tensor of rank >= 1")
    m = g.shape[0]
    n = g.size // m if m else 0
    return MatrixizedGradient(g.reshape(m, n), g.shape)


def unmatrixize(mg: MatrixizedGradient) -> np.ndarray:
    return mg.matrix.reshape(mg.original_shape)


def _leading_direction(matrix: np.ndarray):
    """(u1, v1) of the matrix, falling back to the dense SVD when power
    iteration stalls on a small enough matrix; larger ones propagate."""
    try:
        t = la.leading_triplet(matrix)
        return t.u, t.v
    except la.NonConvergence:
        if min(matrix.shape) > DENSE_FALLBACK_LIMIT:
            raise
        _, u, v = la.full_svd(matrix)
        return u[:, 0], v[:, 0]


def _project(matrix: np.ndarray):
    """Subtract the dominant rank-1 component; returns (out, coefficient).

    Uses out = G - <G, u1 v1^T>_F * u1 v1^T rather than G - sigma1*u1 v1^T:
    with an approximate (u1, v1) the inner-product form still leaves the
    output exactly orthogonal to u1 v1^T.
    """
    u, v = _leading_direction(matrix)
    coef = float(u @ matrix @ v)
    return matrix - coef * np.outer(u, v), coef


def dep_project(mg: MatrixizedGradient) -> MatrixizedGradient:
    """Remove the gradient's best rank-1 approximation."""
    out, _ = _project(mg.matrix)
    return MatrixizedGradient(out, mg.original_shape)


def _layer_index(name: str) -> int:
    head = name.split(".", 1)[0]
    return int(head) if head.isdigit() else -1


def apply_gradients(
    model: Model,
    grads: GradientSet,
    cfg: OptimizerConfig,
    momentum_state: dict | None = None,
    diagnostics: list | None = None,
) -> dict:
    """One SGD step; returns the (possibly new) momentum state dict.

    With dep_enabled, every parameter of rank >= dep_min_rank_dims gets the
    projection before weight decay and momentum; lower-rank parameters pass
    through. If `diagnostics` is a list, one record per projected parameter
    is appended: {param_name, sigma1, sigma2, frobenius_before,
    frobenius_after} (sigma2 costs an extra decomposition, so records are
    opt-in).
    """
    if momentum_state is None:
        momentum_state = {}
    new_params = {}
    for name, w in model.param_index_arrays():
        if name not in grads.params:
            raise ShapeMismatch(_layer_index(name), f"no gradient for {name}")
        g = grads.params[name]
        if g.shape != w.shape:
            raise ShapeMismatch(
                _layer_index(name),
                f"gradient shape {g.shape} vs parameter {w.shape} for {name}",
            )
        if cfg.dep_enabled and g.ndim >= cfg.dep_min_rank_dims:
            mg = matrixize(g)
            out, coef = _project(mg.matrix)
            if diagnostics is not None:
                try:
                    u2, v2 = _leading_direction(out)
                    sigma2 = float(u2 @ out @ v2)
                except la.NonConvergence:
                    sigma2 = float("nan")
                diagnostics.append(
                    {
                        "param_name": name,
                        "sigma1": coef,
                        "sigma2": sigma2,
                        "frobenius_before": la.frobenius(mg.matrix),
                        "frobenius_after": la.frobenius(out),
                    }
                )
            g = unmatrixize(MatrixizedGradient(out, mg.original_shape))
        if cfg.weight_decay:
            g = g + cfg.weight_decay * w
        if cfg.momentum > 0.0:
            buf = momentum_state.get(name)
            buf = g if buf is None else cfg.momentum * buf + g
            momentum_state[name] = buf
            g = buf
        new_params[name] = w - cfg.learning_rate * g
    model.set_params(new_params)
    return momentum_state


class SgdOptimizer:
    """Stateful wrapper: holds the momentum buffers for one model."""

    def __init__(self, model: Model, cfg: OptimizerConfig):
        self.model = model
        self.cfg = cfg
        self.state: dict = {}

    def step(self, grads: GradientSet, diagnostics: list | None = None) -> None:
        self.state = apply_gradients(
            self.model, grads, self.cfg, self.state, diagnostics
        )
