"""Spectral probes of the training loss Hessian.

All second-order quantities run on the smooth twin network (the spiking
nonlinearity replaced by its analytic primitive), where the loss is twice
differentiable and finite differences of gradients converge. The
Hessian-vector product is matrix-free; `spectral_report` feeds it to the
shifted power iteration in `linalg` for the top-5 algebraic eigenvalues.

`curvature_bound_check` tests the projection's curvature bound on the
aligned synthetic quadratic whose eigenvectors are vec(u_i v_i^T) built
from the gradient's own singular directions. The bound kappa_dep <= lambda2
is asserted only in this aligned construction; general Hessians are probed
but not asserted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg as la
from . import snn
from .dep import dep_project, matrixize


class ZeroVector(ValueError):
    """A probe vector (or gradient) with zero norm was supplied."""


class RankDeficient(ValueError):
    """The gradient matrix has fewer singular directions than requested."""


@dataclass(frozen=True)
class HessianReport:
    rho: float  # largest algebraic eigenvalue
    top5: list  # descending, length min(5, dim)
    pr: float  # rho / sum(top5); may exceed 1, never clamped
    converged_flags: list
    batch_id: str = ""
    model_tag: str = ""


@dataclass(frozen=True)
class CurvatureCheck:
    """kappa_dep / bound_holds are None when the projected gradient is zero
    (rank-1 input): the Rayleigh quotient is undefined there."""

    kappa_std: float
    kappa_dep: float | None
    bound_holds: bool | None
    lambda2: float


def fd_hvp(grad_fn, theta: np.ndarray, v: np.ndarray, h_scale: float = 1e-4):
    """Central-difference Hessian-vector product of any gradient field.

    Hv ~= (grad(theta + h*vhat) - grad(theta - h*vhat)) * ||v|| / (2h)
    with h = h_scale * (1 + max|theta|). Exact for quadratics up to
    rounding; the direction is normalized so h never scales with ||v||.
    """
    v = np.asarray(v, dtype=np.float64)
    nv = float(np.sqrt((v * v).sum()))
    if nv == 0.0:
        raise ZeroVector("hvp direction has zero norm")
    vhat = v / nv
    h = h_scale * (1.0 + float(np.abs(theta).max()))
    gp = grad_fn(theta + h * vhat)
    gm = grad_fn(theta - h * vhat)
    return (gp - gm) * (nv / (2.0 * h))


def model_grad_fn(model: snn.Model, x: np.ndarray, y, t_steps: int):
    """Gradient of the smooth-twin loss as a function of flat parameters.

    Calling it mutates the model's parameters; callers restore afterward.
    """

    def grad_fn(theta: np.ndarray) -> np.ndarray:
        model.load_flat(theta)
        _, gs, _ = snn.loss_and_grad(model, x, y, t_steps, smooth=True)
        return gs.flat()

    return grad_fn


def hvp(
    model: snn.Model, x: np.ndarray, y, t_steps: int, v: np.ndarray
) -> np.ndarray:
    """Hessian-vector product of the smooth-twin batch loss at the model's
    current parameters; the model is restored on exit."""
    theta = model.flat_params()
    try:
        return fd_hvp(model_grad_fn(model, x, y, t_steps), theta, v)
    finally:
        model.load_flat(theta)


def spectral_report(
    model: snn.Model,
    x: np.ndarray,
    y,
    t_steps: int,
    k: int = 5,
    tol: float = 1e-5,
    max_iter: int = 500,
    batch_id: str = "",
    model_tag: str = "",
) -> HessianReport:
    """Top-k algebraic Hessian eigenvalues on one batch.

    Eigenvalues that exhaust the iteration budget keep their last estimate
    and are flagged unconverged rather than raised.
    """
    theta = model.flat_params()
    grad_fn = model_grad_fn(model, x, y, t_steps)
    k_eff = min(k, theta.size)

    def apply(v: np.ndarray) -> np.ndarray:
        return fd_hvp(grad_fn, theta, v)

    try:
        res = la.symmetric_top_k(apply, theta.size, k_eff, tol, max_iter)
    finally:
        model.load_flat(theta)
    rho = res.values[0]
    total = sum(res.values)
    pr = rho / total if total != 0.0 else float("nan")
    return HessianReport(
        rho=rho,
        top5=list(res.values),
        pr=pr,
        converged_flags=list(res.converged),
        batch_id=batch_id,
        model_tag=model_tag,
    )


def rayleigh_quotient(h_apply, g: np.ndarray) -> float:
    """g^T H g / ||g||^2 via a single operator application."""
    g = np.asarray(g, dtype=np.float64)
    gg = float((g * g).sum())
    if gg == 0.0:
        raise ZeroVector("rayleigh quotient of a zero vector")
    return float(g @ h_apply(g)) / gg


def aligned_quadratic(spectrum, g_matrix: np.ndarray):
    """Operator w -> H w for H = sum_i lambda_i b_i b_i^T with
    b_i = vec(u_i v_i^T) from the gradient's own SVD.

    Returns (h_apply, basis) where basis columns are the b_i.
    """
    g_matrix = np.asarray(g_matrix, dtype=np.float64)
    spectrum = [float(s) for s in spectrum]
    if len(spectrum) < 2:
        raise ValueError("spectrum needs at least lambda1 and lambda2")
    if any(a < b for a, b in zip(spectrum[1:], spectrum[2:])):
        raise ValueError("spectrum must be non-increasing after lambda1")
    if spectrum[0] <= spectrum[1]:
        raise ValueError("need lambda1 > lambda2")
    m, n = g_matrix.shape
    if min(m, n) < len(spectrum):
        raise RankDeficient(
            f"gradient has {min(m, n)} singular directions, spectrum "
            f"needs {len(spectrum)}"
        )
    _, u, v = la.full_svd(g_matrix)
    basis = np.column_stack(
        [np.outer(u[:, i], v[:, i]).ravel() for i in range(len(spectrum))]
    )
    lam = np.asarray(spectrum)

    def h_apply(w: np.ndarray) -> np.ndarray:
        return basis @ (lam * (basis.T @ w))

    return h_apply, basis


def curvature_bound_check(spectrum, g_matrix: np.ndarray) -> CurvatureCheck:
    """Rayleigh quotients of g and of its projection on the aligned
    quadratic; checks kappa_dep <= lambda2 + 1e-8."""
    g_matrix = np.asarray(g_matrix, dtype=np.float64)
    fro = la.frobenius(g_matrix)
    if fro == 0.0:
        raise ZeroVector("zero gradient matrix")
    h_apply, _ = aligned_quadratic(spectrum, g_matrix)
    kappa_std = rayleigh_quotient(h_apply, g_matrix.ravel())
    projected = dep_project(matrixize(g_matrix)).matrix
    lambda2 = float(spectrum[1])
    if la.frobenius(projected) <= 1e-12 * fro:
        return CurvatureCheck(kappa_std, None, None, lambda2)
    kappa_dep = rayleigh_quotient(h_apply, projected.ravel())
    return CurvatureCheck(
        kappa_std, kappa_dep, bool(kappa_dep <= lambda2 + 1e-8), lambda2
    )
