"""Dense linear-algebra kernels: SVD and symmetric eigenvalue extraction.

Everything here is plain float64 numpy with deterministic, fixed schedules:
no randomized sketching, no LAPACK SVD calls. `full_svd` (one-sided Jacobi)
is the oracle-scale routine; `leading_triplet` (power iteration on the
smaller Gram matrix) is the fast path used per optimizer step;
`symmetric_top_k` extracts the largest *algebraic* eigenvalues of a
matrix-free symmetric operator via shifted, deflated power iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DENSE_SVD_LIMIT = 512
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 5000

_TINY = np.finfo(np.float64).tiny
_EPS = np.finfo(np.float64).eps


class NonConvergence(RuntimeError):
    """Iteration budget exhausted before the residual target was met."""

    def __init__(self, what: str, iterations: int, residual: float):
        super().__init__(
            f"{what} did not converge after {iterations} iterations "
            f"(residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


class SizeExceeded(ValueError):
    """Matrix too large for the dense oracle-scale path."""


@dataclass(frozen=True)
class SvdTriplet:
    """Leading singular triplet (sigma, u, v) with ||u|| = ||v|| = 1.

    Sign convention: the entry of `u` with the largest absolute value is
    positive, so repeated runs on identical input are bitwise identical.
    """

    sigma: float
    u: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class TopKResult:
    """Top-k algebraic eigenvalues, sorted descending.

    `converged[i]` is False for eigenvalues that hit the iteration budget;
    their values are the last Rayleigh estimates (partial results).
    """

    values: list[float]
    converged: list[bool]
    vectors: np.ndarray  # (dim, k), columns are the eigenvector estimates


def _as_matrix(g) -> np.ndarray:
    a = np.asarray(g, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("matrix entries must be finite (no NaN/Inf)")
    return a


def frobenius(a: np.ndarray) -> float:
    return float(np.sqrt((a * a).sum()))


def _fix_sign(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    j = int(np.argmax(np.abs(u)))
    if u[j] < 0.0:
        return -u, -v
    return u, v


def _start_vectors(dim: int):
    # Fixed start: normalized ones; fall back to basis vectors if that start
    # lies in the operator's null space.
    yield np.full(dim, 1.0 / np.sqrt(dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        yield e


def _gram_power(b: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, float]:
    """Dominant eigenvector of the PSD Gram matrix `b` by power iteration.

    Returns (unit eigenvector, eigenvalue). Residual target is relative to
    the Rayleigh quotient; raises NonConvergence past the budget.
    """
    last_res = np.inf
    for w in _start_vectors(b.shape[0]):
        restart = False
        for it in range(max_iter):
            z = b @ w
            lam = float(w @ z)
            res = float(np.sqrt(((z - lam * w) ** 2).sum()))
            if res <= tol * max(lam, _TINY):
                return w, lam
            nz = float(np.sqrt((z * z).sum()))
            if nz == 0.0:
                restart = True  # start vector sits in the null space
                break
            w = z / nz
            last_res = res
        if not restart:
            raise NonConvergence("gram power iteration", max_iter, last_res)
    raise NonConvergence("gram power iteration (all starts null)", 0, np.inf)


def leading_triplet(
    g, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER
) -> SvdTriplet:
    """Leading singular triplet of `g` via power iteration on the Gram side.

    Iterates on G^T G when cols <= rows, else on G G^T (gradient
    matrixizations are highly rectangular, so the Gram side is small).
    A zero matrix returns the (0, e1, e1) sentinel. Exact singular-value
    ties resolve to whatever the fixed all-ones start converges to.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    a = _as_matrix(g)
    m, n = a.shape
    if frobenius(a) == 0.0:
        u = np.zeros(m)
        u[0] = 1.0
        v = np.zeros(n)
        v[0] = 1.0
        return SvdTriplet(0.0, u, v)
    if n <= m:
        w, _ = _gram_power(a.T @ a, tol, max_iter)
        v = w
        av = a @ v
        sigma = float(np.sqrt((av * av).sum()))
        if sigma == 0.0:
            # Subnormal entries underflow in the squared sums; treat as zero.
            u = np.zeros(m)
            u[0] = 1.0
            v = np.zeros(n)
            v[0] = 1.0
            return SvdTriplet(0.0, u, v)
        u = av / sigma
    else:
        w, _ = _gram_power(a @ a.T, tol, max_iter)
        u = w
        atv = a.T @ u
        sigma = float(np.sqrt((atv * atv).sum()))
        if sigma == 0.0:
            u = np.zeros(m)
            u[0] = 1.0
            v = np.zeros(n)
            v[0] = 1.0
            return SvdTriplet(0.0, u, v)
        v = atv / sigma
    u, v = _fix_sign(u, v)
    return SvdTriplet(sigma, u, v)


def _round_robin_pairs(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: n-1 rounds of disjoint column pairs covering all
    pairs once per sweep, enabling vectorized one-sided Jacobi rounds."""
    players = list(range(n))
    if n % 2:
        players.append(-1)
    size = len(players)
    rounds = []
    arr = players[:]
    for _ in range(size - 1):
        ps, qs = [], []
        for i in range(size // 2):
            p, q = arr[i], arr[size - 1 - i]
            if p == -1 or q == -1:
                continue
            ps.append(min(p, q))
            qs.append(max(p, q))
        rounds.append((np.asarray(ps, dtype=np.intp), np.asarray(qs, dtype=np.intp)))
        arr = [arr[0], arr[-1]] + arr[1:-1]
    return rounds


def _complete_orthonormal(u: np.ndarray, filled: int) -> None:
    """Fill columns filled..end of `u` with unit vectors orthogonal to the
    rest, chosen deterministically from the standard basis."""
    m, n = u.shape
    for i in range(filled, n):
        for j in range(m):
            w = np.zeros(m)
            w[j] = 1.0
            w -= u[:, :i] @ (u[:, :i].T @ w)
            nw = float(np.sqrt((w * w).sum()))
            if nw > 0.5:
                u[:, i] = w / nw
                break
        else:
            raise RuntimeError("orthonormal completion failed")


def full_svd(
    g, tol: float = 1e-13, max_sweeps: int = 100
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full SVD by one-sided Jacobi: G = U diag(sigmas) V^T.

    Returns (sigmas, U, V) with r = min(m, n) columns, sigmas sorted
    non-increasing (ties keep pre-sort index order; sort is stable).
    Oracle-scale only: raises SizeExceeded when min(m, n) > 512.

    The sweep schedule is a fixed round-robin over disjoint column pairs so
    each round is one vectorized rotation batch; converges when every pair's
    normalized inner product is below `tol`.
    """
    a = _as_matrix(g)
    m, n = a.shape
    if min(m, n) > DENSE_SVD_LIMIT:
        raise SizeExceeded(
            f"min(m, n) = {min(m, n)} exceeds dense SVD limit {DENSE_SVD_LIMIT}"
        )
    transposed = m < n
    if transposed:
        a = a.T
        m, n = n, m
    A = a.copy()
    V = np.eye(n)
    rounds = _round_robin_pairs(n) if n > 1 else []
    for _ in range(max_sweeps):
        worst = 0.0
        for ps, qs in rounds:
            P = A[:, ps]
            Q = A[:, qs]
            alpha = np.einsum("ij,ij->j", P, P)
            beta = np.einsum("ij,ij->j", Q, Q)
            gamma = np.einsum("ij,ij->j", P, Q)
            denom = np.sqrt(alpha * beta)
            live = denom > 0.0
            rel = np.zeros_like(gamma)
            rel[live] = np.abs(gamma[live]) / denom[live]
            if rel.size:
                worst = max(worst, float(rel.max()))
            rot = rel > tol
            if not rot.any():
                continue
            zeta = (beta[rot] - alpha[rot]) / (2.0 * gamma[rot])
            sgn = np.where(zeta >= 0.0, 1.0, -1.0)
            t = sgn / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            pr, qr = ps[rot], qs[rot]
            Pn = A[:, pr] * c - A[:, qr] * s
            Qn = A[:, pr] * s + A[:, qr] * c
            A[:, pr] = Pn
            A[:, qr] = Qn
            Pv = V[:, pr] * c - V[:, qr] * s
            Qv = V[:, pr] * s + V[:, qr] * c
            V[:, pr] = Pv
            V[:, qr] = Qv
        if worst <= tol:
            break
    sig = np.sqrt(np.einsum("ij,ij->j", A, A))
    order = np.argsort(-sig, kind="stable")
    sig = sig[order]
    A = A[:, order]
    V = V[:, order]
    zero_cut = sig[0] * _EPS * max(m, n) if sig.size and sig[0] > 0.0 else 0.0
    U = np.zeros((m, n))
    filled = n
    for i in range(n):
        if sig[i] > zero_cut:
            U[:, i] = A[:, i] / sig[i]
        else:
            sig[i] = 0.0
            filled = min(filled, i)
    if filled < n:
        _complete_orthonormal(U, filled)
    for i in range(n):
        ui, vi = _fix_sign(U[:, i], V[:, i])
        U[:, i] = ui
        V[:, i] = vi
    if transposed:
        U, V = V, U
    return sig, U, V


def _operator_norm_bound(apply, dim: int, iters: int = 64) -> float:
    """Upper bound on the spectral radius of a symmetric operator.

    Power iteration drives ||Av|| toward max|lambda| from below; the caller
    inflates the result, so a slight underestimate is harmless.
    """
    bound = 0.0
    tried = 0
    for v in _start_vectors(dim):
        tried += 1
        for _ in range(iters):
            z = apply(v)
            nz = float(np.sqrt((z * z).sum()))
            if nz == 0.0:
                break
            bound = max(bound, nz)
            v = z / nz
        else:
            return bound
        if bound > 0.0:
            return bound
        if tried > min(dim, 8):
            break
    return bound


def symmetric_top_k(
    apply,
    dim: int,
    k: int,
    tol: float = 1e-9,
    max_iter: int = DEFAULT_MAX_ITER,
) -> TopKResult:
    """Largest `k` *algebraic* eigenvalues of a symmetric operator.

    Power iteration alone finds the dominant-by-magnitude eigenvalue, which
    may be a large negative one. We therefore iterate on A + cI with
    c = 1.5 * (spectral radius bound), making every shifted eigenvalue
    non-negative so the algebraically largest dominates; converged
    directions are deflated by orthogonal projection.

    Residuals are measured against the shifted operator scale, so eigenvalue
    error is bounded by tol * O(spectral radius). Non-converged indices are
    flagged rather than raised; callers decide.
    """
    if not 1 <= k <= dim:
        raise ValueError(f"need 1 <= k <= dim, got k={k}, dim={dim}")
    bound = _operator_norm_bound(apply, dim)
    if bound == 0.0:
        return TopKResult([0.0] * k, [True] * k, np.zeros((dim, k)))
    shift = 1.5 * bound
    scale = bound + shift
    basis: list[np.ndarray] = []
    values: list[float] = []
    flags: list[bool] = []
    for _ in range(k):
        found = None
        for start in _start_vectors(dim):
            v = start.copy()
            if basis:
                q = np.column_stack(basis)
                v -= q @ (q.T @ v)
            nv = float(np.sqrt((v * v).sum()))
            if nv < 1e-6:
                continue  # start is (nearly) inside the converged subspace
            v /= nv
            mu = 0.0
            converged = False
            null_image = False
            for _ in range(max_iter):
                z = apply(v) + shift * v
                if basis:
                    z -= q @ (q.T @ z)
                mu = float(v @ z)
                res = float(np.sqrt(((z - mu * v) ** 2).sum()))
                if res <= tol * scale:
                    converged = True
                    break
                nz = float(np.sqrt((z * z).sum()))
                if nz == 0.0:
                    null_image = True
                    break
                v = z / nz
            if null_image:
                continue
            found = (v, mu, converged)
            break
        if found is None:
            raise NonConvergence("symmetric_top_k start selection", 0, np.inf)
        v, mu, converged = found
        if basis:
            v = v - q @ (q.T @ v)
            v /= float(np.sqrt((v * v).sum()))
        basis.append(v)
        values.append(mu - shift)
        flags.append(converged)
    order = sorted(range(k), key=lambda i: -values[i])
    return TopKResult(
        [values[i] for i in order],
        [flags[i] for i in order],
        np.column_stack([basis[i] for i in order]),
    )


def jacobi_eigh(s, tol: float = 1e-12, max_sweeps: int = 100):
    """Dense symmetric eigendecomposition by cyclic two-sided Jacobi.

    Returns (eigenvalues descending, eigenvectors as columns). This is the
    oracle-scale reference eigensolver; O(n^3) per sweep, fine for n <= ~200.
    """
    a = _as_matrix(s)
    n = a.shape[0]
    if a.shape[0] != a.shape[1]:
        raise ValueError("jacobi_eigh expects a square matrix")
    if not np.allclose(a, a.T, atol=1e-12 * max(1.0, float(np.abs(a).max()))):
        raise ValueError("jacobi_eigh expects a symmetric matrix")
    A = 0.5 * (a + a.T)
    V = np.eye(n)
    fro = frobenius(A)
    if fro == 0.0:
        return np.zeros(n), V
    for _ in range(max_sweeps):
        off = np.sqrt(max((A * A).sum() - (np.diag(A) ** 2).sum(), 0.0))
        if off <= tol * fro:
            break
        skip = tol * fro / n
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= skip:
                    continue
                zeta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = (1.0 if zeta >= 0.0 else -1.0) / (
                    abs(zeta) + np.sqrt(1.0 + zeta * zeta)
                )
                c = 1.0 / np.sqrt(1.0 + t * t)
                ssin = c * t
                cp = A[:, p].copy()
                cq = A[:, q].copy()
                A[:, p] = c * cp - ssin * cq
                A[:, q] = ssin * cp + c * cq
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - ssin * rq
                A[q, :] = ssin * rp + c * rq
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - ssin * vq
                V[:, q] = ssin * vp + c * vq
    vals = np.diag(A).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], V[:, order]
