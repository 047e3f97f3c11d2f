"""Krylov solvers, sparse direct factorizations and incomplete factorizations.

All iterative methods start from ``x0`` (zero by default), measure convergence
on the relative residual ``||b - A x|| / ||b||`` and apply preconditioners
from the right, so the stopping test is on the true residual of the original
system.  A preconditioner is anything :func:`as_operator` accepts, and it is
interpreted as an approximation of ``A^{-1}``, not of ``A``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class KrylovBreakdown(ArithmeticError):
    """Non-finite values or a serious breakdown inside an iterative method."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A matrix assumed symmetric positive definite turned out not to be."""


class SingularMatrixError(np.linalg.LinAlgError):
    pass


@dataclass
class KrylovResult:
    """Outcome of an iterative solve.

    ``residuals[0]`` is the initial relative residual; ``residuals[k]`` is the
    one after ``k`` iterations.  ``final_residual`` is recomputed explicitly
    from ``x`` when the method returns.
    """

    x: np.ndarray
    iterations: int
    residuals: list = field(default_factory=list)
    converged: bool = False
    final_residual: float = np.nan


class _CallableOperator(spla.LinearOperator):
    def __init__(self, fn, n):
        super().__init__(dtype=np.float64, shape=(n, n))
        self._fn = fn

    def _matvec(self, x):
        return np.asarray(self._fn(np.ravel(x)), dtype=float)


def as_operator(A, n: int | None = None) -> spla.LinearOperator:
    """Wrap a matrix, ``LinearOperator``, object with ``apply`` or callable.

    ``None`` gives the identity of order ``n``.
    """
    if A is None:
        if n is None:
            raise ValueError("the order is required for an identity operator")
        return spla.aslinearoperator(sp.identity(n, format="csr"))
    if isinstance(A, spla.LinearOperator):
        return A
    if sp.issparse(A) or isinstance(A, np.ndarray):
        return spla.aslinearoperator(A)
    apply = getattr(A, "apply", None)
    if callable(apply):
        shape = getattr(A, "shape", None)
        return _CallableOperator(apply, shape[0] if shape else n)
    if callable(A):
        if n is None:
            raise ValueError("the order is required to wrap a plain callable")
        return _CallableOperator(A, n)
    raise TypeError(f"cannot interpret {type(A).__name__} as a linear operator")


def _check_finite(v, method, k):
    if not np.all(np.isfinite(v)):
        raise KrylovBreakdown(f"{method}: non-finite value at iteration {k}")


def _prepare(A, b, x0):
    b = np.asarray(b, dtype=float).ravel()
    n = b.size
    A = as_operator(A, n)
    if A.shape != (n, n):
        raise ValueError(f"operator shape {A.shape} does not match rhs length {n}")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float).ravel()
    return A, b, x


def _arnoldi_gmres(A, b, precs, x0, tol, maxit, method, final_prec=None):
    """Shared GMRES/FGMRES loop.

    With ``final_prec`` set (plain GMRES) the update is ``final_prec(V y)``;
    otherwise the stored preconditioned vectors ``Z`` are combined.
    """
    A, b, x0 = _prepare(A, b, x0)
    n = b.size
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return KrylovResult(np.zeros(n), 0, [0.0], True, 0.0)
    if tol <= 0:
        raise ValueError("tol must be positive")
    r0 = b - A.matvec(x0)
    beta = np.linalg.norm(r0)
    history = [beta / bnorm]
    if history[0] <= tol:
        return KrylovResult(x0, 0, history, True, history[0])

    m = min(maxit, n)
    V = np.zeros((m + 1, n))
    Z = np.zeros((m, n)) if final_prec is None else None
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = r0 / beta

    def solution(k):
        if k == 0:
            return x0.copy()
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k])
        if final_prec is None:
            return x0 + y @ Z[:k]
        return x0 + final_prec(y @ V[:k])

    k = 0
    while k < m:
        z = np.asarray(precs(V[k], k), dtype=float).ravel()
        _check_finite(z, method, k + 1)
        if Z is not None:
            Z[k] = z
        w = A.matvec(z)
        # modified Gram-Schmidt, one reorthogonalization pass
        for _ in range(2):
            for i in range(k + 1):
                hij = V[i] @ w
                H[i, k] += hij
                w = w - hij * V[i]
        hnext = np.linalg.norm(w)
        H[k + 1, k] = hnext
        _check_finite(H[: k + 2, k], method, k + 1)
        happy = hnext <= 1e-14 * np.linalg.norm(H[: k + 2, k])
        for i in range(k):
            t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
            H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
            H[i, k] = t
        denom = np.hypot(H[k, k], H[k + 1, k])
        if denom == 0.0:
            raise KrylovBreakdown(f"{method}: singular Hessenberg matrix at iteration {k + 1}")
        cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
        H[k, k] = denom
        H[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        k += 1
        history.append(abs(g[k]) / bnorm)
        if happy or history[-1] <= tol:
            x = solution(k)
            true_res = np.linalg.norm(b - A.matvec(x)) / bnorm
            if true_res <= tol or happy:
                return KrylovResult(x, k, history, true_res <= tol, true_res)
            log.debug("%s: estimate %.2e but true residual %.2e at step %d",
                      method, history[-1], true_res, k)
        V[k] = w / hnext

    x = solution(k)
    true_res = np.linalg.norm(b - A.matvec(x)) / bnorm
    return KrylovResult(x, k, history, true_res <= tol, true_res)


def gmres(A, b, M=None, x0=None, tol: float = 1e-6, maxit: int = 100) -> KrylovResult:
    """Unrestarted right-preconditioned GMRES.

    :param M: approximate inverse of ``A`` (matrix, operator or callable).
    :returns: :class:`KrylovResult`; ``converged`` is false when ``maxit``
        iterations did not reach ``tol``.
    :raises KrylovBreakdown: on non-finite values during the Arnoldi process.
    """
    n = np.asarray(b).size
    P = as_operator(M, n)
    return _arnoldi_gmres(A, b, lambda v, k: P.matvec(v), x0, tol, maxit, "gmres",
                          final_prec=P.matvec)


def fgmres(A, b, M=None, x0=None, tol: float = 1e-6, maxit: int = 100) -> KrylovResult:
    """Flexible GMRES; the preconditioned vectors are stored explicitly.

    ``M`` may change from one iteration to the next, e.g. when it wraps inner
    iterative solves.  A callable taking ``(v, k)`` receives the iteration
    index ``k`` as well.
    """
    n = np.asarray(b).size
    if M is not None and callable(M) and not isinstance(M, spla.LinearOperator) \
            and not hasattr(M, "apply") and _takes_two_args(M):
        precs = M
    else:
        P = as_operator(M, n)
        precs = lambda v, k: P.matvec(v)  # noqa: E731
    return _arnoldi_gmres(A, b, precs, x0, tol, maxit, "fgmres")


def _takes_two_args(fn) -> bool:
    import inspect

    try:
        params = inspect.signature(fn).parameters.values()
    except (TypeError, ValueError):
        return False
    positional = [p for p in params if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)]
    return len(positional) >= 2


def cg(A, b, M=None, x0=None, tol: float = 1e-8, maxit: int | None = None) -> KrylovResult:
    """Preconditioned conjugate gradients for SPD ``A`` and SPD ``M``.

    :raises NotPositiveDefiniteError: if a search direction has ``p^T A p <= 0``.
    """
    A, b, x = _prepare(A, b, x0)
    n = b.size
    maxit = n if maxit is None else maxit
    P = as_operator(M, n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return KrylovResult(np.zeros(n), 0, [0.0], True, 0.0)
    r = b - A.matvec(x)
    history = [np.linalg.norm(r) / bnorm]
    if history[0] <= tol:
        return KrylovResult(x, 0, history, True, history[0])
    z = P.matvec(r)
    p = z.copy()
    rz = r @ z
    for k in range(1, maxit + 1):
        Ap = A.matvec(p)
        pAp = p @ Ap
        if not pAp > 0:
            raise NotPositiveDefiniteError(f"cg: p^T A p = {pAp:.3e} at iteration {k}")
        a = rz / pAp
        x = x + a * p
        r = r - a * Ap
        _check_finite(r, "cg", k)
        history.append(np.linalg.norm(r) / bnorm)
        if history[-1] <= tol:
            return KrylovResult(x, k, history, True, np.linalg.norm(b - A.matvec(x)) / bnorm)
        z = P.matvec(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return KrylovResult(x, maxit, history, False, np.linalg.norm(b - A.matvec(x)) / bnorm)


def bicgstab(A, b, M=None, x0=None, tol: float = 1e-8, maxit: int | None = None) -> KrylovResult:
    """Right-preconditioned BiCGstab.

    :raises KrylovBreakdown: when ``rho`` or ``omega`` vanishes before convergence.
    """
    A, b, x = _prepare(A, b, x0)
    n = b.size
    maxit = n if maxit is None else maxit
    P = as_operator(M, n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return KrylovResult(np.zeros(n), 0, [0.0], True, 0.0)
    r = b - A.matvec(x)
    history = [np.linalg.norm(r) / bnorm]
    if history[0] <= tol:
        return KrylovResult(x, 0, history, True, history[0])
    rhat = r.copy()
    rho_old = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    tiny = np.finfo(float).tiny
    for k in range(1, maxit + 1):
        rho = rhat @ r
        if abs(rho) <= tiny:
            raise KrylovBreakdown(f"bicgstab: rho breakdown at iteration {k}")
        if k == 1:
            p = r.copy()
        else:
            p = r + (rho / rho_old) * (alpha / omega) * (p - omega * v)
        phat = P.matvec(p)
        v = A.matvec(phat)
        denom = rhat @ v
        if abs(denom) <= tiny:
            raise KrylovBreakdown(f"bicgstab: breakdown in (rhat, v) at iteration {k}")
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) / bnorm <= tol:
            x = x + alpha * phat
            history.append(np.linalg.norm(s) / bnorm)
            return KrylovResult(x, k, history, True, np.linalg.norm(b - A.matvec(x)) / bnorm)
        shat = P.matvec(s)
        t = A.matvec(shat)
        tt = t @ t
        if tt <= tiny:
            raise KrylovBreakdown(f"bicgstab: omega breakdown at iteration {k}")
        omega = (t @ s) / tt
        x = x + alpha * phat + omega * shat
        r = s - omega * t
        _check_finite(r, "bicgstab", k)
        history.append(np.linalg.norm(r) / bnorm)
        if history[-1] <= tol:
            return KrylovResult(x, k, history, True, np.linalg.norm(b - A.matvec(x)) / bnorm)
        if omega == 0.0:
            raise KrylovBreakdown(f"bicgstab: omega = 0 at iteration {k}")
        rho_old = rho
    return KrylovResult(x, maxit, history, False, np.linalg.norm(b - A.matvec(x)) / bnorm)


# -- direct factorizations -------------------------------------------------

class Factorization:
    """Sparse LU handle; ``solve(b, trans="T")`` solves with the transpose."""

    def __init__(self, lu, n):
        self._lu = lu
        self.shape = (n, n)

    def solve(self, b, trans: str = "N") -> np.ndarray:
        return self._lu.solve(np.asarray(b, dtype=float), trans=trans)

    apply = solve

    def as_operator(self) -> spla.LinearOperator:
        return _CallableOperator(self.solve, self.shape[0])


def sparse_cholesky(A) -> Factorization:
    """Factor a sparse SPD matrix as ``P A P^T = L D L^T``.

    SuperLU is run with a symmetric fill-reducing ordering and diagonal
    pivoting only, which for SPD input is a Cholesky factorization in
    ``L D L^T`` form; positivity of ``D`` is checked.

    :raises NotPositiveDefiniteError: if ``A`` is not symmetric or a pivot is
        not positive.
    """
    A = sp.csc_matrix(A, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    asym = abs(A - A.T).max() if A.nnz else 0.0
    if asym > 1e-12 * max(abs(A).max(), 1.0):
        raise NotPositiveDefiniteError(f"matrix is not symmetric (max asymmetry {asym:.2e})")
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise NotPositiveDefiniteError("off-diagonal pivoting occurred")
    d = lu.U.diagonal()
    if np.any(d <= 0):
        raise NotPositiveDefiniteError(f"non-positive pivot {d.min():.3e}")
    return Factorization(lu, A.shape[0])


def sparse_lu(A) -> Factorization:
    """Sparse LU with partial pivoting.

    :raises SingularMatrixError: if SuperLU detects an exactly singular factor.
    """
    A = sp.csc_matrix(A, dtype=float)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SingularMatrixError(str(exc)) from exc
    return Factorization(lu, A.shape[0])


# -- incomplete factorizations ---------------------------------------------

class IncompleteFactorization:
    """``L U`` (or ``L D L^T``) preconditioner, applied by two triangular solves."""

    def __init__(self, L, U, shift: float = 0.0):
        self.L = sp.csr_matrix(L)
        self.U = sp.csr_matrix(U)
        self.shift = shift
        self.shape = self.L.shape

    def apply(self, r) -> np.ndarray:
        y = spla.spsolve_triangular(self.L, r, lower=True, unit_diagonal=True)
        return spla.spsolve_triangular(self.U, y, lower=False)

    solve = apply

    def as_operator(self) -> spla.LinearOperator:
        return _CallableOperator(self.apply, self.shape[0])


class _SpiluFactorization(IncompleteFactorization):
    def __init__(self, ilu):
        self._ilu = ilu
        self.shift = 0.0
        self.shape = ilu.shape

    @property
    def L(self):
        return self._ilu.L

    @property
    def U(self):
        return self._ilu.U

    def apply(self, r):
        return self._ilu.solve(np.asarray(r, dtype=float))

    solve = apply


def _ilu0(A: sp.csr_matrix):
    """ILU(0) in IKJ order on the sparsity pattern of ``A``."""
    A = sp.csr_matrix(A, dtype=float, copy=True)
    A.sum_duplicates()
    A.sort_indices()
    indptr, indices, data = A.indptr, A.indices, A.data
    n = A.shape[0]
    diag_pos = np.full(n, -1)
    for i in range(n):
        row = indices[indptr[i]:indptr[i + 1]]
        hit = np.searchsorted(row, i)
        if hit < row.size and row[hit] == i:
            diag_pos[i] = indptr[i] + hit
    if np.any(diag_pos < 0):
        raise SingularMatrixError("ILU(0) needs a structurally nonzero diagonal")
    for i in range(1, n):
        start, end = indptr[i], indptr[i + 1]
        pos = {indices[p]: p for p in range(start, end)}
        for p in range(start, end):
            k = indices[p]
            if k >= i:
                break
            pivot = data[diag_pos[k]]
            if pivot == 0.0:
                raise SingularMatrixError(f"zero pivot at row {k}")
            data[p] /= pivot
            lik = data[p]
            for q in range(diag_pos[k] + 1, indptr[k + 1]):
                j = indices[q]
                target = pos.get(j)
                if target is not None:
                    data[target] -= lik * data[q]
    L = sp.tril(A, k=-1, format="csr") + sp.identity(n, format="csr")
    U = sp.triu(A, format="csr")
    return L, U


def _ict(A: sp.csr_matrix, droptol: float):
    """Threshold incomplete Cholesky, left-looking by columns, as ``L D L^T``.

    Entries of column ``j`` below ``droptol * ||A[:, j]||`` are dropped.
    """
    A = sp.csc_matrix(A, dtype=float)
    n = A.shape[0]
    colnorm = np.sqrt(np.asarray(A.multiply(A).sum(axis=0)).ravel())
    cols: list[dict[int, float]] = [dict() for _ in range(n)]  # L[:, j] below diagonal
    rows: list[list[int]] = [[] for _ in range(n)]  # columns k < i with L[i, k] != 0
    d = np.zeros(n)
    for j in range(n):
        w = {int(i): v for i, v in zip(A.indices[A.indptr[j]:A.indptr[j + 1]],
                                       A.data[A.indptr[j]:A.indptr[j + 1]]) if i >= j}
        for k in rows[j]:
            ljk = cols[k][j]
            scale = ljk * d[k]
            for i, lik in cols[k].items():
                if i >= j:
                    w[i] = w.get(i, 0.0) - lik * scale
        djj = w.pop(j, 0.0)
        if not djj > 0:
            raise NotPositiveDefiniteError(f"non-positive pivot {djj:.3e} at column {j}")
        d[j] = djj
        thresh = droptol * colnorm[j]
        col = {i: v / djj for i, v in w.items() if abs(v) > thresh}
        cols[j] = col
        for i in col:
            rows[i].append(j)
    r, c, v = [], [], []
    for j, col in enumerate(cols):
        for i, lij in col.items():
            r.append(i)
            c.append(j)
            v.append(lij)
    L = sp.csr_matrix((v, (r, c)), shape=(n, n)) + sp.identity(n, format="csr")
    U = sp.diags(d) @ L.T
    return L, sp.csr_matrix(U)


def incomplete_cholesky(A, droptol: float | None = None, max_shifts: int = 20) -> IncompleteFactorization:
    """Incomplete Cholesky preconditioner for SPD ``A``.

    :param droptol: ``None`` gives IC(0) on the pattern of ``A``; a number
        gives the threshold variant.
    :param max_shifts: on breakdown the factorization is retried on
        ``A + sigma I`` with ``sigma`` starting at ``1e-3`` times the mean
        diagonal and doubling.
    :raises NotPositiveDefiniteError: if every shifted attempt breaks down.
    """
    A = sp.csr_matrix(A, dtype=float)
    n = A.shape[0]
    sigma = 0.0
    step = 1e-3 * float(np.mean(A.diagonal()))
    for attempt in range(max_shifts + 1):
        As = A + sigma * sp.identity(n, format="csr") if sigma else A
        try:
            if droptol is None:
                L, U = _ilu0(As)
                if np.any(U.diagonal() <= 0):
                    raise NotPositiveDefiniteError("non-positive pivot in IC(0)")
                # symmetric IC(0): U = D L^T exactly in exact arithmetic
                U = sp.diags(U.diagonal()) @ L.T
            else:
                L, U = _ict(As, droptol)
            return IncompleteFactorization(L, U, shift=sigma)
        except (NotPositiveDefiniteError, SingularMatrixError):
            sigma = step if sigma == 0.0 else 2 * sigma
            log.debug("incomplete Cholesky breakdown, retrying with shift %.3e", sigma)
    raise NotPositiveDefiniteError(f"incomplete Cholesky failed after {max_shifts} shifts")


def incomplete_lu(A, droptol: float | None = None, fill_factor: float = 10.0) -> IncompleteFactorization:
    """ILU(0) when ``droptol`` is ``None``, otherwise threshold ILU (SuperLU ILUTP)."""
    A = sp.csr_matrix(A, dtype=float)
    if droptol is None:
        L, U = _ilu0(A)
        return IncompleteFactorization(L, U)
    try:
        ilu = spla.spilu(sp.csc_matrix(A), drop_tol=droptol, fill_factor=fill_factor)
    except RuntimeError as exc:
        raise SingularMatrixError(str(exc)) from exc
    return _SpiluFactorization(ilu)


SolveFn = Callable[[np.ndarray], np.ndarray]
