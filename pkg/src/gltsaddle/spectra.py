"""Spectral localization of the saddle matrices.

Sampling of the eigenvalue functions of the 3x3 symbol ``f``, interval bounds,
eigenvalue counting by inertia, the eigenvalue-to-symbol matching algorithm and
dense checks of preconditioned spectra.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg import lapack

from .toeplitz import MatrixSymbol, grid_points, predefined_symbols, symbol_eval

DENSE_LIMIT = 6000

TABLE1_HEADER = ("n", "N", "count_in", "n_squared", "count_out", "ratio", "ratio_sqrt")
MATCH_HEADER = ("block", "eigenvalue", "theta1", "theta2", "sample", "abs_error")
SAMPLING_HEADER = ("g", "index", "lambda1", "lambda2", "lambda3")
SPECTRUM_HEADER = ("index", "eigenvalue", "interval")


class SpectrumSizeError(ValueError):
    """Matrix order exceeds the dense limit."""


class InertiaError(ArithmeticError):
    """A shifted factorization stayed (numerically) singular after perturbation."""


def eig3_symmetric(A, tol: float = 1e-12) -> np.ndarray:
    """Ascending eigenvalues of one or many symmetric 3x3 matrices.

    :param A: array of shape ``(3, 3)`` or ``(..., 3, 3)``.
    :raises ValueError: if some matrix is not symmetric to ``tol`` (max norm).
    """
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (3, 3):
        raise ValueError(f"expected trailing shape (3, 3), got {A.shape}")
    asym = np.abs(A - np.swapaxes(A, -1, -2)).max() if A.size else 0.0
    if asym > tol:
        raise ValueError(f"matrix is not symmetric: max |A - A^T| = {asym:.3e}")
    return np.linalg.eigvalsh(A)


def _symbol(alpha_or_sym) -> MatrixSymbol:
    if isinstance(alpha_or_sym, MatrixSymbol):
        return alpha_or_sym
    return predefined_symbols(float(alpha_or_sym))[2]


@dataclass(frozen=True)
class SymbolSampling:
    """Eigenvalue functions sampled on the ``g x g`` grid of ``[0, pi)^2``.

    ``values[i, l]`` is ``lambda_{l+1}`` at ``theta[i]``; ``sorted(l)`` gives
    the ascending vector ``P_l`` and ``order[l]`` the permutation producing it.
    """

    g: int
    alpha: float | None
    theta: np.ndarray
    values: np.ndarray

    def sorted(self, l: int) -> np.ndarray:
        return np.sort(self.values[:, l])

    @property
    def concatenated(self) -> np.ndarray:
        """``P = [P_1, P_2, P_3]``, each block ascending."""
        return np.concatenate([self.sorted(l) for l in range(self.values.shape[1])])

    def block(self, l: int):
        """Ascending samples of ``lambda_{l+1}`` and their grid points."""
        idx = np.argsort(self.values[:, l], kind="stable")
        return self.values[idx, l], self.theta[idx]


def sample_symbol(alpha, g: int) -> SymbolSampling:
    """Evaluate the eigenvalue functions of ``f`` (or any symbol) on the grid.

    :param alpha: regularization parameter, or a :class:`MatrixSymbol`.
    :param g: points per direction, ``theta = (j pi / g, k pi / g)``.
    """
    if int(g) != g or g < 2:
        raise ValueError(f"grid size must be an integer >= 2, got {g!r}")
    sym = _symbol(alpha)
    theta = grid_points(int(g), sym.d)
    values = np.linalg.eigvalsh(symbol_eval(sym, theta))
    a = None if isinstance(alpha, MatrixSymbol) else float(alpha)
    return SymbolSampling(int(g), a, theta, values)


def interval_bounds(alpha, g: int = 3000, chunk: int = 250_000) -> np.ndarray:
    """Extremes ``[[m_1, M_1], [m_2, M_2], [m_3, M_3]]`` of the sampled eigenvalue functions.

    The samples are ``theta = (j, k) * pi / g`` for ``0 <= j, k < g``, a grid on
    ``[0, pi)^2``.  The grid is processed in chunks so ``g = 3000`` (nine
    million points) runs in bounded memory.
    """
    if int(g) != g or g < 2:
        raise ValueError(f"grid size must be an integer >= 2, got {g!r}")
    sym = _symbol(alpha)
    if sym.d != 2:
        raise ValueError("interval_bounds expects a bivariate symbol")
    g = int(g)
    t = np.arange(g) * (np.pi / g)
    lo = np.full(sym.s, np.inf)
    hi = np.full(sym.s, -np.inf)
    rows = max(1, chunk // g)
    for start in range(0, g, rows):
        t1 = t[start:start + rows]
        theta = np.stack(np.meshgrid(t1, t, indexing="ij"), axis=-1).reshape(-1, 2)
        ev = np.linalg.eigvalsh(symbol_eval(sym, theta))
        lo = np.minimum(lo, ev.min(axis=0))
        hi = np.maximum(hi, ev.max(axis=0))
    return np.stack([lo, hi], axis=1)


# -- counting ---------------------------------------------------------------

def _dense_fortran(A, shift: float = 0.0) -> np.ndarray:
    # build A - shift*I directly in Fortran order to avoid copies inside LAPACK
    n = A.shape[0]
    D = np.zeros((n, n), order="F")
    if sp.issparse(A):
        C = A.tocoo()
        D[C.row, C.col] = C.data
    else:
        D[...] = A
    D[np.diag_indices(n)] -= shift
    return D


def _ldl_negatives(D: np.ndarray) -> tuple[int, float]:
    """Negative inertia of a symmetric matrix from a Bunch-Kaufman factorization.

    Returns the count and the smallest pivot magnitude.  ``D`` is overwritten.
    """
    n = D.shape[0]
    lwork = int(lapack.dsytrf_lwork(n, lower=1)[1])
    ldu, ipiv, info = lapack.dsytrf(D, lower=1, overwrite_a=1, lwork=max(lwork, n))
    if info < 0:
        raise InertiaError(f"dsytrf argument error {info}")
    neg, smallest = 0, np.inf
    i = 0
    diag = np.diag(ldu)
    while i < n:
        if ipiv[i] > 0:
            d = diag[i]
            neg += d < 0
            smallest = min(smallest, abs(d))
            i += 1
        else:
            # 2x2 pivot block in rows i, i+1
            a, b, c = diag[i], ldu[i + 1, i], diag[i + 1]
            det = a * c - b * b
            if det < 0:
                neg += 1
            elif a + c < 0:
                neg += 2
            smallest = min(smallest, abs(det) / max(abs(a), abs(c), abs(b), 1e-300))
            i += 2
    return int(neg), float(smallest)


def inertia_below(A, sigma: float, inclusive: bool = False, tol: float = 1e-12,
                  retries: int = 4) -> int:
    """Number of eigenvalues of symmetric ``A`` below ``sigma``.

    Uses a dense ``LDL^T`` factorization of ``A - sigma I`` and Sylvester's law.
    When a pivot falls below ``tol * ||A||`` the shift is treated as an
    eigenvalue: it is moved up (``inclusive``, counting ``lambda <= sigma``)
    or down (counting ``lambda < sigma``) and the factorization is retried.
    """
    scale = _norm(A)
    step = 10 * tol * scale * (1 if inclusive else -1)
    shift = float(sigma)
    for _ in range(retries + 1):
        neg, smallest = _ldl_negatives(_dense_fortran(A, shift))
        if smallest > tol * scale:
            return neg
        shift += step
    raise InertiaError(f"A - sigma I singular to working precision near sigma={sigma!r}")


def _norm(A) -> float:
    if sp.issparse(A):
        return float(abs(A).sum(axis=1).max()) or 1.0
    return float(np.abs(A).sum(axis=1).max()) or 1.0


def _band_storage(A) -> np.ndarray:
    C = sp.triu(sp.csr_matrix(A)).tocoo()
    u = int((C.col - C.row).max()) if C.nnz else 0
    ab = np.zeros((u + 1, A.shape[0]))
    ab[u + C.row - C.col, C.col] = C.data
    return ab


def _count_banded(A, a: float, b: float) -> int:
    # orthogonal band reduction to tridiagonal plus Sturm bisection on (a, b]
    w = sla.eig_banded(_band_storage(A), eigvals_only=True, select="v", select_range=(a, b))
    return int(len(w))


def count_eigs_in_interval(A, a: float, b: float, closed: str = "right",
                           method: str = "auto", dense_limit: int = DENSE_LIMIT,
                           tol: float = 1e-12) -> int:
    """Count eigenvalues of a symmetric matrix in an interval.

    :param closed: ``"right"`` for ``(a, b]``, ``"left"`` for ``[a, b)``,
        ``"both"`` for ``[a, b]``, ``"neither"`` for ``(a, b)``.
    :param method: ``"dense"`` (Bunch-Kaufman inertia at both endpoints),
        ``"banded"`` (band tridiagonalization and Sturm counts, for large
        banded matrices such as the interleaved saddle matrix) or ``"auto"``,
        which picks dense up to ``dense_limit``.
    """
    if not a < b:
        raise ValueError(f"need a < b, got ({a}, {b})")
    if closed not in ("right", "left", "both", "neither"):
        raise ValueError(f"unknown closedness {closed!r}")
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if method == "auto":
        method = "dense" if A.shape[0] <= dense_limit else "banded"
    left_closed = closed in ("left", "both")
    right_closed = closed in ("right", "both")
    if method == "dense":
        return (inertia_below(A, b, inclusive=right_closed, tol=tol)
                - inertia_below(A, a, inclusive=not left_closed, tol=tol))
    if method == "banded":
        # the banded driver counts (lo, hi]; shift endpoints for other closedness
        eps = 10 * tol * _norm(A)
        lo = a - eps if left_closed else a
        hi = b if right_closed else b - eps
        return _count_banded(A, lo, hi)
    raise ValueError(f"unknown method {method!r}")


def full_spectrum(A, dense_limit: int = DENSE_LIMIT) -> np.ndarray:
    """All eigenvalues of a symmetric matrix, ascending."""
    if A.shape[0] > dense_limit:
        raise SpectrumSizeError(f"order {A.shape[0]} exceeds dense limit {dense_limit}")
    D = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    return sla.eigvalsh(D)


def match_eigenvalues(block, samples, points=None):
    """Nearest-sample matching of eigenvalues to sampled symbol values.

    :param block: eigenvalues ``Bl_t``.
    :param samples: sampled values ``Eval_t``, in grid order.
    :param points: grid points of the samples, shape ``(len(samples), d)``;
        defaults to the sample indices.
    :returns: ``(index, sample, point, abs_error)`` arrays, one row per
        eigenvalue.  Ties go to the smallest grid index.
    """
    block = np.asarray(block, dtype=float).ravel()
    samples = np.asarray(samples, dtype=float).ravel()
    if block.size == 0 or samples.size == 0:
        raise ValueError("block and samples must be nonempty")
    if points is None:
        points = np.arange(len(samples))[:, None]
    points = np.asarray(points).reshape(len(samples), -1)
    order = np.argsort(samples, kind="stable")
    sv = samples[order]
    # first occurrence of each neighbouring value, so equal values resolve to the smallest index
    right = np.minimum(np.searchsorted(sv, block, side="left"), len(sv) - 1)
    left = np.searchsorted(sv, sv[np.maximum(right - 1, 0)], side="left")
    right = np.searchsorted(sv, sv[right], side="left")
    il, ir = order[left], order[right]
    dl, dr = np.abs(block - samples[il]), np.abs(block - samples[ir])
    chosen = np.where((dr < dl) | ((dr == dl) & (ir < il)), ir, il)
    return chosen, samples[chosen], points[chosen], np.abs(block - samples[chosen])


# -- reports ----------------------------------------------------------------

@dataclass(frozen=True)
class SpectralReport:
    """Interval bounds and counts for one interleaved saddle matrix.

    ``count_out`` is ``n^2`` minus the count in the second interval;
    ``ratio`` divides it by ``3 n^2`` and ``ratio_sqrt`` by ``sqrt(3 n^2)``.
    """

    n: int
    alpha: float
    bounds: np.ndarray
    counts: tuple
    matches: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return 3 * self.n**2

    @property
    def count_out(self) -> int:
        return self.n**2 - self.counts[1]

    @property
    def ratio(self) -> float:
        return self.count_out / self.N

    @property
    def ratio_sqrt(self) -> float:
        return self.count_out / np.sqrt(self.N)

    def table_row(self) -> dict:
        return dict(zip(TABLE1_HEADER, (self.n, self.N, self.counts[1], self.n**2,
                                        self.count_out, self.ratio, self.ratio_sqrt)))


INTERVAL_CLOSEDNESS = ("right", "right", "left")


def spectral_report(n: int, alpha: float, bounds=None, g: int = 3000,
                    intervals=(0, 1, 2), method: str = "auto") -> SpectralReport:
    """Count eigenvalues of the interleaved Poisson saddle matrix per interval.

    Intervals are ``(m_1, M_1]``, ``(m_2, M_2]`` and ``[m_3, M_3)``; counts for
    intervals not listed in ``intervals`` are reported as ``-1``.
    """
    from .saddle import build_system, permute_to_block_toeplitz

    if bounds is None:
        bounds = interval_bounds(alpha, g)
    B = permute_to_block_toeplitz(build_system(n, alpha))
    counts = []
    for l in range(3):
        if l in intervals:
            lo, hi = bounds[l]
            counts.append(count_eigs_in_interval(B, lo, hi, INTERVAL_CLOSEDNESS[l], method=method))
        else:
            counts.append(-1)
    return SpectralReport(n, float(alpha), np.asarray(bounds), tuple(counts))


def match_blocks(n: int, alpha: float, dense_limit: int = DENSE_LIMIT):
    """Run the matching algorithm for the three blocks of ``B_N``.

    The spectrum is split into ``Bl_1, Bl_2, Bl_3`` of ``n^2`` eigenvalues
    each and matched against the symbol sampled on the ``n x n`` grid.
    Returns a list of row dicts with the :data:`MATCH_HEADER` keys.
    """
    from .saddle import build_system, permute_to_block_toeplitz

    ev = full_spectrum(permute_to_block_toeplitz(build_system(n, alpha)), dense_limit)
    sampling = sample_symbol(alpha, n)
    rows = []
    for t in range(3):
        bl = ev[t * n * n:(t + 1) * n * n]
        _, sval, spts, err = match_eigenvalues(bl, sampling.values[:, t], sampling.theta)
        for lam, s, p, e in zip(bl, sval, spts, err):
            rows.append({"block": t + 1, "eigenvalue": lam, "theta1": p[0], "theta2": p[1],
                         "sample": s, "abs_error": e})
    return rows


@dataclass(frozen=True)
class PreconditionedSpectrum:
    """Dense spectrum of a preconditioned saddle matrix and its oracle."""

    eigenvalues: np.ndarray
    unit_count: int
    non_unit: np.ndarray
    oracle: np.ndarray


def preconditioned_spectrum_check(sys, variant: str = "pn", dense_limit: int = 3000,
                                  unit_tol: float = 1e-8) -> PreconditionedSpectrum:
    """Eigenvalues of ``P^{-1} A`` next to the predicted non-unit eigenvalues.

    For ``pn`` and ``pbct`` the prediction is ``1 + (h^4 / alpha) mu`` with
    ``M x = mu K^T M^{-1} K x``.  For ``pd`` and ``ptilde`` it is
    ``1 + (alpha / h^4) nu`` with ``nu`` the eigenvalues of ``M^{-1} K M^{-1} K^T``.
    The identity variant has no prediction (empty oracle).
    """
    from .saddle import PreconditionerOp, canonical_variant

    v = canonical_variant(variant)
    if sys.N > dense_limit:
        raise SpectrumSizeError(f"order {sys.N} exceeds dense limit {dense_limit}")
    P = PreconditionerOp(sys, v).matrix().toarray()
    A = (sys.A_bar if v == "pd" else sys.A).toarray()
    ev = sla.eigvals(A, P) if v != "identity" else np.linalg.eigvals(A)
    ev = np.sort_complex(ev)
    unit = np.abs(ev - 1.0) <= unit_tol
    M = sys.M.toarray()
    K = sys.Z.toarray()
    h4 = sys.h**4
    if v in ("pn", "pbct"):
        S = K.T @ np.linalg.solve(M, K)
        oracle = 1.0 + (h4 / sys.alpha) * _gen_eigs(M, S, K is not None and sys.kind == "poisson")
    elif v in ("pd", "ptilde"):
        S = K @ np.linalg.solve(M, K.T)
        oracle = 1.0 + (sys.alpha / h4) * _gen_eigs(S, M, sys.kind == "poisson")
    else:
        oracle = np.array([])
    return PreconditionedSpectrum(ev, int(unit.sum()), ev[~unit], np.sort_complex(oracle))


def _gen_eigs(A, B, symmetric: bool):
    if symmetric:
        return sla.eigh(0.5 * (A + A.T), 0.5 * (B + B.T), eigvals_only=True)
    return sla.eigvals(A, B)


# -- CSV --------------------------------------------------------------------

def write_csv(rows, header, fh=None) -> str:
    """Write dict rows under a fixed header; returns the text if ``fh`` is None."""
    out = fh if fh is not None else io.StringIO()
    w = csv.DictWriter(out, fieldnames=list(header), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r[k]) for k in header})
    return out.getvalue() if fh is None else ""


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def sampling_rows(sampling: SymbolSampling):
    """Sorted eigenvalue-function curves ``P_1, P_2, P_3`` as CSV rows."""
    cols = [sampling.sorted(l) for l in range(3)]
    return [{"g": sampling.g, "index": i, "lambda1": cols[0][i], "lambda2": cols[1][i],
             "lambda3": cols[2][i]} for i in range(len(cols[0]))]


def spectrum_rows(eigenvalues, bounds):
    """Eigenvalues flagged with the interval (1, 2, 3) containing them, 0 for outliers."""
    rows = []
    (m1, M1), (m2, M2), (m3, M3) = bounds
    for i, lam in enumerate(eigenvalues):
        tag = 1 if m1 < lam <= M1 else 2 if m2 < lam <= M2 else 3 if m3 <= lam < M3 else 0
        rows.append({"index": i, "eigenvalue": lam, "interval": tag})
    return rows
