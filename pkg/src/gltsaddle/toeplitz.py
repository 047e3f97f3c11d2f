"""Matrix-valued trigonometric polynomials and multilevel block Toeplitz matrices."""
from __future__ import annotations

import json
import warnings
from typing import Mapping

import numpy as np
import scipy.sparse as sp


class OutOfBandWarning(UserWarning):
    """A stored coefficient does not fit inside the requested matrix size."""


class NonRealSymbolError(ValueError):
    """Raised when the imaginary part of a symbol evaluation does not cancel."""


class MatrixSymbol:
    """A ``d``-variate ``s x s`` trigonometric polynomial.

    The symbol is ``f(theta) = sum_j fhat_j exp(i <j, theta>)`` with finitely
    many nonzero real coefficient blocks ``fhat_j``.

    :param coeffs: mapping from integer multi-indices (tuples of length ``d``)
        to ``s x s`` real blocks.  Scalars are accepted when ``s == 1``.
    :param symmetric: if true, check ``fhat_{-j} == fhat_j^T`` for every stored
        ``j``, which makes the generated Toeplitz matrices symmetric.
    :raises ValueError: on inconsistent shapes or a failed symmetry check.
    """

    def __init__(self, coeffs: Mapping, d: int | None = None, s: int | None = None,
                 symmetric: bool = False):
        blocks = {}
        for j, block in coeffs.items():
            j = tuple(int(t) for t in np.atleast_1d(j))
            blocks[j] = np.atleast_2d(np.asarray(block, dtype=float))
        if d is None or s is None:
            if not blocks:
                raise ValueError("d and s are required for an empty symbol")
            first_j, first_b = next(iter(blocks.items()))
            d = len(first_j) if d is None else d
            s = first_b.shape[0] if s is None else s
        for j, block in blocks.items():
            if len(j) != d:
                raise ValueError(f"multi-index {j} has length {len(j)}, expected {d}")
            if block.shape != (s, s):
                raise ValueError(f"block at {j} has shape {block.shape}, expected {(s, s)}")
        self.d = int(d)
        self.s = int(s)
        self.coeffs = {j: b for j, b in sorted(blocks.items()) if np.any(b)}
        for b in self.coeffs.values():
            b.flags.writeable = False
        self.symmetric = bool(symmetric)
        if self.symmetric:
            for j, b in self.coeffs.items():
                other = self.coeffs.get(tuple(-t for t in j), np.zeros_like(b))
                if not np.array_equal(other, b.T):
                    raise ValueError(f"symmetric symbol requires fhat_-j = fhat_j^T, fails at j={j}")

    def __repr__(self):
        return f"MatrixSymbol(d={self.d}, s={self.s}, nnz_coeffs={len(self.coeffs)})"

    def coefficient(self, j) -> np.ndarray:
        return self.coeffs.get(tuple(j), np.zeros((self.s, self.s)))

    def __add__(self, other: "MatrixSymbol") -> "MatrixSymbol":
        if (self.d, self.s) != (other.d, other.s):
            raise ValueError("symbols must share d and s")
        out = {j: b.copy() for j, b in self.coeffs.items()}
        for j, b in other.coeffs.items():
            out[j] = out[j] + b if j in out else b.copy()
        return MatrixSymbol(out, self.d, self.s, symmetric=self.symmetric and other.symmetric)

    def __mul__(self, a: float) -> "MatrixSymbol":
        return MatrixSymbol({j: a * b for j, b in self.coeffs.items()}, self.d, self.s,
                            symmetric=self.symmetric)

    __rmul__ = __mul__

    def to_json(self) -> str:
        entries = [{"j": list(j), "block": b.tolist()} for j, b in self.coeffs.items()]
        return json.dumps({"d": self.d, "s": self.s, "symmetric": self.symmetric,
                           "entries": entries})

    @classmethod
    def from_json(cls, text: str) -> "MatrixSymbol":
        doc = json.loads(text)
        coeffs = {tuple(e["j"]): e["block"] for e in doc["entries"]}
        return cls(coeffs, doc["d"], doc["s"], symmetric=doc.get("symmetric", False))


def symbol_eval(sym: MatrixSymbol, theta, atol: float = 1e-13) -> np.ndarray:
    """Evaluate ``sym`` at one point or a batch of points.

    :param theta: array of shape ``(d,)`` or ``(..., d)``.
    :returns: real array of shape ``(s, s)`` or ``(..., s, s)``.
    :raises NonRealSymbolError: if the imaginary part exceeds ``atol`` times the
        size of the coefficients.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != sym.d:
        raise ValueError(f"theta must end in a dimension of size {sym.d}")
    batch = theta.shape[:-1]
    re = np.zeros(batch + (sym.s, sym.s))
    im = np.zeros(batch + (sym.s, sym.s))
    scale = 1.0
    for j, block in sym.coeffs.items():
        phase = theta @ np.asarray(j, dtype=float)
        re += np.cos(phase)[..., None, None] * block
        im += np.sin(phase)[..., None, None] * block
        scale = max(scale, float(np.abs(block).max()))
    worst = float(np.abs(im).max()) if im.size else 0.0
    if worst > atol * scale:
        raise NonRealSymbolError(f"symbol evaluation is not real: max |imag| = {worst:.3e}")
    return re


def toeplitz_build(sym: MatrixSymbol, n, out_of_band: str = "warn") -> sp.csr_matrix:
    """Multilevel block Toeplitz matrix ``T_n(sym)`` of order ``s * prod(n)``.

    The matrix is ``sum_j J^{j_1} kron ... kron J^{j_d} kron fhat_j`` where
    ``J^k`` has ones where ``row - col == k``.  The first level is the
    outermost (slowest) index.

    :param out_of_band: what to do with coefficients having ``|j_t| >= n_t``:
        ``"warn"`` (default) drops them with an :class:`OutOfBandWarning`,
        ``"ignore"`` drops them silently, ``"raise"`` raises ``ValueError``.
    """
    n = tuple(int(t) for t in np.atleast_1d(n))
    if len(n) != sym.d or min(n) < 1:
        raise ValueError(f"n must be {sym.d} positive integers, got {n}")
    if out_of_band not in ("warn", "ignore", "raise"):
        raise ValueError(f"unknown out_of_band policy {out_of_band!r}")
    order = sym.s * int(np.prod(n))
    T = sp.csr_matrix((order, order))
    dropped = []
    for j, block in sym.coeffs.items():
        if any(abs(jt) >= nt for jt, nt in zip(j, n)):
            dropped.append(j)
            continue
        term = sp.csr_matrix(block)
        for jt, nt in reversed(list(zip(j, n))):
            term = sp.kron(sp.eye(nt, k=-jt, format="csr"), term, format="csr")
        T = T + term
    if dropped:
        msg = f"coefficients {dropped} lie outside the band of an n={n} Toeplitz matrix"
        if out_of_band == "raise":
            raise ValueError(msg)
        if out_of_band == "warn":
            warnings.warn(msg, OutOfBandWarning, stacklevel=2)
    T = sp.csr_matrix(T)
    T.eliminate_zeros()
    T.sort_indices()
    return T


def predefined_symbols(alpha: float) -> tuple[MatrixSymbol, MatrixSymbol, MatrixSymbol]:
    """Return ``(m, kappa, f)`` for the scaled Poisson-constrained KKT system.

    ``m`` and ``kappa`` generate the scaled mass matrix ``M_bar / h^2`` and the
    stiffness matrix; ``f`` is the 3x3 symbol of the interleaved saddle matrix
    with unknowns ordered (state, control, adjoint) at each node.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    mh = {(0, 0): 0.5, (1, 0): 1 / 12, (-1, 0): 1 / 12, (0, 1): 1 / 12, (0, -1): 1 / 12,
          (1, 1): 1 / 12, (-1, -1): 1 / 12}
    kh = {(0, 0): 4.0, (1, 0): -1.0, (-1, 0): -1.0, (0, 1): -1.0, (0, -1): -1.0}
    m = MatrixSymbol(mh, 2, 1, symmetric=True)
    kappa = MatrixSymbol(kh, 2, 1, symmetric=True)
    fh = {}
    for j in set(mh) | set(kh):
        mj, kj = mh.get(j, 0.0), kh.get(j, 0.0)
        fh[j] = [[0.0, 0.0, kj], [0.0, alpha * mj, -mj], [kj, -mj, 0.0]]
    f = MatrixSymbol(fh, 2, 3, symmetric=True)
    return m, kappa, f


def grid_points(g: int, d: int = 2) -> np.ndarray:
    """Equispaced grid ``(j_1 pi / g, ..., j_d pi / g)``, ``j_t = 0..g-1``.

    Points are ordered lexicographically with the last index fastest.
    """
    t = np.arange(g) * (np.pi / g)
    return np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1).reshape(-1, d)
