"""Scaled saddle-point systems of the distributed optimal control problem and
their block back-substitution preconditioners.

Unknowns are ordered ``(y, u, p)``: state, control and (sign-flipped) adjoint,
each of length ``n^2``.  The FEM system

    [[M_bar, 0, K_bar^T], [0, alpha M_bar, -M_bar], [K_bar, -M_bar, 0]]

is scaled as ``A = D1 A_bar D2`` with ``D1 = diag(h^2 I, I, I)`` and
``D2 = diag(I, I/h^2, I/h^2)``, giving
``[[h^4 M, 0, K^T], [0, alpha M, -M], [K, -M, 0]]`` with ``M = M_bar / h^2``.
Under an advection-diffusion-reaction constraint ``K`` is replaced by
``Z = K + h V + r h^2 M`` where ``V = V_bar / h``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import grid_fem, krylov
from .grid_fem import UniformMesh

VARIANTS = ("identity", "pn", "pbct", "pd", "ptilde")
_ALIASES = {
    "none": "identity", "i": "identity", "p_n": "pn", "p_bct": "pbct", "p_d": "pd",
    "p_tilde_bct": "ptilde", "ptilde_bct": "ptilde",
}


@dataclass(frozen=True, eq=False)
class SaddleSystem:
    """Scaled KKT system plus the pieces needed to undo the scaling.

    ``M``, ``K`` and ``Z`` are the scaled blocks (``Z is K`` for Poisson);
    ``A_bar`` and ``b_bar`` are the unscaled FEM system.
    """

    n: int
    alpha: float
    kind: str
    c: tuple
    r: float
    M: sp.csr_matrix
    K: sp.csr_matrix
    V: sp.csr_matrix | None
    Z: sp.csr_matrix
    A: sp.csr_matrix
    b: np.ndarray
    A_bar: sp.csr_matrix
    b_bar: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def N(self) -> int:
        """Order of the saddle matrix, ``3 n^2``."""
        return 3 * self.n * self.n

    @property
    def M_bar(self):
        return self.M * self.h**2

    @property
    def Z_bar(self):
        return self.A_bar[2 * self.n**2:, : self.n**2]

    def target(self, variant: str):
        """Matrix and right-hand side a preconditioner ``variant`` acts on.

        ``"pd"`` works on the unscaled system, every other variant on the
        scaled one.
        """
        if canonical_variant(variant) == "pd":
            return self.A_bar, self.b_bar
        return self.A, self.b


def canonical_variant(variant: str) -> str:
    v = str(variant).lower()
    v = _ALIASES.get(v, v)
    if v not in VARIANTS:
        raise ValueError(f"unknown preconditioner {variant!r}; choose from {VARIANTS}")
    return v


def _symmetrize(A):
    return sp.csr_matrix((A + A.T) * 0.5)


def _saddle_matrix(B11, B22, B23, B31, B32):
    # [[B11, 0, B31^T], [0, B22, B23], [B31, B32, 0]], built by symmetric insertion
    A = sp.bmat([[B11, None, B31.T], [None, B22, B23], [B31, B32, None]], format="csr")
    A.sort_indices()
    return A


def build_system(n: int, alpha: float, kind: str = "poisson", y_d=None, z=None, *,
                 c=(2.0, 3.0), r: float = 1.0, yd_mode: str = "load") -> SaddleSystem:
    """Assemble the scaled saddle system for ``n`` interior nodes per side.

    :param kind: ``"poisson"`` or ``"advection"`` (then ``c`` and ``r`` are the
        convection vector and reaction coefficient).
    :param y_d: desired state; zero if omitted.
    :param yd_mode: ``"load"`` integrates ``y_d`` against the basis by
        quadrature, ``"interpolate"`` uses ``M_bar`` times its nodal values.
        The two differ when ``y_d`` oscillates on the mesh scale (for the
        Poisson benchmark at ``n = 7`` the nodal values of ``sin(8 pi x)``
        vanish identically).
    :param z: forcing term, integrated against the basis; zero if omitted.
    """
    mesh = UniformMesh(n)
    if not (np.isfinite(alpha) and alpha > 0):
        raise ValueError(f"alpha must be a positive real, got {alpha!r}")
    kind = str(kind).lower()
    if kind not in ("poisson", "advection"):
        raise ValueError(f"kind must be 'poisson' or 'advection', got {kind!r}")
    h = mesh.h
    N1 = mesh.n_dofs
    M_bar = _symmetrize(grid_fem.assemble_mass(mesh))
    K_bar = _symmetrize(grid_fem.assemble_stiffness(mesh))
    M = _symmetrize(M_bar / h**2)
    K = K_bar
    if kind == "advection":
        c = tuple(float(t) for t in c)
        V_bar = grid_fem.assemble_convection(mesh, c)
        V = sp.csr_matrix(V_bar / h)
        Z_bar = sp.csr_matrix(K_bar + V_bar + r * M_bar)
        Z = sp.csr_matrix(K + h * V + (r * h**2) * M)
    else:
        c, r, V = (0.0, 0.0), 0.0, None
        Z_bar, Z = K_bar, K
    A = _saddle_matrix(h**4 * M, alpha * M, -M, Z, -M)
    A_bar = _saddle_matrix(M_bar, alpha * M_bar, -M_bar, Z_bar, -M_bar)

    if yd_mode not in ("load", "interpolate"):
        raise ValueError(f"yd_mode must be 'load' or 'interpolate', got {yd_mode!r}")
    if y_d is None:
        b1 = np.zeros(N1)
    elif yd_mode == "load":
        b1 = grid_fem.assemble_load(mesh, y_d)
    else:
        b1 = M_bar @ grid_fem.interpolate(mesh, y_d)
    zl = grid_fem.assemble_load(mesh, z) if z is not None else np.zeros(N1)
    b_bar = np.concatenate([b1, np.zeros(N1), zl])
    ones = np.ones(N1)
    d1 = np.concatenate([h**2 * ones, ones, ones])
    d2 = np.concatenate([ones, ones / h**2, ones / h**2])
    return SaddleSystem(n=mesh.n, alpha=float(alpha), kind=kind, c=tuple(c), r=float(r),
                        M=M, K=K, V=V, Z=Z, A=A, b=d1 * b_bar, A_bar=A_bar, b_bar=b_bar,
                        d1=d1, d2=d2)


def unscale_solution(sys: SaddleSystem, y) -> np.ndarray:
    """Map a solution of the scaled system to one of ``A_bar x = b_bar``."""
    y = np.asarray(y, dtype=float)
    if y.shape != (sys.N,):
        raise ValueError(f"expected a vector of length {sys.N}, got shape {y.shape}")
    return sys.d2 * y


def interleave_permutation(n: int) -> np.ndarray:
    """Index array ``perm`` with ``B = A[perm][:, perm]`` node-interleaved.

    Position ``3k + l`` of the permuted vector holds component ``l`` of node ``k``.
    """
    N1 = n * n
    k = np.arange(N1)
    return (np.arange(3)[None, :] * N1 + k[:, None]).ravel()


def permute_to_block_toeplitz(sys: SaddleSystem) -> sp.csr_matrix:
    """Interleaved matrix ``B_N = Pi A_N Pi^T``.

    For the Poisson constraint this equals ``T_n(f)`` plus a correction
    supported on the state-state entries.
    """
    perm = interleave_permutation(sys.n)
    B = sys.A[perm][:, perm]
    return sp.csr_matrix(B)


# -- preconditioners --------------------------------------------------------

class InnerSolveError(RuntimeError):
    """An inner solve inside a preconditioner application failed.

    ``stage`` is the 1-based step of the back-substitution.
    """

    def __init__(self, stage: int, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


@dataclass
class InnerMode:
    """How the auxiliary systems with ``K``, ``K^T`` (or ``Z``) and ``M`` are solved.

    ``method="direct"`` uses sparse factorizations; ``"iterative"`` uses PCG
    with incomplete Cholesky for SPD blocks and BiCGstab with ILU otherwise.
    """

    method: str = "direct"
    tol: float = 1e-8
    maxit: int | None = None
    droptol: float | None = 1e-2

    def __post_init__(self):
        if self.method not in ("direct", "iterative"):
            raise ValueError(f"inner method must be 'direct' or 'iterative', got {self.method!r}")
        if not self.tol > 0:
            raise ValueError("inner tolerance must be positive")


class _IterativeSolver:
    def __init__(self, A, spd: bool, mode: InnerMode):
        self.A = sp.csr_matrix(A)
        self.spd = spd
        self.mode = mode
        if spd:
            self.prec = krylov.incomplete_cholesky(self.A, droptol=mode.droptol)
        else:
            self.prec = krylov.incomplete_lu(self.A, droptol=mode.droptol)
        self.iterations = []

    def solve(self, rhs):
        method = krylov.cg if self.spd else krylov.bicgstab
        res = method(self.A, rhs, M=self.prec, tol=self.mode.tol, maxit=self.mode.maxit)
        self.iterations.append(res.iterations)
        if not res.converged:
            raise RuntimeError(f"{method.__name__} stopped at relative residual "
                               f"{res.residuals[-1]:.2e} after {res.iterations} iterations")
        return res.x


class _Inner:
    """Solvers for ``B``, ``B^T`` and the mass matrix, wrapped with stage tags."""

    def __init__(self, B, Mass, mode: InnerMode, symmetric_B: bool):
        self.mode = mode
        if mode.method == "direct":
            self._M = krylov.sparse_cholesky(Mass)
            if symmetric_B:
                self._B = krylov.sparse_cholesky(B)
                self._BT = self._B
                self.solve_BT = self._B.solve
            else:
                self._B = krylov.sparse_lu(B)
                self.solve_BT = lambda x: self._B.solve(x, trans="T")
            self.solve_B = self._B.solve
            self.solve_M = self._M.solve
        else:
            Msolver = _IterativeSolver(Mass, True, mode)
            Bsolver = _IterativeSolver(B, symmetric_B, mode)
            BTsolver = Bsolver if symmetric_B else _IterativeSolver(sp.csr_matrix(B.T), False, mode)
            self.solve_M, self.solve_B, self.solve_BT = Msolver.solve, Bsolver.solve, BTsolver.solve
            self.solvers = (Msolver, Bsolver, BTsolver)


def _staged(stage, fn, x):
    try:
        out = fn(x)
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise InnerSolveError(stage, str(exc)) from exc
    if not np.all(np.isfinite(out)):
        raise InnerSolveError(stage, "non-finite inner solution")
    return out


class PreconditionerOp:
    """Application of the inverse of a block preconditioner.

    ``apply(r)`` returns ``P^{-1} r`` by back-substitution; ``matrix()``
    assembles ``P`` itself (for testing and dense spectral checks).
    """

    def __init__(self, sys: SaddleSystem, variant: str = "pn", inner: InnerMode | None = None):
        self.variant = canonical_variant(variant)
        self.inner_mode = inner or InnerMode()
        self.sys = sys
        self.n1 = sys.n**2
        self.shape = (sys.N, sys.N)
        self._inner = None
        if self.variant == "identity":
            return
        if self.variant == "pd":
            B, Mass = sys.Z_bar, sys.M_bar
        else:
            B, Mass = sys.Z, sys.M
        self._inner = _Inner(sp.csr_matrix(B), sp.csr_matrix(Mass), self.inner_mode,
                             symmetric_B=sys.kind == "poisson")

    def __repr__(self):
        return f"PreconditionerOp(variant={self.variant!r}, inner={self.inner_mode.method!r})"

    def _split(self, r):
        r = np.asarray(r, dtype=float)
        if r.shape != (self.shape[0],):
            raise ValueError(f"expected a vector of length {self.shape[0]}, got {r.shape}")
        n1 = self.n1
        return r[:n1], r[n1:2 * n1], r[2 * n1:]

    def apply(self, r) -> np.ndarray:
        r1, r2, r3 = self._split(r)
        if self.variant == "identity":
            return np.array(r, dtype=float)
        a = self.sys.alpha
        h4 = self.sys.h**4
        s = self._inner
        B, M = (self.sys.Z_bar, self.sys.M_bar) if self.variant == "pd" else (self.sys.Z, self.sys.M)
        if self.variant == "pn":
            z2 = _staged(1, s.solve_BT, r1) / a
            z3 = a * z2 - _staged(2, s.solve_M, r2)
            z1 = _staged(3, s.solve_B, r3 + M @ z2)
        elif self.variant == "pbct":
            z3 = _staged(1, s.solve_BT, r1)
            z2 = (z3 + _staged(2, s.solve_M, r2)) / a
            z1 = _staged(3, s.solve_B, r3 + M @ z2)
        elif self.variant == "pd":
            z3 = -_staged(1, s.solve_M, r2)
            z1 = _staged(2, s.solve_M, r1 - B.T @ z3)
            z2 = _staged(3, s.solve_M, B @ z1 - r3)
        else:  # ptilde: [[h^4 M, 0, B^T], [0, 0, -M], [B, -M, 0]]
            z3 = -_staged(1, s.solve_M, r2)
            z1 = _staged(2, s.solve_M, r1 - B.T @ z3) / h4
            z2 = _staged(3, s.solve_M, B @ z1 - r3)
        return np.concatenate([z1, z2, z3])

    __call__ = apply

    def as_linear_operator(self) -> spla.LinearOperator:
        return krylov.as_operator(self.apply, self.shape[0])

    def matrix(self) -> sp.csr_matrix:
        """The preconditioner ``P`` (not its inverse) as a sparse matrix."""
        sys = self.sys
        a, h4 = sys.alpha, sys.h**4
        M, B = sys.M, sys.Z
        O = None
        if self.variant == "identity":
            return sp.identity(sys.N, format="csr")
        if self.variant == "pn":
            P = [[O, a * B.T, O], [O, a * M, -M], [B, -M, O]]
        elif self.variant == "pbct":
            P = [[O, O, B.T], [O, a * M, -M], [B, -M, O]]
        elif self.variant == "ptilde":
            P = [[h4 * M, O, B.T], [O, O, -M], [B, -M, O]]
        else:
            Mb, Bb = sys.M_bar, sys.Z_bar
            P = [[Mb, O, Bb.T], [O, O, -Mb], [Bb, -Mb, O]]
        n1 = self.n1
        # bmat needs a shape hint for all-None block columns
        P = [[blk if blk is not None else sp.csr_matrix((n1, n1)) for blk in row] for row in P]
        return sp.bmat(P, format="csr")


def make_preconditioner(sys: SaddleSystem, variant: str = "pn", inner="direct",
                        **inner_options) -> PreconditionerOp:
    """Factor the inner blocks and return the preconditioner for ``variant``.

    :param variant: one of ``identity``, ``pn``, ``pbct``, ``pd``, ``ptilde``.
    :param inner: ``"direct"``, ``"iterative"`` or an :class:`InnerMode`.
    """
    mode = inner if isinstance(inner, InnerMode) else InnerMode(method=inner, **inner_options)
    return PreconditionerOp(sys, variant, mode)


# -- MatrixMarket export ----------------------------------------------------

def export_matrix(path, A, comment: str = "") -> None:
    """Write a sparse matrix in MatrixMarket coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)


def export_vector(path, b, comment: str = "") -> None:
    """Write a vector as a one-column MatrixMarket array."""
    scipy.io.mmwrite(str(path), np.asarray(b, dtype=float).reshape(-1, 1), comment=comment)


def read_matrix(path) -> sp.csr_matrix:
    return sp.csr_matrix(scipy.io.mmread(str(path)))


def read_vector(path) -> np.ndarray:
    return np.asarray(scipy.io.mmread(str(path)), dtype=float).ravel()
