"""scikit-learn style wrappers around the functional API.

The estimators hold configuration in ``__init__`` (so ``get_params`` and
``clone`` work) and store everything learned in trailing-underscore
attributes.  "Fitting" here means sampling a symbol or factoring the inner
blocks of a preconditioner for a given saddle system.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import krylov, saddle, spectra


class SymbolSpectrum(BaseEstimator):
    """Interval bounds of the Poisson saddle symbol and per-interval eigenvalue counts.

    :param alpha: regularization parameter.
    :param grid: points per direction used to sample the eigenvalue functions.
    :param method: eigenvalue counting method, see
        :func:`gltsaddle.spectra.count_eigs_in_interval`.
    """

    def __init__(self, alpha: float = 1e-4, grid: int = 3000, method: str = "auto"):
        self.alpha = alpha
        self.grid = grid
        self.method = method

    def fit(self, X=None, y=None):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")
        self.bounds_ = spectra.interval_bounds(self.alpha, self.grid)
        return self

    def predict(self, X):
        """Second-interval counts for each mesh size in ``X``.

        :param X: sequence of ``n`` values.
        :returns: integer array of ``#{lambda in (m_2, M_2]}``.
        """
        check_is_fitted(self, "bounds_")
        ns = np.atleast_1d(np.asarray(X, dtype=int))
        return np.array([self.report(n, intervals=(1,)).counts[1] for n in ns])

    def report(self, n: int, intervals=(0, 1, 2)) -> spectra.SpectralReport:
        check_is_fitted(self, "bounds_")
        return spectra.spectral_report(int(n), self.alpha, bounds=self.bounds_,
                                       intervals=intervals, method=self.method)


class BlockPreconditioner(TransformerMixin, BaseEstimator):
    """Back-substitution preconditioner as a transformer.

    ``fit(system)`` factors (or prepares iterative solvers for) the inner
    blocks; ``transform(R)`` applies ``P^{-1}`` to each row of ``R``.
    """

    def __init__(self, variant: str = "pn", inner: str = "direct", inner_tol: float = 1e-8):
        self.variant = variant
        self.inner = inner
        self.inner_tol = inner_tol

    def fit(self, X: saddle.SaddleSystem, y=None):
        if not isinstance(X, saddle.SaddleSystem):
            raise TypeError("fit expects a SaddleSystem")
        self.op_ = saddle.make_preconditioner(X, self.variant, inner=self.inner, tol=self.inner_tol)
        self.n_features_in_ = X.N
        return self

    def transform(self, X):
        check_is_fitted(self, "op_")
        R = check_array(X, ensure_2d=False)
        if R.ndim == 1:
            return self.op_.apply(R)
        return np.stack([self.op_.apply(r) for r in R])


class SaddleKrylovSolver(BaseEstimator):
    """Preconditioned GMRES or FGMRES for a saddle system.

    ``fit(system)`` builds the preconditioner; ``predict()`` solves with the
    system's own right-hand side (or a given one) and returns the solution of
    the unscaled FEM system.

    :param variant: preconditioner, one of ``identity, pn, pbct, pd, ptilde``.
    :param solver: ``"gmres"`` or ``"fgmres"``.
    """

    def __init__(self, variant: str = "pn", solver: str = "gmres", tol: float = 1e-6,
                 maxit: int = 100, inner: str = "direct", inner_tol: float = 1e-8):
        self.variant = variant
        self.solver = solver
        self.tol = tol
        self.maxit = maxit
        self.inner = inner
        self.inner_tol = inner_tol

    def fit(self, X: saddle.SaddleSystem, y=None):
        if self.solver not in ("gmres", "fgmres"):
            raise ValueError(f"solver must be 'gmres' or 'fgmres', got {self.solver!r}")
        self.preconditioner_ = BlockPreconditioner(self.variant, self.inner, self.inner_tol).fit(X)
        self.system_ = X
        return self

    def predict(self, X=None):
        check_is_fitted(self, "preconditioner_")
        sys = self.system_
        A, b = sys.target(self.variant)
        if X is not None:
            b = check_array(X, ensure_2d=False)
        run = krylov.gmres if self.solver == "gmres" else krylov.fgmres
        res = run(A, b, M=self.preconditioner_.op_.apply, tol=self.tol, maxit=self.maxit)
        self.result_ = res
        self.n_iter_ = res.iterations
        self.converged_ = res.converged
        if saddle.canonical_variant(self.variant) == "pd":
            return res.x
        return saddle.unscale_solution(sys, res.x)
