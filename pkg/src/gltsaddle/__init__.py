"""Spectral analysis and block preconditioning of PDE-constrained optimization
saddle-point systems via multilevel block Toeplitz symbols."""
from .grid_fem import UniformMesh, assemble_convection, assemble_load, assemble_mass, assemble_stiffness, interpolate
from .toeplitz import MatrixSymbol, predefined_symbols, symbol_eval, toeplitz_build
from .saddle import SaddleSystem, build_system, make_preconditioner, permute_to_block_toeplitz, unscale_solution
from .krylov import KrylovResult, bicgstab, cg, fgmres, gmres
from .spectra import count_eigs_in_interval, interval_bounds, match_eigenvalues, sample_symbol

__version__ = "0.1.0"
