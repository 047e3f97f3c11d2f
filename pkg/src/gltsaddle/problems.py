"""Desired states and forcing terms of the two benchmark control problems."""
import numpy as np


def poisson_desired_state(x1, x2):
    return -np.sin(8 * np.pi * x1) * np.sin(8 * np.pi * x2) + np.sin(np.pi * x1) * np.sin(np.pi * x2)


def poisson_forcing(x1, x2):
    # the first term depends on x1 only
    return 2 * np.pi**2 * np.sin(np.pi * x1) + np.sin(8 * np.pi * x1) * np.sin(8 * np.pi * x2) / (128 * np.pi**2)


def advection_desired_state(x1, x2):
    """Two Gaussian impulses centred at (0.2, 0.2) and (0.6, 0.6)."""
    g1 = 0.5 / (0.07 * np.sqrt(2 * np.pi)) * np.exp(-((x1 - 0.2) ** 2 + (x2 - 0.2) ** 2) / (2 * 0.07**2))
    g2 = 0.8 / (0.05 * np.sqrt(2 * np.pi)) * np.exp(-((x1 - 0.6) ** 2 + (x2 - 0.6) ** 2) / (2 * 0.05**2))
    return g1 + g2


def advection_forcing(x1, x2):
    return np.sin(np.pi * x1) * np.sin(np.pi * x2)


PROBLEMS = {
    "poisson": (poisson_desired_state, poisson_forcing),
    "advection": (advection_desired_state, advection_forcing),
}


def problem_data(name: str):
    """Return ``(y_d, z)`` for ``"poisson"`` or ``"advection"``."""
    try:
        return PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
