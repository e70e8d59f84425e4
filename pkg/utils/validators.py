"""Input validation utilities"""
import numpy as np

from utils.errors import ConfigError, InvalidConfiguration

SYMMETRY_TOL = 1e-10
MIXING_TOL = 1e-9
SPD_RELATIVE_TOL = 1e-12


def is_spd(sigma):
    """Symmetric with smallest eigenvalue above 1e-12 of the largest"""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1] or not np.all(np.isfinite(sigma)):
        return False
    if np.max(np.abs(sigma - sigma.T), initial=0.0) > SYMMETRY_TOL:
        return False
    eigenvalues = np.linalg.eigvalsh(sigma)
    return eigenvalues[-1] > 0 and eigenvalues[0] > SPD_RELATIVE_TOL * eigenvalues[-1]


def validate_configuration(theta, p):
    """Raise InvalidConfiguration naming the first violated invariant"""
    if theta.k < 1:
        raise InvalidConfiguration("K must be >= 1")

    for index, triplet in enumerate(theta.triplets):
        if not 0 < triplet.pi <= 1:
            raise InvalidConfiguration(f"triplet {index}: pi={triplet.pi} outside (0, 1]")
        if triplet.mu.shape != (p,):
            raise InvalidConfiguration(f"triplet {index}: mu has shape {triplet.mu.shape}, expected ({p},)")
        if not np.all(np.isfinite(triplet.mu)):
            raise InvalidConfiguration(f"triplet {index}: mu is not finite")
        if triplet.sigma.shape != (p, p):
            raise InvalidConfiguration(f"triplet {index}: sigma has shape {triplet.sigma.shape}, expected ({p}, {p})")
        if np.max(np.abs(triplet.sigma - triplet.sigma.T)) > SYMMETRY_TOL:
            raise InvalidConfiguration(f"triplet {index}: sigma is not symmetric")
        if not is_spd(triplet.sigma):
            raise InvalidConfiguration(f"triplet {index}: sigma is not positive definite")

    total = float(np.sum(theta.pis))
    if abs(total - 1.0) > MIXING_TOL:
        raise InvalidConfiguration(f"mixing proportions sum to {total}, not 1")


def validate_probability(name, value):
    """Strictly inside (0, 1)"""
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    if not 0 < value < 1:
        raise ConfigError(f"{name} must be in (0, 1), got {value}")
    return value


def validate_positive_int(name, value, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def validate_nonnegative(name, value):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    if not value >= 0:
        raise ConfigError(f"{name} must be >= 0, got {value}")
    return value
