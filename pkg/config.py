"""Configuration management - defaults overridable from the environment"""
import os

from utils.errors import ConfigError


def _env_float(name, default):
    value = os.environ.get(name)
    return float(value) if value not in (None, '') else default


def _env_int(name, default):
    value = os.environ.get(name)
    return int(value) if value not in (None, '') else default


class Config:
    """Run-time defaults for selection experiments"""

    # Parallelism (0 = one worker per core)
    WORKERS = _env_int('QSEL_WORKERS', 0)

    # Bootstrap scoring
    B = _env_int('QSEL_B', 1000)
    B_SIMULATION = _env_int('QSEL_B_SIMULATION', 100)
    B_SUBSET = _env_int('QSEL_B_SUBSET', 100)  # robustness check on the first replicates
    ALPHA = _env_float('QSEL_ALPHA', 0.05)

    # Cross-validated scoring
    FOLDS = _env_int('QSEL_FOLDS', 10)
    DELTA = _env_float('QSEL_DELTA', 1.96)

    # Baseline criteria
    FW_B = _env_int('QSEL_FW_B', 20)
    MAX_FAILURE_RATE = _env_float('QSEL_MAX_FAILURE_RATE', 0.25)

    # Backends
    EM_TOL = _env_float('QSEL_EM_TOL', 1e-8)
    EM_MAX_ITER = _env_int('QSEL_EM_MAX_ITER', 500)
    RESTARTS = _env_int('QSEL_RESTARTS', 3)
    EIGEN_FLOOR = _env_float('QSEL_EIGEN_FLOOR', 1e-8)
    DEGENERATE_SHARE = 0.5  # floored components above this share fail the fit
    TRIPLET_GAMMA = _env_float('QSEL_TRIPLET_GAMMA', 1e6)

    # Output
    LOG_LEVEL = os.environ.get('QSEL_LOG_LEVEL', 'INFO')
    OUTPUT_DIR = os.environ.get('QSEL_OUTPUT_DIR', 'results')

    @classmethod
    def workers(cls, requested=None):
        """Resolve a worker count, 0 or None meaning all cores"""
        count = cls.WORKERS if requested is None else requested
        if count <= 0:
            count = os.cpu_count() or 1
        return count

    @classmethod
    def validate(cls):
        """Validate configured ranges"""
        problems = []
        if not 0 < cls.ALPHA < 1:
            problems.append(f'QSEL_ALPHA={cls.ALPHA} (must be in (0,1))')
        if cls.FOLDS < 2:
            problems.append(f'QSEL_FOLDS={cls.FOLDS} (must be >= 2)')
        if cls.B < 2 or cls.B_SIMULATION < 2:
            problems.append('QSEL_B and QSEL_B_SIMULATION must be >= 2')
        if cls.DELTA < 0:
            problems.append(f'QSEL_DELTA={cls.DELTA} (must be >= 0)')
        if not 0 <= cls.MAX_FAILURE_RATE < 1:
            problems.append(f'QSEL_MAX_FAILURE_RATE={cls.MAX_FAILURE_RATE} (must be in [0,1))')
        if cls.FW_B < 1:
            problems.append(f'QSEL_FW_B={cls.FW_B} (must be >= 1)')
        if cls.RESTARTS < 1:
            problems.append(f'QSEL_RESTARTS={cls.RESTARTS} (must be >= 1)')

        if problems:
            raise ConfigError(f"Invalid configuration: {', '.join(problems)}")

        return True
