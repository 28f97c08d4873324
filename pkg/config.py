# config.py

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _flag(value: str) -> bool:
    return value.strip().lower() not in ("0", "false", "no", "off", "")


class Config:
    """Configuration settings for the laboratory"""

    # Runtime Configuration
    THREADS = int(os.getenv("LAB_THREADS", "1"))
    OUTPUT_DIR = os.getenv("LAB_OUTPUT_DIR", "results")
    LOG_LEVEL = os.getenv("LAB_LOG_LEVEL", "INFO").upper()
    PROGRESS = _flag(os.getenv("LAB_PROGRESS", "1"))

    # Eigensolver Configuration
    EIGEN_SOLVER = os.getenv("LAB_EIGEN_SOLVER", "arnoldi")
    DENSE_LIMIT = int(os.getenv("LAB_DENSE_LIMIT", "1024"))
    POWER_TOL = float(os.getenv("LAB_POWER_TOL", "1e-10"))
    POWER_MAX_ITER = int(os.getenv("LAB_POWER_MAX_ITER", "100000"))

    SOLVERS = ("arnoldi", "power", "dense")
    LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

    @classmethod
    def validate(cls):
        """Validate configuration"""
        problems = []
        if cls.THREADS < 1:
            problems.append(f"LAB_THREADS must be >= 1, got {cls.THREADS}")
        if cls.EIGEN_SOLVER not in cls.SOLVERS:
            problems.append(
                f"LAB_EIGEN_SOLVER must be one of {', '.join(cls.SOLVERS)}, got {cls.EIGEN_SOLVER!r}"
            )
        if cls.LOG_LEVEL not in cls.LOG_LEVELS:
            problems.append(f"LAB_LOG_LEVEL must be one of {', '.join(cls.LOG_LEVELS)}")
        if cls.DENSE_LIMIT < 1:
            problems.append("LAB_DENSE_LIMIT must be positive")
        if not 0 < cls.POWER_TOL < 1:
            problems.append("LAB_POWER_TOL must lie in (0, 1)")
        if cls.POWER_MAX_ITER < 1:
            problems.append("LAB_POWER_MAX_ITER must be positive")
        if problems:
            raise ValueError(
                "Invalid laboratory settings:\n" + "\n".join(f"- {p}" for p in problems)
            )


def get_solver_options(task_type: str, **overrides) -> dict:
    """Get eigensolver options for the task"""

    # Validate settings before handing them out
    Config.validate()

    solver_map = {
        'mu': Config.EIGEN_SOLVER,
        'nu': Config.EIGEN_SOLVER,
        'bound-scan': Config.EIGEN_SOLVER,
        'decay-curves': Config.EIGEN_SOLVER,
    }

    options = {
        'method': solver_map.get(task_type, Config.EIGEN_SOLVER),
        'tol': Config.POWER_TOL,
        'max_iter': Config.POWER_MAX_ITER,
        'dense_limit': Config.DENSE_LIMIT,
    }
    options.update(overrides)
    return options
