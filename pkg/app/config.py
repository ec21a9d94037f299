"""
Configuration settings loaded from environment variables.
"""

import os
from typing import List

from dotenv import load_dotenv

# Load a local .env file if present (does not override the real environment)
load_dotenv()


def _env_flag(name: str, default: str = "0") -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


class Settings:
    """Process-wide settings from environment variables."""

    # Server configuration (batch job service)
    HOST: str = os.getenv("HOST", "0.0.0.0")
    PORT: int = int(os.getenv("PORT", "7860"))

    # CORS configuration
    CORS_ORIGINS: List[str] = os.getenv("CORS_ORIGINS", "*").split(",")

    # Where runs and job artifacts are written
    OUTPUT_DIR: str = os.getenv(
        "OUTPUT_DIR",
        os.path.join(os.getcwd(), "runs")
    )

    # Process pool used for studies and service jobs
    MAX_WORKERS: int = int(os.getenv("MAX_WORKERS", "4"))

    # Linear solver defaults (conjugate gradient, Jacobi preconditioner)
    SOLVER_TOL: float = float(os.getenv("SOLVER_TOL", "1e-10"))
    SOLVER_MAXITER_FACTOR: int = int(os.getenv("SOLVER_MAXITER_FACTOR", "20"))

    # Assert mesh invariants after every accepted local operation
    DEBUG_CHECKS: bool = _env_flag("DEBUG_CHECKS")

    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")

    # MongoDB job store
    MONGODB_URL: str = os.getenv("MONGODB_URL", "")
    MONGODB_DATABASE: str = os.getenv("MONGODB_DATABASE", "anisotropic_adaptation")

    @classmethod
    def ensure_output_dir(cls) -> str:
        """Create output directory if it doesn't exist."""
        os.makedirs(cls.OUTPUT_DIR, exist_ok=True)
        return cls.OUTPUT_DIR


settings = Settings()
