# src/pyhiclust/utils/logger.py
import logging
import os
from rich.logging import RichHandler


def setup_logging():
    """Initializes logging based on the PYHICLUST_LOGGING env var."""

    # Grab level from env, default to INFO if not set or invalid
    log_level = os.getenv("PYHICLUST_LOGGING", "INFO").upper()

    # Map string to logging constants (handles typos gracefully)
    numeric_level = getattr(logging, log_level, logging.INFO)

    logging.basicConfig(
        level=numeric_level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, markup=False, show_path=False)],
    )

    # matplotlib and PIL are chatty at DEBUG
    for noisy in ("matplotlib", "PIL"):
        logging.getLogger(noisy).setLevel(max(numeric_level, logging.INFO))

    return logging.getLogger("pyhiclust")
