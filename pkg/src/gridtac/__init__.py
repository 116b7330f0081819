"""Multimodal grid-elastomer tactile sensing stack.

Core pieces: a lattice-spring simulator of the multi-layer grid elastomer,
an optical renderer producing synthetic sensor frames, temporal-fusion
reference building, proximity/contact detectors, and a closed-loop grasp
state machine. A FastAPI service wraps the pipeline; the CLI is a thin
client of the same job layer.
"""

import logging
import os

__version__ = "0.1.0"


def configure_logging() -> None:
    """Set the root gridtac log level from the GRIDTAC_LOG env var."""
    level_name = os.environ.get("GRIDTAC_LOG", "warning").upper()
    level = getattr(logging, level_name, logging.WARNING)
    logging.basicConfig(format="%(asctime)s %(name)s %(levelname)s %(message)s")
    logging.getLogger("gridtac").setLevel(level)
