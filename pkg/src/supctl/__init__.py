"""Supervisory switching control for partially observed linear systems."""

from .errors import *  # noqa: F401,F403
from .system_bank import (  # noqa: F401
    CandidateBank,
    Controller,
    StateSpaceModel,
    build_closed_loop,
    derive_constants,
    make_bank,
    validate_scenario,
)

__version__ = "0.1.0"
