"""Reflective human-in-the-loop image generation, at desk scale.

A dialogue engine that summarizes what the user asked for, generates,
captions, finds the most ambiguous aspect, and asks about it — plus two
refine tools (preference optimization of a toy denoising policy, and a
neglect check-and-regenerate loop), an event-sourced store with exact
replay, an HTTP service, and a CLI.
"""

from .core import (
    AmbiguityLabel,
    AspectSchema,
    AspectVector,
    CaptionSet,
    DialogueMemory,
    ImageRecord,
    MemoryTurn,
    PromptRecord,
    Question,
    ReflexError,
    default_schema,
    derive_seed,
    get_schema,
    list_schemas,
    register_schema,
    validate_schema,
)
from .engine import RoundRecord, SessionState, new_session_state, run_round

__all__ = [
    "AmbiguityLabel",
    "AspectSchema",
    "AspectVector",
    "CaptionSet",
    "DialogueMemory",
    "ImageRecord",
    "MemoryTurn",
    "PromptRecord",
    "Question",
    "ReflexError",
    "RoundRecord",
    "SessionState",
    "default_schema",
    "derive_seed",
    "get_schema",
    "list_schemas",
    "new_session_state",
    "register_schema",
    "run_round",
    "validate_schema",
]

__version__ = "0.1.0"
