"""Exit rates of small-noise linear multi-channel systems from a bounded domain."""
from .model import (Ball, Box, ControlBox, ControlSpec, DiffusionSpec, EllipticityError,
                    FeedbackTuple, MultiChannelSystem, NoiseLevel, StructuralError,
                    closed_loop, validate_diffusion)

__version__ = "0.1.0"

__all__ = ["Ball", "Box", "ControlBox", "ControlSpec", "DiffusionSpec", "EllipticityError",
           "FeedbackTuple", "MultiChannelSystem", "NoiseLevel", "StructuralError",
           "closed_loop", "validate_diffusion", "__version__"]
