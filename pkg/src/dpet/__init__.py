"""Dynamic FDG PET kinetic modeling toolkit.

Pipeline stages: phantom simulation, motion correction, ICA segmentation,
IDIF/MCIF blood input, voxel-wise Patlak Ki maps, SUV maps, and multi-modal
tumor voxel extraction.
"""

__version__ = "0.1.0"

from .volume import (  # noqa: F401
    DynamicVolume,
    FrameSchedule,
    Geometry,
    Mask,
    Volume3D,
)
