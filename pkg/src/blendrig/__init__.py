"""Blendshape face rigs: construction, inverse fitting and a landmark-to-coefficient regressor."""

from importlib import metadata as _metadata

from .mesh import (
    ARKIT_NAMES,
    NUM_LANDMARKS,
    NUM_SHAPES,
    BlendshapeRig,
    Camera,
    LandmarkMap,
    LandmarkSet,
    Mesh,
    RigError,
    RigidPose,
    apply_expression,
    rot6d_to_rotation,
)

try:
    __version__ = _metadata.version("artifact")
except _metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

__all__ = [
    "ARKIT_NAMES", "NUM_LANDMARKS", "NUM_SHAPES", "BlendshapeRig", "Camera", "LandmarkMap",
    "LandmarkSet", "Mesh", "RigError", "RigidPose", "apply_expression", "rot6d_to_rotation",
    "__version__",
]
