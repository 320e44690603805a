"""Few-shot single-view 3D voxel reconstruction with class-conditional shape priors."""

from .voxelgrid import VoxelGrid, ProbGrid, BinvoxMeta, iou, binarize, binvox_decode, binvox_encode

__version__ = "0.1.0"

__all__ = [
    "VoxelGrid",
    "ProbGrid",
    "BinvoxMeta",
    "iou",
    "binarize",
    "binvox_decode",
    "binvox_encode",
    "__version__",
]
