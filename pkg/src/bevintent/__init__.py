"""Joint vehicle detection, intent classification and trajectory forecasting
from voxelized LiDAR and rasterized HD maps."""

__version__ = "0.1.0"
