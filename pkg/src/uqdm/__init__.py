"""Progressive lossy-to-lossless compression with a universally quantized diffusion model."""

from .codec import compress, decompress, rate_profile
from .diffusion import UQDM
from .schedule import NoiseSchedule

__all__ = ["UQDM", "NoiseSchedule", "compress", "decompress", "rate_profile"]
__version__ = "0.1.0"
