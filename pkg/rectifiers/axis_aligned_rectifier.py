"""
Axis-aligned boxes need no rectification
"""
from typing import Tuple

from imagecore import ImageBuffer, TextRegion
from .base_rectifier import RegionRectifier


class AxisAlignedRectifier(RegionRectifier):
    """The crop already is the rectangle"""

    kind = 'axis_aligned'

    def rectify(self, crop: ImageBuffer, region: TextRegion) -> Tuple[ImageBuffer, None]:
        return crop, None

    def restore(self, rectified: ImageBuffer, state: None, crop_size: Tuple[int, int]) -> ImageBuffer:
        return rectified
