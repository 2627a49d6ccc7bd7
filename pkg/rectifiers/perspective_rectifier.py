"""
Quadrilateral regions: perspective rectification
"""
from typing import Tuple

from geom import Homography, rectify_size, solve_homography, warp_perspective
from imagecore import ImageBuffer, TextRegion
from .base_rectifier import RegionRectifier


class PerspectiveRectifier(RegionRectifier):
    """Maps the quad's corners onto a W×H rectangle (mean opposite-edge lengths)"""

    kind = 'quad'

    def rectify(self, crop: ImageBuffer, region: TextRegion) -> Tuple[ImageBuffer, Homography]:
        width, height = rectify_size(region)
        target = ((0.0, 0.0), (float(width), 0.0), (float(width), float(height)), (0.0, float(height)))
        homography = solve_homography(region.points, target)
        return warp_perspective(crop, homography, (height, width)), homography

    def restore(self, rectified: ImageBuffer, state: Homography, crop_size: Tuple[int, int]) -> ImageBuffer:
        return warp_perspective(rectified, state.inverse(), crop_size)
