"""
Polygon (curved) regions: thin-plate-spline rectification
"""
from typing import Tuple

from geom import TpsWarp, fit_tps, polygon_rim_points, rectify_size, warp_tps
from imagecore import ImageBuffer, TextRegion
from .base_rectifier import RegionRectifier


class TpsRectifier(RegionRectifier):
    """Straightens a 2N-point polygon by sending its boundary onto a rectangle rim"""

    kind = 'polygon'

    def rectify(self, crop: ImageBuffer, region: TextRegion) -> Tuple[ImageBuffer, TpsWarp]:
        width, height = rectify_size(region)
        src, dst = polygon_rim_points(region, width, height)
        warp = fit_tps(src, dst)
        return warp_tps(crop, warp, (height, width), 'forward'), warp

    def restore(self, rectified: ImageBuffer, state: TpsWarp, crop_size: Tuple[int, int]) -> ImageBuffer:
        return warp_tps(rectified, state, crop_size, 'inverse')
