"""
Base rectifier class for text regions
"""
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Tuple

import numpy as np

import config
from geom import CropBox, crop_region, expand_region, resize_pad, unpad_resize
from imagecore import ImageBuffer, StrokeMask, TextRegion

# network-size image -> (erased image, hole mask)
Eraser = Callable[[ImageBuffer], Tuple[ImageBuffer, StrokeMask]]

# a restored pixel counts as covered by the rectified image above this weight
COVERAGE_THRESHOLD = 0.999


@dataclass
class RegionResult:
    """Erased crop in the source crop frame, ready for paste_back"""
    region: TextRegion
    crop_box: CropBox
    erased_crop: ImageBuffer
    hole_crop: np.ndarray
    timings: Dict[str, float] = field(default_factory=dict)


class RegionRectifier(ABC):
    """Base class for all region rectifiers"""

    kind: str = ''

    def __init__(self, expand_factor: float = config.EXPAND_FACTOR,
                 network_size: Tuple[int, int] = (config.NETWORK_HEIGHT, config.NETWORK_WIDTH)):
        self.expand_factor = expand_factor
        self.network_size = network_size

    @abstractmethod
    def rectify(self, crop: ImageBuffer, region: TextRegion) -> Tuple[ImageBuffer, Any]:
        """
        Warp the crop so the region (given in crop coordinates) becomes an
        upright rectangle. Returns the rectified image and whatever
        restore() needs to undo it.
        """
        pass

    @abstractmethod
    def restore(self, rectified: ImageBuffer, state: Any, crop_size: Tuple[int, int]) -> ImageBuffer:
        """Inverse of rectify: bring a rectified-frame image back to the crop frame"""
        pass

    def process(self, image: ImageBuffer, region: TextRegion, eraser: Eraser) -> RegionResult:
        """expand -> crop -> rectify -> resize_pad -> erase -> unpad -> restore"""
        started = time.perf_counter()
        expanded = expand_region(region, image.size, self.expand_factor)
        crop, box = crop_region(image, expanded)
        rectified, state = self.rectify(crop, expanded.translated(-box.x0, -box.y0))
        height, width = self.network_size
        net_input, info = resize_pad(rectified, height, width)
        prepared = time.perf_counter()

        erased, hole = eraser(net_input)
        erased_at = time.perf_counter()

        rect_out = unpad_resize(erased, info)
        rect_hole = unpad_resize(ImageBuffer.from_array(hole.data), info)
        restored = self.restore(rect_out, state, crop.size)
        restored_hole = self.restore(rect_hole, state, crop.size).data[:, :, 0]
        coverage = self.restore(ImageBuffer.filled(rectified.height, rectified.width, 1.0),
                                state, crop.size).data[:, :, 0]
        covered = coverage >= COVERAGE_THRESHOLD
        erased_crop = ImageBuffer(np.where(covered[:, :, None], restored.data, crop.data))
        hole_crop = np.where(covered, restored_hole, 1.0).astype(np.float32)
        finished = time.perf_counter()

        timings = {
            'pre_ms': (prepared - started) * 1000.0,
            'net_ms': (erased_at - prepared) * 1000.0,
            'post_ms': (finished - erased_at) * 1000.0,
        }
        return RegionResult(region, box, erased_crop, hole_crop, timings)
