"""
Erase orchestrator - runs every text region of an image through its rectifier
"""
import sys
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from typing import Dict, List, Optional, Tuple

import numpy as np

import config
from errors import TextEraseError
from geom import expand_region, paste_back, region_mask
from imagecore import ImageBuffer, StrokeMask, TextRegion
from .axis_aligned_rectifier import AxisAlignedRectifier
from .base_rectifier import Eraser, RegionResult
from .perspective_rectifier import PerspectiveRectifier
from .tps_rectifier import TpsRectifier


class EraseOrchestrator:
    """Manages the per-kind rectifiers and pastes erased regions back"""

    def __init__(self, eraser: Eraser, expand_factor: float = config.EXPAND_FACTOR,
                 network_size: Tuple[int, int] = (config.NETWORK_HEIGHT, config.NETWORK_WIDTH),
                 parallel: bool = False, max_workers: Optional[int] = None):
        self.eraser = eraser
        self.parallel = parallel
        self.max_workers = max_workers
        self.rectifiers = {
            rectifier.kind: rectifier for rectifier in (
                AxisAlignedRectifier(expand_factor, network_size),
                PerspectiveRectifier(expand_factor, network_size),
                TpsRectifier(expand_factor, network_size),
            )
        }
        self.timings: List[Dict[str, float]] = []

    def _usable(self, index: int, region: TextRegion, image: ImageBuffer) -> Optional[TextRegion]:
        """The region to process (clipped if it sticks out), or None to skip it"""
        height, width = image.size
        if region.within(width, height):
            return region
        clipped = region.clipped(width, height)
        if clipped.area() <= 0:
            print(f"⚠️  Region {index} ({region.kind}) lies outside the image - skipped", file=sys.stderr)
            return None
        print(f"⚠️  Region {index} ({region.kind}) extends past the image - clipped", file=sys.stderr)
        return clipped

    def _run_one(self, index: int, region: TextRegion, image: ImageBuffer) -> Optional[RegionResult]:
        rectifier = self.rectifiers[region.kind]
        try:
            return rectifier.process(image, region, self.eraser)
        except (TextEraseError, ValueError, np.linalg.LinAlgError) as e:
            print(f"⚠️  Region {index} ({region.kind}) failed: {e} - skipped", file=sys.stderr)
            return None

    def _disjoint(self, regions: List[TextRegion], image: ImageBuffer) -> bool:
        """Expanded bounding boxes pairwise disjoint, so crops never see another region's paste"""
        boxes = []
        for region in regions:
            try:
                boxes.append(expand_region(region, image.size, self.rectifiers[region.kind].expand_factor).bounds())
            except TextEraseError:
                boxes.append(region.bounds())
        for (ax0, ay0, ax1, ay1), (bx0, by0, bx1, by1) in combinations(boxes, 2):
            if ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1:
                return False
        return True

    def _paste(self, canvas: ImageBuffer, hole: np.ndarray, result: RegionResult) -> ImageBuffer:
        canvas = paste_back(canvas, result.erased_crop, result.region, result.crop_box)
        box = result.crop_box
        inside = region_mask(result.region, hole.shape)[box.y0:box.y1, box.x0:box.x1]
        window = hole[box.y0:box.y1, box.x0:box.x1]
        window[inside] = result.hole_crop[inside]
        return canvas

    def erase_all(self, image: ImageBuffer, regions: List[TextRegion]) -> Tuple[ImageBuffer, StrokeMask]:
        """
        Erase every region and return (final image, full-size hole mask).
        Regions are applied in input order; a failing region is reported and skipped.
        """
        self.timings = []
        hole = np.ones(image.size, dtype=np.float32)
        usable = [(i, r) for i, r in ((i, self._usable(i, r, image)) for i, r in enumerate(regions))
                  if r is not None]
        canvas = image

        parallel = self.parallel and len(usable) > 1
        if parallel and not self._disjoint([r for _, r in usable], image):
            print("⚠️  Regions overlap - erasing sequentially", file=sys.stderr)
            parallel = False

        if parallel:
            print(f"🧪 Erasing {len(usable)} disjoint regions in parallel...", file=sys.stderr)
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                results = list(pool.map(lambda item: self._run_one(item[0], item[1], image), usable))
            for (index, region), result in zip(usable, results):
                if result is not None:
                    canvas = self._paste(canvas, hole, result)
                    self._report(index, region, result)
        else:
            for index, region in usable:
                print(f"🧪 Erasing region {index} ({region.kind})...", file=sys.stderr)
                result = self._run_one(index, region, canvas)
                if result is None:
                    continue
                canvas = self._paste(canvas, hole, result)
                self._report(index, region, result)

        print(f"✅ Erased {len(self.timings)}/{len(regions)} regions", file=sys.stderr)
        return canvas, StrokeMask(hole)

    def _report(self, index: int, region: TextRegion, result: RegionResult):
        t = result.timings
        self.timings.append(dict(t, index=index))
        print(f"  Region {index}: pre {t['pre_ms']:.1f} ms, network {t['net_ms']:.1f} ms, "
              f"post {t['post_ms']:.1f} ms", file=sys.stderr)
