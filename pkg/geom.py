"""
Geometric pre/post-processing: box expansion, cropping, perspective and
thin-plate-spline rectification, resize-pad to network size, paste-back
"""
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, List, Sequence, Tuple

import cv2
import numpy as np
from scipy.spatial.distance import cdist
from skimage.measure import points_in_poly

import config
from errors import (
    DegenerateConfiguration, DegenerateRegion, ShapeMismatch, SingularSystem,
)
from imagecore import REGION_KINDS, ImageBuffer, TextRegion

Size = Tuple[int, int]  # (height, width)


# ==================== Regions ====================

def region_short_side(region: TextRegion) -> float:
    """Shorter side of the rectified text rectangle"""
    width, height = rectify_extent(region)
    return min(width, height)


def expand_region(region: TextRegion, image_size: Size,
                  factor: float = config.EXPAND_FACTOR) -> TextRegion:
    """
    Grow a region outward by factor × short side on every side,
    then clip to the image
    """
    if region.area() <= 0:
        raise DegenerateRegion(f"Region {region.points} has zero area")
    height, width = image_size
    if factor == 0:
        return region.clipped(width, height)

    pad = factor * region_short_side(region)
    pts = region.as_array()

    if region.kind == 'axis_aligned':
        (x0, y0), (x1, y1) = pts
        grown = ((x0 - pad, y0 - pad), (x1 + pad, y1 + pad))
    elif region.kind == 'quad':
        grown = _offset_closed_outline(pts, pad)
    else:
        grown = _offset_polygon(pts, pad)

    return TextRegion(region.kind, tuple(map(tuple, grown))).clipped(width, height)


def _offset_closed_outline(pts: np.ndarray, pad: float) -> np.ndarray:
    """Move every edge of a clockwise outline outward by pad, re-intersect corners"""
    n = len(pts)
    directions = np.roll(pts, -1, axis=0) - pts
    lengths = np.linalg.norm(directions, axis=1, keepdims=True)
    lengths[lengths == 0] = 1.0
    directions = directions / lengths
    # clockwise in image coordinates (y down): outward normal is (dy, -dx)
    normals = np.stack([directions[:, 1], -directions[:, 0]], axis=1)

    out = np.empty_like(pts)
    for i in range(n):
        prev = (i - 1) % n
        p1, d1 = pts[prev] + normals[prev] * pad, directions[prev]
        p2, d2 = pts[i] + normals[i] * pad, directions[i]
        cross = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(cross) < 1e-12:
            out[i] = pts[i] + (normals[i] + normals[prev]) * pad / 2
            continue
        t = ((p2[0] - p1[0]) * d2[1] - (p2[1] - p1[1]) * d2[0]) / cross
        out[i] = p1 + t * d1
    return out


def _offset_polygon(pts: np.ndarray, pad: float) -> np.ndarray:
    """Push top boundary up, bottom down, and both ends outward along the text line"""
    top, bottom = polygon_boundaries(pts)
    across = top - bottom
    norms = np.linalg.norm(across, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    across = across / norms
    top = top + across * pad
    bottom = bottom - across * pad

    center = (top + bottom) / 2
    for end, neighbour in ((0, 1), (-1, -2)):
        tangent = center[end] - center[neighbour]
        length = np.linalg.norm(tangent)
        if length > 0:
            shift = tangent / length * pad
            top[end] = top[end] + shift
            bottom[end] = bottom[end] + shift
    return np.concatenate([top, bottom[::-1]])


def polygon_boundaries(pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Split a clockwise 2N polygon (top left->right, bottom right->left)
    into matched top/bottom arrays, both ordered left->right
    """
    pts = np.asarray(pts, dtype=np.float64)
    n = len(pts) // 2
    return pts[:n].copy(), pts[n:][::-1].copy()


def rectify_extent(region: TextRegion) -> Tuple[float, float]:
    """(width, height) of the rectangle a region is rectified to"""
    pts = region.as_array()
    if region.kind == 'axis_aligned':
        (x0, y0), (x1, y1) = pts
        return x1 - x0, y1 - y0
    if region.kind == 'quad':
        tl, tr, br, bl = pts
        width = (np.linalg.norm(tr - tl) + np.linalg.norm(br - bl)) / 2
        height = (np.linalg.norm(bl - tl) + np.linalg.norm(br - tr)) / 2
        return float(width), float(height)
    top, bottom = polygon_boundaries(pts)
    top_len = np.linalg.norm(np.diff(top, axis=0), axis=1).sum()
    bottom_len = np.linalg.norm(np.diff(bottom, axis=0), axis=1).sum()
    height = np.linalg.norm(top - bottom, axis=1).mean()
    return float((top_len + bottom_len) / 2), float(height)


def rectify_size(region: TextRegion) -> Tuple[int, int]:
    """Integer (width, height) of the rectified rectangle, at least 1×1"""
    width, height = rectify_extent(region)
    return max(1, int(round(width))), max(1, int(round(height)))


def parse_regions(doc: Dict) -> List[TextRegion]:
    """Validate a RegionsFile document into TextRegion objects"""
    if not isinstance(doc, dict) or not isinstance(doc.get('regions'), list):
        raise ValueError("Regions file must be a JSON object with a 'regions' list")
    regions = []
    for i, entry in enumerate(doc['regions']):
        kind = entry.get('kind')
        points = entry.get('points')
        if kind not in REGION_KINDS:
            raise ValueError(f"Region {i}: unknown kind {kind!r}")
        if not isinstance(points, list) or not all(
                isinstance(p, (list, tuple)) and len(p) == 2
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in p)
                for p in points):
            raise ValueError(f"Region {i}: points must be a list of numeric [x, y] pairs")
        regions.append(TextRegion(kind, tuple(tuple(p) for p in points)))
    return regions


# ==================== Crop / paste ====================

@dataclass(frozen=True)
class CropBox:
    """Integer pixel box [x0, x1) × [y0, y1) cut out of a canvas"""
    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


def crop_region(img: ImageBuffer, region: TextRegion) -> Tuple[ImageBuffer, CropBox]:
    """Axis-aligned crop covering a region's bounding box"""
    x0, y0, x1, y1 = region.bounds()
    box = CropBox(
        max(0, int(np.floor(x0))), max(0, int(np.floor(y0))),
        min(img.width, int(np.ceil(x1))), min(img.height, int(np.ceil(y1))),
    )
    if box.width < 1 or box.height < 1:
        raise DegenerateRegion(f"Region {region.points} does not cover any pixel")
    return ImageBuffer(img.data[box.y0:box.y1, box.x0:box.x1]), box


def region_mask(region: TextRegion, size: Size) -> np.ndarray:
    """Boolean map of pixels whose centers lie strictly inside the region"""
    height, width = size
    mask = np.zeros((height, width), dtype=bool)
    if region.area() <= 0:
        return mask
    x0, y0, x1, y1 = region.bounds()
    c0, r0 = max(0, int(np.floor(x0))), max(0, int(np.floor(y0)))
    c1, r1 = min(width, int(np.ceil(x1))), min(height, int(np.ceil(y1)))
    if c1 <= c0 or r1 <= r0:
        return mask
    cols, rows = np.meshgrid(np.arange(c0, c1), np.arange(r0, r1))
    centers = np.stack([cols.ravel() + 0.5, rows.ravel() + 0.5], axis=1)
    inside = points_in_poly(centers, region.outline())
    mask[r0:r1, c0:c1] = inside.reshape(rows.shape)
    return mask


def paste_back(canvas: ImageBuffer, erased_crop: ImageBuffer, region: TextRegion,
               crop_box: CropBox) -> ImageBuffer:
    """Replace only the canvas pixels strictly inside the original region"""
    if erased_crop.size != (crop_box.height, crop_box.width):
        raise ShapeMismatch(
            f"Erased crop {erased_crop.size} does not match crop box "
            f"{(crop_box.height, crop_box.width)}")
    inside = region_mask(region, canvas.size)
    window = np.zeros_like(inside)
    window[crop_box.y0:crop_box.y1, crop_box.x0:crop_box.x1] = True
    inside &= window
    if not inside.any():
        return canvas

    out = canvas.data.copy()
    rows, cols = np.nonzero(inside)
    out[rows, cols] = erased_crop.data[rows - crop_box.y0, cols - crop_box.x0]
    return ImageBuffer(out)


# ==================== Perspective ====================

@dataclass(frozen=True)
class Homography:
    """3×3 projective map normalized so that matrix[2, 2] == 1"""
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or abs(m[2, 2]) < 1e-15:
            raise DegenerateConfiguration(f"Not a normalizable homography: {m}")
        m = m / m[2, 2]
        if np.linalg.cond(m) > 1e12:
            raise DegenerateConfiguration("Homography is not invertible")
        m.setflags(write=False)
        object.__setattr__(self, 'matrix', m)

    @classmethod
    def identity(cls) -> 'Homography':
        return cls(np.eye(3))

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        homogeneous = np.hstack([pts, np.ones((len(pts), 1))]) @ self.matrix.T
        return homogeneous[:, :2] / homogeneous[:, 2:3]

    def inverse(self) -> 'Homography':
        return Homography(np.linalg.inv(self.matrix))

    def compose(self, other: 'Homography') -> 'Homography':
        """self ∘ other"""
        return Homography(self.matrix @ other.matrix)


def _check_no_three_collinear(points: np.ndarray, label: str):
    scale = max(1.0, float(np.ptp(points, axis=0).max()))
    for a, b, c in combinations(points, 3):
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(area) <= 1e-9 * scale * scale:
            raise DegenerateConfiguration(f"Three {label} points are collinear")


def solve_homography(src: Sequence, dst: Sequence) -> Homography:
    """Exact homography through 4 point correspondences (8×8 linear solve)"""
    src = np.asarray(src, dtype=np.float64).reshape(4, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(4, 2)
    _check_no_three_collinear(src, 'source')
    _check_no_three_collinear(dst, 'target')

    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i], b[2 * i + 1] = u, v
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as e:
        raise DegenerateConfiguration(f"Homography system is singular: {e}") from e
    return Homography(np.append(h, 1.0).reshape(3, 3))


def warp_perspective(img: ImageBuffer, homography: Homography, out_size: Size) -> ImageBuffer:
    """Inverse-mapped bilinear warp; samples outside the source are 0"""
    height, width = out_size
    warped = cv2.warpPerspective(
        np.ascontiguousarray(img.data), homography.matrix, (width, height),
        flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0,
    )
    return ImageBuffer.from_array(warped.reshape(height, width, 3))


# ==================== Thin-plate spline ====================

def _tps_kernel(r: np.ndarray) -> np.ndarray:
    """U(r) = r² log r, with U(0) = 0"""
    with np.errstate(divide='ignore', invalid='ignore'):
        u = r * r * np.log(r)
    return np.nan_to_num(u, nan=0.0, posinf=0.0, neginf=0.0)


@dataclass(frozen=True)
class TpsMap:
    """
    One direction of a thin-plate spline, fitted in normalised coordinates
    q = (p - center) / scale: f(p) = [1 qx qy]·affine + Σ w_i U(|q - q_i|)
    """
    control: np.ndarray   # N×2 control points in the domain
    affine: np.ndarray    # 3×2 affine coefficients (3 per output axis)
    weights: np.ndarray   # N×2 kernel weights
    center: np.ndarray
    scale: float

    def normalise(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64).reshape(-1, 2) - self.center) / self.scale

    def __call__(self, points) -> np.ndarray:
        pts = self.normalise(points)
        kernel = _tps_kernel(cdist(pts, self.normalise(self.control)))
        basis = np.hstack([np.ones((len(pts), 1)), pts])
        return basis @ self.affine + kernel @ self.weights


def _solve_tps(control: np.ndarray, target: np.ndarray) -> TpsMap:
    # solved on zero-mean, unit-RMS coordinates
    center = control.mean(axis=0)
    scale = float(np.sqrt(((control - center) ** 2).sum(axis=1).mean()))
    if scale == 0.0:
        raise SingularSystem("Thin-plate-spline control points all coincide")
    unit = (control - center) / scale
    n = len(control)
    p = np.hstack([np.ones((n, 1)), unit])
    if np.linalg.matrix_rank(p) < 3:
        raise SingularSystem("Thin-plate-spline control points are collinear")
    system = np.zeros((n + 3, n + 3))
    system[:n, :n] = _tps_kernel(cdist(unit, unit))
    system[:n, n:] = p
    system[n:, :n] = p.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = target
    if np.linalg.cond(system) > 1e13:
        raise SingularSystem("Thin-plate-spline system is singular (collinear or repeated points)")
    try:
        solution = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as e:
        raise SingularSystem(f"Thin-plate-spline system is singular: {e}") from e
    return TpsMap(control.copy(), solution[n:], solution[:n], center, scale)


@dataclass(frozen=True)
class TpsWarp:
    """
    Thin-plate-spline correspondence between source and target control points.
    `forward` maps source -> target; `backward` is a second spline fitted
    target -> source and serves as the numerical inverse.
    """
    source: np.ndarray
    target: np.ndarray
    forward: TpsMap
    backward: TpsMap

    @property
    def affine(self) -> np.ndarray:
        return self.forward.affine

    @property
    def weights(self) -> np.ndarray:
        return self.forward.weights


def fit_tps(src_pts: Sequence, dst_pts: Sequence) -> TpsWarp:
    """Fit the interpolating thin-plate spline src -> dst and its dual dst -> src"""
    src = np.asarray(src_pts, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst_pts, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ShapeMismatch(f"{len(src)} source points vs {len(dst)} target points")
    if len(src) < 3:
        raise SingularSystem("Thin-plate spline needs at least 3 control points")
    for pts in (src, dst):
        if len(np.unique(np.round(pts, 9), axis=0)) != len(pts):
            raise SingularSystem("Thin-plate spline control points must be distinct")
    return TpsWarp(src, dst, _solve_tps(src, dst), _solve_tps(dst, src))


def polygon_rim_points(region: TextRegion, width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Control point pairs for rectifying a polygon: its boundary points
    (in the order given) and matching points on the rim of a width×height rectangle
    """
    top, bottom = polygon_boundaries(region.as_array())
    n = len(top)
    xs = np.linspace(0.0, width, n)
    rect_top = np.stack([xs, np.zeros(n)], axis=1)
    rect_bottom = np.stack([xs, np.full(n, float(height))], axis=1)
    src = np.concatenate([top, bottom[::-1]])
    dst = np.concatenate([rect_top, rect_bottom[::-1]])
    return src, dst


def warp_tps(img: ImageBuffer, warp: TpsWarp, out_size: Size,
             direction: str = 'forward') -> ImageBuffer:
    """
    Resample an image through a TPS warp.

    forward: image content moves from source geometry to target geometry
    inverse: image content moves from target geometry back to source geometry
    """
    if direction not in ('forward', 'inverse'):
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    height, width = out_size
    # inverse mapping: output pixel -> where to sample in the input
    sample_map = warp.backward if direction == 'forward' else warp.forward
    cols, rows = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    grid = np.stack([cols.ravel(), rows.ravel()], axis=1)
    src = sample_map(grid)
    map_x = src[:, 0].reshape(height, width).astype(np.float32)
    map_y = src[:, 1].reshape(height, width).astype(np.float32)
    warped = cv2.remap(np.ascontiguousarray(img.data), map_x, map_y, cv2.INTER_LINEAR,
                       borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    return ImageBuffer.from_array(warped.reshape(height, width, 3))


# ==================== Network size ====================

@dataclass(frozen=True)
class RestoreInfo:
    """What resize_pad did, so the crop extent can be recovered exactly"""
    orig_height: int
    orig_width: int
    scale: float
    content_width: int
    pad: int


def _resize(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    if arr.shape[0] == height and arr.shape[1] == width:
        return arr.copy()
    resized = cv2.resize(np.ascontiguousarray(arr), (width, height), interpolation=cv2.INTER_LINEAR)
    return resized.reshape(height, width, *arr.shape[2:])


def resize_pad_array(arr: np.ndarray, height: int = config.NETWORK_HEIGHT,
                     width: int = config.NETWORK_WIDTH, fill: float = 0.0) -> Tuple[np.ndarray, RestoreInfo]:
    """resize_pad on a raw H×W or H×W×C array (masks use this too)"""
    orig_h, orig_w = arr.shape[:2]
    scale = height / orig_h
    content_w = max(1, int(round(orig_w * scale)))
    if content_w >= width:
        content_w = width
    resized = _resize(arr, height, content_w)
    pad = width - content_w
    if pad:
        padding = [(0, 0), (0, pad)] + [(0, 0)] * (arr.ndim - 2)
        resized = np.pad(resized, padding, mode='constant', constant_values=fill)
    return resized, RestoreInfo(orig_h, orig_w, scale, content_w, pad)


def resize_pad(img: ImageBuffer, height: int = config.NETWORK_HEIGHT,
               width: int = config.NETWORK_WIDTH) -> Tuple[ImageBuffer, RestoreInfo]:
    """
    Scale to the network height keeping aspect ratio; zero-pad on the right
    when narrower than the network width, otherwise squeeze to it
    """
    arr, info = resize_pad_array(img.data, height, width)
    return ImageBuffer.from_array(arr), info


def unpad_resize(img: ImageBuffer, info: RestoreInfo) -> ImageBuffer:
    """Cut the padding off a network-size image and resize back to the crop size"""
    content = img.data[:, :info.content_width]
    return ImageBuffer.from_array(_resize(content, info.orig_height, info.orig_width))


def unpad_resize_array(arr: np.ndarray, info: RestoreInfo) -> np.ndarray:
    return _resize(arr[:, :info.content_width], info.orig_height, info.orig_width)
