"""
Image and mask value types, codec I/O and value conventions

Images are H×W×3 RGB float32 arrays in [0,1]. Masks follow the hole
convention: 1 = valid background, 0 = text stroke. Mask files on disk are
the opposite way round (text stroke = 255), matching what annotators and the
synthesis writer produce.
"""
import io
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

import config
from errors import (
    CorruptImage, FileNotFound, ImageIoError, InvalidQuality, NonFiniteInput,
    ShapeMismatch, UnsupportedFormat,
)

PathLike = Union[str, Path]

SUPPORTED_FORMATS = {'PNG': 'png', 'JPEG': 'jpeg'}
REGION_KINDS = ('axis_aligned', 'quad', 'polygon')


# ==================== Value types ====================

@dataclass(frozen=True)
class ImageBuffer:
    """H×W×3 RGB image with values in [0,1]"""
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeMismatch(f"ImageBuffer needs H×W×3 data, got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeMismatch(f"ImageBuffer needs at least 1×1 pixels, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteInput("ImageBuffer contains NaN or inf")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(f"ImageBuffer values must lie in [0,1], got [{arr.min()}, {arr.max()}]")
        arr.setflags(write=False)
        object.__setattr__(self, 'data', arr)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> 'ImageBuffer':
        """Build from any float array, clipping into [0,1]"""
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim == 2:
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        return cls(np.clip(arr, 0.0, 1.0))

    @classmethod
    def filled(cls, height: int, width: int, value=0.0) -> 'ImageBuffer':
        arr = np.empty((height, width, 3), dtype=np.float32)
        arr[...] = value
        return cls(arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 3

    @property
    def size(self) -> Tuple[int, int]:
        """(height, width)"""
        return self.data.shape[0], self.data.shape[1]


@dataclass(frozen=True)
class StrokeMask:
    """H×W map in [0,1]; 1 = valid background, 0 = text-stroke hole"""
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeMismatch(f"StrokeMask needs H×W data, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteInput("StrokeMask contains NaN or inf")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(f"StrokeMask values must lie in [0,1], got [{arr.min()}, {arr.max()}]")
        arr.setflags(write=False)
        object.__setattr__(self, 'data', arr)

    @classmethod
    def all_valid(cls, height: int, width: int) -> 'StrokeMask':
        return cls(np.ones((height, width), dtype=np.float32))

    @classmethod
    def from_text_alpha(cls, alpha: np.ndarray) -> 'StrokeMask':
        """Text-stroke weights (1 = text) to hole convention"""
        return cls(1.0 - np.clip(np.asarray(alpha, dtype=np.float32), 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def size(self) -> Tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    def hole(self) -> np.ndarray:
        """Boolean map of hole (text) pixels"""
        return self.data < 0.5

    def text_alpha(self) -> np.ndarray:
        """Text-stroke=1 representation, the one dice loss is computed on"""
        return 1.0 - self.data


@dataclass(frozen=True)
class TextRegion:
    """
    One text instance: axis-aligned box, quadrilateral or polygon (pixel coords).
    Polygons run clockwise: top boundary left->right, then bottom boundary right->left.
    """
    kind: str
    points: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if self.kind not in REGION_KINDS:
            raise ValueError(f"Unknown region kind '{self.kind}'")
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if self.kind == 'axis_aligned' and len(pts) != 2:
            raise ValueError(f"axis_aligned region needs 2 points, got {len(pts)}")
        if self.kind == 'quad':
            if len(pts) != 4:
                raise ValueError(f"quad region needs 4 points, got {len(pts)}")
            pts = order_quad(pts)
        if self.kind == 'polygon' and (len(pts) < 4 or len(pts) % 2):
            raise ValueError(f"polygon region needs 2N points (N>=2), got {len(pts)}")
        if self.kind == 'axis_aligned':
            (x0, y0), (x1, y1) = pts
            pts = ((min(x0, x1), min(y0, y1)), (max(x0, x1), max(y0, y1)))
        object.__setattr__(self, 'points', pts)

    def as_array(self) -> np.ndarray:
        return np.array(self.points, dtype=np.float64)

    def bounds(self) -> Tuple[float, float, float, float]:
        """(x0, y0, x1, y1) bounding box"""
        pts = self.as_array()
        return pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()

    def outline(self) -> np.ndarray:
        """Closed outline as an ordered point array (corners for boxes)"""
        pts = self.as_array()
        if self.kind == 'axis_aligned':
            (x0, y0), (x1, y1) = pts
            return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
        return pts

    def area(self) -> float:
        pts = self.outline()
        x, y = pts[:, 0], pts[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def clipped(self, width: int, height: int) -> 'TextRegion':
        pts = self.as_array()
        pts[:, 0] = np.clip(pts[:, 0], 0, width)
        pts[:, 1] = np.clip(pts[:, 1], 0, height)
        return TextRegion(self.kind, tuple(map(tuple, pts)))

    def translated(self, dx: float, dy: float) -> 'TextRegion':
        return TextRegion(self.kind, tuple((x + dx, y + dy) for x, y in self.points))

    def within(self, width: int, height: int) -> bool:
        pts = self.as_array()
        return bool(np.all(pts[:, 0] >= 0) and np.all(pts[:, 0] <= width)
                    and np.all(pts[:, 1] >= 0) and np.all(pts[:, 1] <= height))


def order_quad(points) -> Tuple[Tuple[float, float], ...]:
    """Order 4 points clockwise (in image coordinates) starting at top-left"""
    pts = np.asarray(points, dtype=np.float64)
    center = pts.mean(axis=0)
    angles = np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0])
    pts = pts[np.argsort(angles, kind='stable')]
    start = int(np.argmin(pts[:, 0] + pts[:, 1]))
    pts = np.roll(pts, -start, axis=0)
    return tuple((float(x), float(y)) for x, y in pts)


# ==================== Conventions ====================

def quantize(img: ImageBuffer) -> ImageBuffer:
    """The 8-bit value a PNG round trip produces: round(v·255)/255"""
    return ImageBuffer(np.rint(img.data * 255.0).astype(np.float32) / 255.0)


def binarize(mask: StrokeMask, tau: float = config.MASK_THRESHOLD) -> StrokeMask:
    """1 where mask >= tau, else 0"""
    return StrokeMask((mask.data >= tau).astype(np.float32))


def to_tensor(img: ImageBuffer) -> torch.Tensor:
    """ImageBuffer -> 3×H×W float tensor"""
    return torch.from_numpy(np.ascontiguousarray(img.data.transpose(2, 0, 1)))


def from_tensor(t: torch.Tensor) -> ImageBuffer:
    """3×H×W tensor (any float dtype / device) -> ImageBuffer, clipped to [0,1]"""
    arr = t.detach().float().cpu().clamp(0.0, 1.0).numpy()
    return ImageBuffer(arr.transpose(1, 2, 0))


def mask_to_tensor(mask: StrokeMask) -> torch.Tensor:
    """StrokeMask -> 1×H×W tensor"""
    return torch.from_numpy(np.ascontiguousarray(mask.data))[None]


# ==================== Codec I/O ====================

def _open(path: PathLike) -> Image.Image:
    path = Path(path)
    if not path.exists():
        raise FileNotFound(f"No such image: {path}")
    try:
        pil = Image.open(path)
        fmt = pil.format
        if fmt not in SUPPORTED_FORMATS:
            raise UnsupportedFormat(f"{path}: format {fmt} is not PNG or JPEG")
        pil.load()
    except UnsupportedFormat:
        raise
    except UnidentifiedImageError as e:
        raise UnsupportedFormat(f"{path}: not a recognised image ({e})") from e
    except (OSError, SyntaxError, ValueError) as e:
        raise CorruptImage(f"{path}: {e}") from e
    return pil


def load_image(path: PathLike) -> ImageBuffer:
    """Read a PNG or JPEG file into an RGB ImageBuffer"""
    pil = _open(path).convert('RGB')
    arr = np.asarray(pil, dtype=np.uint8)
    return ImageBuffer(arr.astype(np.float32) / 255.0)


def save_image(img: ImageBuffer, path: PathLike, format: str = 'png',
               quality: int = config.JPEG_SAVE_QUALITY) -> None:
    """Write an ImageBuffer as PNG (lossless after quantization) or JPEG"""
    fmt = format.lower()
    if fmt == 'jpg':
        fmt = 'jpeg'
    if fmt not in SUPPORTED_FORMATS.values():
        raise UnsupportedFormat(f"Cannot save as '{format}'")
    if fmt == 'jpeg' and not (isinstance(quality, int) and 1 <= quality <= 100):
        raise InvalidQuality(f"JPEG quality must be an integer in 1..100, got {quality}")

    arr = np.rint(img.data * 255.0).astype(np.uint8)
    pil = Image.fromarray(arr)
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        if fmt == 'png':
            pil.save(path, format='PNG')
        else:
            # 4:4:4 chroma so quality is the only loss knob
            pil.save(path, format='JPEG', quality=quality, subsampling=0)
    except OSError as e:
        raise ImageIoError(f"Failed to write {path}: {e}") from e


def encode_jpeg(img: ImageBuffer, quality: int) -> bytes:
    """JPEG file bytes exactly as save_image would write them"""
    if not (isinstance(quality, int) and 1 <= quality <= 100):
        raise InvalidQuality(f"JPEG quality must be an integer in 1..100, got {quality}")
    buffer = io.BytesIO()
    arr = np.rint(img.data * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(buffer, format='JPEG', quality=quality, subsampling=0)
    return buffer.getvalue()


def decode_image(data: bytes) -> ImageBuffer:
    try:
        pil = Image.open(io.BytesIO(data)).convert('RGB')
    except UnidentifiedImageError as e:
        raise UnsupportedFormat(f"not a recognised image ({e})") from e
    except (OSError, SyntaxError, ValueError) as e:
        raise CorruptImage(str(e)) from e
    return ImageBuffer(np.asarray(pil, dtype=np.uint8).astype(np.float32) / 255.0)


def jpeg_roundtrip(img: ImageBuffer, quality: int) -> ImageBuffer:
    """Compress and decode in memory, as save_image + load_image would"""
    return decode_image(encode_jpeg(img, quality))


def load_mask(path: PathLike) -> StrokeMask:
    """Read a single-channel mask PNG (text stroke = 255) into hole convention"""
    pil = _open(path).convert('L')
    text = np.asarray(pil, dtype=np.uint8)
    return StrokeMask((255 - text.astype(np.int32)).astype(np.float32) / 255.0)


def save_mask(mask: StrokeMask, path: PathLike) -> None:
    """Write a mask as 8-bit PNG with text stroke = 255"""
    valid = np.rint(mask.data * 255.0).astype(np.int32)
    pil = Image.fromarray((255 - valid).astype(np.uint8))
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        pil.save(path, format='PNG')
    except OSError as e:
        raise ImageIoError(f"Failed to write {path}: {e}") from e


def list_images(directory: PathLike) -> List[Path]:
    """PNG/JPEG files in a directory, sorted by name"""
    exts = {'.png', '.jpg', '.jpeg'}
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in exts)
