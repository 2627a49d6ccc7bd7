"""
Synthetic scene-text engine

Renders a word onto a background crop with optional blur, shadow, 3D
extrusion and shift effects, composes it either by Poisson blending or by
direct alpha composition, and records the dilated stroke mask of the text
including all of its effects. Every sample is a pure function of
(config.seed, index).
"""
import json
import string
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import cv2
import numpy as np
import scipy.sparse as sp
from PIL import Image, ImageDraw, ImageFont
from scipy.sparse.linalg import cg

from errors import (
    ConfigError, EmptyText, FontLoadError, ImageIoError, NoBackgrounds, NoFonts,
    RegionOutOfBounds, ShapeMismatch, SolverNotConverged,
)
from imagecore import (
    ImageBuffer, StrokeMask, TextRegion, decode_image, encode_jpeg, list_images,
    load_image, save_image, save_mask,
)

DEFAULT_FONT = 'default'
WORD_ALPHABET = string.ascii_letters + string.digits

# Poisson solver settings
POISSON_RTOL = 1e-6
POISSON_ABS_TOL = 1e-5
POISSON_MAX_ITER = 10000

# JPEG ringing above this (max over channels) joins the hole; stays under 0.1 after PNG quantization
JPEG_RINGING_TOLERANCE = 0.09

# 5-point stencil neighbours as (row, col) offsets
NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


# ==================== Configuration ====================

@dataclass
class SynthConfig:
    fonts: List[str] = field(default_factory=lambda: [DEFAULT_FONT])
    backgrounds: List[str] = field(default_factory=list)
    corpus: Optional[str] = None
    seed: int = 0
    crop_height: int = 128
    crop_width: int = 512
    direct_compose_probability: float = 0.5
    direct_opacity_range: Tuple[float, float] = (0.7, 1.0)
    blur_probability: float = 0.5
    blur_sigma_range: Tuple[float, float] = (0.0, 2.0)
    shadow_enabled: bool = True
    shadow_probability: float = 0.5
    shadow_offset_range: Tuple[int, int] = (-8, 8)
    shadow_opacity_range: Tuple[float, float] = (0.3, 0.8)
    shadow_blur_range: Tuple[float, float] = (0.0, 2.0)
    border3d_enabled: bool = True
    border3d_probability: float = 0.3
    border3d_depth_range: Tuple[int, int] = (1, 4)
    border3d_direction: Tuple[int, int] = (1, 1)
    shift_range: int = 3
    jpeg_enabled: bool = True
    jpeg_quality_range: Tuple[int, int] = (40, 95)
    mask_dilation_radius: int = 2

    def __post_init__(self):
        for name in ('direct_opacity_range', 'blur_sigma_range', 'shadow_offset_range',
                     'shadow_opacity_range', 'shadow_blur_range', 'border3d_depth_range',
                     'border3d_direction', 'jpeg_quality_range'):
            value = tuple(getattr(self, name))
            if len(value) != 2:
                raise ConfigError(f"{name} needs exactly two values, got {value}")
            if name != 'border3d_direction' and value[0] > value[1]:
                raise ConfigError(f"{name} must be (low, high), got {value}")
            setattr(self, name, value)
        self.fonts = list(self.fonts)
        self.backgrounds = list(self.backgrounds)

        for name in ('direct_compose_probability', 'blur_probability', 'shadow_probability',
                     'border3d_probability'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        lo, hi = self.jpeg_quality_range
        if lo < 1 or hi > 100:
            raise ConfigError(f"jpeg_quality_range must lie within [1, 100], got {self.jpeg_quality_range}")
        if self.mask_dilation_radius < 0:
            raise ConfigError("mask_dilation_radius must be >= 0")
        if self.shift_range < 0:
            raise ConfigError("shift_range must be >= 0")
        if self.blur_sigma_range[0] < 0 or self.shadow_blur_range[0] < 0:
            raise ConfigError("blur sigmas must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.border3d_depth_range[0] < 1:
            raise ConfigError("border3d_depth_range must start at 1 or more")
        if self.text_area()[0] < 8 or self.text_area()[1] < 8:
            raise ConfigError(
                f"crop {self.crop_height}×{self.crop_width} leaves no room for text "
                f"after a {self.margin()} px effect margin")

    @classmethod
    def from_dict(cls, data: Dict, base_dir: Optional[Path] = None) -> 'SynthConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown synth config keys: {sorted(unknown)}")
        data = dict(data)
        if base_dir is not None:
            data['fonts'] = [f if f == DEFAULT_FONT else str(_resolve(base_dir, f))
                             for f in data.get('fonts', [DEFAULT_FONT])]
            data['backgrounds'] = [str(_resolve(base_dir, b)) for b in data.get('backgrounds', [])]
            if data.get('corpus'):
                data['corpus'] = str(_resolve(base_dir, data['corpus']))
        # directories expand to the images inside them
        expanded = []
        for entry in data.get('backgrounds', []):
            if Path(entry).is_dir():
                expanded.extend(str(p) for p in list_images(entry))
            else:
                expanded.append(entry)
        data['backgrounds'] = expanded
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> 'SynthConfig':
        path = Path(path)
        try:
            with open(path, 'r') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read synth config {path}: {e}") from e
        return cls.from_dict(data, base_dir=path.parent)

    def to_dict(self) -> Dict:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data

    def margin(self) -> int:
        """Distance kept between the glyph box and the crop edge so effects stay inside"""
        shadow = max(abs(v) for v in self.shadow_offset_range) if self.shadow_enabled else 0
        shadow_blur = int(np.ceil(4 * self.shadow_blur_range[1])) if self.shadow_enabled else 0
        depth = self.border3d_depth_range[1] * max(abs(v) for v in self.border3d_direction) \
            if self.border3d_enabled else 0
        blur = int(np.ceil(4 * self.blur_sigma_range[1]))
        return shadow + shadow_blur + depth + blur + self.shift_range + self.mask_dilation_radius + 2

    def text_area(self) -> Tuple[int, int]:
        m = self.margin()
        return self.crop_height - 2 * m, self.crop_width - 2 * m


def _resolve(base_dir: Path, entry: str) -> Path:
    path = Path(entry)
    return path if path.is_absolute() else base_dir / path


# ==================== Samples ====================

@dataclass(frozen=True, eq=False)
class SynthSample:
    input: ImageBuffer
    ground_truth: ImageBuffer
    mask: StrokeMask
    meta: Dict
    # the JPEG file the input was decoded from, when compression is on
    encoded_input: Optional[bytes] = field(default=None, repr=False)

    def __post_init__(self):
        if not (self.input.size == self.ground_truth.size == self.mask.size):
            raise ShapeMismatch(
                f"input {self.input.size}, ground truth {self.ground_truth.size} and "
                f"mask {self.mask.size} must share dimensions")


@dataclass(frozen=True)
class TextStyle:
    color: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    stroke_width: int = 0


@dataclass
class TextLayer:
    """Foreground colour (H×W×3, straight alpha) plus coverage alpha (H×W), both in [0,1]"""
    color: np.ndarray
    alpha: np.ndarray

    def copy(self) -> 'TextLayer':
        return TextLayer(self.color.copy(), self.alpha.copy())


def sample_seed(seed: int, index: int) -> int:
    """Order-independent per-sample seed derived from (seed, index)"""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


def _sample_streams(seed: int, index: int) -> Tuple[np.random.Generator, np.random.Generator]:
    content, mode = np.random.SeedSequence([seed, index]).spawn(2)
    return np.random.default_rng(content), np.random.default_rng(mode)


def composition_mode(config: SynthConfig, index: int) -> str:
    """'direct' with probability direct_compose_probability, else 'poisson'"""
    _, mode_rng = _sample_streams(config.seed, index)
    return 'direct' if mode_rng.random() < config.direct_compose_probability else 'poisson'


# ==================== Text rendering ====================

@lru_cache(maxsize=64)
def load_font(font: str, size: int) -> ImageFont.FreeTypeFont:
    try:
        if font == DEFAULT_FONT:
            return ImageFont.load_default(size=size)
        return ImageFont.truetype(font, size)
    except (OSError, ValueError) as e:
        raise FontLoadError(f"Cannot load font {font!r} at size {size}: {e}") from e


def render_text_layer(text: str, font: str, height: int,
                      style: Optional[TextStyle] = None) -> Tuple[np.ndarray, TextRegion]:
    """
    Rasterize text at the given pixel size. Returns the alpha map on a canvas
    with a 2 px border and the tight axis-aligned box of alpha > 0 within it.
    """
    if not text or not text.strip():
        raise EmptyText("Cannot render empty text")
    style = style or TextStyle()
    face = load_font(font, int(height))

    x0, y0, x1, y1 = face.getbbox(text, stroke_width=style.stroke_width)
    pad = 2
    canvas = Image.new('L', (max(1, x1 - x0) + 2 * pad, max(1, y1 - y0) + 2 * pad), 0)
    ImageDraw.Draw(canvas).text((pad - x0, pad - y0), text, font=face, fill=255,
                                stroke_width=style.stroke_width, stroke_fill=255)
    alpha = np.asarray(canvas, dtype=np.float32) / 255.0

    rows = np.flatnonzero(alpha.max(axis=1) > 0)
    cols = np.flatnonzero(alpha.max(axis=0) > 0)
    if rows.size == 0:
        raise EmptyText(f"Text {text!r} renders no visible pixels")
    bbox = TextRegion('axis_aligned', ((float(cols[0]), float(rows[0])),
                                       (float(cols[-1] + 1), float(rows[-1] + 1))))
    return alpha, bbox


def _pick_text(config: SynthConfig, rng: np.random.Generator) -> str:
    words = _load_corpus(config.corpus) if config.corpus else ()
    if words:
        return words[rng.integers(len(words))]
    length = int(rng.integers(1, 13))
    return ''.join(WORD_ALPHABET[i] for i in rng.integers(len(WORD_ALPHABET), size=length))


@lru_cache(maxsize=8)
def _load_corpus(path: str) -> Tuple[str, ...]:
    with open(path, 'r', encoding='utf-8') as f:
        return tuple(line.strip() for line in f if line.strip())


def _place_text(config: SynthConfig, rng: np.random.Generator, text: str, font: str,
                color: np.ndarray) -> TextLayer:
    """Render text scaled to fit the effect-safe area and put it at a random spot"""
    avail_h, avail_w = config.text_area()
    size = max(8, int(rng.uniform(0.5, 1.0) * avail_h))
    for _ in range(8):
        alpha, bbox = render_text_layer(text, font, size)
        x0, y0, x1, y1 = (int(v) for v in bbox.bounds())
        box_w, box_h = x1 - x0, y1 - y0
        if box_w <= avail_w and box_h <= avail_h:
            break
        factor = min(avail_w / box_w, avail_h / box_h)
        if size <= 8 and len(text) > 1:
            text = text[:-1]
        size = max(8, int(size * factor * 0.95))
    else:
        raise EmptyText(f"Text {text!r} cannot fit into a {avail_h}×{avail_w} area")

    margin = config.margin()
    left = margin + int(rng.integers(0, avail_w - box_w + 1))
    top = margin + int(rng.integers(0, avail_h - box_h + 1))
    canvas = np.zeros((config.crop_height, config.crop_width), dtype=np.float32)
    canvas[top:top + box_h, left:left + box_w] = alpha[y0:y1, x0:x1]
    colors = np.broadcast_to(color.astype(np.float32), (config.crop_height, config.crop_width, 3))
    return TextLayer(colors * (canvas[:, :, None] > 0), canvas)


# ==================== Effects ====================

def _translate(arr: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Integer shift with zero fill; +dx moves right, +dy moves down"""
    out = np.zeros_like(arr)
    h, w = arr.shape[:2]
    if abs(dx) >= w or abs(dy) >= h:
        return out
    out[max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)] = \
        arr[max(-dy, 0):h - max(dy, 0), max(-dx, 0):w - max(dx, 0)]
    return out


def _over(top: TextLayer, bottom: TextLayer) -> TextLayer:
    ta, ba = top.alpha[:, :, None], bottom.alpha[:, :, None]
    alpha = ta + ba * (1.0 - ta)
    premult = top.color * ta + bottom.color * ba * (1.0 - ta)
    color = np.divide(premult, alpha, out=np.zeros_like(premult), where=alpha > 0)
    return TextLayer(color.astype(np.float32), alpha[:, :, 0].astype(np.float32))


def _blur(layer: TextLayer, sigma: float) -> TextLayer:
    premult = cv2.GaussianBlur(layer.color * layer.alpha[:, :, None], (0, 0), sigma)
    alpha = cv2.GaussianBlur(layer.alpha, (0, 0), sigma)
    color = np.divide(premult, alpha[:, :, None], out=np.zeros_like(premult), where=alpha[:, :, None] > 0)
    return TextLayer(np.clip(color, 0, 1).astype(np.float32), np.clip(alpha, 0, 1).astype(np.float32))


def apply_effects(layer: TextLayer, config: SynthConfig,
                  rng: np.random.Generator) -> Tuple[TextLayer, Dict]:
    """
    Stack shadow < 3D extrusion < text, then blur and shift the whole layer.
    The returned layer's alpha is the union of every effect's coverage.
    """
    result = layer.copy()
    effects: Dict = {'border3d': None, 'shadow': None, 'blur_sigma': 0.0, 'shift': [0, 0]}

    if config.border3d_enabled and rng.random() < config.border3d_probability:
        depth = int(rng.integers(config.border3d_depth_range[0], config.border3d_depth_range[1] + 1))
        ddx, ddy = config.border3d_direction
        extrusion = np.zeros_like(result.alpha)
        for step in range(depth, 0, -1):
            extrusion = np.maximum(extrusion, _translate(layer.alpha, step * ddx, step * ddy))
        dark = np.broadcast_to(layer.color.max(axis=(0, 1)) * 0.5, layer.color.shape).astype(np.float32)
        result = _over(result, TextLayer(dark, extrusion))
        effects['border3d'] = {'depth': depth, 'direction': [ddx, ddy]}

    if config.shadow_enabled and rng.random() < config.shadow_probability:
        lo, hi = config.shadow_offset_range
        dx, dy = (int(v) for v in rng.integers(lo, hi + 1, size=2))
        opacity = float(rng.uniform(*config.shadow_opacity_range))
        blur = float(rng.uniform(*config.shadow_blur_range))
        shadow_alpha = _translate(result.alpha, dx, dy)
        if blur > 0:
            shadow_alpha = cv2.GaussianBlur(shadow_alpha, (0, 0), blur)
        shadow = TextLayer(np.zeros_like(result.color), (shadow_alpha * opacity).astype(np.float32))
        result = _over(result, shadow)
        effects['shadow'] = {'offset': [dx, dy], 'opacity': opacity, 'blur': blur}

    if rng.random() < config.blur_probability:
        sigma = float(rng.uniform(*config.blur_sigma_range))
        if sigma > 0:
            result = _blur(result, sigma)
            effects['blur_sigma'] = sigma

    if config.shift_range > 0:
        dx, dy = (int(v) for v in rng.integers(-config.shift_range, config.shift_range + 1, size=2))
        if dx or dy:
            result = TextLayer(_translate(result.color, dx, dy), _translate(result.alpha, dx, dy))
        effects['shift'] = [dx, dy]

    return result, effects


# ==================== Composition ====================

def direct_compose(background: ImageBuffer, fg: ImageBuffer, alpha: np.ndarray) -> ImageBuffer:
    """alpha·fg + (1 - alpha)·background"""
    alpha = np.asarray(alpha, dtype=np.float32)
    if fg.size != background.size or alpha.shape != background.size:
        raise ShapeMismatch(
            f"background {background.size}, fg {fg.size} and alpha {alpha.shape} must match")
    a = alpha[:, :, None]
    return ImageBuffer.from_array(a * fg.data + (1.0 - a) * background.data)


def _check_region(region: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    region = np.asarray(region, dtype=bool)
    if region.shape != size:
        raise ShapeMismatch(f"region {region.shape} does not match image {size}")
    if region[0].any() or region[-1].any() or region[:, 0].any() or region[:, -1].any():
        raise RegionOutOfBounds("Poisson region must lie strictly inside the image")
    return region


def poisson_solve(background: np.ndarray, fg: np.ndarray, region: np.ndarray) -> np.ndarray:
    """
    Unclipped float64 solution of the 5-point Poisson equation over the region:
    Δresult = Δfg inside, result = background outside.
    """
    if background.shape != fg.shape:
        raise ShapeMismatch(f"background {background.shape} and fg {fg.shape} must match")
    region = _check_region(region, background.shape[:2])
    result = background.astype(np.float64).copy()
    if not region.any():
        return result

    fg = fg.astype(np.float64)
    rows, cols = np.nonzero(region)
    n = rows.size
    index = np.full(region.shape, -1, dtype=np.int64)
    index[rows, cols] = np.arange(n)

    ri, ci = [np.arange(n)], [np.arange(n)]
    data = [np.full(n, 4.0)]
    boundary = np.zeros((n, fg.shape[2]))
    guidance = 4.0 * fg[rows, cols]
    for dr, dc in NEIGHBOURS:
        nr, nc = rows + dr, cols + dc
        guidance -= fg[nr, nc]
        inside = region[nr, nc]
        ri.append(np.flatnonzero(inside))
        ci.append(index[nr[inside], nc[inside]])
        data.append(np.full(int(inside.sum()), -1.0))
        outside = ~inside
        boundary[outside] += result[nr[outside], nc[outside]]
    system = sp.csr_matrix((np.concatenate(data), (np.concatenate(ri), np.concatenate(ci))), shape=(n, n))

    for channel in range(fg.shape[2]):
        b = guidance[:, channel] + boundary[:, channel]
        b_norm = float(np.linalg.norm(b))
        rtol = min(POISSON_RTOL, POISSON_ABS_TOL / b_norm) if b_norm > 0 else POISSON_RTOL
        x, info = cg(system, b, x0=result[rows, cols, channel], rtol=rtol, atol=0.0,
                     maxiter=POISSON_MAX_ITER)
        if info != 0:
            raise SolverNotConverged(float(np.linalg.norm(b - system @ x)))
        result[rows, cols, channel] = x
    return result


def laplacian(arr: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """5-point Laplacian (sum of neighbours - 4·centre) at the given pixels"""
    total = -4.0 * arr[rows, cols]
    for dr, dc in NEIGHBOURS:
        total = total + arr[rows + dr, cols + dc]
    return total


def poisson_residual(result: np.ndarray, fg: np.ndarray, region: np.ndarray) -> float:
    """max |Δresult - Δfg| over the region"""
    rows, cols = np.nonzero(region)
    if rows.size == 0:
        return 0.0
    diff = laplacian(result.astype(np.float64), rows, cols) - laplacian(fg.astype(np.float64), rows, cols)
    return float(np.abs(diff).max())


def poisson_blend(background: ImageBuffer, fg: ImageBuffer, alpha_region: np.ndarray) -> ImageBuffer:
    """Seamless clone of fg into background over the region"""
    if fg.size != background.size:
        raise ShapeMismatch(f"background {background.size} and fg {fg.size} must match")
    return ImageBuffer.from_array(poisson_solve(background.data, fg.data, alpha_region))


# ==================== Samples ====================

@lru_cache(maxsize=32)
def _load_background(path: str) -> ImageBuffer:
    return load_image(path)


def _background_crop(image: ImageBuffer, rng: np.random.Generator, height: int, width: int) -> ImageBuffer:
    arr = image.data
    scale = max(height / arr.shape[0], width / arr.shape[1])
    if scale > 1:
        new_size = (int(np.ceil(arr.shape[1] * scale)), int(np.ceil(arr.shape[0] * scale)))
        arr = cv2.resize(np.ascontiguousarray(arr), new_size, interpolation=cv2.INTER_LINEAR)
        arr = np.rint(np.clip(arr, 0, 1) * 255.0) / 255.0
    top = int(rng.integers(0, arr.shape[0] - height + 1))
    left = int(rng.integers(0, arr.shape[1] - width + 1))
    return ImageBuffer(arr[top:top + height, left:left + width])


def dilate_support(alpha: np.ndarray, radius: int) -> np.ndarray:
    support = (alpha > 0).astype(np.uint8)
    if radius <= 0:
        return support.astype(bool)
    kernel = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (2 * radius + 1, 2 * radius + 1))
    return cv2.dilate(support, kernel).astype(bool)


def generate_sample(config: SynthConfig, index: int) -> SynthSample:
    if not config.fonts:
        raise NoFonts("SynthConfig lists no fonts")
    if not config.backgrounds:
        raise NoBackgrounds("SynthConfig lists no background images")

    rng, _ = _sample_streams(config.seed, index)
    mode = composition_mode(config, index)

    background = _background_crop(_load_background(config.backgrounds[rng.integers(len(config.backgrounds))]),
                                  rng, config.crop_height, config.crop_width)
    text = _pick_text(config, rng)
    font = config.fonts[rng.integers(len(config.fonts))]
    color = rng.uniform(0.0, 1.0, size=3)
    layer = _place_text(config, rng, text, font, color)
    layer, effects = apply_effects(layer, config, rng)

    alpha = layer.alpha.copy()
    alpha[0, :] = alpha[-1, :] = 0.0
    alpha[:, 0] = alpha[:, -1] = 0.0
    support = alpha > 0

    meta = {'seed': sample_seed(config.seed, index), 'mode': mode, 'font': font, 'text': text,
            'effects': effects}
    if mode == 'direct':
        opacity = float(rng.uniform(*config.direct_opacity_range))
        composite = direct_compose(background, ImageBuffer.from_array(layer.color), alpha * opacity)
        meta['opacity'] = opacity
    else:
        # text over the mean background colour, cloned with gradients only
        flat = background.data[support].mean(axis=0) if support.any() else np.zeros(3)
        a = alpha[:, :, None]
        fg = a * layer.color + (1.0 - a) * flat
        raw = poisson_solve(background.data, fg, support)
        meta['poisson_residual'] = poisson_residual(raw, fg, support)
        composite = ImageBuffer.from_array(raw)

    quality = int(rng.integers(config.jpeg_quality_range[0], config.jpeg_quality_range[1] + 1))
    meta['jpeg_quality'] = quality if config.jpeg_enabled else None
    encoded = encode_jpeg(composite, quality) if config.jpeg_enabled else None
    image = decode_image(encoded) if encoded is not None else composite

    hole = dilate_support(alpha, config.mask_dilation_radius)
    if config.jpeg_enabled:
        ringing = np.abs(image.data - background.data).max(axis=2) > JPEG_RINGING_TOLERANCE
        meta['jpeg_ringing_pixels'] = int(np.count_nonzero(ringing & ~hole))
        hole |= ringing
    mask = StrokeMask((~hole).astype(np.float32))
    return SynthSample(image, background, mask, meta, encoded)


# ==================== Dataset writer ====================

def _write_sample(config: SynthConfig, index: int, out_dir: str) -> Dict:
    sample = generate_sample(config, index)
    name = f"sample_{index:08d}"
    sample_dir = Path(out_dir) / name
    sample_dir.mkdir(parents=True, exist_ok=True)

    if sample.encoded_input is not None:
        input_name = 'input.jpg'
        (sample_dir / input_name).write_bytes(sample.encoded_input)
    else:
        input_name = 'input.png'
        save_image(sample.input, sample_dir / input_name, 'png')
    save_image(sample.ground_truth, sample_dir / 'gt.png', 'png')
    save_mask(sample.mask, sample_dir / 'mask.png')
    with open(sample_dir / 'meta.json', 'w') as f:
        json.dump(sample.meta, f, indent=2, sort_keys=True)
    return {'dir': name, 'seed': sample.meta['seed'], 'input': input_name, 'mode': sample.meta['mode']}


def write_dataset(config: SynthConfig, count: int, out_dir, workers: int = 0) -> Dict:
    """
    Generate `count` samples under out_dir and write manifest.json.
    workers > 1 generates in a process pool; the manifest is written here only.
    """
    if count < 0:
        raise ConfigError("count must be >= 0")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ImageIoError(f"Cannot create dataset directory {out_dir}: {e}") from e

    if count and (not config.fonts or not config.backgrounds):
        raise NoFonts("SynthConfig lists no fonts") if not config.fonts else \
            NoBackgrounds("SynthConfig lists no background images")

    indices = range(count)
    if workers > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_write_sample, [config] * count, indices, [str(out_dir)] * count))
    else:
        entries = []
        for i in indices:
            entries.append(_write_sample(config, i, str(out_dir)))
            if (i + 1) % 100 == 0:
                print(f"🧪 Generated {i + 1}/{count} samples", file=sys.stderr)

    manifest = {'count': count, 'config': config.to_dict(), 'samples': entries}
    try:
        with open(out_dir / 'manifest.json', 'w') as f:
            json.dump(manifest, f, indent=2)
    except OSError as e:
        raise ImageIoError(f"Cannot write manifest in {out_dir}: {e}") from e
    return manifest
