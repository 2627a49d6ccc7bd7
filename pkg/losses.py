"""
Training objectives: stroke mask loss (L1 + dice), hole-weighted pixel loss,
perceptual and style losses on frozen VGG-19 features, and total variation
over the hole region.

Masks passed in here are tensors. `mask_text` / `gt_text` use the text = 1
representation; `mask_valid` uses the hole convention (1 = valid background).
"""
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import requests
import torch
import torch.nn as nn
from torchvision.models import vgg19

import config
from errors import ConfigError, ShapeMismatch

DICE_EPS = 1e-6

# slice boundaries of torchvision's vgg19().features ending at relu1_1 ... relu5_1
VGG_STAGE_BOUNDS = (0, 2, 7, 12, 21, 30)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class LossWeights:
    smpm: float = 10.0
    dice: float = 1.0           # λ0 inside the SMPM loss
    pixel: float = 1.0
    hole: float = 6.0           # hole weight inside the pixel loss
    perceptual: float = 0.05
    style: float = 100.0
    tv: float = 0.1
    use_l1: bool = True
    use_dice: bool = True

    @classmethod
    def from_dict(cls, data: Dict) -> 'LossWeights':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown loss weight keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> Dict:
        return asdict(self)


# ==================== Feature extractor ====================

def download_vgg_weights(path, url: str = config.VGG_WEIGHTS_URL, timeout: int = 60) -> Path:
    """Fetch ImageNet VGG-19 weights to `path` unless already there"""
    path = Path(path)
    if path.exists():
        return path
    path.parent.mkdir(parents=True, exist_ok=True)
    print(f"⬇️  Downloading VGG-19 weights from {url}...", file=sys.stderr)
    response = requests.get(url, stream=True, timeout=timeout)
    response.raise_for_status()
    partial = path.with_suffix(path.suffix + '.part')
    with open(partial, 'wb') as f:
        for chunk in response.iter_content(chunk_size=1 << 20):
            f.write(chunk)
    os.replace(partial, path)
    print(f"✅ Saved VGG-19 weights to {path}", file=sys.stderr)
    return path


def default_vgg_weights_path() -> Path:
    if config.VGG_WEIGHTS_PATH:
        return Path(config.VGG_WEIGHTS_PATH)
    return Path.home() / '.cache' / 'stroke_erase' / 'vgg19.pth'


class VggFeatureExtractor(nn.Module):
    """
    Frozen feature pyramid φ_1..φ_5 (relu1_1 ... relu5_1 of VGG-19).

    Custom `stages` replace the VGG slices; tests use this to plug in a tiny
    feature net. Inputs are ImageNet-normalized before the first stage.
    """

    def __init__(self, pretrained: bool = True, weights_path=None,
                 stages: Optional[Sequence[nn.Module]] = None, normalize: bool = True):
        super().__init__()
        if stages is None:
            features = vgg19(weights=None).features
            if pretrained:
                path = download_vgg_weights(weights_path or default_vgg_weights_path())
                state = torch.load(path, map_location='cpu', weights_only=True)
                prefix = 'features.'
                features.load_state_dict({k[len(prefix):]: v for k, v in state.items()
                                          if k.startswith(prefix)})
            stages = [features[a:b] for a, b in zip(VGG_STAGE_BOUNDS, VGG_STAGE_BOUNDS[1:])]
        self.stages = nn.ModuleList(stages)
        self.normalize = normalize
        self.register_buffer('mean', torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer('std', torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        # always frozen
        return super().train(False)

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        if self.normalize:
            x = (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


# ==================== Mask losses ====================

def _check_same(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: {tuple(a.shape)} vs {tuple(b.shape)}")


def dice_loss(pred: torch.Tensor, gt: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """1 - (2Σ pred·gt + ε) / (Σ pred + Σ gt + ε), per sample, averaged over the batch"""
    _check_same(pred, gt, 'dice_loss')
    p = pred.reshape(pred.shape[0], -1)
    g = gt.reshape(gt.shape[0], -1)
    overlap = 2.0 * (p * g).sum(dim=1)
    denom = p.sum(dim=1) + g.sum(dim=1)
    return (1.0 - (overlap + eps) / (denom + eps)).mean()


def smpm_loss(pred: torch.Tensor, gt: torch.Tensor, dice_weight: float = 1.0,
              use_l1: bool = True, use_dice: bool = True) -> torch.Tensor:
    _check_same(pred, gt, 'smpm_loss')
    loss = pred.new_zeros(())
    if use_l1:
        loss = loss + (pred - gt).abs().mean()
    if use_dice:
        loss = loss + dice_weight * dice_loss(pred, gt)
    return loss


# ==================== Image losses ====================

def pixel_loss(out: torch.Tensor, gt: torch.Tensor, mask_valid: torch.Tensor,
               hole_weight: float = 6.0) -> torch.Tensor:
    """mean(M·|out-gt|) + hole_weight · mean((1-M)·|out-gt|)"""
    _check_same(out, gt, 'pixel_loss')
    diff = (out - gt).abs()
    return (mask_valid * diff).mean() + hole_weight * ((1.0 - mask_valid) * diff).mean()


def compose(out: torch.Tensor, gt: torch.Tensor, mask_valid: torch.Tensor) -> torch.Tensor:
    """Valid pixels from the ground truth, hole pixels from the prediction"""
    _check_same(out, gt, 'compose')
    return mask_valid * gt + (1.0 - mask_valid) * out


def gram_matrix(feat: torch.Tensor) -> torch.Tensor:
    """φ φᵀ / (C·H·W) for N×C×H×W features"""
    n, c, h, w = feat.shape
    flat = feat.reshape(n, c, h * w)
    return torch.bmm(flat, flat.transpose(1, 2)) / (c * h * w)


def perceptual_from_features(out_feats, comp_feats, gt_feats) -> torch.Tensor:
    loss = 0.0
    for f_out, f_comp, f_gt in zip(out_feats, comp_feats, gt_feats):
        loss = loss + (f_out - f_gt).abs().mean() + (f_comp - f_gt).abs().mean()
    return loss


def style_from_features(out_feats, comp_feats, gt_feats) -> torch.Tensor:
    loss = 0.0
    for f_out, f_comp, f_gt in zip(out_feats, comp_feats, gt_feats):
        g_gt = gram_matrix(f_gt)
        loss = loss + (gram_matrix(f_out) - g_gt).abs().mean() + (gram_matrix(f_comp) - g_gt).abs().mean()
    return loss


def _extract_all(extractor: nn.Module, out, comp, gt):
    batch = out.shape[0]
    feats = extractor(torch.cat([out, comp, gt], dim=0))
    return ([f[:batch] for f in feats], [f[batch:2 * batch] for f in feats], [f[2 * batch:] for f in feats])


def perceptual_loss(out, comp, gt, extractor: nn.Module) -> torch.Tensor:
    return perceptual_from_features(*_extract_all(extractor, out, comp, gt))


def style_loss(out, comp, gt, extractor: nn.Module) -> torch.Tensor:
    return style_from_features(*_extract_all(extractor, out, comp, gt))


def tv_loss(comp: torch.Tensor, hole: torch.Tensor, reduction: str = 'mean') -> torch.Tensor:
    """
    Total variation over neighbour pairs rooted in the hole region:
    horizontal pairs (i, j)-(i, j+1) and vertical pairs (i, j)-(i+1, j) where
    (i, j) is a hole pixel. 'sum' is the raw total, 'mean' divides each
    direction by its number of pair elements.
    """
    if reduction not in ('mean', 'sum'):
        raise ValueError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    if hole.dim() != 4 or hole.shape[-2:] != comp.shape[-2:]:
        raise ShapeMismatch(f"hole {tuple(hole.shape)} does not match image {tuple(comp.shape)}")
    hole = hole.to(comp.dtype)

    total = comp.new_zeros(())
    dx = (comp[..., :, 1:] - comp[..., :, :-1]).abs() * hole[..., :, :-1]
    dy = (comp[..., 1:, :] - comp[..., :-1, :]).abs() * hole[..., :-1, :]
    for term in (dx, dy):
        if term.numel() == 0:
            continue
        total = total + (term.sum() if reduction == 'sum' else term.mean())
    return total


# ==================== Total ====================

def total_loss(mask_text: torch.Tensor, output: torch.Tensor, gt_text: torch.Tensor,
               gt_image: torch.Tensor, weights: LossWeights, extractor: Optional[nn.Module],
               tau: float = config.MASK_THRESHOLD) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """
    weights.smpm·L_smpm + weights.pixel·L_pixel + weights.perceptual·L_per
    + weights.style·L_style + weights.tv·L_tv

    The soft predicted mask feeds every term; the TV hole region is the
    predicted mask thresholded at tau. Returns (total, per-term values).
    """
    _check_same(mask_text, gt_text, 'total_loss masks')
    _check_same(output, gt_image, 'total_loss images')
    mask_valid = 1.0 - mask_text

    terms = {
        'smpm': smpm_loss(mask_text, gt_text, weights.dice, weights.use_l1, weights.use_dice),
        'pixel': pixel_loss(output, gt_image, mask_valid, weights.hole),
    }
    comp = compose(output, gt_image, mask_valid)
    if extractor is not None and (weights.perceptual or weights.style):
        out_f, comp_f, gt_f = _extract_all(extractor, output, comp, gt_image)
        terms['perceptual'] = perceptual_from_features(out_f, comp_f, gt_f)
        terms['style'] = style_from_features(out_f, comp_f, gt_f)
    else:
        terms['perceptual'] = output.new_zeros(())
        terms['style'] = output.new_zeros(())
    terms['tv'] = tv_loss(comp, (mask_valid < tau).detach())

    total = sum(getattr(weights, name) * value for name, value in terms.items())
    return total, terms
