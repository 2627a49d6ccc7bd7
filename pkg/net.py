"""
The erasing network: stroke mask prediction module (SMPM) and background
inpainting module (BIPM) with partial convolutions and a global context block
"""
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

import config
from errors import ConfigError, NonFiniteInput, ShapeMismatch
from imagecore import ImageBuffer, StrokeMask, from_tensor, to_tensor


# ==================== Configuration ====================

@dataclass
class NetworkConfig:
    """Architecture hyperparameters; defaults reproduce the 128×640 network"""
    input_height: int = 128
    input_width: int = 640
    in_channels: int = 3
    smpm_channels: Tuple[int, ...] = (32, 64, 128, 256)
    bipm_channels: Tuple[int, ...] = (64, 128, 256)
    bipm_kernels: Tuple[int, ...] = (7, 5, 3)
    mask_channels: int = 3
    num_resblocks: int = 4
    resblock_kind: str = 'bottleneck'
    resblock_reduction: int = 4
    gc_ratio: int = 4
    mask_threshold: float = config.MASK_THRESHOLD
    use_smpm: bool = True
    use_feature_skip: bool = True
    use_attention: bool = True
    use_partial_conv: bool = True
    use_batchnorm: bool = True
    bipm_decoder_skips: bool = True

    def __post_init__(self):
        self.smpm_channels = tuple(self.smpm_channels)
        self.bipm_channels = tuple(self.bipm_channels)
        self.bipm_kernels = tuple(self.bipm_kernels)
        if len(self.smpm_channels) != 4:
            raise ConfigError("smpm_channels needs 4 entries (full resolution + 3 downsamplings)")
        if len(self.bipm_channels) != 3 or len(self.bipm_kernels) != 3:
            raise ConfigError("bipm_channels and bipm_kernels need 3 entries each")
        if self.resblock_kind not in ('bottleneck', 'basic'):
            raise ConfigError(f"resblock_kind must be 'bottleneck' or 'basic', got {self.resblock_kind!r}")
        if self.input_height % 8 or self.input_width % 8:
            raise ConfigError("input size must be divisible by 8")
        if not 0 < self.mask_threshold < 1:
            raise ConfigError("mask_threshold must lie in (0, 1)")

    @classmethod
    def from_dict(cls, data: Dict) -> 'NetworkConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown network config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def miniature(cls, **overrides) -> 'NetworkConfig':
        """A tiny 16×80 network with the same topology, for tests and smoke runs"""
        params = dict(input_height=16, input_width=80, smpm_channels=(4, 8, 8, 8),
                      bipm_channels=(8, 8, 8), num_resblocks=1, gc_ratio=2, resblock_reduction=2)
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> Dict:
        data = asdict(self)
        for key in ('smpm_channels', 'bipm_channels', 'bipm_kernels'):
            data[key] = list(data[key])
        return data


# ==================== Partial convolution ====================

@dataclass
class PartialConvState:
    """Features plus validity mask (1 = valid); mask has 1 channel or one per feature channel"""
    feature: torch.Tensor
    mask: torch.Tensor


def partial_conv_forward(state: PartialConvState, weight: torch.Tensor,
                         bias: Optional[torch.Tensor] = None, stride: int = 1,
                         padding: Optional[int] = None) -> PartialConvState:
    """
    x' = W^T (X ⊙ M) · sum(1)/sum(M) + b  and  m' = 1   where sum(M) > 0
    x' = 0                                and  m' = 0   otherwise

    Padding positions count as valid, so an all-ones mask gives exactly a
    standard zero-padded convolution.
    """
    feature, mask = state.feature, state.mask
    if feature.dim() != 4 or mask.dim() != 4:
        raise ShapeMismatch("partial convolution expects N×C×H×W features and masks")
    if mask.shape[0] != feature.shape[0] or mask.shape[-2:] != feature.shape[-2:]:
        raise ShapeMismatch(f"mask {tuple(mask.shape)} does not match features {tuple(feature.shape)}")
    if mask.shape[1] not in (1, feature.shape[1]):
        raise ShapeMismatch(f"mask needs 1 or {feature.shape[1]} channels, got {mask.shape[1]}")
    if weight.shape[1] != feature.shape[1]:
        raise ShapeMismatch(f"weight expects {weight.shape[1]} input channels, got {feature.shape[1]}")

    k_h, k_w = weight.shape[-2:]
    if padding is None:
        padding = k_h // 2
    mask = mask.to(feature.dtype)

    with torch.no_grad():
        ones = torch.ones(1, mask.shape[1], k_h, k_w, dtype=mask.dtype, device=mask.device)
        padded = F.pad(mask, (padding, padding, padding, padding), value=1.0)
        mask_sum = F.conv2d(padded, ones, stride=stride)
        updated = (mask_sum > 0).to(feature.dtype)
        ratio = (mask.shape[1] * k_h * k_w) / mask_sum.clamp(min=1.0) * updated

    out = F.conv2d(feature * mask, weight, None, stride, padding) * ratio
    if bias is not None:
        out = (out + bias.view(1, -1, 1, 1)) * updated
    return PartialConvState(out, updated)


class PartialConv2d(nn.Conv2d):
    """Conv2d that takes and returns a validity mask; partial=False makes it a plain conv"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, bias: bool = True, partial: bool = True):
        super().__init__(in_channels, out_channels, kernel_size, stride,
                         padding=kernel_size // 2, bias=bias)
        self.partial = partial

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if not self.partial:
            out = super().forward(x)
            return out, torch.ones_like(out[:, :1])
        state = partial_conv_forward(PartialConvState(x, mask), self.weight, self.bias,
                                     self.stride[0], self.padding[0])
        return state.feature, state.mask


class PartialConvBlock(nn.Module):
    """PConv -> BN -> ReLU, with invalid positions zeroed after the activation"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, batchnorm: bool = True, activation: bool = True,
                 partial: bool = True):
        super().__init__()
        self.conv = PartialConv2d(in_channels, out_channels, kernel_size, stride, partial=partial)
        self.bn = nn.BatchNorm2d(out_channels) if batchnorm else None
        self.activation = activation

    def forward(self, x, mask):
        out, mask = self.conv(x, mask)
        if self.bn is not None:
            out = self.bn(out)
        if self.activation:
            out = F.relu(out)
            out = out * mask
        return out, mask


# ==================== Global context ====================

class GlobalContextBlock(nn.Module):
    """
    y = x + transform(context(x)): context is a softmax-weighted spatial pooling,
    transform is a 1×1 bottleneck (channels / ratio) with LayerNorm and ReLU
    """

    def __init__(self, channels: int, ratio: int = 4):
        super().__init__()
        planes = max(1, channels // ratio)
        self.conv_mask = nn.Conv2d(channels, 1, kernel_size=1)
        self.channel_add = nn.Sequential(
            nn.Conv2d(channels, planes, kernel_size=1),
            nn.LayerNorm([planes, 1, 1]),
            nn.ReLU(inplace=True),
            nn.Conv2d(planes, channels, kernel_size=1),
        )
        # last layer starts at zero so the block begins as the identity
        nn.init.zeros_(self.channel_add[-1].weight)
        nn.init.zeros_(self.channel_add[-1].bias)

    def context(self, x: torch.Tensor) -> torch.Tensor:
        batch, channels, height, width = x.shape
        attention = self.conv_mask(x).view(batch, 1, height * width)
        attention = F.softmax(attention, dim=2).unsqueeze(-1)          # N×1×HW×1
        flat = x.view(batch, channels, height * width).unsqueeze(1)    # N×1×C×HW
        return torch.matmul(flat, attention).view(batch, channels, 1, 1)

    def forward(self, x):
        return x + self.channel_add(self.context(x))


def gc_block_forward(x: torch.Tensor, block: GlobalContextBlock) -> torch.Tensor:
    expected = block.conv_mask.in_channels
    if x.dim() != 4 or x.shape[1] != expected:
        raise ShapeMismatch(f"GC block expects {expected} channels, got {tuple(x.shape)}")
    return block(x)


# ==================== Stroke mask prediction module ====================

def conv_relu(in_channels: int, out_channels: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(in_channels, out_channels, 3, stride, 1), nn.ReLU(inplace=True))


def deconv_relu(in_channels: int, out_channels: int) -> nn.Sequential:
    """Transposed 3×3 conv doubling the spatial size"""
    return nn.Sequential(
        nn.ConvTranspose2d(in_channels, out_channels, 3, stride=2, padding=1, output_padding=1),
        nn.ReLU(inplace=True),
    )


class BasicResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        out = F.relu(self.conv1(x))
        return F.relu(x + self.conv2(out))


class BottleneckResBlock(nn.Module):
    """1×1 reduce, 3×3, 1×1 expand, identity shortcut"""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        mid = max(1, channels // reduction)
        self.reduce = nn.Conv2d(channels, mid, 1)
        self.conv = nn.Conv2d(mid, mid, 3, padding=1)
        self.expand = nn.Conv2d(mid, channels, 1)

    def forward(self, x):
        out = F.relu(self.reduce(x))
        out = F.relu(self.conv(out))
        return F.relu(x + self.expand(out))


class StrokeMaskPredictor(nn.Module):
    """Encoder / residual blocks / decoder FCN predicting stroke-mask logits and F_m"""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        c0, c1, c2, c3 = cfg.smpm_channels
        self.enc0 = nn.Sequential(conv_relu(cfg.in_channels, c0), conv_relu(c0, c0))
        self.enc1 = nn.Sequential(conv_relu(c0, c1, 2), conv_relu(c1, c1), conv_relu(c1, c1))
        self.enc2 = nn.Sequential(conv_relu(c1, c2, 2), conv_relu(c2, c2), conv_relu(c2, c2))
        self.enc3 = nn.Sequential(conv_relu(c2, c3, 2), conv_relu(c3, c3), conv_relu(c3, c3))
        if cfg.resblock_kind == 'bottleneck':
            blocks = [BottleneckResBlock(c3, cfg.resblock_reduction) for _ in range(cfg.num_resblocks)]
        else:
            blocks = [BasicResBlock(c3) for _ in range(cfg.num_resblocks)]
        self.resblocks = nn.Sequential(*blocks)

        self.dec3 = nn.Sequential(conv_relu(c3, c3), conv_relu(c3, c3))
        self.up2 = deconv_relu(c3, c2)
        self.dec2 = nn.Sequential(conv_relu(c2 * 2, c2), conv_relu(c2, c2))
        self.up1 = deconv_relu(c2, c1)
        self.dec1 = nn.Sequential(conv_relu(c1 * 2, c1), conv_relu(c1, c1))
        self.up0 = deconv_relu(c1, c0)
        self.dec0 = nn.Sequential(conv_relu(c0 * 2, c0), conv_relu(c0, c0))
        self.head = nn.Conv2d(c0, cfg.mask_channels, 3, padding=1)

    def forward(self, x) -> Tuple[torch.Tensor, torch.Tensor]:
        e0 = self.enc0(x)
        e1 = self.enc1(e0)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        features = self.resblocks(e3)

        d = self.dec3(features)
        d = self.dec2(torch.cat([self.up2(d), e2], dim=1))
        d = self.dec1(torch.cat([self.up1(d), e1], dim=1))
        d = self.dec0(torch.cat([self.up0(d), e0], dim=1))
        return self.head(d), features


# ==================== Background inpainting module ====================

class BackgroundInpainter(nn.Module):
    """Partial-conv encoder, [F_b; F_m] + GC bottleneck, upsampling partial-conv decoder"""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        c0, c1, c2 = cfg.bipm_channels
        k0, k1, k2 = cfg.bipm_kernels
        bn, partial = cfg.use_batchnorm, cfg.use_partial_conv

        def block(i, o, k=3, s=1, **kw):
            return PartialConvBlock(i, o, k, s, batchnorm=kw.get('batchnorm', bn),
                                    activation=kw.get('activation', True), partial=partial)

        self.encoder = nn.ModuleList([
            nn.ModuleList([block(cfg.in_channels, c0, k0, 2), block(c0, c0), block(c0, c0)]),
            nn.ModuleList([block(c0, c1, k1, 2), block(c1, c1), block(c1, c1)]),
            nn.ModuleList([block(c1, c2, k2, 2), block(c2, c2), block(c2, c2)]),
        ])

        fused = c2 + (cfg.smpm_channels[-1] if cfg.use_smpm and cfg.use_feature_skip else 0)
        self.attention = GlobalContextBlock(fused, cfg.gc_ratio) if cfg.use_attention else nn.Identity()
        layers = [nn.Conv2d(fused, c2, 3, padding=1)]
        if bn:
            layers.append(nn.BatchNorm2d(c2))
        layers.append(nn.ReLU(inplace=True))
        self.fuse = nn.Sequential(*layers)

        skips = cfg.bipm_decoder_skips
        self.decoder = nn.ModuleList([
            nn.ModuleList([block(c2 + (c1 if skips else 0), c2), block(c2, c2), block(c2, c1)]),
            nn.ModuleList([block(c1 + (c0 if skips else 0), c1), block(c1, c1), block(c1, c0)]),
            nn.ModuleList([block(c0 + (cfg.in_channels if skips else 0), c0), block(c0, c0),
                           block(c0, 3, batchnorm=False, activation=False)]),
        ])

    def encoder_batchnorms(self) -> List[nn.BatchNorm2d]:
        return [m for m in self.encoder.modules() if isinstance(m, nn.BatchNorm2d)]

    def forward(self, x: torch.Tensor, hole_mask: torch.Tensor,
                f_m: Optional[torch.Tensor] = None, trace: Optional[list] = None) -> torch.Tensor:
        feats, masks = [x], [hole_mask]
        out, mask = x, hole_mask
        for stage in self.encoder:
            for layer in stage:
                out, mask = layer(out, mask)
                if trace is not None:
                    trace.append(('encoder', out.shape, mask))
            feats.append(out)
            masks.append(mask)

        if f_m is not None:
            if f_m.shape[-2:] != out.shape[-2:]:
                raise ShapeMismatch(f"F_m {tuple(f_m.shape)} does not match F_b {tuple(out.shape)}")
            out = torch.cat([out, f_m], dim=1)
        if trace is not None:
            trace.append(('bottleneck', out.shape, mask))
        out = self.fuse(self.attention(out))

        for level, stage in enumerate(self.decoder):
            skip_feat, skip_mask = feats[2 - level], masks[2 - level]
            out = F.interpolate(out, scale_factor=2, mode='nearest')
            mask = F.interpolate(mask, scale_factor=2, mode='nearest')
            if self.cfg.bipm_decoder_skips:
                layer_mask = torch.cat([mask.expand(-1, out.shape[1], -1, -1),
                                        skip_mask.expand(-1, skip_feat.shape[1], -1, -1)], dim=1)
                out = torch.cat([out, skip_feat], dim=1)
                mask = layer_mask
            for layer in stage:
                out, mask = layer(out, mask)
                if trace is not None:
                    trace.append(('decoder', out.shape, mask))
        return torch.sigmoid(out)


# ==================== Full network ====================

class EraseOutput(NamedTuple):
    mask_text: torch.Tensor    # soft stroke probability, 1 = text (N×1×H×W)
    hole_mask: torch.Tensor    # binarized, 1 = valid background (N×1×H×W)
    output: torch.Tensor       # BIPM output Î_out (N×3×H×W)
    composite: torch.Tensor    # I_final (N×3×H×W)
    features: Optional[torch.Tensor] = None


def reduce_mask(mask_logits: torch.Tensor,
                tau: float = config.MASK_THRESHOLD) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Multi-channel mask logits -> (soft text probability, binary valid mask).
    soft = mean over channels of sigmoid(logits); valid = (1 - soft) >= tau
    """
    if not torch.isfinite(mask_logits).all():
        raise NonFiniteInput("mask logits contain NaN or inf")
    soft = torch.sigmoid(mask_logits).mean(dim=1, keepdim=True)
    valid = ((1.0 - soft) >= tau).to(mask_logits.dtype)
    return soft, valid


def compose_output(output: torch.Tensor, image: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Hole pixels from the network output, valid pixels from the input"""
    return (valid * image + (1.0 - valid) * output).clamp(0.0, 1.0)


class StrokeEraseNet(nn.Module):
    """SMPM predicts the stroke hole, BIPM fills it"""

    def __init__(self, cfg: Optional[NetworkConfig] = None):
        super().__init__()
        self.cfg = cfg or NetworkConfig()
        self.smpm = StrokeMaskPredictor(self.cfg) if self.cfg.use_smpm else None
        self.bipm = BackgroundInpainter(self.cfg)
        self.bn_frozen = False

    def check_input(self, x: torch.Tensor):
        expected = (self.cfg.in_channels, self.cfg.input_height, self.cfg.input_width)
        if x.dim() != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeMismatch(f"network expects N×{expected[0]}×{expected[1]}×{expected[2]}, got {tuple(x.shape)}")

    def forward(self, x: torch.Tensor) -> EraseOutput:
        self.check_input(x)
        if self.smpm is None:
            valid = torch.ones_like(x[:, :1])
            output = self.bipm(x, valid)
            return EraseOutput(torch.zeros_like(valid), valid, output, output.clamp(0.0, 1.0))

        logits, f_m = self.smpm(x)
        soft, valid = reduce_mask(logits, self.cfg.mask_threshold)
        output = self.bipm(x, valid, f_m if self.cfg.use_feature_skip else None)
        return EraseOutput(soft, valid, output, compose_output(output, x, valid), f_m)

    def train(self, mode: bool = True):
        super().train(mode)
        if self.bn_frozen:
            for bn in self.bipm.encoder_batchnorms():
                bn.eval()
        return self


def smpm_forward(model: StrokeEraseNet, img: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """(mask logits, F_m) for a N×3×H×W batch"""
    model.check_input(img)
    if model.smpm is None:
        raise ConfigError("network was built without the stroke mask prediction module")
    return model.smpm(img)


def bipm_forward(model: StrokeEraseNet, img: torch.Tensor, hole_mask: torch.Tensor,
                 f_m: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Î_out for a batch, given the binary valid mask (1 = valid) and SMPM features"""
    model.check_input(img)
    if hole_mask.dim() != 4 or hole_mask.shape[1] != 1 or hole_mask.shape[-2:] != img.shape[-2:]:
        raise ShapeMismatch(f"hole mask must be N×1×H×W matching the image, got {tuple(hole_mask.shape)}")
    if not torch.all((hole_mask == 0) | (hole_mask == 1)):
        raise ValueError("hole mask must be binary")
    use_fm = model.cfg.use_smpm and model.cfg.use_feature_skip
    if use_fm and f_m is None:
        raise ShapeMismatch("this network fuses SMPM features; F_m is required")
    return model.bipm(img, hole_mask, f_m if use_fm else None)


def erase_forward(model: StrokeEraseNet, img: torch.Tensor) -> EraseOutput:
    return model(img)


def count_parameters(model: nn.Module, trainable_only: bool = True) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)


# ==================== Checkpoints ====================

def save_checkpoint(path, model: StrokeEraseNet, epoch: int = 0,
                    optimizer: Optional[torch.optim.Optimizer] = None, extra: Optional[Dict] = None) -> Path:
    """
    One file: {'header': JSON string, 'state_dict': named tensors, 'optimizer': ...}.
    The header carries {config, epoch, parameter_count, bn_frozen}.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        'config': model.cfg.to_dict(),
        'epoch': epoch,
        'parameter_count': count_parameters(model, trainable_only=False),
        'bn_frozen': model.bn_frozen,
    }
    if extra:
        header.update(extra)
    payload = {'header': json.dumps(header, sort_keys=True), 'state_dict': model.state_dict()}
    if optimizer is not None:
        payload['optimizer'] = optimizer.state_dict()
    torch.save(payload, path)
    return path


def load_checkpoint(path, device: str = config.DEVICE) -> Tuple[StrokeEraseNet, Dict, Optional[Dict]]:
    """Rebuild the network from a checkpoint; returns (model, header, optimizer state)"""
    payload = torch.load(path, map_location=device, weights_only=True)
    header = json.loads(payload['header'])
    model = StrokeEraseNet(NetworkConfig.from_dict(header['config']))
    model.load_state_dict(payload['state_dict'])
    model.to(device)
    return model, header, payload.get('optimizer')


# ==================== Inference wrapper ====================

class ModelEraser:
    """Callable used by the rectifiers: network-size image -> (erased image, hole mask)"""

    def __init__(self, model: StrokeEraseNet, device: str = config.DEVICE):
        self.model = model.to(device).eval()
        self.device = device

    @property
    def input_size(self) -> Tuple[int, int]:
        return self.model.cfg.input_height, self.model.cfg.input_width

    def __call__(self, img: ImageBuffer) -> Tuple[ImageBuffer, StrokeMask]:
        with torch.no_grad():
            x = to_tensor(img)[None].to(self.device)
            result = self.model(x)
        hole = result.hole_mask[0, 0].float().cpu().numpy()
        return from_tensor(result.composite[0]), StrokeMask(hole)
