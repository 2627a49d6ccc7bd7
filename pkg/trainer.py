"""
Training loop: synthetic dataset loader, Adam with per-epoch exponential
decay, BIPM encoder batch-norm freezing, checkpoints and a JSON-lines log
"""
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset, RandomSampler

import config
from errors import ConfigError, FileNotFound, NoBnLayers, NonFiniteLoss
from geom import resize_pad_array
from imagecore import load_image, load_mask
from losses import LossWeights, VggFeatureExtractor, total_loss
from metrics import psnr_tensor
from net import NetworkConfig, StrokeEraseNet, count_parameters, load_checkpoint, save_checkpoint


@dataclass
class TrainConfig:
    manifest: str = ''
    checkpoint_dir: str = config.CHECKPOINT_DIR
    epochs: int = 1
    batch_size: int = 8
    lr_initial: float = 2e-4
    lr_decay_per_epoch: float = 0.9
    betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    bn_freeze_after_epochs: int = 10
    seed: int = 0
    num_workers: int = config.NUM_WORKERS
    device: str = config.DEVICE
    resume: bool = False
    val_count: int = 0
    vgg_pretrained: bool = True
    network: Dict = field(default_factory=dict)
    loss_weights: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr_initial < 0 or not 0 < self.lr_decay_per_epoch <= 1:
            raise ConfigError("lr_initial must be >= 0 and lr_decay_per_epoch in (0, 1]")

    @classmethod
    def from_dict(cls, data: Dict, base_dir: Optional[Path] = None) -> 'TrainConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown train config keys: {sorted(unknown)}")
        data = dict(data)
        if base_dir is not None:
            for key in ('manifest', 'checkpoint_dir'):
                if data.get(key) and not Path(data[key]).is_absolute():
                    data[key] = str(base_dir / data[key])
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> 'TrainConfig':
        path = Path(path)
        try:
            with open(path, 'r') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read train config {path}: {e}") from e
        return cls.from_dict(data, base_dir=path.parent)

    def network_config(self) -> NetworkConfig:
        return NetworkConfig.from_dict(self.network)

    def weights(self) -> LossWeights:
        return LossWeights.from_dict(self.loss_weights)


# ==================== Data ====================

class SynthDataset(Dataset):
    """Samples listed in a write_dataset manifest, resized and padded to the network size"""

    def __init__(self, manifest_path, height: int = config.NETWORK_HEIGHT,
                 width: int = config.NETWORK_WIDTH, limit: Optional[int] = None):
        manifest_path = Path(manifest_path)
        if not manifest_path.exists():
            raise FileNotFound(f"No dataset manifest at {manifest_path}")
        try:
            with open(manifest_path, 'r') as f:
                manifest = json.load(f)
            entries = manifest['samples']
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ConfigError(f"Invalid dataset manifest {manifest_path}: {e}") from e
        self.root = manifest_path.parent
        self.entries: List[Dict] = entries[:limit] if limit is not None else entries
        self.height = height
        self.width = width

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> Dict[str, torch.Tensor]:
        entry = self.entries[index]
        sample_dir = self.root / entry['dir']
        image = load_image(sample_dir / entry.get('input', 'input.jpg'))
        ground_truth = load_image(sample_dir / 'gt.png')
        mask = load_mask(sample_dir / 'mask.png')

        image_arr, _ = resize_pad_array(image.data, self.height, self.width)
        gt_arr, _ = resize_pad_array(ground_truth.data, self.height, self.width)
        # padding counts as valid background
        mask_arr, _ = resize_pad_array(mask.data, self.height, self.width, fill=1.0)
        mask_arr = (mask_arr >= config.MASK_THRESHOLD).astype(np.float32)
        return {
            'input': torch.from_numpy(np.ascontiguousarray(image_arr.transpose(2, 0, 1))).float().clamp(0, 1),
            'gt': torch.from_numpy(np.ascontiguousarray(gt_arr.transpose(2, 0, 1))).float().clamp(0, 1),
            'mask': torch.from_numpy(mask_arr)[None],
        }


# ==================== Schedule / freezing ====================

def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr_initial * cfg.lr_decay_per_epoch ** epoch


def freeze_bn(model: StrokeEraseNet) -> int:
    """
    Put every BIPM encoder batch-norm layer in inference mode and stop its
    affine parameters from training. Returns the number of frozen scalars.
    """
    layers = model.bipm.encoder_batchnorms()
    if not layers:
        raise NoBnLayers("BIPM encoder has no batch-norm layers to freeze")
    frozen = 0
    for bn in layers:
        bn.eval()
        for p in bn.parameters():
            if p.requires_grad:
                p.requires_grad_(False)
                frozen += p.numel()
    model.bn_frozen = True
    return frozen


def build_optimizer(model: StrokeEraseNet, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr_initial, betas=cfg.betas,
                            weight_decay=cfg.weight_decay)


def set_lr(optimizer: torch.optim.Optimizer, lr: float):
    for group in optimizer.param_groups:
        group['lr'] = lr


# ==================== Steps ====================

def compute_losses(model: StrokeEraseNet, batch: Dict[str, torch.Tensor], weights: LossWeights,
                   extractor) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    result = model(batch['input'])
    return total_loss(result.mask_text, result.output, 1.0 - batch['mask'], batch['gt'],
                      weights, extractor, model.cfg.mask_threshold)


def train_step(model: StrokeEraseNet, optimizer: torch.optim.Optimizer, batch: Dict[str, torch.Tensor],
               weights: LossWeights, extractor) -> Dict[str, float]:
    """One optimizer step; returns {'total': ..., term: ...} as floats"""
    for key in ('input', 'gt', 'mask'):
        bad = int((~torch.isfinite(batch[key])).sum())
        if bad:
            raise NonFiniteLoss({f"{key}_nonfinite_values": bad})
    model.train()
    optimizer.zero_grad(set_to_none=True)
    total, terms = compute_losses(model, batch, weights, extractor)
    breakdown = {'total': float(total.detach())}
    breakdown.update({name: float(value.detach()) for name, value in terms.items()})
    if not all(math.isfinite(v) for v in breakdown.values()):
        raise NonFiniteLoss(breakdown)
    total.backward()
    optimizer.step()
    return breakdown


def _to_device(batch: Dict[str, torch.Tensor], device: str) -> Dict[str, torch.Tensor]:
    return {k: v.to(device) for k, v in batch.items()}


def evaluate_psnr(model: StrokeEraseNet, dataset: Dataset, device: str, batch_size: int = 8) -> float:
    """Mean PSNR of the composed output against ground truth"""
    model.eval()
    scores = []
    with torch.no_grad():
        for batch in DataLoader(dataset, batch_size=batch_size, shuffle=False):
            batch = _to_device(batch, device)
            composite = model(batch['input']).composite
            scores.extend(psnr_tensor(composite, batch['gt']).tolist())
    return float(np.mean(scores)) if scores else float('nan')


# ==================== Fit ====================

def latest_checkpoint(checkpoint_dir) -> Optional[Path]:
    checkpoints = sorted(Path(checkpoint_dir).glob('epoch_*.pt'))
    return checkpoints[-1] if checkpoints else None


def _log(log_file, record: Dict):
    log_file.write(json.dumps(record, sort_keys=True) + '\n')
    log_file.flush()


def fit(cfg: TrainConfig, extractor=None) -> Path:
    """
    Train for cfg.epochs and return the last checkpoint path. Checkpoints are
    epoch_NNN.pt where NNN counts completed epochs (epoch_000.pt is the
    initial model). `extractor` overrides the VGG-19 feature extractor.
    """
    torch.manual_seed(cfg.seed)
    checkpoint_dir = Path(cfg.checkpoint_dir)
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    device = cfg.device
    weights = cfg.weights()
    net_cfg = cfg.network_config()

    dataset = SynthDataset(cfg.manifest, net_cfg.input_height, net_cfg.input_width)
    val_set = SynthDataset(cfg.manifest, net_cfg.input_height, net_cfg.input_width,
                           limit=cfg.val_count) if cfg.val_count > 0 else None
    if extractor is None:
        extractor = VggFeatureExtractor(pretrained=cfg.vgg_pretrained)
    extractor = extractor.to(device)

    start_epoch = 0
    previous = latest_checkpoint(checkpoint_dir) if cfg.resume else None
    if previous is not None:
        model, header, optimizer_state = load_checkpoint(previous, device)
        start_epoch = header['epoch']
        if header.get('bn_frozen'):
            freeze_bn(model)
        optimizer = build_optimizer(model, cfg)
        if optimizer_state is not None:
            optimizer.load_state_dict(optimizer_state)
        last = previous
        print(f"🔄 Resuming from {previous} (epoch {start_epoch})", file=sys.stderr)
    else:
        model = StrokeEraseNet(net_cfg).to(device)
        optimizer = build_optimizer(model, cfg)
        last = save_checkpoint(checkpoint_dir / 'epoch_000.pt', model, 0, optimizer)

    print(f"🧪 Training {count_parameters(model):,} parameters on {len(dataset)} samples", file=sys.stderr)
    # step numbers continue across resumes
    step = start_epoch * math.ceil(len(dataset) / cfg.batch_size)
    log_mode = 'a' if previous is not None else 'w'
    with open(checkpoint_dir / config.TRAIN_LOG_NAME, log_mode) as log_file:
        for epoch in range(start_epoch, cfg.epochs):
            if epoch >= cfg.bn_freeze_after_epochs and not model.bn_frozen:
                scalars = freeze_bn(model)
                print(f"🧊 Froze BIPM encoder batch norm ({scalars} parameters)", file=sys.stderr)
            lr = lr_at_epoch(cfg, epoch)
            set_lr(optimizer, lr)

            generator = torch.Generator()
            generator.manual_seed(cfg.seed * 100003 + epoch)
            loader = DataLoader(dataset, batch_size=cfg.batch_size,
                                sampler=RandomSampler(dataset, generator=generator),
                                num_workers=cfg.num_workers)
            epoch_losses = []
            for batch in loader:
                breakdown = train_step(model, optimizer, _to_device(batch, device), weights, extractor)
                step += 1
                epoch_losses.append(breakdown['total'])
                _log(log_file, dict(breakdown, step=step, epoch=epoch, lr=lr))

            summary = f"✅ Epoch {epoch + 1}/{cfg.epochs}: mean loss {np.mean(epoch_losses):.4f}" \
                if epoch_losses else f"✅ Epoch {epoch + 1}/{cfg.epochs}: no samples"
            if val_set is not None:
                val_psnr = evaluate_psnr(model, val_set, device, cfg.batch_size)
                summary += f", val PSNR {val_psnr:.2f} dB"
                _log(log_file, {'epoch': epoch, 'val_psnr': val_psnr})
            print(summary, file=sys.stderr)

            last = save_checkpoint(checkpoint_dir / f"epoch_{epoch + 1:03d}.pt", model, epoch + 1, optimizer)
            print(f"💾 Saved {last}", file=sys.stderr)
    return last
