"""
Tests for the training loop, batch-norm freezing and checkpoints
"""
import json

import numpy as np
import pytest
import torch
import torch.nn as nn

from errors import ConfigError, FileNotFound, NoBnLayers, NonFiniteLoss
from imagecore import ImageBuffer, StrokeMask, save_image, save_mask
from losses import LossWeights, VggFeatureExtractor
from metrics import psnr_tensor
from net import NetworkConfig, StrokeEraseNet, load_checkpoint
from trainer import (
    SynthDataset, TrainConfig, build_optimizer, fit, freeze_bn, latest_checkpoint, lr_at_epoch,
    train_step,
)


def tiny_extractor() -> VggFeatureExtractor:
    torch.manual_seed(0)
    stages = [nn.Sequential(nn.Conv2d(3, 4, 3, padding=1), nn.ReLU())]
    return VggFeatureExtractor(pretrained=False, stages=stages, normalize=False)


def make_dataset(root, count=4, height=32, width=128):
    """Hand-made samples: a flat square of 'text' over a smooth background"""
    rng = np.random.default_rng(0)
    samples = []
    for i in range(count):
        name = f"sample_{i:08d}"
        ramp = np.linspace(0.2, 0.8, width)[None, :, None] * np.ones((height, 1, 3))
        gt = np.clip(ramp * rng.uniform(0.6, 1.0, 3), 0, 1)
        text = np.zeros((height, width), dtype=bool)
        text[8:24, 20 + 10 * i:60 + 10 * i] = True
        img = gt.copy()
        img[text] = rng.uniform(0, 1, 3)
        save_image(ImageBuffer(img), root / name / 'input.png')
        save_image(ImageBuffer(gt), root / name / 'gt.png')
        save_mask(StrokeMask((~text).astype(np.float32)), root / name / 'mask.png')
        samples.append({'dir': name, 'seed': i, 'input': 'input.png', 'mode': 'direct'})
    manifest = root / 'manifest.json'
    manifest.write_text(json.dumps({'count': count, 'config': {}, 'samples': samples}))
    return manifest


def make_config(tmp_path, **overrides) -> TrainConfig:
    settings = dict(
        manifest=str(make_dataset(tmp_path / 'data')), checkpoint_dir=str(tmp_path / 'ckpt'),
        epochs=2, batch_size=2, lr_initial=1e-3, network=NetworkConfig.miniature().to_dict(),
        vgg_pretrained=False, device='cpu', num_workers=0,
    )
    settings.update(overrides)
    return TrainConfig(**settings)


def read_log(cfg: TrainConfig):
    with open(f"{cfg.checkpoint_dir}/train_log.jsonl") as f:
        return [json.loads(line) for line in f]


def first_batch(cfg: TrainConfig):
    dataset = SynthDataset(cfg.manifest, 16, 80)
    items = [dataset[i] for i in range(2)]
    return {key: torch.stack([item[key] for item in items]) for key in items[0]}


# ==================== Schedule / config ====================

def test_lr_schedule():
    cfg = TrainConfig(lr_initial=2e-4, lr_decay_per_epoch=0.9)
    assert lr_at_epoch(cfg, 0) == pytest.approx(2e-4)
    assert lr_at_epoch(cfg, 1) == pytest.approx(1.8e-4)
    assert lr_at_epoch(cfg, 2) == pytest.approx(1.62e-4)


def test_train_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr_decay_per_epoch=1.5)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({'momentum': 0.9})

    (tmp_path / 'train.json').write_text(json.dumps({'manifest': 'data/manifest.json', 'epochs': 3}))
    cfg = TrainConfig.from_json(tmp_path / 'train.json')
    assert cfg.manifest == str(tmp_path / 'data' / 'manifest.json') and cfg.epochs == 3


# ==================== Dataset ====================

def test_dataset_items(tmp_path):
    dataset = SynthDataset(make_dataset(tmp_path), 16, 80)
    assert len(dataset) == 4
    item = dataset[0]
    assert item['input'].shape == (3, 16, 80) and item['gt'].shape == (3, 16, 80)
    assert item['mask'].shape == (1, 16, 80)
    assert set(item['mask'].unique().tolist()) == {0.0, 1.0}
    # right padding counts as valid background
    assert torch.all(item['mask'][:, :, 64:] == 1)

    with pytest.raises(FileNotFound):
        SynthDataset(tmp_path / 'nope.json')


# ==================== Batch-norm freezing ====================

def test_freeze_bn_counts_and_keeps_statistics(tmp_path):
    cfg = make_config(tmp_path, lr_initial=1e-2)
    torch.manual_seed(0)
    model = StrokeEraseNet(cfg.network_config())
    layers = model.bipm.encoder_batchnorms()
    expected = sum(p.numel() for bn in layers for p in bn.parameters())
    assert freeze_bn(model) == expected
    assert model.bn_frozen

    before = [(bn.running_mean.clone(), bn.running_var.clone(), bn.weight.clone()) for bn in layers]
    optimizer = build_optimizer(model, cfg)
    train_step(model, optimizer, first_batch(cfg), cfg.weights(), tiny_extractor())
    for bn, (mean, var, weight) in zip(layers, before):
        assert not bn.training
        assert torch.equal(bn.running_mean, mean) and torch.equal(bn.running_var, var)
        assert torch.equal(bn.weight, weight)

def test_smpm_keeps_training_after_freeze_bn(tmp_path):
    cfg = make_config(tmp_path, lr_initial=1e-2)
    torch.manual_seed(0)
    model = StrokeEraseNet(cfg.network_config())
    freeze_bn(model)
    before = {name: p.detach().clone() for name, p in model.smpm.named_parameters()}
    optimizer = build_optimizer(model, cfg)
    train_step(model, optimizer, first_batch(cfg), cfg.weights(), tiny_extractor())

    changed = [name for name, p in model.smpm.named_parameters() if not torch.equal(p, before[name])]
    assert 'head.weight' in changed and 'enc0.0.0.weight' in changed
    assert len(changed) > len(before) // 2
    assert all(p.requires_grad for p in model.smpm.parameters())



def test_freeze_bn_without_batchnorm():
    model = StrokeEraseNet(NetworkConfig.miniature(use_batchnorm=False))
    with pytest.raises(NoBnLayers):
        freeze_bn(model)


# ==================== Steps ====================

def test_zero_learning_rate_keeps_parameters(tmp_path):
    cfg = make_config(tmp_path, lr_initial=0.0)
    torch.manual_seed(0)
    model = StrokeEraseNet(cfg.network_config())
    before = {name: p.detach().clone() for name, p in model.named_parameters()}
    breakdown = train_step(model, build_optimizer(model, cfg), first_batch(cfg), cfg.weights(),
                           tiny_extractor())
    assert set(breakdown) == {'total', 'smpm', 'pixel', 'perceptual', 'style', 'tv'}
    for name, p in model.named_parameters():
        assert torch.equal(p, before[name]), name


def test_nan_batch_raises_non_finite_loss(tmp_path):
    cfg = make_config(tmp_path)
    model = StrokeEraseNet(cfg.network_config())
    batch = first_batch(cfg)
    batch['input'][0, 0, 0, 0] = float('nan')
    with pytest.raises(NonFiniteLoss) as info:
        train_step(model, build_optimizer(model, cfg), batch, cfg.weights(), tiny_extractor())
    assert info.value.diagnostics == {'input_nonfinite_values': 1}


# ==================== Fit ====================

def test_fit_logs_every_step_and_checkpoints_every_epoch(tmp_path):
    cfg = make_config(tmp_path, val_count=2)
    last = fit(cfg, extractor=tiny_extractor())
    assert last.name == 'epoch_002.pt'
    assert sorted(p.name for p in last.parent.glob('epoch_*.pt')) == \
        ['epoch_000.pt', 'epoch_001.pt', 'epoch_002.pt']

    records = read_log(cfg)
    steps = [r for r in records if 'step' in r]
    assert [r['step'] for r in steps] == [1, 2, 3, 4]
    assert [r['epoch'] for r in steps] == [0, 0, 1, 1]
    assert steps[2]['lr'] == pytest.approx(1e-3 * 0.9)
    assert all(np.isfinite(r['total']) for r in steps)
    assert len([r for r in records if 'val_psnr' in r]) == 2

    model, header, _ = load_checkpoint(last, 'cpu')
    assert header['epoch'] == 2
    assert model.cfg == cfg.network_config()


def test_fit_zero_epochs_saves_initial_model(tmp_path):
    cfg = make_config(tmp_path, epochs=0)
    last = fit(cfg, extractor=tiny_extractor())
    assert last.name == 'epoch_000.pt'
    assert read_log(cfg) == []


def test_fit_resumes_from_latest_checkpoint(tmp_path):
    cfg = make_config(tmp_path, epochs=1, bn_freeze_after_epochs=1)
    fit(cfg, extractor=tiny_extractor())
    assert latest_checkpoint(cfg.checkpoint_dir).name == 'epoch_001.pt'

    cfg.epochs, cfg.resume = 2, True
    last = fit(cfg, extractor=tiny_extractor())
    assert last.name == 'epoch_002.pt'
    assert [r['epoch'] for r in read_log(cfg)] == [0, 0, 1, 1]
    assert [r['step'] for r in read_log(cfg)] == [1, 2, 3, 4]
    _, header, _ = load_checkpoint(last, 'cpu')
    assert header['bn_frozen'] is True


def test_same_seed_gives_the_same_loss_trace(tmp_path):
    cfg = make_config(tmp_path, seed=3)
    fit(cfg, extractor=tiny_extractor())
    first = read_log(cfg)

    cfg.checkpoint_dir = str(tmp_path / 'again')
    fit(cfg, extractor=tiny_extractor())
    second = read_log(cfg)

    assert [r['step'] for r in second] == [r['step'] for r in first] == [1, 2, 3, 4]
    for a, b in zip(first, second):
        assert b['total'] == pytest.approx(a['total'], rel=1e-6)
        assert b['smpm'] == pytest.approx(a['smpm'], rel=1e-6)


@pytest.mark.slow
def test_overfits_a_fixed_set_of_eight_samples(tmp_path):
    dataset = SynthDataset(make_dataset(tmp_path / 'eight', count=8), 16, 80)
    items = [dataset[i] for i in range(8)]
    batch = {key: torch.stack([item[key] for item in items]) for key in items[0]}
    cfg = TrainConfig(lr_initial=2e-3, lr_decay_per_epoch=1.0, network=NetworkConfig.miniature().to_dict())
    torch.manual_seed(0)
    model = StrokeEraseNet(cfg.network_config())
    optimizer = build_optimizer(model, cfg)
    extractor = tiny_extractor()

    losses = [train_step(model, optimizer, batch, LossWeights(), extractor)['total'] for _ in range(200)]
    assert np.mean(losses[-10:]) <= 0.5 * np.mean(losses[:10])

    model.eval()
    with torch.no_grad():
        composite = model(batch['input']).composite
    assert psnr_tensor(composite, batch['gt']).mean() > psnr_tensor(batch['input'], batch['gt']).mean()
