"""
End-to-end tests for the synth / train / erase / eval commands
"""
import json

import numpy as np
import pytest
import torch
from PIL import Image

from cli import main
from imagecore import ImageBuffer, load_image, load_mask, save_image
from net import NetworkConfig, StrokeEraseNet, save_checkpoint


@pytest.fixture
def synth_config(tmp_path):
    rng = np.random.default_rng(0)
    background = rng.integers(60, 200, size=(80, 300, 3)).astype(np.uint8)
    Image.fromarray(background).save(tmp_path / 'bg.png')
    path = tmp_path / 'synth.json'
    path.write_text(json.dumps({
        'backgrounds': ['bg.png'], 'crop_height': 64, 'crop_width': 256, 'seed': 1,
        'shadow_enabled': False, 'border3d_enabled': False, 'blur_sigma_range': [0.0, 1.0],
    }))
    return path


@pytest.fixture
def weights(tmp_path):
    torch.manual_seed(0)
    return save_checkpoint(tmp_path / 'model.pt', StrokeEraseNet(NetworkConfig.miniature()))


@pytest.fixture
def photo(tmp_path):
    path = tmp_path / 'photo.png'
    save_image(ImageBuffer(np.random.default_rng(3).random((40, 120, 3))), path)
    return path


def write_regions(tmp_path, regions):
    path = tmp_path / 'regions.json'
    path.write_text(json.dumps({'regions': regions}))
    return path


# ==================== synth ====================

def test_synth_zero_samples(tmp_path, synth_config, capsys):
    assert main(['synth', '--config', str(synth_config), '--count', '0', '--out', str(tmp_path / 'out')]) == 0
    manifest = json.loads((tmp_path / 'out' / 'manifest.json').read_text())
    assert manifest['count'] == 0 and manifest['samples'] == []
    assert capsys.readouterr().out.strip() == str(tmp_path / 'out' / 'manifest.json')


def test_synth_writes_samples(tmp_path, synth_config):
    out = tmp_path / 'out'
    assert main(['synth', '--config', str(synth_config), '--count', '5', '--out', str(out)]) == 0
    manifest = json.loads((out / 'manifest.json').read_text())
    assert manifest['count'] == 5
    for entry in manifest['samples']:
        for name in (entry['input'], 'gt.png', 'mask.png', 'meta.json'):
            assert (out / entry['dir'] / name).exists()


def test_synth_bad_config(tmp_path):
    (tmp_path / 'bad.json').write_text('{"crop_height": "tall"')
    assert main(['synth', '--config', str(tmp_path / 'bad.json'), '--count', '1',
                 '--out', str(tmp_path / 'out')]) == 1


# ==================== train ====================

def test_train_missing_manifest(tmp_path):
    (tmp_path / 'train.json').write_text(json.dumps({'manifest': 'missing/manifest.json'}))
    assert main(['train', '--config', str(tmp_path / 'train.json')]) == 1


def test_train_zero_epochs(tmp_path, synth_config):
    assert main(['synth', '--config', str(synth_config), '--count', '2', '--out', str(tmp_path / 'data')]) == 0
    (tmp_path / 'train.json').write_text(json.dumps({
        'manifest': 'data/manifest.json', 'checkpoint_dir': 'ckpt', 'epochs': 0,
        'vgg_pretrained': False, 'network': NetworkConfig.miniature().to_dict(),
    }))
    assert main(['train', '--config', str(tmp_path / 'train.json')]) == 0
    assert (tmp_path / 'ckpt' / 'epoch_000.pt').exists()


# ==================== erase ====================

def test_erase_without_regions_copies_input(tmp_path, weights, photo):
    out = tmp_path / 'clean.png'
    regions = write_regions(tmp_path, [])
    assert main(['erase', '--input', str(photo), '--regions', str(regions), '--weights', str(weights),
                 '--output', str(out), '--device', 'cpu']) == 0
    assert out.read_bytes() == photo.read_bytes()


def test_erase_changes_only_region_pixels(tmp_path, weights, photo):
    out, mask_out = tmp_path / 'clean.png', tmp_path / 'mask.png'
    regions = write_regions(tmp_path, [{'kind': 'axis_aligned', 'points': [[30, 10], [90, 30]]}])
    assert main(['erase', '--input', str(photo), '--regions', str(regions), '--weights', str(weights),
                 '--output', str(out), '--mask-out', str(mask_out), '--device', 'cpu']) == 0

    before, after = load_image(photo).data, load_image(out).data
    changed = np.any(before != after, axis=2)
    assert not changed[:10].any() and not changed[30:].any()
    assert not changed[:, :30].any() and not changed[:, 90:].any()
    assert load_mask(mask_out).size == (40, 120)


def test_erase_rejects_bad_regions(tmp_path, weights, photo):
    bad = tmp_path / 'regions.json'
    bad.write_text('{"regions": [{"kind": "blob", "points": []}]}')
    assert main(['erase', '--input', str(photo), '--regions', str(bad), '--weights', str(weights),
                 '--output', str(tmp_path / 'out.png'), '--device', 'cpu']) == 1
    bad.write_text('not json')
    assert main(['erase', '--input', str(photo), '--regions', str(bad), '--weights', str(weights),
                 '--output', str(tmp_path / 'out.png'), '--device', 'cpu']) == 1


# ==================== eval ====================

def test_eval_same_directory(tmp_path, photo):
    report_dir = tmp_path / 'report'
    images = tmp_path / 'images'
    save_image(load_image(photo), images / 'a.png')
    assert main(['eval', '--pred', str(images), '--gt', str(images), '--report-dir', str(report_dir)]) == 0
    summary = json.loads((report_dir / 'report.json').read_text())['summary']
    assert summary['count'] == 1 and summary['psnr'] == 99.0 and summary['ssim'] == pytest.approx(1.0)


def test_eval_unmatched_names(tmp_path, photo):
    pred, gt = tmp_path / 'pred', tmp_path / 'gt'
    save_image(load_image(photo), pred / 'a.png')
    save_image(load_image(photo), gt / 'b.png')
    assert main(['eval', '--pred', str(pred), '--gt', str(gt)]) == 1


def test_eval_writes_report_into_pred_dir_by_default(tmp_path, photo):
    pred, gt = tmp_path / 'pred', tmp_path / 'gt'
    save_image(load_image(photo), pred / 'a.png')
    save_image(load_image(photo), gt / 'a.png')
    assert main(['eval', '--pred', str(pred), '--gt', str(gt)]) == 0
    assert {p.name for p in pred.iterdir()} == {'a.png', 'report.json', 'report.csv', 'report.pdf'}
    assert json.loads((pred / 'report.json').read_text())['summary']['count'] == 1

    # report files are not picked up as predictions on a second run
    assert main(['eval', '--pred', str(pred), '--gt', str(gt)]) == 0
    assert json.loads((pred / 'report.json').read_text())['summary']['count'] == 1
