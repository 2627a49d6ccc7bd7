"""
Tests for the training objectives
"""
import pytest
import torch
import torch.nn as nn

from errors import ConfigError, ShapeMismatch
from losses import (
    LossWeights, VggFeatureExtractor, compose, dice_loss, gram_matrix, perceptual_loss,
    pixel_loss, smpm_loss, style_loss, total_loss, tv_loss,
)


def tiny_extractor() -> VggFeatureExtractor:
    """Two random conv stages standing in for VGG-19"""
    torch.manual_seed(0)
    stages = [
        nn.Sequential(nn.Conv2d(3, 4, 3, padding=1), nn.ReLU()),
        nn.Sequential(nn.Conv2d(4, 4, 3, stride=2, padding=1), nn.ReLU()),
    ]
    return VggFeatureExtractor(pretrained=False, stages=stages, normalize=False)


def as_batch(values) -> torch.Tensor:
    return torch.tensor(values, dtype=torch.float32).view(1, 1, 1, -1)


# ==================== Mask losses ====================

def test_dice_examples():
    gt = as_batch([1, 0, 1, 1])
    assert dice_loss(gt, gt).item() == pytest.approx(0.0, abs=1e-6)
    assert dice_loss(torch.ones(1, 1, 4, 4), torch.zeros(1, 1, 4, 4)).item() == pytest.approx(1.0, abs=1e-6)
    assert dice_loss(as_batch([1, 1, 0, 0]), as_batch([1, 0, 1, 0])).item() == pytest.approx(0.5, abs=1e-6)
    # nothing predicted, nothing there
    assert dice_loss(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 4, 4)).item() == pytest.approx(0.0)


def test_smpm_loss_examples():
    gt = as_batch([1, 0, 1, 0])
    assert smpm_loss(gt, gt).item() == pytest.approx(0.0, abs=1e-6)

    pred, target = as_batch([0.5, 0.5]), as_batch([1, 0])
    assert smpm_loss(pred, target, dice_weight=0.0).item() == pytest.approx(0.5)
    for dice_weight in (1.0, 3.0):
        expected = 0.5 + 0.5 * dice_weight
        assert smpm_loss(pred, target, dice_weight).item() == pytest.approx(expected, abs=1e-5)
    assert smpm_loss(pred, target, use_dice=False).item() == pytest.approx(0.5)
    assert smpm_loss(pred, target, use_l1=False).item() == pytest.approx(0.5, abs=1e-5)

    with pytest.raises(ShapeMismatch):
        smpm_loss(as_batch([1, 0]), as_batch([1, 0, 0]))


def test_pixel_loss_examples():
    out = torch.full((1, 3, 4, 4), 0.7)
    gt = torch.full((1, 3, 4, 4), 0.2)
    assert pixel_loss(gt, gt, torch.zeros(1, 1, 4, 4)).item() == 0.0
    assert pixel_loss(out, gt, torch.zeros(1, 1, 4, 4)).item() == pytest.approx(6 * 0.5)
    assert pixel_loss(out, gt, torch.ones(1, 1, 4, 4)).item() == pytest.approx(0.5)


def test_compose_picks_by_mask():
    out, gt = torch.rand(2, 3, 4, 4), torch.rand(2, 3, 4, 4)
    assert torch.equal(compose(out, gt, torch.ones(2, 1, 4, 4)), gt)
    assert torch.equal(compose(out, gt, torch.zeros(2, 1, 4, 4)), out)


# ==================== Feature losses ====================

def test_gram_matrix():
    feat = torch.tensor([[1.0, 2.0], [3.0, 4.0]]).view(1, 2, 1, 2)
    expected = torch.tensor([[5.0, 11.0], [11.0, 25.0]]) / 4
    torch.testing.assert_close(gram_matrix(feat)[0], expected)
    assert torch.all(gram_matrix(torch.zeros(2, 3, 4, 4)) == 0)

def test_gram_matrix_is_symmetric_positive_semidefinite():
    torch.manual_seed(5)
    for shape in ((2, 6, 5, 7), (1, 16, 3, 3), (3, 4, 1, 1)):
        gram = gram_matrix(torch.randn(*shape).double())
        torch.testing.assert_close(gram, gram.transpose(1, 2))
        assert torch.all(torch.linalg.eigvalsh(gram) >= -1e-10)



def test_feature_losses_vanish_for_identical_images():
    extractor = tiny_extractor()
    img = torch.rand(2, 3, 8, 8)
    assert perceptual_loss(img, img, img, extractor).item() == pytest.approx(0.0, abs=1e-7)
    assert style_loss(img, img, img, extractor).item() == pytest.approx(0.0, abs=1e-7)
    assert perceptual_loss(torch.rand(2, 3, 8, 8), img, img, extractor).item() > 0


def test_extractor_is_frozen():
    extractor = tiny_extractor()
    extractor.train()
    assert not extractor.training
    assert all(not p.requires_grad for p in extractor.parameters())
    feats = extractor(torch.rand(1, 3, 8, 8))
    assert [tuple(f.shape) for f in feats] == [(1, 4, 8, 8), (1, 4, 4, 4)]


# ==================== Total variation ====================

def test_tv_examples():
    row = as_batch([0, 1, 0])
    center = as_batch([0, 1, 0]).bool()
    # the only pair rooted in the hole is (center, right)
    assert tv_loss(row, center, 'sum').item() == pytest.approx(1.0)
    assert tv_loss(row, center, 'mean').item() == pytest.approx(0.5)

    img = torch.rand(1, 3, 5, 5)
    assert tv_loss(img, torch.zeros(1, 1, 5, 5)).item() == 0.0
    assert tv_loss(torch.full((1, 3, 5, 5), 0.4), torch.ones(1, 1, 5, 5)).item() == 0.0


def test_tv_matches_pair_oracle():
    torch.manual_seed(2)
    img = torch.rand(1, 2, 4, 5)
    hole = torch.rand(1, 1, 4, 5) > 0.5
    expected = 0.0
    for c in range(2):
        for i in range(4):
            for j in range(5):
                if not hole[0, 0, i, j]:
                    continue
                if j + 1 < 5:
                    expected += abs(img[0, c, i, j + 1] - img[0, c, i, j]).item()
                if i + 1 < 4:
                    expected += abs(img[0, c, i + 1, j] - img[0, c, i, j]).item()
    assert tv_loss(img, hole, 'sum').item() == pytest.approx(expected, abs=1e-5)
    with pytest.raises(ValueError):
        tv_loss(img, hole, 'max')


# ==================== Total ====================

def test_total_loss_perfect_prediction_is_zero():
    gt_text = torch.zeros(2, 1, 8, 8)
    gt_image = torch.full((2, 3, 8, 8), 0.3)
    total, terms = total_loss(gt_text.clone(), gt_image.clone(), gt_text, gt_image,
                              LossWeights(), tiny_extractor())
    assert total.item() == pytest.approx(0.0, abs=1e-6)
    assert set(terms) == {'smpm', 'pixel', 'perceptual', 'style', 'tv'}


def test_total_loss_with_only_pixel_weight():
    torch.manual_seed(3)
    mask_text, gt_text = torch.rand(2, 1, 8, 8), (torch.rand(2, 1, 8, 8) > 0.7).float()
    out, gt = torch.rand(2, 3, 8, 8), torch.rand(2, 3, 8, 8)
    weights = LossWeights(smpm=0, perceptual=0, style=0, tv=0)
    total, terms = total_loss(mask_text, out, gt_text, gt, weights, tiny_extractor())
    assert total.item() == pytest.approx(terms['pixel'].item())
    assert terms['pixel'].item() == pytest.approx(pixel_loss(out, gt, 1 - mask_text).item())


def test_total_loss_recomposes_from_terms():
    torch.manual_seed(4)
    mask_text, gt_text = torch.rand(2, 1, 8, 8), (torch.rand(2, 1, 8, 8) > 0.7).float()
    out, gt = torch.rand(2, 3, 8, 8), torch.rand(2, 3, 8, 8)
    weights, extractor = LossWeights(), tiny_extractor()
    total, _ = total_loss(mask_text, out, gt_text, gt, weights, extractor, tau=0.5)

    valid = 1 - mask_text
    comp = compose(out, gt, valid)
    expected = (weights.smpm * smpm_loss(mask_text, gt_text, weights.dice)
                + weights.pixel * pixel_loss(out, gt, valid, weights.hole)
                + weights.perceptual * perceptual_loss(out, comp, gt, extractor)
                + weights.style * style_loss(out, comp, gt, extractor)
                + weights.tv * tv_loss(comp, valid < 0.5))
    assert total.item() == pytest.approx(expected.item(), rel=1e-5, abs=1e-6)


def test_total_loss_flows_gradient_into_soft_mask():
    mask_text = torch.rand(1, 1, 8, 8, requires_grad=True)
    out = torch.rand(1, 3, 8, 8, requires_grad=True)
    total, _ = total_loss(mask_text, out, torch.zeros(1, 1, 8, 8), torch.rand(1, 3, 8, 8),
                          LossWeights(), None)
    total.backward()
    assert mask_text.grad.abs().sum() > 0 and out.grad.abs().sum() > 0

def smooth_extractor() -> VggFeatureExtractor:
    """Tanh stages in double precision so finite differences see no kinks"""
    torch.manual_seed(1)
    stages = [
        nn.Sequential(nn.Conv2d(3, 4, 3, padding=1), nn.Tanh()),
        nn.Sequential(nn.Conv2d(4, 4, 3, stride=2, padding=1), nn.Tanh()),
    ]
    return VggFeatureExtractor(pretrained=False, stages=stages, normalize=False).double()


def test_total_loss_gradient_matches_finite_differences():
    generator = torch.Generator().manual_seed(6)
    r = torch.rand(2, 1, 8, 8, generator=generator, dtype=torch.float64)
    # soft mask kept clear of the TV threshold
    mask_text = torch.where(torch.rand(2, 1, 8, 8, generator=generator, dtype=torch.float64) < 0.5,
                            0.05 + 0.35 * r, 0.6 + 0.35 * r).requires_grad_()
    out = torch.rand(2, 3, 8, 8, generator=generator, dtype=torch.float64, requires_grad=True)
    gt_text = (torch.rand(2, 1, 8, 8, generator=generator) > 0.6).double()
    gt = torch.rand(2, 3, 8, 8, generator=generator, dtype=torch.float64)
    extractor = smooth_extractor()

    def loss(mask, image):
        return total_loss(mask, image, gt_text, gt, LossWeights(), extractor, tau=0.5)[0]

    assert torch.autograd.gradcheck(loss, (mask_text, out), eps=1e-6, atol=1e-6, rtol=1e-3)



def test_loss_weights_from_dict():
    assert LossWeights.from_dict({'tv': 0.0}).tv == 0.0
    with pytest.raises(ConfigError):
        LossWeights.from_dict({'gan': 1.0})
