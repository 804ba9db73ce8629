"""Loss terms, the combined objective and the Dice metric."""

import math

import numpy as np
import pytest

from sliceseg.errors import ContractError, ShapeError
from sliceseg.gradcheck import max_rel_error
from sliceseg.losses import (
    LossWeights,
    bce_loss,
    combined_loss,
    consistency_loss,
    dice_loss,
    dice_score,
)
from sliceseg.tensor import Tensor


def test_dice_loss_perfect_match():
    # 16 ones of 16 pixels: 1 - 33/33 = 0
    ones = Tensor(np.ones((4, 4)))
    assert dice_loss(ones, Tensor(np.ones((4, 4)))).item() == pytest.approx(0.0, abs=1e-15)


def test_dice_loss_disjoint_halves_hand_value():
    # p = left half, y = right half on 16 pixels: 1 - (0 + 1)/(8 + 8 + 1)
    p = np.zeros((4, 4))
    p[:, :2] = 1.0
    y = np.zeros((4, 4))
    y[:, 2:] = 1.0
    out = dice_loss(Tensor(p), Tensor(y)).item()
    assert out == pytest.approx(1.0 - 1.0 / 17.0, abs=1e-12)
    assert out == pytest.approx(0.941176, abs=1e-6)


def test_dice_loss_empty_masks_smoothing_convention():
    z = Tensor(np.zeros((4, 4)))
    assert dice_loss(z, Tensor(np.zeros((4, 4)))).item() == 0.0


def test_dice_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        dice_loss(Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 3))))


def test_bce_uniform_uncertainty():
    p = Tensor(np.full((4, 4), 0.5))
    y = Tensor((np.arange(16).reshape(4, 4) % 2).astype(float))
    assert bce_loss(p, y).item() == pytest.approx(math.log(2.0), abs=1e-12)


def test_bce_near_zero_floor_on_perfect_prediction():
    y = (np.arange(16).reshape(4, 4) % 2).astype(float)
    assert bce_loss(Tensor(y), Tensor(y)).item() <= 1e-6


def test_bce_single_pixel_derived():
    assert bce_loss(Tensor([[0.9]]), Tensor([[1.0]])).item() == pytest.approx(
        -math.log(0.9), abs=1e-12
    )


def test_consistency_identical_predictions_is_exactly_zero():
    p = Tensor(np.random.default_rng(0).uniform(0, 1, (4, 4)))
    e = Tensor(np.ones(3))
    out = consistency_loss([p, Tensor(p.data.copy())], [e, e])
    assert out.item() == 0.0


def test_consistency_single_slice_has_no_pairs():
    assert consistency_loss([Tensor(np.ones((2, 2)))], [Tensor(np.ones(3))]).item() == 0.0


def test_consistency_hand_value():
    # sim = 0.9 > tau, p1 all ones, p2 all zeros -> 0.9 * 1
    e1 = Tensor([1.0, 0.0])
    e2 = Tensor([0.9, math.sqrt(1 - 0.81)])
    out = consistency_loss(
        [Tensor(np.ones((3, 3))), Tensor(np.zeros((3, 3)))], [e1, e2]
    )
    assert out.item() == pytest.approx(0.9, abs=1e-12)


def test_consistency_below_threshold_pairs_drop_out():
    e1 = Tensor([1.0, 0.0])
    e2 = Tensor([0.0, 1.0])  # sim 0 < 0.7
    out = consistency_loss([Tensor(np.ones((2, 2))), Tensor(np.zeros((2, 2)))], [e1, e2])
    assert out.item() == 0.0


def test_consistency_length_mismatch():
    with pytest.raises(ContractError):
        consistency_loss([Tensor(np.ones((2, 2)))], [])


def test_consistency_invariant_to_slice_reordering():
    rng = np.random.default_rng(5)
    preds = [Tensor(rng.uniform(0, 1, (3, 3))) for _ in range(4)]
    embs = [Tensor(rng.standard_normal(4) + 2.0) for _ in range(4)]
    base = consistency_loss(preds, embs).item()
    perm = rng.permutation(4)
    shuffled = consistency_loss([preds[i] for i in perm], [embs[i] for i in perm]).item()
    assert shuffled == pytest.approx(base, abs=1e-12)


def test_combined_matches_component_sum():
    rng = np.random.default_rng(3)
    n = 3
    preds = [Tensor(rng.uniform(0.01, 0.99, (4, 4))) for _ in range(n)]
    targets = [Tensor((rng.random((4, 4)) < 0.5).astype(float)) for _ in range(n)]
    embs = [Tensor(rng.standard_normal(5) + 1.0) for _ in range(n)]
    w = LossWeights()
    total = combined_loss(preds, targets, embs, w).item()
    per_slice = np.mean(
        [
            w.w_dice * dice_loss(p, y, w.smooth).item() + w.w_bce * bce_loss(p, y).item()
            for p, y in zip(preds, targets)
        ]
    )
    cons = consistency_loss(preds, embs, w.similarity_threshold).item()
    assert abs(total - (per_slice + w.w_consistency * cons)) <= 1e-12


def test_combined_zero_consistency_weight_reduces_to_slice_mean():
    rng = np.random.default_rng(4)
    preds = [Tensor(rng.uniform(0.01, 0.99, (2, 2))) for _ in range(2)]
    targets = [Tensor(np.ones((2, 2))), Tensor(np.zeros((2, 2)))]
    embs = [Tensor(np.ones(3)), Tensor(np.ones(3))]
    w = LossWeights(w_consistency=0.0)
    total = combined_loss(preds, targets, embs, w).item()
    expected = np.mean(
        [
            w.w_dice * dice_loss(p, y).item() + w.w_bce * bce_loss(p, y).item()
            for p, y in zip(preds, targets)
        ]
    )
    assert total == expected


def test_combined_near_zero_for_perfect_identical_predictions():
    y = (np.arange(16).reshape(4, 4) % 3 == 0).astype(float)
    preds = [Tensor(y.copy()), Tensor(y.copy())]
    targets = [Tensor(y.copy()), Tensor(y.copy())]
    embs = [Tensor(np.ones(3)), Tensor(np.ones(3))]
    assert combined_loss(preds, targets, embs).item() <= 1e-5


def test_default_weights_are_paper_coefficients():
    w = LossWeights()
    assert (w.w_dice, w.w_bce, w.w_consistency) == (1.0, 0.5, 0.2)


@pytest.mark.parametrize("seed", range(5))
def test_loss_ranges_and_gradients(seed):
    rng = np.random.default_rng(seed)
    p = Tensor(rng.uniform(0.05, 0.95, (4, 4)), requires_grad=True)
    y = Tensor((rng.random((4, 4)) < 0.5).astype(float))
    dl = dice_loss(p, y)
    assert 0.0 <= dl.item() < 1.0
    assert bce_loss(p, y).item() >= 0.0
    dl.backward()
    assert max_rel_error(lambda: dice_loss(p, y), p) <= 1e-3
    p.zero_grad()
    bce_loss(p, y).backward()
    assert max_rel_error(lambda: bce_loss(p, y), p) <= 1e-3
    p.zero_grad()
    other = Tensor(rng.uniform(0.05, 0.95, (4, 4)))
    embs = [Tensor(np.ones(3)), Tensor(np.ones(3))]
    consistency_loss([p, other], embs).backward()
    assert max_rel_error(lambda: consistency_loss([p, other], embs), p) <= 1e-3


def test_dice_score_identical_masks():
    m = (np.arange(16).reshape(4, 4) % 2).astype(np.uint8)
    assert dice_score(m, m) == 1.0


def test_dice_score_disjoint_masks():
    a = np.zeros((4, 4), dtype=np.uint8)
    b = np.zeros((4, 4), dtype=np.uint8)
    a[0], b[1] = 1, 1
    assert dice_score(a, b) == 0.0


def test_dice_score_hand_count():
    # |A| = |B| = 8, |A & B| = 4 -> 0.5
    a = np.zeros((4, 4), dtype=np.uint8)
    b = np.zeros((4, 4), dtype=np.uint8)
    a[:2] = 1
    b[1:3] = 1
    assert dice_score(a, b) == 0.5


def test_dice_score_both_empty_is_one():
    z = np.zeros((4, 4), dtype=np.uint8)
    assert dice_score(z, z) == 1.0


def test_dice_score_symmetric_and_bounded():
    rng = np.random.default_rng(9)
    for _ in range(20):
        a = (rng.random((5, 5)) < 0.4).astype(np.uint8)
        b = (rng.random((5, 5)) < 0.4).astype(np.uint8)
        s = dice_score(a, b)
        assert 0.0 <= s <= 1.0
        assert s == dice_score(b, a)


def test_dice_score_rejects_non_binary():
    with pytest.raises(ContractError):
        dice_score(np.full((2, 2), 0.5), np.zeros((2, 2)))
