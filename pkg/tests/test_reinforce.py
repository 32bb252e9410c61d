import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minball_mesh.config import ReinforceConfig
from minball_mesh.geometry import PointSet
from minball_mesh.reinforce import (
    EMPTY_LOSS,
    ExistenceProbs,
    HardLoss,
    SampleBatch,
    ball_contents,
    batch_faces,
    batch_loss,
    estimate_gradient,
    exact_expected_loss_grad,
    log_prob,
    reinforce_optimize,
    sample_batches,
    step_rng,
)
from minball_mesh.shapes import square_outline, square_with_midpoints
from minball_mesh.tessellation import extract_mesh, generate_query_faces, min_ball_faces


def test_probs_are_clamped():
    p = ExistenceProbs([0.0, 0.5, 1.0])
    assert 0 < p.phi[0] < 1e-3 and 1 - 1e-3 < p.phi[2] < 1


def test_log_prob_of_all_masks_sums_to_one():
    phi = np.array([0.2, 0.7, 0.5])
    masks = ((np.arange(8)[:, None] >> np.arange(3)) & 1).astype(bool)
    assert np.exp(log_prob(phi, masks)).sum() == pytest.approx(1.0)


def test_sampled_mask_frequency_within_binomial_bounds():
    phi = np.array([0.1, 0.5, 0.85])
    n = 100_000
    batch = sample_batches(phi, n, step_rng(3, 0, 0))
    target = np.array([True, False, True])
    hits = (batch.masks == target).all(1).sum()
    p = np.exp(log_prob(phi, target[None])[0])
    assert abs(hits - n * p) <= 3 * np.sqrt(n * p * (1 - p))


def test_step_rng_is_reproducible_and_distinct():
    a = step_rng(1, 0, 5).random(4)
    assert np.array_equal(a, step_rng(1, 0, 5).random(4))
    assert not np.array_equal(a, step_rng(1, 0, 6).random(4))
    assert not np.array_equal(a, step_rng(1, 1, 5).random(4))


def test_sample_batches_rejects_empty():
    with pytest.raises(ValueError):
        sample_batches(np.array([0.5]), 0, step_rng(0, 0, 0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_batch_faces_match_hard_tessellation_of_subset(seed):
    rng = np.random.default_rng(seed)
    pts = PointSet(rng.random((25, 2)), np.ones(25))
    faces = generate_query_faces(pts, knn_k=24)
    balls = ball_contents(pts.positions, faces)
    mask = rng.random(25) < 0.6
    got = faces[batch_faces(mask, faces, balls)]
    keep = np.flatnonzero(mask)
    if len(keep) <= 2:
        return
    sub = pts.positions[keep]
    cand = np.array([[a, b] for a in range(len(keep)) for b in range(a + 1, len(keep))])
    exp = keep[cand[min_ball_faces(sub, cand)]]
    assert set(map(tuple, got.tolist())) == set(map(tuple, exp.tolist()))


def test_collinear_midpoint_blocks_long_edge():
    pts = square_with_midpoints()
    faces = np.array([[0, 1], [0, 4]])
    balls = ball_contents(pts.positions, faces)
    all_on = np.ones(8, bool)
    assert batch_faces(all_on, faces, balls).tolist() == [False, True]
    no_mid = all_on.copy()
    no_mid[4] = False
    assert batch_faces(no_mid, faces, balls).tolist() == [True, False]


def test_hard_loss_is_flat_under_collinear_split():
    pts = square_with_midpoints()
    target = square_outline(400)
    faces = np.array([[0, 1], [0, 4], [1, 4]])
    hard = HardLoss(pts.positions, faces, target)
    whole = hard.recon(np.array([True, False, False]))
    split = hard.recon(np.array([False, True, True]))
    assert split == pytest.approx(whole, rel=0.05)
    assert hard.recon(np.zeros(3, bool)) == EMPTY_LOSS


def test_batch_loss_counts_points():
    pts = square_with_midpoints()
    target = square_outline(100)
    faces = np.array([[0, 1]])
    hard = HardLoss(pts.positions, faces, target)
    m = np.ones(8, bool)
    assert batch_loss(pts, m, faces, target, 0.1, hard) - batch_loss(pts, m[:4].tolist() + [False] * 4, faces,
                                                                      target, 0.1, hard) == pytest.approx(0.4)
    assert batch_loss(pts, np.zeros(8, bool), faces, target, 0.1, hard) == EMPTY_LOSS


def test_score_estimator_is_unbiased_on_enumerable_toy():
    table = np.array([3.0, 1.0, 2.0, 0.5])  # loss by mask code b0 + 2 b1
    phi = np.array([0.3, 0.6])
    _, exact = exact_expected_loss_grad(phi, lambda m: table[int(m[0]) + 2 * int(m[1])])
    b = sample_batches(phi, 100_000, step_rng(0, 0, 0))
    b.losses = table[b.masks[:, 0].astype(int) + 2 * b.masks[:, 1].astype(int)]
    est = estimate_gradient(phi, b, standardize=False)
    assert np.allclose(est, exact, rtol=0.05)


def test_standardisation_needs_two_batches():
    b = SampleBatch(np.ones((1, 2), bool), np.zeros(1), np.ones(1))
    with pytest.raises(ValueError):
        estimate_gradient(np.array([0.5, 0.5]), b)


def test_exact_enumeration_limit():
    with pytest.raises(ValueError):
        exact_expected_loss_grad(np.full(17, 0.5), lambda m: 0.0)


def test_square_midpoints_are_pruned():
    pts = square_with_midpoints()
    target = square_outline(400)
    cfg = ReinforceConfig(n0=2, n1=200, batch=64, eps_card=1e-5, lr_phi=0.01)
    res = reinforce_optimize(pts, target, cfg, seed=0)
    assert set(res.kept.tolist()) == {0, 1, 2, 3}
    assert len(extract_mesh(res.points).faces) == 4


def test_reinforce_requires_learning_rate():
    with pytest.raises(ValueError):
        reinforce_optimize(square_with_midpoints(), square_outline(40), ReinforceConfig(lr_phi=None))
