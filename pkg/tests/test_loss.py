import math

import numpy as np
import pytest

from multiblank.loss import (
    BlankSet,
    InfeasibleLatticeError,
    LossConfig,
    backward,
    forward,
    loss_and_grad,
    occupancy,
    under_normalize,
)
from multiblank.numerics import LOG_ZERO, softmax
from multiblank.oracle import brute_force_loss, path_length_range

from conftest import random_instance

N12 = BlankSet((1, 2))


def uniform(T, U, K):
    return np.zeros((T, U + 1, K))


# ---- BlankSet / LossConfig


def test_blank_set_requires_standard_blank():
    with pytest.raises(ValueError):
        BlankSet((2, 4))


@pytest.mark.parametrize("bad", [(), (1, 1), (2, 1), (0, 1)])
def test_blank_set_rejects_bad_durations(bad):
    with pytest.raises(ValueError):
        BlankSet(bad)


def test_blank_set_parse_sorts():
    assert BlankSet.parse("4, 1,2").durations == (1, 2, 4)


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        LossConfig(-0.1, N12)


# ---- under_normalize


def test_under_normalize_examples():
    z = np.zeros((1, 1, 2))
    np.testing.assert_allclose(under_normalize(z, 0.0), -math.log(2), atol=1e-12)
    np.testing.assert_allclose(under_normalize(z, 0.05), -math.log(2) - 0.05, atol=1e-12)
    assert under_normalize(z, 0.05)[0, 0, 0] == pytest.approx(-0.743147, abs=1e-6)


@pytest.mark.parametrize("sigma", [0.0, 0.05, 0.7])
def test_under_normalize_mass_and_argmax(rng, sigma):
    z = rng.normal(size=(3, 4, 6)) * 3
    arcs = under_normalize(z, sigma)
    np.testing.assert_allclose(np.exp(arcs).sum(-1), math.exp(-sigma), atol=1e-9)
    np.testing.assert_array_equal(arcs.argmax(-1), z.argmax(-1))


def test_under_normalize_rejects_nonfinite():
    z = np.zeros((1, 1, 2))
    z[0, 0, 1] = np.nan
    with pytest.raises(ValueError):
        under_normalize(z, 0.0)


# ---- forward / backward golden values


def test_single_arc_lattice():
    arcs = under_normalize(uniform(1, 0, 2), 0.0)
    alpha, total = forward(arcs, [], BlankSet())
    beta, btotal = backward(arcs, [], BlankSet())
    assert total == pytest.approx(-math.log(2), abs=1e-12)
    assert btotal == pytest.approx(arcs[0, 0, 1], abs=1e-12)
    assert alpha[0, 0] == 0.0 and beta[1, 0] == 0.0


def test_two_frame_one_label_golden():
    # three paths: L b1 b1, b1 L b1, L b2; each arc weighs 1/3
    arcs = under_normalize(uniform(2, 1, 3), 0.0)
    _, total = forward(arcs, [0], N12)
    beta, btotal = backward(arcs, [0], N12)
    assert total == pytest.approx(math.log(5 / 27), abs=1e-12)
    assert total == pytest.approx(-1.686399, abs=1e-6)
    assert btotal == pytest.approx(total, abs=1e-12)


def test_two_frame_one_label_under_normalized():
    arcs = under_normalize(uniform(2, 1, 3), 0.05)
    _, total = forward(arcs, [0], N12)
    expected = math.log(2 / 27 * math.exp(-0.15) + 1 / 9 * math.exp(-0.10))
    assert total == pytest.approx(expected, abs=1e-12)
    assert total == pytest.approx(-1.806100, abs=1e-6)


def test_unreachable_states_hold_log_zero():
    arcs = under_normalize(uniform(3, 0, 3), 0.0)
    alpha, _ = forward(arcs, [], BlankSet((1, 2)))
    beta, _ = backward(arcs, [], BlankSet((1, 2)))
    assert alpha[0, 0] == 0.0
    assert beta[3, 0] == 0.0
    # with U labels but no frames nothing reaches the terminal
    empty = np.zeros((0, 2, 3))
    _, total = forward(empty, [0], BlankSet((1, 2)))
    assert total == LOG_ZERO


@pytest.mark.parametrize("seed", range(20))
def test_forward_backward_agree(seed):
    z, labels, cfg = random_instance(np.random.default_rng(seed), max_T=5, max_U=3)
    arcs = under_normalize(z, cfg.sigma)
    _, a = forward(arcs, labels, cfg.blank_set)
    _, b = backward(arcs, labels, cfg.blank_set)
    assert abs(a - b) <= 1e-9


def test_label_out_of_range():
    with pytest.raises(ValueError):
        forward(np.zeros((2, 2, 3)), [1], N12)  # V = 1


def test_label_count_mismatch():
    with pytest.raises(ValueError):
        forward(np.zeros((2, 3, 3)), [0], N12)


# ---- occupancy


def test_occupancy_single_path():
    arcs = under_normalize(uniform(1, 0, 2), 0.0)
    alpha, total = forward(arcs, [], BlankSet())
    beta, _ = backward(arcs, [], BlankSet())
    gamma = occupancy(alpha, beta, arcs, total, [], BlankSet())
    np.testing.assert_allclose(gamma, [[[0.0, 1.0]]], atol=1e-12)


def test_occupancy_golden():
    arcs = under_normalize(uniform(2, 1, 3), 0.0)
    alpha, total = forward(arcs, [0], N12)
    beta, _ = backward(arcs, [0], N12)
    gamma = occupancy(alpha, beta, arcs, total, [0], N12)
    # path masses 1/5, 1/5, 3/5 for (L b1 b1), (b1 L b1), (L b2)
    expected = np.array([
        [[0.8, 0.2, 0.0], [0.0, 0.2, 0.6]],
        [[0.2, 0.0, 0.0], [0.0, 0.4, 0.0]],
    ])
    np.testing.assert_allclose(gamma, expected, atol=1e-12)


def test_occupancy_shape_mismatch():
    arcs = under_normalize(uniform(2, 1, 3), 0.0)
    alpha, total = forward(arcs, [0], N12)
    with pytest.raises(ValueError):
        occupancy(alpha[:1], alpha, arcs, total, [0], N12)


@pytest.mark.parametrize("seed", range(10))
def test_occupancy_flow_conservation(seed):
    z, labels, cfg = random_instance(np.random.default_rng(100 + seed))
    res = loss_and_grad(z, labels, cfg)
    gamma = res.occupancy
    assert gamma.min() >= 0 and gamma.max() <= 1 + 1e-9
    T, U = z.shape[0], len(labels)
    alpha, beta = res.lattices.alpha, res.lattices.beta
    # posterior mass of each state equals the mass leaving it
    state_mass = np.exp(alpha + beta + res.loss)
    np.testing.assert_allclose(gamma.sum(-1), state_mass[:T], atol=1e-9)
    # every path leaves the start state
    assert gamma[0, 0].sum() == pytest.approx(1.0, abs=1e-9)


# ---- loss_and_grad


def test_single_arc_loss_and_grad():
    res = loss_and_grad(uniform(1, 0, 2), [], LossConfig(0.0, BlankSet()))
    assert res.loss == pytest.approx(math.log(2), abs=1e-12)
    np.testing.assert_allclose(res.grad[0, 0], [0.5, -0.5], atol=1e-12)


def test_golden_loss_matches_oracle():
    cfg = LossConfig(0.0, N12)
    res = loss_and_grad(uniform(2, 1, 3), [0], cfg)
    assert res.loss == pytest.approx(1.686399, abs=1e-6)
    assert res.loss == pytest.approx(brute_force_loss(uniform(2, 1, 3), [0], cfg), abs=1e-12)


def test_infeasible_raises():
    with pytest.raises(InfeasibleLatticeError, match="T=0"):
        loss_and_grad(np.zeros((0, 2, 3)), [0], LossConfig(0.0, N12))


@pytest.mark.parametrize("seed", range(10))
def test_grad_sums_to_zero_at_sigma_zero(seed):
    z, labels, cfg = random_instance(np.random.default_rng(200 + seed), sigmas=(0.0,))
    res = loss_and_grad(z, labels, cfg)
    np.testing.assert_allclose(res.grad.sum(-1), 0.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_sigma_monotone_and_bounded(seed):
    z, labels, cfg = random_instance(np.random.default_rng(300 + seed))
    base = loss_and_grad(z, labels, LossConfig(0.0, cfg.blank_set)).loss
    lo, hi = path_length_range(z.shape[0], len(labels), cfg.blank_set)
    prev = base
    for sigma in (0.05, 0.2, 1.0):
        loss = loss_and_grad(z, labels, LossConfig(sigma, cfg.blank_set)).loss
        assert loss >= prev - 1e-12
        assert sigma * lo - 1e-9 <= loss - base <= sigma * hi + 1e-9
        prev = loss


def test_sigma_has_no_effect_on_standard_transducer(rng):
    # every single-blank path has exactly T + U emissions
    z = rng.normal(size=(4, 3, 4))
    labels = [0, 2]
    a = loss_and_grad(z, labels, LossConfig(0.0, BlankSet())).loss
    b = loss_and_grad(z, labels, LossConfig(0.3, BlankSet())).loss
    assert b - a == pytest.approx(0.3 * (4 + 2), abs=1e-9)


def test_dead_duration_is_neutral(rng):
    T, U, V = 3, 2, 3
    z = rng.normal(size=(T, U + 1, V + 2))
    labels = [1, 0]
    ref = loss_and_grad(z, labels, LossConfig(0.05, BlankSet((1, 2))))
    # duration 5 > T never fits; its column carries no probability mass
    z_dead = np.concatenate([z, np.full((T, U + 1, 1), -1e3)], axis=-1)
    res = loss_and_grad(z_dead, labels, LossConfig(0.05, BlankSet((1, 2, 5))))
    assert res.loss == ref.loss
    np.testing.assert_array_equal(res.grad[..., :-1], ref.grad)
    assert not res.occupancy[..., -1].any()
    np.testing.assert_array_equal(res.grad[..., -1], 0.0)


def test_unusable_duration_gets_only_softmax_gradient(rng):
    T, U, V = 3, 1, 2
    blanks = BlankSet((1, 4))  # 4 > T, so no path uses the second blank
    z = rng.normal(size=(T, U + 1, V + 2))
    res = loss_and_grad(z, [1], LossConfig(0.05, blanks))
    assert not res.occupancy[..., -1].any()
    node_occ = res.occupancy.sum(axis=-1)
    expected = softmax(z)[..., -1] * node_occ
    np.testing.assert_allclose(res.grad[..., -1], expected, atol=1e-12)
    assert np.abs(res.grad[..., -1]).max() > 1e-3
