import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvocfsl.cst import (EMPTY_CLASS_BRIGHTNESS, ClusterSeparationTuner, CstConfig, brightness,
                         brightness_all, cst_step)
from cvocfsl.errors import InputError
from cvocfsl.rng import substream


def test_empty_class_is_dim(rng):
    P = rng.standard_normal((3, 2))
    S = rng.standard_normal((2, 2))
    assert brightness(2, P, S, np.array([0, 1]), CstConfig()) == EMPTY_CLASS_BRIGHTNESS == -1e6


def test_far_apart_unweighted_brightness_is_zero():
    P = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    B = brightness_all(P, P, np.arange(3), CstConfig(w_intra=0, w_inter=0))
    assert np.all(B == 0)


def test_margin_penalty_half_epsilon():
    P = np.array([[0.0, 0.0], [1.0, 0.0]])
    B = brightness_all(P, P, np.arange(2), CstConfig(w_intra=0, w_inter=0))
    np.testing.assert_allclose(B, [-1.0, -1.0])


def test_brightness_formula(rng):
    P = rng.standard_normal((3, 2)) * 0.8
    S = rng.standard_normal((6, 2))
    y = np.array([0, 0, 1, 1, 2, 2])
    cfg = CstConfig(w_intra=0.3, w_inter=0.7)
    for c in range(3):
        mine = S[y == c]
        intra = np.mean([np.sum((s - P[c]) ** 2) for s in mine])
        inter = np.mean([np.sum((s - P[o]) ** 2) for s in mine for o in range(3) if o != c])
        pen = sum((2.0 - np.linalg.norm(P[c] - P[o])) ** 2 for o in range(3)
                  if o != c and np.linalg.norm(P[c] - P[o]) < 2.0)
        assert brightness(c, P, S, y, cfg) == pytest.approx(-0.3 * intra + 0.7 * inter - pen, rel=1e-12)


def test_disabled_tuner_is_identity(rng):
    P = rng.standard_normal((5, 4))
    S = rng.standard_normal((5, 4))
    out = cst_step(P, S, np.arange(5), CstConfig.disabled(iterations=3), substream(0, "cst"))
    assert np.array_equal(out, P)
    assert out is not P


def test_single_pair_hand_evaluation():
    P = np.array([[0.0, 0.0], [3.0, 4.0]])
    S = np.array([[0.0, 0.0], [3.0, 4.0], [3.0, 4.0]])
    y = np.array([0, 1, 1])
    # class 0 support sits far from prototype 0 after we shift it, so it is dimmer
    S[0] = [1.0, 0.0]
    cfg = CstConfig(alpha0=0.0, w_intra=1.0, w_inter=0.0)
    B = brightness_all(P, S, y, cfg)
    assert B[0] < B[1]
    out = cst_step(P, S, y, cfg, substream(0, "cst"))
    step = 0.05 * np.exp(-0.005 * 25.0) * (P[1] - P[0])
    np.testing.assert_allclose(out[0], P[0] + step, rtol=1e-15)
    assert np.array_equal(out[1], P[1])


def test_equal_brightness_moves_nothing():
    P = np.array([[4.0, 0.0], [-4.0, 0.0], [0.0, 4.0], [0.0, -4.0]])
    out = cst_step(P, P, np.arange(4), CstConfig(alpha0=0.0, w_intra=0, w_inter=0), substream(1, "cst"))
    assert np.array_equal(out, P)


@pytest.mark.parametrize("T", range(11))
def test_alpha_anneals_geometrically(T):
    tuner = ClusterSeparationTuner(CstConfig(iterations=T), substream(0, "cst"))
    P = np.eye(3)
    tuner.step(P, P, np.arange(3))
    assert tuner.steps_taken == T
    assert tuner.alpha == 0.02 * 0.995 ** T


def test_same_seed_same_output(rng):
    P = rng.standard_normal((5, 3))
    S = rng.standard_normal((10, 3))
    y = np.repeat(np.arange(5), 2)
    a = cst_step(P, S, y, CstConfig(iterations=2), substream(9, "cst"))
    b = cst_step(P, S, y, CstConfig(iterations=2), substream(9, "cst"))
    assert np.array_equal(a, b)


def test_config_rejects_negative():
    with pytest.raises(InputError):
        CstConfig(beta0=-1)
    with pytest.raises(InputError):
        CstConfig(eps_margin=0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), shift=st.floats(-50, 50))
def test_translation_commutes_without_noise(seed, shift):
    r = np.random.default_rng(seed)
    P = r.standard_normal((4, 3)) * 1.5
    S = r.standard_normal((8, 3))
    y = np.repeat(np.arange(4), 2)
    cfg = CstConfig(alpha0=0.0, iterations=2)
    a = cst_step(P, S, y, cfg, substream(0, "cst")) + shift
    b = cst_step(P + shift, S + shift, y, cfg, substream(0, "cst"))
    np.testing.assert_allclose(a, b, atol=1e-9 * (1 + abs(shift)))
