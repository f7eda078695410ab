import numpy as np
import pytest

from ecn.invariance import source_ce
from ecn.model import (
    PARAM_NAMES,
    backward,
    backward_batch,
    forward,
    forward_batch,
    init_params,
    init_sgd,
    sgd_step,
    zero_grads,
)
from ecn.numerics import Prng, finite_diff_grad


def rel_err(a, b):
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def pack(net):
    return np.concatenate([getattr(net, n).ravel() for n in PARAM_NAMES])


def unpack_into(net, theta):
    i = 0
    for n in PARAM_NAMES:
        p = getattr(net, n)
        p[...] = theta[i : i + p.size].reshape(p.shape)
        i += p.size


# ------------------------------------------------------------------ init_params

def test_init_deterministic():
    a = init_params(5, 7, 4, 3, seed=42)
    b = init_params(5, 7, 4, 3, seed=42)
    for n in PARAM_NAMES:
        assert np.array_equal(getattr(a, n), getattr(b, n))
    c = init_params(5, 7, 4, 3, seed=43)
    assert not np.array_equal(a.W1, c.W1)


def test_init_biases_zero():
    net = init_params(6, 8, 4, 5, seed=1)
    assert np.array_equal(net.b1, np.zeros(8))
    assert np.array_equal(net.b2, np.zeros(4))
    assert np.array_equal(net.bc, np.zeros(5))


def test_init_weight_scale():
    # fan_in 64, >= 1e4 draws on W1
    net = init_params(64, 160, 4, 3, seed=7)
    target = np.sqrt(2.0 / 64.0)
    assert abs(net.W1.std() - target) / target < 0.2


def test_init_rejects_bad_dims():
    with pytest.raises(ValueError):
        init_params(0, 4, 4, 2, seed=0)
    with pytest.raises(ValueError):
        init_params(4, 4, 4, 2, seed=0, dropout_rate=1.0)


# ---------------------------------------------------------------------- forward

def test_forward_train_eval_identical_without_dropout():
    net = init_params(5, 7, 4, 3, seed=2)
    x = Prng(3).normal(5)
    t_eval = forward(net, x, train_mode=False)
    t_train = forward(net, x, train_mode=True, rng=Prng(0))
    assert np.array_equal(t_eval.e, t_train.e)
    assert np.array_equal(t_eval.logits, t_train.logits)


def test_forward_zero_input_zero_biases():
    net = init_params(5, 7, 4, 3, seed=2)
    t = forward(net, np.zeros(5))
    assert np.array_equal(t.e, np.zeros(4))
    assert np.array_equal(t.f, np.zeros(4))
    assert np.array_equal(t.logits, np.zeros(3))


def test_forward_normalized_feature():
    net = init_params(5, 7, 4, 3, seed=4)
    rng = Prng(5)
    for _ in range(10):
        t = forward(net, rng.normal(5))
        assert abs(np.linalg.norm(t.f) - 1.0) < 1e-9


def test_forward_pure():
    net = init_params(5, 7, 4, 3, seed=6)
    x = Prng(7).normal(5)
    a = forward(net, x)
    b = forward(net, x)
    assert np.array_equal(a.f, b.f) and np.array_equal(a.logits, b.logits)


def test_forward_dropout_scales_and_masks():
    net = init_params(5, 40, 4, 3, seed=8, dropout_rate=0.5)
    x = Prng(9).normal(5)
    t = forward(net, x, train_mode=True, rng=Prng(10))
    assert t.mask is not None
    assert set(np.unique(t.mask)).issubset({0.0, 2.0})
    t_eval = forward(net, x, train_mode=False)
    assert t_eval.mask is None


def test_forward_batch_matches_single():
    net = init_params(5, 7, 4, 3, seed=11)
    X = Prng(12).normal((6, 5))
    tb = forward_batch(net, X)
    for i in range(6):
        ti = forward(net, X[i])
        assert np.allclose(tb.f[i], ti.f, atol=1e-12)
        assert np.allclose(tb.logits[i], ti.logits, atol=1e-12)


def test_forward_shape_validation():
    net = init_params(5, 7, 4, 3, seed=13)
    with pytest.raises(ValueError):
        forward(net, np.zeros(6))


# --------------------------------------------------------------------- backward

def test_backward_zero_upstream_zero_grads():
    net = init_params(5, 7, 4, 3, seed=14)
    t = forward(net, Prng(15).normal(5))
    g = backward(net, t, grad_f=np.zeros(4), grad_logits=np.zeros(3))
    for n in PARAM_NAMES:
        assert np.array_equal(getattr(g, n), np.zeros_like(getattr(net, n)))


def test_backward_deterministic_given_trace():
    net = init_params(5, 9, 4, 3, seed=16, dropout_rate=0.3)
    t = forward(net, Prng(17).normal(5), train_mode=True, rng=Prng(18))
    gf, gl = Prng(19).normal(4), Prng(20).normal(3)
    a = backward(net, t, grad_f=gf, grad_logits=gl)
    b = backward(net, t, grad_f=gf, grad_logits=gl)
    for n in PARAM_NAMES:
        assert np.array_equal(getattr(a, n), getattr(b, n))


def test_backward_full_network_finite_diff():
    # composite scalar loss: source CE + linear probe on the normalized feature
    net = init_params(5, 7, 4, 3, seed=21)
    x = Prng(22).normal(5)
    probe = Prng(23).normal(4)
    label = 1

    def loss_at(theta):
        unpack_into(net, theta)
        t = forward(net, x)
        ce, _ = source_ce(t.logits, label)
        return ce + float(np.dot(probe, t.f))

    theta0 = pack(net)
    t = forward(net, x)
    _, grad_logits = source_ce(t.logits, label)
    grads = backward(net, t, grad_f=probe, grad_logits=grad_logits)
    analytic = np.concatenate([getattr(grads, n).ravel() for n in PARAM_NAMES])
    numeric = finite_diff_grad(loss_at, theta0, 1e-5)
    unpack_into(net, theta0)
    assert rel_err(analytic, numeric) < 1e-5


def test_backward_chained_grad_orthogonal_to_feature():
    net = init_params(5, 7, 4, 3, seed=24)
    rng = Prng(25)
    for _ in range(5):
        t = forward(net, rng.normal(5))
        grads_e_path = backward(net, t, grad_f=rng.normal(4))
        # reconstruct grad_e by one more forward-mode check: project through W2
        # orthogonality is checked at the embedding: vjp output . f == 0
        norms = np.linalg.norm(t.e)
        grad_e = (grads_e_path.b2)  # b2 grad equals grad_e for a single sample
        assert abs(np.dot(grad_e, t.f)) < 1e-10
        assert norms > 0


def test_backward_batch_matches_single():
    net = init_params(5, 7, 4, 3, seed=26)
    rng = Prng(27)
    X = rng.normal((4, 5))
    GF = rng.normal((4, 4))
    GL = rng.normal((4, 3))
    tb = forward_batch(net, X)
    gb = backward_batch(net, tb, grad_f=GF, grad_logits=GL)
    total = zero_grads(net)
    for i in range(4):
        ti = forward(net, X[i])
        total.add_(backward(net, ti, grad_f=GF[i], grad_logits=GL[i]))
    for n in PARAM_NAMES:
        assert np.allclose(getattr(gb, n), getattr(total, n), atol=1e-12)


# -------------------------------------------------------------------------- sgd

def test_sgd_single_step_no_momentum():
    net = init_params(2, 2, 2, 2, seed=28)
    net.b1[...] = 0.0
    state = init_sgd(net, lr=0.1, momentum=0.0)
    grads = zero_grads(net)
    grads.b1[0] = 1.0
    sgd_step(net, grads, state)
    assert net.b1[0] == pytest.approx(-0.1, abs=1e-15)


def test_sgd_two_steps_momentum():
    net = init_params(2, 2, 2, 2, seed=29)
    net.b1[...] = 0.0
    state = init_sgd(net, lr=1.0, momentum=0.9)
    grads = zero_grads(net)
    grads.b1[0] = 1.0
    sgd_step(net, grads, state)
    assert net.b1[0] == pytest.approx(-1.0, abs=1e-15)
    assert state.velocity.b1[0] == pytest.approx(1.0, abs=1e-15)
    sgd_step(net, grads, state)
    assert state.velocity.b1[0] == pytest.approx(1.9, abs=1e-15)
    assert net.b1[0] == pytest.approx(-2.9, abs=1e-15)


def test_sgd_zero_grads_no_change():
    net = init_params(3, 4, 3, 2, seed=30)
    before = {n: getattr(net, n).copy() for n in PARAM_NAMES}
    sgd_step(net, zero_grads(net), init_sgd(net, lr=0.5))
    for n in PARAM_NAMES:
        assert np.array_equal(getattr(net, n), before[n])


# ------------------------------------------------- euclid vs cosine ranking

def test_euclidean_ranking_equals_cosine_ranking():
    rng = Prng(31)
    feats = rng.normal((30, 6))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    feats[7] = feats[3]  # exact duplicate to exercise the tie path
    q = feats[0]
    d2 = ((feats - q) ** 2).sum(axis=1)
    cos = feats @ q
    by_dist = np.argsort(d2, kind="stable")
    by_cos = np.argsort(-cos, kind="stable")
    assert np.array_equal(by_dist, by_cos)
