import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedsim.dataset import SiteDataset
from fedsim.errors import ConformanceError, ConfigError
from fedsim.model import (
    SGD,
    AdamW,
    ParameterSet,
    RoundContext,
    TrainSpec,
    cosine_lr,
    flatten,
    init_params,
    load_checkpoint,
    local_train,
    predict,
    proximal_objective,
    save_checkpoint,
    unflatten,
    weighted_ce_loss,
)

from oracles import central_differences


def random_instance(kind, rng, n=6, d=4, hidden=5):
    params = init_params(kind, d, 2, int(rng.integers(1 << 30)), hidden)
    params = params.map(lambda t: t + rng.normal(scale=0.5, size=t.shape))
    x = rng.normal(size=(n, d))
    y = rng.integers(0, 2, size=n)
    w = rng.uniform(0.5, 2.0, size=2)
    return params, (x, y), w


def test_shapes():
    p = init_params("logreg", 3, 2, 0)
    assert p.names == ("W", "b") and p.shapes == ((3, 2), (2,))
    m = init_params("mlp", 4, 2, 0, hidden_width=16)
    assert dict(zip(m.names, m.shapes)) == {"W1": (4, 16), "b1": (16,), "W2": (16, 2), "b2": (2,)}
    assert np.all(m["b1"] == 0) and np.all(np.abs(m["W1"]) <= 0.5)


def test_init_is_deterministic():
    assert init_params("mlp", 4, 2, 9).equal(init_params("mlp", 4, 2, 9))
    assert not init_params("mlp", 4, 2, 9).equal(init_params("mlp", 4, 2, 10))


def test_flatten_round_trip():
    p = init_params("mlp", 3, 2, 1, 4)
    v = flatten(p)
    assert v.size == p.size == sum(t.size for t in p.tensors())
    assert unflatten(v, p).equal(p)
    with pytest.raises(ConformanceError):
        unflatten(v[:-1], p)


def test_zero_params_predict_uniform():
    p = init_params("logreg", 3, 2, 0).map(np.zeros_like)
    probs = predict(p, np.ones((4, 3))).scores
    assert np.allclose(probs, 0.5)


@given(st.integers(0, 2**32))
def test_softmax_normalised(seed):
    rng = np.random.default_rng(seed)
    params, (x, _), _ = random_instance("mlp", rng)
    scores = predict(params, x * 10).scores
    assert np.all(scores >= 0) and np.allclose(scores.sum(axis=1), 1.0, atol=1e-9)


def test_loss_hand_value():
    # logits chosen so p_true = 0.5 and 0.25 for the two samples
    params = ParameterSet([("W", np.zeros((1, 2))), ("b", np.zeros(2))])
    x = np.array([[0.0], [1.0]])
    params["W"][0] = [0.0, math.log(3.0)]  # sample 2: p0 = 1/(1+3)
    loss, _ = weighted_ce_loss(params, (x, np.array([0, 0])), [1.0, 1.0])
    assert loss == pytest.approx(-(math.log(0.5) + math.log(0.25)) / 2, rel=1e-12)
    assert loss == pytest.approx(1.039721, abs=1e-6)


def test_confident_sample_has_zero_loss_and_gradient():
    params = ParameterSet([("W", np.zeros((1, 2))), ("b", np.array([800.0, 0.0]))])
    loss, grads = weighted_ce_loss(params, (np.zeros((1, 1)), np.array([0])), [1.0, 1.0])
    assert loss == 0.0
    assert np.all(flatten(grads) == 0.0)


def test_probability_floor_keeps_loss_finite():
    params = ParameterSet([("W", np.zeros((1, 2))), ("b", np.array([0.0, 1000.0]))])
    loss, _ = weighted_ce_loss(params, (np.zeros((1, 1)), np.array([0])), [1.0, 1.0])
    assert loss == pytest.approx(-math.log(1e-12))


@pytest.mark.parametrize("kind", ["logreg", "mlp"])
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(1)
    for _ in range(20):
        params, batch, w = random_instance(kind, rng)
        _, grads = weighted_ce_loss(params, batch, w)
        fd = central_differences(lambda v: weighted_ce_loss(unflatten(v, params), batch, w)[0], flatten(params))
        assert np.allclose(flatten(grads), fd, rtol=1e-4, atol=1e-8)


def test_proximal_reductions():
    rng = np.random.default_rng(2)
    params, batch, w = random_instance("logreg", rng)
    base = weighted_ce_loss(params, batch, w)
    zero_mu = proximal_objective(params, params.map(np.zeros_like), batch, w, 0.0)
    assert zero_mu[0] == base[0] and flatten(zero_mu[1]).tolist() == flatten(base[1]).tolist()
    at_anchor = proximal_objective(params, params, batch, w, 5.0)
    assert at_anchor[0] == base[0] and np.array_equal(flatten(at_anchor[1]), flatten(base[1]))


def test_sgd_step_is_textbook():
    p = [np.array([1.0, -2.0])]
    SGD(0.1).step(p, [np.array([0.5, 1.0])])
    assert p[0].tolist() == [1.0 - 0.05, -2.0 - 0.1]


def test_adamw_first_step_on_quadratic():
    # first Adam step moves every coordinate by lr * sign(g) (up to eps)
    p = [np.array([3.0, -1.0])]
    g = [2 * p[0].copy()]
    AdamW(0.01, weight_decay=0.0).step(p, g)
    assert np.allclose(p[0], [3.0 - 0.01, -1.0 + 0.01], atol=1e-9)


def test_adamw_decay_is_decoupled():
    p = [np.array([2.0])]
    AdamW(0.1, weight_decay=0.5).step(p, [np.array([0.0])])
    assert p[0][0] == pytest.approx(2.0 * (1 - 0.05))


def test_cosine_schedule():
    assert cosine_lr(1.0, 0, 10) == 1.0
    assert cosine_lr(1.0, 5, 10) == pytest.approx(0.5)
    assert cosine_lr(1.0, 10, 10) == pytest.approx(0.0, abs=1e-15)


def _data(n=20, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return SiteDataset(np.array(["A"] * n), rng.integers(0, 2, n), rng.normal(size=(n, d)), 2)


def test_zero_gradient_leaves_params_unchanged():
    data = _data()
    data = SiteDataset(data.site_ids, np.zeros(20, dtype=np.int64), data.features, 2)
    # a saturated bias gives zero gradient for every sample
    params = ParameterSet([("W", np.zeros((3, 2))), ("b", np.array([800.0, 0.0]))])
    spec = TrainSpec(optimizer="sgd", weight_decay=0.0, learning_rate=0.1)
    out, _ = local_train(params, data, spec, RoundContext())
    assert out.equal(params)


def test_local_train_is_deterministic_and_copies():
    data = _data()
    params = init_params("mlp", 3, 2, 0, 4)
    snapshot = params.copy()
    spec = TrainSpec(model="mlp", hidden_width=4, learning_rate=0.01, batch_size=4, local_epochs=2)
    a, la = local_train(params, data, spec, RoundContext(1, 5, 2, 7))
    b, lb = local_train(params, data, spec, RoundContext(1, 5, 2, 7))
    assert a.equal(b) and la == lb
    assert params.equal(snapshot)
    assert not a.equal(params)


def test_train_spec_validation_names_key():
    with pytest.raises(ConfigError, match="learning_rate"):
        TrainSpec(learning_rate=-1.0).validate()
    with pytest.raises(ConfigError, match="batch_size"):
        TrainSpec(batch_size=0).validate()


def test_checkpoint_round_trip(tmp_path):
    p = init_params("mlp", 5, 2, 3, 7)
    save_checkpoint(p, tmp_path / "m.bin", TrainSpec(model="mlp", hidden_width=7))
    assert load_checkpoint(tmp_path / "m.bin").equal(p)
    assert (tmp_path / "m.bin").read_bytes()[:4] == b"FSPM"
    assert '"hidden_width": 7' in (tmp_path / "m.json").read_text()


def test_conformance():
    a = init_params("logreg", 3, 2, 0)
    with pytest.raises(ConformanceError):
        a.check_conformant(init_params("logreg", 4, 2, 0))
