import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedsim.dataset import SiteDataset
from fedsim.errors import ConfigError, ConformanceError
from fedsim.model import (
    ParameterSet,
    RoundContext,
    TrainSpec,
    flatten,
    init_params,
    unflatten,
    weighted_ce_loss,
)
from fedsim.partition import ClientPartition
from fedsim.privacy import ALDPState, PrivacySpec
from fedsim.strategies import (
    MU_SWEEP,
    ClientUpdate,
    StrategyConfig,
    fedavg_aggregate,
    fedprox_local_objective,
    run_client_round,
)

from oracles import central_differences, weighted_mean


def scalar(v):
    return ParameterSet([("w", np.array([float(v)]))])


def test_fedavg_hand_example():
    out = fedavg_aggregate([ClientUpdate(0, scalar(0), 1, 0.0), ClientUpdate(1, scalar(4), 3, 0.0)])
    assert out["w"][0] == 3.0


@given(st.integers(0, 2**32), st.integers(1, 6))
def test_fedavg_matches_flat_oracle(seed, k):
    rng = np.random.default_rng(seed)
    template = init_params("mlp", 3, 2, 0, 4)
    vecs = [rng.normal(scale=rng.uniform(0.1, 100), size=template.size) for _ in range(k)]
    counts = rng.integers(1, 1000, k).tolist()
    ups = [ClientUpdate(i, ParameterSet(list(zip(template.names, _split(v, template)))), n, 0.0)
           for i, (v, n) in enumerate(zip(vecs, counts))]
    got = flatten(fedavg_aggregate(ups))
    assert np.allclose(got, weighted_mean(vecs, counts), rtol=0, atol=1e-12 * max(1, np.abs(vecs).max()))
    stacked = np.stack(vecs)
    assert np.all(got >= stacked.min(axis=0)) and np.all(got <= stacked.max(axis=0))


def _split(v, template):
    out, i = [], 0
    for t in template.tensors():
        out.append(v[i : i + t.size].reshape(t.shape))
        i += t.size
    return out


def test_identical_inputs_come_back_exactly():
    p = init_params("mlp", 5, 2, 1).map(lambda t: t + 0.1)
    out = fedavg_aggregate([ClientUpdate(i, p.copy(), n, 0.0) for i, n in enumerate([3, 7, 11])])
    assert out.equal(p)


def test_fedavg_rejects_mismatched_models():
    with pytest.raises(ConformanceError):
        fedavg_aggregate([ClientUpdate(0, init_params("logreg", 3, 2, 0), 1, 0.0),
                          ClientUpdate(1, init_params("mlp", 3, 2, 0), 1, 0.0)])
    with pytest.raises(ValueError):
        fedavg_aggregate([])
    with pytest.raises(ValueError):
        ClientUpdate(0, scalar(1), 0, 0.0)


@pytest.mark.parametrize("kind", ["logreg", "mlp"])
def test_fedprox_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(4)
    for _ in range(10):
        p = init_params(kind, 3, 2, int(rng.integers(1000)), 4).map(lambda t: t + rng.normal(size=t.shape))
        g = p.map(lambda t: t + rng.normal(scale=0.3, size=t.shape))
        batch = (rng.normal(size=(5, 3)), rng.integers(0, 2, 5))
        w, mu = rng.uniform(0.5, 2, 2), rng.uniform(0, 3)
        _, grads = fedprox_local_objective(p, g, batch, w, mu)
        fd = central_differences(lambda v: fedprox_local_objective(unflatten(v, p), g, batch, w, mu)[0], flatten(p))
        assert np.allclose(flatten(grads), fd, rtol=1e-4, atol=1e-8)


def _client(n=40, d=3, seed=0, k=0):
    rng = np.random.default_rng(seed)
    ds = SiteDataset(np.array(["A"] * n), rng.integers(0, 2, n), rng.normal(size=(n, d)), 2)
    return ClientPartition(k, frozenset({"A"}), ds, ds.subset(np.arange(0)))


def test_zero_lr_returns_global():
    g = init_params("logreg", 3, 2, 0)
    up = run_client_round(g, _client(), StrategyConfig(), TrainSpec(learning_rate=0.0), RoundContext())
    assert up.params.equal(g) and up.n_samples == 40


def test_zero_lr_with_dp_is_pure_noise():
    g = init_params("logreg", 3, 2, 0)
    priv = PrivacySpec(mode="fixed")
    state = ALDPState(priv)
    up = run_client_round(g, _client(), StrategyConfig("local_dp"), TrainSpec(learning_rate=0.0),
                          RoundContext(), privacy=priv, privacy_state=state)
    assert not up.params.equal(g) and state.round == 1
    assert np.std(flatten(up.params - g)) == pytest.approx(state.sigma, rel=0.8)


def test_huge_mu_pins_params_to_global():
    # AdamW steps are about lr in size whatever the gradient, so the pull
    # holds params within a step or so of the global model (default lr)
    g = init_params("logreg", 3, 2, 0)
    spec = TrainSpec(batch_size=4, local_epochs=3)
    up = run_client_round(g, _client(), StrategyConfig("fedprox", mu=1e9), spec, RoundContext(0, 1))
    pinned = np.max(np.abs(flatten(up.params - g)))
    assert pinned < 1e-3
    free = run_client_round(g, _client(), StrategyConfig("fedavg"), spec, RoundContext(0, 1))
    assert np.max(np.abs(flatten(free.params - g))) > 5 * pinned


def test_mu_zero_is_bitwise_fedavg():
    g = init_params("mlp", 3, 2, 0, 4)
    spec = TrainSpec(model="mlp", hidden_width=4, learning_rate=1e-2, batch_size=4, local_epochs=2)
    a = run_client_round(g, _client(), StrategyConfig("fedprox", mu=0.0), spec, RoundContext(0, 3))
    b = run_client_round(g, _client(), StrategyConfig("fedavg"), spec, RoundContext(0, 3))
    assert a.params.equal(b.params) and a.loss == b.loss


def test_proximal_pull_is_monotone_in_mu():
    g = init_params("logreg", 3, 2, 0)
    spec = TrainSpec(optimizer="sgd", weight_decay=0.0, learning_rate=0.05, lr_schedule="constant", batch_size=4)
    dists = []
    for mu in (0.0,) + MU_SWEEP:
        up = run_client_round(g, _client(), StrategyConfig("fedprox", mu=mu), spec, RoundContext())
        dists.append(np.linalg.norm(flatten(up.params - g)))
    assert all(a >= b for a, b in zip(dists, dists[1:]))
    # a single step from the global model sees no proximal gradient at all
    batch = (_client().train.features[:4], _client().train.labels[:4])
    _, base = weighted_ce_loss(g, batch, [1, 1])
    _, prox = fedprox_local_objective(g, g, batch, [1, 1], 5.0)
    assert np.array_equal(flatten(base), flatten(prox))


def test_client_round_is_deterministic():
    g = init_params("logreg", 3, 2, 0)
    args = (g, _client(), StrategyConfig("aldp"), TrainSpec(learning_rate=1e-2), RoundContext(2, 5, 0, 9))
    priv = PrivacySpec(mode="adaptive")
    a = run_client_round(*args, privacy=priv, privacy_state=ALDPState(priv))
    b = run_client_round(*args, privacy=priv, privacy_state=ALDPState(priv))
    assert a.params.equal(b.params)


@pytest.mark.parametrize(
    "cfg, n, match",
    [
        (StrategyConfig("fedprox"), 2, "mu"),
        (StrategyConfig("fedavg", mu=0.1), 2, "mu"),
        (StrategyConfig("secagg"), 2, "at least 3"),
        (StrategyConfig("bogus"), 2, "strategy"),
        (StrategyConfig(client_fraction=0.0), 2, "client_fraction"),
    ],
)
def test_config_validation(cfg, n, match):
    with pytest.raises(ConfigError, match=match):
        cfg.validate(n)


def test_dp_strategy_without_state_is_config_error():
    with pytest.raises(ConfigError):
        run_client_round(init_params("logreg", 3, 2, 0), _client(), StrategyConfig("local_dp"),
                         TrainSpec(), RoundContext())
