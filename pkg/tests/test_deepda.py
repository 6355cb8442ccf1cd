import json

import numpy as np
import pytest

from cluttertrack.deepda import (
    EncodedScan,
    LstmModel,
    NetConfig,
    NormStats,
    TrainConfig,
    _batch_loss_and_grads,
    _forward_core,
    backward,
    build_input,
    encode_dataset,
    fit_norm_stats,
    forward_scan,
    identity_norm,
    init_model,
    load_model,
    loss,
    output_mask,
    param_shapes,
    rmsprop_step,
    save_model,
    train,
)
from cluttertrack.domain import (
    AssocProbabilities,
    CapacityError,
    ContractViolation,
    ModelFormatError,
    Scan,
    ScenarioConfig,
    Track,
)
from cluttertrack.scenario import TrainingSet, make_training_set, seeded_variants

from conftest import make_track
from oracles import numeric_gradients


def small_cfg(**kw):
    defaults = dict(d=2, m_max=3, hidden=4, seed=0)
    defaults.update(kw)
    return NetConfig(**defaults)


def random_batch(cfg, rng, groups=2, targets=2):
    batch = []
    for _ in range(groups):
        m = int(rng.integers(1, cfg.m_max + 1))
        inputs = rng.normal(size=(targets, cfg.features))
        truth = np.zeros((targets, cfg.m_max + 1))
        for t in range(targets):
            choice = int(rng.integers(0, m + 1))
            truth[t, cfg.m_max if choice == m else choice] = 1.0
        batch.append(EncodedScan(inputs, truth, output_mask(cfg, m)))
    return batch


# ---------------------------------------------------------------------------
# build_input
# ---------------------------------------------------------------------------


def test_build_input_subtraction_order():
    cfg = small_cfg(m_max=2)
    norm = identity_norm(cfg.features)
    scan = Scan(k=0, measurements=np.array([[5.0, 11.0], [6.0, 12.0]]))
    features, mask = build_input(np.array([5.0, 11.0]), scan, cfg, norm)
    assert np.allclose(features, [0.0, 0.0, -1.0, -1.0])
    assert mask.tolist() == [True, True]


def test_build_input_empty_scan_is_all_sentinel():
    cfg = small_cfg(m_max=4)
    features, mask = build_input(
        np.array([1.0, 2.0]), Scan(k=0, measurements=np.zeros((0, 2))), cfg,
        identity_norm(cfg.features),
    )
    assert np.all(features == 1.0)
    assert not mask.any()


def test_build_input_min_max_normalization():
    cfg = small_cfg(m_max=2)
    norm = NormStats(np.full(4, -2.0), np.full(4, 2.0))
    scan = Scan(k=0, measurements=np.array([[5.0, 11.0], [6.0, 12.0]]))
    features, _ = build_input(np.array([5.0, 11.0]), scan, cfg, norm)
    assert np.allclose(features, [0.5, 0.5, 0.25, 0.25])


def test_build_input_capacity_error():
    cfg = small_cfg(m_max=1)
    scan = Scan(k=0, measurements=np.zeros((2, 2)))
    with pytest.raises(CapacityError):
        build_input(np.zeros(2), scan, cfg, identity_norm(cfg.features))


def test_norm_degenerate_feature_maps_to_zero():
    norm = NormStats(np.array([1.0, 0.0]), np.array([1.0, 2.0]))
    out = norm.apply(np.array([5.0, 1.0]))
    assert out[0] == 0.0
    assert out[1] == 0.5


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def zero_model(cfg):
    params = {name: np.zeros(shape) for name, shape in param_shapes(cfg).items()}
    return LstmModel(cfg=cfg, norm=identity_norm(cfg.features), **params)


def test_forward_zero_parameters_uniform_rows():
    cfg = small_cfg(m_max=3, hidden=4)
    model = zero_model(cfg)
    tracks = [make_track(0), make_track(1)]
    scan = Scan(k=0, measurements=np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]))
    probs, (hs, cs) = forward_scan(model, tracks, scan)
    assert probs.rows.shape == (2, 4)
    assert np.allclose(probs.rows, 0.25)
    assert np.allclose(hs, 0.0)
    assert np.allclose(cs, 0.0)


def test_forward_padding_columns_zero():
    cfg = small_cfg(m_max=4, hidden=3, seed=5)
    model = init_model(cfg, identity_norm(cfg.features))
    scan = Scan(k=0, measurements=np.array([[0.5, -0.5]]))
    probs, _ = forward_scan(model, [make_track(0)], scan)
    # trimmed to M + 1 columns; row still sums to 1
    assert probs.rows.shape == (1, 2)
    assert probs.rows.sum() == pytest.approx(1.0, abs=1e-12)
    # untrimmed core output has exact zeros on padding slots
    from cluttertrack.deepda import build_features

    x = build_features(np.zeros((1, 2)), scan.measurements, cfg, model.norm)
    full = _forward_core(model, x[None], output_mask(cfg, 1)[None])
    assert np.all(full.beta[0, 0, 1:4] == 0.0)


def test_forward_scalar_lstm_hand_evaluation():
    # hidden=1, m_max=1: one LSTM cell evaluated by hand.
    cfg = small_cfg(m_max=1, hidden=1)
    w_in = np.array([[0.5, -0.25]])
    b_in = np.array([0.1])
    lstm_wx = np.array([[0.3], [-0.2], [0.7], [0.4]])
    lstm_wh = np.array([[0.11], [0.12], [0.13], [0.14]])
    lstm_b = np.array([0.01, 0.02, 0.03, 0.04])
    w_out = np.array([[1.5], [-0.5]])
    b_out = np.array([0.2, -0.1])
    model = LstmModel(
        cfg=cfg, norm=identity_norm(2), w_in=w_in, b_in=b_in,
        lstm_wx=lstm_wx, lstm_wh=lstm_wh, lstm_b=lstm_b, w_out=w_out, b_out=b_out,
    )
    scan = Scan(k=0, measurements=np.array([[2.0, 1.0]]))
    track = make_track(0, state=(1.0, 0.0, 3.0, 0.0))
    probs, (hs, cs) = forward_scan(model, [track], scan)

    sigmoid = lambda v: 1.0 / (1.0 + np.exp(-v))
    s_feat = np.array([1.0 - 2.0, 3.0 - 1.0])  # prediction minus measurement
    x = w_in @ s_feat + b_in
    gi = sigmoid(lstm_wx[0, 0] * x[0] + lstm_b[0])
    gf = sigmoid(lstm_wx[1, 0] * x[0] + lstm_b[1])
    gg = np.tanh(lstm_wx[2, 0] * x[0] + lstm_b[2])
    go = sigmoid(lstm_wx[3, 0] * x[0] + lstm_b[3])
    c = gf * 0.0 + gi * gg
    h = go * np.tanh(c)
    assert cs[0, 0] == pytest.approx(c, abs=1e-12)
    assert hs[0, 0] == pytest.approx(h, abs=1e-12)
    logits = w_out[:, 0] * h + b_out
    u = sigmoid(logits)
    assert probs.rows[0] == pytest.approx(u / u.sum(), abs=1e-12)


def test_forward_softmax_variant_rows_sum_one():
    cfg = small_cfg(m_max=3, hidden=4, output="softmax", seed=2)
    model = init_model(cfg, identity_norm(cfg.features))
    scan = Scan(k=0, measurements=np.array([[1.0, 0.0], [0.0, 1.0]]))
    probs, _ = forward_scan(model, [make_track(0), make_track(1)], scan)
    assert np.allclose(probs.rows.sum(axis=1), 1.0)
    assert probs.rows.shape == (2, 3)


def test_forward_slot_permutation_equivariance():
    # A slot-symmetric model (identical per-slot weights, identical per-slot
    # norm stats) must permute its beta columns when the slots permute.
    m_max = 3
    cfg = small_cfg(m_max=m_max, hidden=m_max)
    norm = NormStats(np.tile([-4.0, -3.0], m_max), np.tile([4.0, 3.0], m_max))
    w_in = np.zeros((m_max, cfg.features))
    for u in range(m_max):  # unit u watches slot u with shared weights
        w_in[u, 2 * u : 2 * u + 2] = [0.8, -0.6]
    lstm_wx = np.zeros((4 * m_max, m_max))
    lstm_wx[np.arange(4 * m_max), np.tile(np.arange(m_max), 4)] = 0.9
    w_out = np.full((m_max + 1, m_max), 0.2)
    for i in range(m_max):
        w_out[i, i] = 1.4
    model = LstmModel(
        cfg=cfg,
        norm=norm,
        w_in=w_in,
        b_in=np.full(m_max, 0.05),
        lstm_wx=lstm_wx,
        lstm_wh=np.zeros((4 * m_max, m_max)),
        lstm_b=np.tile([0.1], 4 * m_max),
        w_out=w_out,
        b_out=np.concatenate([np.full(m_max, 0.01), [0.3]]),
    )
    zs = np.array([[0.5, 0.2], [-0.7, 0.4], [0.1, -0.9]])
    perm = [2, 0, 1]
    tracks = [make_track(0)]
    p1, _ = forward_scan(model, tracks, Scan(k=0, measurements=zs))
    p2, _ = forward_scan(model, tracks, Scan(k=0, measurements=zs[perm]))
    assert not np.allclose(p1.rows[0, :m_max], p1.rows[0, 0])  # non-degenerate
    assert np.allclose(p1.rows[0, perm + [3]], p2.rows[0], atol=1e-12)


def test_forward_rejects_mismatched_config():
    cfg = small_cfg()
    model = init_model(cfg, identity_norm(cfg.features))
    other = small_cfg(hidden=8)
    with pytest.raises(ContractViolation):
        forward_scan(model, [make_track(0)], Scan(k=0, measurements=np.zeros((1, 2))), other)


def test_forward_requires_tracks():
    cfg = small_cfg()
    model = init_model(cfg, identity_norm(cfg.features))
    with pytest.raises(ContractViolation):
        forward_scan(model, [], Scan(k=0, measurements=np.zeros((1, 2))))


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def test_loss_examples():
    a = AssocProbabilities(np.array([[1.0, 0.0]]))
    b = AssocProbabilities(np.array([[0.0, 1.0]]))
    assert loss(a, a) == 0.0
    assert loss(a, b) == pytest.approx(2.0)


def test_loss_matches_elementwise_recomputation():
    rng = np.random.default_rng(3)
    rows = rng.random((4, 5))
    rows /= rows.sum(axis=1, keepdims=True)
    truth = np.zeros_like(rows)
    truth[np.arange(4), rng.integers(0, 5, size=4)] = 1.0
    got = loss(AssocProbabilities(rows), AssocProbabilities(truth))
    expected = sum(
        (rows[i, j] - truth[i, j]) ** 2 for i in range(4) for j in range(5)
    )
    assert got == pytest.approx(expected, rel=1e-12)


def test_loss_shape_mismatch():
    a = AssocProbabilities(np.array([[1.0, 0.0]]))
    b = AssocProbabilities(np.array([[1.0, 0.0, 0.0]]))
    with pytest.raises(ContractViolation):
        loss(a, b)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def test_backward_zero_at_exact_truth():
    cfg = small_cfg(seed=4)
    model = init_model(cfg, identity_norm(cfg.features))
    rng = np.random.default_rng(0)
    batch = random_batch(cfg, rng)
    # replace truth by the model's own output: loss 0, exactly zero gradients
    stationary = []
    for enc in batch:
        cache = _forward_core(model, enc.inputs[None], enc.mask[None])
        stationary.append(EncodedScan(enc.inputs, cache.beta[0], enc.mask))
    grads = backward(model, stationary)
    for g in grads.values():
        assert np.max(np.abs(g)) < 1e-6


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    for output in ("sigmoid", "softmax"):
        cfg = small_cfg(seed=6, output=output)
        model = init_model(cfg, identity_norm(cfg.features))
        batch = random_batch(cfg, rng)
        loss_fn = lambda: _batch_loss_and_grads(model, batch)[0]
        analytic = backward(model, batch)
        numeric = numeric_gradients(loss_fn, model, step=1e-5)
        for name in analytic:
            a, n = analytic[name], numeric[name]
            rel = np.abs(a - n) / np.maximum.reduce([np.abs(a), np.abs(n), np.full_like(a, 1e-6)])
            assert rel.max() < 1e-4, f"{name}: {rel.max()}"


def test_backward_padded_output_weights_zero_grad():
    cfg = small_cfg(m_max=4, seed=2)
    model = init_model(cfg, identity_norm(cfg.features))
    rng = np.random.default_rng(5)
    inputs = rng.normal(size=(2, cfg.features))
    truth = np.zeros((2, cfg.m_max + 1))
    truth[:, 0] = 1.0
    mask = output_mask(cfg, 1)  # slots 1..3 padded
    grads = backward(model, [EncodedScan(inputs, truth, mask)])
    assert np.all(grads["w_out"][1:4, :] == 0.0)
    assert np.all(grads["b_out"][1:4] == 0.0)


# ---------------------------------------------------------------------------
# rmsprop
# ---------------------------------------------------------------------------


def test_rmsprop_zero_gradient_decays_state():
    cfg = small_cfg(seed=1)
    model = init_model(cfg, identity_norm(cfg.features))
    tc = TrainConfig(lr=0.01, rho=0.9)
    grads = {name: np.zeros(shape) for name, shape in param_shapes(cfg).items()}
    state = {name: np.full(shape, 0.4) for name, shape in param_shapes(cfg).items()}
    out, new_state = rmsprop_step(model, grads, state, tc)
    for name in grads:
        assert np.allclose(getattr(out, name), getattr(model, name))
        assert np.allclose(new_state[name], 0.36)


def test_rmsprop_hand_values():
    cfg = small_cfg(seed=1)
    model = zero_model(cfg)
    tc = TrainConfig(lr=0.01, rho=0.9, eps=1e-8)
    grads = {name: np.ones(shape) for name, shape in param_shapes(cfg).items()}
    out, state = rmsprop_step(model, grads, None, tc)
    # v = 0.1, step = 0.01 / (sqrt(0.1) + 1e-8)
    expected = -0.01 / (np.sqrt(0.1) + 1e-8)
    assert getattr(out, "w_in")[0, 0] == pytest.approx(expected, rel=1e-9)
    assert expected == pytest.approx(-0.0316228, abs=1e-6)
    assert state["w_in"][0, 0] == pytest.approx(0.1)


def test_rmsprop_repeated_gradient_shrinks_steps():
    cfg = small_cfg(seed=1)
    model = zero_model(cfg)
    tc = TrainConfig(lr=0.01)
    grads = {name: np.ones(shape) for name, shape in param_shapes(cfg).items()}
    m1, state = rmsprop_step(model, grads, None, tc)
    step1 = abs(m1.w_in[0, 0] - model.w_in[0, 0])
    m2, _ = rmsprop_step(m1, grads, state, tc)
    step2 = abs(m2.w_in[0, 0] - m1.w_in[0, 0])
    assert step2 < step1


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def one_group_dataset(seed=0):
    cfg = ScenarioConfig(
        num_targets=2,
        initial_states=((6.0, 1.0, 10.0, 0.0), (6.0, 1.0, 18.0, 0.0)),
        p_d=1.0,
        e_lambda=2.0,
        num_scans=2,
        seed=seed,
    )
    return make_training_set([cfg])


def test_train_memorizes_single_group():
    ds = one_group_dataset()
    assert len(ds) == 1
    net = NetConfig(d=2, m_max=ds.m_max, hidden=16, seed=0)
    model, curve = train(ds, net, TrainConfig(lr=0.03, epochs=200, batch=1, seed=0))
    assert curve[-1] < 0.01 * curve[0]


def test_train_deterministic():
    cfg = ScenarioConfig(
        num_targets=2,
        initial_states=((6.0, 1.0, 10.0, 0.0), (6.0, 1.0, 18.0, 0.0)),
        p_d=0.9,
        e_lambda=3.0,
        num_scans=6,
        seed=1,
    )
    ds = make_training_set(seeded_variants(cfg, 4))
    net = NetConfig(d=2, m_max=ds.m_max, hidden=8, seed=3)
    tc = TrainConfig(lr=0.01, epochs=8, batch=4, seed=5)
    m1, c1 = train(ds, net, tc)
    m2, c2 = train(ds, net, tc)
    assert c1 == c2
    for name, arr in m1.params().items():
        assert np.array_equal(arr, getattr(m2, name))


def test_train_curve_length_is_epochs():
    ds = one_group_dataset()
    net = NetConfig(d=2, m_max=ds.m_max, hidden=4, seed=0)
    _, curve = train(ds, net, TrainConfig(epochs=7, batch=1, seed=0))
    assert len(curve) == 7


def test_train_capacity_check():
    ds = one_group_dataset()
    net = NetConfig(d=2, m_max=1, hidden=4, seed=0)
    if ds.m_max > 1:
        with pytest.raises(CapacityError):
            train(ds, net, TrainConfig(epochs=1))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    cfg = small_cfg(seed=11)
    model = init_model(cfg, NormStats(np.full(cfg.features, -2.0), np.full(cfg.features, 2.0)))
    path = tmp_path / "model.json"
    save_model(model, path)
    restored = load_model(path)
    assert restored.cfg == model.cfg
    for name, arr in model.params().items():
        assert np.array_equal(arr, getattr(restored, name))
    scan = Scan(k=0, measurements=np.array([[0.4, -0.4], [1.0, 1.0]]))
    tracks = [make_track(0), make_track(1)]
    a, _ = forward_scan(model, tracks, scan)
    b, _ = forward_scan(restored, tracks, scan)
    assert np.array_equal(a.rows, b.rows)


def test_load_rejects_wrong_version(tmp_path):
    cfg = small_cfg()
    model = init_model(cfg, identity_norm(cfg.features))
    path = tmp_path / "model.json"
    save_model(model, path)
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match="version"):
        load_model(path)


def test_load_rejects_inconsistent_m_max(tmp_path):
    cfg = small_cfg()
    model = init_model(cfg, identity_norm(cfg.features))
    path = tmp_path / "model.json"
    save_model(model, path)
    doc = json.loads(path.read_text())
    doc["net_config"]["m_max"] = 9
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_load_rejects_truncated_file(tmp_path):
    cfg = small_cfg()
    model = init_model(cfg, identity_norm(cfg.features))
    path = tmp_path / "model.json"
    save_model(model, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_load_missing_file():
    with pytest.raises(ModelFormatError):
        load_model("/nonexistent/model.json")
