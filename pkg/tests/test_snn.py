"""Unit tests for LIF dynamics, tape BPTT, and the smooth twin network."""

import numpy as np
import pytest

from spikedep import snn

CFG = snn.LifConfig()


def fd_param_worst_rel(model, x, y, t_steps, h=1e-5):
    """Worst relative error between backward grads and central differences
    of the smooth-twin loss over every parameter."""
    _, gs, _ = snn.loss_and_grad(model, x, y, t_steps, smooth=True)
    theta = model.flat_params()
    flat = gs.flat()
    worst = 0.0
    for j in range(theta.size):
        tp = theta.copy()
        tp[j] += h
        model.load_flat(tp)
        lp = snn.loss(snn.forward(model, x, t_steps, smooth=True).logits_per_step, y)
        tm = theta.copy()
        tm[j] -= h
        model.load_flat(tm)
        lm = snn.loss(snn.forward(model, x, t_steps, smooth=True).logits_per_step, y)
        fd = (lp - lm) / (2.0 * h)
        denom = max(abs(fd), abs(flat[j]), 1e-8)
        worst = max(worst, abs(fd - flat[j]) / denom)
    model.load_flat(theta)
    return worst


def test_lif_step_hand_values():
    v, s = snn.lif_step(np.array([0.0]), np.array([2.0]), CFG)
    assert s[0] == 1.0 and v[0] == 0.0  # v_pre = 2/1.1 = 1.8182 >= 1, reset
    v, s = snn.lif_step(np.array([0.0]), np.array([0.0]), CFG)
    assert s[0] == 0.0 and v[0] == 0.0
    v, s = snn.lif_step(np.array([0.0]), np.array([1.0]), CFG)
    assert s[0] == 0.0
    assert abs(v[0] - 1.0 / 1.1) < 1e-15  # 0.9091, below threshold


def test_lif_step_shape_guard():
    with pytest.raises(ValueError):
        snn.lif_step(np.zeros(2), np.zeros(3), CFG)


def test_lif_config_validation():
    with pytest.raises(ValueError):
        snn.LifConfig(tau=1.0)
    with pytest.raises(ValueError):
        snn.LifConfig(v_threshold=0.0)
    with pytest.raises(ValueError):
        snn.LifConfig(surrogate_alpha=0.0)


def test_surrogate_grad_values():
    g = snn.surrogate_grad(np.array([1.0]), CFG)
    assert abs(g[0] - 1.0) < 1e-15  # peak alpha/2 = 1 at threshold
    g = snn.surrogate_grad(np.array([2.0]), CFG)
    assert abs(g[0] - 1.0 / (1.0 + np.pi ** 2)) < 1e-15
    far = snn.surrogate_grad(np.array([1e8]), CFG)
    assert far[0] < 1e-15
    # symmetry about threshold
    a = snn.surrogate_grad(np.array([1.3]), CFG)
    b = snn.surrogate_grad(np.array([0.7]), CFG)
    assert abs(a[0] - b[0]) < 1e-15


def test_smooth_spike_is_surrogate_primitive():
    rng = np.random.default_rng(0)
    u = rng.uniform(-3, 3, 50)
    h = 1e-6
    fd = (snn.smooth_spike(u + h, CFG) - snn.smooth_spike(u - h, CFG)) / (2 * h)
    assert np.allclose(fd, snn.surrogate_grad(u, CFG), atol=1e-9)


def test_loss_hand_values():
    assert abs(snn.loss([np.zeros((1, 2))], np.array([0])) - np.log(2)) < 1e-12
    assert (
        abs(snn.loss([np.zeros((1, 2))] * 4, np.array([1])) - 4 * np.log(2)) < 1e-12
    )
    # confident correct logits drive the loss to ~0
    z = np.array([[50.0, 0.0]])
    assert snn.loss([z], np.array([0])) < 1e-20


def test_loss_rejects_bad_labels():
    with pytest.raises(ValueError):
        snn.loss([np.zeros((2, 3))], np.array([0, 3]))
    with pytest.raises(ValueError):
        snn.loss([np.zeros((2, 3))], np.array([0]))


def test_forward_zero_network_zero_logits():
    model = snn.build_mlp([4, 6, 3], CFG, seed=0)
    model.load_flat(np.zeros(model.num_params))
    r = snn.forward(model, np.ones((2, 4)), 4)
    for z in r.logits_per_step:
        assert (z == 0.0).all()


def test_forward_logits_evolve_across_steps():
    model = snn.build_mlp([6, 8, 4], CFG, seed=5)
    x = np.random.default_rng(5).uniform(0, 1, (3, 6))
    r = snn.forward(model, x, 4)
    assert len(r.logits_per_step) == 4
    assert not np.allclose(r.logits_per_step[0], r.logits_per_step[3])


def test_forward_shape_mismatch_names_layer():
    model = snn.build_mlp([4, 6, 3], CFG, seed=0)
    with pytest.raises(snn.ShapeMismatch):
        snn.forward(model, np.ones((2, 5)), 1)


def test_spike_binarity_and_reset():
    model = snn.build_mlp([6, 16, 4], CFG, seed=11)
    x = np.random.default_rng(1).uniform(0, 2, (8, 6))
    r = snn.forward(model, x, 5)
    fired_any = False
    for t, step in enumerate(r.tape.caches):
        for i, c in enumerate(step):
            if isinstance(c, snn.LifState):
                assert set(np.unique(c.s)).issubset({0.0, 1.0})
                assert (c.v[c.s == 1.0] >= CFG.v_threshold).all()
                fired_any = fired_any or c.s.any()
    assert fired_any  # the check above must not pass vacuously
    # stored carried state equals v_reset exactly where the spike fired
    single = snn.forward(model, x, 1)
    for i, layer in enumerate(model.layers):
        if isinstance(layer, snn.LifActivation):
            st = single.tape.caches[0][i]
            assert (single.final_state[i][st.s == 1.0] == CFG.v_reset).all()


def test_twin_gradcheck_small_nets():
    rng = np.random.default_rng(2)
    for seed in range(4):
        for t_steps in (1, 3):
            model = snn.build_mlp([4, 5, 3], CFG, seed=seed)
            x = rng.uniform(0, 1, (3, 4))
            y = rng.integers(0, 3, 3)
            worst = fd_param_worst_rel(model, x, y, t_steps)
            assert worst < 1e-4, (seed, t_steps, worst)


def test_twin_input_gradient_matches_fd():
    model = snn.build_mlp([4, 5, 3], CFG, seed=3)
    rng = np.random.default_rng(9)
    x = rng.uniform(0, 1, (2, 4))
    y = np.array([0, 2])
    _, gs, _ = snn.loss_and_grad(model, x, y, 3, smooth=True)
    h = 1e-6
    for b in range(2):
        for j in range(4):
            xp = x.copy()
            xp[b, j] += h
            xm = x.copy()
            xm[b, j] -= h
            lp = snn.loss(snn.forward(model, xp, 3, smooth=True).logits_per_step, y)
            lm = snn.loss(snn.forward(model, xm, 3, smooth=True).logits_per_step, y)
            fd = (lp - lm) / (2 * h)
            assert abs(fd - gs.x_grad[b, j]) < 1e-5 * max(1.0, abs(fd))


def test_conv_twin_gradcheck():
    model = snn.build_convnet((1, 5, 5), [(2, 3)], [6], 3, CFG, seed=2)
    x = np.random.default_rng(4).uniform(0, 1, (2, 1, 5, 5))
    y = np.array([0, 2])
    worst = fd_param_worst_rel(model, x, y, 2)
    assert worst < 1e-4, worst


def test_linear_readout_matches_softmax_regression_oracle():
    # no spiking layer anywhere: BPTT must reduce to plain softmax
    # regression gradients with the readout's 1/tau leak factor
    rng = np.random.default_rng(21)
    model = snn.Model([snn.Linear(5, 3, rng), snn.MeanPoolReadout(CFG)], (5,))
    x = rng.uniform(0, 1, (4, 5))
    y = rng.integers(0, 3, 4)
    _, gs, _ = snn.loss_and_grad(model, x, y, 1)
    w, b = model.layers[0].weight, model.layers[0].bias
    z = (x @ w.T + b) / CFG.tau
    p = np.exp(z - z.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    d = p.copy()
    d[np.arange(4), y] -= 1.0
    d /= 4.0
    assert np.allclose(gs.params["0.weight"], (d.T @ x) / CFG.tau, atol=1e-14)
    assert np.allclose(gs.params["0.bias"], d.sum(0) / CFG.tau, atol=1e-14)
    assert np.allclose(gs.x_grad, (d @ w) / CFG.tau, atol=1e-14)


def test_chained_single_step_tapes_reproduce_full_bptt():
    model = snn.build_mlp([6, 8, 4], CFG, seed=11)
    rng = np.random.default_rng(13)
    x = rng.uniform(0, 1, (5, 6))
    y = rng.integers(0, 4, 5)
    t_steps = 4
    full_val, full_gs, _ = snn.loss_and_grad(model, x, y, t_steps)
    passes = []
    state = None
    for _ in range(t_steps):
        r = snn.forward(model, x, 1, initial_state=state)
        passes.append(r)
        state = r.final_state
    chain_val = sum(snn.loss(r.logits_per_step, y) for r in passes)
    assert abs(chain_val - full_val) < 1e-12
    sgrad = None
    x_grad = np.zeros_like(x)
    acc = {k: np.zeros_like(v) for k, v in full_gs.params.items()}
    for r in reversed(passes):
        gs_t = snn.backward(r.tape, y, state_grad=sgrad)
        sgrad = gs_t.initial_state_grad
        x_grad += gs_t.x_grad
        for k in acc:
            acc[k] += gs_t.params[k]
    assert np.allclose(x_grad, full_gs.x_grad, atol=1e-12)
    for k in acc:
        assert np.allclose(acc[k], full_gs.params[k], atol=1e-12)


def test_tape_replay_identical_and_consumed_on_update():
    model = snn.build_mlp([4, 6, 3], CFG, seed=7)
    x = np.random.default_rng(7).uniform(0, 1, (3, 4))
    y = np.array([0, 1, 2])
    r = snn.forward(model, x, 3)
    g1 = snn.backward(r.tape, y)
    g2 = snn.backward(r.tape, y)
    for k in g1.params:
        assert (g1.params[k] == g2.params[k]).all()
    assert (g1.x_grad == g2.x_grad).all()
    model.load_flat(model.flat_params() * 1.01)
    with pytest.raises(snn.TapeConsumed):
        snn.backward(r.tape, y)


def test_determinism_bitwise():
    def run():
        model = snn.build_mlp([6, 8, 4], CFG, seed=19)
        x = np.random.default_rng(19).uniform(0, 1, (4, 6))
        y = np.array([0, 1, 2, 3])
        val, gs, _ = snn.loss_and_grad(model, x, y, 4)
        return val, gs.flat(), gs.x_grad

    v1, f1, x1 = run()
    v2, f2, x2 = run()
    assert v1 == v2
    assert (f1 == f2).all() and (x1 == x2).all()


def test_param_index_stable_and_flat_roundtrip():
    model = snn.build_mlp([4, 6, 3], CFG, seed=0)
    names = [n for n, _ in model.param_index]
    assert names == ["0.weight", "0.bias", "2.weight", "2.bias"]
    theta = model.flat_params()
    model.load_flat(theta)
    assert (model.flat_params() == theta).all()
    with pytest.raises(ValueError):
        model.load_flat(theta[:-1])


def test_readout_must_be_terminal():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        snn.Model([snn.MeanPoolReadout(CFG), snn.Linear(3, 2, rng)], (3,))
    with pytest.raises(ValueError):
        snn.Model([snn.Linear(3, 2, rng)], (3,))
