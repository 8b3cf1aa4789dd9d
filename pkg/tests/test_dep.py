"""Unit tests for the dominant-eigencomponent projection and SGD."""

import dataclasses

import numpy as np
import pytest

from spikedep import dep, linalg, snn

CFG = snn.LifConfig()


def project_arr(g):
    return dep.unmatrixize(dep.dep_project(dep.matrixize(g)))


def test_matrixize_shapes():
    assert dep.matrixize(np.zeros((8, 3, 3))).matrix.shape == (8, 9)
    assert dep.matrixize(np.zeros(5)).matrix.shape == (5, 1)
    g = np.random.default_rng(9).standard_normal((4, 2, 3))
    assert (dep.unmatrixize(dep.matrixize(g)) == g).all()


def test_dep_project_diagonal_example():
    # power iteration stops at rel tol 1e-10, so entrywise agreement is
    # O(sigma1 * 1e-10); the orthogonality/energy invariants are the
    # tighter contracts and are tested separately
    out = project_arr(np.array([[3.0, 0.0], [0.0, 1.0]]))
    assert np.allclose(out, [[0.0, 0.0], [0.0, 1.0]], atol=1e-9)


def test_dep_project_rank_one_is_zero():
    rng = np.random.default_rng(1)
    g = 2.5 * np.outer(rng.standard_normal(6), rng.standard_normal(4))
    out = project_arr(g)
    assert np.abs(out).max() < 1e-10 * np.abs(g).max()


def test_dep_project_zero_matrix_passthrough():
    out = project_arr(np.zeros((3, 4)))
    assert (out == 0.0).all()


def test_dep_project_algebra_random():
    rng = np.random.default_rng(13)
    g = rng.standard_normal((6, 4))
    sig, u, v = linalg.full_svd(g)
    out = project_arr(g)
    # orthogonality to the dominant direction
    assert abs(np.sum(out * np.outer(u[:, 0], v[:, 0]))) < 1e-10
    # energy removal
    fro2 = (g * g).sum()
    assert abs((out * out).sum() - (fro2 - sig[0] ** 2)) < 1e-9 * fro2
    # leading singular value of the output equals sigma2
    out_sig = linalg.full_svd(out)[0]
    assert abs(out_sig[0] - sig[1]) < 1e-7 * max(sig[1], 1.0)


def test_dep_project_invariant_under_dominant_shift():
    rng = np.random.default_rng(17)
    g = rng.standard_normal((5, 7))
    _, u, v = linalg.full_svd(g)
    base = project_arr(g)
    for c in (0.01, 0.1):
        shifted = project_arr(g + c * np.outer(u[:, 0], v[:, 0]))
        assert np.allclose(shifted, base, atol=1e-8)


def test_optimizer_config_structurally_hyperparameter_free():
    names = {f.name for f in dataclasses.fields(dep.OptimizerConfig)}
    assert names == {
        "learning_rate",
        "weight_decay",
        "momentum",
        "dep_enabled",
        "dep_min_rank_dims",
    }


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        dep.OptimizerConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        dep.OptimizerConfig(learning_rate=0.1, momentum=1.0)
    with pytest.raises(ValueError):
        dep.OptimizerConfig(learning_rate=0.1, weight_decay=-1e-3)


def _toy_model_and_grads(weight_grad):
    rng = np.random.default_rng(0)
    model = snn.Model([snn.Linear(2, 2, rng), snn.MeanPoolReadout(CFG)], (2,))
    model.set_params({"0.weight": np.zeros((2, 2)), "0.bias": np.zeros(2)})
    grads = snn.GradientSet(
        params={"0.weight": np.asarray(weight_grad, float), "0.bias": np.ones(2)},
        x_grad=np.zeros((1, 2)),
        initial_state_grad=[None, None],
    )
    return model, grads


def test_sgd_step_with_dep_hand_example():
    model, grads = _toy_model_and_grads([[3.0, 0.0], [0.0, 1.0]])
    cfg = dep.OptimizerConfig(learning_rate=0.1, dep_enabled=True)
    dep.apply_gradients(model, grads, cfg)
    assert np.allclose(
        model.params()["0.weight"], [[0.0, 0.0], [0.0, -0.1]], atol=1e-10
    )
    # rank-1 bias bypasses the projection
    assert np.allclose(model.params()["0.bias"], -0.1 * np.ones(2), atol=1e-15)


def test_sgd_plain_passthrough_with_decay():
    model, grads = _toy_model_and_grads([[3.0, 0.0], [0.0, 1.0]])
    model.set_params({"0.weight": np.full((2, 2), 2.0)})
    cfg = dep.OptimizerConfig(learning_rate=0.1, weight_decay=0.5)
    dep.apply_gradients(model, grads, cfg)
    want = 2.0 - 0.1 * (np.array([[3.0, 0.0], [0.0, 1.0]]) + 0.5 * 2.0)
    assert np.allclose(model.params()["0.weight"], want, atol=1e-14)


def test_momentum_buffer_stores_post_projection_gradient():
    model, grads = _toy_model_and_grads([[3.0, 0.0], [0.0, 1.0]])
    cfg = dep.OptimizerConfig(learning_rate=1.0, momentum=0.5, dep_enabled=True)
    state = dep.apply_gradients(model, grads, cfg)
    g_dep = np.array([[0.0, 0.0], [0.0, 1.0]])
    assert np.allclose(state["0.weight"], g_dep, atol=1e-9)
    w_after_1 = model.params()["0.weight"].copy()
    # second identical step: buffer -> 0.5*g_dep + g_dep
    dep.apply_gradients(model, grads, cfg, state)
    step2 = model.params()["0.weight"] - w_after_1
    assert np.allclose(step2, -(0.5 * g_dep + g_dep), atol=1e-8)


def test_diagnostics_records():
    model, grads = _toy_model_and_grads([[3.0, 0.0], [0.0, 1.0]])
    cfg = dep.OptimizerConfig(learning_rate=0.1, dep_enabled=True)
    diags = []
    dep.apply_gradients(model, grads, cfg, diagnostics=diags)
    assert len(diags) == 1  # bias bypasses, so only the weight is recorded
    rec = diags[0]
    assert rec["param_name"] == "0.weight"
    assert abs(rec["sigma1"] - 3.0) < 1e-9
    assert abs(rec["sigma2"] - 1.0) < 1e-9
    assert abs(rec["frobenius_before"] - np.sqrt(10.0)) < 1e-12
    assert abs(rec["frobenius_after"] - 1.0) < 1e-9


def test_missing_or_misshapen_gradient_raises():
    model, grads = _toy_model_and_grads([[3.0, 0.0], [0.0, 1.0]])
    cfg = dep.OptimizerConfig(learning_rate=0.1)
    del grads.params["0.bias"]
    with pytest.raises(snn.ShapeMismatch):
        dep.apply_gradients(model, grads, cfg)
    model2, grads2 = _toy_model_and_grads(np.zeros((3, 2)))
    with pytest.raises(snn.ShapeMismatch):
        dep.apply_gradients(model2, grads2, cfg)


def test_training_step_end_to_end_updates_and_invalidates_tape():
    model = snn.build_mlp([4, 6, 3], CFG, seed=5)
    x = np.random.default_rng(5).uniform(0, 1, (8, 4))
    y = np.random.default_rng(6).integers(0, 3, 8)
    opt = dep.SgdOptimizer(
        model, dep.OptimizerConfig(learning_rate=0.1, dep_enabled=True)
    )
    before = model.flat_params()
    val, gs, fr = snn.loss_and_grad(model, x, y, 4)
    opt.step(gs)
    assert not np.allclose(model.flat_params(), before)
    with pytest.raises(snn.TapeConsumed):
        snn.backward(fr.tape, y)
