import numpy as np
import pytest

from bftcn import seqcore as sc
from bftcn.model import (backward, build_model, ddrl_forward, drl_forward, forward, forward_logits,
                         input_gradient, predict, residual_backward, residual_forward, stage_layout)
from bftcn.training import LossConfig, loss_and_grads
from bftcn.window import NetworkConfig, future_window

from conftest import small_model


def pads(model, stage_prefix):
    stage = next(s for s in stage_layout(model.config, model.n_input) if s.prefix == stage_prefix)
    return [tuple(c.future_pad for c in layer.convs) for layer in stage.layers]


def zero_residual_branches(model):
    for k in model.params:
        if ".L" in k:
            model.params[k][...] = 0.0


class TestBuild:
    def test_causal_pads(self):
        m = small_model("BF", L=4, n_r=2, w_max=0)
        for prefix in ("pg", "r1", "r2"):
            assert all(set(p) == {0} for p in pads(m, prefix))

    def test_rr_refinement_pads(self):
        m = small_model("RR", L=3, n_r=1)
        assert pads(m, "r1") == [(1,), (2,), (4,)]

    def test_bf_refinement_pads(self):
        m = small_model("BF", L=3, n_r=1, w_max=3)
        assert pads(m, "r1") == [(1,), (2,), (3,)]

    def test_pg_pads_follow_both_branches(self):
        m = small_model("BF", L=3, n_r=0, w_max=3)
        assert pads(m, "pg") == [(1, 3), (2, 2), (3, 1)]

    def test_seeded(self):
        a, b = small_model(seed=5), small_model(seed=5)
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
        c = small_model(seed=6)
        assert not np.array_equal(a.params["pg.in.w"], c.params["pg.in.w"])

    def test_init_bounds(self):
        m = small_model(nf=8, n_input=5)
        assert np.abs(m.params["pg.in.w"]).max() <= 1 / np.sqrt(5)
        assert np.abs(m.params["pg.L1.conv1.w"]).max() <= 1 / np.sqrt(8 * 3)

    def test_stage_count(self):
        m = small_model(n_r=3)
        assert len(stage_layout(m.config, m.n_input)) == 4


class TestResidualLayers:
    def test_zero_weights_give_identity(self, rng):
        m = small_model("RR", L=3, n_r=1)
        zero_residual_branches(m)
        for stage in stage_layout(m.config, m.n_input):
            for layer in stage.layers:
                x = rng.standard_normal((6, 9))
                fn = ddrl_forward if layer.dual else drl_forward
                np.testing.assert_array_equal(fn(m, layer, x), x)

    def test_single_frame(self, rng):
        m = small_model("RR", L=3, n_r=1)
        layer = stage_layout(m.config, m.n_input)[0].layers[0]
        y = ddrl_forward(m, layer, rng.standard_normal((6, 1)))
        assert y.shape == (6, 1) and np.all(np.isfinite(y))

    @pytest.mark.parametrize("variant,w_max", [("RR", 0), ("BF", 1), ("BF", 3)])
    def test_future_sensitivity_bounded(self, variant, w_max, rng):
        m = small_model(variant, L=4, n_r=1, w_max=w_max, nf=6)
        for stage in stage_layout(m.config, m.n_input):
            for layer in stage.layers:
                x = rng.standard_normal((6, 40))
                t = 12
                base = residual_forward(m, layer, x)[0][:, t]
                reach = layer.future_reach
                for s in range(t + 1, 40):
                    xp = x.copy()
                    xp[:, s] += 5.0
                    changed = not np.array_equal(residual_forward(m, layer, xp)[0][:, t], base)
                    if s > t + reach:
                        assert not changed
                if reach:
                    xp = x.copy()
                    xp[:, t + reach] += 5.0
                    assert not np.array_equal(residual_forward(m, layer, xp)[0][:, t], base)

    def test_wrong_kind_rejected(self):
        m = small_model(n_r=1)
        pg_layer = stage_layout(m.config, m.n_input)[0].layers[0]
        with pytest.raises(ValueError):
            drl_forward(m, pg_layer, np.zeros((6, 3)))

    @pytest.mark.parametrize("dual", [True, False])
    @pytest.mark.parametrize("seed", range(5))
    def test_layer_gradients(self, dual, seed):
        m = small_model("BF", L=3, n_r=1, w_max=1, nf=3, seed=seed)
        stage = stage_layout(m.config, m.n_input)[0 if dual else 1]
        layer = stage.layers[1]
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((3, 8))
        r = rng.standard_normal((3, 8))
        y, cache = residual_forward(m, layer, x)
        grads = {}
        gx = residual_backward(m, layer, cache, r, grads)
        names = sorted(grads)
        rep = sc.gradient_check(lambda: float((residual_forward(m, layer, x)[0] * r).sum()),
                                [x] + [m.params[k] for k in names], [gx] + [grads[k] for k in names])
        assert rep.passed, rep


class TestForward:
    def test_zero_head_gives_uniform(self, rng):
        m = small_model(n_classes=6, n_r=2)
        for k in m.params:
            if ".head." in k:
                m.params[k][...] = 0
        for p in forward(m, rng.standard_normal((10, 5))):
            np.testing.assert_allclose(p, 1 / 6, atol=1e-15)

    def test_no_refinement_single_output(self, rng):
        assert len(forward(small_model(n_r=0), rng.standard_normal((4, 5)))) == 1

    def test_probabilities_valid(self, rng):
        for p in forward(small_model(n_r=2), rng.standard_normal((30, 5))):
            assert p.shape == (4, 30)
            assert np.all(p >= 0)
            assert np.max(np.abs(p.sum(axis=0) - 1)) < 1e-12

    def test_deterministic(self, rng):
        x = rng.standard_normal((25, 5))
        a = forward(small_model(seed=3), x)
        b = forward(small_model(seed=3), x)
        assert all(np.array_equal(u, v) for u, v in zip(a, b))

    def test_predict_is_argmax_of_last_stage(self, rng):
        m = small_model(n_r=2)
        x = rng.standard_normal((12, 5))
        np.testing.assert_array_equal(predict(m, x), forward(m, x)[-1].argmax(axis=0))

    def test_errors(self):
        m = small_model()
        with pytest.raises(ValueError):
            forward(m, np.zeros((0, 5)))
        with pytest.raises(sc.ShapeError):
            forward(m, np.zeros((4, 3)))

    def test_end_to_end_causality(self, rng):
        m = small_model("BF", L=3, n_r=1, w_max=2, nf=12)
        fw = future_window(m.config)
        x = rng.standard_normal((40, 5))
        t = 10
        base = forward(m, x)[-1][:, t]
        for s in range(t + fw + 1, 40):
            xp = x.copy()
            xp[s] += 3.0
            assert np.array_equal(forward(m, xp)[-1][:, t], base)
        xp = x.copy()
        xp[t + fw] += 3.0
        assert not np.array_equal(forward(m, xp)[-1][:, t], base)

    def test_dropout_only_in_training(self, rng):
        m = small_model(dropout_p=0.5)
        x = rng.standard_normal((10, 5))
        a = forward(m, x, training=True, rng=np.random.default_rng(0))[-1]
        b = forward(m, x)[-1]
        assert not np.allclose(a, b)


@pytest.mark.parametrize("seed", range(5))
def test_full_network_gradient(seed):
    """Two-stage network, dropout on with a fixed mask, loss with frozen previous frames."""
    m = small_model("BF", L=2, n_r=1, w_max=1, nf=3, n_classes=3, n_input=2, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((7, 2))
    y = rng.integers(0, 3, size=7)
    ref = forward(m, x, training=True, rng=np.random.default_rng(99))

    def loss():
        return loss_and_grads(m, x, y, LossConfig(), training=True,
                              rng=np.random.default_rng(99), reference_probs=ref)[0]

    _, grads = loss_and_grads(m, x, y, LossConfig(), training=True, rng=np.random.default_rng(99))
    names = list(m.params)
    # floor sits at the round-off level of an O(1) loss, see gradient_check
    rep = sc.gradient_check(loss, [m.params[k] for k in names], [grads[k] for k in names],
                            floor=1e-6)
    assert rep.passed, rep


def test_backward_covers_all_parameters(rng):
    m = small_model(n_r=2)
    x = rng.standard_normal((6, 5))
    _, probs, cache = forward_logits(m, x)
    grads = backward(m, probs, cache, [np.ones_like(p) for p in probs])
    assert list(grads) == list(m.params)
    assert all(grads[k].shape == m.params[k].shape for k in grads)


def test_build_requires_positive_input():
    with pytest.raises(ValueError):
        build_model(NetworkConfig("RR", 2, 2, 0), n_input=0)


@pytest.mark.parametrize("seed", range(3))
def test_input_gradient(seed):
    m = small_model("RR", L=2, n_r=2, nf=4, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((9, 5))
    r = rng.standard_normal((4, 9))
    g = input_gradient(m, x, r)
    rep = sc.gradient_check(lambda: float((forward(m, x)[-1] * r).sum()), [x], [g])
    assert rep.passed, rep
