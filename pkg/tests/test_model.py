import math

import numpy as np
import pytest

from fusionerc import tensor as T
from fusionerc.gradcheck import module_gradcheck
from fusionerc.losses import cross_entropy
from fusionerc.model import (
    AttentionFusionLayer,
    ConfigError,
    DialogModel,
    EncoderStack,
    ModelConfig,
    MultiHeadAttention,
)
from fusionerc.optim import AdamW, AdamWConfig
from fusionerc.tensor import Tensor


def set_identity(lin, d_in, d_out):
    lin.weight.data[...] = np.eye(d_in, d_out)
    lin.bias.data[...] = 0.0


def identity_attention(d, heads=1, d_key=None):
    att = MultiHeadAttention(d, d_key or d, heads, np.random.default_rng(0))
    for lin, n_in in ((att.q_proj, d), (att.k_proj, d_key or d), (att.v_proj, d), (att.out_proj, d)):
        set_identity(lin, n_in, d)
    return att


def manual_attention(q, k, v):
    s = q @ k.T / math.sqrt(q.shape[1])
    w = np.exp(s - s.max(1, keepdims=True))
    w /= w.sum(1, keepdims=True)
    return w @ v


def micro_cfg(**kw):
    base = dict(d_t=8, d_a=4, d_v=6, n_t=1, n_a=1, n_v=1, m=2, heads=2, dropout=0.0, n_classes=4, seed=3)
    base.update(kw)
    return ModelConfig(**base)


class TestAttention:
    def test_single_key(self):
        rng = np.random.default_rng(0)
        att = MultiHeadAttention(8, 5, 2, rng)
        q, k, v = rng.normal(size=(1, 8)), rng.normal(size=(1, 5)), rng.normal(size=(1, 8))
        out = att(Tensor(q), Tensor(k), Tensor(v)).data
        assert np.all(att.last_weights == 1.0)
        np.testing.assert_allclose(out, att.out_proj(att.v_proj(Tensor(v))).data, atol=1e-14)

    def test_zero_values(self):
        rng = np.random.default_rng(1)
        att = MultiHeadAttention(4, 4, 2, rng)
        att.v_proj.weight.data[...] = 0
        att.v_proj.bias.data[...] = 0
        att.out_proj.bias.data[...] = 0
        x = Tensor(rng.normal(size=(3, 4)))
        assert not att(x, x, x).data.any()

    def test_two_utterance_identity_toy(self):
        q = np.array([[1.0, 0.0], [0.0, 2.0]])
        k = np.array([[0.5, 1.0], [1.0, -1.0]])
        v = np.array([[3.0, -1.0], [0.0, 4.0]])
        out = identity_attention(2)(Tensor(q), Tensor(k), Tensor(v)).data
        # hand computation: scores / sqrt(2), row softmax, times v
        s = np.array([[0.5, 1.0], [2.0, -2.0]]) / math.sqrt(2)
        w = np.exp(s) / np.exp(s).sum(1, keepdims=True)
        np.testing.assert_allclose(out, w @ v, atol=1e-14)
        np.testing.assert_allclose(out, manual_attention(q, k, v), atol=1e-14)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        att = MultiHeadAttention(8, 3, 4, rng)
        att(Tensor(rng.normal(size=(2, 5, 8))), Tensor(rng.normal(size=(2, 5, 3))), Tensor(rng.normal(size=(2, 5, 8))))
        assert att.last_weights.shape == (2, 4, 5, 5)
        np.testing.assert_allclose(att.last_weights.sum(-1), 1.0, atol=1e-12)

    def test_indivisible_heads(self):
        with pytest.raises(ConfigError):
            MultiHeadAttention(6, 6, 4, np.random.default_rng(0))

    def test_gradient(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            att = MultiHeadAttention(4, 3, 2, rng)
            q, k = Tensor(rng.normal(size=(3, 4)), requires_grad=True), Tensor(rng.normal(size=(3, 3)), requires_grad=True)
            w = rng.normal(size=(3, 4))
            res = module_gradcheck(lambda: (att(q, k, q) * w).sum(), att, extra=[q, k])
            assert res.passed(1e-4), res.per_input


class TestEncoderStack:
    def test_zero_blocks_identity(self):
        x = Tensor(np.random.default_rng(0).normal(size=(4, 8)))
        stack = EncoderStack(8, 0, 2, 32, 0.0, np.random.default_rng(0), 1e-5)
        assert stack(x) is x

    def test_stack_skip_wraps_each_block(self):
        rng = np.random.default_rng(1)
        stack = EncoderStack(8, 2, 2, 16, 0.0, rng, 1e-5)
        x = Tensor(rng.normal(size=(3, 8)))
        h = stack.blocks[0](x).data + x.data
        expected = stack.blocks[1](Tensor(h)).data + h
        np.testing.assert_allclose(stack(x).data, expected, atol=1e-13)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        stack = EncoderStack(8, 2, 2, 16, 0.0, rng, 1e-5)
        x = rng.normal(size=(6, 8))
        perm = rng.permutation(6)
        np.testing.assert_allclose(stack(Tensor(x[perm])).data, stack(Tensor(x)).data[perm], atol=1e-12)

    def test_gradient_two_blocks(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            stack = EncoderStack(4, 2, 2, 8, 0.0, rng, 1e-5)
            x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            w = rng.normal(size=(3, 4))
            res = module_gradcheck(lambda: (stack(x) * w).sum(), stack, extra=[x], max_entries=8, seed=1)
            assert res.passed(1e-4), res.per_input


class TestFusionLayer:
    def test_single_utterance(self):
        rng = np.random.default_rng(0)
        layer = AttentionFusionLayer(8, {"a": 4, "v": 6}, 2, 0.0, rng)
        t = Tensor(rng.normal(size=(1, 8)))
        out = layer(t, {"a": Tensor(rng.normal(size=(1, 4))), "v": Tensor(rng.normal(size=(1, 6)))}).data
        copies = [br.out_proj(br.v_proj(t)).data for br in layer.branches]
        np.testing.assert_allclose(out, layer.fc(Tensor(np.concatenate(copies, -1))).data, atol=1e-13)
        for br in layer.branches:
            assert np.all(br.last_weights == 1.0)

    def test_shape(self):
        rng = np.random.default_rng(1)
        k, d_a, d_t, d_v = 3, 8, 16, 12
        layer = AttentionFusionLayer(d_t, {"a": d_a, "v": d_v}, 4, 0.0, rng)
        out = layer(Tensor(rng.normal(size=(k, d_t))),
                    {"a": Tensor(rng.normal(size=(k, d_a))), "v": Tensor(rng.normal(size=(k, d_v)))})
        assert out.shape == (k, d_t)

    def test_two_utterance_hand_trace(self):
        layer = AttentionFusionLayer(2, {"a": 2, "v": 2}, 1, 0.0, np.random.default_rng(0))
        for br in layer.branches:
            for lin in (br.q_proj, br.k_proj, br.v_proj, br.out_proj):
                set_identity(lin, 2, 2)
        layer.fc.weight.data[...] = np.vstack([np.eye(2), 2 * np.eye(2)])
        layer.fc.bias.data[...] = [0.1, -0.1]
        t = np.array([[1.0, 0.0], [0.0, 1.0]])
        a = np.array([[2.0, 0.0], [0.0, 0.0]])
        v = np.array([[0.0, 1.0], [1.0, 1.0]])
        out = layer(Tensor(t), {"a": Tensor(a), "v": Tensor(v)}).data
        r2 = math.sqrt(2)
        # branch a: scores t a^T / sqrt2 = [[2,0],[0,0]]/sqrt2
        wa = np.array([[math.exp(2 / r2), 1.0], [1.0, 1.0]])
        wa /= wa.sum(1, keepdims=True)
        # branch v: scores t v^T / sqrt2 = [[0,1],[1,1]]/sqrt2
        wv = np.array([[1.0, math.exp(1 / r2)], [1.0, 1.0]])
        wv /= wv.sum(1, keepdims=True)
        expected = wa @ t + 2 * (wv @ t) + np.array([0.1, -0.1])
        np.testing.assert_allclose(out, expected, atol=1e-14)

    def test_length_mismatch(self):
        rng = np.random.default_rng(2)
        layer = AttentionFusionLayer(4, {"a": 4}, 2, 0.0, rng)
        with pytest.raises(T.ShapeError):
            layer(Tensor(rng.normal(size=(3, 4))), {"a": Tensor(rng.normal(size=(2, 4)))})

    def test_gradient(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            layer = AttentionFusionLayer(4, {"a": 2, "v": 6}, 2, 0.0, rng)
            t = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            a = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
            v = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
            w = rng.normal(size=(3, 4))
            res = module_gradcheck(lambda: (layer(t, {"a": a, "v": v}) * w).sum(), layer, extra=[t, a, v],
                                   max_entries=8)
            assert res.passed(1e-4), res.per_input


class TestFusionStack:
    def test_m1_single_layer(self):
        model = DialogModel(micro_cfg(m=1, n_t=0, n_a=0, n_v=0))
        rng = np.random.default_rng(0)
        t, a, v = rng.normal(size=(3, 8)), rng.normal(size=(3, 4)), rng.normal(size=(3, 6))
        state = model(t, a, v)
        assert len(state.fusion_outputs) == 1
        direct = model.fusion[0](Tensor(t), {"a": Tensor(a), "v": Tensor(v)}).data
        np.testing.assert_allclose(state.fusion_outputs[0].data, direct, atol=1e-14)

    def test_m2_composition(self):
        model = DialogModel(micro_cfg(m=2))
        rng = np.random.default_rng(1)
        t, a, v = rng.normal(size=(4, 8)), rng.normal(size=(4, 4)), rng.normal(size=(4, 6))
        state = model(t, a, v)
        keys = {"a": state.f_a, "v": state.f_v}
        first = model.fusion[0](state.f_t, keys)
        second = model.fusion[1](first, keys)
        np.testing.assert_allclose(state.fusion_outputs[1].data, second.data, atol=1e-14)
        assert all(o.shape == (4, 8) for o in state.fusion_outputs)


class TestForward:
    def test_single_utterance(self):
        model = DialogModel(micro_cfg())
        rng = np.random.default_rng(0)
        probs = model(rng.normal(size=(1, 8)), rng.normal(size=(1, 4)), rng.normal(size=(1, 6))).probs.data
        assert probs.shape == (1, 4)

    def test_state_fields(self):
        model = DialogModel(micro_cfg())
        rng = np.random.default_rng(1)
        s = model(rng.normal(size=(5, 8)), rng.normal(size=(5, 4)), rng.normal(size=(5, 6)))
        assert s.f_t.shape == (5, 8) and s.f_a.shape == (5, 4) and s.f_v.shape == (5, 6)
        assert s.f_final.shape == (5, 8 + 4 + 6)
        assert s.logits.shape == (5, 4)
        assert np.abs(s.probs.data.sum(-1) - 1).max() < 1e-9

    def test_equal_inputs_equal_outputs(self):
        model = DialogModel(micro_cfg())
        rng = np.random.default_rng(2)
        t, a, v = rng.normal(size=(1, 8)), rng.normal(size=(1, 4)), rng.normal(size=(1, 6))
        other = [rng.normal(size=(1, d)) for d in (8, 4, 6)]
        probs = model.predict(np.vstack([t, other[0], t]), np.vstack([a, other[1], a]),
                              np.vstack([v, other[2], v]))
        np.testing.assert_allclose(probs[0], probs[2], atol=1e-12)

    def test_shape_contract_random_configs(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            heads = int(rng.choice([1, 2, 4]))
            cfg = ModelConfig(d_t=heads * int(rng.integers(1, 4)), d_a=heads * int(rng.integers(1, 4)),
                              d_v=heads * int(rng.integers(1, 4)), n_t=int(rng.integers(0, 3)),
                              n_a=int(rng.integers(0, 3)), n_v=int(rng.integers(0, 3)), m=int(rng.integers(1, 4)),
                              heads=heads, n_classes=int(rng.integers(2, 8)), dropout=0.0,
                              seed=int(rng.integers(100)))
            k = int(rng.integers(1, 7))
            probs = DialogModel(cfg).predict(rng.normal(size=(k, cfg.d_t)), rng.normal(size=(k, cfg.d_a)),
                                             rng.normal(size=(k, cfg.d_v)))
            assert probs.shape == (k, cfg.n_classes)
            assert np.abs(probs.sum(-1) - 1).max() < 1e-9

    def test_batched_matches_single(self):
        model = DialogModel(micro_cfg())
        rng = np.random.default_rng(4)
        t, a, v = rng.normal(size=(3, 5, 8)), rng.normal(size=(3, 5, 4)), rng.normal(size=(3, 5, 6))
        batched = model.predict(t, a, v)
        for i in range(3):
            np.testing.assert_allclose(batched[i], model.predict(t[i], a[i], v[i]), atol=1e-13)

    def test_dropout_only_in_training(self):
        model = DialogModel(micro_cfg(dropout=0.4))
        rng = np.random.default_rng(5)
        x = (rng.normal(size=(4, 8)), rng.normal(size=(4, 4)), rng.normal(size=(4, 6)))
        np.testing.assert_array_equal(model.predict(*x), model.predict(*x))
        model.train()
        assert not np.allclose(model(*x).probs.data, model(*x).probs.data)

    def test_full_model_gradient(self):
        model = DialogModel(micro_cfg(d_t=8, d_a=4, d_v=4, m=2))
        rng = np.random.default_rng(6)
        t, a, v = rng.normal(size=(3, 8)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        labels = rng.integers(0, 4, size=3)
        res = module_gradcheck(lambda: cross_entropy(model(t, a, v).probs, labels), model, max_entries=6)
        assert res.passed(1e-4), sorted(res.per_input.items(), key=lambda kv: -kv[1])[:3]

    def test_no_dead_parameters(self):
        model = DialogModel(micro_cfg())
        rng = np.random.default_rng(7)
        t, a, v = rng.normal(size=(2, 5, 8)), rng.normal(size=(2, 5, 4)), rng.normal(size=(2, 5, 6))
        cross_entropy(model(t, a, v).probs, rng.integers(0, 4, size=(2, 5))).backward()
        for name, p in model.named_parameters():
            assert p.grad is not None and np.abs(p.grad).max() > 0, name

    def test_positional_encoding_breaks_symmetry(self):
        model = DialogModel(micro_cfg(positional_encoding=True))
        rng = np.random.default_rng(8)
        x = [np.tile(rng.normal(size=(1, d)), (3, 1)) for d in (8, 4, 6)]
        probs = model.predict(*x)
        assert not np.allclose(probs[0], probs[1])


class TestPermutationEquivariance:
    def test_fifty_cases(self):
        rng = np.random.default_rng(9)
        worst = 0.0
        for i in range(50):
            cfg = micro_cfg(seed=i, m=int(rng.integers(1, 4)), n_t=int(rng.integers(0, 3)))
            model = DialogModel(cfg)
            k = int(rng.integers(2, 8))
            x = [rng.normal(size=(k, d)) for d in (8, 4, 6)]
            perm = rng.permutation(k)
            base = model.predict(*x)
            permuted = model.predict(*[xi[perm] for xi in x])
            worst = max(worst, np.abs(permuted - base[perm]).max())
        assert worst < 1e-6


class TestAblations:
    def test_concat_path(self):
        cfg = micro_cfg(fusion="concat")
        model = DialogModel(cfg)
        assert model.fusion == []
        rng = np.random.default_rng(0)
        t, a, v = rng.normal(size=(3, 8)), rng.normal(size=(3, 4)), rng.normal(size=(3, 6))
        s = model(t, a, v)
        assert s.fusion_outputs == []
        np.testing.assert_array_equal(s.f_final.data, np.concatenate([s.f_t.data, s.f_a.data, s.f_v.data], -1))
        logits, _ = model.classify(T.concat([s.f_t, s.f_a, s.f_v], -1))
        np.testing.assert_array_equal(s.logits.data, logits.data)

    def test_m_zero_is_concat(self):
        assert not ModelConfig(m=0).uses_fusion
        assert DialogModel(micro_cfg(m=0)).fusion == []

    @pytest.mark.parametrize("mods", [("t",), ("a",), ("v",), ("t", "a"), ("t", "v"), ("a", "v")])
    def test_modality_masks_concat(self, mods):
        cfg = micro_cfg(modalities=mods, fusion="concat")
        model = DialogModel(cfg)
        rng = np.random.default_rng(1)
        given = {m: rng.normal(size=(3, cfg.dim(m))) for m in mods}
        probs = model.predict(given.get("t"), given.get("a"), given.get("v"))
        assert probs.shape == (3, 4)
        assert model.fc1.weight.shape[0] == sum(cfg.dim(m) for m in mods)

    @pytest.mark.parametrize("mods", [("t", "a"), ("t", "v")])
    def test_modality_masks_fusion(self, mods):
        cfg = micro_cfg(modalities=mods)
        model = DialogModel(cfg)
        assert len(model.fusion[0].branches) == 1
        rng = np.random.default_rng(2)
        given = {m: rng.normal(size=(3, cfg.dim(m))) for m in mods}
        assert model.predict(given.get("t"), given.get("a"), given.get("v")).shape == (3, 4)

    def test_fusion_without_text_rejected(self):
        with pytest.raises(ConfigError):
            micro_cfg(modalities=("a", "v"))

    @pytest.mark.parametrize("n", range(1, 7))
    def test_depth_and_fusion_axes(self, n):
        cfg = micro_cfg(n_t=n, n_a=n, n_v=n, m=n)
        model = DialogModel(cfg)
        assert len(model.enc_t.blocks) == n and len(model.fusion) == n

    def test_config_rejects_unknown(self):
        with pytest.raises(ConfigError):
            ModelConfig.from_dict({"d_t": 8, "bogus": 1})


def test_overfit_toy_dialog():
    cfg = micro_cfg(m=1)
    model = DialogModel(cfg)
    rng = np.random.default_rng(10)
    t, a, v = rng.normal(size=(6, 8)), rng.normal(size=(6, 4)), rng.normal(size=(6, 6))
    labels = np.array([0, 1, 2, 3, 1, 0])
    opt = AdamW(model.parameters(), AdamWConfig(lr=1e-2, weight_decay=0.0))
    for _ in range(150):
        opt.zero_grad()
        cross_entropy(model(t, a, v).probs, labels).backward()
        opt.step()
    np.testing.assert_array_equal(model.predict(t, a, v).argmax(-1), labels)
