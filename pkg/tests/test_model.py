import numpy as np
import pytest

from mapunetr import gradcheck
from mapunetr.autograd import Tensor
from mapunetr.errors import ConfigError, ShapeError
from mapunetr.metrics import dice_loss
from mapunetr.model import (
    DecoderStage,
    MAPUNetR,
    ModelConfig,
    TransformerBlock,
    msa,
    one_hot,
    predict_mask,
    tokens_to_grid,
)
from mapunetr.rng import stream


def split_pre_bn_biases(module):
    """Conv biases feeding BatchNorm have a structurally zero gradient; relative error is meaningless there."""
    names = dict(module.named_parameters())
    pre_bn = [p for n, p in names.items() if n.endswith("conv.bias")]
    rest = [p for n, p in names.items() if p.trainable and not n.endswith("conv.bias")]
    return rest, pre_bn


def assert_zero_grads(loss, params, atol=1e-8):
    for p in params:
        p.grad = np.zeros_like(p.data)
    loss().backward()
    for p in params:
        numeric = gradcheck.numeric_grad(lambda: float(loss().data), p, skip_kinks=True)
        assert np.abs(p.grad).max() <= atol
        assert max(abs(v) for v in numeric.values()) <= atol


def zero_block_weights(model):
    for block in model.blocks:
        for p in (block.attn.wq, block.attn.wk, block.attn.wv, block.attn.wo,
                  block.fc1.weight, block.fc1.bias, block.fc2.weight, block.fc2.bias):
            p.data[...] = 0


class TestMSA:
    def test_hand_example(self):
        Z = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
        I = Tensor(np.eye(2))
        Wq = Tensor(np.array([[np.sqrt(2.0), 0.0], [0.0, 0.0]]))
        out, w = msa(Z, Wq, I, I, I, h=1)
        e = np.exp(1.0)
        assert np.allclose(w[0, 0], [e / (1 + e), 1 / (1 + e)], atol=1e-12)
        assert np.allclose(w[0, 1], [0.5, 0.5], atol=1e-12)
        assert np.allclose(out.data[:, 0], [e / (1 + e), 0.5], atol=1e-12)
        assert out.data[0, 0] == pytest.approx(0.7311, abs=1e-4)

    def test_zero_query_key_gives_uniform(self, rng):
        Z = Tensor(rng.normal(size=(5, 4)))
        zero = Tensor(np.zeros((4, 4)))
        eye = Tensor(np.eye(4))
        out, w = msa(Z, zero, zero, eye, eye, h=2)
        assert np.allclose(w, 0.2, atol=1e-15)
        assert np.allclose(out.data, Z.data.mean(axis=0), atol=1e-12)

    def test_single_token(self, rng):
        Z = Tensor(rng.normal(size=(1, 4)))
        W = [Tensor(rng.normal(size=(4, 4))) for _ in range(4)]
        out, w = msa(Z, *W, h=2)
        assert np.array_equal(w, np.ones((2, 1, 1)))
        assert np.allclose(out.data, Z.data @ W[2].data @ W[3].data, atol=1e-12)

    def test_batched_shapes(self, rng):
        Z = Tensor(rng.normal(size=(3, 6, 8)))
        W = [Tensor(rng.normal(size=(8, 8))) for _ in range(4)]
        out, w = msa(Z, *W, h=4)
        assert out.shape == (3, 6, 8) and w.shape == (3, 4, 6, 6)

    def test_heads_must_divide(self, rng):
        W = [Tensor(np.zeros((6, 6)))] * 4
        with pytest.raises(ConfigError):
            msa(Tensor(np.zeros((2, 6))), *W, h=4)

    def test_rows_are_distributions(self, rng):
        Z = Tensor(rng.normal(size=(2, 7, 8)) * 10)
        W = [Tensor(rng.normal(size=(8, 8))) for _ in range(4)]
        _, w = msa(Z, *W, h=2)
        assert np.all(w >= 0)
        assert np.allclose(w.sum(-1), 1, atol=1e-12)


class TestBlock:
    def test_zero_weights_passthrough(self, rng):
        block = TransformerBlock(8, 2, 2.0, stream(0, "init"), np.float64)
        for p in (block.attn.wq, block.attn.wk, block.attn.wv, block.attn.wo,
                  block.fc1.weight, block.fc1.bias, block.fc2.weight, block.fc2.bias):
            p.data[...] = 0
        Z = rng.normal(size=(2, 5, 8))
        out, _ = block(Tensor(Z))
        assert np.array_equal(out.data, Z)

    def test_gradients(self, rng):
        block = TransformerBlock(8, 2, 2.0, stream(1, "init"), np.float64)
        Z = Tensor(rng.normal(size=(2, 4, 8)), requires_grad=True)
        weights = Tensor(rng.normal(size=(2, 4, 8)))

        def loss():
            return (block(Z)[0] * weights).sum()

        assert gradcheck.check(loss, [Z] + block.parameters()) <= 1e-5


class TestGrid:
    def test_token_placement(self):
        tokens = np.arange(2 * 6 * 3, dtype=float).reshape(2, 6, 3)
        fmap = tokens_to_grid(Tensor(tokens), (2, 3)).data
        assert fmap.shape == (2, 3, 2, 3)
        assert np.array_equal(fmap[1, :, 1, 2], tokens[1, 5])
        assert np.array_equal(fmap[0, :, 0, 1], tokens[0, 1])

    def test_wrong_count(self):
        with pytest.raises(ShapeError):
            tokens_to_grid(Tensor(np.zeros((5, 3))), (2, 3))


class TestDecoder:
    def test_stage_shape(self, rng):
        stage = DecoderStage(16, 8, 16, 2, stream(0, "init"), np.float64)
        out = stage(Tensor(rng.normal(size=(2, 16, 4, 4))), Tensor(rng.normal(size=(2, 16, 2, 2))), "train")
        assert out.shape == (2, 8, 8, 8)

    def test_stage_without_skip(self, rng):
        stage = DecoderStage(4, 3, 16, 0, stream(0, "init"), np.float64)
        assert stage(Tensor(rng.normal(size=(1, 4, 3, 3))), None, "infer").shape == (1, 3, 6, 6)

    def test_stage_gradients(self, rng):
        stage = DecoderStage(3, 2, 4, 1, stream(2, "init"), np.float64)
        x = Tensor(rng.normal(size=(2, 3, 2, 2)), requires_grad=True)
        skip = Tensor(rng.normal(size=(2, 4, 2, 2)), requires_grad=True)
        weights = Tensor(rng.normal(size=(2, 2, 4, 4)))

        def loss():
            return (stage(x, skip, "train") * weights).sum()

        rest, pre_bn = split_pre_bn_biases(stage)
        assert gradcheck.check(loss, [x, skip] + rest, skip_kinks=True) <= 1e-4
        assert_zero_grads(loss, pre_bn)

    def test_skip_assignment_deep_to_shallow(self):
        cfg = ModelConfig()
        assert MAPUNetR.assign_skips(cfg) == [5, 3, 1]
        tiny = ModelConfig(image_size=(32, 32), embed_dim=16, num_heads=2, depth=2, skip_layers=[0, 1],
                           decoder_channels=[16, 8, 8])
        assert MAPUNetR.assign_skips(tiny) == [1, 0, None]

    def test_zero_head_gives_uniform_probs(self, tiny_model, rng):
        tiny_model.head.weight.data[...] = 0
        tiny_model.head.bias.data[...] = 0
        probs, _ = tiny_model.forward(rng.normal(size=(2, 32, 32, 3)))
        assert np.array_equal(probs.data, np.full((2, 2, 32, 32), 0.5))


class TestModel:
    def test_forward_shapes(self, tiny_model, rng):
        probs, records = tiny_model.forward(rng.normal(size=(3, 32, 32, 3)))
        assert probs.shape == (3, 2, 32, 32)
        assert len(records) == 2 and records[0].weights.shape == (3, 2, 16, 16)

    def test_single_image(self, tiny_model, rng):
        x = rng.normal(size=(32, 32, 3))
        probs, records = tiny_model.forward(x)
        assert probs.shape == (2, 32, 32)
        assert records[1].weights.shape == (2, 16, 16)
        batched, _ = tiny_model.forward(x[None])
        assert np.array_equal(probs.data, batched.data[0])

    def test_probabilities(self, tiny_model, rng):
        for mode in ("train", "infer"):
            probs, _ = tiny_model.forward(rng.normal(size=(2, 32, 32, 3)), mode)
            assert np.all(probs.data >= 0)
            assert np.allclose(probs.data.sum(axis=1), 1, atol=1e-12)

    def test_default_config_shapes(self):
        model = MAPUNetR(ModelConfig(), seed=0)
        probs, records = model.forward(np.zeros((1, 64, 64, 3), np.float32))
        assert probs.shape == (1, 2, 64, 64) and probs.dtype == np.float32
        assert len(records) == 6 and records[0].weights.shape == (1, 4, 64, 64)

    def test_seeded_init(self, tiny_config):
        a, b, c = (MAPUNetR(tiny_config, seed=s) for s in (5, 5, 6))
        pa, pb, pc = (dict(m.named_parameters()) for m in (a, b, c))
        assert all(np.array_equal(pa[n].data, pb[n].data) for n in pa)
        assert not np.array_equal(pa["patch_embed"].data, pc["patch_embed"].data)

    def test_deterministic_forward(self, tiny_model, rng):
        x = rng.normal(size=(2, 32, 32, 3))
        assert np.array_equal(tiny_model.forward(x)[0].data, tiny_model.forward(x)[0].data)

    def test_zeroed_encoder_is_identity(self, tiny_model, rng):
        x = rng.normal(size=(2, 32, 32, 3))
        zero_block_weights(tiny_model)
        z, _, _ = tiny_model.encode(x)
        assert np.array_equal(z.data, tiny_model.embed(x).data)

    def test_wrong_input_shape(self, tiny_model):
        with pytest.raises(ShapeError):
            tiny_model.forward(np.zeros((1, 32, 32, 1)))

    def test_bad_mode(self, tiny_model):
        with pytest.raises(ConfigError):
            tiny_model.forward(np.zeros((32, 32, 3)), mode="eval")

    def test_full_model_gradients(self, tiny_model, rng):
        x = rng.normal(size=(2, 32, 32, 3))
        y = (rng.random((2, 32, 32)) > 0.5).astype(np.int64)

        def loss():
            return dice_loss(tiny_model.forward(x, "train")[0], y)

        rest, pre_bn = split_pre_bn_biases(tiny_model)
        err = gradcheck.check(loss, rest, samples_per_tensor=3, rng=np.random.default_rng(0), skip_kinks=True)
        assert err <= 1e-4
        assert_zero_grads(loss, pre_bn[:2])


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        dict(patch_size=7), dict(embed_dim=65), dict(depth=0), dict(skip_layers=[3, 1]),
        dict(skip_layers=[1, 6]), dict(decoder_channels=[64, 32]), dict(num_classes=1),
        dict(skip_layers=[0, 1, 2, 3]),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            ModelConfig(**kwargs)

    def test_derived(self):
        cfg = ModelConfig()
        assert cfg.grid == (8, 8) and cfg.n_tokens == 64 and cfg.head_dim == 16


class TestPredict:
    def test_argmax(self):
        probs = np.array([[[0.2, 0.6]], [[0.8, 0.4]]])
        assert np.array_equal(predict_mask(probs), [[1, 0]])

    def test_ties_lowest_class(self):
        assert np.array_equal(predict_mask(np.full((3, 2, 2), 1 / 3)), np.zeros((2, 2)))

    def test_one_hot_roundtrip(self, rng):
        mask = rng.integers(0, 4, size=(2, 5, 6))
        planes = one_hot(mask, 4)
        assert planes.shape == (2, 4, 5, 6)
        assert np.array_equal(predict_mask(planes), mask)
