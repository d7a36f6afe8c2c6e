import numpy as np
import pytest

from tgvad import autodiff as ad
from tgvad.encoders import (
    MAX_POSITIONS,
    EncoderConfig,
    MultiHeadAttention,
    TransformerLayer,
    UnimodalEncoder,
    msa,
    parse_modalities,
    transformer_layer,
)
from tgvad.errors import AlignmentError, ConfigError, ShapeError
from tgvad.gradcheck import check_gradients


def _zero_all(module):
    for p in module.parameters():
        p.data = np.zeros_like(p.data)


class TestParseModalities:
    @pytest.mark.parametrize("spec", ["T,R,F", "TRF", ["T", "R", "F"], " t , r , f "])
    def test_forms(self, spec):
        assert parse_modalities(spec) == ("T", "R", "F")

    @pytest.mark.parametrize("spec", ["T,X", "T,T", ""])
    def test_rejects(self, spec):
        with pytest.raises(ConfigError):
            parse_modalities(spec)


class TestProjection:
    def test_zero_features_give_zero_tokens(self, rng):
        enc = UnimodalEncoder({"R": 6}, EncoderConfig(d_embed=8, n_heads=2, positional="none"), rng)
        z = enc.project("R", np.zeros((3, 6)))
        assert np.array_equal(z.data, np.zeros((3, 8)))

    def test_default_width(self, rng):
        enc = UnimodalEncoder({"R": 32}, EncoderConfig(), rng)
        assert enc.project("R", rng.normal(size=(7, 32))).shape == (7, 128)

    def test_positions_break_ties(self, rng):
        enc = UnimodalEncoder({"R": 4}, EncoderConfig(d_embed=8, n_heads=2), rng)
        z = enc.project("R", np.tile(rng.normal(size=(1, 4)), (3, 1))).data
        assert not np.allclose(z[0], z[1]) and not np.allclose(z[1], z[2])

    def test_long_video_clamps_to_last_position(self, rng):
        enc = UnimodalEncoder({"R": 2}, EncoderConfig(d_embed=4, n_heads=1), rng)
        x = np.zeros((MAX_POSITIONS + 3, 2))
        z = enc.project("R", x).data
        np.testing.assert_array_equal(z[MAX_POSITIONS - 1], z[-1])

    def test_width_mismatch(self, rng):
        enc = UnimodalEncoder({"R": 4}, EncoderConfig(d_embed=8, n_heads=2), rng)
        with pytest.raises(ConfigError):
            enc.project("R", np.zeros((2, 5)))


class TestAttention:
    def test_single_token_reduces_to_value_path(self, rng):
        attn = MultiHeadAttention(8, 2, rng)
        x = rng.normal(size=(1, 8))
        # softmax over one logit is 1, so each head returns its value slice unchanged
        expected = (x @ attn.w_v.weight.data) @ attn.w_o.weight.data + attn.w_o.bias.data
        np.testing.assert_allclose(msa(attn, ad.Tensor(x)).data, expected, rtol=1e-12)

    def test_weights_rows_sum_to_one(self, rng):
        attn = MultiHeadAttention(8, 4, rng)
        for a in attn.attention_weights(ad.Tensor(rng.normal(size=(6, 8)))):
            np.testing.assert_allclose(a.data.sum(axis=1), 1.0, atol=1e-12)

    def test_scale_uses_model_width(self, rng):
        attn = MultiHeadAttention(8, 2, rng)
        x = rng.normal(size=(3, 8))
        q, k = x @ attn.w_q.weight.data, x @ attn.w_k.weight.data
        logits = q[:, :4] @ k[:, :4].T / np.sqrt(8)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        np.testing.assert_allclose(attn.attention_weights(ad.Tensor(x))[0].data, e / e.sum(1, keepdims=True), rtol=1e-12)

    def test_row_permutation_equivariance(self, rng):
        attn = MultiHeadAttention(8, 2, rng)
        x = rng.normal(size=(4, 8))
        perm = np.array([2, 0, 3, 1])
        out = msa(attn, ad.Tensor(x)).data
        out_perm = msa(attn, ad.Tensor(x[perm])).data
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-12)

    def test_heads_must_divide_width(self, rng):
        with pytest.raises(ConfigError):
            MultiHeadAttention(10, 4, rng)

    def test_wrong_input_width(self, rng):
        with pytest.raises(ShapeError):
            MultiHeadAttention(8, 2, rng)(ad.Tensor(np.zeros((2, 6))))


class TestTransformerLayer:
    def test_zero_weights_are_identity(self, rng):
        layer = TransformerLayer(8, 2, 32, rng)
        _zero_all(layer)
        x = rng.normal(size=(5, 8))
        np.testing.assert_array_equal(transformer_layer(layer, ad.Tensor(x)).data, x)

    @pytest.mark.parametrize("n", [1, 5, 33])
    def test_shape_preserved(self, rng, n):
        layer = TransformerLayer(8, 2, 32, rng)
        assert layer(ad.Tensor(rng.normal(size=(n, 8)))).shape == (n, 8)

    def test_input_gradient(self, rng):
        layer = TransformerLayer(8, 2, 16, rng)
        x = ad.parameter(rng.normal(size=(3, 8)))
        assert check_gradients(lambda: ad.total(layer(x)), [x], h=1e-4) < 1e-3

    def test_cross_layer_requires_context(self, rng):
        layer = TransformerLayer(8, 2, 16, rng, cross=True)
        with pytest.raises(ConfigError):
            layer(ad.Tensor(np.zeros((1, 8))))

    def test_cross_uniform_attention_is_mean_value(self, rng):
        layer = TransformerLayer(8, 2, 16, rng, cross=True)
        layer.attn.w_q.weight.data[:] = 0.0
        layer.attn.w_k.weight.data[:] = 0.0
        _zero_all(layer.ffn)
        new = rng.normal(size=(1, 8))
        prev = rng.normal(size=(2, 8))
        # hand evaluation: uniform attention averages the value projections of LN(context)
        mu = prev.mean(axis=1, keepdims=True)
        var = prev.var(axis=1, keepdims=True)
        ctx = (prev - mu) / np.sqrt(var + ad.LN_EPS)
        v = ctx @ layer.attn.w_v.weight.data
        expected = v.mean(axis=0, keepdims=True) @ layer.attn.w_o.weight.data + new
        np.testing.assert_allclose(layer(ad.Tensor(new), ad.Tensor(prev)).data, expected, rtol=1e-10)


class TestUnimodalEncoder:
    def test_shared_layers_give_identical_outputs(self, rng):
        enc = UnimodalEncoder({"R": 3, "F": 3}, EncoderConfig(d_embed=8, n_heads=2), rng)
        enc.projections["F"].weight.data = enc.projections["R"].weight.data.copy()
        enc.projections["F"].bias.data = enc.projections["R"].bias.data.copy()
        x = rng.normal(size=(4, 3))
        out = enc({"R": x, "F": x})
        np.testing.assert_array_equal(out["R"].data, out["F"].data)

    def test_default_applies_one_layer(self, rng):
        enc = UnimodalEncoder({"R": 3}, EncoderConfig(), rng)
        assert len(enc.layers) == 1

    def test_deterministic(self):
        x = np.random.default_rng(0).normal(size=(5, 3))
        outs = [
            UnimodalEncoder({"R": 3}, EncoderConfig(d_embed=8, n_heads=2), np.random.default_rng(9)).encode("R", x).data
            for _ in range(2)
        ]
        assert np.array_equal(outs[0], outs[1])

    def test_shared_weight_mutation_affects_all_modalities(self, rng):
        enc = UnimodalEncoder({"R": 3, "F": 2}, EncoderConfig(d_embed=8, n_heads=2), rng)
        feats = {"R": rng.normal(size=(3, 3)), "F": rng.normal(size=(3, 2))}
        before = {m: z.data.copy() for m, z in enc(feats).items()}
        # a constant shift would cancel against the zero-mean LayerNorm output
        enc.layers[0].ffn.layers[0].weight.data += rng.normal(0.0, 0.1, size=(8, 32))
        after = enc(feats)
        assert all(not np.allclose(before[m], after[m].data) for m in feats)

    def test_projection_mutation_affects_only_its_modality(self, rng):
        enc = UnimodalEncoder({"R": 3, "F": 2}, EncoderConfig(d_embed=8, n_heads=2), rng)
        feats = {"R": rng.normal(size=(3, 3)), "F": rng.normal(size=(3, 2))}
        before = {m: z.data.copy() for m, z in enc(feats).items()}
        enc.projections["R"].weight.data += rng.normal(0.0, 0.1, size=(3, 8))
        after = enc(feats)
        assert not np.allclose(before["R"], after["R"].data)
        assert np.array_equal(before["F"], after["F"].data)

    @pytest.mark.parametrize("n", [1, 2, 17])
    def test_output_shape(self, rng, n):
        enc = UnimodalEncoder({"A": 5}, EncoderConfig(d_embed=8, n_heads=2), rng)
        assert enc.encode("A", rng.normal(size=(n, 5))).shape == (n, 8)

    def test_permutation_equivariance_without_positions(self, rng):
        enc = UnimodalEncoder({"R": 3}, EncoderConfig(d_embed=8, n_heads=2, positional="none"), rng)
        x = rng.normal(size=(6, 3))
        perm = rng.permutation(6)
        np.testing.assert_allclose(enc.encode("R", x[perm]).data, enc.encode("R", x).data[perm], atol=1e-12)

    def test_snippet_count_mismatch(self, rng):
        enc = UnimodalEncoder({"R": 3, "F": 3}, EncoderConfig(d_embed=8, n_heads=2), rng)
        with pytest.raises(AlignmentError):
            enc({"R": np.zeros((3, 3)), "F": np.zeros((4, 3))})
