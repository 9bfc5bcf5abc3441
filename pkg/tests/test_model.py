"""Model tests.

The key oracle is ``forward_oracle``: a straight-line numpy transcription
of the forward pass that never touches the autodiff engine.  Everything
the engine computes is checked against it.
"""

import numpy as np
import pytest
from scipy.special import erf

from promptrefine import autodiff as ad
from promptrefine import model as mdl
from promptrefine.losses import ASLConfig, asl, bce


def make_model(seed=0, c=4, v=3, d0=5, d=8, heads=2, ffn=6, m=5, literal=False):
    rng = np.random.default_rng(seed + 999)
    emb = mdl.SemanticEmbedding(
        W=ad.constant(rng.standard_normal((c, m))),
        class_names=[f"class_{i:02d}" for i in range(c)],
    )
    dims = mdl.ModelDims(d0=d0, d=d, v=v, c=c, heads=heads, ffn=ffn)
    return mdl.init_model(dims, emb, seed=seed, literal_equations=literal)


# --- straight-line oracle ---------------------------------------------------

def gelu_np(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def softmax_np(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def ln_np(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def forward_oracle(features, params, literal):
    pi = params.prompt_init
    it = params.interaction
    F = features @ params.projection.w.data + params.projection.b.data
    P = gelu_np(params.embedding.W.data @ pi.w1.data + pi.b1.data) @ pi.w2.data + pi.b2.data
    Z = np.vstack([F, P])
    d = P.shape[1]
    if literal:
        q = P @ it.w_q.data
        k = Z @ it.w_k.data
        vv = Z @ it.w_v.data
        a = softmax_np(q @ k.T / np.sqrt(d))
        refined = gelu_np((a @ vv) @ it.w_ffn_in.data + it.b_ffn_in.data) \
            @ it.w_ffn_out.data + it.b_ffn_out.data
    else:
        q = Z @ it.w_q.data
        k = Z @ it.w_k.data
        vv = Z @ it.w_v.data
        dh = d // it.heads
        outs = []
        for h in range(it.heads):
            sl = slice(h * dh, (h + 1) * dh)
            a = softmax_np(q[:, sl] @ k[:, sl].T / np.sqrt(dh))
            outs.append(a @ vv[:, sl])
        z1 = ln_np(Z + np.hstack(outs) @ it.w_attn_out.data,
                   it.ln1_gain.data, it.ln1_bias.data)
        ffn = gelu_np(z1 @ it.w_ffn_in.data + it.b_ffn_in.data) \
            @ it.w_ffn_out.data + it.b_ffn_out.data
        z2 = ln_np(z1 + ffn, it.ln2_gain.data, it.ln2_bias.data)
        refined = z2[features.shape[0]:]
    logits = (refined * P).sum(axis=1)
    return 1.0 / (1.0 + np.exp(-logits))


class TestShapesAndInit:
    def test_prompt_hidden_width_is_half_the_joint_width(self):
        """tau = 0.5 with d = 512 gives a 256-wide prompt hidden layer."""
        dims = mdl.ModelDims(d0=8, d=512, v=2, c=3, heads=8, ffn=16, tau=0.5)
        assert dims.t == 256
        rng = np.random.default_rng(0)
        emb = mdl.SemanticEmbedding(ad.constant(rng.standard_normal((3, 7))), ["a", "b", "c"])
        params = mdl.init_model(dims, emb, seed=1)
        assert params.prompt_init.w1.shape == (7, 256)
        assert params.prompt_init.w2.shape == (256, 512)

    def test_init_is_seed_deterministic(self):
        a = make_model(seed=5)
        b = make_model(seed=5)
        for name, t in a.learnable().items():
            np.testing.assert_array_equal(t.data, b.learnable()[name].data, err_msg=name)
        c = make_model(seed=6)
        assert any((t.data != c.learnable()[n].data).any()
                   for n, t in a.learnable().items() if t.size > 1)

    def test_biases_zero_gains_one_weights_bounded(self):
        params = make_model(seed=3)
        assert (params.projection.b.data == 0).all()
        assert (params.interaction.ln1_gain.data == 1).all()
        assert (params.interaction.ln2_bias.data == 0).all()
        w = params.projection.w
        assert np.abs(w.data).max() <= 1.0 / np.sqrt(params.dims.d0)

    def test_embedding_must_be_frozen(self):
        with pytest.raises(ValueError, match="frozen"):
            mdl.SemanticEmbedding(ad.parameter(np.zeros((2, 3))), ["a", "b"])

    def test_dims_validation(self):
        with pytest.raises(ValueError, match="divisible"):
            mdl.ModelDims(d0=4, d=10, v=2, c=2, heads=3, ffn=4)
        with pytest.raises(ValueError, match="hidden width"):
            mdl.ModelDims(d0=4, d=2, v=2, c=2, heads=1, ffn=4, tau=0.1)

    def test_feature_shape_error_names_shapes(self):
        params = make_model()
        with pytest.raises(ad.ShapeError):
            mdl.forward(np.zeros((7, 7)), params)


class TestForwardValues:
    @pytest.mark.parametrize("literal", [False, True])
    def test_forward_matches_straight_line_oracle(self, literal):
        rng = np.random.default_rng(42)
        for seed in range(4):
            params = make_model(seed=seed, literal=literal)
            features = rng.standard_normal((params.dims.v, params.dims.d0))
            got = mdl.forward(features, params).data
            want = forward_oracle(features, params, literal)
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)

    def test_scores_are_probabilities(self):
        rng = np.random.default_rng(1)
        params = make_model(seed=2)
        s = mdl.forward(rng.standard_normal((3, 5)), params).data
        assert s.shape == (4,)
        assert ((s > 0) & (s < 1)).all()

    def test_classify_scalar_oracle(self):
        """classify is sigmoid of the per-row dot product and involves no
        cross-class mixing."""
        refined = ad.constant(np.array([[1.0, 2.0], [0.5, -1.0]]))
        initial = ad.constant(np.array([[3.0, -1.0], [2.0, 2.0]]))
        s = mdl.classify(refined, initial).data
        want = 1.0 / (1.0 + np.exp(-np.array([1.0, -1.0])))
        np.testing.assert_allclose(s, want, rtol=1e-15)

    def test_literal_and_standard_paths_differ(self):
        rng = np.random.default_rng(8)
        params = make_model(seed=4)
        features = rng.standard_normal((3, 5))
        s_std = mdl.forward(features, params, literal_equations=False).data
        s_lit = mdl.forward(features, params, literal_equations=True).data
        assert not np.allclose(s_std, s_lit)

    def test_prompt_initialization_ignores_everything_but_embedding(self):
        """Same weights -> bitwise-identical prompts, call after call."""
        params = make_model(seed=9)
        p1 = mdl.init_prompts(params.embedding, params.prompt_init).data
        p2 = mdl.init_prompts(params.embedding, params.prompt_init).data
        np.testing.assert_array_equal(p1, p2)

    def test_forward_batch_matches_per_sample_forward(self):
        rng = np.random.default_rng(12)
        params = make_model(seed=10)
        feats = [rng.standard_normal((3, 5)) for _ in range(4)]
        batched = mdl.forward_batch(feats, params).data
        singles = np.stack([mdl.forward(f, params).data for f in feats])
        np.testing.assert_array_equal(batched, singles)

    def test_refined_prompts_have_one_row_per_class(self):
        params = make_model(seed=0)
        rng = np.random.default_rng(2)
        _, prompts = mdl.forward_with_prompts(rng.standard_normal((3, 5)), params)
        assert prompts.initial.shape == (4, 8)
        assert prompts.refined.shape == (4, 8)


class TestPermutationEquivariance:
    @pytest.mark.parametrize("literal", [False, True])
    def test_permuting_classes_permutes_scores(self, literal):
        """No positional information touches the class axis: permuting the
        embedding rows permutes the per-class scores identically."""
        rng = np.random.default_rng(42)
        params = make_model(seed=7, literal=literal)
        features = rng.standard_normal((params.dims.v, params.dims.d0))
        base = mdl.forward(features, params).data

        perm = rng.permutation(params.dims.c)
        emb_p = mdl.SemanticEmbedding(
            W=ad.constant(params.embedding.W.data[perm]),
            class_names=[params.embedding.class_names[i] for i in perm],
        )
        permuted_params = mdl.ModelParams(
            dims=params.dims, embedding=emb_p, projection=params.projection,
            prompt_init=params.prompt_init, interaction=params.interaction,
            literal_equations=literal)
        permuted = mdl.forward(features, permuted_params).data
        np.testing.assert_allclose(permuted, base[perm], rtol=0, atol=1e-10)


class TestDualPathGradients:
    def test_decomposition_total_equals_sum_of_routes(self):
        rng = np.random.default_rng(42)
        for seed in range(8):
            c = int(rng.integers(2, 6))
            heads = int(rng.choice([1, 2]))
            params = make_model(seed=seed, c=c, v=int(rng.integers(1, 5)),
                                d0=int(rng.integers(2, 7)), d=4 * heads,
                                heads=heads, ffn=int(rng.integers(2, 9)),
                                m=int(rng.integers(2, 7)))
            features = rng.standard_normal((params.dims.v, params.dims.d0))
            labels = (rng.random(c) < 0.5).astype(float)
            g_total, g_direct, g_via = mdl.dual_path_grads(
                features, labels, params, lambda s, y: asl(s, y, ASLConfig()))
            np.testing.assert_allclose(g_total, g_direct + g_via, rtol=0, atol=1e-10)

    def test_zeroed_interaction_kills_the_indirect_route(self):
        """On the literal path with W_q = W_k = W_v = 0 and a zeroed
        feed-forward, the refined prompts are constant in P, so the entire
        gradient flows through the classifier route."""
        params = make_model(seed=1, literal=True)
        for name in ("w_q", "w_k", "w_v", "w_ffn_out"):
            getattr(params.interaction, name).data[:] = 0.0
        # keep the refined prompts nonzero (just constant in P), so the
        # direct classifier route still carries gradient
        params.interaction.b_ffn_out.data[:] = 0.7
        rng = np.random.default_rng(0)
        features = rng.standard_normal((3, 5))
        labels = np.array([1.0, 0.0, 1.0, 0.0])
        g_total, g_direct, g_via = mdl.dual_path_grads(
            features, labels, params, bce)
        np.testing.assert_array_equal(g_via, np.zeros_like(g_via))
        np.testing.assert_allclose(g_total, g_direct, rtol=0, atol=1e-15)
        assert np.linalg.norm(g_direct) > 0

    def test_both_routes_carry_gradient_in_general(self):
        rng = np.random.default_rng(5)
        params = make_model(seed=11)
        features = rng.standard_normal((3, 5))
        labels = np.array([1.0, 0.0, 0.0, 1.0])
        _, g_direct, g_via = mdl.dual_path_grads(features, labels, params, bce)
        assert np.linalg.norm(g_direct) > 0
        assert np.linalg.norm(g_via) > 0


class TestFullModelGradients:
    @pytest.mark.parametrize("literal", [False, True])
    def test_quick_gradient_check(self, literal):
        """Small smoke version of the exhaustive check in the acceptance
        suite: every learnable parameter against central differences."""
        params = make_model(seed=3, c=3, v=2, d0=4, d=8, heads=2, ffn=5, m=4,
                            literal=literal)
        rng = np.random.default_rng(42)
        features = rng.standard_normal((2, 4))
        labels = (rng.random(3) < 0.5).astype(float)

        def f():
            return asl(mdl.forward(features, params), labels, ASLConfig())

        result = ad.grad_check(f, params.learnable(), eps=1e-5)
        assert result.max_rel_error < 1e-4, str(result)
