"""Attention operator tests: residual identities, straight-line oracles,
pyramid plumbing, and gradient checks."""

import numpy as np
import pytest

from stakit import attention as att
from stakit.attention import (
    AttentionWeights,
    DualMlpWeights,
    FeaturePyramid,
    MlpWeights,
    TokenBundle,
)

from helpers import loop_attention, loop_bilinear, loop_conv3x3, loop_dual


def weight_lists(w: AttentionWeights):
    return ([m.tolist() for m in w.w_q], [m.tolist() for m in w.w_k],
            [m.tolist() for m in w.w_v], w.w_o.tolist())


def mlp_lists(m: MlpWeights):
    return (m.w1.tolist(), m.b1.tolist(), m.w2.tolist(), m.b2.tolist())


# ---------------------------------------------------------------------------
# weight containers


def test_attention_weights_validate_shapes():
    eye = np.eye(3)
    with pytest.raises(ValueError, match="one matrix per head"):
        AttentionWeights(w_q=[eye], w_k=[eye, eye], w_v=[eye], w_o=eye)
    with pytest.raises(ValueError, match="w_k.h0"):
        AttentionWeights(w_q=[eye], w_k=[np.eye(2)], w_v=[eye], w_o=eye)
    with pytest.raises(ValueError, match="w_o"):
        AttentionWeights(w_q=[eye], w_k=[eye], w_v=[eye], w_o=np.eye(4))


def test_token_bundle_validates_shapes():
    with pytest.raises(ValueError, match="2-D"):
        TokenBundle(tokens=np.zeros(3))
    with pytest.raises(ValueError, match="class token"):
        TokenBundle(tokens=np.zeros((2, 3)), class_token=np.zeros(2))
    with pytest.raises(ValueError, match="positional"):
        TokenBundle(tokens=np.zeros((2, 3)), class_token=np.zeros(3),
                    positional=np.zeros((2, 3)))  # needs 3 rows with the class token


def test_mlp_weights_validate_shapes():
    with pytest.raises(ValueError, match="mlp shapes"):
        MlpWeights(np.zeros((2, 4)), np.zeros(4), np.zeros((4, 3)), np.zeros(3))


# ---------------------------------------------------------------------------
# mha


def test_mha_single_key_identity_projections():
    # softmax over one key is 1, so the output is queries + that value row
    q = np.array([[1.0, 2.0, -1.0], [0.5, 0.0, 3.0]])
    kv = np.array([[10.0, 20.0, 30.0]])
    out = att.mha(TokenBundle(q), TokenBundle(kv), AttentionWeights.identity(3))
    assert np.allclose(out.tokens, q + kv, atol=1e-12, rtol=0)


def test_mha_zero_values_is_residual_identity():
    rng = np.random.default_rng(10)
    q = TokenBundle(rng.normal(size=(3, 4)))
    kv = TokenBundle(rng.normal(size=(5, 4)))
    w = AttentionWeights.random(rng, 4, 2).with_zero_values()
    out = att.mha(q, kv, w)
    assert np.array_equal(out.tokens, q.tokens)


def test_mha_zero_output_projection_is_residual_identity():
    rng = np.random.default_rng(11)
    q = TokenBundle(rng.normal(size=(3, 4)))
    kv = TokenBundle(rng.normal(size=(5, 4)))
    w = AttentionWeights.random(rng, 4, 2)
    w.w_o[:] = 0.0
    out = att.mha(q, kv, w)
    assert np.array_equal(out.tokens, q.tokens)


def test_mha_matches_straight_line_oracle():
    rng = np.random.default_rng(12)
    q = TokenBundle(rng.normal(size=(2, 4)))
    kv = TokenBundle(rng.normal(size=(3, 4)))
    w = AttentionWeights.random(rng, 4, 2)
    out = att.mha(q, kv, w)
    expected = np.array(loop_attention(q.tokens.tolist(), kv.tokens.tolist(),
                                       *weight_lists(w))) + q.tokens
    assert np.allclose(out.tokens, expected, atol=1e-12, rtol=0)


def test_mha_maps_are_row_stochastic():
    rng = np.random.default_rng(13)
    q = TokenBundle(rng.normal(size=(4, 6)))
    kv = TokenBundle(rng.normal(size=(7, 6)))
    w = AttentionWeights.random(rng, 6, 3)
    out, maps = att.mha_with_maps(q, kv, w)
    assert out.tokens.shape == (4, 6)
    assert len(maps) == 3
    for m in maps:
        assert m.shape == (4, 7)
        assert np.all(m >= 0)
        assert np.allclose(m.sum(axis=1), 1.0, atol=1e-12, rtol=0)


def test_mha_key_order_does_not_matter():
    rng = np.random.default_rng(14)
    q = TokenBundle(rng.normal(size=(3, 4)))
    kv = rng.normal(size=(5, 4))
    w = AttentionWeights.random(rng, 4, 2)
    out = att.mha(q, TokenBundle(kv), w)
    perm = rng.permutation(5)
    out_perm = att.mha(q, TokenBundle(kv[perm]), w)
    assert np.allclose(out.tokens, out_perm.tokens, atol=1e-12, rtol=0)


def test_mha_width_mismatch_error():
    with pytest.raises(ValueError, match="token width mismatch"):
        att.mha(TokenBundle(np.zeros((2, 3))), TokenBundle(np.zeros((2, 4))),
                AttentionWeights.identity(3))


# ---------------------------------------------------------------------------
# frame-guided pooling


def test_pooling_collapses_to_query_token_count():
    rng = np.random.default_rng(20)
    last = TokenBundle(rng.normal(size=(4, 6)))
    video = TokenBundle(rng.normal(size=(12, 6)))  # 3 frames x 4 tokens
    out = att.frame_guided_pooling(last, video, AttentionWeights.random(rng, 6, 2))
    assert out.tokens.shape == (4, 6)


def test_pooling_single_frame_zero_output_projection():
    rng = np.random.default_rng(21)
    last = rng.normal(size=(3, 4))
    w = AttentionWeights.identity(4)
    w.w_o[:] = 0.0
    out = att.frame_guided_pooling(TokenBundle(last), TokenBundle(last.copy()), w)
    assert np.array_equal(out.tokens, last)


def test_pooling_zero_values_residual_identity():
    rng = np.random.default_rng(22)
    last = TokenBundle(rng.normal(size=(2, 4)))
    video = TokenBundle(rng.normal(size=(6, 4)))
    w = AttentionWeights.random(rng, 4, 2).with_zero_values()
    out = att.frame_guided_pooling(last, video, w)
    assert np.array_equal(out.tokens, last.tokens)


def test_pooling_matches_straight_line_oracle():
    rng = np.random.default_rng(23)
    last = TokenBundle(rng.normal(size=(2, 2)))
    video = TokenBundle(rng.normal(size=(4, 2)))  # t=2 frames of N=2 tokens
    w = AttentionWeights.random(rng, 2, 1)
    out = att.frame_guided_pooling(last, video, w)
    expected = np.array(loop_attention(last.tokens.tolist(), video.tokens.tolist(),
                                       *weight_lists(w))) + last.tokens
    assert np.allclose(out.tokens, expected, atol=1e-12, rtol=0)


def test_pooling_normalized_inputs_keep_raw_residual():
    from helpers import loop_layer_norm
    rng = np.random.default_rng(24)
    last = TokenBundle(rng.normal(size=(2, 4)))
    video = TokenBundle(rng.normal(size=(6, 4)))
    w = AttentionWeights.random(rng, 4, 2)
    out = att.frame_guided_pooling(last, video, w, normalize_inputs=True)
    q_n = loop_layer_norm(last.tokens.tolist(), att.LN_EPS)
    kv_n = loop_layer_norm(video.tokens.tolist(), att.LN_EPS)
    expected = np.array(loop_attention(q_n, kv_n, *weight_lists(w))) + last.tokens
    assert np.allclose(out.tokens, expected, atol=1e-12, rtol=0)


def test_pooling_rejects_more_queries_than_stack():
    rng = np.random.default_rng(25)
    with pytest.raises(ValueError, match="only has"):
        att.frame_guided_pooling(TokenBundle(rng.normal(size=(5, 4))),
                                 TokenBundle(rng.normal(size=(3, 4))),
                                 AttentionWeights.random(rng, 4, 2))


# ---------------------------------------------------------------------------
# dual attention


def make_dual_inputs(rng, n=2, d=4, with_pos=True):
    def bundle():
        return TokenBundle(
            tokens=rng.normal(size=(n, d)),
            class_token=rng.normal(size=d),
            positional=rng.normal(scale=0.3, size=(n + 1, d)) if with_pos else None,
        )
    return bundle(), bundle()


def test_dual_zero_values_and_zero_mlp_returns_position_embedded_inputs():
    rng = np.random.default_rng(30)
    image, video = make_dual_inputs(rng)
    w_i = AttentionWeights.random(rng, 4, 2).with_zero_values()
    w_v = AttentionWeights.random(rng, 4, 2).with_zero_values()
    mlp = DualMlpWeights(image=MlpWeights.zeros(4), video=MlpWeights.zeros(4))
    out_i, out_v = att.dual_attention(image, video, w_i, w_v, mlp)
    exp_i = np.concatenate([image.tokens, image.class_token[None]]) + image.positional
    exp_v = np.concatenate([video.tokens, video.class_token[None]]) + video.positional
    assert np.array_equal(np.concatenate([out_i.tokens, out_i.class_token[None]]), exp_i)
    assert np.array_equal(np.concatenate([out_v.tokens, out_v.class_token[None]]), exp_v)


def test_dual_without_positional_residual_identity():
    rng = np.random.default_rng(31)
    image, video = make_dual_inputs(rng, with_pos=False)
    w_i = AttentionWeights.random(rng, 4, 2).with_zero_values()
    w_v = AttentionWeights.random(rng, 4, 2).with_zero_values()
    mlp = DualMlpWeights(image=MlpWeights.zeros(4), video=MlpWeights.zeros(4))
    out_i, out_v = att.dual_attention(image, video, w_i, w_v, mlp)
    assert np.array_equal(out_i.tokens, image.tokens)
    assert np.array_equal(out_i.class_token, image.class_token)
    assert np.array_equal(out_v.tokens, video.tokens)
    assert np.array_equal(out_v.class_token, video.class_token)


def test_dual_shape_conservation():
    rng = np.random.default_rng(32)
    image, video = make_dual_inputs(rng, n=3, d=6)
    w = AttentionWeights.random(rng, 6, 2)
    mlp = DualMlpWeights(image=MlpWeights.random(rng, 6), video=MlpWeights.random(rng, 6))
    out_i, out_v = att.dual_attention(image, video, w, w, mlp)
    assert out_i.tokens.shape == (3, 6)
    assert out_i.class_token.shape == (6,)
    assert out_v.tokens.shape == (3, 6)
    assert out_v.class_token.shape == (6,)


@pytest.mark.parametrize("pre_norm", [True, False])
def test_dual_matches_straight_line_oracle(pre_norm):
    rng = np.random.default_rng(33)
    image, video = make_dual_inputs(rng, n=2, d=2)
    w_i = AttentionWeights.random(rng, 2, 1)
    w_v = AttentionWeights.random(rng, 2, 1)
    mlp = DualMlpWeights(image=MlpWeights.random(rng, 2, 3),
                         video=MlpWeights.random(rng, 2, 3))
    out_i, out_v = att.dual_attention(image, video, w_i, w_v, mlp, pre_norm=pre_norm)

    rows_i = (np.concatenate([image.tokens, image.class_token[None]]) + image.positional).tolist()
    rows_v = (np.concatenate([video.tokens, video.class_token[None]]) + video.positional).tolist()
    exp_i, exp_v = loop_dual(rows_i, rows_v, weight_lists(w_i), weight_lists(w_v),
                             mlp_lists(mlp.image), mlp_lists(mlp.video),
                             pre_norm, att.LN_EPS)
    got_i = np.concatenate([out_i.tokens, out_i.class_token[None]])
    got_v = np.concatenate([out_v.tokens, out_v.class_token[None]])
    assert np.allclose(got_i, np.array(exp_i), atol=1e-12, rtol=0)
    assert np.allclose(got_v, np.array(exp_v), atol=1e-12, rtol=0)


def test_dual_requires_class_tokens():
    rng = np.random.default_rng(34)
    plain = TokenBundle(rng.normal(size=(2, 4)))
    with_cls = TokenBundle(rng.normal(size=(2, 4)), class_token=rng.normal(size=4))
    w = AttentionWeights.random(rng, 4, 2)
    mlp = DualMlpWeights(image=MlpWeights.zeros(4), video=MlpWeights.zeros(4))
    with pytest.raises(ValueError, match="class token on the image side"):
        att.dual_attention(plain, with_cls, w, w, mlp)
    with pytest.raises(ValueError, match="class token on the video side"):
        att.dual_attention(with_cls, plain, w, w, mlp)


def test_dual_token_count_mismatch_error():
    rng = np.random.default_rng(35)
    a = TokenBundle(rng.normal(size=(2, 4)), class_token=rng.normal(size=4))
    b = TokenBundle(rng.normal(size=(3, 4)), class_token=rng.normal(size=4))
    w = AttentionWeights.random(rng, 4, 2)
    mlp = DualMlpWeights(image=MlpWeights.zeros(4), video=MlpWeights.zeros(4))
    with pytest.raises(ValueError, match="token-count mismatch"):
        att.dual_attention(a, b, w, w, mlp)


def test_dual_maps_shapes_and_row_sums():
    rng = np.random.default_rng(36)
    image, video = make_dual_inputs(rng, n=3, d=4)
    w = AttentionWeights.random(rng, 4, 2)
    mlp = DualMlpWeights(image=MlpWeights.random(rng, 4), video=MlpWeights.random(rng, 4))
    _, _, maps = att.dual_attention_with_maps(image, video, w, w, mlp)
    for side in ("image_queries", "video_queries"):
        assert len(maps[side]) == 2
        for m in maps[side]:
            assert m.shape == (4, 4)  # n + 1 rows each way
            assert np.allclose(m.sum(axis=1), 1.0, atol=1e-12, rtol=0)


# ---------------------------------------------------------------------------
# class-token fusion


def test_fuse_class_tokens_examples():
    x = np.array([1.5, -2.0])
    assert np.array_equal(att.fuse_class_tokens(np.zeros(2), x), x)
    assert np.array_equal(att.fuse_class_tokens(x, -x), np.zeros(2))
    assert np.array_equal(att.fuse_class_tokens(np.array([1.0, 2.0]), np.array([3.0, 5.0])),
                          np.array([4.0, 7.0]))


def test_fuse_class_tokens_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        att.fuse_class_tokens(np.zeros(2), np.zeros(3))


# ---------------------------------------------------------------------------
# conv and pyramids


IDENTITY_KERNEL = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]])


def test_conv3x3_identity_kernel():
    rng = np.random.default_rng(40)
    grid = rng.normal(size=(3, 4, 2))
    assert np.array_equal(att.conv3x3(grid, IDENTITY_KERNEL), grid)


def test_conv3x3_matches_loop_oracle():
    rng = np.random.default_rng(41)
    grid = rng.normal(size=(3, 3, 2))
    kernel = rng.normal(size=(3, 3))
    out = att.conv3x3(grid, kernel)
    expected = np.array(loop_conv3x3(grid.tolist(), kernel.tolist()))
    assert np.allclose(out, expected, atol=1e-12, rtol=0)


def test_conv3x3_validates_shapes():
    with pytest.raises(ValueError, match="kernel"):
        att.conv3x3(np.zeros((2, 2, 1)), np.zeros((2, 2)))
    with pytest.raises(ValueError, match="grid"):
        att.conv3x3(np.zeros((2, 2)), IDENTITY_KERNEL)


def test_build_pyramid_identity_single_level():
    rng = np.random.default_rng(42)
    tokens = rng.normal(size=(6, 3))
    pyr = att.build_pyramid(TokenBundle(tokens), 2, 3, [(2, 3)], IDENTITY_KERNEL)
    assert len(pyr.levels) == 1
    assert np.array_equal(pyr.levels[0], tokens.reshape(2, 3, 3))


def test_build_pyramid_constant_tokens():
    tokens = np.full((4, 2), 1.25)
    pyr = att.build_pyramid(TokenBundle(tokens), 2, 2, [(2, 2), (1, 1)], IDENTITY_KERNEL)
    assert np.allclose(pyr.levels[0], 1.25, atol=1e-12)
    assert np.allclose(pyr.levels[1], 1.25, atol=1e-12)


def test_build_pyramid_upsample_matches_bilinear_oracle():
    rng = np.random.default_rng(43)
    tokens = rng.normal(size=(4, 2))
    pyr = att.build_pyramid(TokenBundle(tokens), 2, 2, [(4, 4)], IDENTITY_KERNEL)
    expected = np.array(loop_bilinear(tokens.reshape(2, 2, 2).tolist(), 4, 4))
    assert np.allclose(pyr.levels[0], expected, atol=1e-12, rtol=0)


def test_build_pyramid_validates_inputs():
    tokens = TokenBundle(np.zeros((5, 2)))
    with pytest.raises(ValueError, match="do not tile"):
        att.build_pyramid(tokens, 2, 3, [(2, 3)], IDENTITY_KERNEL)
    good = TokenBundle(np.zeros((6, 2)))
    with pytest.raises(ValueError, match="at least one scale"):
        att.build_pyramid(good, 2, 3, [], IDENTITY_KERNEL)
    with pytest.raises(ValueError, match="kernels"):
        att.build_pyramid(good, 2, 3, [(2, 3), (1, 1)], [IDENTITY_KERNEL])
    with pytest.raises(ValueError, match="strictly decrease"):
        att.build_pyramid(good, 2, 3, [(1, 1), (2, 3)], IDENTITY_KERNEL)


def test_fuse_pyramids_identity_kernel_is_levelwise_sum():
    rng = np.random.default_rng(44)
    t_a = rng.normal(size=(4, 2))
    t_b = rng.normal(size=(4, 2))
    pyr_a = att.build_pyramid(TokenBundle(t_a), 2, 2, [(2, 2), (1, 1)], IDENTITY_KERNEL)
    pyr_b = att.build_pyramid(TokenBundle(t_b), 2, 2, [(2, 2), (1, 1)], IDENTITY_KERNEL)
    fused = att.fuse_pyramids(pyr_a, pyr_b)
    for la, lb, lf in zip(pyr_a.levels, pyr_b.levels, fused.levels):
        assert np.array_equal(lf, la + lb)


def test_fuse_pyramids_zero_addend():
    rng = np.random.default_rng(45)
    t_a = rng.normal(size=(4, 2))
    pyr_a = att.build_pyramid(TokenBundle(t_a), 2, 2, [(2, 2)], IDENTITY_KERNEL)
    pyr_z = att.build_pyramid(TokenBundle(np.zeros((4, 2))), 2, 2, [(2, 2)], IDENTITY_KERNEL)
    fused = att.fuse_pyramids(pyr_a, pyr_z)
    assert np.array_equal(fused.levels[0], pyr_a.levels[0])


def test_fuse_pyramids_shape_errors():
    rng = np.random.default_rng(46)
    one = att.build_pyramid(TokenBundle(rng.normal(size=(4, 2))), 2, 2, [(2, 2)], IDENTITY_KERNEL)
    two = att.build_pyramid(TokenBundle(rng.normal(size=(4, 2))), 2, 2, [(2, 2), (1, 1)],
                            IDENTITY_KERNEL)
    other = att.build_pyramid(TokenBundle(rng.normal(size=(4, 2))), 2, 2, [(3, 1)], IDENTITY_KERNEL)
    with pytest.raises(ValueError, match="level count"):
        att.fuse_pyramids(one, two)
    with pytest.raises(ValueError, match="shape mismatch"):
        att.fuse_pyramids(one, other)


def test_feature_pyramid_validation():
    with pytest.raises(ValueError, match="at least one level"):
        FeaturePyramid(levels=[], kernels=[])
    with pytest.raises(ValueError, match="kernels"):
        FeaturePyramid(levels=[np.zeros((2, 2, 1))], kernels=[])


# ---------------------------------------------------------------------------
# gradient checking


def test_grad_check_rejects_unknown_op_and_bad_eps():
    with pytest.raises(ValueError, match="unknown grad-check op"):
        att.grad_check("nope", (), ())
    inputs, weights = att.random_instance("mha", 0)
    with pytest.raises(ValueError, match="epsilon"):
        att.grad_check("mha", inputs, weights, epsilon=0.0)


def test_grad_check_linear_case_is_nearly_exact():
    # a single key/value bypasses the softmax, so the loss is quadratic in
    # each scalar and the central difference has no truncation error; a
    # large step then leaves only negligible cancellation roundoff
    rng = np.random.default_rng(50)
    q = TokenBundle(rng.normal(size=(2, 4)))
    kv = TokenBundle(rng.normal(size=(1, 4)))
    w = AttentionWeights.random(rng, 4, 1)
    report = att.grad_check("mha", (q, kv), w, epsilon=1e-2)
    assert report.max_rel_error <= 1e-9


@pytest.mark.parametrize("op", att.GRAD_CHECK_OPS)
def test_grad_check_all_ops_single_seed(op):
    inputs, weights = att.random_instance(op, 123, d_model=6, heads=2,
                                          n_tokens=2, mlp_hidden=8)
    report = att.grad_check(op, inputs, weights, epsilon=1e-5)
    assert report.max_rel_error <= 1e-5
    assert report.params_checked > 0
    assert report.worst  # names the worst tensor


def test_random_instance_is_reproducible():
    (q1, kv1), w1 = att.random_instance("mha", 7)
    (q2, kv2), w2 = att.random_instance("mha", 7)
    assert np.array_equal(q1.tokens, q2.tokens)
    assert np.array_equal(kv1.tokens, kv2.tokens)
    assert np.array_equal(w1.w_o, w2.w_o)
    (q3, _), _ = att.random_instance("mha", 8)
    assert not np.array_equal(q1.tokens, q3.tokens)


def test_grad_check_report_to_json():
    inputs, weights = att.random_instance("mha", 1, d_model=4, heads=1, n_tokens=2)
    report = att.grad_check("mha", inputs, weights)
    doc = report.to_json()
    assert set(doc) == {"max_rel_error", "params_checked", "worst"}
    assert isinstance(doc["max_rel_error"], float)
