"""Cross-attention operators with hand-written backward passes.

Three operators make up the feature-fusion stage of the anticipation
model:

* ``mha``: multi-head attention where queries and keys/values may come
  from different token sets, with the query tokens added back as a
  residual.
* ``frame_guided_pooling``: collapses a stack of video-frame tokens to
  one frame's worth of tokens by letting the last frame's tokens query
  the whole stack.
* ``dual_attention``: two symmetric cross-attention branches between an
  image token set and a video token set.  Each side gets a class token
  row appended, optional positional embeddings added into the residual
  stream, a pre-attention layer norm, and a residual MLP after the
  attention.

Every operator has an analytic backward pass for the scalar loss
``sum(output ** 2) / 2``; ``grad_check`` compares those gradients
against central finite differences and reports the worst offender.

Class-token fusion and the multi-scale feature pyramids that feed the
detection head live here too since they share the token layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import linalg

__all__ = [
    "AttentionWeights",
    "MlpWeights",
    "DualMlpWeights",
    "TokenBundle",
    "FeaturePyramid",
    "GradCheckReport",
    "mha",
    "mha_with_maps",
    "frame_guided_pooling",
    "frame_guided_pooling_with_maps",
    "dual_attention",
    "dual_attention_with_maps",
    "fuse_class_tokens",
    "conv3x3",
    "build_pyramid",
    "fuse_pyramids",
    "grad_check",
    "random_instance",
    "GRAD_CHECK_OPS",
]

LN_EPS = 1e-6


@dataclass
class AttentionWeights:
    """Projection weights for one multi-head attention block.

    w_q, w_k, w_v hold one (d_model, d_head) matrix per head; w_o maps the
    concatenated head outputs (heads * d_head) back to d_model.
    """

    w_q: list[np.ndarray]
    w_k: list[np.ndarray]
    w_v: list[np.ndarray]
    w_o: np.ndarray

    def __post_init__(self) -> None:
        if not self.w_q or len(self.w_q) != len(self.w_k) or len(self.w_q) != len(self.w_v):
            raise ValueError("w_q, w_k, w_v need one matrix per head")
        d_model, d_head = self.w_q[0].shape
        for name, mats in (("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v)):
            for h, m in enumerate(mats):
                if m.shape != (d_model, d_head):
                    raise ValueError(f"{name}.h{h} has shape {m.shape}, expected {(d_model, d_head)}")
        if self.w_o.shape != (len(self.w_q) * d_head, d_model):
            raise ValueError(
                f"w_o has shape {self.w_o.shape}, expected {(len(self.w_q) * d_head, d_model)}"
            )

    @property
    def heads(self) -> int:
        return len(self.w_q)

    @property
    def d_model(self) -> int:
        return self.w_q[0].shape[0]

    @property
    def d_head(self) -> int:
        return self.w_q[0].shape[1]

    @classmethod
    def identity(cls, d_model: int) -> "AttentionWeights":
        """Single head, all projections the identity. Handy in tests."""
        eye = np.eye(d_model)
        return cls(w_q=[eye.copy()], w_k=[eye.copy()], w_v=[eye.copy()], w_o=eye.copy())

    @classmethod
    def random(cls, rng: np.random.Generator, d_model: int, heads: int, d_head: int | None = None,
               scale: float = 0.5) -> "AttentionWeights":
        d_head = d_head if d_head is not None else d_model // heads
        draw = lambda r, c: rng.normal(scale=scale, size=(r, c))
        return cls(
            w_q=[draw(d_model, d_head) for _ in range(heads)],
            w_k=[draw(d_model, d_head) for _ in range(heads)],
            w_v=[draw(d_model, d_head) for _ in range(heads)],
            w_o=draw(heads * d_head, d_model),
        )

    def with_zero_values(self) -> "AttentionWeights":
        return replace(self, w_v=[np.zeros_like(m) for m in self.w_v])


@dataclass
class MlpWeights:
    """Two affine layers with a GELU between them (tanh form)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self) -> None:
        d, hidden = self.w1.shape
        if self.b1.shape != (hidden,) or self.w2.shape != (hidden, d) or self.b2.shape != (d,):
            raise ValueError(
                f"mlp shapes inconsistent: w1 {self.w1.shape}, b1 {self.b1.shape}, "
                f"w2 {self.w2.shape}, b2 {self.b2.shape}"
            )

    @classmethod
    def zeros(cls, d_model: int, hidden: int | None = None) -> "MlpWeights":
        hidden = hidden if hidden is not None else 4 * d_model
        return cls(np.zeros((d_model, hidden)), np.zeros(hidden), np.zeros((hidden, d_model)), np.zeros(d_model))

    @classmethod
    def random(cls, rng: np.random.Generator, d_model: int, hidden: int | None = None,
               scale: float = 0.5) -> "MlpWeights":
        hidden = hidden if hidden is not None else 4 * d_model
        return cls(
            rng.normal(scale=scale, size=(d_model, hidden)),
            rng.normal(scale=scale, size=hidden),
            rng.normal(scale=scale, size=(hidden, d_model)),
            rng.normal(scale=scale, size=d_model),
        )


@dataclass
class DualMlpWeights:
    """One residual MLP per dual-attention branch."""

    image: MlpWeights
    video: MlpWeights


@dataclass
class TokenBundle:
    """A token matrix plus optional class token and positional embeddings.

    tokens is (n, d_model); class_token, when present, is a length-d_model
    vector that ops append as an extra row; positional, when present, must
    cover tokens plus the class row.
    """

    tokens: np.ndarray
    class_token: np.ndarray | None = None
    positional: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.tokens.ndim != 2:
            raise ValueError(f"tokens must be 2-D, got shape {self.tokens.shape}")
        d = self.tokens.shape[1]
        if self.class_token is not None and self.class_token.shape != (d,):
            raise ValueError(f"class token has shape {self.class_token.shape}, expected ({d},)")
        if self.positional is not None:
            rows = self.tokens.shape[0] + (1 if self.class_token is not None else 0)
            if self.positional.shape != (rows, d):
                raise ValueError(
                    f"positional embeddings have shape {self.positional.shape}, expected ({rows}, {d})"
                )

    @property
    def d_model(self) -> int:
        return self.tokens.shape[1]


# ---------------------------------------------------------------------------
# shared attention core (no residual; callers add their own residual stream)


def _attend_forward(q_src: np.ndarray, kv_src: np.ndarray, w: AttentionWeights):
    if q_src.shape[1] != w.d_model or kv_src.shape[1] != w.d_model:
        raise ValueError(
            f"token width mismatch: queries {q_src.shape}, keys/values {kv_src.shape}, "
            f"weights expect d_model={w.d_model}"
        )
    scale = 1.0 / math.sqrt(w.d_head)
    heads = []
    outs = []
    for h in range(w.heads):
        q = linalg.matmul(q_src, w.w_q[h])
        k = linalg.matmul(kv_src, w.w_k[h])
        v = linalg.matmul(kv_src, w.w_v[h])
        scores = linalg.matmul(q, k.T) * scale
        probs = linalg.softmax_rows(scores)
        outs.append(linalg.matmul(probs, v))
        heads.append((q, k, v, probs))
    concat = np.concatenate(outs, axis=1)
    out = linalg.matmul(concat, w.w_o)
    cache = {"q_src": q_src, "kv_src": kv_src, "heads": heads, "concat": concat, "scale": scale}
    return out, cache


def _attend_backward(d_out: np.ndarray, cache: dict, w: AttentionWeights):
    q_src, kv_src = cache["q_src"], cache["kv_src"]
    scale = cache["scale"]
    d_concat = linalg.matmul(d_out, w.w_o.T)
    d_wo = linalg.matmul(cache["concat"].T, d_out)
    d_q_src = np.zeros_like(q_src)
    d_kv_src = np.zeros_like(kv_src)
    d_wq, d_wk, d_wv = [], [], []
    dh = w.d_head
    for h, (q, k, v, probs) in enumerate(cache["heads"]):
        d_o = d_concat[:, h * dh:(h + 1) * dh]
        d_probs = linalg.matmul(d_o, v.T)
        d_v = linalg.matmul(probs.T, d_o)
        # softmax jacobian: dS = P * (dP - rowsum(P * dP))
        d_scores = probs * (d_probs - np.sum(probs * d_probs, axis=1, keepdims=True))
        d_qk = d_scores * scale
        d_q = linalg.matmul(d_qk, k)
        d_k = linalg.matmul(d_qk.T, q)
        d_q_src += linalg.matmul(d_q, w.w_q[h].T)
        d_kv_src += linalg.matmul(d_k, w.w_k[h].T) + linalg.matmul(d_v, w.w_v[h].T)
        d_wq.append(linalg.matmul(q_src.T, d_q))
        d_wk.append(linalg.matmul(kv_src.T, d_k))
        d_wv.append(linalg.matmul(kv_src.T, d_v))
    grads = AttentionWeights(w_q=d_wq, w_k=d_wk, w_v=d_wv, w_o=d_wo)
    return d_q_src, d_kv_src, grads


# ---------------------------------------------------------------------------
# layer norm (no affine) and MLP with caches for the dual-attention backward


def _ln_forward(x: np.ndarray, eps: float):
    mu = x.mean(axis=1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=1, keepdims=True)
    std = np.sqrt(var + eps)
    xhat = (x - mu) / std
    return xhat, {"xhat": xhat, "std": std}


def _ln_backward(g: np.ndarray, cache: dict) -> np.ndarray:
    xhat, std = cache["xhat"], cache["std"]
    g_mean = g.mean(axis=1, keepdims=True)
    gx_mean = np.mean(g * xhat, axis=1, keepdims=True)
    return (g - g_mean - xhat * gx_mean) / std


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _gelu(x: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + _GELU_A * x ** 3)
    return 0.5 * x * (1.0 + np.tanh(u))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(u)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)


def _mlp_forward(x: np.ndarray, mw: MlpWeights):
    pre = linalg.matmul(x, mw.w1) + mw.b1
    act = _gelu(pre)
    out = linalg.matmul(act, mw.w2) + mw.b2
    return x + out, {"x": x, "pre": pre, "act": act}


def _mlp_backward(d_y: np.ndarray, cache: dict, mw: MlpWeights):
    d_out = d_y
    d_act = linalg.matmul(d_out, mw.w2.T)
    d_w2 = linalg.matmul(cache["act"].T, d_out)
    d_b2 = d_out.sum(axis=0)
    d_pre = d_act * _gelu_grad(cache["pre"])
    d_w1 = linalg.matmul(cache["x"].T, d_pre)
    d_b1 = d_pre.sum(axis=0)
    d_x = d_y + linalg.matmul(d_pre, mw.w1.T)
    return d_x, MlpWeights(d_w1, d_b1, d_w2, d_b2)


# ---------------------------------------------------------------------------
# public operators


def mha(queries: TokenBundle, keys_values: TokenBundle, weights: AttentionWeights) -> TokenBundle:
    """Residual multi-head attention: queries attend over keys/values.

    Output token count equals the query token count; the query tokens are
    added back to the attention output.  Zeroing w_v (or w_o) therefore
    returns the queries untouched.
    """
    out, _ = _attend_forward(queries.tokens, keys_values.tokens, weights)
    return TokenBundle(tokens=queries.tokens + out)


def mha_with_maps(queries: TokenBundle, keys_values: TokenBundle,
                  weights: AttentionWeights) -> tuple[TokenBundle, list[np.ndarray]]:
    """Like ``mha`` but also returns the per-head attention matrices."""
    out, cache = _attend_forward(queries.tokens, keys_values.tokens, weights)
    maps = [probs for (_, _, _, probs) in cache["heads"]]
    return TokenBundle(tokens=queries.tokens + out), maps


def frame_guided_pooling(last_frame: TokenBundle, video: TokenBundle,
                         weights: AttentionWeights, *, normalize_inputs: bool = False) -> TokenBundle:
    """Pool a token stack down to one frame guided by the last frame.

    The last frame's n tokens issue the queries; keys and values come from
    the full stack (t frames, t * n tokens).  The pooled result keeps the
    last frame as a residual, so identical projections with a zero output
    map reproduce the last frame exactly.  normalize_inputs applies a
    plain layer norm to both sides before the projections; the residual
    stays un-normalised either way.
    """
    bundle, _ = frame_guided_pooling_with_maps(last_frame, video, weights,
                                               normalize_inputs=normalize_inputs)
    return bundle


def frame_guided_pooling_with_maps(last_frame: TokenBundle, video: TokenBundle,
                                   weights: AttentionWeights, *,
                                   normalize_inputs: bool = False) -> tuple[TokenBundle, list[np.ndarray]]:
    if last_frame.tokens.shape[0] > video.tokens.shape[0]:
        raise ValueError(
            f"last frame has {last_frame.tokens.shape[0]} tokens but the video stack "
            f"only has {video.tokens.shape[0]}"
        )
    q_src, kv_src = last_frame.tokens, video.tokens
    if normalize_inputs:
        q_src, _ = _ln_forward(q_src, LN_EPS)
        kv_src, _ = _ln_forward(kv_src, LN_EPS)
    out, cache = _attend_forward(q_src, kv_src, weights)
    maps = [probs for (_, _, _, probs) in cache["heads"]]
    return TokenBundle(tokens=last_frame.tokens + out), maps


def _stack_with_class(bundle: TokenBundle, side: str) -> np.ndarray:
    if bundle.class_token is None:
        raise ValueError(f"dual_attention requires a class token on the {side} side")
    x = np.concatenate([bundle.tokens, bundle.class_token[None, :]], axis=0)
    if bundle.positional is not None:
        x = x + bundle.positional
    return x


def _dual_forward(image: TokenBundle, video: TokenBundle, w_image: AttentionWeights,
                  w_video: AttentionWeights, mlp: DualMlpWeights, pre_norm: bool, eps: float):
    if image.tokens.shape != video.tokens.shape:
        raise ValueError(
            f"token-count mismatch: image tokens {image.tokens.shape}, video tokens {video.tokens.shape}"
        )
    x_i = _stack_with_class(image, "image")
    x_v = _stack_with_class(video, "video")
    if pre_norm:
        n_i, ln_i = _ln_forward(x_i, eps)
        n_v, ln_v = _ln_forward(x_v, eps)
    else:
        n_i, ln_i = x_i, None
        n_v, ln_v = x_v, None
    att_i, cache_i = _attend_forward(n_i, n_v, w_image)
    att_v, cache_v = _attend_forward(n_v, n_i, w_video)
    h_i = x_i + att_i
    h_v = x_v + att_v
    y_i, mlp_i = _mlp_forward(h_i, mlp.image)
    y_v, mlp_v = _mlp_forward(h_v, mlp.video)
    cache = {"ln_i": ln_i, "ln_v": ln_v, "att_i": cache_i, "att_v": cache_v,
             "mlp_i": mlp_i, "mlp_v": mlp_v, "pre_norm": pre_norm,
             "has_pos_i": image.positional is not None, "has_pos_v": video.positional is not None}
    return y_i, y_v, cache


def _split_rows(y: np.ndarray) -> TokenBundle:
    return TokenBundle(tokens=y[:-1].copy(), class_token=y[-1].copy())


def dual_attention(image: TokenBundle, video: TokenBundle, w_image: AttentionWeights,
                   w_video: AttentionWeights, mlp: DualMlpWeights, *,
                   pre_norm: bool = True, eps: float = LN_EPS) -> tuple[TokenBundle, TokenBundle]:
    """Symmetric image/video cross-attention refinement.

    Each side's class token is appended as an extra row, positional
    embeddings (when supplied) are added into the residual stream, and a
    layer norm (pre_norm=True, the default) feeds the attention inputs.
    The image branch queries with image rows against video rows; the video
    branch swaps the roles.  Both branches end with a residual MLP.  With
    w_v and the MLP weights all zero each side comes back equal to its
    position-embedded residual stream.
    """
    y_i, y_v, _ = _dual_forward(image, video, w_image, w_video, mlp, pre_norm, eps)
    return _split_rows(y_i), _split_rows(y_v)


def dual_attention_with_maps(image: TokenBundle, video: TokenBundle, w_image: AttentionWeights,
                             w_video: AttentionWeights, mlp: DualMlpWeights, *,
                             pre_norm: bool = True, eps: float = LN_EPS):
    """``dual_attention`` plus the attention matrices of both branches."""
    y_i, y_v, cache = _dual_forward(image, video, w_image, w_video, mlp, pre_norm, eps)
    maps = {
        "image_queries": [p for (_, _, _, p) in cache["att_i"]["heads"]],
        "video_queries": [p for (_, _, _, p) in cache["att_v"]["heads"]],
    }
    return _split_rows(y_i), _split_rows(y_v), maps


def fuse_class_tokens(image_class: np.ndarray, video_class: np.ndarray) -> np.ndarray:
    """Elementwise sum of the two refined class tokens."""
    if image_class.shape != video_class.shape:
        raise ValueError(
            f"class token length mismatch: {image_class.shape} vs {video_class.shape}"
        )
    return image_class + video_class


# ---------------------------------------------------------------------------
# feature pyramids


def conv3x3(grid: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Depthwise 3x3 cross-correlation, stride 1, zero padding.

    The same 3x3 kernel is applied to every channel.  A kernel with a
    single centre tap of 1 is the identity.
    """
    grid = np.asarray(grid, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if grid.ndim != 3:
        raise ValueError(f"conv3x3 expects an (h, w, c) grid, got shape {grid.shape}")
    if kernel.shape != (3, 3):
        raise ValueError(f"conv3x3 kernel must be 3x3, got {kernel.shape}")
    h, w, _ = grid.shape
    padded = np.pad(grid, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros_like(grid)
    for u in range(3):
        for v in range(3):
            out += kernel[u, v] * padded[u:u + h, v:v + w, :]
    return out


@dataclass
class FeaturePyramid:
    """Per-scale feature grids plus the 3x3 smoothing kernel of each level.

    Levels are ordered largest to smallest; multi-level pyramids must have
    strictly decreasing spatial sizes and a shared channel count.
    """

    levels: list[np.ndarray]
    kernels: list[np.ndarray]

    def __post_init__(self) -> None:
        if not self.levels:
            raise ValueError("a pyramid needs at least one level")
        if len(self.kernels) != len(self.levels):
            raise ValueError(
                f"{len(self.levels)} levels but {len(self.kernels)} kernels"
            )
        c = self.levels[0].shape[2]
        prev = None
        for i, lvl in enumerate(self.levels):
            if lvl.ndim != 3 or lvl.shape[2] != c:
                raise ValueError(f"level {i} has shape {lvl.shape}, expected channels={c}")
            size = lvl.shape[0] * lvl.shape[1]
            if prev is not None and size >= prev:
                raise ValueError("pyramid levels must strictly decrease in spatial size")
            prev = size
        for i, k in enumerate(self.kernels):
            if k.shape != (3, 3):
                raise ValueError(f"kernel {i} must be 3x3, got {k.shape}")


def build_pyramid(bundle: TokenBundle, grid_h: int, grid_w: int,
                  scales: list[tuple[int, int]], kernels) -> FeaturePyramid:
    """Reshape tokens to a grid, resize to each scale, smooth with 3x3 convs.

    kernels may be one 3x3 array shared by all scales or one per scale.
    """
    n, d = bundle.tokens.shape
    if n != grid_h * grid_w:
        raise ValueError(f"{n} tokens do not tile a {grid_h}x{grid_w} grid")
    if not scales:
        raise ValueError("at least one scale is required")
    kernel_list = list(kernels) if isinstance(kernels, (list, tuple)) else [kernels] * len(scales)
    if len(kernel_list) != len(scales):
        raise ValueError(f"{len(scales)} scales but {len(kernel_list)} kernels")
    base = bundle.tokens.reshape(grid_h, grid_w, d)
    levels = []
    for (sh, sw), kern in zip(scales, kernel_list):
        resized = linalg.bilinear_resize(base, sh, sw)
        levels.append(conv3x3(resized, np.asarray(kern, dtype=np.float64)))
    return FeaturePyramid(levels=levels, kernels=[np.asarray(k, dtype=np.float64) for k in kernel_list])


def fuse_pyramids(a: FeaturePyramid, b: FeaturePyramid,
                  kernels: list[np.ndarray] | None = None) -> FeaturePyramid:
    """Sum two pyramids level by level, then smooth each sum with a 3x3 conv.

    The smoothing kernels default to the first pyramid's.  With identity
    kernels the result is the plain levelwise sum.
    """
    if len(a.levels) != len(b.levels):
        raise ValueError(f"level count mismatch: {len(a.levels)} vs {len(b.levels)}")
    for i, (la, lb) in enumerate(zip(a.levels, b.levels)):
        if la.shape != lb.shape:
            raise ValueError(f"level {i} shape mismatch: {la.shape} vs {lb.shape}")
    kernel_list = list(kernels) if kernels is not None else [k.copy() for k in a.kernels]
    if len(kernel_list) != len(a.levels):
        raise ValueError(f"{len(a.levels)} levels but {len(kernel_list)} kernels")
    fused = [conv3x3(la + lb, k) for (la, lb), k in zip(zip(a.levels, b.levels), kernel_list)]
    return FeaturePyramid(levels=fused, kernels=kernel_list)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Outcome of one analytic-vs-finite-difference comparison."""

    max_rel_error: float
    params_checked: int
    worst: str

    def to_json(self) -> dict:
        return {
            "max_rel_error": float(self.max_rel_error),
            "params_checked": int(self.params_checked),
            "worst": self.worst,
        }


def _named_attention_arrays(prefix: str, w: AttentionWeights) -> dict[str, np.ndarray]:
    named = {}
    for h in range(w.heads):
        named[f"{prefix}w_q.h{h}"] = w.w_q[h]
        named[f"{prefix}w_k.h{h}"] = w.w_k[h]
        named[f"{prefix}w_v.h{h}"] = w.w_v[h]
    named[f"{prefix}w_o"] = w.w_o
    return named


def _named_mlp_arrays(prefix: str, m: MlpWeights) -> dict[str, np.ndarray]:
    return {f"{prefix}w1": m.w1, f"{prefix}b1": m.b1, f"{prefix}w2": m.w2, f"{prefix}b2": m.b2}


def _named_bundle_arrays(prefix: str, b: TokenBundle) -> dict[str, np.ndarray]:
    named = {f"{prefix}tokens": b.tokens}
    if b.class_token is not None:
        named[f"{prefix}class_token"] = b.class_token
    if b.positional is not None:
        named[f"{prefix}positional"] = b.positional
    return named


def _loss_from(outputs: list[np.ndarray]) -> float:
    return 0.5 * float(sum(np.sum(y * y) for y in outputs))


def _mha_like_case(q_name: str, kv_name: str):
    def build(inputs, weights):
        q, kv = inputs
        w: AttentionWeights = weights
        params = {**_named_bundle_arrays(f"{q_name}.", q),
                  **_named_bundle_arrays(f"{kv_name}.", kv),
                  **_named_attention_arrays("", w)}

        def loss() -> float:
            out, _ = _attend_forward(q.tokens, kv.tokens, w)
            return _loss_from([q.tokens + out])

        def loss_and_grads():
            out, cache = _attend_forward(q.tokens, kv.tokens, w)
            y = q.tokens + out
            d_q, d_kv, gw = _attend_backward(y, cache, w)
            grads = {f"{q_name}.tokens": d_q + y,
                     f"{kv_name}.tokens": d_kv,
                     **_named_attention_arrays("", gw)}
            return _loss_from([y]), grads

        return params, loss, loss_and_grads

    return build


def _dual_case(inputs, weights):
    image, video = inputs
    w_image, w_video, mlp = weights
    params = {**_named_bundle_arrays("image.", image),
              **_named_bundle_arrays("video.", video),
              **_named_attention_arrays("image_branch.", w_image),
              **_named_attention_arrays("video_branch.", w_video),
              **_named_mlp_arrays("mlp.image.", mlp.image),
              **_named_mlp_arrays("mlp.video.", mlp.video)}

    def loss() -> float:
        y_i, y_v, _ = _dual_forward(image, video, w_image, w_video, mlp, True, LN_EPS)
        return _loss_from([y_i, y_v])

    def loss_and_grads():
        y_i, y_v, cache = _dual_forward(image, video, w_image, w_video, mlp, True, LN_EPS)
        d_h_i, g_mlp_i = _mlp_backward(y_i, cache["mlp_i"], mlp.image)
        d_h_v, g_mlp_v = _mlp_backward(y_v, cache["mlp_v"], mlp.video)
        d_n_i_a, d_n_v_a, g_image = _attend_backward(d_h_i, cache["att_i"], w_image)
        d_n_v_b, d_n_i_b, g_video = _attend_backward(d_h_v, cache["att_v"], w_video)
        d_n_i = d_n_i_a + d_n_i_b
        d_n_v = d_n_v_a + d_n_v_b
        d_x_i = d_h_i + _ln_backward(d_n_i, cache["ln_i"])
        d_x_v = d_h_v + _ln_backward(d_n_v, cache["ln_v"])
        grads = {"image.tokens": d_x_i[:-1], "image.class_token": d_x_i[-1],
                 "video.tokens": d_x_v[:-1], "video.class_token": d_x_v[-1],
                 **_named_attention_arrays("image_branch.", g_image),
                 **_named_attention_arrays("video_branch.", g_video),
                 **_named_mlp_arrays("mlp.image.", g_mlp_i),
                 **_named_mlp_arrays("mlp.video.", g_mlp_v)}
        if image.positional is not None:
            grads["image.positional"] = d_x_i
        if video.positional is not None:
            grads["video.positional"] = d_x_v
        return _loss_from([y_i, y_v]), grads

    return params, loss, loss_and_grads


GRAD_CHECK_OPS = ("mha", "frame_guided_pooling", "dual_attention")

_CASE_BUILDERS = {
    "mha": _mha_like_case("queries", "keys_values"),
    "frame_guided_pooling": _mha_like_case("last_frame", "video"),
    "dual_attention": _dual_case,
}


def grad_check(op_id: str, inputs, weights, epsilon: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    The loss is sum(output ** 2) / 2 over every output of the operator.
    Each scalar of every input and weight tensor is perturbed by +/-
    epsilon.  Error is measured per tensor: the largest entrywise
    difference divided by max(|analytic|_inf, |numeric|_inf, 1e-8), so an
    entry is judged against its own tensor's gradient scale rather than
    against a near-zero value finite differences cannot resolve.  Returns
    the worst error, the number of scalars checked, and which tensor held
    the worst one.
    """
    if op_id not in _CASE_BUILDERS:
        raise ValueError(f"unknown grad-check op {op_id!r}; expected one of {GRAD_CHECK_OPS}")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    params, loss_fn, loss_and_grads = _CASE_BUILDERS[op_id](inputs, weights)
    _, grads = loss_and_grads()
    worst = ""
    max_rel = 0.0
    checked = 0
    for name, arr in params.items():
        numeric = np.empty(arr.size)
        for i in range(arr.size):
            orig = arr.flat[i]
            arr.flat[i] = orig + epsilon
            lp = loss_fn()
            arr.flat[i] = orig - epsilon
            lm = loss_fn()
            arr.flat[i] = orig
            numeric[i] = (lp - lm) / (2.0 * epsilon)
        analytic = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-8)
        rel = float(np.max(np.abs(analytic - numeric))) / scale
        if rel > max_rel:
            max_rel = rel
            worst = name
        checked += arr.size
    return GradCheckReport(max_rel_error=max_rel, params_checked=checked, worst=worst)


def random_instance(op_id: str, seed: int, *, d_model: int = 8, heads: int = 2,
                    d_head: int | None = None, n_tokens: int = 3, n_frames: int = 2,
                    mlp_hidden: int | None = None):
    """Build a random (inputs, weights) pair for ``grad_check``.

    The same seed always produces the same instance, which keeps CLI runs
    and test sweeps reproducible.
    """
    if op_id not in _CASE_BUILDERS:
        raise ValueError(f"unknown grad-check op {op_id!r}; expected one of {GRAD_CHECK_OPS}")
    rng = np.random.default_rng(seed)
    if op_id == "mha":
        queries = TokenBundle(tokens=rng.normal(size=(n_tokens, d_model)))
        keys_values = TokenBundle(tokens=rng.normal(size=(n_tokens + 1, d_model)))
        return (queries, keys_values), AttentionWeights.random(rng, d_model, heads, d_head)
    if op_id == "frame_guided_pooling":
        last = TokenBundle(tokens=rng.normal(size=(n_tokens, d_model)))
        video = TokenBundle(tokens=rng.normal(size=(n_frames * n_tokens, d_model)))
        return (last, video), AttentionWeights.random(rng, d_model, heads, d_head)
    image = TokenBundle(tokens=rng.normal(size=(n_tokens, d_model)),
                        class_token=rng.normal(size=d_model),
                        positional=rng.normal(scale=0.2, size=(n_tokens + 1, d_model)))
    video = TokenBundle(tokens=rng.normal(size=(n_tokens, d_model)),
                        class_token=rng.normal(size=d_model),
                        positional=rng.normal(scale=0.2, size=(n_tokens + 1, d_model)))
    weights = (AttentionWeights.random(rng, d_model, heads, d_head),
               AttentionWeights.random(rng, d_model, heads, d_head),
               DualMlpWeights(image=MlpWeights.random(rng, d_model, mlp_hidden),
                              video=MlpWeights.random(rng, d_model, mlp_hidden)))
    return (image, video), weights
