"""Numpy building blocks with explicit forward/backward passes.

Every forward returns (output, cache); the matching backward consumes the
cache and an upstream gradient and returns input gradients plus parameter
gradients accumulated into a dict. Written for small models where full
control over determinism and gradients matters more than raw speed.
"""

from __future__ import annotations

import math

import numpy as np

LN_EPS = 1e-5
MASK_BIAS = -1e9


class Grads(dict):
    """Parameter-gradient accumulator."""

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self:
            self[name] += value
        else:
            self[name] = value


def linear_fwd(x, w, b):
    # Flatten leading axes: one big gemm beats numpy's batched matmul.
    if x.ndim > 2:
        out = x.reshape(-1, x.shape[-1]) @ w
        out += b
        return out.reshape(*x.shape[:-1], w.shape[1]), (x, w)
    out = x @ w
    out += b
    return out, (x, w)


def linear_bwd(d_out, cache, grads: Grads, name: str):
    x, w = cache
    x2 = x.reshape(-1, x.shape[-1])
    d2 = d_out.reshape(-1, d_out.shape[-1])
    grads.add(f"{name}.w", x2.T @ d2)
    grads.add(f"{name}.b", d2.sum(axis=0))
    dx = d2 @ w.T
    return dx.reshape(*d_out.shape[:-1], w.shape[0])


def layer_norm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def layer_norm_bwd(d_out, cache, grads: Grads, name: str):
    xhat, inv, g = cache
    axes = tuple(range(d_out.ndim - 1))
    grads.add(f"{name}.g", (d_out * xhat).sum(axis=axes))
    grads.add(f"{name}.b", d_out.sum(axis=axes))
    dxhat = d_out * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return inv * (dxhat - m1 - xhat * m2)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu_fwd(x):
    t = x * x
    t *= x
    t *= _GELU_A
    t += x
    t *= _GELU_C
    np.tanh(t, out=t)
    out = 1.0 + t
    out *= x
    out *= 0.5
    return out, (x, t)


def gelu_bwd(d_out, cache):
    x, t = cache
    du = x * x
    du *= 3.0 * _GELU_A
    du += 1.0
    du *= _GELU_C  # derivative of the tanh argument
    du *= 1.0 - t * t
    du *= x
    du += 1.0 + t
    du *= 0.5
    du *= d_out
    return du


def softmax_last(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_bwd(d_out, sm):
    inner = (d_out * sm).sum(axis=-1, keepdims=True)
    return (d_out - inner) * sm


def dropout_fwd(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def dropout_bwd(d_out, keep):
    if keep is None:
        return d_out
    return d_out * keep


def attention_fwd(x, mask_bias, params, prefix, n_heads):
    """Multi-head self-attention over x (B, L, D).

    mask_bias is (B, 1, 1, L) additive, or None when every slot is valid.
    Q, K and V come from one fused projection; the 1/sqrt(dh) scale is
    folded into the cached query heads, and the softmax runs in place on
    the score tensor (the largest intermediate).
    """
    B, L, D = x.shape
    dh = D // n_heads
    qkv, c_qkv = linear_fwd(x, params[f"{prefix}.qkv.w"],
                            params[f"{prefix}.qkv.b"])

    def heads(t):
        return np.ascontiguousarray(
            t.reshape(B, L, n_heads, dh).transpose(0, 2, 1, 3)
        ).reshape(B * n_heads, L, dh)

    q = qkv[..., :D] * (1.0 / math.sqrt(dh))
    qh, kh, vh = heads(q), heads(qkv[..., D:2 * D]), heads(qkv[..., 2 * D:])
    att = qh @ kh.transpose(0, 2, 1)  # (B*h, L, L)
    if mask_bias is not None:
        att.reshape(B, n_heads, L, L)[...] += mask_bias
    att -= att.max(axis=-1, keepdims=True)
    np.exp(att, out=att)
    att /= att.sum(axis=-1, keepdims=True)
    ctx = att @ vh
    merged = np.ascontiguousarray(
        ctx.reshape(B, n_heads, L, dh).transpose(0, 2, 1, 3)).reshape(B, L, D)
    out, co = linear_fwd(merged, params[f"{prefix}.o.w"], params[f"{prefix}.o.b"])
    cache = (c_qkv, co, qh, kh, vh, att, n_heads)
    return out, cache


def attention_bwd(d_out, cache, grads: Grads, prefix):
    c_qkv, co, qh, kh, vh, att, n_heads = cache
    Bh, L, dh = qh.shape
    B = Bh // n_heads
    D = n_heads * dh
    d_merged = linear_bwd(d_out, co, grads, f"{prefix}.o")
    d_ctx = np.ascontiguousarray(
        d_merged.reshape(B, L, n_heads, dh).transpose(0, 2, 1, 3)
    ).reshape(Bh, L, dh)
    d_att = d_ctx @ vh.transpose(0, 2, 1)
    d_vh = att.transpose(0, 2, 1) @ d_ctx
    # softmax backward, in place on d_att
    inner = (d_att * att).sum(axis=-1, keepdims=True)
    d_att -= inner
    d_att *= att
    d_qh = d_att @ kh  # query heads carry the 1/sqrt(dh) fold
    d_kh = d_att.transpose(0, 2, 1) @ qh
    d_qh *= 1.0 / math.sqrt(dh)

    def unheads(t):
        return np.ascontiguousarray(
            t.reshape(B, n_heads, L, dh).transpose(0, 2, 1, 3)
        ).reshape(B, L, dh * n_heads)

    d_qkv = np.concatenate(
        [unheads(d_qh), unheads(d_kh), unheads(d_vh)], axis=-1)
    return linear_bwd(d_qkv, c_qkv, grads, f"{prefix}.qkv")


def block_fwd(x, mask_bias, params, prefix, n_heads, drop_rate=0.0, rng=None):
    """Pre-norm transformer block: attention then feed-forward, residual both."""
    h1, c_ln1 = layer_norm_fwd(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    a, c_att = attention_fwd(h1, mask_bias, params, f"{prefix}.attn", n_heads)
    a, c_drop1 = dropout_fwd(a, drop_rate, rng)
    x1 = x + a
    h2, c_ln2 = layer_norm_fwd(x1, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    f1, c_f1 = linear_fwd(h2, params[f"{prefix}.ffn1.w"], params[f"{prefix}.ffn1.b"])
    g, c_g = gelu_fwd(f1)
    f2, c_f2 = linear_fwd(g, params[f"{prefix}.ffn2.w"], params[f"{prefix}.ffn2.b"])
    f2, c_drop2 = dropout_fwd(f2, drop_rate, rng)
    out = x1 + f2
    return out, (c_ln1, c_att, c_drop1, c_ln2, c_f1, c_g, c_f2, c_drop2)


def block_bwd(d_out, cache, grads: Grads, prefix):
    c_ln1, c_att, c_drop1, c_ln2, c_f1, c_g, c_f2, c_drop2 = cache
    d_f2 = dropout_bwd(d_out, c_drop2)
    d_g = linear_bwd(d_f2, c_f2, grads, f"{prefix}.ffn2")
    d_f1 = gelu_bwd(d_g, c_g)
    d_h2 = linear_bwd(d_f1, c_f1, grads, f"{prefix}.ffn1")
    d_x1 = d_out + layer_norm_bwd(d_h2, c_ln2, grads, f"{prefix}.ln2")
    d_a = dropout_bwd(d_x1, c_drop1)
    d_h1 = attention_bwd(d_a, c_att, grads, f"{prefix}.attn")
    return d_x1 + layer_norm_bwd(d_h1, c_ln1, grads, f"{prefix}.ln1")


def stack_fwd(x, mask, params, scope, depth, n_heads, drop_rate=0.0, rng=None):
    """Run `depth` blocks; mask is (B, L) with 1 = real slot."""
    if x.shape[1] == 0:
        return x, []
    if mask.all():
        bias = None
    else:
        bias = ((1.0 - mask) * MASK_BIAS)[:, None, None, :].astype(x.dtype)
    caches = []
    for i in range(depth):
        x, cache = block_fwd(x, bias, params, f"{scope}.{i}", n_heads,
                             drop_rate, rng)
        caches.append(cache)
    return x, caches


def stack_bwd(d_out, caches, grads: Grads, scope):
    for i in reversed(range(len(caches))):
        d_out = block_bwd(d_out, caches[i], grads, f"{scope}.{i}")
    return d_out


def masked_cross_entropy(scores, valid, gold):
    """Mean CE over the batch; invalid classes are pushed to -inf first.

    scores: (B, C) raw; valid: (B, C) 1/0; gold: (B,) int class ids.
    Returns (loss, d_scores, probs).
    """
    B = scores.shape[0]
    masked = scores + (1.0 - valid) * MASK_BIAS
    m = masked.max(axis=-1, keepdims=True)
    e = np.exp(masked - m)
    z = e.sum(axis=-1, keepdims=True)
    probs = e / z
    logp = masked - m - np.log(z)
    loss = -logp[np.arange(B), gold].mean()
    d_scores = probs.copy()
    d_scores[np.arange(B), gold] -= 1.0
    d_scores /= B
    return loss, d_scores, probs
