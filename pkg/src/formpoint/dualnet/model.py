"""Dual-level pointer model over form pages.

Pipeline: multi-aspect segment vectors plus the query key text go through a
small entity self-attention stack; token embeddings plus token geometry go
through a token stack; both sequences receive a geometric positional
encoding, get level-type embeddings, and attend jointly in the fusion
stack; a pointer head then scores every segment (and a dedicated
empty-value class scored from the key representation alone).
"""

from __future__ import annotations

import logging
import math
import zlib

import numpy as np

from ..aspectfeat import page_feature_matrix, text_feature
from ..docmodel import DocumentPage
from ..geoenc import linear_pe, normalized_coords, xy_offsets
from .config import NO_VALUE, ModelConfig, ModelParams
from .layers import (
    Grads, gelu_bwd, gelu_fwd, layer_norm_bwd, layer_norm_fwd, linear_bwd,
    linear_fwd, masked_cross_entropy, stack_bwd, stack_fwd,
)

log = logging.getLogger("formpoint.dualnet")


# --- parameters -------------------------------------------------------------

def _init_linear(params, rng, name, din, dout, dtype, std=0.02):
    if std == 0.0:
        params[f"{name}.w"] = np.zeros((din, dout), dtype=dtype)
        rng.normal(0.0, 1.0, (din, dout))  # keep the draw sequence stable
    else:
        params[f"{name}.w"] = rng.normal(0.0, std, (din, dout)).astype(dtype)
    params[f"{name}.b"] = np.zeros(dout, dtype=dtype)


def _init_block(params, rng, prefix, d, ffn, dtype, depth):
    # Residual branch outputs start small, scaled down with stack depth.
    out_std = 0.02 / math.sqrt(2.0 * max(1, depth))
    params[f"{prefix}.ln1.g"] = np.ones(d, dtype=dtype)
    params[f"{prefix}.ln1.b"] = np.zeros(d, dtype=dtype)
    _init_linear(params, rng, f"{prefix}.attn.qkv", d, 3 * d, dtype)
    _init_linear(params, rng, f"{prefix}.attn.o", d, d, dtype, std=out_std)
    params[f"{prefix}.ln2.g"] = np.ones(d, dtype=dtype)
    params[f"{prefix}.ln2.b"] = np.zeros(d, dtype=dtype)
    _init_linear(params, rng, f"{prefix}.ffn1", d, ffn, dtype)
    _init_linear(params, rng, f"{prefix}.ffn2", ffn, d, dtype, std=out_std)


def init_params(cfg: ModelConfig) -> ModelParams:
    """Seed-reproducible parameter tensors for a configuration."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 101])))
    dtype = cfg.np_dtype
    d = cfg.d_model
    ffn = cfg.ffn_ratio * d
    aspect_dim = cfg.feature_dims.total
    params = {}
    _init_linear(params, rng, "entity_in", aspect_dim, d, dtype)
    _init_linear(params, rng, "key_in", cfg.text_dim, d, dtype)
    for i in range(cfg.entity_encoder_depth):
        _init_block(params, rng, f"ent.{i}", d, ffn, dtype,
                    cfg.entity_encoder_depth)
    params["token_emb"] = rng.normal(0.0, 0.02, (cfg.token_vocab, d)).astype(dtype)
    _init_linear(params, rng, "token_box", 4, d, dtype)
    for i in range(cfg.token_encoder_depth):
        _init_block(params, rng, f"tok.{i}", d, ffn, dtype,
                    cfg.token_encoder_depth)
    params["level_emb"] = np.zeros((3, d), dtype=dtype)
    if cfg.pe_variant == "linear":
        params["linear_pe.w"] = rng.normal(0.0, 0.02, (4, d)).astype(dtype)
    for i in range(cfg.dual_layers):
        _init_block(params, rng, f"dual.{i}", d, ffn, dtype, cfg.dual_layers)
    params["scorer.ln.g"] = np.ones(cfg.scorer_input_dim(), dtype=dtype)
    params["scorer.ln.b"] = np.zeros(cfg.scorer_input_dim(), dtype=dtype)
    _init_linear(params, rng, "scorer.h", cfg.scorer_input_dim(),
                 cfg.scorer_hidden, dtype)
    _init_linear(params, rng, "scorer.out", cfg.scorer_hidden, 1, dtype,
                 std=0.0)
    params["novalue.ln.g"] = np.ones(d, dtype=dtype)
    params["novalue.ln.b"] = np.zeros(d, dtype=dtype)
    _init_linear(params, rng, "novalue.h", d, cfg.scorer_hidden, dtype)
    _init_linear(params, rng, "novalue.out", cfg.scorer_hidden, 1, dtype,
                 std=0.0)
    return ModelParams(config=cfg, tensors=params)


# --- static per-page features ------------------------------------------------

def aspect_input_scale(cfg: ModelConfig) -> np.ndarray:
    """Fixed per-slot rescaling of the aspect vector at the model boundary.

    Density is characters per squared page unit, typically around 1e-2;
    lifting it to order one keeps its input projection trainable at the
    same rate as the other aspects.
    """
    dims = cfg.feature_dims
    scale = np.ones(dims.total, dtype=cfg.np_dtype)
    start, end = dims.layout()["D"]
    scale[start:end] = 100.0
    return scale


class PageFeatures:
    """Model-input tensors that depend only on the page and config."""

    __slots__ = ("aspects", "seg_coords", "seg_pe", "token_ids", "tok_coords",
                 "tok_pe", "n_segments", "n_tokens", "boxes")

    def __init__(self, page: DocumentPage, cfg: ModelConfig):
        dtype = cfg.np_dtype
        dims = cfg.feature_dims
        self.n_segments = len(page.segments)
        self.aspects = page_feature_matrix(
            page, cfg.aspect_flags, dims).astype(dtype) * aspect_input_scale(cfg)
        ordered = sorted(page.segments, key=lambda s: s.id)
        self.boxes = [s.bbox for s in ordered]
        self.seg_coords = normalized_coords(
            self.boxes, page.page_w, page.page_h).astype(dtype)

        tokens = list(page.tokens)
        if len(tokens) > cfg.max_page_tokens:
            log.debug("truncating %d tokens to %d", len(tokens),
                      cfg.max_page_tokens)
            tokens = tokens[:cfg.max_page_tokens]
        self.n_tokens = len(tokens)
        self.token_ids = np.array(
            [zlib.crc32(t.text.encode("utf-8")) % cfg.token_vocab
             for t in tokens], dtype=np.int64)
        tok_boxes = [t.bbox for t in tokens]
        self.tok_coords = normalized_coords(
            tok_boxes, page.page_w, page.page_h).astype(dtype)

        if cfg.pe_variant == "xy":
            self.seg_pe = xy_offsets(self.boxes, page.page_w, page.page_h,
                                     cfg.xy_config).astype(dtype)
            self.tok_pe = xy_offsets(tok_boxes, page.page_w, page.page_h,
                                     cfg.xy_config).astype(dtype)
        else:
            self.seg_pe = None
            self.tok_pe = None


def key_text_feature(key_text: str, cfg: ModelConfig) -> np.ndarray:
    words = key_text.split()
    if len(words) > cfg.max_key_tokens:
        words = words[:cfg.max_key_tokens]
        key_text = " ".join(words)
    return text_feature(key_text, cfg.text_dim).astype(cfg.np_dtype)


class Batch:
    """Padded tensors for a list of (PageFeatures, key_feat, gold_class)."""

    __slots__ = ("aspects", "seg_mask", "seg_coords", "seg_pe", "token_ids",
                 "tok_mask", "tok_coords", "tok_pe", "key_feats", "gold",
                 "size", "s_max", "t_max")

    def __init__(self, items, cfg: ModelConfig):
        dtype = cfg.np_dtype
        self.size = len(items)
        self.s_max = max(f.n_segments for f, _, _ in items)
        self.t_max = max(f.n_tokens for f, _, _ in items)
        B, S, T = self.size, self.s_max, self.t_max
        A = cfg.feature_dims.total
        self.aspects = np.zeros((B, S, A), dtype=dtype)
        self.seg_mask = np.zeros((B, S), dtype=dtype)
        self.seg_coords = np.zeros((B, S, 4), dtype=dtype)
        self.token_ids = np.zeros((B, T), dtype=np.int64)
        self.tok_mask = np.zeros((B, T), dtype=dtype)
        self.tok_coords = np.zeros((B, T, 4), dtype=dtype)
        self.key_feats = np.zeros((B, cfg.text_dim), dtype=dtype)
        self.gold = np.zeros(B, dtype=np.int64)
        use_xy = cfg.pe_variant == "xy"
        self.seg_pe = np.zeros((B, S, cfg.d_model), dtype=dtype) if use_xy else None
        self.tok_pe = np.zeros((B, T, cfg.d_model), dtype=dtype) if use_xy else None
        for i, (feats, key_feat, gold_class) in enumerate(items):
            ns, nt = feats.n_segments, feats.n_tokens
            self.aspects[i, :ns] = feats.aspects
            self.seg_mask[i, :ns] = 1.0
            self.seg_coords[i, :ns] = feats.seg_coords
            if nt:
                self.token_ids[i, :nt] = feats.token_ids
                self.tok_mask[i, :nt] = 1.0
                self.tok_coords[i, :nt] = feats.tok_coords
            if use_xy:
                self.seg_pe[i, :ns] = feats.seg_pe
                if nt:
                    self.tok_pe[i, :nt] = feats.tok_pe
            self.key_feats[i] = key_feat
            self.gold[i] = gold_class


# --- forward / backward -------------------------------------------------------

def forward_batch(params: dict, batch: Batch, cfg: ModelConfig,
                  drop_rng=None):
    """Full pipeline; returns (scores, valid, cache) with scores (B, 1+S)."""
    B, S, T = batch.size, batch.s_max, batch.t_max
    drop = cfg.dropout if drop_rng is not None else 0.0

    ent_in, c_ei = linear_fwd(batch.aspects, params["entity_in.w"],
                              params["entity_in.b"])
    key_in, c_ki = linear_fwd(batch.key_feats, params["key_in.w"],
                              params["key_in.b"])
    e_seq = np.concatenate([key_in[:, None, :], ent_in], axis=1)
    ones = np.ones((B, 1), dtype=e_seq.dtype)
    e_mask = np.concatenate([ones, batch.seg_mask], axis=1)
    e_seq, c_ent = stack_fwd(e_seq, e_mask, params, "ent",
                             cfg.entity_encoder_depth, cfg.attn_heads,
                             drop, drop_rng)
    key_pre = e_seq[:, :1]
    E = e_seq[:, 1:]

    if T:
        tok_emb = params["token_emb"][batch.token_ids]
        tok_box, c_tb = linear_fwd(batch.tok_coords, params["token_box.w"],
                                   params["token_box.b"])
        tok_in = tok_emb + tok_box
        T_enc, c_tok = stack_fwd(tok_in, batch.tok_mask, params, "tok",
                                 cfg.token_encoder_depth, cfg.attn_heads,
                                 drop, drop_rng)
    else:
        T_enc, c_tb, c_tok = np.zeros((B, 0, cfg.d_model), dtype=e_seq.dtype), None, []

    if cfg.pe_variant == "xy":
        E_pe = E + batch.seg_pe
        T_pe = T_enc + batch.tok_pe if T else T_enc
    elif cfg.pe_variant == "linear":
        E_pe = E + batch.seg_coords @ params["linear_pe.w"]
        T_pe = T_enc + batch.tok_coords @ params["linear_pe.w"] if T else T_enc
    else:
        E_pe, T_pe = E, T_enc

    level = params["level_emb"]
    parts = [E_pe + level[1]]
    mask_parts = [batch.seg_mask]
    if cfg.key_in_sequence:
        parts.insert(0, key_pre + level[0])
        mask_parts.insert(0, ones)
    if T:
        parts.append(T_pe + level[2])
        mask_parts.append(batch.tok_mask)
    d_seq = np.concatenate(parts, axis=1)
    d_mask = np.concatenate(mask_parts, axis=1)
    d_seq, c_dual = stack_fwd(d_seq, d_mask, params, "dual", cfg.dual_layers,
                              cfg.attn_heads, drop, drop_rng)

    offset = 1 if cfg.key_in_sequence else 0
    key_dual = d_seq[:, 0] if cfg.key_in_sequence else key_pre[:, 0]
    E_dual = d_seq[:, offset:offset + S]

    scorer_in = [E_dual, batch.aspects]
    if cfg.key_in_scorer:
        scorer_in.append(np.broadcast_to(key_dual[:, None, :],
                                         (B, S, cfg.d_model)))
    e_multi = np.concatenate(scorer_in, axis=-1)
    e_norm, c_sln = layer_norm_fwd(e_multi, params["scorer.ln.g"],
                                   params["scorer.ln.b"])
    sh, c_s1 = linear_fwd(e_norm, params["scorer.h.w"], params["scorer.h.b"])
    sg, c_sg = gelu_fwd(sh)
    seg_scores, c_s2 = linear_fwd(sg, params["scorer.out.w"],
                                  params["scorer.out.b"])
    k_norm, c_nln = layer_norm_fwd(key_dual, params["novalue.ln.g"],
                                   params["novalue.ln.b"])
    nh, c_n1 = linear_fwd(k_norm, params["novalue.h.w"], params["novalue.h.b"])
    ng, c_ng = gelu_fwd(nh)
    nv_score, c_n2 = linear_fwd(ng, params["novalue.out.w"],
                                params["novalue.out.b"])

    scores = np.concatenate([nv_score, seg_scores[..., 0]], axis=1)
    valid = np.concatenate([ones, batch.seg_mask], axis=1)
    cache = (c_ei, c_ki, c_ent, c_tb, c_tok, c_dual, c_sln, c_s1, c_sg, c_s2,
             c_nln, c_n1, c_ng, c_n2, batch, E.shape, T_enc.shape)
    return scores, valid, cache


def backward_batch(d_scores: np.ndarray, cache, params: dict,
                   cfg: ModelConfig) -> Grads:
    (c_ei, c_ki, c_ent, c_tb, c_tok, c_dual, c_sln, c_s1, c_sg, c_s2,
     c_nln, c_n1, c_ng, c_n2, batch, e_shape, t_shape) = cache
    B, S, _ = e_shape
    T = t_shape[1]
    d = cfg.d_model
    grads = Grads()

    d_nv = d_scores[:, :1]
    d_seg_scores = d_scores[:, 1:, None]

    d_ng = linear_bwd(d_nv, c_n2, grads, "novalue.out")
    d_nh = gelu_bwd(d_ng, c_ng)
    d_k_norm = linear_bwd(d_nh, c_n1, grads, "novalue.h")
    d_key_dual = layer_norm_bwd(d_k_norm, c_nln, grads, "novalue.ln")

    d_sg = linear_bwd(d_seg_scores, c_s2, grads, "scorer.out")
    d_sh = gelu_bwd(d_sg, c_sg)
    d_e_norm = linear_bwd(d_sh, c_s1, grads, "scorer.h")
    d_e_multi = layer_norm_bwd(d_e_norm, c_sln, grads, "scorer.ln")
    d_E_dual = d_e_multi[..., :d]
    if cfg.key_in_scorer:
        a_dim = cfg.feature_dims.total
        d_key_dual = d_key_dual + d_e_multi[..., d + a_dim:].sum(axis=1)

    dtype = d_scores.dtype
    parts = [d_E_dual]
    if cfg.key_in_sequence:
        parts.insert(0, d_key_dual[:, None, :])
    if T:
        parts.append(np.zeros((B, T, d), dtype=dtype))
    d_dseq = np.concatenate(parts, axis=1)
    d_dseq = stack_bwd(d_dseq, c_dual, grads, "dual")

    offset = 1 if cfg.key_in_sequence else 0
    if cfg.key_in_sequence:
        d_key_pre = d_dseq[:, :1]
        grads.add("level_emb",
                  np.vstack([d_dseq[:, 0].sum(axis=0),
                             d_dseq[:, offset:offset + S].sum(axis=(0, 1)),
                             d_dseq[:, offset + S:].sum(axis=(0, 1))
                             if T else np.zeros(d, dtype=dtype)]))
    else:
        d_key_pre = d_key_dual[:, None, :]
        grads.add("level_emb",
                  np.vstack([np.zeros(d, dtype=dtype),
                             d_dseq[:, :S].sum(axis=(0, 1)),
                             d_dseq[:, S:].sum(axis=(0, 1))
                             if T else np.zeros(d, dtype=dtype)]))
    d_E_pe = d_dseq[:, offset:offset + S]
    d_T_pe = d_dseq[:, offset + S:]

    if cfg.pe_variant == "linear":
        w = "linear_pe.w"
        coords2 = batch.seg_coords.reshape(-1, 4)
        grads.add(w, coords2.T @ d_E_pe.reshape(-1, d))
        if T:
            grads.add(w, batch.tok_coords.reshape(-1, 4).T
                      @ d_T_pe.reshape(-1, d))
    d_E = d_E_pe
    d_T_enc = d_T_pe

    if T:
        d_tok_in = stack_bwd(d_T_enc, c_tok, grads, "tok")
        d_emb = np.zeros_like(params["token_emb"])
        np.add.at(d_emb, batch.token_ids.ravel(),
                  d_tok_in.reshape(-1, d))
        grads.add("token_emb", d_emb)
        linear_bwd(d_tok_in, c_tb, grads, "token_box")

    d_eseq = np.concatenate([d_key_pre, d_E], axis=1)
    d_eseq = stack_bwd(d_eseq, c_ent, grads, "ent")
    linear_bwd(d_eseq[:, 0], c_ki, grads, "key_in")
    linear_bwd(d_eseq[:, 1:], c_ei, grads, "entity_in")
    return grads


def batch_loss(params: dict, batch: Batch, cfg: ModelConfig, drop_rng=None):
    """(loss, grads) for one padded batch."""
    scores, valid, cache = forward_batch(params, batch, cfg, drop_rng)
    loss, d_scores, _ = masked_cross_entropy(scores, valid, batch.gold)
    grads = backward_batch(d_scores, cache, params, cfg)
    return loss, grads


# --- spec-level operations ----------------------------------------------------

def _single_batch(page, key_text, cfg, feats=None):
    feats = feats or PageFeatures(page, cfg)
    return Batch([(feats, key_text_feature(key_text, cfg), 0)], cfg)


def encode_entities(page: DocumentPage, key_text: str, params: ModelParams,
                    cfg: ModelConfig = None):
    """Per-segment entity representations plus the key slot."""
    cfg = cfg or params.config
    if len(page.segments) > cfg.max_segments:
        log.warning("page has %d segments, over the %d budget; skipping",
                    len(page.segments), cfg.max_segments)
        return None, None
    batch = _single_batch(page, key_text, cfg)
    p = params.tensors
    ent_in, _ = linear_fwd(batch.aspects, p["entity_in.w"], p["entity_in.b"])
    key_in, _ = linear_fwd(batch.key_feats, p["key_in.w"], p["key_in.b"])
    e_seq = np.concatenate([key_in[:, None, :], ent_in], axis=1)
    e_mask = np.concatenate([np.ones((1, 1), dtype=e_seq.dtype),
                             batch.seg_mask], axis=1)
    e_seq, _ = stack_fwd(e_seq, e_mask, p, "ent", cfg.entity_encoder_depth,
                         cfg.attn_heads)
    return e_seq[0, 1:], e_seq[0, 0]


def encode_tokens(page: DocumentPage, params: ModelParams,
                  cfg: ModelConfig = None):
    """Per-token representations (empty page gives a (0, d) matrix)."""
    cfg = cfg or params.config
    feats = PageFeatures(page, cfg)
    p = params.tensors
    if feats.n_tokens == 0:
        return np.zeros((0, cfg.d_model), dtype=cfg.np_dtype)
    tok_in = p["token_emb"][feats.token_ids] \
        + feats.tok_coords @ p["token_box.w"] + p["token_box.b"]
    mask = np.ones((1, feats.n_tokens), dtype=tok_in.dtype)
    out, _ = stack_fwd(tok_in[None], mask, p, "tok", cfg.token_encoder_depth,
                       cfg.attn_heads)
    return out[0]


def dual_encode(page: DocumentPage, key_text: str, params: ModelParams,
                cfg: ModelConfig = None):
    """Fused representations after the joint stack: (E_dual, T_dual, key_dual)."""
    cfg = cfg or params.config
    batch = _single_batch(page, key_text, cfg)
    return _dual_states(params.tensors, batch, cfg)


def _dual_states(params: dict, batch: Batch, cfg: ModelConfig):
    B, S, T = batch.size, batch.s_max, batch.t_max
    ent_in, _ = linear_fwd(batch.aspects, params["entity_in.w"],
                           params["entity_in.b"])
    key_in, _ = linear_fwd(batch.key_feats, params["key_in.w"],
                           params["key_in.b"])
    e_seq = np.concatenate([key_in[:, None, :], ent_in], axis=1)
    ones = np.ones((B, 1), dtype=e_seq.dtype)
    e_mask = np.concatenate([ones, batch.seg_mask], axis=1)
    e_seq, _ = stack_fwd(e_seq, e_mask, params, "ent",
                         cfg.entity_encoder_depth, cfg.attn_heads)
    key_pre, E = e_seq[:, :1], e_seq[:, 1:]
    if T:
        tok_in = params["token_emb"][batch.token_ids] \
            + batch.tok_coords @ params["token_box.w"] + params["token_box.b"]
        T_enc, _ = stack_fwd(tok_in, batch.tok_mask, params, "tok",
                             cfg.token_encoder_depth, cfg.attn_heads)
    else:
        T_enc = np.zeros((B, 0, cfg.d_model), dtype=e_seq.dtype)
    if cfg.pe_variant == "xy":
        E_pe = E + batch.seg_pe
        T_pe = T_enc + batch.tok_pe if T else T_enc
    elif cfg.pe_variant == "linear":
        E_pe = E + batch.seg_coords @ params["linear_pe.w"]
        T_pe = T_enc + batch.tok_coords @ params["linear_pe.w"] if T else T_enc
    else:
        E_pe, T_pe = E, T_enc
    level = params["level_emb"]
    parts = [E_pe + level[1]]
    mask_parts = [batch.seg_mask]
    if cfg.key_in_sequence:
        parts.insert(0, key_pre + level[0])
        mask_parts.insert(0, ones)
    if T:
        parts.append(T_pe + level[2])
        mask_parts.append(batch.tok_mask)
    d_seq = np.concatenate(parts, axis=1)
    d_mask = np.concatenate(mask_parts, axis=1)
    d_seq, _ = stack_fwd(d_seq, d_mask, params, "dual", cfg.dual_layers,
                         cfg.attn_heads)
    offset = 1 if cfg.key_in_sequence else 0
    key_dual = d_seq[:, 0] if cfg.key_in_sequence else key_pre[:, 0]
    return (d_seq[0, offset:offset + S], d_seq[0, offset + S:], key_dual[0])


def pointer_scores(key_text: str, page: DocumentPage, params: ModelParams,
                   cfg: ModelConfig = None) -> np.ndarray:
    """Raw score vector over [NO_VALUE] + segments for one instance."""
    cfg = cfg or params.config
    batch = _single_batch(page, key_text, cfg)
    scores, valid, _ = forward_batch(params.tensors, batch, cfg)
    return np.where(valid[0] > 0, scores[0], -np.inf)


def predict(key_text: str, page: DocumentPage, params: ModelParams,
            cfg: ModelConfig = None):
    """Segment id holding the value, or None for the empty-value class.

    Ties break toward the lowest class index, hence the lowest segment id.
    """
    cfg = cfg or params.config
    if len(page.segments) > cfg.max_segments:
        log.warning("page has %d segments, over the %d budget; skipping",
                    len(page.segments), cfg.max_segments)
        return None
    scores = pointer_scores(key_text, page, params, cfg)
    winner = int(np.argmax(scores))
    return None if winner == NO_VALUE else winner - 1
