import math

import numpy as np
import pytest

from formpoint.docmodel import (
    BBox, DocumentPage, LayoutCategory, Nature, Segment, TokenBox,
)
from formpoint.dualnet import (
    Batch, ModelConfig, ModelParams, TaskBInstance, encode_entities,
    encode_tokens, dual_encode, forward_batch, gradient_check, init_params,
    key_text_feature, pointer_scores, predict, tiny_config, train,
)
from formpoint.dualnet.model import PageFeatures
from formpoint.dualnet.layers import masked_cross_entropy
from formpoint.dualnet.train import TrainingDiverged, instances_from_documents
from formpoint.synthform import NoiseProfile, TemplateSpec, generate_document
from conftest import plain_page


SMALL = ModelConfig(d_model=32, dual_layers=1, attn_heads=2,
                    entity_encoder_depth=1, token_encoder_depth=1,
                    xy_m=8, xy_n=4, scorer_hidden=16, token_vocab=64,
                    appearance_dim=8, text_dim=16, max_page_tokens=16,
                    epochs=2, batch_size=8, seed=0)


def tok_page(texts_boxes, page_w=200.0, page_h=100.0):
    segs, toks = [], []
    for i, (text, box) in enumerate(texts_boxes):
        segs.append(Segment(id=i, bbox=BBox(*box), text=text,
                            category=LayoutCategory.OTHERS))
        toks.append(TokenBox(text.split()[0] if text else "t",
                             BBox(box[0] + 1, box[1] + 1,
                                  max(1.0, box[2] / 2), max(1.0, box[3] / 2)),
                             i))
    return DocumentPage(page_w=page_w, page_h=page_h, nature=Nature.DIGITAL,
                        segments=segs, tokens=toks)


class TestEncodeEntities:
    def test_single_segment_shape(self):
        page = tok_page([("hello", (10, 10, 40, 12))])
        params = init_params(SMALL)
        E, key_slot = encode_entities(page, "a key", params, SMALL)
        assert E.shape == (1, SMALL.d_model)
        assert key_slot.shape == (SMALL.d_model,)

    def test_deterministic(self):
        page = tok_page([("hello", (10, 10, 40, 12)),
                         ("world", (10, 40, 40, 12))])
        params = init_params(SMALL)
        E1, _ = encode_entities(page, "a key", params, SMALL)
        E2, _ = encode_entities(page, "a key", params, SMALL)
        assert np.array_equal(E1, E2)

    def test_permuting_segments_permutes_rows(self):
        layout = [("alpha", (10, 10, 40, 12)), ("beta", (80, 10, 40, 12)),
                  ("gamma", (10, 50, 60, 12))]
        params = init_params(SMALL)
        page = tok_page(layout)
        E, _ = encode_entities(page, "a key", params, SMALL)
        permuted_layout = [layout[i] for i in (1, 2, 0)]
        page2 = tok_page(permuted_layout)
        E2, _ = encode_entities(page2, "a key", params, SMALL)
        # row of page2 id j corresponds to original layout index (1, 2, 0)[j]
        assert E2[0] == pytest.approx(E[1], abs=1e-5)
        assert E2[1] == pytest.approx(E[2], abs=1e-5)
        assert E2[2] == pytest.approx(E[0], abs=1e-5)

    def test_over_budget_page_skipped(self, caplog):
        cfg = SMALL.with_overrides(max_segments=2)
        page = tok_page([("a", (10, 10, 20, 10)), ("b", (50, 10, 20, 10)),
                         ("c", (90, 10, 20, 10))])
        E, key = encode_entities(page, "k", init_params(cfg), cfg)
        assert E is None and key is None


class TestEncodeTokens:
    def test_empty_page(self):
        page = plain_page([(10, 10, 40, 12)])
        T = encode_tokens(page, init_params(SMALL), SMALL)
        assert T.shape == (0, SMALL.d_model)

    def test_same_text_different_boxes_differ(self):
        page = DocumentPage(
            page_w=200, page_h=100, nature=Nature.DIGITAL,
            segments=[Segment(id=0, bbox=BBox(0, 0, 200, 100), text="x x",
                              category=LayoutCategory.OTHERS)],
            tokens=[TokenBox("x", BBox(10, 10, 20, 10), 0),
                    TokenBox("x", BBox(100, 60, 20, 10), 0)])
        T = encode_tokens(page, init_params(SMALL), SMALL)
        assert not np.allclose(T[0], T[1])

    def test_golden_two_token_fixture(self):
        # Regression golden frozen from a verified run (seed-0 params).
        page = tok_page([("alpha beta", (10, 10, 60, 12)),
                         ("gamma", (10, 40, 40, 12))])
        T = encode_tokens(page, init_params(SMALL), SMALL)
        assert T.shape == (2, 32)
        assert float(T.sum()) == pytest.approx(-0.17768692, abs=1e-4)
        assert T[0, :3] == pytest.approx(
            [0.00269103, 0.01162862, 0.00975093], abs=1e-5)


class TestDualEncode:
    def test_residual_identity_at_zero_output_weights(self):
        cfg = SMALL.with_overrides(pe_variant="none")
        params = init_params(cfg)
        for name in list(params.tensors):
            if name.endswith("attn.o.w") or name.endswith("ffn2.w"):
                params.tensors[name] = np.zeros_like(params.tensors[name])
        page = tok_page([("alpha", (10, 10, 40, 12)),
                         ("beta", (80, 10, 40, 12))])
        E, _ = encode_entities(page, "key", params, cfg)
        E_dual, _, _ = dual_encode(page, "key", params, cfg)
        assert np.array_equal(E_dual, E)

    def test_padded_slots_never_influence_real_ones(self):
        cfg = SMALL
        params = init_params(cfg).tensors
        pages = [tok_page([("alpha", (10, 10, 40, 12)),
                           ("beta", (80, 10, 40, 12))]),
                 tok_page([("solo", (10, 10, 40, 12))])]
        items = [(PageFeatures(p, cfg), key_text_feature("key", cfg), 0)
                 for p in pages]
        batch = Batch(items, cfg)
        base_scores, valid, _ = forward_batch(params, batch, cfg)

        batch.aspects[1, 1, :] = 123.0  # padded segment slot of page 2
        batch.seg_coords[1, 1, :] = 0.5
        if batch.seg_pe is not None:
            batch.seg_pe[1, 1, :] = 7.0
        moved_scores, _, _ = forward_batch(params, batch, cfg)
        assert np.array_equal(
            np.where(valid > 0, moved_scores, 0.0),
            np.where(valid > 0, base_scores, 0.0))

    def test_tokens_influence_entities(self):
        cfg = SMALL
        params = init_params(cfg)
        with_tokens = tok_page([("alpha", (10, 10, 40, 12)),
                                ("beta", (80, 10, 40, 12))])
        without = DocumentPage(
            page_w=with_tokens.page_w, page_h=with_tokens.page_h,
            nature=with_tokens.nature, segments=with_tokens.segments,
            tokens=[])
        E1, _, _ = dual_encode(with_tokens, "key", params, cfg)
        E2, _, _ = dual_encode(without, "key", params, cfg)
        assert not np.allclose(E1, E2)


class TestPointerScores:
    def test_all_segments_masked_no_value_wins(self):
        cfg = SMALL
        params = init_params(cfg).tensors
        page = tok_page([("alpha", (10, 10, 40, 12))])
        batch = Batch([(PageFeatures(page, cfg),
                        key_text_feature("key", cfg), 0)], cfg)
        batch.seg_mask[:] = 0.0
        scores, valid, _ = forward_batch(params, batch, cfg)
        masked = np.where(valid > 0, scores, -np.inf)
        assert int(masked[0].argmax()) == 0

    def test_softmax_normalizes_over_unmasked(self):
        page = tok_page([("alpha", (10, 10, 40, 12)),
                         ("beta", (80, 10, 40, 12))])
        params = init_params(SMALL)
        scores = pointer_scores("key", page, params, SMALL)
        finite = scores[np.isfinite(scores)]
        probs = np.exp(finite - finite.max())
        probs /= probs.sum()
        assert probs.sum() == pytest.approx(1.0)

    def test_argmax_invariances(self):
        page = tok_page([("alpha", (10, 10, 40, 12)),
                         ("beta", (80, 10, 40, 12))])
        params = init_params(SMALL)
        scores = pointer_scores("key", page, params, SMALL)
        assert np.argmax(scores) == np.argmax(scores + 3.7)
        assert np.argmax(scores) == np.argmax(scores * 2.5)


class TestPredict:
    def test_zero_init_predicts_no_value(self):
        # Output heads start at zero, so every class scores 0 and the
        # tie breaks toward the lowest class index.
        page = tok_page([("alpha", (10, 10, 40, 12)),
                         ("beta", (80, 10, 40, 12))])
        assert predict("key", page, init_params(SMALL), SMALL) is None


def one_instance_corpus():
    doc = generate_document(0, TemplateSpec(), NoiseProfile.none())
    link = doc.links[0]
    key_text = doc.page.segment(link.key_segment).text
    return [TaskBInstance(key_text=key_text, page=doc.page,
                          gold_index=link.value_segment, intent=link.intent)]


class TestTraining:
    def test_loss_at_init_is_log_class_count(self):
        cfg = SMALL
        doc = generate_document(0, TemplateSpec(), NoiseProfile.none())
        inst = instances_from_documents([doc], cfg)[0]
        params = init_params(cfg).tensors
        batch = Batch([(PageFeatures(inst.page, cfg),
                        key_text_feature(inst.key_text, cfg),
                        inst.gold_class)], cfg)
        scores, valid, _ = forward_batch(params, batch, cfg)
        loss, _, _ = masked_cross_entropy(scores, valid, batch.gold)
        assert loss == pytest.approx(math.log(len(inst.page.segments) + 1),
                                     abs=1e-6)

    def test_single_instance_loss_monotone_first_epochs(self):
        from formpoint.dualnet.train import train as train_fn
        doc = generate_document(0, TemplateSpec(), NoiseProfile.none())
        single = type(doc)(page=doc.page, links=doc.links[:1])
        cfg = SMALL.with_overrides(epochs=10, batch_size=1,
                                   learning_rate=0.05)
        params, history = train_fn([single], cfg)
        losses = [e.train_loss for e in history.epochs]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_same_seed_same_params_hash(self, small_zero_noise_corpus):
        cfg = SMALL.with_overrides(epochs=2)
        p1, _ = train(small_zero_noise_corpus, cfg)
        p2, _ = train(small_zero_noise_corpus, cfg)
        assert p1.content_hash() == p2.content_hash()

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            train([], SMALL)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        params = init_params(SMALL)
        path = tmp_path / "model.fpnt"
        params.save(path)
        loaded = ModelParams.load(path)
        assert loaded.config == SMALL
        assert set(loaded.tensors) == set(params.tensors)
        for name, tensor in params.tensors.items():
            assert np.allclose(loaded.tensors[name], tensor, atol=1e-7)
        assert loaded.content_hash() == params.content_hash()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.fpnt"
        path.write_bytes(b"not a params file")
        with pytest.raises(ValueError):
            ModelParams.load(path)


class TestGradientCheck:
    def test_tiny_config_passes(self):
        report = gradient_check(tiny_config("xy"), tolerance=1e-4)
        assert report.passed, report.summary()
        assert report.max_rel_error <= 1e-4

    def test_linear_pe_variant_passes(self):
        report = gradient_check(tiny_config("linear"), tolerance=1e-4)
        assert report.passed, report.summary()

    def test_corrupted_gradient_caught_and_named(self):
        report = gradient_check(tiny_config("xy"), tolerance=1e-4,
                                corrupt="scorer.h.w")
        assert not report.passed
        assert "scorer.h.w" in report.failures

    def test_empty_tensor_list_vacuous_pass(self):
        report = gradient_check(tiny_config("xy"), tolerance=1e-4, tensors=[])
        assert report.passed
        assert report.checked == 0
