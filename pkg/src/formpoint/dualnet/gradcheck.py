"""Finite-difference verification of the hand-written backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..docmodel import BBox, DocumentPage, LayoutCategory, Nature, Segment, TokenBox
from .config import ModelConfig
from .layers import masked_cross_entropy
from .model import Batch, PageFeatures, backward_batch, forward_batch, \
    init_params, key_text_feature


def tiny_config(pe_variant: str = "xy", seed: int = 0) -> ModelConfig:
    """Smallest config worth checking: every code path, few parameters."""
    return ModelConfig(
        d_model=8, dual_layers=1, attn_heads=2, entity_encoder_depth=1,
        token_encoder_depth=1, xy_m=4, xy_n=2, appearance_dim=8, text_dim=8,
        token_vocab=16, ffn_ratio=2, scorer_hidden=8, pe_variant=pe_variant,
        max_segments=4, max_page_tokens=8, dropout=0.0, seed=seed,
        dtype="float64")


def _fixture_pages() -> list:
    seg = lambda i, box, text: Segment(id=i, bbox=box, text=text,
                                       category=LayoutCategory.OTHERS)
    page_a = DocumentPage(
        page_w=100.0, page_h=100.0, nature=Nature.DIGITAL,
        segments=[seg(0, BBox(10, 5, 40, 10), "Alpha beta"),
                  seg(1, BBox(10, 30, 30, 10), "42")],
        tokens=[TokenBox("Alpha", BBox(11, 6, 18, 8), 0),
                TokenBox("beta", BBox(31, 6, 14, 8), 0),
                TokenBox("42", BBox(11, 31, 10, 8), 1)])
    page_b = DocumentPage(
        page_w=100.0, page_h=100.0, nature=Nature.DIGITAL,
        segments=[seg(0, BBox(20, 20, 50, 12), "gamma")],
        tokens=[TokenBox("gamma", BBox(21, 21, 40, 10), 0)])
    return [page_a, page_b]


def _fixture_batch(cfg: ModelConfig) -> Batch:
    pages = _fixture_pages()
    items = [
        (PageFeatures(pages[0], cfg), key_text_feature("Alpha key", cfg), 2),
        (PageFeatures(pages[1], cfg), key_text_feature("other key", cfg), 0),
    ]
    return Batch(items, cfg)


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: float = 0.0
    tensor_errors: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    checked: int = 0

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        state = "pass" if self.passed else \
            f"FAIL ({', '.join(sorted(self.failures))})"
        return (f"gradient check {state}: {self.checked} elements, "
                f"max rel error {self.max_rel_error:.3e} "
                f"(tolerance {self.tolerance:.1e})")


# Central differences on a loss of order 1 resolve gradients only down to
# about eps/step; below that the comparison floor keeps noise from counting.
_ERROR_FLOOR = 1e-6


def _rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a) + abs(n), _ERROR_FLOOR)


def gradient_check(cfg: ModelConfig = None, seed: int = 0,
                   tolerance: float = 1e-4, tensors=None,
                   corrupt: str = None, step: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    `tensors` limits which parameter tensors are checked (all by default;
    an empty list passes vacuously). `corrupt` shifts one tensor's analytic
    gradient to prove the check catches faults.
    """
    cfg = cfg or tiny_config(seed=seed)
    if cfg.dropout != 0.0:
        raise ValueError("gradient check requires dropout = 0")
    if cfg.np_dtype != np.float64:
        cfg = cfg.with_overrides(dtype="float64")
    batch = _fixture_batch(cfg)
    params = init_params(cfg).tensors

    def loss_of(values: dict) -> float:
        scores, valid, _ = forward_batch(values, batch, cfg)
        loss, _, _ = masked_cross_entropy(scores, valid, batch.gold)
        return float(loss)

    scores, valid, cache = forward_batch(params, batch, cfg)
    _, d_scores, _ = masked_cross_entropy(scores, valid, batch.gold)
    analytic = backward_batch(d_scores, cache, params, cfg)
    if corrupt is not None:
        if corrupt not in analytic:
            raise KeyError(f"no gradient tensor named {corrupt!r}")
        analytic[corrupt] = analytic[corrupt] + 0.5

    names = sorted(params) if tensors is None else list(tensors)
    report = GradCheckReport(tolerance=tolerance)
    for name in names:
        tensor = params[name]
        grad = analytic.get(name, np.zeros_like(tensor))
        worst = 0.0
        it = np.nditer(tensor, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            original = tensor[idx]
            tensor[idx] = original + step
            up = loss_of(params)
            tensor[idx] = original - step
            down = loss_of(params)
            tensor[idx] = original
            numeric = (up - down) / (2 * step)
            worst = max(worst, _rel_error(float(grad[idx]), numeric))
            report.checked += 1
        report.tensor_errors[name] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
        if worst > tolerance:
            report.failures.append(name)
    return report
