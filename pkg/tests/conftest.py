import numpy as np
import pytest

from formpoint.docmodel import (
    BBox, DocumentPage, LayoutCategory, Nature, Segment, TokenBox,
)
from formpoint.synthform import (
    GeneratorConfig, NoiseProfile, TemplateSpec, generate_corpus,
    generate_document,
)


def plain_segment(seg_id, x, y, w, h, text="x"):
    return Segment(id=seg_id, bbox=BBox(x, y, w, h), text=text,
                   category=LayoutCategory.OTHERS)


def plain_page(boxes, page_w=1000.0, page_h=1000.0, texts=None):
    """Page of bare Others segments, for geometry-focused tests."""
    segments = [plain_segment(i, *box, text=(texts[i] if texts else f"seg {i}"))
                for i, box in enumerate(boxes)]
    return DocumentPage(page_w=page_w, page_h=page_h, nature=Nature.DIGITAL,
                        segments=segments, tokens=[])


def zero_noise_config(**counts):
    base = dict(train=4, val=2, test_digital=2, test_printed=0,
                test_handwritten=0)
    base.update(counts)
    profiles = {Nature.DIGITAL: NoiseProfile.none(),
                Nature.PRINTED: NoiseProfile.printed(),
                Nature.HANDWRITTEN: NoiseProfile.handwritten()}
    return GeneratorConfig(profiles=profiles, **base)


@pytest.fixture(scope="session")
def zero_noise_doc():
    return generate_document(0, TemplateSpec(), NoiseProfile.none())


@pytest.fixture(scope="session")
def small_zero_noise_corpus():
    return generate_corpus(zero_noise_config(train=6, val=2, test_digital=2),
                           seed=3)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
