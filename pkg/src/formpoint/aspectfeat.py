"""Per-segment aspect features: appearance (V), text (T), position (P),
density (D) and neighbour gaps (G), assembled into one fixed-layout vector.

The assembled vector keeps full dimensionality regardless of which aspects
are enabled; disabled aspects are zero-filled and flagged, so feature
ablations compare models over an identical input shape.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .docmodel import DocumentPage, Segment

DEFAULT_APPEARANCE_DIM = 32
DEFAULT_TEXT_DIM = 128
POSITIONAL_DIM = 6
DENSITY_DIM = 1
GAP_DIM = 4

ALL_ASPECTS = ("V", "T", "P", "D", "G")


@dataclass(frozen=True)
class FeatureDims:
    appearance: int = DEFAULT_APPEARANCE_DIM
    text: int = DEFAULT_TEXT_DIM

    @property
    def total(self) -> int:
        return self.appearance + self.text + POSITIONAL_DIM + DENSITY_DIM + GAP_DIM

    def layout(self) -> dict:
        """Slot offsets, aspect name -> (start, end)."""
        offsets = {}
        start = 0
        for name, width in (("V", self.appearance), ("T", self.text),
                            ("P", POSITIONAL_DIM), ("D", DENSITY_DIM),
                            ("G", GAP_DIM)):
            offsets[name] = (start, start + width)
            start += width
        return offsets


@dataclass(frozen=True)
class MultiAspectFeature:
    vector: np.ndarray
    layout: dict
    mask: tuple  # aspect names that are enabled

    def slot(self, aspect: str) -> np.ndarray:
        start, end = self.layout[aspect]
        return self.vector[start:end]


def positional_features(seg: Segment, page: DocumentPage) -> np.ndarray:
    """Normalized (x, y, w, h, cx, cy) against the page extent."""
    b = seg.bbox
    return np.array([b.x / page.page_w, b.y / page.page_h,
                     b.w / page.page_w, b.h / page.page_h,
                     b.cx / page.page_w, b.cy / page.page_h])


def density_feature(seg: Segment) -> float:
    """Characters per squared page unit; zero-area boxes give 0."""
    area = seg.bbox.area
    if area <= 0:
        return 0.0
    return len(seg.text) / area


def _interval_overlap(a1: float, a2: float, b1: float, b2: float) -> float:
    return min(a2, b2) - max(a1, b1)


def gap_distances(seg: Segment, page: DocumentPage) -> np.ndarray:
    """Normalized edge gaps (up, down, left, right) to the nearest segment
    whose projection overlaps this one's orthogonal extent; 1.0 if none.
    """
    b = seg.bbox
    gaps = np.ones(GAP_DIM)
    for other in page.segments:
        if other.id == seg.id:
            continue
        o = other.bbox
        if _interval_overlap(b.x, b.x2, o.x, o.x2) > 0:
            if o.y2 <= b.y:  # candidate above
                gaps[0] = min(gaps[0], (b.y - o.y2) / page.page_h)
            if o.y >= b.y2:  # candidate below
                gaps[1] = min(gaps[1], (o.y - b.y2) / page.page_h)
        if _interval_overlap(b.y, b.y2, o.y, o.y2) > 0:
            if o.x2 <= b.x:  # candidate left
                gaps[2] = min(gaps[2], (b.x - o.x2) / page.page_w)
            if o.x >= b.x2:  # candidate right
                gaps[3] = min(gaps[3], (o.x - b.x2) / page.page_w)
    return np.clip(gaps, 0.0, 1.0)


def _char_class_fractions(text: str) -> np.ndarray:
    if not text:
        return np.zeros(4)
    letters = sum(1 for c in text if c.isalpha())
    digits = sum(1 for c in text if c.isdigit())
    spaces = sum(1 for c in text if c.isspace())
    punct = len(text) - letters - digits - spaces
    return np.array([letters, digits, punct, spaces]) / len(text)


# Denominators keeping the geometry slots near [0, 1] for typical pages, so
# no single slot dominates the learned input projections.
_LOG_AREA_SCALE = 12.0
_LOG_RATIO_SCALE = 5.0
_FONT_PROXY_SCALE = 4.0


def appearance_feature(seg: Segment, page: DocumentPage,
                       dim: int = DEFAULT_APPEARANCE_DIM) -> np.ndarray:
    """Deterministic geometry/typography proxies, zero-padded to `dim`:
    normalized log area, normalized log aspect ratio, height relative to the
    page's median segment height, then letter/digit/punct/space fractions.
    """
    b = seg.bbox
    heights = [s.bbox.h for s in page.segments]
    median_h = float(np.median(heights)) if heights else 0.0
    base = np.concatenate([
        [np.log1p(b.area) / _LOG_AREA_SCALE,
         np.log1p(b.w / b.h) / _LOG_RATIO_SCALE if b.h > 0 else 0.0,
         (b.h / median_h) / _FONT_PROXY_SCALE if median_h > 0 else 0.0],
        _char_class_fractions(seg.text),
    ])
    if dim < base.size:
        raise ValueError(f"appearance dim {dim} below its {base.size} base slots")
    out = np.zeros(dim)
    out[:base.size] = base
    return out


def _ngram_bucket(gram: str, dim: int) -> int:
    return zlib.crc32(gram.encode("utf-8")) % dim


def text_feature(text: str, dim: int = DEFAULT_TEXT_DIM) -> np.ndarray:
    """Hashed character 2/3-gram counts, L2-normalized; empty text -> zeros."""
    out = np.zeros(dim)
    for n in (2, 3):
        for i in range(len(text) - n + 1):
            out[_ngram_bucket(text[i:i + n], dim)] += 1.0
    norm = np.linalg.norm(out)
    if norm > 0:
        out /= norm
    return out


def assemble_multi_aspect(seg: Segment, page: DocumentPage, flags=ALL_ASPECTS,
                          dims: FeatureDims = FeatureDims()) -> MultiAspectFeature:
    """Concatenate V|T|P|D|G into one vector; aspects absent from `flags`
    stay zero-filled so the layout never changes shape.
    """
    flags = tuple(flags)
    unknown = set(flags) - set(ALL_ASPECTS)
    if unknown:
        raise ValueError(f"unknown aspect flags {sorted(unknown)}")
    layout = dims.layout()
    vector = np.zeros(dims.total)

    def fill(name, values):
        start, end = layout[name]
        vector[start:end] = values

    if "V" in flags:
        fill("V", appearance_feature(seg, page, dims.appearance))
    if "T" in flags:
        fill("T", text_feature(seg.text, dims.text))
    if "P" in flags:
        fill("P", positional_features(seg, page))
    if "D" in flags:
        fill("D", [density_feature(seg)])
    if "G" in flags:
        fill("G", gap_distances(seg, page))
    return MultiAspectFeature(vector=vector, layout=layout, mask=flags)


def page_feature_matrix(page: DocumentPage, flags=ALL_ASPECTS,
                        dims: FeatureDims = FeatureDims()) -> np.ndarray:
    """Stacked multi-aspect vectors for every segment, in id order."""
    ordered = sorted(page.segments, key=lambda s: s.id)
    return np.stack([assemble_multi_aspect(s, page, flags, dims).vector
                     for s in ordered]) if ordered else np.zeros((0, dims.total))


def export_features(page: DocumentPage, path, flags=ALL_ASPECTS,
                    dims: FeatureDims = FeatureDims()) -> None:
    """Columnar text dump (segment id then slot values) for inspection."""
    matrix = page_feature_matrix(page, flags, dims)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# aspects={','.join(flags)} columns=id,{dims.total} slots\n")
        for seg_id, row in enumerate(matrix):
            cells = " ".join(f"{v:.6g}" for v in row)
            fh.write(f"{seg_id} {cells}\n")
