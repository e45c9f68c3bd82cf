"""Core document model: annotated form pages, the JSON annotation schema,
and the geometric predicates shared by every other module.

Annotation files hold one document per record:

    {"documents": [
        {"page_w": 1000.0, "page_h": 1414.0, "nature": "digital",
         "segments": [{"id": 0, "bbox": [x, y, w, h], "text": "...",
                       "label": "title" | "com_nm_key" | ...}, ...],
         "tokens":   [{"text": "...", "bbox": [x, y, w, h], "parent": 0}, ...],
         "links":    [{"key_segment": 3, "value_segment": 4,
                       "intent": "com_nm"}, ...]}
    ]}

Coordinates use an abstract page unit, origin top-left, y growing downward.
Key/value segments carry a compound ``label`` ("<intent>_key" /
"<intent>_value"); all other segments carry their plain category name.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional


class SchemaError(ValueError):
    """An annotation file violated the schema; message names the offender."""


class LayoutCategory(Enum):
    TITLE = "title"
    SECTION = "section"
    FORM_KEY = "form_key"
    FORM_VALUE = "form_value"
    TABLE_KEY = "table_key"
    TABLE_VALUE = "table_value"
    OTHERS = "others"


class KeyIntent(Enum):
    COM_NM = "com_nm"
    COM_ID = "com_id"
    HOLD_NM = "hold_nm"
    HOLD_ID = "hold_id"
    CHG_DATE = "chg_date"
    GVN_DATE = "gvn_date"
    NTC_DATE = "ntc_date"
    CLASS = "class"
    PRE_SHR = "pre_shr"
    PRE_PCT = "pre_pct"
    NEW_SHR = "new_shr"
    NEW_PCT = "new_pct"


# Canonical split of the 12 intents: 7 live in the horizontally aligned form
# area, 5 in the vertically aligned table. A pair keeps its group even when an
# individual page lays it out the other way round.
FORM_INTENTS = (
    KeyIntent.COM_NM, KeyIntent.COM_ID, KeyIntent.HOLD_NM, KeyIntent.HOLD_ID,
    KeyIntent.CHG_DATE, KeyIntent.GVN_DATE, KeyIntent.NTC_DATE,
)
TABLE_INTENTS = (
    KeyIntent.CLASS, KeyIntent.PRE_SHR, KeyIntent.PRE_PCT,
    KeyIntent.NEW_SHR, KeyIntent.NEW_PCT,
)

KEY_VALUE_CATEGORIES = frozenset({
    LayoutCategory.FORM_KEY, LayoutCategory.FORM_VALUE,
    LayoutCategory.TABLE_KEY, LayoutCategory.TABLE_VALUE,
})
KEY_CATEGORIES = frozenset({LayoutCategory.FORM_KEY, LayoutCategory.TABLE_KEY})


class Role(Enum):
    KEY = "key"
    VALUE = "value"


class Nature(Enum):
    DIGITAL = "digital"
    PRINTED = "printed"
    HANDWRITTEN = "handwritten"


class PairRelation(Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in page units: top-left corner plus extent."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError(f"non-finite bbox {self}")
        if self.w < 0 or self.h < 0:
            raise ValueError(f"negative extent in bbox {self}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def cx(self) -> float:
        return self.x + self.w / 2

    @property
    def cy(self) -> float:
        return self.y + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def scaled(self, factor: float) -> "BBox":
        return BBox(self.x * factor, self.y * factor,
                    self.w * factor, self.h * factor)

    def contains(self, other: "BBox", slack: float = 0.0) -> bool:
        return (other.x >= self.x - slack and other.y >= self.y - slack
                and other.x2 <= self.x2 + slack and other.y2 <= self.y2 + slack)

    def as_list(self) -> list:
        return [self.x, self.y, self.w, self.h]


def category_for_intent(intent: KeyIntent, role: Role) -> LayoutCategory:
    """Category implied by an intent's canonical form/table group."""
    if intent in FORM_INTENTS:
        return LayoutCategory.FORM_KEY if role is Role.KEY else LayoutCategory.FORM_VALUE
    return LayoutCategory.TABLE_KEY if role is Role.KEY else LayoutCategory.TABLE_VALUE


@dataclass(frozen=True)
class Segment:
    """One annotated region of a page."""

    id: int
    bbox: BBox
    text: str
    category: LayoutCategory
    intent: Optional[KeyIntent] = None
    role: Optional[Role] = None

    def __post_init__(self):
        in_kv = self.category in KEY_VALUE_CATEGORIES
        if (self.intent is not None) != in_kv:
            raise ValueError(
                f"segment {self.id}: intent must be present exactly for "
                f"key/value categories (category={self.category.value})")
        if in_kv:
            expected = Role.KEY if self.category in KEY_CATEGORIES else Role.VALUE
            if self.role is not expected:
                raise ValueError(
                    f"segment {self.id}: role {self.role} inconsistent with "
                    f"category {self.category.value}")
        elif self.role is not None:
            raise ValueError(f"segment {self.id}: role set without key/value category")

    @property
    def label(self) -> str:
        if self.intent is not None:
            suffix = "key" if self.role is Role.KEY else "value"
            return f"{self.intent.value}_{suffix}"
        return self.category.value


@dataclass(frozen=True)
class TokenBox:
    """A single whitespace token with its own box, tied to a parent segment."""

    text: str
    bbox: BBox
    parent: int


@dataclass(frozen=True)
class DocumentPage:
    page_w: float
    page_h: float
    nature: Nature
    segments: tuple
    tokens: tuple

    # Token boxes may poke marginally past their parent after float noise.
    TOKEN_SLACK = 1.0

    def __post_init__(self):
        if self.page_w <= 0 or self.page_h <= 0:
            raise ValueError(f"page size must be positive, got "
                             f"{self.page_w}x{self.page_h}")
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "tokens", tuple(self.tokens))
        ids = [s.id for s in self.segments]
        if sorted(ids) != list(range(len(ids))):
            raise ValueError(f"segment ids must be 0..{len(ids) - 1} unique, got {ids}")
        by_id = {s.id: s for s in self.segments}
        for tok in self.tokens:
            if tok.parent not in by_id:
                raise ValueError(f"token {tok.text!r} references missing "
                                 f"segment {tok.parent}")
            if not by_id[tok.parent].bbox.contains(tok.bbox, slack=self.TOKEN_SLACK):
                raise ValueError(f"token {tok.text!r} escapes parent segment "
                                 f"{tok.parent}")

    def segment(self, seg_id: int) -> Segment:
        for seg in self.segments:
            if seg.id == seg_id:
                return seg
        raise KeyError(seg_id)


@dataclass(frozen=True)
class KeyValueLink:
    """Ground-truth pairing of a key segment with its value (absent = empty)."""

    key_segment: int
    value_segment: Optional[int]
    intent: KeyIntent

    def __post_init__(self):
        if self.value_segment is not None and self.value_segment == self.key_segment:
            raise ValueError(f"link {self.intent.value}: value segment equals "
                             f"key segment {self.key_segment}")


@dataclass(frozen=True)
class Document:
    """One corpus entry: a page plus its key-value ground truth."""

    page: DocumentPage
    links: tuple

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        for link in self.links:
            key = self.page.segment(link.key_segment)
            if key.intent is not link.intent:
                raise ValueError(f"link {link.intent.value}: key segment "
                                 f"{link.key_segment} has intent {key.intent}")
            if link.value_segment is not None:
                val = self.page.segment(link.value_segment)
                if val.intent is not link.intent:
                    raise ValueError(
                        f"link {link.intent.value}: value segment "
                        f"{link.value_segment} has intent {val.intent}")


# --- geometry -----------------------------------------------------------

def iou(a: BBox, b: BBox) -> float:
    """Intersection over union in [0, 1]; two zero-area boxes give 0."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    inter = max(0.0, ix) * max(0.0, iy)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


# Fraction of the smaller box height that the vertical intervals must share
# before a pair counts as horizontally aligned.
REL_OVERLAP_THRESHOLD = 0.5


def pair_relation(key: BBox, value: BBox,
                  threshold: float = REL_OVERLAP_THRESHOLD) -> PairRelation:
    """Classify a key/value pair as row-aligned or stacked.

    Horizontal iff the overlap of the two y-intervals, relative to the
    smaller box height, exceeds ``threshold``. Scale-free: invariant under
    uniform scaling of both boxes.
    """
    overlap = min(key.y2, value.y2) - max(key.y, value.y)
    min_h = min(key.h, value.h)
    if min_h <= 0 or overlap <= 0:
        return PairRelation.VERTICAL
    if overlap / min_h > threshold:
        return PairRelation.HORIZONTAL
    return PairRelation.VERTICAL


# --- annotation file I/O ------------------------------------------------

_PLAIN_LABELS = {
    LayoutCategory.TITLE.value: LayoutCategory.TITLE,
    LayoutCategory.SECTION.value: LayoutCategory.SECTION,
    LayoutCategory.OTHERS.value: LayoutCategory.OTHERS,
}
_INTENT_BY_VALUE = {i.value: i for i in KeyIntent}
_NATURE_BY_VALUE = {n.value: n for n in Nature}


def parse_label(label: str) -> tuple:
    """Split a segment label into (category, intent, role)."""
    if label in _PLAIN_LABELS:
        return _PLAIN_LABELS[label], None, None
    stem, _, suffix = label.rpartition("_")
    if suffix == "key":
        role = Role.KEY
    elif suffix == "value":
        role = Role.VALUE
    else:
        raise ValueError(f"unknown label {label!r}")
    intent = _INTENT_BY_VALUE.get(stem)
    if intent is None:
        raise ValueError(f"unknown intent in label {label!r}")
    return category_for_intent(intent, role), intent, role


def _require(record: dict, field: str, where: str):
    if field not in record:
        raise SchemaError(f"{where}: missing field {field!r}")
    return record[field]


def _parse_bbox(raw, where: str) -> BBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise SchemaError(f"{where}: bbox must be a 4-element list, got {raw!r}")
    try:
        return BBox(*(float(v) for v in raw))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: bad bbox: {exc}") from exc


def _parse_document(record: dict, where: str) -> Document:
    try:
        nature = _NATURE_BY_VALUE[_require(record, "nature", where)]
    except KeyError as exc:
        raise SchemaError(f"{where}: unknown nature {record.get('nature')!r}") from exc

    segments = []
    seen_ids = set()
    for i, raw in enumerate(_require(record, "segments", where)):
        sw = f"{where}, segment {i}"
        seg_id = _require(raw, "id", sw)
        if seg_id in seen_ids:
            raise SchemaError(f"{sw}: duplicate segment id {seg_id}")
        seen_ids.add(seg_id)
        try:
            category, intent, role = parse_label(_require(raw, "label", sw))
        except ValueError as exc:
            raise SchemaError(f"{sw}: {exc}") from exc
        try:
            segments.append(Segment(
                id=int(seg_id),
                bbox=_parse_bbox(_require(raw, "bbox", sw), sw),
                text=str(_require(raw, "text", sw)),
                category=category, intent=intent, role=role))
        except ValueError as exc:
            raise SchemaError(f"{sw}: {exc}") from exc

    tokens = []
    for i, raw in enumerate(record.get("tokens", [])):
        tw = f"{where}, token {i}"
        tokens.append(TokenBox(
            text=str(_require(raw, "text", tw)),
            bbox=_parse_bbox(_require(raw, "bbox", tw), tw),
            parent=int(_require(raw, "parent", tw))))

    links = []
    for i, raw in enumerate(record.get("links", [])):
        lw = f"{where}, link {i}"
        intent_name = _require(raw, "intent", lw)
        if intent_name not in _INTENT_BY_VALUE:
            raise SchemaError(f"{lw}: unknown intent {intent_name!r}")
        value_segment = raw.get("value_segment")
        try:
            links.append(KeyValueLink(
                key_segment=int(_require(raw, "key_segment", lw)),
                value_segment=None if value_segment is None else int(value_segment),
                intent=_INTENT_BY_VALUE[intent_name]))
        except ValueError as exc:
            raise SchemaError(f"{lw}: {exc}") from exc

    try:
        page = DocumentPage(
            page_w=float(_require(record, "page_w", where)),
            page_h=float(_require(record, "page_h", where)),
            nature=nature, segments=segments, tokens=tokens)
        return Document(page=page, links=links)
    except (ValueError, KeyError) as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def document_to_record(doc: Document) -> dict:
    page = doc.page
    return {
        "page_w": page.page_w,
        "page_h": page.page_h,
        "nature": page.nature.value,
        "segments": [
            {"id": s.id, "bbox": s.bbox.as_list(), "text": s.text, "label": s.label}
            for s in page.segments
        ],
        "tokens": [
            {"text": t.text, "bbox": t.bbox.as_list(), "parent": t.parent}
            for t in page.tokens
        ],
        "links": [
            {"key_segment": l.key_segment, "value_segment": l.value_segment,
             "intent": l.intent.value}
            for l in doc.links
        ],
    }


def load_corpus(path) -> list:
    """Load one annotation file into a list of validated Documents."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "documents" not in payload:
        raise SchemaError(f"{path}: top level must be an object with 'documents'")
    return [_parse_document(rec, f"document {i}")
            for i, rec in enumerate(payload["documents"])]


def save_corpus(documents: Iterable[Document], path) -> None:
    """Write documents to one annotation file; deterministic byte output."""
    path = Path(path)
    payload = {"documents": [document_to_record(d) for d in documents]}
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


@dataclass
class Corpus:
    """Named splits of documents, as produced by the generator."""

    splits: dict

    SPLIT_ORDER = ("train", "val", "test_digital", "test_printed",
                   "test_handwritten")

    def __iter__(self):
        for name in self.split_names():
            yield from self.splits[name]

    def split_names(self) -> list:
        known = [s for s in self.SPLIT_ORDER if s in self.splits]
        extra = sorted(set(self.splits) - set(known))
        return known + extra

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in self.split_names():
            save_corpus(self.splits[name], directory / f"{name}.json")

    @classmethod
    def load(cls, directory) -> "Corpus":
        directory = Path(directory)
        splits = {}
        for path in sorted(directory.glob("*.json")):
            if path.stem == "manifest":
                continue
            splits[path.stem] = load_corpus(path)
        if not splits:
            raise SchemaError(f"{directory}: no corpus split files found")
        return cls(splits=splits)
