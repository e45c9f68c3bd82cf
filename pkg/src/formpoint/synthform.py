"""Synthetic Form-604-style page generator.

Produces fully annotated pages (segments, token boxes, key-value links)
from a fixed notice-of-change template: a title block, two section headers,
seven horizontally aligned form pairs, a five-column table with vertically
aligned pairs, and a few free paragraphs. Parametric noise simulates the
three provenance natures: digital (clean layout, occasional empty values),
printed (mild scan jitter/rotation, light character noise) and handwritten
(strong jitter, heavy character noise, frequent empty values).

Every document is generated from independent derived random substreams for
content, pair structure, geometry and text noise, so changing one noise
rate never perturbs the samples drawn by the other streams.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .docmodel import (
    BBox, Corpus, Document, DocumentPage, KeyIntent, KeyValueLink,
    LayoutCategory, Nature, PairRelation, Role, Segment, TokenBox,
    FORM_INTENTS, TABLE_INTENTS,
)


class PlacementError(ValueError):
    """Template components do not fit on the configured page."""


# --- template -------------------------------------------------------------

@dataclass(frozen=True)
class SlotSpec:
    """One key-intent slot: which intent, and how its pair is laid out."""

    intent: KeyIntent
    alignment: PairRelation


def standard_slots() -> tuple:
    """The Form-604 layout: 7 horizontal form pairs, 5 vertical table pairs."""
    slots = [SlotSpec(i, PairRelation.HORIZONTAL) for i in FORM_INTENTS]
    slots += [SlotSpec(i, PairRelation.VERTICAL) for i in TABLE_INTENTS]
    return tuple(slots)


DEFAULT_FONT_SIZES = {
    LayoutCategory.TITLE: (26.0, 32.0),
    LayoutCategory.SECTION: (17.0, 20.0),
    LayoutCategory.FORM_KEY: (13.0, 16.0),
    LayoutCategory.FORM_VALUE: (13.0, 15.0),
    LayoutCategory.TABLE_KEY: (11.0, 13.0),
    LayoutCategory.TABLE_VALUE: (11.0, 13.0),
    LayoutCategory.OTHERS: (10.0, 12.0),
}


@dataclass(frozen=True)
class TemplateSpec:
    slots: tuple = field(default_factory=standard_slots)
    title_count: int = 2
    section_count: int = 2
    others_count: int = 3
    page_w: float = 1000.0
    page_h: float = 1414.0
    font_sizes: dict = field(default_factory=lambda: dict(DEFAULT_FONT_SIZES))

    def __post_init__(self):
        intents = [s.intent for s in self.slots]
        if sorted(i.value for i in intents) != sorted(i.value for i in KeyIntent):
            raise ValueError("template slots must cover each of the 12 intents once")
        n_form = sum(1 for i in intents if i in FORM_INTENTS)
        if n_form != 7 or len(intents) - n_form != 5:
            raise ValueError("template must keep the 7 form / 5 table intent split")
        if self.title_count < 1 or self.section_count < 0 or self.others_count < 0:
            raise ValueError("invalid component counts")


@dataclass(frozen=True)
class NoiseProfile:
    """Degradation parameters for one document provenance nature."""

    bbox_jitter: float = 0.0        # sigma, page units, on box position/size
    rotation: float = 0.0          # sigma, degrees, whole-page scan rotation
    char_noise_rate: float = 0.0   # per-character substitution/deletion prob
    value_drop_rate: float = 0.0   # probability a value is left empty
    flip_alignment_rate: float = 0.0  # probability a pair flips its alignment

    def __post_init__(self):
        for name in ("char_noise_rate", "value_drop_rate", "flip_alignment_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {rate}")
        if self.bbox_jitter < 0 or self.rotation < 0:
            raise ValueError("noise sigmas must be nonnegative")

    @classmethod
    def none(cls) -> "NoiseProfile":
        return cls()

    @classmethod
    def digital(cls) -> "NoiseProfile":
        return cls(value_drop_rate=0.04, flip_alignment_rate=0.03)

    @classmethod
    def printed(cls) -> "NoiseProfile":
        return cls(bbox_jitter=2.5, rotation=1.0, char_noise_rate=0.04,
                   value_drop_rate=0.06, flip_alignment_rate=0.05)

    @classmethod
    def handwritten(cls) -> "NoiseProfile":
        return cls(bbox_jitter=5.0, rotation=1.8, char_noise_rate=0.15,
                   value_drop_rate=0.10, flip_alignment_rate=0.08)


DEFAULT_PROFILES = {
    Nature.DIGITAL: NoiseProfile.digital,
    Nature.PRINTED: NoiseProfile.printed,
    Nature.HANDWRITTEN: NoiseProfile.handwritten,
}


# --- content grammars ------------------------------------------------------

@dataclass(frozen=True)
class PatternFamily:
    name: str
    weight: float
    render: Callable


@dataclass(frozen=True)
class ValuePattern:
    """Weighted grammar of filled-in content variants for one intent."""

    intent: KeyIntent
    families: tuple

    def __post_init__(self):
        total = sum(f.weight for f in self.families)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"{self.intent.value}: family weights sum to {total}")

    def sample(self, rng: np.random.Generator) -> tuple:
        """Draw (family name, rendered text)."""
        u = rng.random()
        acc = 0.0
        for fam in self.families:
            acc += fam.weight
            if u < acc:
                return fam.name, fam.render(rng)
        fam = self.families[-1]
        return fam.name, fam.render(rng)


_COMPANY_STEMS = [
    "Acorn", "Barton", "Calder", "Dunmore", "Eastfield", "Fairmont",
    "Greenhill", "Harford", "Ironbark", "Jarrah", "Kestrel", "Lakewood",
    "Merino", "Northgate", "Opaline", "Pinnacle", "Quandong", "Redgum",
    "Silvergrass", "Tallowood", "Umbra", "Vantage", "Westbrook", "Yarralea",
]
_COMPANY_SUFFIXES = ["Ltd", "Limited", "Pty Ltd", "Group Ltd",
                     "Holdings Limited", "Corporation"]
_PERSON_FIRST = ["Alice", "Brian", "Chloe", "Daniel", "Edith", "Frank",
                 "Grace", "Henry", "Isla", "James", "Karen", "Liam",
                 "Mona", "Noel", "Priya", "Quinn", "Rosa", "Simon",
                 "Tara", "Victor"]
_PERSON_LAST = ["Anderson", "Bennett", "Carmichael", "Donovan", "Ellis",
                "Fraser", "Gibson", "Hawthorne", "Ingram", "Jennings",
                "Kendall", "Lawson", "Mitchell", "Norwood", "Osborne",
                "Pemberton", "Quigley", "Radcliffe", "Sutton", "Thorne"]
_MONTHS_SHORT = ["Jan", "Feb", "Mar", "Apr", "May", "Jun",
                 "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"]
_MONTHS_LONG = ["January", "February", "March", "April", "May", "June",
                "July", "August", "September", "October", "November",
                "December"]


def _pick(rng, items):
    return items[int(rng.integers(len(items)))]


def _company(rng) -> str:
    stem = _pick(rng, _COMPANY_STEMS)
    if rng.random() < 0.3:
        stem = f"{stem} {_pick(rng, _COMPANY_STEMS)}"
    return f"{stem} {_pick(rng, _COMPANY_SUFFIXES)}"


def _person(rng) -> str:
    return f"{_pick(rng, _PERSON_FIRST)} {_pick(rng, _PERSON_LAST)}"


def _acn_digits(rng) -> str:
    return "".join(str(int(d)) for d in rng.integers(0, 10, size=9))


def _date_parts(rng) -> tuple:
    return int(rng.integers(1, 29)), int(rng.integers(0, 12)), int(rng.integers(2003, 2016))


def _share_number(rng) -> int:
    return int(rng.integers(10_000, 99_999_999))


def _pct_number(rng) -> float:
    return float(np.round(rng.uniform(0.05, 55.0), 2))


def _date_families() -> tuple:
    def dmy(rng):
        d, m, y = _date_parts(rng)
        return f"{d} {_MONTHS_SHORT[m]} {y}"

    def slashed(rng):
        d, m, y = _date_parts(rng)
        return f"{d:02d}/{m + 1:02d}/{y}"

    def iso(rng):
        d, m, y = _date_parts(rng)
        return f"{y}-{m + 1:02d}-{d:02d}"

    def long_month(rng):
        d, m, y = _date_parts(rng)
        return f"{d} {_MONTHS_LONG[m]} {y}"

    return (PatternFamily("day_mon_year", 0.45, dmy),
            PatternFamily("slashed", 0.30, slashed),
            PatternFamily("iso", 0.15, iso),
            PatternFamily("long_month", 0.10, long_month))


def _id_families() -> tuple:
    return (
        PatternFamily("digits_spaced", 0.60, lambda rng: (
            lambda s: f"{s[:3]} {s[3:6]} {s[6:]}")(_acn_digits(rng))),
        PatternFamily("digits_plain", 0.30, _acn_digits),
        PatternFamily("prefixed", 0.10, lambda rng: (
            lambda s: f"ACN {s[:3]} {s[3:6]} {s[6:]}")(_acn_digits(rng))),
    )


def _share_families() -> tuple:
    return (
        PatternFamily("grouped", 0.60, lambda rng: f"{_share_number(rng):,}"),
        PatternFamily("plain", 0.30, lambda rng: str(_share_number(rng))),
        PatternFamily("with_unit", 0.10,
                      lambda rng: f"{_share_number(rng):,} shares"),
    )


def _pct_families() -> tuple:
    return (
        PatternFamily("percent", 0.70, lambda rng: f"{_pct_number(rng):.2f}%"),
        PatternFamily("bare", 0.20, lambda rng: f"{_pct_number(rng):.2f}"),
        PatternFamily("one_dp", 0.10,
                      lambda rng: f"{rng.uniform(0.1, 55.0):.1f}%"),
    )


def default_value_patterns() -> dict:
    patterns = {
        KeyIntent.COM_NM: (
            PatternFamily("name_only", 0.70, _company),
            PatternFamily("name_with_id", 0.20, lambda rng: (
                f"{_company(rng)} ACN {_acn_digits(rng)}")),
            PatternFamily("name_with_note", 0.10,
                          lambda rng: f"{_company(rng)} (the Company)"),
        ),
        KeyIntent.COM_ID: _id_families(),
        KeyIntent.HOLD_NM: (
            PatternFamily("name_only", 0.65,
                          lambda rng: _person(rng) if rng.random() < 0.5
                          else _company(rng)),
            PatternFamily("with_related", 0.25, lambda rng: (
                f"{_company(rng)} and its related bodies corporate")),
            PatternFamily("multi", 0.10,
                          lambda rng: f"{_person(rng)} / {_person(rng)}"),
        ),
        KeyIntent.HOLD_ID: _id_families(),
        KeyIntent.CHG_DATE: _date_families(),
        KeyIntent.GVN_DATE: _date_families(),
        KeyIntent.NTC_DATE: _date_families(),
        KeyIntent.CLASS: (
            PatternFamily("ordinary", 0.50,
                          lambda rng: "Ordinary" if rng.random() < 0.5
                          else "Ordinary shares"),
            PatternFamily("fully_paid", 0.30, lambda rng: "Fully paid ordinary"),
            PatternFamily("abbrev", 0.20,
                          lambda rng: "FPO" if rng.random() < 0.5 else "ORD"),
        ),
        KeyIntent.PRE_SHR: _share_families(),
        KeyIntent.PRE_PCT: _pct_families(),
        KeyIntent.NEW_SHR: _share_families(),
        KeyIntent.NEW_PCT: _pct_families(),
    }
    return {intent: ValuePattern(intent, families)
            for intent, families in patterns.items()}


KEY_TEXTS = {
    KeyIntent.COM_NM: ("Name of company", "Company name or scheme"),
    KeyIntent.COM_ID: ("ACN or ARSN", "ACN/ARSN"),
    KeyIntent.HOLD_NM: ("Name of substantial holder",),
    KeyIntent.HOLD_ID: ("Holder ACN or ARSN (if applicable)",),
    KeyIntent.CHG_DATE: ("Date of change",),
    KeyIntent.GVN_DATE: ("Date previous notice given",),
    KeyIntent.NTC_DATE: ("Date of previous notice",
                         "The previous notice was dated"),
    KeyIntent.CLASS: ("Class of securities",),
    KeyIntent.PRE_SHR: ("Previous votes",),
    KeyIntent.PRE_PCT: ("Previous voting power",),
    KeyIntent.NEW_SHR: ("Present votes",),
    KeyIntent.NEW_PCT: ("Present voting power",),
}

_TITLE_MAIN = "Form 604"
_TITLE_SUBS = ("Notice of change of interests of substantial holder",
               "Notice of change of interests of a substantial holder")
_SECTION_TEXTS = ("1. Details of substantial holder",
                  "2. Details of changes in relevant interests",
                  "3. Changes in association",
                  "4. Addresses")
_OTHERS_TEXTS = ("See annexure A for further details",
                 "There are no changes in association",
                 "The holder became aware on the date above",
                 "Additional notes attached as annexure B",
                 "Signed by the authorised officer")

# Glyph width as a fraction of font height, uniform across categories.
_CHAR_WIDTH_RATIO = 0.5
_BOX_PAD_X = 3.0
_BOX_PAD_Y = 2.0


# --- page assembly ---------------------------------------------------------

@dataclass
class _Placed:
    """Mutable segment sketch used while a page is being assembled."""

    bbox: BBox
    text: str
    category: LayoutCategory
    intent: Optional[KeyIntent] = None
    role: Optional[Role] = None
    overflow_ok: bool = False  # flip-induced placements get clamped, not rejected


def _text_box(x: float, y: float, text: str, font_h: float) -> BBox:
    w = max(1, len(text)) * font_h * _CHAR_WIDTH_RATIO + 2 * _BOX_PAD_X
    return BBox(x, y, w, font_h + 2 * _BOX_PAD_Y)


def _noisy_text(text: str, rate: float, rng: np.random.Generator) -> str:
    if rate <= 0 or not text:
        return text
    out = []
    for ch in text:
        if rng.random() >= rate:
            out.append(ch)
            continue
        if rng.random() < 0.3:
            continue  # deletion
        if ch.isdigit():
            out.append(str(int(rng.integers(0, 10))))
        elif ch.isalpha():
            sub = chr(ord("a") + int(rng.integers(0, 26)))
            out.append(sub.upper() if ch.isupper() else sub)
        else:
            out.append(chr(ord("a") + int(rng.integers(0, 26))))
    return "".join(out)


def _rotated_aabb(bbox: BBox, theta_rad: float, cx: float, cy: float) -> BBox:
    corners = np.array([[bbox.x, bbox.y], [bbox.x2, bbox.y],
                        [bbox.x, bbox.y2], [bbox.x2, bbox.y2]])
    cos_t, sin_t = math.cos(theta_rad), math.sin(theta_rad)
    rel = corners - (cx, cy)
    rot = np.column_stack([rel[:, 0] * cos_t - rel[:, 1] * sin_t,
                           rel[:, 0] * sin_t + rel[:, 1] * cos_t]) + (cx, cy)
    x1, y1 = rot.min(axis=0)
    x2, y2 = rot.max(axis=0)
    return BBox(float(x1), float(y1), float(x2 - x1), float(y2 - y1))


def _clamp_to_page(bbox: BBox, page_w: float, page_h: float) -> BBox:
    w = min(bbox.w, page_w)
    h = min(bbox.h, page_h)
    x = min(max(bbox.x, 0.0), page_w - w)
    y = min(max(bbox.y, 0.0), page_h - h)
    return BBox(x, y, w, h)


def tile_tokens(seg_id: int, bbox: BBox, text: str) -> list:
    """Left-to-right token boxes proportional to character offsets."""
    words = text.split(" ")
    n_chars = max(1, len(text))
    inner_x = bbox.x + _BOX_PAD_X
    inner_w = max(1.0, bbox.w - 2 * _BOX_PAD_X)
    unit = inner_w / n_chars
    tokens = []
    offset = 0
    for word in words:
        if word:
            tokens.append(TokenBox(
                text=word,
                bbox=BBox(inner_x + offset * unit, bbox.y + _BOX_PAD_Y,
                          max(unit, len(word) * unit),
                          max(1.0, bbox.h - 2 * _BOX_PAD_Y)),
                parent=seg_id))
        offset += len(word) + 1
    return tokens


def generate_document(seed: int, template: TemplateSpec = None,
                      profile: NoiseProfile = None,
                      nature: Nature = Nature.DIGITAL,
                      patterns: dict = None) -> Document:
    """Generate one annotated page, deterministic in (seed, template, profile)."""
    template = template or TemplateSpec()
    profile = profile or NoiseProfile.none()
    patterns = patterns or default_value_patterns()

    content = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
    pair = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
    geom = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 2])))
    textnoise = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 3])))

    fonts = {cat: float(content.uniform(lo, hi))
             for cat, (lo, hi) in template.font_sizes.items()}

    # Structural draws come from their own stream, two per slot, so the
    # outcome of one rate never shifts the draws seen by another.
    flip = {}
    drop = {}
    for slot in template.slots:
        flip[slot.intent] = pair.random() < profile.flip_alignment_rate
        drop[slot.intent] = pair.random() < profile.value_drop_rate

    margin_x = 60.0
    cursor = 48.0
    placed = []

    def put(text, category, intent=None, role=None, x=margin_x, advance=True,
            gap=10.0, dropped=False):
        nonlocal cursor
        box = _text_box(x, cursor, text, fonts[category])
        placed.append(_Placed(box, text, category, intent, role, dropped))
        if advance:
            cursor += box.h + gap
        return box

    titles = [_TITLE_MAIN]
    if template.title_count >= 2:
        titles.append(_pick(content, _TITLE_SUBS))
    titles += [f"Annex title {i}" for i in range(len(titles), template.title_count)]
    for text in titles:
        put(text, LayoutCategory.TITLE, gap=12.0)
    cursor += 8.0

    section_texts = [_SECTION_TEXTS[i % len(_SECTION_TEXTS)]
                     for i in range(template.section_count)]
    form_slots = [s for s in template.slots if s.intent in FORM_INTENTS]
    table_slots = [s for s in template.slots if s.intent in TABLE_INTENTS]

    links_raw = []  # (key index in placed, value index or None, intent)

    if section_texts:
        put(section_texts[0], LayoutCategory.SECTION, gap=14.0)

    value_x = 400.0
    for slot in form_slots:
        key_text = _pick(content, KEY_TEXTS[slot.intent])
        fam, value_text = patterns[slot.intent].sample(content)
        vertical = (slot.alignment is PairRelation.VERTICAL) ^ flip[slot.intent]
        key_box = put(key_text, LayoutCategory.FORM_KEY, slot.intent, Role.KEY,
                      advance=False)
        key_idx = len(placed) - 1
        if drop[slot.intent]:
            links_raw.append((key_idx, None, slot.intent))
            cursor += key_box.h + 16.0
            continue
        if vertical:
            cursor += key_box.h + 6.0
            put(value_text, LayoutCategory.FORM_VALUE, slot.intent, Role.VALUE,
                x=margin_x + 14.0, gap=16.0)
        else:
            box = _text_box(value_x, cursor, value_text,
                            fonts[LayoutCategory.FORM_VALUE])
            placed.append(_Placed(box, value_text, LayoutCategory.FORM_VALUE,
                                  slot.intent, Role.VALUE))
            cursor += key_box.h + 16.0
        links_raw.append((key_idx, len(placed) - 1, slot.intent))

    if len(section_texts) > 1:
        cursor += 6.0
        put(section_texts[1], LayoutCategory.SECTION, gap=16.0)
        for text in section_texts[2:]:
            put(text, LayoutCategory.SECTION, gap=16.0)

    col_w = (template.page_w - 2 * margin_x) / max(1, len(table_slots))
    header_y = cursor
    row_depth = 0.0
    for j, slot in enumerate(table_slots):
        key_text = _pick(content, KEY_TEXTS[slot.intent])
        fam, value_text = patterns[slot.intent].sample(content)
        col_x = margin_x + j * col_w
        key_box = _text_box(col_x, header_y, key_text,
                            fonts[LayoutCategory.TABLE_KEY])
        placed.append(_Placed(key_box, key_text, LayoutCategory.TABLE_KEY,
                              slot.intent, Role.KEY))
        key_idx = len(placed) - 1
        horizontal = flip[slot.intent]  # table default is vertical
        if drop[slot.intent]:
            links_raw.append((key_idx, None, slot.intent))
            row_depth = max(row_depth, key_box.h)
            continue
        if horizontal:
            val_box = _text_box(key_box.x2 + 8.0, header_y, value_text,
                                fonts[LayoutCategory.TABLE_VALUE])
            row_depth = max(row_depth, key_box.h)
        else:
            val_box = _text_box(col_x, header_y + key_box.h + 10.0, value_text,
                                fonts[LayoutCategory.TABLE_VALUE])
            row_depth = max(row_depth, key_box.h + 10.0 + val_box.h)
        placed.append(_Placed(val_box, value_text, LayoutCategory.TABLE_VALUE,
                              slot.intent, Role.VALUE, overflow_ok=horizontal))
        links_raw.append((key_idx, len(placed) - 1, slot.intent))
    cursor = header_y + row_depth + 26.0

    others = [_OTHERS_TEXTS[int(content.integers(len(_OTHERS_TEXTS)))]
              for _ in range(template.others_count)]
    for text in others:
        put(text, LayoutCategory.OTHERS, gap=10.0)

    if cursor > template.page_h - 24.0:
        raise PlacementError(
            f"template needs {cursor:.0f} page units, page is {template.page_h:.0f}")
    for p in placed:
        if p.bbox.x2 > template.page_w and not p.overflow_ok:
            raise PlacementError(
                f"segment {p.text!r} exceeds page width at x={p.bbox.x2:.0f}")

    # -- degrade ------------------------------------------------------------
    theta = math.radians(geom.normal(0.0, profile.rotation)) if profile.rotation else 0.0
    half_w, half_h = template.page_w / 2, template.page_h / 2
    for p in placed:
        p.text = _noisy_text(p.text, profile.char_noise_rate, textnoise)
        box = p.bbox
        if profile.bbox_jitter > 0:
            dx, dy = geom.normal(0.0, profile.bbox_jitter, size=2)
            dw, dh = geom.normal(0.0, profile.bbox_jitter / 2, size=2)
            box = BBox(box.x + dx, box.y + dy,
                       max(3.0, box.w + dw), max(3.0, box.h + dh))
        if theta:
            box = _rotated_aabb(box, theta, half_w, half_h)
        p.bbox = _clamp_to_page(box, template.page_w, template.page_h)

    segments = []
    tokens = []
    index_to_id = {}
    for idx, p in enumerate(placed):
        seg_id = len(segments)
        index_to_id[idx] = seg_id
        segments.append(Segment(id=seg_id, bbox=p.bbox, text=p.text,
                                category=p.category, intent=p.intent,
                                role=p.role))
        tokens.extend(tile_tokens(seg_id, p.bbox, p.text))

    links = [KeyValueLink(key_segment=index_to_id[k],
                          value_segment=None if v is None else index_to_id[v],
                          intent=intent)
             for k, v, intent in links_raw]

    page = DocumentPage(page_w=template.page_w, page_h=template.page_h,
                        nature=nature, segments=segments, tokens=tokens)
    return Document(page=page, links=links)


# --- corpus generation -----------------------------------------------------

@dataclass(frozen=True)
class GeneratorConfig:
    """Counts per split plus the noise profile for each nature.

    Defaults mirror a 70/10/20 split of the digital documents, with small
    printed and handwritten test splits.
    """

    train: int = 70
    val: int = 10
    test_digital: int = 20
    test_printed: int = 20
    test_handwritten: int = 20
    template: TemplateSpec = field(default_factory=TemplateSpec)
    profiles: dict = field(default_factory=lambda: {
        nature: factory() for nature, factory in DEFAULT_PROFILES.items()})

    def __post_init__(self):
        for name in ("train", "val", "test_digital", "test_printed",
                     "test_handwritten"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} count must be nonnegative")

    @classmethod
    def from_dict(cls, raw: dict) -> "GeneratorConfig":
        kwargs = {}
        for name in ("train", "val", "test_digital", "test_printed",
                     "test_handwritten"):
            if name in raw:
                kwargs[name] = int(raw[name])
        profiles = {nature: factory() for nature, factory in DEFAULT_PROFILES.items()}
        for nature_name, overrides in raw.get("profiles", {}).items():
            nature = Nature(nature_name)
            profiles[nature] = replace(profiles[nature], **overrides)
        kwargs["profiles"] = profiles
        if "template" in raw:
            kwargs["template"] = TemplateSpec(**raw["template"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "GeneratorConfig":
        with Path(path).open("r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


_SPLIT_NATURES = {
    "train": Nature.DIGITAL,
    "val": Nature.DIGITAL,
    "test_digital": Nature.DIGITAL,
    "test_printed": Nature.PRINTED,
    "test_handwritten": Nature.HANDWRITTEN,
}


def document_seed(master_seed: int, split: str, index: int) -> int:
    """Independent per-document seed; stable under parallel generation."""
    split_idx = list(_SPLIT_NATURES).index(split)
    ss = np.random.SeedSequence([master_seed, split_idx, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0] & 0x7FFF_FFFF_FFFF_FFFF)


def generate_corpus(config: GeneratorConfig = None, seed: int = 0) -> Corpus:
    """Generate all splits from one master seed; splits never share seeds."""
    config = config or GeneratorConfig()
    splits = {}
    for split, nature in _SPLIT_NATURES.items():
        count = getattr(config, split)
        profile = config.profiles[nature]
        splits[split] = [
            generate_document(document_seed(seed, split, i),
                              template=config.template, profile=profile,
                              nature=nature)
            for i in range(count)
        ]
    return Corpus(splits=splits)


def corpus_manifest(config: GeneratorConfig, seed: int) -> dict:
    """Counts, seed and effective profiles; written beside generated splits."""
    return {
        "master_seed": seed,
        "counts": {name: getattr(config, name) for name in _SPLIT_NATURES},
        "profiles": {
            nature.value: {
                "bbox_jitter": prof.bbox_jitter,
                "rotation": prof.rotation,
                "char_noise_rate": prof.char_noise_rate,
                "value_drop_rate": prof.value_drop_rate,
                "flip_alignment_rate": prof.flip_alignment_rate,
            }
            for nature, prof in config.profiles.items()
        },
    }


# --- parser-view corruption --------------------------------------------------

def corrupt_parser_view(page: DocumentPage, merge_rate: float,
                        split_rate: float, seed: int = 0) -> list:
    """Simulate textline extraction: ground-truth regions with same-row
    neighbours occasionally merged and long regions occasionally split.

    Returns (BBox, text) pairs. With both rates zero this is exactly the
    segment boxes and texts in page order.
    """
    if not 0.0 <= merge_rate <= 1.0 or not 0.0 <= split_rate <= 1.0:
        raise ValueError("rates must be in [0, 1]")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 17])))

    regions = [(seg.bbox, seg.text) for seg in page.segments]

    if merge_rate > 0:
        merged = []
        consumed = [False] * len(regions)
        order = sorted(range(len(regions)),
                       key=lambda i: (regions[i][0].y, regions[i][0].x))
        for pos, i in enumerate(order):
            if consumed[i]:
                continue
            box, text = regions[i]
            for j in order[pos + 1:]:
                if consumed[j]:
                    continue
                nbox, ntext = regions[j]
                same_row = pair_relation_rowlike(box, nbox)
                if not same_row:
                    continue
                if rng.random() < merge_rate:
                    x1 = min(box.x, nbox.x)
                    y1 = min(box.y, nbox.y)
                    box = BBox(x1, y1,
                               max(box.x2, nbox.x2) - x1,
                               max(box.y2, nbox.y2) - y1)
                    text = f"{text} {ntext}"
                    consumed[j] = True
            merged.append((box, text))
            consumed[i] = True
        regions = merged

    if split_rate > 0:
        out = []
        for box, text in regions:
            words = text.split(" ")
            if len(words) >= 2 and rng.random() < split_rate:
                cut = int(rng.integers(1, len(words)))
                left = " ".join(words[:cut])
                right = " ".join(words[cut:])
                frac = (len(left) + 0.5) / max(1, len(text))
                wl = box.w * frac
                out.append((BBox(box.x, box.y, wl, box.h), left))
                out.append((BBox(box.x + wl, box.y, box.w - wl, box.h), right))
            else:
                out.append((box, text))
        regions = out

    return regions


def pair_relation_rowlike(a: BBox, b: BBox) -> bool:
    """Row test used for parser-view merges: strong y-overlap, near in x."""
    overlap = min(a.y2, b.y2) - max(a.y, b.y)
    min_h = min(a.h, b.h)
    if min_h <= 0 or overlap / min_h <= 0.5:
        return False
    gap = max(a.x, b.x) - min(a.x2, b.x2)
    return gap < 120.0
