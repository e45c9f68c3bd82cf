"""Metrics, corpus statistics and the ablation runner.

The retrieval task is scored as a classification over 13 labels: the 12 key
intents (a prediction earns the intent label only by pointing at that
intent's value segment) plus NO_VALUE for the empty-value answer. Pointing
at a segment that is not a value yields the reserved OTHER label, which
never appears in gold and therefore never enters the support weighting.
"""

from __future__ import annotations

import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .docmodel import (
    BBox, Corpus, KeyIntent, PairRelation, Role, iou, pair_relation,
)
from .synthform import corrupt_parser_view, tile_tokens

NO_VALUE_LABEL = "NO_VALUE"
OTHER_LABEL = "OTHER"


# --- core metrics -----------------------------------------------------------

@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


def weighted_f1(preds, golds, classes=None):
    """Support-weighted mean F1; zero-support classes don't enter the mean.

    Returns (score, {class: ClassScores}).
    """
    preds, golds = list(preds), list(golds)
    if not golds:
        raise ValueError("empty input")
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} golds")
    if classes is None:
        classes = sorted(set(golds) | set(preds), key=str)
    tp, fp, fn = Counter(), Counter(), Counter()
    for p, g in zip(preds, golds):
        if p == g:
            tp[g] += 1
        else:
            fp[p] += 1
            fn[g] += 1
    detail = {}
    weighted = 0.0
    total_support = 0
    for cls in classes:
        support = tp[cls] + fn[cls]
        prec_den = tp[cls] + fp[cls]
        rec_den = support
        precision = tp[cls] / prec_den if prec_den else 0.0
        recall = tp[cls] / rec_den if rec_den else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        detail[cls] = ClassScores(precision, recall, f1, support)
        weighted += support * f1
        total_support += support
    score = weighted / total_support if total_support else 0.0
    return score, detail


def cohen_kappa(labels_a, labels_b) -> float:
    """(p_o - p_e) / (1 - p_e); 1.0 when both agreements are perfect."""
    labels_a, labels_b = list(labels_a), list(labels_b)
    if not labels_a:
        raise ValueError("empty input")
    if len(labels_a) != len(labels_b):
        raise ValueError("label lists differ in length")
    n = len(labels_a)
    p_o = sum(a == b for a, b in zip(labels_a, labels_b)) / n
    count_a, count_b = Counter(labels_a), Counter(labels_b)
    p_e = sum(count_a[c] * count_b.get(c, 0) for c in count_a) / (n * n)
    if p_e >= 1.0:
        return 1.0 if p_o >= 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


def hamming_loss(labels_a, labels_b) -> float:
    """Fraction of positions where the two label lists disagree."""
    labels_a, labels_b = list(labels_a), list(labels_b)
    if not labels_a:
        raise ValueError("empty input")
    if len(labels_a) != len(labels_b):
        raise ValueError("label lists differ in length")
    return sum(a != b for a, b in zip(labels_a, labels_b)) / len(labels_a)


# --- task-B reports -----------------------------------------------------------

@dataclass
class EvalReport:
    weighted_f1: float
    accuracy: float
    per_class: dict
    per_intent_accuracy: dict
    confusion: dict
    support: int
    split: str = ""
    nature: str = ""

    def lines(self, run_id: str = "run") -> list:
        out = [f"{run_id}\t{self.split}\toverall\tweighted_f1\t{self.weighted_f1:.6f}",
               f"{run_id}\t{self.split}\toverall\taccuracy\t{self.accuracy:.6f}"]
        for cls in sorted(self.per_class, key=str):
            s = self.per_class[cls]
            out.append(f"{run_id}\t{self.split}\t{cls}\tf1\t{s.f1:.6f}")
        for intent in sorted(self.per_intent_accuracy):
            acc = self.per_intent_accuracy[intent]
            out.append(f"{run_id}\t{self.split}\t{intent}\taccuracy\t{acc:.6f}")
        return out


def task_b_labels(instance, predicted_index):
    """(gold label, predicted label) for one instance and prediction."""
    intent = instance.intent.value if instance.intent else OTHER_LABEL
    gold = intent if instance.gold_index is not None else NO_VALUE_LABEL
    if predicted_index is None:
        pred = NO_VALUE_LABEL
    else:
        seg = instance.page.segment(predicted_index)
        if seg.role is Role.VALUE and seg.intent is not None:
            pred = seg.intent.value
        else:
            pred = OTHER_LABEL
    return gold, pred


def task_b_report(instances, preds, split: str = "",
                  nature: str = "") -> EvalReport:
    """Score predicted segment ids against the linked gold values."""
    if len(instances) != len(preds):
        raise ValueError("instances and predictions differ in length")
    if not instances:
        raise ValueError("empty input")
    golds, predicted = [], []
    confusion = Counter()
    intent_hits = defaultdict(int)
    intent_total = defaultdict(int)
    exact = 0
    for inst, pred in zip(instances, preds):
        g, p = task_b_labels(inst, pred)
        golds.append(g)
        predicted.append(p)
        confusion[(g, p)] += 1
        if inst.intent is not None:
            intent_total[inst.intent.value] += 1
            if pred == inst.gold_index:
                intent_hits[inst.intent.value] += 1
        exact += pred == inst.gold_index
    score, detail = weighted_f1(predicted, golds)
    per_intent = {k: intent_hits[k] / intent_total[k] for k in intent_total}
    return EvalReport(weighted_f1=score, accuracy=exact / len(instances),
                      per_class=detail, per_intent_accuracy=per_intent,
                      confusion=dict(confusion), support=len(instances),
                      split=split, nature=nature)


def evaluate_documents(params, documents, cfg=None, split: str = "",
                       nature: str = "") -> EvalReport:
    """Predict every link in `documents` and score the result."""
    from .dualnet import instances_from_documents, predict_instances
    cfg = cfg or params.config
    instances = instances_from_documents(documents, cfg)
    preds = predict_instances(params, instances, cfg)
    return task_b_report(instances, preds, split=split, nature=nature)


# --- parser-mode evaluation ---------------------------------------------------

def parser_mode_accuracy(pred_boxes, gold_boxes, intents=None,
                         threshold: float = 0.5):
    """Box-level accuracy: correct iff IoU >= threshold, or both absent."""
    if len(pred_boxes) != len(gold_boxes):
        raise ValueError("prediction/gold lists differ in length")
    if not gold_boxes:
        raise ValueError("empty input")
    intents = intents or [None] * len(gold_boxes)
    hits = 0
    intent_hits = defaultdict(int)
    intent_total = defaultdict(int)
    for pred, gold, intent in zip(pred_boxes, gold_boxes, intents):
        if gold is None:
            ok = pred is None
        elif pred is None:
            ok = False
        else:
            ok = iou(pred, gold) >= threshold
        hits += ok
        if intent is not None:
            key = intent.value if isinstance(intent, KeyIntent) else str(intent)
            intent_total[key] += 1
            intent_hits[key] += ok
    per_intent = {k: intent_hits[k] / intent_total[k] for k in intent_total}
    return hits / len(gold_boxes), per_intent


def parser_view_page(page, merge_rate: float, split_rate: float, seed: int):
    """Rebuild a page whose segments are the corrupted textline regions."""
    from .docmodel import DocumentPage, LayoutCategory, Segment
    regions = corrupt_parser_view(page, merge_rate, split_rate, seed)
    segments, tokens = [], []
    for i, (box, text) in enumerate(regions):
        segments.append(Segment(id=i, bbox=box, text=text,
                                category=LayoutCategory.OTHERS))
        tokens.extend(tile_tokens(i, box, text))
    return DocumentPage(page_w=page.page_w, page_h=page.page_h,
                        nature=page.nature, segments=segments, tokens=tokens)


def parser_mode_evaluate(params, documents, merge_rate: float,
                         split_rate: float, seed: int = 0, cfg=None,
                         threshold: float = 0.5):
    """Run the pointer model over parser-style regions and score by IoU."""
    from .dualnet import predict
    cfg = cfg or params.config
    pred_boxes, gold_boxes, intents = [], [], []
    for i, doc in enumerate(documents):
        view = parser_view_page(doc.page, merge_rate, split_rate, seed + i)
        if len(view.segments) > cfg.max_segments:
            continue
        for link in doc.links:
            key_text = doc.page.segment(link.key_segment).text
            pred = predict(key_text, view, params, cfg)
            pred_boxes.append(None if pred is None
                              else view.segment(pred).bbox)
            gold_boxes.append(None if link.value_segment is None
                              else doc.page.segment(link.value_segment).bbox)
            intents.append(link.intent)
    return parser_mode_accuracy(pred_boxes, gold_boxes, intents, threshold)


# --- corpus statistics ---------------------------------------------------------

_MONTHS_SHORT = "Jan|Feb|Mar|Apr|May|Jun|Jul|Aug|Sep|Oct|Nov|Dec"
_MONTHS_LONG = ("January|February|March|April|May|June|July|August"
                "|September|October|November|December")

_DATE_TAGGERS = (
    ("slashed", re.compile(r"^\d{2}/\d{2}/\d{4}$")),
    ("iso", re.compile(r"^\d{4}-\d{2}-\d{2}$")),
    ("day_mon_year", re.compile(rf"^\d{{1,2}} ({_MONTHS_SHORT}) \d{{4}}$")),
    ("long_month", re.compile(rf"^\d{{1,2}} ({_MONTHS_LONG}) \d{{4}}$")),
)
_ID_TAGGERS = (
    ("prefixed", re.compile(r"^ACN \d{3} \d{3} \d{3}$")),
    ("digits_spaced", re.compile(r"^\d{3} \d{3} \d{3}$")),
    ("digits_plain", re.compile(r"^\d{9}$")),
)
_SHARE_TAGGERS = (
    ("with_unit", re.compile(r"^[\d,]+ shares$")),
    ("grouped", re.compile(r"^\d{1,3}(,\d{3})+$")),
    ("plain", re.compile(r"^\d+$")),
)
_PCT_TAGGERS = (
    ("percent", re.compile(r"^\d+\.\d{2}%$")),
    ("one_dp", re.compile(r"^\d+\.\d%$")),
    ("bare", re.compile(r"^\d+\.\d+$")),
)

PATTERN_TAGGERS = {
    KeyIntent.COM_NM: (
        ("name_with_id", re.compile(r".+ ACN \d{9}$")),
        ("name_with_note", re.compile(r".+\(the Company\)$")),
        ("name_only", re.compile(r".+")),
    ),
    KeyIntent.COM_ID: _ID_TAGGERS,
    KeyIntent.HOLD_NM: (
        ("with_related", re.compile(r".+related bodies corporate$")),
        ("multi", re.compile(r".+ / .+")),
        ("name_only", re.compile(r".+")),
    ),
    KeyIntent.HOLD_ID: _ID_TAGGERS,
    KeyIntent.CHG_DATE: _DATE_TAGGERS,
    KeyIntent.GVN_DATE: _DATE_TAGGERS,
    KeyIntent.NTC_DATE: _DATE_TAGGERS,
    KeyIntent.CLASS: (
        ("fully_paid", re.compile(r"^Fully paid ordinary$")),
        ("ordinary", re.compile(r"^Ordinary( shares)?$")),
        ("abbrev", re.compile(r"^(FPO|ORD)$")),
    ),
    KeyIntent.PRE_SHR: _SHARE_TAGGERS,
    KeyIntent.PRE_PCT: _PCT_TAGGERS,
    KeyIntent.NEW_SHR: _SHARE_TAGGERS,
    KeyIntent.NEW_PCT: _PCT_TAGGERS,
}

UNMATCHED_PATTERN = "unmatched"


def tag_value_pattern(intent: KeyIntent, text: str) -> str:
    for name, regex in PATTERN_TAGGERS[intent]:
        if regex.match(text):
            return name
    return UNMATCHED_PATTERN


@dataclass
class StatsReport:
    split_counts: dict
    bbox_averages: dict
    intent_char_stats: dict
    relation_ratios: dict
    value_patterns: dict

    def lines(self) -> list:
        out = []
        for split, counts in self.split_counts.items():
            for key in sorted(counts):
                out.append(f"counts\t{split}\t{key}\t{counts[key]}")
        for cat in sorted(self.bbox_averages):
            row = self.bbox_averages[cat]
            out.append(
                f"bbox\t{cat}\twidth={row['width']:.2f}"
                f"\theight={row['height']:.2f}\tpx={row['px']:.2f}"
                f"\ttokens={row['tokens']:.2f}")
        for intent in sorted(self.intent_char_stats):
            row = self.intent_char_stats[intent]
            out.append(f"chars\t{intent}\tkey={row['key_chars']:.2f}"
                       f"\tvalue={row['value_chars']:.2f}")
        for intent in sorted(self.relation_ratios):
            row = self.relation_ratios[intent]
            out.append(f"relation\t{intent}"
                       f"\thorizontal={row['horizontal']:.2f}"
                       f"\tvertical={row['vertical']:.2f}")
        for intent in sorted(self.value_patterns):
            for family in sorted(self.value_patterns[intent]):
                pct = self.value_patterns[intent][family]
                out.append(f"pattern\t{intent}\t{family}\t{pct:.2f}")
        return out


def _documents_of(corpus):
    if isinstance(corpus, Corpus):
        return {name: corpus.splits[name] for name in corpus.split_names()}
    return {"all": list(corpus)}


def relation_ratio_stats(corpus) -> dict:
    """Horizontal/vertical percentages per intent over links with values."""
    counts = defaultdict(lambda: Counter())
    for docs in _documents_of(corpus).values():
        for doc in docs:
            for link in doc.links:
                if link.value_segment is None:
                    continue
                rel = pair_relation(doc.page.segment(link.key_segment).bbox,
                                    doc.page.segment(link.value_segment).bbox)
                counts[link.intent.value][rel] += 1
    ratios = {}
    for intent, c in counts.items():
        total = c[PairRelation.HORIZONTAL] + c[PairRelation.VERTICAL]
        ratios[intent] = {
            "horizontal": 100.0 * c[PairRelation.HORIZONTAL] / total,
            "vertical": 100.0 * c[PairRelation.VERTICAL] / total,
        }
    return ratios


def value_pattern_stats(corpus) -> dict:
    """Per-intent percentage of each grammar family among present values."""
    counts = defaultdict(Counter)
    for docs in _documents_of(corpus).values():
        for doc in docs:
            for link in doc.links:
                if link.value_segment is None:
                    continue
                text = doc.page.segment(link.value_segment).text
                counts[link.intent][tag_value_pattern(link.intent, text)] += 1
    out = {}
    for intent, c in counts.items():
        total = sum(c.values())
        out[intent.value] = {fam: 100.0 * n / total for fam, n in c.items()}
    return out


def component_stats(corpus) -> StatsReport:
    """Counts per split plus box/token averages, char stats and ratios."""
    split_counts = {}
    box_acc = defaultdict(lambda: {"width": 0.0, "height": 0.0, "px": 0.0,
                                   "tokens": 0.0, "n": 0})
    key_chars = defaultdict(list)
    value_chars = defaultdict(list)
    for split, docs in _documents_of(corpus).items():
        counts = Counter()
        counts["documents"] = len(docs)
        for doc in docs:
            token_by_parent = Counter(t.parent for t in doc.page.tokens)
            for seg in doc.page.segments:
                counts[seg.category.value] += 1
                acc = box_acc[seg.category.value]
                acc["width"] += seg.bbox.w
                acc["height"] += seg.bbox.h
                acc["px"] += seg.bbox.area
                acc["tokens"] += token_by_parent[seg.id]
                acc["n"] += 1
            for link in doc.links:
                key_chars[link.intent.value].append(
                    len(doc.page.segment(link.key_segment).text))
                if link.value_segment is not None:
                    value_chars[link.intent.value].append(
                        len(doc.page.segment(link.value_segment).text))
        split_counts[split] = dict(counts)
    bbox_averages = {
        cat: {"width": acc["width"] / acc["n"],
              "height": acc["height"] / acc["n"],
              "px": acc["px"] / acc["n"],
              "tokens": acc["tokens"] / acc["n"]}
        for cat, acc in box_acc.items() if acc["n"]
    }
    intent_char_stats = {
        intent: {
            "key_chars": sum(key_chars[intent]) / len(key_chars[intent]),
            "value_chars": (sum(value_chars[intent]) / len(value_chars[intent])
                            if value_chars[intent] else 0.0),
        }
        for intent in key_chars
    }
    return StatsReport(split_counts=split_counts,
                       bbox_averages=bbox_averages,
                       intent_char_stats=intent_char_stats,
                       relation_ratios=relation_ratio_stats(corpus),
                       value_patterns=value_pattern_stats(corpus))


# --- ablation runner ------------------------------------------------------------

@dataclass
class AblationCell:
    aspects: str
    pe_variant: str
    reports: dict = field(default_factory=dict)  # split -> EvalReport
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


@dataclass
class AblationMatrix:
    cells: list

    def lines(self) -> list:
        out = []
        for cell in self.cells:
            run_id = f"aspects={cell.aspects or 'none'},pe={cell.pe_variant}"
            if cell.failed:
                out.append(f"{run_id}\t-\tstatus\tfailed\t{cell.error}")
                continue
            for split in sorted(cell.reports):
                out.extend(cell.reports[split].lines(run_id))
        return out

    def table(self) -> str:
        splits = sorted({s for c in self.cells for s in c.reports})
        header = ["aspects", "pe"] + [f"{s} F1" for s in splits]
        rows = [header]
        for cell in self.cells:
            row = [cell.aspects or "none", cell.pe_variant]
            if cell.failed:
                row += ["failed"] * len(splits)
            else:
                row += [f"{cell.reports[s].weighted_f1 * 100:.2f}"
                        if s in cell.reports else "-" for s in splits]
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths))
                         for r in rows)


def run_ablation(corpus: Corpus, base_cfg, aspect_grid, pe_grid,
                 eval_splits=None) -> AblationMatrix:
    """Train and evaluate one model per (aspect set, PE variant) cell.

    A failing cell is recorded and the sweep continues.
    """
    from .dualnet import train
    if not aspect_grid or not pe_grid:
        raise ValueError("aspect and PE grids must be nonempty")
    eval_splits = eval_splits or [s for s in corpus.split_names()
                                  if s.startswith("test")]
    cells = []
    for aspects in aspect_grid:
        for pe in pe_grid:
            flags = tuple(aspects)
            cell = AblationCell(aspects="".join(flags), pe_variant=pe)
            try:
                cfg = base_cfg.with_overrides(aspect_flags=flags, pe_variant=pe)
                params, _ = train(corpus, cfg)
                for split in eval_splits:
                    docs = corpus.splits.get(split, [])
                    if docs:
                        cell.reports[split] = evaluate_documents(
                            params, docs, cfg, split=split,
                            nature=docs[0].page.nature.value)
            except Exception as exc:  # keep sweeping; cell marked failed
                cell.error = f"{type(exc).__name__}: {exc}"
            cells.append(cell)
    return AblationMatrix(cells=cells)
