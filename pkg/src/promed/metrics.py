"""Report evaluation: text quality (BLEU, ROUGE-L) and clinical efficacy.

The labeler is a rule-based approximation of a radiology report labeler:
per-category phrase lists are matched sentence by sentence with in-sentence
negation cues, and the report assembler's IDENTIFIED CONDITIONS section is
parsed as explicit positives. Phrase lists ship as an editable resource file
(``data/label_phrases.json``).
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Mapping, Optional, Sequence

from .fusion import CONDITIONS_SENTINEL
from .labels import CATEGORIES, NUM_CATEGORIES

BLEU_SMOOTHING_EPS = 1e-9

LABELER_NEGATION_CUES = (
    ("no",),
    ("without",),
    ("negative", "for"),
    ("free", "of"),
    ("resolved",),
)


def tokenize(text: str) -> list[str]:
    """Lowercase split on whitespace and punctuation."""
    return re.findall(r"[a-z0-9']+", text.lower())


# ----------------------------------------------------------------------
# BLEU

def _ngram_counts(tokens: Sequence[str], k: int) -> Counter:
    return Counter(tuple(tokens[i : i + k]) for i in range(len(tokens) - k + 1))


def _clipped_counts(candidate: Sequence[str], reference: Sequence[str], k: int) -> tuple[int, int]:
    """(clipped matching k-gram count, total candidate k-grams)."""
    cand = _ngram_counts(candidate, k)
    ref = _ngram_counts(reference, k)
    clipped = sum(min(count, ref[gram]) for gram, count in cand.items())
    return clipped, max(0, len(candidate) - k + 1)


def bleu(candidate: Sequence[str], reference: Sequence[str], n: int = 4) -> float:
    """Sentence BLEU-n: geometric mean of modified k-gram precisions for
    k = 1..n times the brevity penalty exp(min(0, 1 - r/c)). Zero k-gram
    counts are smoothed to a tiny epsilon in the numerator."""
    if not 1 <= n <= 4:
        raise ValueError("n must be in 1..4")
    if not reference:
        raise ValueError("reference must be non-empty")
    if not candidate:
        return 0.0

    log_sum = 0.0
    for k in range(1, n + 1):
        clipped, total = _clipped_counts(candidate, reference, k)
        if total == 0:
            clipped, total = BLEU_SMOOTHING_EPS, 1
        elif clipped == 0:
            clipped = BLEU_SMOOTHING_EPS
        log_sum += math.log(clipped / total)
    precision = math.exp(log_sum / n)
    bp = math.exp(min(0.0, 1.0 - len(reference) / len(candidate)))
    return precision * bp


def corpus_bleu(
    pairs: Sequence[tuple[Sequence[str], Sequence[str]]], n: int = 4
) -> float:
    """Micro-averaged corpus BLEU-n: clipped counts summed before the ratio."""
    if not pairs:
        raise ValueError("empty corpus")
    log_sum = 0.0
    for k in range(1, n + 1):
        clipped_total = 0.0
        cand_total = 0
        for cand, ref in pairs:
            clipped, total = _clipped_counts(cand, ref, k)
            clipped_total += clipped
            cand_total += total
        if cand_total == 0:
            clipped_total, cand_total = BLEU_SMOOTHING_EPS, 1
        elif clipped_total == 0:
            clipped_total = BLEU_SMOOTHING_EPS
        log_sum += math.log(clipped_total / cand_total)
    precision = math.exp(log_sum / n)
    r = sum(len(ref) for _, ref in pairs)
    c = sum(len(cand) for cand, _ in pairs)
    if c == 0:
        return 0.0
    bp = math.exp(min(0.0, 1.0 - r / c))
    return precision * bp


# ----------------------------------------------------------------------
# ROUGE-L

def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b, start=1):
            curr.append(prev[j - 1] + 1 if x == y else max(prev[j], curr[j - 1]))
        prev = curr
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """LCS-based F-measure with beta = 1."""
    if not reference:
        raise ValueError("reference must be non-empty")
    if not candidate:
        return 0.0
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


# ----------------------------------------------------------------------
# labeler

class LabelValue(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    UNMENTIONED = "unmentioned"


@dataclass(frozen=True)
class LabelVector:
    """Ternary mention status per category, in the fixed category order."""

    values: tuple[LabelValue, ...]

    def __post_init__(self):
        if len(self.values) != NUM_CATEGORIES:
            raise ValueError(f"expected {NUM_CATEGORIES} values")

    def __getitem__(self, category: str) -> LabelValue:
        return self.values[CATEGORIES.index(category)]

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, LabelValue | str]) -> "LabelVector":
        return cls(
            tuple(LabelValue(mapping.get(c, LabelValue.UNMENTIONED)) for c in CATEGORIES)
        )

    @classmethod
    def from_booleans(cls, flags: Sequence[bool]) -> "LabelVector":
        return cls(
            tuple(LabelValue.POSITIVE if f else LabelValue.UNMENTIONED for f in flags)
        )


def _load_phrases() -> dict[str, list[list[str]]]:
    raw = resources.files("promed.data").joinpath("label_phrases.json").read_text("utf-8")
    table = json.loads(raw)
    return {cat: [tokenize(p) for p in phrases] for cat, phrases in table.items()}


_PHRASES: Optional[dict[str, list[list[str]]]] = None


def _phrases() -> dict[str, list[list[str]]]:
    global _PHRASES
    if _PHRASES is None:
        _PHRASES = _load_phrases()
    return _PHRASES


def _negated(tokens: Sequence[str], match_start: int) -> bool:
    """Any negation cue earlier in the sentence than the match."""
    for cue in LABELER_NEGATION_CUES:
        n = len(cue)
        for i in range(0, match_start - n + 1):
            if tuple(tokens[i : i + n]) == cue:
                return True
    return False


def label_report(report: str, phrases: Optional[dict[str, list[list[str]]]] = None) -> LabelVector:
    """Rule-based 14-category labeling of a report.

    Sentences are scanned against per-category phrase lists; a negation cue
    before the match in the same sentence yields negative, otherwise
    positive. The IDENTIFIED CONDITIONS section names explicit positives.
    The "no finding" category is exempt from negation (its phrases are
    themselves negative formulations).
    """
    phrases = phrases or _phrases()
    result: dict[str, LabelValue] = {}

    body = report
    sentinel_idx = report.find(CONDITIONS_SENTINEL)
    if sentinel_idx >= 0:
        body = report[:sentinel_idx]
        listing = report[sentinel_idx + len(CONDITIONS_SENTINEL) :].splitlines()[0]
        for name in (part.strip().lower() for part in listing.split(";")):
            if name in CATEGORIES:
                result[name] = LabelValue.POSITIVE

    for sentence in re.split(r"[.!?\n]+", body):
        tokens = tokenize(sentence)
        if not tokens:
            continue
        for category, phrase_list in phrases.items():
            if result.get(category) is LabelValue.POSITIVE:
                continue
            for phrase in sorted(phrase_list, key=len, reverse=True):
                n = len(phrase)
                matched = False
                for start in range(0, len(tokens) - n + 1):
                    if tokens[start : start + n] != phrase:
                        continue
                    matched = True
                    if category != "no finding" and _negated(tokens, start):
                        result.setdefault(category, LabelValue.NEGATIVE)
                    else:
                        result[category] = LabelValue.POSITIVE
                    break
                if matched:
                    break

    return LabelVector.from_mapping(result)


# ----------------------------------------------------------------------
# clinical efficacy

@dataclass(frozen=True)
class EfficacyScores:
    precision: float
    recall: float
    f1: float
    per_label_recall: tuple[float, ...]
    recall_defined: bool = True  # False when there were no positive truths

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_label_recall": {
                cat: r for cat, r in zip(CATEGORIES, self.per_label_recall)
            },
            "recall_defined": self.recall_defined,
        }


def clinical_efficacy(
    preds: Sequence[LabelVector], truths: Sequence[LabelVector]
) -> EfficacyScores:
    """Positive-vs-rest micro precision/recall/F1 over all 14 x N decisions,
    plus per-category recall. Negative and unmentioned both count as
    not-positive."""
    if len(preds) != len(truths):
        raise ValueError(f"length mismatch: {len(preds)} preds vs {len(truths)} truths")
    if not preds:
        raise ValueError("empty input")

    tp = fp = fn = 0
    label_tp = [0] * NUM_CATEGORIES
    label_pos = [0] * NUM_CATEGORIES
    for pred, truth in zip(preds, truths):
        for j in range(NUM_CATEGORIES):
            p = pred.values[j] is LabelValue.POSITIVE
            t = truth.values[j] is LabelValue.POSITIVE
            if t:
                label_pos[j] += 1
                if p:
                    label_tp[j] += 1
            if p and t:
                tp += 1
            elif p:
                fp += 1
            elif t:
                fn += 1

    precision = tp / (tp + fp) if tp + fp else 0.0
    recall_defined = tp + fn > 0
    recall = tp / (tp + fn) if recall_defined else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    per_label = tuple(
        label_tp[j] / label_pos[j] if label_pos[j] else 0.0 for j in range(NUM_CATEGORIES)
    )
    return EfficacyScores(precision, recall, f1, per_label, recall_defined)


# ----------------------------------------------------------------------
# corpus-level summary

def evaluate_corpus(
    candidates: Mapping[str, str],
    references: Mapping[str, str],
    truth_labels: Optional[Mapping[str, LabelVector]] = None,
) -> dict:
    """Full metric summary over id-aligned candidate and reference reports.

    Truth labels default to running the labeler on the references.
    """
    missing = sorted(set(candidates) ^ set(references))
    if missing:
        raise ValueError(f"unmatched ids: {missing}")
    if not candidates:
        raise ValueError("empty corpus")

    ids = sorted(candidates)
    pairs = [(tokenize(candidates[i]), tokenize(references[i])) for i in ids]
    preds = [label_report(candidates[i]) for i in ids]
    if truth_labels is not None:
        truths = [truth_labels[i] for i in ids]
    else:
        truths = [label_report(references[i]) for i in ids]
    eff = clinical_efficacy(preds, truths)

    summary = {f"bleu{k}": corpus_bleu(pairs, k) for k in range(1, 5)}
    summary["rougeL"] = sum(rouge_l(c, r) for c, r in pairs) / len(pairs)
    summary.update(eff.to_dict())
    summary["num_pairs"] = len(pairs)
    return summary
