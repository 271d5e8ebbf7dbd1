"""Edit distances, CER/WER, protection success rate, failure filtering and AUC."""
from __future__ import annotations

import csv
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import AllExcluded, EmptyReference, SingleClass

SUCCESS_CER = 50.0
FAILURE_SENTINELS = ("NA",)

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")
_WS = re.compile(r"\s+")


@dataclass(frozen=True)
class TextNormalizer:
    """Text canonicalisation applied before scoring.

    The defaults lowercase, strip ASCII punctuation and collapse runs of
    whitespace.
    """

    lowercase: bool = True
    strip_punctuation: bool = True

    def __call__(self, text: str) -> str:
        if self.lowercase:
            text = text.lower()
        if self.strip_punctuation:
            text = _PUNCT.sub("", text)
        return _WS.sub(" ", text).strip()


normalize_text = TextNormalizer()


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def cer(reference: str, hypothesis: str, normalizer: TextNormalizer = normalize_text, count_spaces: bool = True) -> float:
    """Character error rate in percent; may exceed 100."""
    ref, hyp = normalizer(reference), normalizer(hypothesis)
    if not count_spaces:
        ref, hyp = ref.replace(" ", ""), hyp.replace(" ", "")
    if not ref:
        raise EmptyReference("reference is empty after normalisation")
    return 100.0 * edit_distance(ref, hyp) / len(ref)


def wer(reference: str, hypothesis: str, normalizer: TextNormalizer = normalize_text) -> float:
    """Word error rate in percent over whitespace tokens; may exceed 100."""
    ref, hyp = normalizer(reference).split(), normalizer(hypothesis).split()
    if not ref:
        raise EmptyReference("reference is empty after normalisation")
    return 100.0 * edit_distance(ref, hyp) / len(ref)


# --------------------------------------------------------------------------
# failure filtering


@dataclass(frozen=True)
class RepetitionRule:
    max_ngram: int = 3
    min_repeats: int = 5
    min_coverage: float = 0.8


def is_degenerate_repetition(text: str, rule: RepetitionRule = RepetitionRule()) -> bool:
    tokens = text.split()
    if not tokens:
        return False
    for n in range(1, rule.max_ngram + 1):
        for start in range(len(tokens) - n + 1):
            gram = tokens[start : start + n]
            reps = 1
            pos = start + n
            while tokens[pos : pos + n] == gram:
                reps += 1
                pos += n
            if reps >= rule.min_repeats and reps * n >= rule.min_coverage * len(tokens):
                return True
    return False


def is_failure_text(text: str, rule: RepetitionRule = RepetitionRule()) -> bool:
    stripped = text.strip()
    return not stripped or stripped in FAILURE_SENTINELS or is_degenerate_repetition(stripped, rule)


@dataclass
class Transcription:
    text: str
    is_failure: bool = False

    @classmethod
    def from_text(cls, text: str, rule: RepetitionRule = RepetitionRule()) -> "Transcription":
        return cls(text, is_failure_text(text, rule))


def filter_failures(hypotheses, rule: RepetitionRule = RepetitionRule()) -> list[Transcription]:
    """Flag empty outputs, the ``NA`` sentinel and degenerate repetitions."""
    out = []
    for h in hypotheses:
        text = h.text if isinstance(h, Transcription) else str(h)
        out.append(Transcription(text, is_failure_text(text, rule)))
    return out


# --------------------------------------------------------------------------
# per-clip records and aggregates


@dataclass
class EvalRecord:
    clip_id: str
    reference: str
    hypothesis: Transcription
    cer: float = field(init=False)
    wer: float = field(init=False)
    success: bool = field(init=False)
    excluded: bool = field(init=False)

    def __post_init__(self):
        self.cer = cer(self.reference, self.hypothesis.text)
        self.wer = wer(self.reference, self.hypothesis.text)
        self.excluded = bool(self.hypothesis.is_failure)
        self.success = (not self.excluded) and self.cer >= SUCCESS_CER

    def as_row(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "reference": self.reference,
            "hypothesis": self.hypothesis.text,
            "cer": round(self.cer, 4),
            "wer": round(self.wer, 4),
            "success": int(self.success),
            "excluded": int(self.excluded),
        }


def make_records(ids, references, hypotheses) -> list[EvalRecord]:
    flagged = filter_failures(hypotheses)
    return [EvalRecord(i, r, h) for i, r, h in zip(ids, references, flagged)]


def psr(records) -> float:
    """Percentage of non-excluded records whose CER is at least 50."""
    kept = [r for r in records if not r.excluded]
    if not kept:
        raise AllExcluded("every record was excluded as a recognition failure")
    return 100.0 * sum(r.cer >= SUCCESS_CER for r in kept) / len(kept)


def summarize(records) -> dict:
    kept = [r for r in records if not r.excluded]
    return {
        "n": len(records),
        "excluded": len(records) - len(kept),
        "psr": psr(records) if kept else float("nan"),
        "cer": float(np.mean([r.cer for r in kept])) if kept else float("nan"),
        "wer": float(np.mean([r.wer for r in kept])) if kept else float("nan"),
    }


def auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties get midranks)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both positive and negative labels")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def write_records_csv(records, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [r.as_row() for r in records]
    fields = ["clip_id", "reference", "hypothesis", "cer", "wer", "success", "excluded"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def write_summary_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(rows[0].keys()) if rows else ["condition", "n", "excluded", "psr", "cer", "wer"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})
    return path
