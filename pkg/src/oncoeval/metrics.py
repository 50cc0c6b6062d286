"""Exact Match, BLEU-2, and ROUGE-L with precision/recall/F1 corpus aggregation.

Per-instance scores live in [0, 1]. Corpus aggregation follows the
non-empty/all-instances split: precision averages over instances whose
output is non-blank, recall averages over every instance (blank outputs
score 0), F1 is the harmonic mean of the two. When every output is
non-blank this collapses to precision = recall = F1.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

from oncoeval._kernels import lcs_len
from oncoeval.errors import ValidationError

TokenSeq = list[str]

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

METRIC_NAMES = ("exact_match", "bleu2", "rouge_l")


def normalize(text: str) -> TokenSeq:
    """Lowercase, split punctuation off words, drop empty tokens.

    Alphanumeric runs stay whole ("t2n0"), every other non-space character
    becomes its own token. Idempotent on its own space-joined output.
    """
    return _TOKEN_RE.findall(text.lower())


def exact_match(candidate: str, reference: str, multi_entity: bool = False) -> int:
    """1 iff the normalized token sequences are equal.

    With multi_entity=True (phenotype answers), equality is set equality
    over comma-separated items, so "pr, her2, er" matches "er, pr, her2".
    """
    if multi_entity:
        cand = {tuple(normalize(part)) for part in candidate.split(",")}
        ref = {tuple(normalize(part)) for part in reference.split(",")}
        cand.discard(())
        ref.discard(())
        return int(cand == ref)
    return int(normalize(candidate) == normalize(reference))


def _ngram_counts(tokens: TokenSeq, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu2(candidate: TokenSeq, reference: TokenSeq) -> float:
    """BLEU-2: brevity penalty times the geometric mean of the clipped
    unigram and bigram precisions.

    Any precision with a zero numerator gets add-one smoothing on both
    numerator and denominator, which keeps short correct answers away
    from log(0) and makes score(x, x) = 1 for any non-empty x.
    """
    if not candidate:
        return 0.0
    precisions = []
    for n in (1, 2):
        cand_counts = _ngram_counts(candidate, n)
        ref_counts = _ngram_counts(reference, n)
        matched = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
        total = sum(cand_counts.values())
        if matched == 0:
            matched += 1
            total += 1
        precisions.append(matched / total)
    brevity = min(1.0, math.exp(1.0 - len(reference) / len(candidate)))
    return brevity * math.sqrt(precisions[0] * precisions[1])


def lcs_length(a: TokenSeq, b: TokenSeq) -> int:
    """Longest common subsequence length over tokens."""
    ids: dict[str, int] = {}
    xa = [ids.setdefault(t, len(ids)) for t in a]
    xb = [ids.setdefault(t, len(ids)) for t in b]
    return lcs_len(xa, xb)


@dataclass(frozen=True)
class MetricTriple:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "MetricTriple":
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        return cls(precision, recall, f1)


def rouge_l(candidate: TokenSeq, reference: TokenSeq) -> MetricTriple:
    """ROUGE-L: precision/recall/F1 of the token-level LCS."""
    lcs = lcs_length(candidate, reference)
    precision = lcs / len(candidate) if candidate else 0.0
    recall = lcs / len(reference) if reference else 0.0
    return MetricTriple.from_pr(precision, recall)


def average_f1(em_f1: float, bleu2_f1: float, rouge_l_f1: float) -> float:
    """Mean of the three per-metric F1 values (unit-agnostic)."""
    return (em_f1 + bleu2_f1 + rouge_l_f1) / 3.0


@dataclass(frozen=True)
class MetricReport:
    exact_match: MetricTriple
    bleu2: MetricTriple
    rouge_l: MetricTriple
    average_f1: float
    n_instances: int
    n_nonempty: int
    task: str | None = None
    backend_tag: str | None = None
    retriever: str | None = None
    perturbation_kind: str | None = None
    perturbation_rate: float | None = None


def score_instance(output: str, reference: str, multi_entity: bool = False) -> dict[str, float]:
    """Per-instance scores for the three metrics, each in [0, 1]."""
    cand = normalize(output)
    ref = normalize(reference)
    return {
        "exact_match": float(exact_match(output, reference, multi_entity)),
        "bleu2": bleu2(cand, ref),
        "rouge_l": rouge_l(cand, ref).f1,
    }


def per_instance_scores(records, gold: dict[str, str], multi_entity: bool = False) -> dict[str, dict[str, float]]:
    """Score every record against its gold reference, keyed by instance id.

    Records need instance_id and output attributes (GenerationRecord).
    """
    scores: dict[str, dict[str, float]] = {}
    for record in records:
        if record.instance_id not in gold:
            raise ValidationError(f"no gold reference for instance {record.instance_id}")
        scores[record.instance_id] = score_instance(
            record.output, gold[record.instance_id], multi_entity
        )
    return scores


def aggregate_scores(
    scores: dict[str, dict[str, float]],
    nonempty: dict[str, bool],
    **metadata,
) -> MetricReport:
    """Fold per-instance scores into the corpus MetricReport.

    Sums run in instance-id order so parallel scoring cannot change the
    floating-point totals.
    """
    ids = sorted(scores)
    n = len(ids)
    n_nonempty = sum(1 for i in ids if nonempty[i])
    triples = {}
    for metric in METRIC_NAMES:
        hit_sum = sum(scores[i][metric] for i in ids if nonempty[i])
        all_sum = sum(scores[i][metric] for i in ids)
        precision = hit_sum / n_nonempty if n_nonempty else 0.0
        recall = all_sum / n if n else 0.0
        triples[metric] = MetricTriple.from_pr(precision, recall)
    return MetricReport(
        exact_match=triples["exact_match"],
        bleu2=triples["bleu2"],
        rouge_l=triples["rouge_l"],
        average_f1=average_f1(
            triples["exact_match"].f1, triples["bleu2"].f1, triples["rouge_l"].f1
        ),
        n_instances=n,
        n_nonempty=n_nonempty,
        **metadata,
    )


def score_corpus(records, gold: dict[str, str], multi_entity: bool = False, **metadata) -> MetricReport:
    """Score a batch of generation records against gold references."""
    scores = per_instance_scores(records, gold, multi_entity)
    nonempty = {r.instance_id: bool(r.output.strip()) for r in records}
    return aggregate_scores(scores, nonempty, **metadata)
