import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oncoeval.errors import ValidationError
from oncoeval.genclient import GenerationRecord
from oncoeval.metrics import (
    MetricTriple,
    average_f1,
    bleu2,
    exact_match,
    lcs_length,
    normalize,
    rouge_l,
    score_corpus,
    score_instance,
)

tokens = st.lists(st.sampled_from("abcdefg"), max_size=12)
nonempty_tokens = st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=12)


# Independent oracles


def _is_subsequence(sub, seq):
    pos = 0
    for token in seq:
        if pos < len(sub) and token == sub[pos]:
            pos += 1
    return pos == len(sub)


def brute_force_lcs(a, b):
    """Enumerate every subsequence of a, longest first."""
    from itertools import combinations

    for length in range(len(a), 0, -1):
        for combo in combinations(a, length):
            if _is_subsequence(combo, b):
                return length
    return 0


def oracle_bleu2(cand, ref):
    """n-gram counting from scratch, list-based, log-space geometric mean."""
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in (1, 2):
        cand_grams = [tuple(cand[i : i + n]) for i in range(len(cand) - n + 1)]
        ref_grams = [tuple(ref[i : i + n]) for i in range(len(ref) - n + 1)]
        matched = sum(min(cand_grams.count(g), ref_grams.count(g)) for g in set(cand_grams))
        total = len(cand_grams)
        if matched == 0:
            matched, total = 1, total + 1
        log_sum += 0.5 * math.log(matched / total)
    brevity = min(1.0, math.exp(1.0 - len(ref) / len(cand)))
    return brevity * math.exp(log_sum)


def _record(instance_id, output):
    return GenerationRecord(instance_id=instance_id, output=output, latency_ms=0, backend_tag="echo")


# normalize


def test_normalize_splits_punctuation():
    assert normalize("NSCLC,  t2n0.") == ["nsclc", ",", "t2n0", "."]


def test_normalize_empty():
    assert normalize("") == []


@given(st.text(max_size=40))
def test_normalize_idempotent_on_joined_output(text):
    once = normalize(text)
    assert normalize(" ".join(once)) == once


# exact match


def test_exact_match_case_insensitive():
    assert exact_match("nsclc", "NSCLC") == 1


def test_exact_match_rejects_different_diagnoses():
    assert exact_match("metastatic breast cancer", "breast and lung cancer") == 0


def test_exact_match_set_rule_for_multi_entity():
    assert exact_match("pr, her2, er", "er, pr, her2", multi_entity=True) == 1
    assert exact_match("pr, her2", "er, pr, her2", multi_entity=True) == 0


# BLEU-2


def test_bleu2_identity():
    assert bleu2(["nsclc"], ["nsclc"]) == 1.0
    assert bleu2(list("abcde"), list("abcde")) == 1.0


def test_bleu2_derived_value():
    # p1 = 2/3, p2 = 1/2, BP = 1 -> sqrt(1/3)
    assert bleu2(["a", "b", "c"], ["a", "b", "d"]) == pytest.approx(math.sqrt(1.0 / 3.0), abs=1e-12)


def test_bleu2_empty_candidate():
    assert bleu2([], ["a", "b"]) == 0.0


@given(tokens, tokens)
def test_bleu2_matches_oracle(cand, ref):
    assert bleu2(cand, ref) == pytest.approx(oracle_bleu2(cand, ref), abs=1e-9)


@given(tokens, tokens)
def test_bleu2_bounds(cand, ref):
    assert 0.0 <= bleu2(cand, ref) <= 1.0


# LCS and ROUGE-L


def test_lcs_identity_and_empty():
    assert lcs_length(["a", "b", "c"], ["a", "b", "c"]) == 3
    assert lcs_length(["a", "b"], []) == 0
    assert lcs_length([], []) == 0


@given(tokens, tokens)
def test_lcs_matches_brute_force(a, b):
    assert lcs_length(a, b) == brute_force_lcs(a, b)


def test_rouge_l_identity():
    assert rouge_l(["x", "y"], ["x", "y"]) == MetricTriple(1.0, 1.0, 1.0)


def test_rouge_l_derived_value():
    triple = rouge_l(["the", "cat", "sat"], ["the", "cat", "ate", "sat"])
    assert triple.precision == pytest.approx(1.0)
    assert triple.recall == pytest.approx(0.75)
    assert triple.f1 == pytest.approx(6.0 / 7.0, abs=1e-12)


def test_rouge_l_disjoint_vocabulary():
    assert rouge_l(["a", "b"], ["c", "d"]) == MetricTriple(0.0, 0.0, 0.0)


@given(nonempty_tokens, nonempty_tokens)
def test_rouge_recall_non_increasing_when_reference_grows(cand, ref):
    grown = ref + ["zzz"]  # token never produced by the candidate alphabet
    assert rouge_l(cand, grown).recall <= rouge_l(cand, ref).recall


@given(nonempty_tokens)
def test_exact_match_implies_perfect_bleu_and_rouge(seq):
    text = " ".join(seq)
    assert exact_match(text, text) == 1
    assert bleu2(seq, seq) == 1.0
    assert rouge_l(seq, seq).f1 == 1.0


# aggregation


def test_average_f1_reproduces_diagnosis_row():
    assert average_f1(83.50, 86.60, 90.34) == pytest.approx(86.81, abs=0.005)


def test_average_f1_reproduces_phenotype_row():
    assert average_f1(89.37, 91.98, 93.98) == pytest.approx(91.78, abs=0.005)


def test_score_corpus_one_match_one_empty():
    # Hand-evaluated: precision over the single non-empty output, recall
    # over both instances.
    records = [_record("a", "tumor present"), _record("b", "")]
    gold = {"a": "tumor present", "b": "anything"}
    result = score_corpus(records, gold)
    assert result.exact_match.precision == pytest.approx(1.0)
    assert result.exact_match.recall == pytest.approx(0.5)
    assert result.exact_match.f1 == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert result.n_instances == 2
    assert result.n_nonempty == 1


def test_score_corpus_symmetric_when_all_nonempty():
    rng = random.Random(5)
    gold = {}
    records = []
    for i in range(25):
        reference = " ".join(rng.choices("abcdefgh", k=rng.randint(1, 8)))
        output = " ".join(rng.choices("abcdefgh", k=rng.randint(1, 8)))
        gold[f"i{i}"] = reference
        records.append(_record(f"i{i}", output))
    result = score_corpus(records, gold)
    for triple in (result.exact_match, result.bleu2, result.rouge_l):
        assert triple.precision == pytest.approx(triple.recall)
        assert triple.f1 == pytest.approx(triple.precision)
    mean = (result.exact_match.f1 + result.bleu2.f1 + result.rouge_l.f1) / 3.0
    assert result.average_f1 == pytest.approx(mean, abs=1e-9)


def test_score_corpus_missing_gold():
    with pytest.raises(ValidationError, match="missing-id"):
        score_corpus([_record("missing-id", "x")], {})


@settings(max_examples=30)
@given(st.text(max_size=20), st.text(min_size=1, max_size=20))
def test_score_instance_bounds(output, reference):
    scores = score_instance(output, reference)
    for value in scores.values():
        assert 0.0 <= value <= 1.0
