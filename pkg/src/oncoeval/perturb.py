"""Robustness testbeds: counterfactual label corruption and misspelling
injection, deterministic under a seed, with full audit logs.

Fractional counts round half-up; a nonzero misspelling rate always
perturbs at least one eligible word. Eligible words are maximal
alphabetic runs of length >= 4, which keeps short clinical tokens like
"er", "t2" or "mo" intact.
"""

from __future__ import annotations

import json
import random
import re
import string
from dataclasses import dataclass, replace
from pathlib import Path

from oncoeval.corpus import InstructionInstance
from oncoeval.errors import ValidationError
from oncoeval.metrics import exact_match
from oncoeval.util import derive_rng, fisher_yates, round_half_up, stable_seed

MISSPELL_OPS = ("delete", "insert", "substitute", "transpose")

_WORD_RE = re.compile(r"[A-Za-z]+")


@dataclass(frozen=True)
class CounterfactualSpec:
    rate: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValidationError(f"counterfactual rate must be in [0, 1], got {self.rate}")


@dataclass(frozen=True)
class MisspellSpec:
    rate: float
    seed: int
    ops_enabled: tuple[str, ...] = MISSPELL_OPS

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValidationError(f"misspelling rate must be in [0, 1], got {self.rate}")
        if not self.ops_enabled:
            raise ValidationError("ops_enabled must not be empty")
        for op in self.ops_enabled:
            if op not in MISSPELL_OPS:
                raise ValidationError(f"unknown misspelling op {op!r}")


@dataclass(frozen=True)
class LogEntry:
    instance_id: str
    kind: str
    before: str
    after: str
    detail: str


@dataclass
class PerturbationLog:
    entries: list[LogEntry]
    seed: int
    rate: float

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for e in self.entries:
                record = {
                    "instance_id": e.instance_id,
                    "kind": e.kind,
                    "before": e.before,
                    "after": e.after,
                    "detail": e.detail,
                }
                handle.write(json.dumps(record, ensure_ascii=False))
                handle.write("\n")


@dataclass(frozen=True)
class Edit:
    start: int
    end: int
    before: str
    after: str
    op: str


def _candidate_pools(inst: InstructionInstance, train: list[InstructionInstance]):
    """Replacement pools in preference order: same question type first,
    then everything else."""
    question_type = inst.meta.get("question_type")
    same: list[str] = []
    other: list[str] = []
    for cand in train:
        if cand.id == inst.id:
            continue
        if question_type is not None and cand.meta.get("question_type") == question_type:
            same.append(cand.response)
        else:
            other.append(cand.response)
    if question_type is None:
        return (("corpus", other),)
    return (("same_question_type", same), ("different_question_type", other))


def _pick_replacement(
    inst: InstructionInstance, train: list[InstructionInstance], rng: random.Random
) -> tuple[str, str]:
    """A wrong answer for inst: absent from its context (case-insensitive
    substring test) and not exact-match-equal to the original response."""
    context_lower = inst.context.lower()
    for origin, pool in _candidate_pools(inst, train):
        pool = list(dict.fromkeys(pool))
        fisher_yates(pool, rng)
        for response in pool:
            if response.lower() in context_lower:
                continue
            if exact_match(response, inst.response, multi_entity=True):
                continue
            return response, origin
    raise ValidationError(f"no counterfactual replacement found for instance {inst.id}")


def corrupt_labels(
    train: list[InstructionInstance], spec: CounterfactualSpec
) -> tuple[list[InstructionInstance], PerturbationLog]:
    """Wrongly label round_half_up(rate * len(train)) instances.

    Selection is the prefix of a seeded shuffle, so raising the rate with
    the same seed corrupts a superset of the instances. Unselected
    instances pass through untouched; ids are preserved everywhere.
    """
    if not train:
        raise ValidationError("corrupt_labels needs a non-empty train set")
    count = round_half_up(spec.rate * len(train))
    order = list(range(len(train)))
    fisher_yates(order, random.Random(spec.seed))
    selected = set(order[:count])

    corrupted: list[InstructionInstance] = []
    entries: list[LogEntry] = []
    for i, inst in enumerate(train):
        if i not in selected:
            corrupted.append(inst)
            continue
        rng = derive_rng(spec.seed, inst.id, "counterfactual")
        replacement, origin = _pick_replacement(inst, train, rng)
        meta = dict(inst.meta)
        meta["perturbed"] = "counterfactual"
        corrupted.append(replace(inst, response=replacement, meta=meta))
        entries.append(LogEntry(inst.id, "counterfactual", inst.response, replacement, origin))
    entries.sort(key=lambda e: e.instance_id)
    return corrupted, PerturbationLog(entries, spec.seed, spec.rate)


def _op_delete(word: str, rng: random.Random) -> str:
    i = rng.randrange(1, len(word) - 1)
    return word[:i] + word[i + 1 :]


def _op_insert(word: str, rng: random.Random) -> str:
    i = rng.randrange(len(word))
    return word[: i + 1] + word[i] + word[i + 1 :]


def _op_substitute(word: str, rng: random.Random) -> str:
    i = rng.randrange(len(word))
    letters = [c for c in string.ascii_lowercase if c != word[i].lower()]
    return word[:i] + rng.choice(letters) + word[i + 1 :]


def _op_transpose(word: str, rng: random.Random) -> str:
    # Only swaps of unequal interior neighbours change the word; words
    # like "aaaa" have none, so fall back to a delete.
    positions = [i for i in range(1, len(word) - 2) if word[i] != word[i + 1]]
    if not positions:
        return _op_delete(word, rng)
    i = rng.choice(positions)
    return word[:i] + word[i + 1] + word[i] + word[i + 2 :]


_OP_FUNCS = {
    "delete": _op_delete,
    "insert": _op_insert,
    "substitute": _op_substitute,
    "transpose": _op_transpose,
}


def misspell_word(word: str, op: str, rng: random.Random) -> str:
    """Apply one typo op to a word of length >= 4; result always differs."""
    if len(word) < 4:
        raise ValidationError(f"word too short to misspell: {word!r}")
    return _OP_FUNCS[op](word, rng)


def inject_misspellings(text: str, spec: MisspellSpec) -> tuple[str, list[Edit]]:
    """Misspell round_half_up(rate * eligible) words of the text.

    Eligible words are maximal alphabetic runs of length >= 4; a nonzero
    rate with any eligible words perturbs at least one. Whitespace and
    ineligible tokens are untouched; edits report original char offsets.
    """
    eligible = [m for m in _WORD_RE.finditer(text) if m.end() - m.start() >= 4]
    if spec.rate == 0.0 or not eligible:
        return text, []
    count = min(len(eligible), max(1, round_half_up(spec.rate * len(eligible))))
    rng = random.Random(spec.seed)
    chosen = sorted(rng.sample(range(len(eligible)), count))
    ops = sorted(spec.ops_enabled)
    edits: list[Edit] = []
    for idx in chosen:
        match = eligible[idx]
        word = match.group()
        op = rng.choice(ops)
        misspelled = misspell_word(word, op, rng)
        edits.append(Edit(match.start(), match.end(), word, misspelled, op))

    parts: list[str] = []
    cursor = 0
    for edit in edits:
        parts.append(text[cursor : edit.start])
        parts.append(edit.after)
        cursor = edit.end
    parts.append(text[cursor:])
    return "".join(parts), edits


def perturb_dataset(
    instances: list[InstructionInstance],
    field: str,
    spec: MisspellSpec,
) -> tuple[list[InstructionInstance], PerturbationLog]:
    """Misspell one field of every instance, per-instance seeded.

    The per-instance seed derives from (seed, instance id), so execution
    order cannot change any output; the log lists edits in stable
    instance-id order.
    """
    if field not in ("context", "response"):
        raise ValidationError(f"field must be context or response, got {field!r}")
    out: list[InstructionInstance] = []
    entries: list[LogEntry] = []
    for inst in instances:
        per_instance = MisspellSpec(spec.rate, stable_seed(spec.seed, inst.id), spec.ops_enabled)
        text = getattr(inst, field)
        perturbed, edits = inject_misspellings(text, per_instance)
        if edits:
            meta = dict(inst.meta)
            meta["perturbed"] = "misspelling"
            out.append(replace(inst, **{field: perturbed, "meta": meta}))
            for edit in edits:
                entries.append(
                    LogEntry(inst.id, "misspelling", edit.before, edit.after, f"{edit.op}@{edit.start}")
                )
        else:
            out.append(inst)
    entries.sort(key=lambda e: e.instance_id)
    return out, PerturbationLog(entries, spec.seed, spec.rate)
