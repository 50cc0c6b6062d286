"""Documents, annotations, and instruction instances: validation, JSONL IO,
seeded splits, and synthetic de-identified corpora for desk-scale runs.

File formats (UTF-8, LF, one JSON object per line, fixed key order):
  instances:   id, task, instruction, context, response, meta
  documents:   id, kind, sentences, sections
  annotations: document_id, sentence_index, entity_type, surface
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

from oncoeval.errors import ValidationError
from oncoeval.util import fisher_yates

DOCUMENT_KINDS = ("clinical_note", "pathology_report")

TASKS = ("phenotype_qa", "diagnosis_generation")

ENTITY_TYPES = (
    "hormone_receptor_type",
    "hormone_receptor_status",
    "tumor_size",
    "tumor_site",
    "cancer_grade",
    "histological_type",
    "tumor_laterality",
    "cancer_stage",
)

INSTANCE_KEYS = ("id", "task", "instruction", "context", "response", "meta")
DOCUMENT_KEYS = ("id", "kind", "sentences", "sections")
ANNOTATION_KEYS = ("document_id", "sentence_index", "entity_type", "surface")


@dataclass
class Document:
    id: str
    kind: str
    sentences: list[str]
    sections: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class EntityAnnotation:
    document_id: str
    sentence_index: int
    entity_type: str
    surface: str


@dataclass
class InstructionInstance:
    id: str
    task: str
    instruction: str
    context: str
    response: str
    meta: dict = field(default_factory=dict)


@dataclass
class DatasetSplit:
    train: list[InstructionInstance]
    validation: list[InstructionInstance]
    test: list[InstructionInstance]
    seed: int
    ratios: tuple[float, float, float]


def validate_instance(inst: InstructionInstance, where: str = "") -> None:
    prefix = f"{where}: " if where else ""
    if not inst.id:
        raise ValidationError(f"{prefix}empty field id")
    if inst.task not in TASKS:
        raise ValidationError(f"{prefix}invalid field task: {inst.task!r}")
    for name in ("instruction", "context", "response"):
        if not getattr(inst, name):
            raise ValidationError(f"{prefix}empty field {name}")


def validate_document(doc: Document) -> None:
    if not doc.id:
        raise ValidationError("document with empty id")
    if doc.kind not in DOCUMENT_KINDS:
        raise ValidationError(f"document {doc.id}: invalid kind {doc.kind!r}")


def validate_annotation(ann: EntityAnnotation, doc: Document) -> None:
    """Annotations must point at an existing sentence and occur in it
    (case-insensitive substring)."""
    if ann.entity_type not in ENTITY_TYPES:
        raise ValidationError(
            f"annotation on {ann.document_id}: unknown entity type {ann.entity_type!r}"
        )
    if ann.sentence_index < 0 or ann.sentence_index >= len(doc.sentences):
        raise ValidationError(
            f"annotation on {ann.document_id}: sentence index {ann.sentence_index} out of range"
        )
    if not ann.surface:
        raise ValidationError(f"annotation on {ann.document_id}: empty surface")
    sentence = doc.sentences[ann.sentence_index]
    if ann.surface.lower() not in sentence.lower():
        raise ValidationError(
            f"annotation on {ann.document_id}: surface {ann.surface!r} "
            f"not found in sentence {ann.sentence_index}"
        )


def _parse_line(raw: str, lineno: int, keys: tuple[str, ...]) -> dict:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise ValidationError(f"line {lineno}: expected a JSON object")
    for key in keys:
        if key not in obj:
            raise ValidationError(f"line {lineno}: missing field {key}")
    return obj


def read_instances(path: str | Path) -> list[InstructionInstance]:
    """Parse a JSON-lines instance file, preserving order.

    Raises ValidationError naming the line number and field for malformed
    lines, and the offending id for duplicates.
    """
    instances: list[InstructionInstance] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            obj = _parse_line(raw, lineno, INSTANCE_KEYS[:-1])
            meta = obj.get("meta") or {}
            if not isinstance(meta, dict):
                raise ValidationError(f"line {lineno}: field meta must be an object")
            inst = InstructionInstance(
                id=obj["id"],
                task=obj["task"],
                instruction=obj["instruction"],
                context=obj["context"],
                response=obj["response"],
                meta=meta,
            )
            validate_instance(inst, where=f"line {lineno}")
            if inst.id in seen:
                raise ValidationError(f"line {lineno}: duplicate id {inst.id}")
            seen.add(inst.id)
            instances.append(inst)
    return instances


def _instance_json(inst: InstructionInstance) -> str:
    record = {
        "id": inst.id,
        "task": inst.task,
        "instruction": inst.instruction,
        "context": inst.context,
        "response": inst.response,
        "meta": dict(sorted(inst.meta.items())),
    }
    return json.dumps(record, ensure_ascii=False)


def write_instances(instances: list[InstructionInstance], path: str | Path) -> None:
    """Write instances as JSON-lines with fixed key order (byte-stable)."""
    seen: set[str] = set()
    for inst in instances:
        validate_instance(inst, where=f"instance {inst.id}")
        if inst.id in seen:
            raise ValidationError(f"duplicate id {inst.id}")
        seen.add(inst.id)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for inst in instances:
            handle.write(_instance_json(inst))
            handle.write("\n")


def read_documents(path: str | Path) -> list[Document]:
    documents: list[Document] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            obj = _parse_line(raw, lineno, DOCUMENT_KEYS[:-1])
            if not isinstance(obj["sentences"], list):
                raise ValidationError(f"line {lineno}: field sentences must be a list")
            sections = obj.get("sections") or {}
            if not isinstance(sections, dict):
                raise ValidationError(f"line {lineno}: field sections must be an object")
            doc = Document(
                id=obj["id"],
                kind=obj["kind"],
                sentences=list(obj["sentences"]),
                sections=dict(sections),
            )
            validate_document(doc)
            if doc.id in seen:
                raise ValidationError(f"line {lineno}: duplicate id {doc.id}")
            seen.add(doc.id)
            documents.append(doc)
    return documents


def write_documents(documents: list[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for doc in documents:
            validate_document(doc)
            record = {
                "id": doc.id,
                "kind": doc.kind,
                "sentences": list(doc.sentences),
                "sections": dict(sorted(doc.sections.items())),
            }
            handle.write(json.dumps(record, ensure_ascii=False))
            handle.write("\n")


def read_annotations(path: str | Path) -> list[EntityAnnotation]:
    annotations: list[EntityAnnotation] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            obj = _parse_line(raw, lineno, ANNOTATION_KEYS)
            if not isinstance(obj["sentence_index"], int):
                raise ValidationError(f"line {lineno}: field sentence_index must be an integer")
            annotations.append(
                EntityAnnotation(
                    document_id=obj["document_id"],
                    sentence_index=obj["sentence_index"],
                    entity_type=obj["entity_type"],
                    surface=obj["surface"],
                )
            )
    return annotations


def write_annotations(annotations: list[EntityAnnotation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for ann in annotations:
            record = {
                "document_id": ann.document_id,
                "sentence_index": ann.sentence_index,
                "entity_type": ann.entity_type,
                "surface": ann.surface,
            }
            handle.write(json.dumps(record, ensure_ascii=False))
            handle.write("\n")


def split_dataset(
    instances: list[InstructionInstance],
    ratios: tuple[float, float, float],
    seed: int,
) -> DatasetSplit:
    """Seeded train/validation/test split.

    Bucket sizes are floor-allocated from the ratios with the remainder
    going to train; the shuffle is an explicit Fisher-Yates so the same
    seed always yields the same split.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    ids = [inst.id for inst in instances]
    if len(set(ids)) != len(ids):
        raise ValidationError("instances must have unique ids")

    n = len(instances)
    # Tiny epsilon guards against products like 0.29 * 100 = 28.999...96.
    n_val = math.floor(ratios[1] * n + 1e-9)
    n_test = math.floor(ratios[2] * n + 1e-9)
    n_train = n - n_val - n_test

    order = list(range(n))
    fisher_yates(order, random.Random(seed))
    shuffled = [instances[i] for i in order]
    return DatasetSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
        seed=seed,
        ratios=tuple(ratios),
    )


# Synthetic corpus vocabulary. Curated, clearly non-clinical stand-in lists
# so desk-scale runs never touch real patient data.
SYNTHETIC_VOCABULARY: dict[str, tuple[str, ...]] = {
    "hormone_receptor_type": ("er", "pr", "her2", "ar"),
    "hormone_receptor_status": ("positive", "negative", "equivocal", "weakly positive"),
    "tumor_size": ("1.2 cm", "3 cm", "8 mm", "2.4 cm", "15 mm", "0.9 cm"),
    "tumor_site": (
        "upper outer quadrant",
        "left lower lobe",
        "right breast",
        "lingula",
        "9:00 position",
    ),
    "cancer_grade": ("grade 1", "grade 2", "grade 3", "low grade", "high grade"),
    "histological_type": (
        "ductal carcinoma",
        "lobular carcinoma",
        "adenocarcinoma",
        "squamous cell carcinoma",
    ),
    "tumor_laterality": ("left", "right", "bilateral"),
    "cancer_stage": ("stage i", "stage iia", "stage iib", "stage iii", "stage iv", "t2n0m0"),
}

_SENTENCE_FRAGMENTS = {
    "hormone_receptor_type": "{} expression was assessed",
    "hormone_receptor_status": "receptor staining returned {}",
    "tumor_size": "the lesion measures {}",
    "tumor_site": "located in the {}",
    "cancer_grade": "findings consistent with {}",
    "histological_type": "morphology shows {}",
    "tumor_laterality": "involving the {} side",
    "cancer_stage": "clinically {}",
}

_FILLER_SENTENCES = (
    "the patient tolerated the procedure well",
    "follow up visit scheduled in three weeks",
    "no acute distress noted on examination",
    "prior imaging was reviewed with the team",
    "specimen received in formalin and labeled",
)

_DIAGNOSES = (
    "nsclc",
    "metastatic breast cancer",
    "dcis",
    "invasive ductal carcinoma",
    "small cell lung cancer",
    "metastatic lung cancer",
    "lobular carcinoma in situ",
    "lung cancer",
)

_SECTION_TEXT = {
    "reason_for_visit": ("routine oncology follow up", "new palpable mass", "post treatment surveillance"),
    "treatment_site": ("left breast", "right lung", "chest wall", "axilla"),
    "subjective": ("reports mild fatigue", "denies pain or weight loss", "notes improved appetite"),
    "nursing_ros": ("vitals stable, no fever", "mild nausea reported", "no new complaints"),
    "objective": ("well healed incision, no edema", "clear lungs, regular rhythm", "palpable firm nodule"),
    "lab_results": ("cbc within normal limits", "slightly elevated alkaline phosphatase", "tumor markers pending"),
}


def _synthetic_sentence(rng: random.Random) -> tuple[str, list[tuple[str, str]]]:
    """One annotated sentence: joined fragments embedding 1-3 entity surfaces."""
    n_types = rng.randint(1, 3)
    types = rng.sample(ENTITY_TYPES, n_types)
    parts = []
    spans = []
    for entity_type in types:
        surface = rng.choice(SYNTHETIC_VOCABULARY[entity_type])
        parts.append(_SENTENCE_FRAGMENTS[entity_type].format(surface))
        spans.append((entity_type, surface))
    return ", ".join(parts) + ".", spans


def generate_synthetic_corpus(
    n_documents: int, seed: int
) -> tuple[list[Document], list[EntityAnnotation]]:
    """Deterministic synthetic corpus: documents plus matching annotations.

    Every document carries 3-6 sentences, at least 75% of them annotated;
    clinical notes additionally get the six diagnosis-context sections and
    a synthetic diagnosis in their sections map.
    """
    if n_documents < 1:
        raise ValidationError("n_documents must be >= 1")
    rng = random.Random(seed)
    documents: list[Document] = []
    annotations: list[EntityAnnotation] = []
    for i in range(n_documents):
        kind = DOCUMENT_KINDS[i % 2]
        prefix = "note" if kind == "clinical_note" else "path"
        doc_id = f"{prefix}-{i:05d}"
        n_sentences = rng.randint(3, 6)
        n_annotated = max(1, round(0.75 * n_sentences))
        annotated_at = set(rng.sample(range(n_sentences), n_annotated))
        sentences = []
        for sent_idx in range(n_sentences):
            if sent_idx in annotated_at:
                sentence, spans = _synthetic_sentence(rng)
                for entity_type, surface in spans:
                    annotations.append(
                        EntityAnnotation(doc_id, sent_idx, entity_type, surface)
                    )
            else:
                sentence = rng.choice(_FILLER_SENTENCES)
            sentences.append(sentence)
        sections: dict[str, str] = {}
        if kind == "clinical_note":
            for name, bank in _SECTION_TEXT.items():
                sections[name] = rng.choice(bank)
            sections["diagnosis"] = rng.choice(_DIAGNOSES)
        documents.append(Document(doc_id, kind, sentences, sections))
    return documents, annotations
