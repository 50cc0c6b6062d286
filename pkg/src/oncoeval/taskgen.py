"""Turn annotated corpora into QA and diagnosis instruction instances, and
render final prompts with optional few-shot examples.

The eight question templates are fixed and bijective with the entity
types; the two instruction strings are used verbatim everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

from oncoeval.corpus import (
    Document,
    EntityAnnotation,
    InstructionInstance,
    validate_annotation,
)
from oncoeval.errors import ValidationError
from oncoeval.util import derive_rng

PHENOTYPE_INSTRUCTION = (
    "You are a medical expert, this task involves answering the question "
    "based on the provided context or text."
)
DIAGNOSIS_INSTRUCTION = (
    "You are a medical expert. This task involves generating the diagnosis "
    "based on the provided context or text"
)

NOT_RELEVANT = "Not relevant"


@dataclass(frozen=True)
class QuestionTemplate:
    index: int
    text: str
    target_entity_type: str


QUESTION_TEMPLATES = (
    QuestionTemplate(1, "What is the tumor size in the given context?", "tumor_size"),
    QuestionTemplate(2, "What is the histological type in the given context?", "histological_type"),
    QuestionTemplate(3, "Please identify the receptors mentioned in the provided context.", "hormone_receptor_type"),
    QuestionTemplate(4, "What is the receptor type in the given context?", "hormone_receptor_status"),
    QuestionTemplate(5, "Please identify the value of tumor laterality in the provided context.", "tumor_laterality"),
    QuestionTemplate(6, "What is the stage of cancer in the given context?", "cancer_stage"),
    QuestionTemplate(7, "Please describe the tumor location in the given context", "tumor_site"),
    QuestionTemplate(8, "What is the grade of cancer in the given context?", "cancer_grade"),
)

TEMPLATE_BY_TYPE = {t.target_entity_type: t for t in QUESTION_TEMPLATES}
TEMPLATE_BY_INDEX = {t.index: t for t in QUESTION_TEMPLATES}


@dataclass(frozen=True)
class DiagnosisContext:
    reason_for_visit: str = ""
    treatment_site: str = ""
    subjective: str = ""
    nursing_ros: str = ""
    objective: str = ""
    lab_results: str = ""


# Section order and headers for the diagnosis context, fixed so prompts
# are reproducible. Empty sections are omitted.
SECTION_HEADERS = (
    ("reason_for_visit", "Reason for visit:"),
    ("treatment_site", "Treatment site:"),
    ("subjective", "Subjective:"),
    ("nursing_ros", "Nursing ROS:"),
    ("objective", "Objective:"),
    ("lab_results", "Lab results:"),
)


@dataclass(frozen=True)
class Prompt:
    text: str
    instance_id: str
    n_examples: int


def ner_to_qa(
    document: Document,
    annotations: list[EntityAnnotation],
    negatives_per_sentence: int = 1,
    seed: int = 0,
) -> list[InstructionInstance]:
    """Recast entity annotations as question answering instances.

    Per sentence and entity type present: one positive instance whose
    question is that type's template and whose response joins the type's
    surfaces with ", " in first-appearance order (case-insensitive
    dedupe). Per sentence, negatives_per_sentence additional instances
    sample the absent types and answer exactly "Not relevant". The QA
    context is the sentence, a space, then the question text.

    Negative sampling derives a per-sentence seed from
    (seed, document id, sentence index) so parallel calls over documents
    cannot change the output.
    """
    by_sentence: dict[int, dict[str, list[str]]] = {}
    for ann in annotations:
        if ann.document_id != document.id:
            raise ValidationError(
                f"annotation for {ann.document_id} passed with document {document.id}"
            )
        validate_annotation(ann, document)
        groups = by_sentence.setdefault(ann.sentence_index, {})
        surfaces = groups.setdefault(ann.entity_type, [])
        if ann.surface.lower() not in (s.lower() for s in surfaces):
            surfaces.append(ann.surface)

    instances: list[InstructionInstance] = []
    for sent_idx, sentence in enumerate(document.sentences):
        groups = by_sentence.get(sent_idx, {})
        for template in QUESTION_TEMPLATES:
            surfaces = groups.get(template.target_entity_type)
            if not surfaces:
                continue
            instances.append(
                InstructionInstance(
                    id=f"{document.id}-s{sent_idx}-q{template.index}",
                    task="phenotype_qa",
                    instruction=PHENOTYPE_INSTRUCTION,
                    context=f"{sentence} {template.text}",
                    response=", ".join(surfaces),
                    meta={
                        "document_id": document.id,
                        "sentence_index": sent_idx,
                        "question_type": template.index,
                    },
                )
            )
        if negatives_per_sentence > 0:
            absent = [t for t in QUESTION_TEMPLATES if t.target_entity_type not in groups]
            rng = derive_rng(seed, document.id, sent_idx)
            chosen = rng.sample(absent, min(negatives_per_sentence, len(absent)))
            for template in sorted(chosen, key=lambda t: t.index):
                instances.append(
                    InstructionInstance(
                        id=f"{document.id}-s{sent_idx}-q{template.index}",
                        task="phenotype_qa",
                        instruction=PHENOTYPE_INSTRUCTION,
                        context=f"{sentence} {template.text}",
                        response=NOT_RELEVANT,
                        meta={
                            "document_id": document.id,
                            "sentence_index": sent_idx,
                            "question_type": template.index,
                            "negative": True,
                        },
                    )
                )
    return instances


def build_diagnosis_instance(
    note_id: str, ctx: DiagnosisContext, diagnosis: str
) -> InstructionInstance:
    """One diagnosis-generation instance from a structured clinical note.

    Context concatenates the six sections in fixed order, one
    "Header: body" line each, omitting empty sections.
    """
    if not diagnosis:
        raise ValidationError(f"note {note_id}: empty diagnosis")
    lines = []
    for field_name, header in SECTION_HEADERS:
        body = getattr(ctx, field_name)
        if body:
            lines.append(f"{header} {body}")
    if not lines:
        raise ValidationError(f"note {note_id}: all context sections empty")
    return InstructionInstance(
        id=f"{note_id}-dx",
        task="diagnosis_generation",
        instruction=DIAGNOSIS_INSTRUCTION,
        context="\n".join(lines),
        response=diagnosis,
        meta={"document_id": note_id},
    )


def render_prompt(
    instance: InstructionInstance, examples: list[InstructionInstance]
) -> Prompt:
    """Final prompt text: instruction, retrieved examples, then the query.

    Layout: instruction, blank line, one "Example:" block per retrieved
    example (its context, then "Answer: <response>", then a blank line),
    then "Context: <query context>" and a trailing "Answer:". With zero
    examples this is the plain instruction-tuning prompt.
    """
    parts = [instance.instruction, ""]
    for example in examples:
        parts.append("Example:")
        parts.append(example.context)
        parts.append(f"Answer: {example.response}")
        parts.append("")
    parts.append(f"Context: {instance.context}")
    parts.append("Answer:")
    return Prompt(text="\n".join(parts), instance_id=instance.id, n_examples=len(examples))
