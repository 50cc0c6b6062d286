import pytest

from oncoeval.corpus import Document, EntityAnnotation, generate_synthetic_corpus
from oncoeval.errors import ValidationError
from oncoeval.taskgen import (
    DIAGNOSIS_INSTRUCTION,
    NOT_RELEVANT,
    PHENOTYPE_INSTRUCTION,
    QUESTION_TEMPLATES,
    TEMPLATE_BY_INDEX,
    DiagnosisContext,
    build_diagnosis_instance,
    ner_to_qa,
    render_prompt,
)


def _receptor_document():
    doc = Document(id="d1", kind="pathology_report", sentences=["er/pr+, her2 negative"])
    annotations = [
        EntityAnnotation("d1", 0, "hormone_receptor_type", "pr"),
        EntityAnnotation("d1", 0, "hormone_receptor_type", "her2"),
        EntityAnnotation("d1", 0, "hormone_receptor_type", "er"),
    ]
    return doc, annotations


def test_instruction_strings_are_verbatim():
    assert PHENOTYPE_INSTRUCTION == (
        "You are a medical expert, this task involves answering the question "
        "based on the provided context or text."
    )
    assert DIAGNOSIS_INSTRUCTION == (
        "You are a medical expert. This task involves generating the diagnosis "
        "based on the provided context or text"
    )


def test_templates_are_bijective_with_entity_types():
    assert len(QUESTION_TEMPLATES) == 8
    assert len({t.target_entity_type for t in QUESTION_TEMPLATES}) == 8
    assert len({t.text for t in QUESTION_TEMPLATES}) == 8
    assert sorted(t.index for t in QUESTION_TEMPLATES) == list(range(1, 9))


def test_receptor_question_collects_all_surfaces_as_a_set():
    doc, annotations = _receptor_document()
    instances = ner_to_qa(doc, annotations, negatives_per_sentence=0)
    assert len(instances) == 1
    inst = instances[0]
    assert inst.meta["question_type"] == 3
    assert {part.strip() for part in inst.response.split(",")} == {"pr", "her2", "er"}
    assert inst.response == "pr, her2, er"  # first-appearance order
    assert inst.instruction == PHENOTYPE_INSTRUCTION
    assert inst.context.startswith("er/pr+, her2 negative ")
    assert TEMPLATE_BY_INDEX[3].text in inst.context


def test_negative_question_answers_not_relevant():
    doc = Document(id="d2", kind="clinical_note", sentences=["no measurable findings today"])
    instances = ner_to_qa(doc, [], negatives_per_sentence=8, seed=5)
    assert len(instances) == 8  # every type is absent
    by_type = {inst.meta["question_type"]: inst for inst in instances}
    assert by_type[1].response == NOT_RELEVANT  # tumor_size question
    assert all(inst.response == NOT_RELEVANT for inst in instances)


def test_no_annotations_no_negatives_yields_nothing():
    doc = Document(id="d3", kind="clinical_note", sentences=["stable disease"])
    assert ner_to_qa(doc, [], negatives_per_sentence=0) == []


def test_duplicate_surfaces_dedupe_case_insensitively():
    doc = Document(id="d4", kind="pathology_report", sentences=["ER er positive"])
    annotations = [
        EntityAnnotation("d4", 0, "hormone_receptor_type", "ER"),
        EntityAnnotation("d4", 0, "hormone_receptor_type", "er"),
    ]
    instances = ner_to_qa(doc, annotations, negatives_per_sentence=0)
    assert instances[0].response == "ER"


def test_annotation_on_missing_sentence_rejected():
    doc = Document(id="d5", kind="clinical_note", sentences=["one sentence"])
    with pytest.raises(ValidationError, match="out of range"):
        ner_to_qa(doc, [EntityAnnotation("d5", 3, "tumor_size", "x")], 0)


def test_positive_completeness_and_negative_soundness_on_synthetic_corpus():
    documents, annotations = generate_synthetic_corpus(30, seed=21)
    by_doc = {}
    for ann in annotations:
        by_doc.setdefault(ann.document_id, []).append(ann)
    for doc in documents:
        doc_annotations = by_doc.get(doc.id, [])
        present = {(a.sentence_index, a.entity_type) for a in doc_annotations}
        instances = ner_to_qa(doc, doc_annotations, negatives_per_sentence=2, seed=9)
        positives = [i for i in instances if i.response != NOT_RELEVANT]
        negatives = [i for i in instances if i.response == NOT_RELEVANT]
        seen_positive_keys = set()
        for inst in positives:
            template = TEMPLATE_BY_INDEX[inst.meta["question_type"]]
            key = (inst.meta["sentence_index"], template.target_entity_type)
            assert key in present
            seen_positive_keys.add(key)
            assert template.text in inst.context
        assert seen_positive_keys == present  # exactly one positive per pair
        for inst in negatives:
            template = TEMPLATE_BY_INDEX[inst.meta["question_type"]]
            assert (inst.meta["sentence_index"], template.target_entity_type) not in present


def test_ner_to_qa_deterministic():
    documents, annotations = generate_synthetic_corpus(5, seed=3)
    doc = documents[0]
    doc_annotations = [a for a in annotations if a.document_id == doc.id]
    first = ner_to_qa(doc, doc_annotations, negatives_per_sentence=2, seed=4)
    second = ner_to_qa(doc, doc_annotations, negatives_per_sentence=2, seed=4)
    assert first == second


def test_diagnosis_context_all_sections_in_order():
    ctx = DiagnosisContext(
        reason_for_visit="follow up",
        treatment_site="left breast",
        subjective="feels well",
        nursing_ros="no fever",
        objective="stable exam",
        lab_results="cbc normal",
    )
    inst = build_diagnosis_instance("note-1", ctx, "nsclc")
    headers = ["Reason for visit:", "Treatment site:", "Subjective:", "Nursing ROS:", "Objective:", "Lab results:"]
    positions = [inst.context.index(h) for h in headers]
    assert positions == sorted(positions)
    assert inst.context.count(":") >= 6
    assert inst.task == "diagnosis_generation"
    assert inst.instruction == DIAGNOSIS_INSTRUCTION


def test_diagnosis_context_omits_empty_sections():
    inst = build_diagnosis_instance("note-2", DiagnosisContext(reason_for_visit="screening"), "dcis")
    assert inst.context == "Reason for visit: screening"


def test_diagnosis_response_is_verbatim():
    inst = build_diagnosis_instance("note-3", DiagnosisContext(objective="mass noted"), "nsclc")
    assert inst.response == "nsclc"


def test_diagnosis_rejects_empty_context_or_diagnosis():
    with pytest.raises(ValidationError, match="sections empty"):
        build_diagnosis_instance("note-4", DiagnosisContext(), "x")
    with pytest.raises(ValidationError, match="empty diagnosis"):
        build_diagnosis_instance("note-5", DiagnosisContext(subjective="ok"), "")


def _query_instance():
    doc = Document(id="q", kind="clinical_note", sentences=["the lesion measures 3 cm"])
    return ner_to_qa(doc, [EntityAnnotation("q", 0, "tumor_size", "3 cm")], 0)[0]


def test_render_prompt_zero_examples_is_plain():
    inst = _query_instance()
    prompt = render_prompt(inst, [])
    assert "Example:" not in prompt.text
    assert prompt.text.startswith(inst.instruction + "\n\n")
    assert prompt.text.endswith(f"Context: {inst.context}\nAnswer:")
    assert prompt.n_examples == 0
    assert prompt.instance_id == inst.id


def test_render_prompt_examples_precede_context():
    inst = _query_instance()
    examples = [_query_instance(), _query_instance()]
    prompt = render_prompt(inst, examples)
    assert prompt.text.count("Example:") == 2
    assert prompt.text.rindex("Example:") < prompt.text.index("Context:")
    assert prompt.n_examples == 2


def test_render_prompt_deterministic_and_monotone():
    inst = _query_instance()
    example = _query_instance()
    assert render_prompt(inst, [example]).text == render_prompt(inst, [example]).text
    lengths = [len(render_prompt(inst, [example] * n).text) for n in range(4)]
    assert lengths == sorted(set(lengths))
