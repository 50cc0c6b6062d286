import json
import random

import pytest

from oncoeval.errors import ValidationError
from oncoeval.report import (
    RunManifest,
    RunStore,
    TableSpec,
    build_table,
    emit,
    format_hms,
    render,
    round2,
    write_manifest,
)


def store_run(root, run_id, f1s=(0.835, 0.866, 0.9034), prs=None, **manifest_kwargs):
    """Materialize one run directory with manifest.json and scores.json."""
    run_dir = root / run_id
    run_dir.mkdir(parents=True)
    defaults = dict(task="diagnosis_generation", backend_tag="echo", wall_clock_ms=1000)
    defaults.update(manifest_kwargs)
    write_manifest(RunManifest(run_id=run_id, **defaults), run_dir / "manifest.json")
    triples = {}
    for name, f1 in zip(("exact_match", "bleu2", "rouge_l"), f1s):
        p, r = (f1, f1) if prs is None else prs[name]
        triples[name] = {"precision": p, "recall": r, "f1": f1}
    scores = {
        "n_instances": 10,
        "n_nonempty": 10,
        **triples,
        "average_f1": sum(f1s) / 3.0,
        "per_instance": {},
    }
    (run_dir / "scores.json").write_text(json.dumps(scores, indent=2, sort_keys=True) + "\n")
    return run_dir


def test_format_hms_paper_cell():
    assert format_hms(4452000) == "1:14:12"


def test_format_hms_short_runs():
    assert format_hms(0) == "0:00:00"
    assert format_hms(61_000) == "0:01:01"
    assert format_hms(3_599_999) == "0:59:59"


def test_round2_half_up():
    assert round2(86.8133) == 86.81
    assert round2(86.815) == 86.82
    assert round2(100.0) == 100.0


def test_main_table_reproduces_diagnosis_average(tmp_path):
    # CancerLLM diagnosis row: F1 cells 83.50 / 86.60 / 90.34 -> 86.81.
    store_run(tmp_path, "run-a", f1s=(0.835, 0.866, 0.9034))
    store = RunStore(tmp_path)
    header, rows = build_table(TableSpec("main", ["run-a"]), store)
    assert header[-1] == "average_f1"
    assert rows[0][-1] == pytest.approx(86.81, abs=0.005)
    assert rows[0][3] == pytest.approx(83.50)  # em_f1 cell


def test_robustness_table_groups_rates_ascending(tmp_path):
    for rate in (0.8, 0.2, 0.6, 0.4):
        store_run(
            tmp_path,
            f"run-{rate}",
            f1s=(1 - rate, 1 - rate, 1 - rate),
            perturbation_kind="counterfactual",
            perturbation_rate=rate,
        )
    store = RunStore(tmp_path)
    header, rows = build_table(TableSpec("robustness", store.list_runs()), store)
    assert [row[0] for row in rows] == ["0.2", "0.4", "0.6", "0.8"]
    for row in rows:
        assert row[-1] == row[-2]  # single-run groups: group avg equals row avg


def test_robustness_group_average_is_mean_of_member_rows(tmp_path):
    store_run(tmp_path, "run-x", f1s=(0.9, 0.9, 0.9), perturbation_kind="counterfactual", perturbation_rate=0.2)
    store_run(tmp_path, "run-y", f1s=(0.7, 0.7, 0.7), perturbation_kind="counterfactual", perturbation_rate=0.2)
    store = RunStore(tmp_path)
    _, rows = build_table(TableSpec("robustness", ["run-x", "run-y"]), store)
    assert rows[0][-1] == pytest.approx((90.0 + 70.0) / 2)
    assert rows[0][-1] == rows[1][-1]


def test_retriever_table_orders_by_retriever(tmp_path):
    store_run(tmp_path, "run-1", retriever="random")
    store_run(tmp_path, "run-2", retriever="dense")
    store = RunStore(tmp_path)
    _, rows = build_table(TableSpec("retriever", ["run-1", "run-2"]), store)
    assert [row[0] for row in rows] == ["dense", "random"]


def test_timing_table_formats_wall_clock(tmp_path):
    store_run(tmp_path, "run-t", wall_clock_ms=4452000)
    store = RunStore(tmp_path)
    header, rows = build_table(TableSpec("timing", ["run-t"]), store)
    assert header == ["run_id", "task", "average_f1", "generation_time"]
    assert rows[0][-1] == "1:14:12"


def test_missing_run_named_in_error(tmp_path):
    store = RunStore(tmp_path)
    with pytest.raises(ValidationError, match="ghost-run"):
        build_table(TableSpec("main", ["ghost-run"]), store)


def test_manifest_with_unknown_fields_rejected_cleanly(tmp_path):
    run_dir = store_run(tmp_path, "future-run")
    data = json.loads((run_dir / "manifest.json").read_text())
    data["gpu_memory_mb"] = 5550
    (run_dir / "manifest.json").write_text(json.dumps(data))
    with pytest.raises(ValidationError, match="unknown manifest fields"):
        RunStore(tmp_path).manifest("future-run")


def test_incomplete_run_dirs_are_ignored(tmp_path):
    store_run(tmp_path, "done")
    (tmp_path / "crashed").mkdir()
    (tmp_path / "crashed" / "records.jsonl").write_text("")
    assert RunStore(tmp_path).list_runs() == ["done"]


def test_emit_csv_and_markdown_deterministic(tmp_path):
    store_run(tmp_path, "run-a")
    store = RunStore(tmp_path)
    header, rows = build_table(TableSpec("main", ["run-a"]), store)
    for fmt, name in (("csv", "t.csv"), ("markdown", "t.md")):
        first = tmp_path / ("1" + name)
        second = tmp_path / ("2" + name)
        emit(header, rows, fmt, first)
        emit(header, rows, fmt, second)
        assert first.read_bytes() == second.read_bytes()
    csv_text = (tmp_path / "1t.csv").read_text()
    assert "86.81" in csv_text
    md_text = (tmp_path / "1t.md").read_text()
    assert md_text.startswith("| run_id |")


def test_render_rounds_half_up_to_two_decimals():
    text = render(["v"], [[86.8133]], "csv")
    assert text.splitlines()[1] == "86.81"
    assert render(["v"], [[0.005]], "csv").splitlines()[1] == "0.01"


def test_emit_refuses_empty_rows(tmp_path):
    with pytest.raises(ValidationError, match="empty table"):
        emit(["a"], [], "csv", tmp_path / "x.csv")
    with pytest.raises(ValidationError, match="format"):
        render(["a"], [["x"]], "html")


def test_emitted_average_consistent_with_f1_cells(tmp_path):
    # Arithmetic re-check: the emitted average-F1 stays within 0.005 of
    # the mean of the emitted F1 cells, across random reports.
    rng = random.Random(123)
    run_ids = []
    for i in range(25):
        f1s = tuple(rng.random() for _ in range(3))
        run_ids.append(f"run-{i:02d}")
        store_run(tmp_path, run_ids[-1], f1s=f1s)
    store = RunStore(tmp_path)
    header, rows = build_table(TableSpec("main", run_ids), store)
    f1_cols = [header.index(c) for c in ("em_f1", "bleu2_f1", "rouge_l_f1")]
    for row in rows:
        mean_f1 = sum(row[c] for c in f1_cols) / 3.0
        assert abs(row[-1] - mean_f1) <= 0.005
