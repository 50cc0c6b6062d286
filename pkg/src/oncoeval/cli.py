"""Pipeline command line: build-dataset, perturb, embed, run, report.

A JSON config file supplies defaults; flags win over the file. Exit
codes: 0 ok, 1 validation, 2 I/O, 3 backend.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import socket
import sys
from datetime import datetime, timezone
from pathlib import Path
from urllib.parse import urlsplit

from oncoeval import corpus as corpus_mod
from oncoeval import genclient, metrics, perturb, report, retrieve, taskgen
from oncoeval.errors import BackendError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_BACKEND = 3

DEFAULT_CONFIG = {
    "datasets_dir": "datasets",
    "runs_dir": "runs",
    "cache_dir": "cache",
    "out_dir": "tables",
    "seed": 0,
    "ratios": [0.8, 0.1, 0.1],
    "negatives_per_sentence": 1,
    "task_defaults": {
        "phenotype_qa": {"max_input_tokens": 1500, "max_new_tokens": 50},
        "diagnosis_generation": {"max_input_tokens": 1500, "max_new_tokens": 500},
    },
    "backend": {
        "kind": "echo",
        "url": None,
        "timeout_ms": 30_000,
        "max_retries": 3,
        "max_in_flight": 4,
        "replay_path": None,
        "echo_text": None,
    },
    "retriever": {
        "method": "none",
        "k": 1,
        "endpoint": {"url": None, "source_tag": "endpoint", "batch_size": 32},
    },
    "perturb": {"field": "context", "ops": list(perturb.MISSPELL_OPS)},
    "corpus": {"documents": None, "annotations": None},
    "extra_test": None,
}


_MISSING = object()


def _deep_merge(base: dict, override: dict) -> dict:
    """Override wins; nested dicts merge recursively. Never shares or
    mutates either input."""
    merged: dict = {}
    keys = list(base) + [k for k in override if k not in base]
    for key in keys:
        base_value = base.get(key)
        over_value = override.get(key, _MISSING)
        if isinstance(base_value, dict) and isinstance(over_value, dict):
            merged[key] = _deep_merge(base_value, over_value)
        elif over_value is not _MISSING:
            merged[key] = over_value
        elif isinstance(base_value, dict):
            merged[key] = _deep_merge(base_value, {})
        else:
            merged[key] = base_value
    return merged


def load_config(path: str | None) -> dict:
    loaded: dict = {}
    if path:
        loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(loaded, dict):
            raise ValidationError("config file must hold a JSON object")
    # Always merge into a fresh copy so commands can adjust their config
    # without touching the module-level defaults.
    return _deep_merge(DEFAULT_CONFIG, loaded)


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _build_instances(args, config) -> tuple[list, int]:
    seed = config["seed"]
    if args.synthetic:
        documents, annotations = corpus_mod.generate_synthetic_corpus(args.synthetic, seed)
    else:
        paths = config.get("corpus") or {}
        if not paths.get("documents"):
            raise ValidationError("no corpus configured; pass --synthetic N or set corpus.documents")
        documents = corpus_mod.read_documents(paths["documents"])
        annotations = (
            corpus_mod.read_annotations(paths["annotations"]) if paths.get("annotations") else []
        )

    if args.task == "phenotype_qa":
        by_document: dict[str, list] = {}
        for ann in annotations:
            by_document.setdefault(ann.document_id, []).append(ann)
        instances = []
        for doc in documents:
            instances.extend(
                taskgen.ner_to_qa(
                    doc,
                    by_document.get(doc.id, []),
                    negatives_per_sentence=config["negatives_per_sentence"],
                    seed=seed,
                )
            )
    else:
        instances = []
        for doc in documents:
            if doc.kind != "clinical_note":
                continue
            diagnosis = doc.sections.get("diagnosis", "")
            if not diagnosis:
                raise ValidationError(f"clinical note {doc.id} has no diagnosis section")
            ctx = taskgen.DiagnosisContext(
                **{name: doc.sections.get(name, "") for name, _ in taskgen.SECTION_HEADERS}
            )
            instances.append(taskgen.build_diagnosis_instance(doc.id, ctx, diagnosis))
    if not instances:
        raise ValidationError(f"corpus produced no {args.task} instances")
    return instances, seed


def cmd_build_dataset(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    instances, seed = _build_instances(args, config)
    split = corpus_mod.split_dataset(instances, tuple(config["ratios"]), seed)

    dataset_dir = Path(config["datasets_dir"]) / (args.name or args.task)
    dataset_dir.mkdir(parents=True, exist_ok=True)
    corpus_mod.write_instances(split.train, dataset_dir / "train.jsonl")
    corpus_mod.write_instances(split.validation, dataset_dir / "validation.jsonl")
    corpus_mod.write_instances(split.test, dataset_dir / "test.jsonl")

    extra = config.get("extra_test")
    extra_entry = None
    if extra:
        extra_instances = corpus_mod.read_instances(extra["path"])
        extra_name = extra.get("name", "extra")
        corpus_mod.write_instances(extra_instances, dataset_dir / f"test_{extra_name}.jsonl")
        extra_entry = {"name": extra_name, "count": len(extra_instances)}

    manifest = {
        "task": args.task,
        "seed": seed,
        "ratios": list(config["ratios"]),
        "counts": {
            "train": len(split.train),
            "validation": len(split.validation),
            "test": len(split.test),
        },
        "extra_test": extra_entry,
    }
    (dataset_dir / "split_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    total = len(split.train) + len(split.validation) + len(split.test)
    print(
        f"dataset {dataset_dir}: train={len(split.train)} "
        f"validation={len(split.validation)} test={len(split.test)} total={total}"
        + (f" extra_test[{extra_entry['name']}]={extra_entry['count']}" if extra_entry else "")
    )
    return EXIT_OK


def cmd_perturb(args) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config["seed"]
    instances = corpus_mod.read_instances(args.input)
    input_path = Path(args.input)
    stem = input_path.name.removesuffix(".jsonl")
    out_path = Path(args.out) if args.out else input_path.with_name(f"{stem}_{args.kind}_{args.rate:g}.jsonl")

    if args.kind == "counterfactual":
        spec = perturb.CounterfactualSpec(rate=args.rate, seed=seed)
        perturbed, log = perturb.corrupt_labels(instances, spec)
    else:
        ops = tuple(args.ops.split(",")) if args.ops else tuple(config["perturb"]["ops"])
        spec = perturb.MisspellSpec(rate=args.rate, seed=seed, ops_enabled=ops)
        perturbed, log = perturb.perturb_dataset(instances, config["perturb"]["field"], spec)

    corpus_mod.write_instances(perturbed, out_path)
    log_path = out_path.with_name(out_path.name.removesuffix(".jsonl") + ".log.jsonl")
    log.write(log_path)
    print(f"perturbed {out_path} ({len(log.entries)} log entries -> {log_path})")
    return EXIT_OK


def _endpoint_config(config, args) -> retrieve.EmbeddingEndpointConfig:
    endpoint = config["retriever"]["endpoint"]
    url = getattr(args, "url", None) or endpoint.get("url")
    if not url:
        raise ValidationError("dense retrieval requires an embedding endpoint url")
    return retrieve.EmbeddingEndpointConfig(
        url=url,
        source_tag=endpoint.get("source_tag", "endpoint"),
        batch_size=endpoint.get("batch_size", 32),
    )


def cmd_embed(args) -> int:
    config = load_config(args.config)
    instances = corpus_mod.read_instances(args.input)
    endpoint = _endpoint_config(config, args)
    matrix = retrieve.embed_corpus(
        [inst.context for inst in instances], endpoint, config["cache_dir"]
    )
    print(f"embedded {len(matrix.vectors)} texts (dim={matrix.dim}) -> {config['cache_dir']}")
    return EXIT_OK


def _backend_config(config, args) -> genclient.BackendConfig:
    backend = dict(config["backend"])
    for key, flag in (
        ("kind", "backend"),
        ("url", "url"),
        ("replay_path", "replay_path"),
        ("echo_text", "echo_text"),
        ("max_in_flight", "max_in_flight"),
        ("timeout_ms", "timeout_ms"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            backend[key] = value
    return genclient.BackendConfig(
        kind=backend["kind"],
        url=backend.get("url"),
        timeout_ms=backend.get("timeout_ms", 30_000),
        max_retries=backend.get("max_retries", 3),
        max_in_flight=backend.get("max_in_flight", 4),
        replay_path=backend.get("replay_path"),
        echo_text=backend.get("echo_text"),
    )


def _preflight(backend: genclient.BackendConfig) -> None:
    """Abort before the first request when the backend cannot serve."""
    if backend.kind == "replay":
        try:
            genclient.load_replay(backend.replay_path)
        except OSError as exc:
            raise BackendError(f"replay file unreadable: {exc}") from exc
    elif backend.kind == "http":
        parts = urlsplit(backend.url)
        port = parts.port or (443 if parts.scheme == "https" else 80)
        try:
            with socket.create_connection((parts.hostname, port), timeout=5):
                pass
        except OSError as exc:
            raise BackendError(f"generation endpoint unreachable: {exc}") from exc


def _default_run_id(task, backend, method, k, seed, dataset_path, args) -> str:
    salt = hashlib.sha256(
        f"{dataset_path}|{args.perturbation_kind}|{args.perturbation_rate}".encode("utf-8")
    ).hexdigest()[:8]
    return f"{task}-{backend.kind}-{method}-k{k}-s{seed}-{salt}"


def cmd_run(args) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config["seed"]
    dataset_dir = Path(args.dataset)
    test_path = dataset_dir / (args.test_file or "test.jsonl")
    test_instances = corpus_mod.read_instances(test_path)
    if not test_instances:
        raise ValidationError(f"no test instances in {test_path}")
    task = test_instances[0].task

    backend = _backend_config(config, args)
    _preflight(backend)

    method = args.retriever or config["retriever"]["method"]
    k = args.k if args.k is not None else config["retriever"]["k"]
    examples_by_query: dict[str, list] = {}
    if method != "none":
        train_instances = corpus_mod.read_instances(dataset_dir / "train.jsonl")
        by_id = {inst.id: inst for inst in train_instances}
        query_vectors = None
        if method == "dense":
            endpoint = _endpoint_config(config, args)
            corpus_matrix = retrieve.embed_corpus(
                [inst.context for inst in train_instances], endpoint, config["cache_dir"]
            )
            state = retrieve.bind_embeddings(train_instances, corpus_matrix)
            query_matrix = retrieve.embed_corpus(
                [inst.context for inst in test_instances], endpoint, config["cache_dir"]
            )
            query_vectors = {
                inst.id: query_matrix.vectors[i] for i, inst in enumerate(test_instances)
            }
        else:
            state = retrieve.build_lexical_index(train_instances)
        for inst in test_instances:
            scored = retrieve.retrieve_topk(
                inst,
                k,
                method,
                state,
                seed=seed,
                query_vector=None if query_vectors is None else query_vectors[inst.id],
            )
            examples_by_query[inst.id] = [by_id[s.instance_id] for s in scored]

    defaults = config["task_defaults"][task]
    requests = []
    for inst in test_instances:
        prompt = taskgen.render_prompt(inst, examples_by_query.get(inst.id, []))
        requests.append(
            genclient.GenerationRequest(
                instance_id=inst.id,
                prompt=prompt.text,
                max_input_tokens=defaults["max_input_tokens"],
                max_new_tokens=defaults["max_new_tokens"],
                temperature=0.0,
                seed=seed,
            )
        )

    started = _utcnow()
    batch = genclient.run_batch(requests, backend)

    gold = {inst.id: inst.response for inst in test_instances}
    multi_entity = task == "phenotype_qa"
    per_instance = metrics.per_instance_scores(batch.records, gold, multi_entity)
    nonempty = {r.instance_id: bool(r.output.strip()) for r in batch.records}
    result = metrics.aggregate_scores(per_instance, nonempty)

    run_id = args.run_id or _default_run_id(task, backend, method, k, seed, test_path, args)
    run_dir = Path(config["runs_dir"]) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    if lock.exists():
        raise ValidationError(f"run directory {run_dir} is locked by another writer")
    if (run_dir / "manifest.json").exists() and not args.force:
        raise ValidationError(f"run {run_id} already exists (use --force to overwrite)")
    lock.touch()
    try:
        _write_records(batch.records, run_dir / "records.jsonl")
        _write_scores(result, per_instance, run_dir / "scores.json")
        (run_dir / "dataset_ref.txt").write_text(str(test_path) + "\n", encoding="utf-8")
        manifest = report.RunManifest(
            run_id=run_id,
            task=task,
            backend_tag=backend.tag,
            retriever=method,
            perturbation_kind=args.perturbation_kind,
            perturbation_rate=args.perturbation_rate,
            seed=seed,
            started=started,
            finished=_utcnow(),
            wall_clock_ms=batch.wall_clock_ms,
        )
        report.write_manifest(manifest, run_dir / "manifest.json")
    finally:
        lock.unlink(missing_ok=True)

    print(
        f"run {run_id}: {result.n_instances} instances "
        f"({batch.n_failed} failed), average F1 {report.round2(100.0 * result.average_f1)}"
    )
    return EXIT_OK


def _write_records(records, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for r in records:
            handle.write(
                json.dumps(
                    {
                        "instance_id": r.instance_id,
                        "output": r.output,
                        "latency_ms": r.latency_ms,
                        "backend_tag": r.backend_tag,
                        "attempt_count": r.attempt_count,
                        "prompt_tokens": r.prompt_tokens,
                        "completion_tokens": r.completion_tokens,
                        "failed": r.failed,
                    },
                    ensure_ascii=False,
                )
            )
            handle.write("\n")


def _triple_dict(triple: metrics.MetricTriple) -> dict:
    return {"precision": triple.precision, "recall": triple.recall, "f1": triple.f1}


def _write_scores(result: metrics.MetricReport, per_instance: dict, path: Path) -> None:
    # Scores are a pure function of (outputs, gold): no backend identity,
    # timing, or timestamps in here, so replayed runs reproduce the file
    # byte for byte.
    payload = {
        "n_instances": result.n_instances,
        "n_nonempty": result.n_nonempty,
        "exact_match": _triple_dict(result.exact_match),
        "bleu2": _triple_dict(result.bleu2),
        "rouge_l": _triple_dict(result.rouge_l),
        "average_f1": result.average_f1,
        "per_instance": {iid: per_instance[iid] for iid in sorted(per_instance)},
    }
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def cmd_report(args) -> int:
    config = load_config(args.config)
    store = report.RunStore(config["runs_dir"])
    run_ids = args.runs.split(",") if args.runs else store.list_runs()
    if not run_ids:
        print("no complete runs found", file=sys.stderr)
        return EXIT_VALIDATION
    header, rows = report.build_table(report.TableSpec(args.kind, run_ids), store)
    out_dir = Path(config["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{args.kind}.csv"
    md_path = out_dir / f"{args.kind}.md"
    report.emit(header, rows, "csv", csv_path)
    report.emit(header, rows, "markdown", md_path)
    print(f"wrote {csv_path} and {md_path} ({len(rows)} rows)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oncoeval", description=__doc__)
    parser.add_argument("--config", help="JSON config file; flags win over it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="build instruction datasets and splits")
    p.add_argument("--task", required=True, choices=corpus_mod.TASKS)
    p.add_argument("--synthetic", type=int, help="generate N synthetic documents")
    p.add_argument("--seed", type=int)
    p.add_argument("--name", help="dataset directory name (default: task)")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("perturb", help="build a robustness testbed from a dataset file")
    p.add_argument("--input", required=True)
    p.add_argument("--kind", required=True, choices=("counterfactual", "misspelling"))
    p.add_argument("--rate", required=True, type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--ops", help="comma-separated misspelling ops")
    p.add_argument("--out")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("embed", help="embed a dataset file's contexts into the cache")
    p.add_argument("--input", required=True)
    p.add_argument("--url", help="embedding endpoint url")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("run", help="generate and score one run")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--test-file", help="test split file name (default test.jsonl)")
    p.add_argument("--backend", choices=("http", "replay", "echo"))
    p.add_argument("--url")
    p.add_argument("--replay-path", dest="replay_path")
    p.add_argument("--echo-text", dest="echo_text")
    p.add_argument("--max-in-flight", dest="max_in_flight", type=int)
    p.add_argument("--timeout-ms", dest="timeout_ms", type=int)
    p.add_argument("--retriever", choices=("none", "random", "lexical", "dense"))
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--run-id", dest="run_id")
    p.add_argument("--perturbation-kind", dest="perturbation_kind")
    p.add_argument("--perturbation-rate", dest="perturbation_rate", type=float)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="emit result tables from stored runs")
    p.add_argument("--kind", required=True, choices=report.TABLE_KINDS)
    p.add_argument("--runs", help="comma-separated run ids (default: all)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
