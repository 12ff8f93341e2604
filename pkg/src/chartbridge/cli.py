"""Single command-line entry point.

Subcommands: serve | automation run/bench/report | eval claims/tasks |
report metrics | value project | gen-synthetic-patients. Every subcommand
runs against the mock backends with no network access; report paths write
delimited tables plus PNG figures of the same numbers. Exit codes: 0 on
success, 1 on usage errors, 2 on runtime errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import claims as claims_mod
from . import metrics as metrics_mod
from . import plots, synth, tasks as tasks_mod, value as value_mod
from .automation import AutomationEngine, job_to_dict, load_gold_file, load_spec_file
from .config import PlatformConfig, load_config
from .gateway import ModelGateway
from .sessionlog import read_log_dir
from .store import TimelineStore


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="chartbridge", description=__doc__)
    parser.add_argument("--config", help="platform config file (or CHARTBRIDGE_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the chat service HTTP API")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8080)

    automation = sub.add_parser("automation", help="run, benchmark, or report automations")
    asub = automation.add_subparsers(dest="automation_command", required=True)
    arun = asub.add_parser("run", help="batch-execute an automation over a patient list")
    arun.add_argument("automation_id")
    arun.add_argument("--patients", required=True, help="file with one patient id per line")
    arun.add_argument("--spec", help="automation spec file (default <specs-dir>/<id>.json)")
    arun.add_argument("--specs-dir", default="samples/automations")
    arun.add_argument("--out", help="output directory (default config reports dir)")
    abench = asub.add_parser("bench", help="evaluate an automation against its gold dataset")
    abench.add_argument("automation_id")
    abench.add_argument("--gold", help="gold dataset file (default <specs-dir>/<id>-gold.jsonl)")
    abench.add_argument("--spec", help="automation spec file (default <specs-dir>/<id>.json)")
    abench.add_argument("--specs-dir", default="samples/automations")
    areport = asub.add_parser("report", help="integrity report over recorded job files")
    areport.add_argument("automation_id")
    areport.add_argument("--jobs", help="directory of job files (default config reports dir /jobs)")

    evalp = sub.add_parser("eval", help="evaluate session logs")
    esub = evalp.add_subparsers(dest="eval_command", required=True)
    eclaims = esub.add_parser("claims", help="unsupported-claims report over session logs")
    eclaims.add_argument("--logs", required=True)
    eclaims.add_argument("--sample", type=float, default=1.0)
    eclaims.add_argument("--seed", type=int, default=0)
    eclaims.add_argument("--out", help="report directory (default config reports dir)")
    etasks = esub.add_parser("tasks", help="task categorization report over session logs")
    etasks.add_argument("--logs", required=True)
    etasks.add_argument("--k", type=int, default=1000)
    etasks.add_argument("--seed", type=int, default=0)
    etasks.add_argument("--merge-threshold", type=float, default=tasks_mod.DEFAULT_MERGE_THRESHOLD)
    etasks.add_argument("--out", help="report directory (default config reports dir)")

    report = sub.add_parser("report", help="platform reports")
    rsub = report.add_subparsers(dest="report_command", required=True)
    rmetrics = rsub.add_parser("metrics", help="usage snapshot, histograms, and breakdowns")
    rmetrics.add_argument("--logs", required=True)
    rmetrics.add_argument("--jobs", help="optional directory of automation job files")
    rmetrics.add_argument("--out", help="report directory (default config reports dir)")

    valuep = sub.add_parser("value", help="financial projections")
    vsub = valuep.add_subparsers(dest="value_command", required=True)
    vproject = vsub.add_parser("project", help="project a value scenario")
    vproject.add_argument("scenario", help="scenario file")
    vproject.add_argument("--stage", choices=("first_year", "steady_state"), default="steady_state")

    gen = sub.add_parser("gen-synthetic-patients", help="write seeded synthetic patient bundles")
    gen.add_argument("--n", type=int, default=20)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", help="bundle directory (default config patients dir)")

    return parser


def _gateway(config: PlatformConfig) -> ModelGateway:
    return ModelGateway(
        registry=config.models,
        backend=config.build_backend(),
        tokenizer=config.tokenizer,
        output_reserve=config.output_reserve,
        max_parallel=config.max_parallel,
    )


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _cmd_serve(args, config: PlatformConfig) -> int:
    import uvicorn

    from .api import create_app
    from .service import ChatService

    store = TimelineStore.from_dir(config.patients_dir) if config.patients_dir.is_dir() else TimelineStore()
    if not store.patient_ids():
        print(
            f"warning: no patient bundles under {config.patients_dir}; "
            "run gen-synthetic-patients first",
            file=sys.stderr,
        )
    service = ChatService(store, _gateway(config), tokenizer=config.tokenizer, log_dir=config.log_dir)
    app = create_app(service)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _load_engine(args, config: PlatformConfig) -> tuple[AutomationEngine, str]:
    spec_path = Path(args.spec) if args.spec else Path(args.specs_dir) / f"{args.automation_id}.json"
    if not spec_path.is_file():
        raise FileNotFoundError(f"automation spec not found: {spec_path}")
    spec = load_spec_file(spec_path)
    if spec.automation_id != args.automation_id:
        raise ValueError(f"spec file {spec_path} defines {spec.automation_id!r}, not {args.automation_id!r}")
    store = TimelineStore.from_dir(config.patients_dir)
    out_dir = Path(getattr(args, "out", None) or config.reports_dir)
    engine = AutomationEngine(
        store,
        _gateway(config),
        tokenizer=config.tokenizer,
        output_dir=out_dir / "worklists",
        max_parallel_patients=config.max_parallel,
    )
    engine.register(spec)
    return engine, str(out_dir)


def _cmd_automation_run(args, config: PlatformConfig) -> int:
    engine, out_dir = _load_engine(args, config)
    patient_ids = [
        line.strip() for line in Path(args.patients).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    job = engine.run_batch(args.automation_id, patient_ids)
    jobs_dir = Path(out_dir) / "jobs"
    jobs_dir.mkdir(parents=True, exist_ok=True)
    job_path = jobs_dir / f"{job.job_id}.json"
    job_path.write_text(
        json.dumps(job_to_dict(job), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    print(
        f"{job.job_id}: {len(job.patients)} patients, {job.error_count} errors, "
        f"job file {job_path}"
    )
    return 0


def _cmd_automation_bench(args, config: PlatformConfig) -> int:
    engine, _ = _load_engine(args, config)
    gold_path = Path(args.gold) if args.gold else Path(args.specs_dir) / f"{args.automation_id}-gold.jsonl"
    dataset = load_gold_file(gold_path)
    result = engine.evaluate_against_gold(args.automation_id, dataset)
    print(f"{args.automation_id}: agreement {result['agreement_rate']:.1%} over {len(dataset)} cases")
    for case in result["per_case"]:
        print(f"  {case['patient_id']}: {'match' if case['matched'] else 'MISS'}")
    return 0


def _cmd_automation_report(args, config: PlatformConfig) -> int:
    jobs_dir = Path(args.jobs) if args.jobs else config.reports_dir / "jobs"
    jobs = []
    for path in sorted(jobs_dir.glob("*.json")):
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("automation_id") == args.automation_id:
            jobs.append(doc)
    if not jobs:
        raise FileNotFoundError(f"no job files for {args.automation_id} under {jobs_dir}")
    patients = [p for job in jobs for p in job["patients"]]
    errors = sum(job["error_count"] for job in jobs)
    tokens = sum(p["telemetry"]["tokens_sent"] for p in patients)
    latency = sum(p["telemetry"]["latency_ms"] for p in patients)
    print(f"automation:         {args.automation_id}")
    print(f"total executions:   {len(jobs)}")
    print(f"patients processed: {len(patients)}")
    print(f"errors:             {errors}")
    print(f"tokens sent/patient: {tokens / len(patients):.1f}")
    print(f"mean latency:       {latency / len(patients):.1f} ms")
    return 0


def _eval_inputs(logs_dir: str, config: PlatformConfig):
    records = read_log_dir(logs_dir)
    backend = config.build_backend()
    embedder = config.build_embedder()
    return records, backend, embedder


def _cmd_eval_claims(args, config: PlatformConfig) -> int:
    records, backend, embedder = _eval_inputs(args.logs, config)
    generations = []
    for record in records:
        for turn in record.turns:
            if turn.status != "ok":
                continue
            generations.append(
                claims_mod.GenerationInput(
                    generation_id=f"{record.session_id}:{turn.turn_index:04d}",
                    summary_text=turn.response,
                    source_text=record.context_text,
                    linguistic_task=tasks_mod.classify_linguistic(turn.query, backend),
                )
            )
    report = claims_mod.score_corpus(
        generations, embedder, backend, sample_fraction=args.sample, seed=args.seed
    )
    out = Path(args.out or config.reports_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "claims_report.json").write_text(claims_mod.report_to_json(report), encoding="utf-8")
    _write_csv(
        out / "claims_histogram.csv",
        ["unsupported_claims", "fraction_of_generations"],
        [[count, f"{fraction:.6f}"] for count, fraction in sorted(report.histogram.items())],
    )
    plots.claims_histogram(report, out / "claims_histogram.png")
    print(
        f"analyzed {report.generations_analyzed} summarization generations: "
        f"mean {report.mean_unsupported:.2f} unsupported "
        f"({report.mean_hallucinations:.2f} hallucinations, "
        f"{report.mean_inaccuracies:.2f} inaccuracies); "
        f"{report.fraction_le_one:.0%} with one or zero"
    )
    print(f"reports in {out}")
    return 0


def _cmd_eval_tasks(args, config: PlatformConfig) -> int:
    records, backend, embedder = _eval_inputs(args.logs, config)
    queries = []
    thumbs_by_query: dict[str, str] = {}
    for record in records:
        for turn in record.turns:
            query_id = f"{record.session_id}:{turn.turn_index:04d}"
            queries.append((query_id, turn.query))
            if turn.feedback:
                thumbs_by_query[query_id] = turn.feedback.thumbs
    if not queries:
        raise ValueError(f"no queries found under {args.logs}")
    normalized = {qid: tasks_mod.normalize_medical(q, backend) for qid, q in queries}
    model = tasks_mod.cluster_tasks(
        [normalized[qid] for qid, _ in queries],
        embedder,
        k=args.k,
        seed=args.seed,
        merge_threshold=args.merge_threshold,
    )
    labels = []
    for i, (qid, q) in enumerate(queries):
        cid, cname = model.cluster_of(i)
        labels.append(
            tasks_mod.TaskLabel(
                query_id=qid,
                normalized=normalized[qid],
                cluster_id=cid,
                cluster_name=cname,
                linguistic_task=tasks_mod.classify_linguistic(q, backend),
            )
        )
    rates = tasks_mod.feedback_by_task(labels, thumbs_by_query)

    out = Path(args.out or config.reports_dir)
    out.mkdir(parents=True, exist_ok=True)
    medical_counts: dict[str, int] = {}
    for label in labels:
        medical_counts[label.cluster_name] = medical_counts.get(label.cluster_name, 0) + 1
    linguistic_counts: dict[str, int] = {}
    for label in labels:
        name = tasks_mod.LINGUISTIC_TASK_NAMES[label.linguistic_task]
        linguistic_counts[name] = linguistic_counts.get(name, 0) + 1
    n = len(labels)
    _write_csv(
        out / "tasks_medical.csv",
        ["medical_task", "queries", "share", "positive_rate", "feedback_n"],
        [
            [
                name,
                count,
                f"{count / n:.6f}",
                f"{rates['medical'][name].positive_rate:.6f}" if name in rates["medical"] else "",
                rates["medical"][name].n if name in rates["medical"] else 0,
            ]
            for name, count in sorted(medical_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        ],
    )
    _write_csv(
        out / "tasks_linguistic.csv",
        ["linguistic_task", "queries", "share", "positive_rate", "feedback_n"],
        [
            [
                name,
                count,
                f"{count / n:.6f}",
                f"{rates['linguistic'][name].positive_rate:.6f}" if name in rates["linguistic"] else "",
                rates["linguistic"][name].n if name in rates["linguistic"] else 0,
            ]
            for name, count in sorted(linguistic_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        ],
    )
    summary = {
        "queries": n,
        "clusters": len(model.labels),
        "k_requested": args.k,
        "seed": args.seed,
        "merge_threshold": args.merge_threshold,
        "top_medical_tasks": sorted(medical_counts.items(), key=lambda kv: (-kv[1], kv[0]))[:20],
        "linguistic_shares": {k: v / n for k, v in sorted(linguistic_counts.items())},
    }
    (out / "tasks_report.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    top = dict(sorted(medical_counts.items(), key=lambda kv: (-kv[1], kv[0]))[:15])
    plots.count_bars(top, out / "tasks_medical.png", "Most frequent medical tasks", "Queries")
    plots.fraction_bars(
        {k: v / n for k, v in linguistic_counts.items()},
        out / "tasks_linguistic.png",
        "Linguistic task shares",
        "Fraction of queries",
    )
    print(f"{n} queries in {len(model.labels)} task clusters; reports in {out}")
    return 0


def _cmd_report_metrics(args, config: PlatformConfig) -> int:
    store = metrics_mod.MetricsStore()
    store.ingest_dir(args.logs)
    records = store.records
    snapshot = store.snapshot()
    latency_hist = metrics_mod.histogram(metrics_mod.latency_seconds(records), "latency_s", 10.0)
    tokens_hist = metrics_mod.histogram(metrics_mod.tokens_per_query(records), "tokens", 40_000.0)
    breakdown = metrics_mod.data_type_breakdown(records)

    out = Path(args.out or config.reports_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = asdict(snapshot)
    doc["external_hie_fraction"] = metrics_mod.external_hie_fraction(records)
    doc["data_type_breakdown"] = breakdown
    doc["departments"] = metrics_mod.department_breakdown(records)
    (out / "metrics.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    _write_csv(
        out / "metrics_latency.csv",
        ["latency_lower_bound_s", "responses"],
        [[f"{low:g}", count] for low, count in sorted(latency_hist.bins.items())],
    )
    _write_csv(
        out / "metrics_tokens.csv",
        ["tokens_lower_bound", "queries"],
        [[f"{low:g}", count] for low, count in sorted(tokens_hist.bins.items())],
    )
    _write_csv(
        out / "metrics_data_types.csv",
        ["data_sources", "session_fraction"],
        [[key, f"{fraction:.6f}"] for key, fraction in sorted(breakdown.items())],
    )
    plots.metric_histogram(latency_hist, out / "metrics_latency.png", "Response time (s)", "Response time distribution")
    plots.metric_histogram(tokens_hist, out / "metrics_tokens.png", "Tokens per query", "Query token distribution")
    if breakdown:
        plots.fraction_bars(breakdown, out / "metrics_data_types.png", "Data types used per session")
    if args.jobs:
        jobs = metrics_mod.load_job_files(args.jobs)
        job_latency = metrics_mod.histogram(metrics_mod.job_latency_seconds(jobs), "latency_s", 10.0)
        _write_csv(
            out / "metrics_job_latency.csv",
            ["latency_lower_bound_s", "patients"],
            [[f"{low:g}", count] for low, count in sorted(job_latency.bins.items())],
        )
        plots.metric_histogram(
            job_latency, out / "metrics_job_latency.png",
            "Per-patient latency (s)", "Automation latency distribution",
        )
    print(
        f"{snapshot.sessions} sessions, {snapshot.queries} queries, "
        f"{snapshot.unique_users} users; reports in {out}"
    )
    return 0


def _cmd_value_project(args, config: PlatformConfig) -> int:
    scenario = value_mod.load_scenario(args.scenario)
    projection = value_mod.project(scenario)
    amount = projection.stage_values[args.stage]
    print(f"scenario:  {scenario.name} [{scenario.category}, {scenario.stage} stage]")
    print(f"{args.stage}: {value_mod.format_currency(amount)} per year "
          f"({value_mod.format_compact_currency(amount)})")
    for assumption in projection.assumptions:
        print(f"  - {assumption}")
    return 0


def _cmd_gen_patients(args, config: PlatformConfig) -> int:
    out = Path(args.out or config.patients_dir)
    paths = synth.write_bundles(args.n, args.seed, out)
    print(f"wrote {len(paths)} patient bundles to {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        config = load_config(args.config)
        if args.command == "serve":
            return _cmd_serve(args, config)
        if args.command == "automation":
            if args.automation_command == "run":
                return _cmd_automation_run(args, config)
            if args.automation_command == "bench":
                return _cmd_automation_bench(args, config)
            return _cmd_automation_report(args, config)
        if args.command == "eval":
            if args.eval_command == "claims":
                return _cmd_eval_claims(args, config)
            return _cmd_eval_tasks(args, config)
        if args.command == "report":
            return _cmd_report_metrics(args, config)
        if args.command == "value":
            return _cmd_value_project(args, config)
        if args.command == "gen-synthetic-patients":
            return _cmd_gen_patients(args, config)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
