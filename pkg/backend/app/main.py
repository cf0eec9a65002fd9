"""
Entry point for the tee-repair command line.

Subcommands mirror the repair workflow: locate issues, repair them through
rule templates and placeholder synthesis, generate the normal-side test
client, evaluate its observations, and score detection reports.
"""
import logging
from pathlib import Path
from typing import Optional

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from app.config import ConfigError, RunConfig, build_run_config, settings
from app.models.schemas import (
    FileIssues,
    FunctionClassification,
    GroundTruth,
    IssueReport,
    RepairReport,
    SourceModel,
    TestManifest,
)
from app.services.client_codegen import client_file_name, generate_client
from app.services.cmodel import (
    NoEntryPoint,
    extract_client_spec,
    load_classification,
    load_source_file,
)
from app.services.detector import detect
from app.services.dsl import load_rules, render_rule, validate_rule
from app.services.gemini import GeminiModelClient
from app.services.harness import (
    build_manifest,
    evaluate_outcomes,
    generate_cases,
    parse_observations,
    repair_files,
)
from app.services.metrics import compute_metrics, count_confusion, load_counts
from app.services.replay import RecordingModelClient, ReplayModelClient
from app.services.synth import ModelClient
from app.utils.constants import DEFAULT_ENTRY_POINT, ISSUE_DISPLAY_NAMES


logger = logging.getLogger(__name__)

APP_DESCRIPTION = """
Locate and repair bad partitioning in TEE trusted applications.

Exit codes: 0 clean / success, 1 findings / residual issues / failing cases,
2 configuration or IO error.
""".strip()

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_ERROR = 2

app = typer.Typer(help=APP_DESCRIPTION, no_args_is_help=True, add_completion=False)
console = Console()


# ==============================================================================
# SHARED OPTIONS AND HELPERS
# ==============================================================================

RulesOpt = typer.Option(None, "--rules", help="Directory of *.dsl repair rules")
ClassifyOpt = typer.Option(None, "--classify", help="Function-classification YAML profile")
OutOpt = typer.Option(None, "--out", help="Directory for reports and generated files")
VerboseOpt = typer.Option(False, "--verbose", "-v", help="Debug logging")


def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def _fail(e: Exception) -> typer.Exit:
    logger.error(f"{type(e).__name__}: {e}")
    return typer.Exit(code=EXIT_ERROR)


def _c_files(inputs: list[Path]) -> list[Path]:
    """Input files as given; directories expand to their *.c files."""
    files: list[Path] = []
    for path in inputs:
        if path.is_dir():
            files.extend(sorted(path.rglob("*.c")))
        elif path.is_file():
            files.append(path)
        else:
            raise FileNotFoundError(f"input not found: {path}")
    if not files:
        raise FileNotFoundError("no C sources among the inputs")
    return sorted(set(files))


def _classification(cfg: RunConfig) -> FunctionClassification:
    fc = load_classification(cfg.classify_file)
    updates = {}
    if cfg.entry_point != DEFAULT_ENTRY_POINT:
        updates["entry_point"] = cfg.entry_point
    if cfg.ta_uuid:
        updates["ta_uuid"] = cfg.ta_uuid
    return fc.model_copy(update=updates) if updates else fc


def _model_client(cfg: RunConfig) -> Optional[ModelClient]:
    if cfg.resolver == "heuristic":
        return None
    if cfg.resolver == "replay":
        return ReplayModelClient.from_path(cfg.fixtures_dir)

    live = GeminiModelClient(
        api_key=cfg.api_key,
        endpoint_url=cfg.endpoint_url,
        model=cfg.model_name,
        timeout_seconds=cfg.timeout_seconds,
    )
    if cfg.resolver == "record":
        return RecordingModelClient(live, cfg.fixtures_dir / "recorded.json")
    return live


def _write_json(directory: Optional[Path], name: str, payload: str) -> Optional[Path]:
    if directory is None:
        return None
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / name
    target.write_text(payload + "\n", encoding="utf-8")
    logger.info(f"Wrote {target}")
    return target


# ==============================================================================
# COMMANDS
# ==============================================================================

@app.command("detect")
def cmd_detect(
    inputs: list[Path] = typer.Argument(..., help="TA source files or directories"),
    rules: Optional[Path] = RulesOpt,
    classify: Optional[Path] = ClassifyOpt,
    out: Optional[Path] = OutOpt,
    verbose: bool = VerboseOpt,
):
    """Locate bad-partitioning issues. Writes issues.json under --out."""
    _configure_logging(verbose)
    try:
        cfg = build_run_config(inputs=inputs, rules_dir=rules, classify_file=classify)
        load_rules(cfg.rules_dir)
        fc = _classification(cfg)
        report = IssueReport()
        for path in _c_files(cfg.inputs):
            issues = detect(load_source_file(path), fc)
            report.files.append(FileIssues(file=path.name, issues=issues))
        report.total = sum(len(f.issues) for f in report.files)
        _write_json(out, "issues.json", report.model_dump_json(indent=2))
    except (ValueError, OSError) as e:
        raise _fail(e)

    table = Table(title=f"{report.total} issue(s)")
    for column in ("File", "Line", "Kind", "Rule", "Statement"):
        table.add_column(column)
    for file_issues in report.files:
        for issue in file_issues.issues:
            table.add_row(
                file_issues.file, str(issue.line), ISSUE_DISPLAY_NAMES[issue.kind],
                issue.rule_hint, issue.statement,
            )
    console.print(table)
    raise typer.Exit(code=EXIT_FINDINGS if report.total else EXIT_OK)


@app.command("repair")
def cmd_repair(
    inputs: list[Path] = typer.Argument(..., help="TA source files or directories"),
    rules: Optional[Path] = RulesOpt,
    classify: Optional[Path] = ClassifyOpt,
    resolver: Optional[str] = typer.Option(
        None, "--resolver", help="heuristic | external | replay | record"
    ),
    model_only: bool = typer.Option(False, "--model-only", help="Skip heuristic inference"),
    max_iters: Optional[int] = typer.Option(None, "--max-iters", help="Repair iterations per issue"),
    out: Optional[Path] = OutOpt,
    in_place: bool = typer.Option(False, "--in-place", help="Overwrite the inputs"),
    fixtures: Optional[Path] = typer.Option(None, "--fixtures", help="Replay fixture file or directory"),
    verbose: bool = VerboseOpt,
):
    """Repair every detected issue; writes repaired sources, patches and repair_report.json."""
    _configure_logging(verbose)
    try:
        cfg = build_run_config(
            inputs=inputs, rules_dir=rules, classify_file=classify, resolver=resolver,
            model_only=model_only, max_iters=max_iters, output_dir=out, in_place=in_place,
            fixtures_dir=fixtures,
        )
        rule_set = load_rules(cfg.rules_dir)
        fc = _classification(cfg)
        client = _model_client(cfg)
        report = repair_files(
            _c_files(cfg.inputs), rule_set, fc, cfg.output_dir,
            client=client, model_only=cfg.model_only, max_iters=cfg.max_iters, in_place=cfg.in_place,
        )
        if hasattr(client, "save"):
            client.save()
        _write_json(cfg.output_dir, "repair_report.json", report.model_dump_json(indent=2))
    except (ValueError, OSError) as e:
        raise _fail(e)

    table = Table(title="Repair results")
    for column in ("Issue", "Rule", "Iterations", "Resolver", "Verdict", "Note"):
        table.add_column(column)
    for file_report in report.files:
        for result in file_report.results:
            table.add_row(
                result.issue_id, result.rule or "-", str(result.iterations),
                result.resolver_source or "-", result.static_verdict,
                result.error or ("exhausted" if result.exhausted else ""),
            )
    console.print(table)
    s = report.summary
    console.print(f"generated {s.generated}, clean {s.clean}, residual {s.residual}")
    raise typer.Exit(code=EXIT_FINDINGS if s.residual else EXIT_OK)


@app.command("gen-client")
def cmd_gen_client(
    inputs: list[Path] = typer.Argument(..., help="Repaired TA sources (and headers) or directories"),
    report: Optional[Path] = typer.Option(None, "--report", help="repair_report.json to derive cases from"),
    classify: Optional[Path] = ClassifyOpt,
    out: Optional[Path] = OutOpt,
    verbose: bool = VerboseOpt,
):
    """Generate client_<uuid>.c and manifest_<uuid>.json per TA."""
    _configure_logging(verbose)
    written = 0
    try:
        cfg = build_run_config(inputs=inputs, classify_file=classify, output_dir=out)
        fc = _classification(cfg)
        headers: list[SourceModel] = []
        sources: list[SourceModel] = []
        for path in _header_and_c_files(cfg.inputs):
            (headers if path.suffix == ".h" else sources).append(load_source_file(path))
        repair_report = (
            RepairReport.model_validate_json(report.read_text(encoding="utf-8")) if report else RepairReport()
        )
        by_file = {f.file: f for f in repair_report.files}

        for m in sources:
            try:
                spec = extract_client_spec(m, fc, headers=headers)
            except NoEntryPoint:
                logger.info(f"{m.path}: no entry point, skipped")
                continue
            cases = []
            file_report = by_file.get(m.path or "")
            for result in file_report.results if file_report else []:
                if result.static_verdict == "clean" and result.final_patch is not None:
                    cases.extend(generate_cases(result.issue, result.final_patch, spec, m))
            manifest = build_manifest(spec.uuid, cases, cfg.cipher, cfg.cipher_key)
            cfg.output_dir.mkdir(parents=True, exist_ok=True)
            (cfg.output_dir / client_file_name(spec.uuid)).write_text(
                generate_client(spec, cases), encoding="utf-8"
            )
            _write_json(cfg.output_dir, f"manifest_{spec.uuid}.json", manifest.model_dump_json(indent=2))
            console.print(f"{m.path}: {client_file_name(spec.uuid)} with {len(cases)} case(s)")
            written += 1
        if not written:
            raise NoEntryPoint(fc.entry_point)
    except (ValueError, OSError) as e:
        raise _fail(e)
    raise typer.Exit(code=EXIT_OK)


def _header_and_c_files(inputs: list[Path]) -> list[Path]:
    files = []
    for path in inputs:
        if path.is_dir():
            files.extend(sorted(p for p in path.rglob("*") if p.suffix in (".c", ".h")))
        elif path.is_file():
            files.append(path)
        else:
            raise FileNotFoundError(f"input not found: {path}")
    return sorted(set(files))


@app.command("eval")
def cmd_eval(
    manifest: Path = typer.Argument(..., help="manifest_<uuid>.json from gen-client"),
    observations: Path = typer.Argument(..., help="Client output with RESULT lines"),
    out: Optional[Path] = OutOpt,
    verbose: bool = VerboseOpt,
):
    """Check observed results against the manifest's expectations."""
    _configure_logging(verbose)
    try:
        m = TestManifest.model_validate_json(manifest.read_text(encoding="utf-8"))
        observed = parse_observations(observations.read_text(encoding="utf-8"))
        verdict = evaluate_outcomes(m.cases, observed, m.cipher, m.cipher_key)
        _write_json(out, "verdict.json", verdict.model_dump_json(indent=2))
    except (ValueError, OSError) as e:
        raise _fail(e)

    table = Table(title=f"Functional validation: {verdict.status}")
    table.add_column("Case")
    table.add_column("Expected")
    table.add_column("Result")
    for case in m.cases:
        expected = case.expected if isinstance(case.expected, str) else f"CiphertextOf({case.expected.source})"
        table.add_row(case.id, expected, verdict.reasons.get(case.id, "ok"))
    console.print(table)
    raise typer.Exit(code=EXIT_FINDINGS if verdict.status == "fail" else EXIT_OK)


@app.command("metrics")
def cmd_metrics(
    counts: Optional[Path] = typer.Option(None, "--counts", help="JSON of per-kind {ni, n, tp}"),
    issues: Optional[Path] = typer.Option(None, "--issues", help="issues.json from detect"),
    truth: Optional[Path] = typer.Option(None, "--truth", help="Ground-truth JSON"),
    out: Optional[Path] = OutOpt,
    verbose: bool = VerboseOpt,
):
    """Precision, recall and F1 per issue kind."""
    _configure_logging(verbose)
    try:
        if counts is not None:
            kind_counts = load_counts(counts)
        elif issues is not None and truth is not None:
            kind_counts = count_confusion(
                IssueReport.model_validate_json(issues.read_text(encoding="utf-8")),
                GroundTruth.model_validate_json(truth.read_text(encoding="utf-8")),
            )
        else:
            raise ConfigError("metrics needs --counts, or --issues together with --truth")
        report = compute_metrics(kind_counts)
        _write_json(out, "metrics.json", report.model_dump_json(indent=2))
    except (ValueError, OSError) as e:
        raise _fail(e)

    table = Table(title="Detection metrics", caption=report.footer)
    for column in ("Kind", "NI", "N", "TP", "P(%)", "R(%)", "F1"):
        table.add_column(column, justify="left" if column == "Kind" else "right")
    for row in [*report.rows, report.total]:
        table.add_row(
            ISSUE_DISPLAY_NAMES.get(row.kind, row.kind), str(row.ni), str(row.n), str(row.tp),
            f"{row.precision:.2f}", f"{row.recall:.2f}", f"{row.f1:.2f}",
        )
    console.print(table)
    raise typer.Exit(code=EXIT_OK)


@app.command("rules")
def cmd_rules(
    rules: Optional[Path] = RulesOpt,
    verbose: bool = VerboseOpt,
):
    """Parse, validate and render every bundled rule."""
    _configure_logging(verbose)
    try:
        cfg = build_run_config(rules_dir=rules)
        rule_set = load_rules(cfg.rules_dir)
    except (ValueError, OSError) as e:
        raise _fail(e)

    dirty = 0
    for name, rule in rule_set.items():
        report = validate_rule(rule)
        console.print(f"[bold]{name}[/bold]  fresh: {', '.join(report.fresh) or '-'}")
        console.print(render_rule(rule), markup=False, highlight=False, soft_wrap=True)
        for finding in report.findings:
            console.print(f"  {finding.severity}: {finding.code} {finding.subject}: {finding.message}", markup=False)
        if not report.clean:
            dirty += 1
    raise typer.Exit(code=EXIT_FINDINGS if dirty else EXIT_OK)


if __name__ == "__main__":
    app()
