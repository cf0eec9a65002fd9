"""Two-stage validation of repairs.

Stage 1 re-runs the detector on the patched file inside a bounded repair loop.
Stage 2 derives oracle test cases for a clean patch and checks the
observations reported by the generated normal-side client.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

from app.models.schemas import (
    CiphertextOf,
    ClientSpec,
    ConcretePatch,
    DslRule,
    Evidence,
    FileRepairReport,
    FunctionClassification,
    FunctionalVerdict,
    Issue,
    Observation,
    ParamSetup,
    ParamType,
    RepairReport,
    RepairResult,
    RepairSummary,
    SourceModel,
    Span,
    Tamper,
    TestCase,
    TestManifest,
)
from app.services.cmodel import (
    SourceModelError,
    int_value,
    load_source,
    parse_call,
    root_name,
    split_relation,
    strip_casts,
)
from app.services.detector import detect
from app.services.patcher import PatchError, apply_patch, emit_diff, unified_diff
from app.services.synth import History, ModelClient, SynthesisError, apply_bindings, resolve
from app.services.templates import TemplateError, template_for
from app.utils.constants import (
    DEFAULT_CIPHER_KEY,
    DEFAULT_CIPHER_STUB,
    DEFAULT_MAX_ITERS,
    DEFAULT_MEMREF_LEN,
    DEFAULT_OUTPUT_LEN,
    EXPECTED_STATUS_CODES,
    ISSUE_DISPLAY_NAMES,
    PAYLOAD_FILL_BYTE,
    TAMPER_OFFSET,
    TAMPER_XOR_MASK,
    TEE_SUCCESS_CODE,
)


logger = logging.getLogger(__name__)


# ==============================================================================
# ERRORS
# ==============================================================================

class HarnessError(ValueError):
    """Base error for validation and test generation."""


class UnsupportedParamType(HarnessError):
    def __init__(self, slot: int, kind: str):
        self.slot = slot
        self.kind = kind
        super().__init__(f"parameter slot {slot} has unsupported type {kind!r}")


class BoundNotExtractable(HarnessError):
    """The patch's guard bound is not a literal; cases need a runtime argument."""


class MissingObservation(HarnessError):
    def __init__(self, case_id: str):
        self.case_id = case_id
        super().__init__(f"no observation for case {case_id}")


# ==============================================================================
# STAGE 1: STATIC RE-DETECTION LOOP
# ==============================================================================

def verify_static(m: SourceModel, fc: FunctionClassification) -> list[Issue]:
    return detect(m, fc)


@dataclass
class RepairSession:
    """One file under repair. `text` advances as patches are kept."""
    text: str
    file_name: str
    rules: dict[str, DslRule]
    fc: FunctionClassification = field(default_factory=FunctionClassification)
    client: Optional[ModelClient] = None
    model_only: bool = False
    history: History = field(default_factory=History)


def _patched_range(before: str, after: str, span: Span) -> Span:
    grown = len(after.split("\n")) - len(before.split("\n"))
    end = max(span.start_line, span.end_line + grown)
    return Span(start_line=span.start_line, start_col=0, end_line=end, end_col=0)


def _residual_feedback(residual: list[Issue]) -> str:
    found = "; ".join(
        f"{ISSUE_DISPLAY_NAMES[i.kind]} at line {i.line} (`{i.statement}`)" for i in residual
    )
    return (
        f"The previous repair was applied but the code still has bad partitioning issues: {found}. "
        "Revise the values so that these issues are fixed."
    )


def repair_loop(session: RepairSession, issue: Issue, max_iters: int = DEFAULT_MAX_ITERS) -> RepairResult:
    """instantiate -> resolve -> apply -> verify_static until clean or max_iters.

    Every attempt starts from the pre-patch text so the issue's span stays
    valid. The last patch produced is kept in `session.text` even when residual.
    """
    if max_iters < 1:
        raise HarnessError(f"max_iters must be at least 1, got {max_iters}")

    result = RepairResult(issue_id=issue.issue_id, issue=issue, max_iters=max_iters)
    before = session.text
    m = load_source(before, session.file_name)
    feedback: Optional[str] = None
    kept: Optional[tuple[ConcretePatch, str, list[str]]] = None

    for iteration in range(1, max_iters + 1):
        result.iterations = iteration
        try:
            template = template_for(issue, session.rules, m, session.fc)
        except TemplateError as e:
            result.error = str(e)
            logger.warning(f"{issue.issue_id}: {e}")
            break
        result.rule = template.rule
        result.template = template.render()
        result.notes = list(template.notes)

        try:
            outcome = resolve(
                template, m, issue, session.history,
                client=session.client, fc=session.fc,
                model_only=session.model_only, feedback=feedback,
            )
            patch = apply_bindings(template, outcome.bindings, issue.issue_id, outcome.source)
            patched = apply_patch(before, patch)
            repaired = load_source(patched, session.file_name)
        except (SynthesisError, PatchError, SourceModelError) as e:
            result.error = f"{type(e).__name__}: {e}"
            logger.warning(f"{issue.issue_id} iteration {iteration}: {result.error}")
            feedback = f"The previous reply could not be used: {e}."
            if session.client is None:
                break
            continue

        result.error = None
        result.bindings = dict(outcome.bindings)
        result.resolver_source = outcome.source
        kept = (patch, patched, template.declared)
        touched = _patched_range(before, patched, template.span)
        residual = [i for i in verify_static(repaired, session.fc) if touched.contains_line(i.line)]
        result.residual_issues = residual
        if not residual:
            result.static_verdict = "clean"
            logger.info(f"{issue.issue_id}: clean after {iteration} iteration(s) via {outcome.source}")
            break
        result.static_verdict = "residual"
        feedback = _residual_feedback(residual)
        logger.info(f"{issue.issue_id} iteration {iteration}: {len(residual)} residual issue(s)")
        if outcome.source == "heuristic":
            break
    else:
        result.exhausted = result.static_verdict != "clean"

    if kept is not None:
        patch, patched, declared = kept
        result.final_patch = patch
        result.diff = emit_diff(patch, session.file_name, before)
        session.text = patched
        session.history.assigned.update(result.bindings[d] for d in declared if d in result.bindings)
    if result.exhausted:
        result.notes.append(f"ExhaustedIterations: still residual after {max_iters} iteration(s)")
    return result


def _relocate(issue: Issue, m: SourceModel, fc: FunctionClassification) -> Optional[Issue]:
    return next(
        (i for i in detect(m, fc) if i.kind == issue.kind and i.span.start_line == issue.span.start_line),
        None,
    )


def repair_source(session: RepairSession, max_iters: int = DEFAULT_MAX_ITERS) -> list[RepairResult]:
    """Repair every issue in the file, bottom-up so earlier spans stay put."""
    issues = detect(load_source(session.text, session.file_name), session.fc)
    ordered = sorted(issues, key=lambda i: (i.span.start_line, i.span.start_col), reverse=True)
    results: list[RepairResult] = []
    for issue in ordered:
        current = _relocate(issue, load_source(session.text, session.file_name), session.fc)
        if current is None:
            logger.info(f"{issue.issue_id}: already fixed by an earlier patch")
            results.append(RepairResult(
                issue_id=issue.issue_id, issue=issue, max_iters=max_iters,
                static_verdict="clean", notes=["fixed by an earlier patch at the same statement"],
            ))
            continue
        results.append(repair_loop(session, current, max_iters))
    results.reverse()
    return results


def summarize(files: Iterable[FileRepairReport]) -> RepairSummary:
    results = [r for f in files for r in f.results]
    clean = sum(1 for r in results if r.static_verdict == "clean" and r.final_patch is not None)
    return RepairSummary(
        generated=sum(1 for r in results if r.final_patch is not None),
        clean=clean,
        residual=sum(1 for r in results if r.static_verdict == "residual"),
    )


def repair_files(
    paths: list[Path],
    rules: dict[str, DslRule],
    fc: FunctionClassification,
    output_dir: Path,
    client: Optional[ModelClient] = None,
    model_only: bool = False,
    max_iters: int = DEFAULT_MAX_ITERS,
    in_place: bool = False,
) -> RepairReport:
    """Repair each file and write the repaired source plus a `<name>.patch` diff."""
    output_dir.mkdir(parents=True, exist_ok=True)
    reports: list[FileRepairReport] = []
    for path in sorted(paths):
        original = path.read_text(encoding="utf-8")
        session = RepairSession(
            text=original, file_name=path.name, rules=rules, fc=fc,
            client=client, model_only=model_only,
        )
        results = repair_source(session, max_iters)
        report = FileRepairReport(file=path.name, results=results)
        if session.text != original:
            target = path if in_place else output_dir / path.name
            target.write_text(session.text, encoding="utf-8")
            patch_file = output_dir / f"{path.name}.patch"
            patch_file.write_text(unified_diff(original, session.text, path.name), encoding="utf-8")
            report.output_file = str(target) if in_place else target.name
            report.patch_file = patch_file.name
        reports.append(report)
        logger.info(f"{path.name}: {len(results)} issue(s) processed")
    return RepairReport(files=reports, summary=summarize(reports))


# ==============================================================================
# STAGE 2: ORACLE TEST CASES
# ==============================================================================

_SLOT_RE = re.compile(r"params\s*\[\s*(\d+)\s*\]")
_VALUE_INDEX_RE = re.compile(
    r"(params\s*\[\s*(\d+)\s*\]\s*\.\s*value\s*\.\s*a)\s*(?:([+-])\s*(\w+))?"
)
_GUARD_HEAD_RE = re.compile(r"if\s*\((.*)\)\s*\{?\s*$")
_CASE_TAGS = {"UnencryptedOutput": "udo", "InputValidationWeakness": "iv", "SharedMemoryUse": "sm"}


def _slot(*texts: str) -> Optional[int]:
    """Slot of the first `params[k]` found in any of the texts."""
    for text in texts:
        match = _SLOT_RE.search(str(text or ""))
        if match:
            return int(match.group(1))
    return None


def _command_for(issue: Issue, spec: Optional[ClientSpec]) -> int | str:
    if spec is None:
        return 0
    for command in spec.commands:
        if issue.function in command.functions:
            return command.command_id
    return spec.commands[0].command_id


def _kind(spec: Optional[ClientSpec], command_id: int | str, slot: int, default: ParamType) -> ParamType:
    command = spec.command(command_id) if spec is not None else None
    if command is not None and command.param_types[slot] != "none":
        return command.param_types[slot]
    return default


def _patch_guards(patch: ConcretePatch) -> list[tuple[str, str, str]]:
    guards = []
    for line in patch.lines:
        head = _GUARD_HEAD_RE.match(line.text.strip()) if line.op == "insert" else None
        relation = split_relation(head.group(1)) if head else None
        if relation is not None:
            guards.append(relation)
    return guards


def _upper_guard(patch: ConcretePatch) -> tuple[str, str, str]:
    for left, op, right in _patch_guards(patch):
        if op in (">", ">="):
            return left, op, right
    raise BoundNotExtractable("patch has no upper-bound guard")


def _limit(op: str, bound: str, macros: dict[str, str]) -> int:
    """Largest accepted value for `x > bound` / `x >= bound`."""
    value = int_value(bound, macros)
    if value is None:
        raise BoundNotExtractable(f"guard bound {bound!r} is not a literal")
    return value if op == ">" else value - 1


def _case(issue: Issue, suffix: str, command_id: int | str, **kwargs) -> TestCase:
    return TestCase(
        id=f"{_CASE_TAGS[issue.kind]}_l{issue.line}_{suffix}",
        command_id=command_id,
        **kwargs,
    )


def _string_literal(init: Optional[str]) -> Optional[bytes]:
    if not init:
        return None
    match = re.fullmatch(r'\s*"((?:[^"\\]|\\.)*)"\s*', init)
    if not match:
        return None
    return match.group(1).encode("latin-1").decode("unicode_escape").encode("latin-1")


def _plaintext_of(expr: str, issue: Issue, m: Optional[SourceModel]) -> Optional[str]:
    name = root_name(expr)
    if m is None or name is None:
        return None
    decl = m.declaration_of(name, issue.line, issue.function)
    data = _string_literal(decl.init if decl else None)
    return data.hex() if data else None


_CONVERSION_RE = re.compile(rb"%%|%[^a-zA-Z%]*[a-zA-Z]")


def _formatted_secret(evidence: Evidence, issue: Issue, m: Optional[SourceModel]) -> CiphertextOf:
    """Format plus argument plaintexts when every argument is a `%s` of a literal-initialised buffer."""
    args = evidence.get("args", [])
    args = args if isinstance(args, list) else [str(args)]
    expected = CiphertextOf(source=", ".join(args))
    fmt = _string_literal(str(evidence.get("format", "")))
    if fmt is None:
        return expected
    conversions = [c for c in _CONVERSION_RE.findall(fmt) if c != b"%%"]
    if conversions != [b"%s"] * len(args):
        return expected
    values = [_plaintext_of(a, issue, m) for a in args]
    if not all(values):
        return expected
    return expected.model_copy(update={"format_hex": fmt.hex(), "arguments_hex": values})


def _unencrypted_cases(issue, patch, spec, m, command_id) -> list[TestCase]:
    evidence = issue.evidence
    out_slot = _slot(str(evidence.get("out", ""))) or 0
    length = int_value(str(evidence.get("len", "")), m.macros if m else None) or DEFAULT_OUTPUT_LEN
    if "plain" in evidence:
        expected = CiphertextOf(
            source=str(evidence["plain"]),
            plaintext_hex=_plaintext_of(str(evidence["plain"]), issue, m),
        )
    else:
        expected = _formatted_secret(evidence, issue, m)
    return [_case(
        issue, "cipher", command_id,
        params=[ParamSetup(slot=out_slot, kind=_kind(spec, command_id, out_slot, "memref-out"), length=length)],
        expected=expected,
        output_slot=out_slot,
        note="output must be the ciphertext of the secret",
    )]


_BOUND_EDGES = (("below", "Success"), ("at", "Success"), ("above", "ErrorBadParameters"))
_INDEX_EDGES = (("lower", "Success"), ("upper", "Success"), ("past", "ErrorBadParameters"))


def _symbolic_cases(
    issue: Issue,
    command_id: int | str,
    setup: ParamSetup,
    edges: tuple[tuple[str, str], ...],
    exprs: tuple[str, ...],
    note: str,
) -> list[TestCase]:
    """Cases whose length or value is supplied on the client's command line."""
    return [
        _case(issue, suffix, command_id,
              params=[setup.model_copy(update={"symbolic": expr})],
              expected=status, note=note)
        for (suffix, status), expr in zip(edges, exprs)
    ]


def _copy_bound_cases(issue, patch, spec, m, command_id) -> list[TestCase]:
    slot = _slot(issue.evidence.get("in", ""), issue.evidence.get("len", "")) or 0
    setup = ParamSetup(slot=slot, kind=_kind(spec, command_id, slot, "memref-in"), fill=PAYLOAD_FILL_BYTE)
    try:
        _, op, bound = _upper_guard(patch)
        n = _limit(op, bound, m.macros if m else {})
    except BoundNotExtractable as e:
        logger.info(f"{issue.issue_id}: {e}; emitting symbolic cases")
        guard = next((g for g in _patch_guards(patch) if g[1] in (">", ">=")), ("", ">", "n"))
        op, bound = guard[1], guard[2]
        exprs = (f"{bound} - 1", bound, f"{bound} + 1") if op == ">" else (f"{bound} - 2", f"{bound} - 1", bound)
        return _symbolic_cases(issue, command_id, setup, _BOUND_EDGES, exprs, f"len(x) around {bound}: {e}")
    return [
        _case(issue, suffix, command_id,
              params=[setup.model_copy(update={"length": length})],
              expected=status, note=f"len(x) = {length}, bound {n}")
        for (suffix, status), length in zip(_BOUND_EDGES, (n - 1, n, n + 1))
    ]


def _through_local(index: str, issue: Issue, m: Optional[SourceModel]) -> str:
    """Follow `int idx = <expr>;` once so the index can be inverted."""
    if m is None or not re.fullmatch(r"[A-Za-z_]\w*", index.strip()):
        return index
    decl = m.declaration_of(index.strip(), issue.line, issue.function)
    return decl.init if decl is not None and decl.kind == "scalar" and decl.init else index


def _index_value(index: str, effective: int, macros: dict[str, str]) -> Optional[tuple[int, int]]:
    """(slot, value.a) that makes `index` evaluate to `effective`."""
    match = _VALUE_INDEX_RE.fullmatch(strip_casts(index).strip())
    if not match:
        return None
    offset = 0
    if match.group(3):
        k = int_value(match.group(4), macros)
        if k is None:
            return None
        offset = k if match.group(3) == "+" else -k
    return int(match.group(2)), effective - offset


def _input_array_cases(issue, bound, index, spec, m, command_id) -> list[TestCase]:
    # the array is the input buffer itself: its length must cover the index
    macros = m.macros if m else {}
    slot = _slot(bound) or 0
    setup = ParamSetup(slot=slot, kind=_kind(spec, command_id, slot, "memref-in"), fill=PAYLOAD_FILL_BYTE)
    edges = (("below", "ErrorBadParameters"), ("at", "Success"), ("above", "Success"))
    literal = int_value(index, macros)
    if literal is None:
        logger.info(f"{issue.issue_id}: index {index!r} is not a literal; emitting symbolic cases")
        exprs = (index, f"{index} + 1", f"{index} + 2")
        return _symbolic_cases(issue, command_id, setup, edges, exprs, f"len(x) around {index} + 1")
    n = literal + 1
    return [
        _case(issue, suffix, command_id,
              params=[setup.model_copy(update={"length": length})],
              expected=status, note=f"len(x) = {length}, index {literal}")
        for (suffix, status), length in zip(edges, (n - 1, n, n + 1))
    ]


def _array_index_cases(issue, patch, spec, m, command_id) -> list[TestCase]:
    macros = m.macros if m else {}
    slot = _slot(issue.statement) or 0
    setup = ParamSetup(slot=slot, kind=_kind(spec, command_id, slot, "value-in"))
    try:
        left, op, bound = _upper_guard(patch)
        index = str(issue.evidence.get("index", left))
        if ".memref.size" in re.sub(r"\s+", "", bound):
            return _input_array_cases(issue, bound, index, spec, m, command_id)
        limit = _limit(op, bound, macros)
        source = _through_local(index, issue, m)
        cases = []
        for (suffix, status), effective in zip(_INDEX_EDGES, (0, limit, limit + 1)):
            inverted = _index_value(source, effective, macros)
            if inverted is None:
                raise BoundNotExtractable(f"index {index!r} is not derived from a value parameter")
            slot, value = inverted
            cases.append(_case(
                issue, suffix, command_id,
                params=[ParamSetup(slot=slot, kind=_kind(spec, command_id, slot, "value-in"), value=value)],
                expected=status, note=f"index = {effective}",
            ))
        return cases
    except BoundNotExtractable as e:
        logger.info(f"{issue.issue_id}: {e}; emitting symbolic cases")
        exprs = ("lowest valid index", "highest valid index", "one past the highest index")
        return _symbolic_cases(issue, command_id, setup, _INDEX_EDGES, exprs, str(e))


def _shared_length(patch: ConcretePatch, sm: str, macros: dict[str, str]) -> int:
    target = re.sub(r"\s+", "", sm)
    for line in patch.lines:
        call = parse_call(line.text.strip().rstrip(";")) if line.op == "insert" else None
        if call and len(call[1]) == 3 and target in (re.sub(r"\s+", "", a) for a in call[1][:2]):
            length = int_value(call[1][2], macros)
            if length is not None:
                return length
    return DEFAULT_MEMREF_LEN


def _shared_memory_cases(issue, patch, spec, m, command_id) -> list[TestCase]:
    sm = str(issue.evidence.get("sm", ""))
    slot = _slot(sm) or 0
    default: ParamType = "memref-out" if patch.provenance.rule == "3.2" else "memref-in"
    kind = _kind(spec, command_id, slot, default)
    length = _shared_length(patch, sm, m.macros if m else {})
    setup = [ParamSetup(slot=slot, kind=kind, length=length, fill=PAYLOAD_FILL_BYTE)]
    return [
        _case(issue, "untampered", command_id, params=setup, expected="Success"),
        _case(
            issue, "tampered", command_id, params=setup,
            tamper=Tamper(slot=slot, offset=TAMPER_OFFSET, xor_mask=TAMPER_XOR_MASK),
            expected="ErrorBadParameters",
            note="shared region modified by the normal side before the call",
        ),
    ]


def generate_cases(
    issue: Issue,
    patch: ConcretePatch,
    spec: Optional[ClientSpec] = None,
    m: Optional[SourceModel] = None,
) -> list[TestCase]:
    """Oracle cases for a stage-1 clean patch: 1 / 3 / 3 / 2 per issue form."""
    command_id = _command_for(issue, spec)
    if issue.kind == "UnencryptedOutput":
        return _unencrypted_cases(issue, patch, spec, m, command_id)
    if issue.kind == "SharedMemoryUse":
        return _shared_memory_cases(issue, patch, spec, m, command_id)
    if "index" in issue.evidence or patch.provenance.rule == "2.2":
        return _array_index_cases(issue, patch, spec, m, command_id)
    return _copy_bound_cases(issue, patch, spec, m, command_id)


def build_manifest(
    uuid: str,
    cases: list[TestCase],
    cipher: str = DEFAULT_CIPHER_STUB,
    cipher_key: int = DEFAULT_CIPHER_KEY,
) -> TestManifest:
    cipher_stub(cipher)
    return TestManifest(uuid=uuid, cipher=cipher, cipher_key=cipher_key, cases=cases)


# ==============================================================================
# OBSERVATIONS AND VERDICTS
# ==============================================================================

def _xor(data: bytes, key: int) -> bytes:
    return bytes(b ^ (key & 0xFF) for b in data)


def _shift(data: bytes, key: int) -> bytes:
    return bytes((b + key) & 0xFF for b in data)


def _unshift(data: bytes, key: int) -> bytes:
    return bytes((b - key) & 0xFF for b in data)


# name -> (encrypt, decrypt)
CIPHER_STUBS: dict[str, tuple[Callable[[bytes, int], bytes], Callable[[bytes, int], bytes]]] = {
    "xor": (_xor, _xor),
    "shift": (_shift, _unshift),
}


def cipher_stub(name: str) -> tuple[Callable[[bytes, int], bytes], Callable[[bytes, int], bytes]]:
    try:
        return CIPHER_STUBS[name]
    except KeyError:
        raise HarnessError(f"unknown cipher stub {name!r}; expected one of {sorted(CIPHER_STUBS)}")


_RESULT_RE = re.compile(r"^RESULT\s+(\S+)\s+(?:0[xX])?([0-9a-fA-F]+)\s+(-|[0-9a-fA-F]*)\s*$")


def parse_observations(text: str) -> list[Observation]:
    """`RESULT <case-id> <hex code> <hex output|->` lines; anything else is client chatter."""
    observations = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.startswith("RESULT"):
            continue
        match = _RESULT_RE.match(line.strip())
        if not match:
            logger.warning(f"Skipping malformed observation on line {number}: {line!r}")
            continue
        output = "" if match.group(3) == "-" else match.group(3).lower()
        observations.append(Observation(case_id=match.group(1), code=int(match.group(2), 16), output_hex=output))
    return observations


def _render(fmt: bytes, values: list[bytes]) -> bytes:
    """`%s`-only printf: each conversion takes the next value, `%%` stays a percent sign."""
    remaining = iter(values)
    return re.sub(rb"%%|%s", lambda m: b"%" if m.group(0) == b"%%" else next(remaining), fmt)


def _check_ciphertext(expected: CiphertextOf, observed: Observation, cipher: str, key: int) -> Optional[str]:
    if observed.code != TEE_SUCCESS_CODE:
        return f"returned 0x{observed.code:08x} instead of success"
    if not observed.output_hex:
        return "no output"
    output = bytes.fromhex(observed.output_hex)
    encrypt, decrypt = cipher_stub(cipher)
    if expected.format_hex is not None:
        fmt = bytes.fromhex(expected.format_hex)
        values = [bytes.fromhex(v) for v in expected.arguments_hex]
        if output.startswith(_render(fmt, values)):
            return "output equals the plaintext"
        want = _render(fmt, [encrypt(v, key) for v in values])
        if output[:len(want)] != want:
            return f"output is not {expected.source} encrypted under the {cipher} stub"
        return None
    if expected.plaintext_hex is None:
        return f"plaintext of {expected.source} is unknown; set plaintext_hex in the manifest"
    plain = bytes.fromhex(expected.plaintext_hex)
    head = output[:len(plain)]
    if head == plain:
        return "output equals the plaintext"
    if decrypt(head, key) != plain:
        return f"output does not decrypt to {expected.source} under the {cipher} stub"
    return None


def evaluate_outcomes(
    cases: list[TestCase],
    observed: list[Observation],
    cipher: str = DEFAULT_CIPHER_STUB,
    cipher_key: int = DEFAULT_CIPHER_KEY,
) -> FunctionalVerdict:
    by_id = {o.case_id: o for o in observed}
    for case in cases:
        if case.id not in by_id:
            raise MissingObservation(case.id)

    verdict = FunctionalVerdict(status="pass")
    for case in cases:
        observation = by_id[case.id]
        if isinstance(case.expected, CiphertextOf):
            reason = _check_ciphertext(case.expected, observation, cipher, cipher_key)
        elif observation.code != EXPECTED_STATUS_CODES[case.expected]:
            reason = (
                f"expected {case.expected} (0x{EXPECTED_STATUS_CODES[case.expected]:08x}), "
                f"got 0x{observation.code:08x}"
            )
        else:
            reason = None
        if reason is not None:
            verdict.failed.append(case.id)
            verdict.reasons[case.id] = reason
    if verdict.failed:
        verdict.status = "fail"
    logger.info(f"Functional validation: {len(cases) - len(verdict.failed)}/{len(cases)} case(s) passed")
    return verdict
