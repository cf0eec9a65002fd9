"""Pydantic schemas for domain types and report files."""

import re
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator

from app.utils.constants import (
    DEFAULT_COMPARE_FNS,
    DEFAULT_COPY_FN,
    DEFAULT_COPY_FNS,
    DEFAULT_ECODE,
    DEFAULT_ENC_FN,
    DEFAULT_ENC_FNS,
    DEFAULT_ENTRY_POINT,
    DEFAULT_EQUAL_FN,
    DEFAULT_HASH_FN,
    DEFAULT_HASH_FNS,
    DEFAULT_INPUT_PARAM_PATTERN,
    DEFAULT_MALLOC_FNS,
    DEFAULT_OUTPUT_PARAM_PATTERN,
    DEFAULT_READ_FN,
    DEFAULT_READ_FNS,
    DEFAULT_SHARED_MEM_PATTERN,
    DEFAULT_SNPRINT_FNS,
    DEFAULT_WRITE_FN,
    DEFAULT_WRITE_FNS,
    HASH_BUFFER_LEN,
    PLACEHOLDER_PATTERN,
)


IssueKind = Literal["UnencryptedOutput", "InputValidationWeakness", "SharedMemoryUse"]
ParamType = Literal["value-in", "value-out", "memref-in", "memref-out", "none"]
ResolverMode = Literal["heuristic", "external", "replay", "record"]
ResolverSource = Literal["heuristic", "external", "replay"]
ExpectedStatus = Literal["Success", "ErrorBadParameters"]

_PLACEHOLDER_RE = re.compile(PLACEHOLDER_PATTERN)


# ==============================================================================
# SHARED
# ==============================================================================

class Span(BaseModel):
    """Statement location: 1-based lines, 0-based columns, end column exclusive."""
    model_config = ConfigDict(frozen=True)

    start_line: int = Field(..., ge=1)
    start_col: int = Field(..., ge=0)
    end_line: int = Field(..., ge=1)
    end_col: int = Field(..., ge=0)

    def overlaps(self, other: "Span") -> bool:
        return self.start_line <= other.end_line and other.start_line <= self.end_line

    def contains_line(self, line: int) -> bool:
        return self.start_line <= line <= self.end_line


# ==============================================================================
# DSL
# Repair rules: trigger program => transformer program
# ==============================================================================

TermKind = Literal["identifier", "literal", "placeholder", "address_of", "equal"]
CallKind = Literal[
    "COPY", "SNPRINT", "MALLOC", "ENC", "MULMALLOC", "MULENC",
    "ARRAY", "SHALLOW", "READ", "WRITE", "HASH", "MUTATE",
]
RelOp = Literal["==", "!=", "<", "<=", ">", ">="]


class DslTerm(BaseModel):
    """A DSL operand. Placeholders store their name without the `$`."""
    model_config = ConfigDict(frozen=True)

    kind: TermKind
    text: str = Field(..., min_length=1)
    operands: tuple["DslTerm", ...] = ()

    @model_validator(mode="after")
    def _placeholder_name(self) -> "DslTerm":
        if self.kind == "placeholder" and any(c.isspace() for c in self.text):
            raise ValueError(f"placeholder name contains whitespace: {self.text!r}")
        return self

    @property
    def is_placeholder(self) -> bool:
        return self.kind == "placeholder" and self.text != "_"

    @property
    def is_discard(self) -> bool:
        return self.kind == "placeholder" and self.text == "_"


DslTerm.model_rebuild()


class FuncCall(BaseModel):
    model_config = ConfigDict(frozen=True)

    node: Literal["call"] = "call"
    kind: CallKind
    args: tuple[DslTerm, ...] = ()
    result: Optional[DslTerm] = None


class Guard(BaseModel):
    model_config = ConfigDict(frozen=True)

    node: Literal["guard"] = "guard"
    left: DslTerm
    op: RelOp
    right: DslTerm
    action: Literal["return ECODE"] = "return ECODE"


DslNode = Annotated[Union[FuncCall, Guard], Field(discriminator="node")]


class DslProgram(BaseModel):
    model_config = ConfigDict(frozen=True)

    nodes: tuple[DslNode, ...] = Field(..., min_length=1)


class DslRule(BaseModel):
    """A parsed repair rule with its placeholder classification."""
    model_config = ConfigDict(frozen=True)

    name: str
    trigger: DslProgram
    transformer: DslProgram
    bound: tuple[str, ...] = Field(default=(), description="Placeholders bound by trigger matching")
    fresh: tuple[str, ...] = Field(default=(), description="Transformer-only placeholders left to synthesis")


class ValidationFinding(BaseModel):
    severity: Literal["error", "warning", "info"]
    code: str
    subject: str
    message: str


class RuleValidationReport(BaseModel):
    rule: str
    fresh: list[str] = Field(default_factory=list)
    findings: list[ValidationFinding] = Field(default_factory=list)

    @property
    def clean(self) -> bool:
        return all(f.severity == "info" for f in self.findings)


# ==============================================================================
# C SOURCE MODEL
# ==============================================================================

class Statement(BaseModel):
    model_config = ConfigDict(frozen=True)

    span: Span
    text: str
    function: Optional[str] = None
    depth: int = Field(0, ge=0, description="Brace depth at the statement")
    kind: Literal["code", "block", "preproc"] = "code"


class Declaration(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    kind: Literal["array", "pointer", "scalar"]
    type_name: str
    element_size: Optional[int] = None
    length: Optional[int] = Field(None, description="Array length hint (literal or sizeof-derived only)")
    init: Optional[str] = None
    span: Span
    function: Optional[str] = None


class FunctionDef(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    params: list[str] = Field(default_factory=list)
    param_decls: list[str] = Field(default_factory=list)
    span: Span


class SourceModel(BaseModel):
    """Statement-level model of one C translation unit. Immutable after load."""
    model_config = ConfigDict(frozen=True)

    path: Optional[str] = None
    lines: list[str] = Field(default_factory=list)
    statements: list[Statement] = Field(default_factory=list)
    declarations: list[Declaration] = Field(default_factory=list)
    functions: list[FunctionDef] = Field(default_factory=list)
    macros: dict[str, str] = Field(default_factory=dict)

    @property
    def text(self) -> str:
        return "\n".join(self.lines)

    def text_at(self, span: Span) -> str:
        first = self.lines[span.start_line - 1]
        if span.start_line == span.end_line:
            return first[span.start_col:span.end_col]
        parts = [first[span.start_col:]]
        parts.extend(self.lines[span.start_line:span.end_line - 1])
        parts.append(self.lines[span.end_line - 1][:span.end_col])
        return "\n".join(parts)

    def function_at(self, line: int) -> Optional[FunctionDef]:
        for fn in self.functions:
            if fn.span.contains_line(line):
                return fn
        return None

    def function_named(self, name: str) -> Optional[FunctionDef]:
        return next((fn for fn in self.functions if fn.name == name), None)

    def statements_in(self, function: Optional[str]) -> list[Statement]:
        return [s for s in self.statements if s.function == function]

    def statement_at(self, span: Span) -> Optional[Statement]:
        for stmt in self.statements:
            if stmt.span == span:
                return stmt
        return next((s for s in self.statements if s.span.start_line == span.start_line), None)

    def declaration_of(self, name: str, line: int, function: Optional[str]) -> Optional[Declaration]:
        """Nearest declaration of `name` visible at `line`: function scope first, then file scope."""
        local = [
            d for d in self.declarations
            if d.name == name and d.function == function and d.span.start_line <= line
        ]
        if function is not None and local:
            return local[-1]
        file_scope = [d for d in self.declarations if d.name == name and d.function is None]
        return file_scope[-1] if file_scope else None


class LoweringTable(BaseModel):
    """DSL kind -> C spelling used when transformers are lowered."""
    model_config = ConfigDict(extra="forbid")

    copy_fn: str = DEFAULT_COPY_FN
    enc_fn: str = DEFAULT_ENC_FN
    hash_fn: str = DEFAULT_HASH_FN
    read_fn: str = DEFAULT_READ_FN
    write_fn: str = DEFAULT_WRITE_FN
    equal_fn: str = DEFAULT_EQUAL_FN
    ecode: str = DEFAULT_ECODE
    hash_len: int = Field(HASH_BUFFER_LEN, gt=0)


class FunctionClassification(BaseModel):
    """Project profile: which C functions map to which DSL kinds, plus parameter patterns."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    copy_fns: list[str] = Field(default_factory=lambda: list(DEFAULT_COPY_FNS))
    snprint_fns: list[str] = Field(default_factory=lambda: list(DEFAULT_SNPRINT_FNS))
    enc_fns: list[str] = Field(default_factory=lambda: list(DEFAULT_ENC_FNS))
    hash_fns: list[str] = Field(default_factory=lambda: list(DEFAULT_HASH_FNS))
    read_fns: list[str] = Field(default_factory=lambda: list(DEFAULT_READ_FNS))
    write_fns: list[str] = Field(default_factory=lambda: list(DEFAULT_WRITE_FNS))
    malloc_fns: list[str] = Field(default_factory=lambda: list(DEFAULT_MALLOC_FNS))
    compare_fns: list[str] = Field(default_factory=lambda: list(DEFAULT_COMPARE_FNS))

    output_param_pattern: str = DEFAULT_OUTPUT_PARAM_PATTERN
    input_param_pattern: str = DEFAULT_INPUT_PARAM_PATTERN
    shared_mem_pattern: str = DEFAULT_SHARED_MEM_PATTERN

    sensitive_sources: Optional[list[str]] = Field(
        None, description="When set, only these names count as secret sources"
    )
    lowering: LoweringTable = Field(default_factory=LoweringTable)
    entry_point: str = DEFAULT_ENTRY_POINT
    ta_uuid: Optional[str] = None

    @field_validator("output_param_pattern", "input_param_pattern", "shared_mem_pattern")
    @classmethod
    def _compiles(cls, value: str) -> str:
        re.compile(value)
        return value

    @model_validator(mode="after")
    def _disjoint(self) -> "FunctionClassification":
        seen: dict[str, str] = {}
        for field_name, names in self.function_sets().items():
            for name in names:
                if name in seen:
                    raise ValueError(
                        f"function {name!r} listed in both {seen[name]} and {field_name}"
                    )
                seen[name] = field_name
        return self

    def function_sets(self) -> dict[str, list[str]]:
        return {
            "copy_fns": self.copy_fns,
            "snprint_fns": self.snprint_fns,
            "enc_fns": self.enc_fns,
            "hash_fns": self.hash_fns,
            "read_fns": self.read_fns,
            "write_fns": self.write_fns,
            "malloc_fns": self.malloc_fns,
            "compare_fns": self.compare_fns,
        }

    def call_kind(self, callee: str) -> Optional[str]:
        """DSL kind for a classified callee, None for compare/unknown functions."""
        for field_name, kind in (
            ("copy_fns", "COPY"),
            ("snprint_fns", "SNPRINT"),
            ("enc_fns", "ENC"),
            ("hash_fns", "HASH"),
            ("read_fns", "READ"),
            ("write_fns", "WRITE"),
            ("malloc_fns", "MALLOC"),
        ):
            if callee in getattr(self, field_name):
                return kind
        return None


class AbstractStmt(BaseModel):
    """A source statement lifted to a DSL node."""
    model_config = ConfigDict(frozen=True)

    node: DslNode
    statement: Statement
    callee: Optional[str] = None
    call_args: tuple[str, ...] = ()


class CommandSpec(BaseModel):
    command_id: Union[int, str]
    symbol: Optional[str] = Field(None, description="Case label spelling when symbolic")
    param_types: tuple[ParamType, ParamType, ParamType, ParamType] = ("none", "none", "none", "none")
    functions: list[str] = Field(default_factory=list, description="Functions reachable from the case")


class ClientSpec(BaseModel):
    uuid: str
    commands: list[CommandSpec] = Field(..., min_length=1)

    def command(self, command_id: Union[int, str]) -> Optional[CommandSpec]:
        return next(
            (c for c in self.commands if c.command_id == command_id or c.symbol == command_id),
            None,
        )


# ==============================================================================
# DETECTOR
# ==============================================================================

Evidence = dict[str, Union[str, list[str]]]


class Issue(BaseModel):
    """A located bad-partitioning finding."""
    kind: IssueKind
    file: Optional[str] = None
    span: Span
    statement: str
    evidence: Evidence = Field(default_factory=dict)
    rule_hint: str
    function: Optional[str] = None

    @computed_field
    @property
    def line(self) -> int:
        return self.span.start_line

    @computed_field
    @property
    def col(self) -> int:
        return self.span.start_col

    @computed_field
    @property
    def issue_id(self) -> str:
        return f"{self.file or '<memory>'}:{self.span.start_line}:{self.rule_hint}"


class FileIssues(BaseModel):
    file: str
    issues: list[Issue] = Field(default_factory=list)


class IssueReport(BaseModel):
    files: list[FileIssues] = Field(default_factory=list)
    total: int = 0


# ==============================================================================
# TEMPLATES
# ==============================================================================

BindingValue = Union[str, list[str]]


class MatchBindings(BaseModel):
    values: dict[str, BindingValue] = Field(default_factory=dict)
    span: Span


class PatchLine(BaseModel):
    op: Literal["keep", "delete", "insert"]
    text: str


_LINE_PREFIX = {"keep": " ", "delete": "-", "insert": "+"}


class PatchTemplate(BaseModel):
    """Instantiated transformer with `$`-placeholders still open."""
    rule: str
    issue_kind: IssueKind
    span: Span
    lines: list[PatchLine] = Field(default_factory=list)
    declared: list[str] = Field(
        default_factory=list, description="Placeholders the template declares as new variables"
    )
    bindings: dict[str, BindingValue] = Field(default_factory=dict)
    notes: list[str] = Field(default_factory=list)

    @computed_field
    @property
    def placeholders(self) -> list[str]:
        names = {
            m.group(1)
            for line in self.lines if line.op == "insert"
            for m in _PLACEHOLDER_RE.finditer(line.text)
        }
        return sorted(names)

    def render(self) -> str:
        return "\n".join(f"{_LINE_PREFIX[line.op]} {line.text}" for line in self.lines)


# ==============================================================================
# SYNTH
# ==============================================================================

PROMPT_CODE_HEADER = "We have a C code file with bad partitioning issues:"
PROMPT_INSTRUCTION = (
    "You need to deduce and replace the fields starting with $ in the template "
    "based on the above code context and previous repairs, and avoid using variable "
    "names that have already been defined in the code or in history repair.\n"
    "Only output the repaired template code."
)


class HistoryEntry(BaseModel):
    question: str
    answer: str


class Prompt(BaseModel):
    code: str
    line: int
    issue_code: str
    issue_class: str
    template: str
    history: list[HistoryEntry] = Field(default_factory=list)
    feedback: Optional[str] = None
    constraint_note: Optional[str] = None
    site: str = Field("", description="file:line:rule key for replay lookup; not rendered")

    def textual_section(self) -> str:
        parts = [
            "New repair:",
            f"Following is a code snippet from the above code in line {self.line}:",
            self.issue_code,
            f"It has a bad partitioning issue: {self.issue_class}.",
            "Repair the code with the following template code:",
            self.template,
        ]
        if self.feedback:
            parts.append(self.feedback)
        if self.constraint_note:
            parts.append(self.constraint_note)
        parts.append(PROMPT_INSTRUCTION)
        return "\n".join(parts)

    def history_section(self) -> str:
        return "\n".join(
            f"Q{i}: {entry.question}\nA{i}: {entry.answer}"
            for i, entry in enumerate(self.history, start=1)
        )

    def render(self) -> str:
        sections = [f"{PROMPT_CODE_HEADER}\n{self.code}", self.textual_section()]
        if self.history:
            sections.append(self.history_section())
        return "\n\n".join(sections)


class ResolverOutcome(BaseModel):
    bindings: dict[str, str] = Field(default_factory=dict)
    source: ResolverSource
    raw_reply: Optional[str] = None


class FixtureEntry(BaseModel):
    request_sha256: Optional[str] = None
    site: Optional[str] = None
    attempt: int = Field(1, ge=1)
    reply: str


class FixtureFile(BaseModel):
    entries: list[FixtureEntry] = Field(default_factory=list)


# ==============================================================================
# PATCHER
# ==============================================================================

class Provenance(BaseModel):
    rule: str
    issue_id: str
    resolver: ResolverSource


class ConcretePatch(BaseModel):
    span: Span
    lines: list[PatchLine] = Field(default_factory=list)
    provenance: Provenance

    @model_validator(mode="after")
    def _no_placeholders(self) -> "ConcretePatch":
        for line in self.lines:
            if _PLACEHOLDER_RE.search(line.text):
                raise ValueError(f"unresolved placeholder in patch line: {line.text!r}")
        return self


# ==============================================================================
# HARNESS
# ==============================================================================

class ParamSetup(BaseModel):
    slot: int = Field(..., ge=0, le=3)
    kind: ParamType
    length: Optional[int] = Field(None, ge=0, description="Byte length for memref slots")
    value: Optional[int] = Field(None, description="Value for value slots (field a)")
    fill: int = Field(0x41, ge=0, le=0xFF, description="Payload byte pattern")
    symbolic: Optional[str] = Field(None, description="Bound expression supplied at run time")


class Tamper(BaseModel):
    slot: int = Field(..., ge=0, le=3)
    offset: int = Field(0, ge=0)
    xor_mask: int = Field(0xFF, ge=1, le=0xFF)


class CiphertextOf(BaseModel):
    """Output must be the secret under the cipher stub.

    `plaintext_hex` holds a single secret. A formatted secret sets
    `format_hex` (only `%s` conversions) plus one hex value per argument,
    and each argument is encrypted in place inside the format.
    """
    source: str
    plaintext_hex: Optional[str] = None
    format_hex: Optional[str] = None
    arguments_hex: list[str] = Field(default_factory=list)


class TestCase(BaseModel):
    __test__ = False  # keep pytest from collecting this model

    id: str
    command_id: Union[int, str]
    params: list[ParamSetup] = Field(default_factory=list)
    tamper: Optional[Tamper] = None
    expected: Union[ExpectedStatus, CiphertextOf]
    output_slot: Optional[int] = Field(None, ge=0, le=3)
    note: Optional[str] = None


class TestManifest(BaseModel):
    __test__ = False

    uuid: str
    cipher: str
    cipher_key: int
    cases: list[TestCase] = Field(default_factory=list)


class Observation(BaseModel):
    case_id: str
    code: int
    output_hex: str = ""


class FunctionalVerdict(BaseModel):
    status: Literal["not-run", "pass", "fail"] = "not-run"
    failed: list[str] = Field(default_factory=list)
    reasons: dict[str, str] = Field(default_factory=dict)


class RepairResult(BaseModel):
    issue_id: str
    issue: Issue
    rule: Optional[str] = None
    iterations: int = Field(0, ge=0)
    max_iters: int = Field(..., ge=1)
    template: Optional[str] = None
    bindings: dict[str, str] = Field(default_factory=dict)
    resolver_source: Optional[ResolverSource] = None
    final_patch: Optional[ConcretePatch] = None
    diff: Optional[str] = None
    static_verdict: Literal["clean", "residual"] = "residual"
    residual_issues: list[Issue] = Field(default_factory=list)
    functional_verdict: FunctionalVerdict = Field(default_factory=FunctionalVerdict)
    exhausted: bool = False
    error: Optional[str] = None
    notes: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _bounded(self) -> "RepairResult":
        if self.iterations > self.max_iters:
            raise ValueError(f"iterations {self.iterations} exceed max_iters {self.max_iters}")
        return self


class FileRepairReport(BaseModel):
    file: str
    output_file: Optional[str] = None
    patch_file: Optional[str] = None
    results: list[RepairResult] = Field(default_factory=list)


class RepairSummary(BaseModel):
    generated: int = 0
    clean: int = 0
    residual: int = 0


class RepairReport(BaseModel):
    files: list[FileRepairReport] = Field(default_factory=list)
    summary: RepairSummary = Field(default_factory=RepairSummary)


# ==============================================================================
# METRICS
# ==============================================================================

class KindCounts(BaseModel):
    ni: int = Field(..., description="Number of seeded issues")
    n: int = Field(..., description="Number of reported issues")
    tp: int = Field(..., description="True positives")


class MetricsRow(BaseModel):
    kind: str
    ni: int
    n: int
    tp: int
    precision: float
    recall: float
    f1: float


class MetricsReport(BaseModel):
    rows: list[MetricsRow] = Field(default_factory=list)
    total: MetricsRow
    footer: str = "Precision is reported as 0 when N = 0; recall as 0 when NI = 0."


class GroundTruthEntry(BaseModel):
    file: str
    line: int = Field(..., ge=1)
    kind: IssueKind


class GroundTruth(BaseModel):
    entries: list[GroundTruthEntry] = Field(default_factory=list)
