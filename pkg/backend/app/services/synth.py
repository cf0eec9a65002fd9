"""Placeholder synthesis.

Heuristic inference runs first; whatever it leaves open goes to a model client
through the code / textual / history prompt. Replies must echo the template
with placeholders filled in, otherwise they are rejected.
"""

import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol

from app.models.schemas import (
    ConcretePatch,
    FunctionClassification,
    HistoryEntry,
    Issue,
    PatchLine,
    PatchTemplate,
    Prompt,
    Provenance,
    ResolverOutcome,
    ResolverSource,
    SourceModel,
)
from app.services.cmodel import (
    abstract_statement,
    identifiers,
    int_value,
    names_in_scope,
    parse_call,
    root_name,
    strip_casts,
)
from app.utils.constants import ISSUE_DISPLAY_NAMES, PLACEHOLDER_PATTERN


logger = logging.getLogger(__name__)

_PLACEHOLDER_RE = re.compile(PLACEHOLDER_PATTERN)


# ==============================================================================
# ERRORS
# ==============================================================================

class SynthesisError(ValueError):
    """Placeholder resolution failed for one repair attempt."""


class TransportError(SynthesisError):
    """The model client could not produce a reply."""


class UnparseableReply(SynthesisError):
    def __init__(self, excerpt: str):
        self.excerpt = excerpt
        super().__init__(f"reply does not follow the template: {excerpt!r}")


class CollisionAfterRetry(SynthesisError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"reply still reuses an existing name after retry: {name}")


class IncompleteBindings(SynthesisError):
    def __init__(self, missing: Iterable[str]):
        self.missing = sorted(missing)
        super().__init__(f"unresolved placeholders: {', '.join('$' + n for n in self.missing)}")


# ==============================================================================
# SESSION STATE
# ==============================================================================

class ModelClient(Protocol):
    source: ResolverSource

    def complete(self, prompt: Prompt) -> str:
        ...


@dataclass
class History:
    """Prompt history and names handed out within one repair session."""
    entries: list[HistoryEntry] = field(default_factory=list)
    assigned: set[str] = field(default_factory=set)


def fresh_name(base: str, taken: set[str]) -> str:
    """`base`, or `base_k` with the smallest k >= 1 not in `taken`."""
    if base not in taken:
        return base
    k = 1
    while f"{base}_{k}" in taken:
        k += 1
    return f"{base}_{k}"


def taken_names(m: SourceModel, line: int, history: History) -> set[str]:
    return names_in_scope(m, line) | identifiers(m.text) | history.assigned


# ==============================================================================
# HEURISTIC INFERENCE
# ==============================================================================

def _byte_length(name: str, m: SourceModel, line: int, fc: FunctionClassification) -> Optional[int]:
    """Length hint of a buffer: array declaration, or pointer from a literal-size malloc."""
    fn = m.function_at(line)
    decl = m.declaration_of(name, line, fn.name if fn else None)
    if decl is None:
        return None
    if decl.kind == "array" and decl.length is not None:
        return decl.length * (decl.element_size or 1)
    if decl.kind == "pointer" and decl.init:
        call = parse_call(strip_casts(decl.init))
        if call and call[0] in fc.malloc_fns and call[1]:
            return int_value(call[1][0], m.macros)
    return None


def _input_alias(name: str, m: SourceModel, line: int, fc: FunctionClassification) -> Optional[str]:
    fn = m.function_at(line)
    decl = m.declaration_of(name, line, fn.name if fn else None)
    if decl is None or decl.kind != "pointer" or not decl.init:
        return None
    init = strip_casts(decl.init)
    if re.fullmatch(fc.input_param_pattern, init) and init.replace(" ", "").endswith("buffer"):
        return init
    return None


def _copies_in_function(m: SourceModel, line: int, fc: FunctionClassification):
    fn = m.function_at(line)
    for stmt in m.statements_in(fn.name if fn else None):
        abstract = abstract_statement(stmt, fc, m)
        if abstract is not None and getattr(abstract.node, "kind", None) == "COPY":
            yield stmt, abstract.node


def _infer(name: str, t: PatchTemplate, m: SourceModel, fc: FunctionClassification) -> Optional[str]:
    b = t.bindings
    line = t.span.start_line

    if name == "value" and isinstance(b.get("dst"), str):
        length = _byte_length(root_name(b["dst"]) or "", m, line, fc)
        return str(length) if length is not None else None

    if name == "value" and isinstance(b.get("base"), str):
        alias = _input_alias(b["base"], m, line, fc)
        if alias is not None:
            return f"{re.sub(r'buffer$', 'size', alias)} - 1"
        length = _byte_length(b["base"], m, line, fc)
        fn = m.function_at(line)
        decl = m.declaration_of(b["base"], line, fn.name if fn else None)
        if decl is not None and decl.kind == "array" and decl.length is not None:
            return str(decl.length - 1)
        return str(length - 1) if length is not None else None

    if name == "size" and isinstance(b.get("plain"), str):
        length = _byte_length(root_name(b["plain"]) or "", m, line, fc)
        return str(length) if length is not None else None

    if name == "size" and isinstance(b.get("buf"), str) and isinstance(b.get("sm"), str):
        buf = b["buf"]
        for stmt, node in _copies_in_function(m, line, fc):
            dst, src, length = (a.text for a in node.args)
            if buf not in (root_name(dst), root_name(src)):
                continue
            if int_value(length, m.macros) is not None:
                return length
            other = root_name(src) if root_name(dst) == buf else root_name(dst)
            hint = _byte_length(other or "", m, stmt.span.start_line, fc)
            if hint is not None:
                return str(hint)
        return None

    if name in ("buf", "size") and isinstance(b.get("sm"), str) and "value" in b:
        target = re.sub(r"\s+", "", b["sm"])
        for stmt, node in _copies_in_function(m, line, fc):
            dst, src, length = (a.text for a in node.args)
            if stmt.span.start_line < line and re.sub(r"\s+", "", strip_casts(src)) == target:
                return dst if name == "buf" else length
        return None
    return None


def resolve_heuristic(
    t: PatchTemplate,
    m: SourceModel,
    history: History,
    fc: Optional[FunctionClassification] = None,
) -> dict[str, str]:
    """Deterministic bindings for what the code already tells us; the rest stays open."""
    fc = fc or FunctionClassification()
    taken = taken_names(m, t.span.start_line, history)
    bindings: dict[str, str] = {}
    for name in t.placeholders:
        if name in t.declared:
            value = fresh_name(name, taken)
            taken.add(value)
            bindings[name] = value
            continue
        value = _infer(name, t, m, fc)
        if value is not None:
            bindings[name] = value
    logger.debug(f"Heuristic bound {sorted(bindings)} of {t.placeholders} for rule {t.rule}")
    return bindings


# ==============================================================================
# PROMPTS AND REPLIES
# ==============================================================================

def _substitute(text: str, bindings: dict[str, str]) -> str:
    return _PLACEHOLDER_RE.sub(lambda hit: bindings.get(hit.group(1), hit.group(0)), text)


def partially_resolved(t: PatchTemplate, bindings: dict[str, str]) -> PatchTemplate:
    lines = [PatchLine(op=l.op, text=_substitute(l.text, bindings)) for l in t.lines]
    return t.model_copy(update={"lines": lines})


def issue_site(issue: Issue, rule: str) -> str:
    return f"{issue.file or '<memory>'}:{issue.line}:{rule}"


def build_prompt(
    m: SourceModel,
    issue: Issue,
    t: PatchTemplate,
    history: History,
    feedback: Optional[str] = None,
) -> Prompt:
    return Prompt(
        code=m.text,
        line=issue.line,
        issue_code=issue.statement,
        issue_class=ISSUE_DISPLAY_NAMES[issue.kind],
        template=t.render(),
        history=list(history.entries),
        feedback=feedback,
        site=issue_site(issue, t.rule),
    )


def _reply_lines(reply: str) -> list[str]:
    lines = []
    for raw in reply.splitlines():
        line = raw.rstrip()
        if line.strip().startswith("```"):
            continue
        line = re.sub(r"^[+\-](?=\s|$)", "", line).strip()
        if line:
            lines.append(line)
    return lines


def _line_regex(text: str) -> tuple[re.Pattern, list[str]]:
    names: list[str] = []
    parts: list[str] = []
    position = 0
    for hit in _PLACEHOLDER_RE.finditer(text):
        parts.append(_literal_regex(text[position:hit.start()]))
        parts.append(r"(.+?)")
        names.append(hit.group(1))
        position = hit.end()
    parts.append(_literal_regex(text[position:]))
    return re.compile(r"\s*" + "".join(parts) + r"\s*"), names


def _literal_regex(literal: str) -> str:
    return r"\s*".join(re.escape(piece) for piece in literal.split()) if literal.strip() else r"\s*"


def _template_lines(template: str) -> list[tuple[str, str]]:
    parsed = []
    for line in template.splitlines():
        if not line.strip():
            continue
        prefix, text = line[:1], line[2:] if len(line) > 1 else ""
        op = {"+": "insert", "-": "delete"}.get(prefix, "keep")
        parsed.append((op, text.strip()))
    return parsed


def parse_reply(template: str, reply: str) -> dict[str, str]:
    """Bindings recovered by aligning the reply with the rendered template line by line."""
    lines = _reply_lines(reply)
    template_lines = _template_lines(template)
    candidates = [template_lines, [l for l in template_lines if l[0] != "delete"]]
    for candidate in candidates:
        if len(candidate) != len(lines):
            continue
        values: dict[str, str] = {}
        aligned = True
        for (_, expected), actual in zip(candidate, lines):
            pattern, names = _line_regex(expected)
            hit = pattern.fullmatch(actual)
            if hit is None:
                aligned = False
                break
            for name, value in zip(names, hit.groups()):
                value = value.strip()
                if values.get(name, value) != value:
                    raise UnparseableReply(actual[:80])
                values[name] = value
        if aligned:
            return values
    raise UnparseableReply(reply.strip()[:80])


def _collisions(bindings: dict[str, str], declared: Iterable[str], taken: set[str]) -> list[str]:
    seen: set[str] = set()
    clashes = []
    for name in declared:
        value = bindings.get(name)
        if value is None:
            continue
        if value in taken or value in seen:
            clashes.append(value)
        seen.add(value)
    return clashes


def resolve_external(
    p: Prompt,
    client: ModelClient,
    taken: Optional[set[str]] = None,
    declared: Iterable[str] = (),
) -> ResolverOutcome:
    """Ask the model to fill the template; retry once with a note if it reuses names."""
    taken = taken or set()
    declared = list(declared)
    reply = client.complete(p)
    bindings = parse_reply(p.template, reply)
    clashes = _collisions(bindings, declared, taken)
    if clashes:
        logger.warning(f"{p.site}: reply reuses {clashes}; retrying with a constraint note")
        note = (
            "Do not use these variable names, they are already defined: "
            f"{', '.join(sorted(set(clashes)))}."
        )
        reply = client.complete(p.model_copy(update={"constraint_note": note}))
        bindings = parse_reply(p.template, reply)
        clashes = _collisions(bindings, declared, taken)
        if clashes:
            raise CollisionAfterRetry(clashes[0])
    unresolved = [n for n in _PLACEHOLDER_RE.findall(p.template) if n not in bindings or "$" in bindings[n]]
    if unresolved:
        raise IncompleteBindings(set(unresolved))
    return ResolverOutcome(bindings=bindings, source=client.source, raw_reply=reply)


def resolve(
    t: PatchTemplate,
    m: SourceModel,
    issue: Issue,
    history: History,
    client: Optional[ModelClient] = None,
    fc: Optional[FunctionClassification] = None,
    model_only: bool = False,
    feedback: Optional[str] = None,
) -> ResolverOutcome:
    """Heuristic first, the model client for leftovers. Appends the Q/A pair to history."""
    heuristic = {} if model_only else resolve_heuristic(t, m, history, fc)
    leftovers = [n for n in t.placeholders if n not in heuristic]
    if not leftovers:
        return ResolverOutcome(bindings=heuristic, source="heuristic")
    if client is None:
        raise IncompleteBindings(leftovers)

    partial = partially_resolved(t, heuristic)
    prompt = build_prompt(m, issue, partial, history, feedback=feedback)
    taken = taken_names(m, t.span.start_line, history) | set(heuristic.values())
    outcome = resolve_external(
        prompt, client, taken=taken, declared=[d for d in t.declared if d in leftovers]
    )
    history.entries.append(HistoryEntry(question=prompt.textual_section(), answer=outcome.raw_reply or ""))
    return ResolverOutcome(
        bindings={**heuristic, **outcome.bindings}, source=outcome.source, raw_reply=outcome.raw_reply
    )


def apply_bindings(
    t: PatchTemplate,
    b: dict[str, str],
    issue_id: str = "",
    resolver: ResolverSource = "heuristic",
) -> ConcretePatch:
    """Replace every `$name`; all template placeholders must be bound."""
    missing = [name for name in t.placeholders if name not in b]
    if missing:
        raise IncompleteBindings(missing)
    lines = [PatchLine(op=l.op, text=_substitute(l.text, b) if l.op == "insert" else l.text) for l in t.lines]
    return ConcretePatch(
        span=t.span,
        lines=lines,
        provenance=Provenance(rule=t.rule, issue_id=issue_id, resolver=resolver),
    )
