"""Patch-template instantiation.

Matches a rule's single-node trigger against an abstracted statement and
lowers the transformer back to C, keeping unresolved placeholders as `$name`.
"""

import logging
import re
from typing import Optional

from app.models.schemas import (
    AbstractStmt,
    BindingValue,
    DslNode,
    DslRule,
    DslTerm,
    FuncCall,
    FunctionClassification,
    Guard,
    Issue,
    MatchBindings,
    PatchLine,
    PatchTemplate,
    SourceModel,
)
from app.services.cmodel import abstract_statement, int_value, normalize_expr, strip_labels
from app.services.dsl import render_node
from app.utils.constants import CALL_ARITY, GUARD_BODY_INDENT, PLACEHOLDER_PATTERN, RULE_HINTS


logger = logging.getLogger(__name__)


class TemplateError(ValueError):
    """Base error for rule selection and lowering."""


class NoApplicableRule(TemplateError):
    def __init__(self, kind: str):
        self.kind = kind
        super().__init__(f"no rule applies to {kind}")


class LoweringError(TemplateError):
    def __init__(self, node: DslNode):
        self.node = node
        super().__init__(f"no C lowering for {render_node(node)}")


# Transformer contents that mark a rule as repairing an issue kind
_KIND_MARKERS: dict[str, set[str]] = {
    "UnencryptedOutput": {"ENC", "MULENC"},
    "InputValidationWeakness": {"guard"},
    "SharedMemoryUse": {"HASH"},
}

# Evidence keys -> statement shape the detector saw
_EVIDENCE_SHAPES: tuple[tuple[str, str], ...] = (
    ("format", "SNPRINT"),
    ("plain", "COPY"),
    ("dst", "COPY"),
    ("base", "ARRAY"),
    ("buf", "SHALLOW"),
    ("value", "MUTATE"),
)

_UNSIGNED_FIELD_RE = re.compile(r"\.\s*(?:value\s*\.\s*[ab]|memref\s*\.\s*size)\b")
_SIZE_RE = re.compile(r"-?(?:0[xX][0-9a-fA-F]+|\d+)[uUlL]*|sizeof\s*\(.*\)|[A-Z_][A-Z0-9_]*")


# ==============================================================================
# RULE SELECTION
# ==============================================================================

def _trigger_kind(rule: DslRule) -> Optional[str]:
    node = rule.trigger.nodes[0]
    return node.kind if isinstance(node, FuncCall) else "guard"


def _transformer_kinds(rule: DslRule) -> set[str]:
    return {n.kind if isinstance(n, FuncCall) else "guard" for n in rule.transformer.nodes}


def _issue_shape(issue: Issue) -> Optional[str]:
    for key, shape in _EVIDENCE_SHAPES:
        if key in issue.evidence:
            return shape
    return None


def select_rule(issue: Issue, rules: dict[str, DslRule]) -> DslRule:
    """The hinted rule, else the rule whose trigger shape and transformer fit the issue."""
    if issue.rule_hint in rules:
        return rules[issue.rule_hint]
    shape = _issue_shape(issue)
    preferred = RULE_HINTS.get((issue.kind, shape or ""))
    if preferred in rules:
        return rules[preferred]
    markers = _KIND_MARKERS[issue.kind]
    for name in sorted(rules):
        rule = rules[name]
        if _trigger_kind(rule) == shape and _transformer_kinds(rule) & markers:
            return rule
    raise NoApplicableRule(issue.kind)


# ==============================================================================
# MATCHING
# ==============================================================================

def render_concrete(term: DslTerm) -> str:
    if term.kind == "equal":
        return f"equal({', '.join(render_concrete(t) for t in term.operands)})"
    if term.kind == "address_of":
        return f"&{term.text}"
    return term.text


def _bind(pattern: DslTerm, concrete: Optional[DslTerm], values: dict[str, BindingValue]) -> bool:
    if pattern.is_discard:
        return True
    if concrete is None:
        return False
    if pattern.is_placeholder:
        text = render_concrete(concrete)
        if pattern.text in values and values[pattern.text] != text:
            return False
        values[pattern.text] = text
        return True
    if pattern.kind == "equal":
        return (
            concrete.kind == "equal"
            and len(pattern.operands) == len(concrete.operands)
            and all(_bind(p, c, values) for p, c in zip(pattern.operands, concrete.operands))
        )
    return normalize_expr(render_concrete(pattern)) == normalize_expr(render_concrete(concrete))


def match_trigger(rule: DslRule, stmt: AbstractStmt) -> Optional[MatchBindings]:
    """Unify a single-node trigger with the statement; None on kind or arity mismatch."""
    if len(rule.trigger.nodes) != 1:
        return None
    pattern, node = rule.trigger.nodes[0], stmt.node
    values: dict[str, BindingValue] = {}

    if isinstance(pattern, Guard):
        if not isinstance(node, Guard) or pattern.op != node.op:
            return None
        if not (_bind(pattern.left, node.left, values) and _bind(pattern.right, node.right, values)):
            return None
        return MatchBindings(values=values, span=stmt.statement.span)

    if not isinstance(node, FuncCall) or node.kind != pattern.kind:
        return None
    variadic = CALL_ARITY[pattern.kind][1] is None
    fixed = pattern.args[:-1] if variadic and pattern.args else pattern.args
    if variadic:
        if len(node.args) < len(pattern.args):
            return None
    elif len(node.args) != len(pattern.args):
        return None
    for p, c in zip(fixed, node.args):
        if not _bind(p, c, values):
            return None
    if variadic and pattern.args:
        tail_pattern = pattern.args[-1]
        tail = [render_concrete(t) for t in node.args[len(fixed):]]
        if tail_pattern.is_placeholder:
            values[tail_pattern.text] = tail
        elif not tail_pattern.is_discard and len(tail) != 1:
            return None
    if pattern.result is not None and not _bind(pattern.result, node.result, values):
        return None
    return MatchBindings(values=values, span=stmt.statement.span)


# ==============================================================================
# LOWERING
# ==============================================================================

def _replace_expr(text: str, expr: str, replacement: str) -> str:
    tokens = re.findall(r"\w+|\S", expr)
    pattern = r"\s*".join(re.escape(t) for t in tokens)
    return re.sub(pattern, lambda _: replacement, text)


def _singular(name: str) -> str:
    return name[:-1] if len(name) > 1 and name.endswith("s") else name


class _Lowerer:
    """Renders transformer nodes to C lines for one match."""

    def __init__(self, rule: DslRule, values: dict[str, BindingValue], original: Optional[AbstractStmt], fc: FunctionClassification):
        self.rule = rule
        self.values = values
        self.original = original
        self.lowering = fc.lowering
        self.expansions: dict[str, list[str]] = {}
        self.declared: list[str] = []
        self.notes: list[str] = []

    # terms

    def term(self, term: DslTerm) -> str:
        if term.kind == "placeholder":
            if term.text in self.expansions:
                return ", ".join(self.expansions[term.text])
            value = self.values.get(term.text)
            if value is None:
                return "_" if term.is_discard else f"${term.text}"
            return ", ".join(value) if isinstance(value, list) else value
        if term.kind == "equal":
            operands = ", ".join(self.term(t) for t in term.operands)
            return f"{self.lowering.equal_fn}({operands}, {self.lowering.hash_len})"
        return render_concrete(term)

    def items(self, term: DslTerm) -> list[str]:
        """Expansion list for a variadic placeholder."""
        if term.kind == "placeholder" and term.text in self.expansions:
            return self.expansions[term.text]
        value = self.values.get(term.text) if term.kind == "placeholder" else None
        if isinstance(value, list):
            return value
        return [self.term(term)]

    def _declare(self, term: Optional[DslTerm]) -> None:
        if term is not None and term.is_placeholder and term.text not in self.values:
            if term.text not in self.declared:
                self.declared.append(term.text)

    def _fresh(self, term: DslTerm) -> bool:
        return term.is_placeholder and term.text in self.rule.fresh and term.text not in self.values

    # nodes

    def lower(self, node: DslNode, corresponding: bool = False) -> list[str]:
        if isinstance(node, Guard):
            return self.guard(node)
        handler = getattr(self, f"_lower_{node.kind.lower()}", None)
        if handler is None:
            raise LoweringError(node)
        return handler(node, corresponding)

    def guard(self, node: Guard) -> list[str]:
        left, right = self.term(node.left), self.term(node.right)
        if node.op in ("<", "<=") and right.strip() == "0" and node.left.kind != "equal":
            literal = int_value(left)
            if (literal is not None and literal >= 0) or _UNSIGNED_FIELD_RE.search(left):
                self.notes.append(f"guard `{left} {node.op} 0` is always false: {left} is non-negative")
        return [
            f"if ({left} {node.op} {right}) {{",
            f"{GUARD_BODY_INDENT}return {self.lowering.ecode};",
            "}",
        ]

    def _lower_malloc(self, node: FuncCall, corresponding: bool) -> list[str]:
        size = self.term(node.args[0])
        if not (size.startswith("$") or _SIZE_RE.fullmatch(size)):
            size = "$size"
        self._declare(node.result)
        return [f"char {self.term(node.result)}[{size}] = {{0}};"]

    def _lower_mulmalloc(self, node: FuncCall, corresponding: bool) -> list[str]:
        sources = [item for arg in node.args for item in self.items(arg)]
        base = _singular(node.result.text)
        names = [f"{base}{k}" for k in range(len(sources))]
        self.expansions[node.result.text] = [f"${n}" for n in names]
        for name in names:
            if name not in self.declared:
                self.declared.append(name)
        return [f"char ${n}[strlen({s})] = {{0}};" for n, s in zip(names, sources)]

    def _lower_enc(self, node: FuncCall, corresponding: bool) -> list[str]:
        plain, cipher, length = (self.term(a) for a in node.args)
        return [f"{self.lowering.enc_fn}({plain}, {cipher}, {length});"]

    def _lower_mulenc(self, node: FuncCall, corresponding: bool) -> list[str]:
        sources = [item for arg in node.args[:-1] for item in self.items(arg)]
        ciphers = self.expansions.get(node.args[-1].text) or self.items(node.args[-1])
        return [
            f"{self.lowering.enc_fn}({s}, {c}, strlen({s}));"
            for s, c in zip(sources, ciphers)
        ]

    def _lower_copy(self, node: FuncCall, corresponding: bool) -> list[str]:
        callee = self.lowering.copy_fn
        if corresponding and self.original is not None and self.original.callee:
            callee = self.original.callee
        args = ", ".join(self.term(a) for a in node.args)
        return [f"{callee}({args});"]

    def _lower_snprint(self, node: FuncCall, corresponding: bool) -> list[str]:
        out, fmt = self.term(node.args[0]), self.term(node.args[1])
        rest = [item for arg in node.args[2:] for item in self.items(arg)]
        if corresponding and self.original is not None and self.original.callee:
            call_args = list(self.original.call_args)
            fmt_index = next(
                (i for i, a in enumerate(call_args) if normalize_expr(a) == normalize_expr(fmt)),
                1,
            )
            head = [out] + call_args[1:fmt_index + 1]
            return [f"{self.original.callee}({', '.join(head + rest)});"]
        return [f"snprintf({', '.join([out, fmt] + rest)});"]

    def _lower_read(self, node: FuncCall, corresponding: bool) -> list[str]:
        target = self.term(node.result)
        lines = []
        if self._fresh(node.result):
            self._declare(node.result)
            lines.append(f"char {target}[{self.lowering.hash_len}];")
        lines.append(f"{self.lowering.read_fn}({target});")
        return lines

    def _lower_hash(self, node: FuncCall, corresponding: bool) -> list[str]:
        base, digest, length = (self.term(a) for a in node.args)
        lines = []
        if self._fresh(node.args[1]):
            self._declare(node.args[1])
            lines.append(f"char {digest}[{self.lowering.hash_len}];")
        lines.append(f"{self.lowering.hash_fn}({digest}, {base}, {length});")
        return lines

    def _lower_write(self, node: FuncCall, corresponding: bool) -> list[str]:
        return [f"{self.lowering.write_fn}({self.term(node.args[0])});"]

    def _lower_mutate(self, node: FuncCall, corresponding: bool) -> list[str]:
        base = self.term(node.result)
        trigger = self.rule.trigger.nodes[0]
        sm_name = trigger.result.text if isinstance(trigger, FuncCall) and trigger.result is not None else None
        sm = self.values.get(sm_name) if sm_name else None
        if self.original is not None and isinstance(sm, str):
            _, text = strip_labels(self.original.statement.text)
            return [_replace_expr(" ".join(text.split()), sm, base)]
        return [f"{base} = {self.term(node.args[0])};"]

    def _lower_shallow(self, node: FuncCall, corresponding: bool) -> list[str]:
        return [f"char *{self.term(node.result)} = {self.term(node.args[0])};"]


def _infer_kind(rule: DslRule) -> str:
    for (kind, _), name in RULE_HINTS.items():
        if name == rule.name:
            return kind
    for kind, markers in _KIND_MARKERS.items():
        if _transformer_kinds(rule) & markers:
            return kind
    return "InputValidationWeakness"


def instantiate(
    rule: DslRule,
    b: MatchBindings,
    m: SourceModel,
    fc: Optional[FunctionClassification] = None,
    issue_kind: Optional[str] = None,
) -> PatchTemplate:
    """Lower the transformer at the matched span into a `-`/`+` template."""
    fc = fc or FunctionClassification()
    stmt = m.statement_at(b.span)
    original = abstract_statement(stmt, fc, m) if stmt is not None else None
    original_text = " ".join(strip_labels(stmt.text)[1].split()) if stmt is not None else ""

    trigger = rule.trigger.nodes[0]
    corresponding = next(
        (
            i for i, node in enumerate(rule.transformer.nodes)
            if type(node) is type(trigger)
            and (isinstance(node, Guard) or node.kind == trigger.kind)
        ),
        None,
    )
    lowerer = _Lowerer(rule, dict(b.values), original, fc)
    lines: list[PatchLine] = []
    if corresponding is None:
        lines.append(PatchLine(op="delete", text=original_text))
    for index, node in enumerate(rule.transformer.nodes):
        if index == corresponding and node == trigger:
            lines.append(PatchLine(op="keep", text=original_text))
            continue
        if index == corresponding:
            lines.append(PatchLine(op="delete", text=original_text))
        lines.extend(
            PatchLine(op="insert", text=text)
            for text in lowerer.lower(node, corresponding=index == corresponding)
        )

    template = PatchTemplate(
        rule=rule.name,
        issue_kind=issue_kind or _infer_kind(rule),
        span=b.span,
        lines=lines,
        declared=[d for d in lowerer.declared if any(f"${d}" in l.text for l in lines)],
        bindings=b.values,
        notes=lowerer.notes,
    )
    logger.debug(f"Instantiated rule {rule.name} at line {b.span.start_line}: {len(lines)} line(s)")
    return template


def template_for(
    issue: Issue, rules: dict[str, DslRule], m: SourceModel, fc: FunctionClassification
) -> PatchTemplate:
    """select_rule + match_trigger + instantiate for one detected issue."""
    rule = select_rule(issue, rules)
    stmt = m.statement_at(issue.span)
    abstract = abstract_statement(stmt, fc, m) if stmt is not None else None
    bindings = match_trigger(rule, abstract) if abstract is not None else None
    if bindings is None:
        raise NoApplicableRule(issue.kind)
    return instantiate(rule, bindings, m, fc, issue_kind=issue.kind)


def canonical_template(text: str) -> str:
    """Whitespace-collapsed template with placeholders renamed by first appearance."""
    names: dict[str, str] = {}

    def rename(match: re.Match) -> str:
        return names.setdefault(match.group(1), f"$p{len(names) + 1}")

    lines = []
    for line in text.splitlines():
        if not line.strip():
            continue
        collapsed = " ".join(line.split())
        collapsed = re.sub(r"\s*([(),;\[\]])\s*", r"\1", collapsed)
        lines.append(re.sub(PLACEHOLDER_PATTERN, rename, collapsed))
    return "\n".join(lines)
