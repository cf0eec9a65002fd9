"""Bad-partitioning detector.

Three within-function analyses over abstracted statements:
- unencrypted output: secrets copied or formatted into an output memref
- input validation: copies and array accesses driven by unchecked input
- shared memory: aliases of, and writes through, normal-world memory

"Dominating guard" is approximated lexically: a guard on the same expression
earlier in the same function, at the same or a shallower brace depth.
"""

import logging
import re
from dataclasses import dataclass, field
from typing import Optional

from app.models.schemas import (
    AbstractStmt,
    Evidence,
    FuncCall,
    FunctionClassification,
    Guard,
    Issue,
    SourceModel,
    Statement,
)
from app.services.cmodel import (
    abstract_statement,
    extract_guards,
    identifiers,
    int_value,
    is_literal,
    normalize_expr,
    parse_call,
    root_name,
    split_assignment,
    strip_casts,
    strip_labels,
)
from app.utils.constants import ISSUE_KINDS, RULE_HINTS


logger = logging.getLogger(__name__)


@dataclass
class _FunctionFacts:
    """Flow-insensitive facts about one function body."""
    name: Optional[str]
    statements: list[Statement]
    abstract: dict[int, AbstractStmt] = field(default_factory=dict)
    guards: list[tuple[Statement, Guard]] = field(default_factory=list)
    # pointer name -> input memref expression it aliases
    aliases: dict[str, str] = field(default_factory=dict)
    # variable name -> input-carrying initializer
    input_vars: dict[str, str] = field(default_factory=dict)
    # buffers filled from normal-world data
    normal_derived: set[str] = field(default_factory=set)
    read_results: set[str] = field(default_factory=set)

    def calls(self, *kinds: str) -> list[tuple[Statement, AbstractStmt]]:
        return [
            (stmt, self.abstract[i]) for i, stmt in enumerate(self.statements)
            if i in self.abstract
            and isinstance(self.abstract[i].node, FuncCall)
            and self.abstract[i].node.kind in kinds
        ]


def _before(a: Statement, b: Statement) -> bool:
    return (a.span.start_line, a.span.start_col) < (b.span.start_line, b.span.start_col)


def _simple_assignments(stmt: Statement, m: SourceModel) -> list[tuple[str, str]]:
    """(name, initializer) pairs written by a declaration or plain `x = e;`."""
    pairs = [
        (d.name, d.init) for d in m.declarations
        if d.span == stmt.span and d.init is not None
    ]
    if pairs:
        return pairs
    _, text = strip_labels(stmt.text)
    parts = split_assignment(text.rstrip(";").strip())
    if parts and parts[1] == "=" and re.fullmatch(r"[A-Za-z_]\w*", parts[0]):
        return [(parts[0], parts[2])]
    return []


def _gather(m: SourceModel, fc: FunctionClassification, function: Optional[str]) -> _FunctionFacts:
    statements = [s for s in m.statements_in(function) if s.kind != "preproc"]
    facts = _FunctionFacts(name=function, statements=statements)
    input_re = re.compile(fc.input_param_pattern)
    shared_re = re.compile(fc.shared_mem_pattern)

    for index, stmt in enumerate(statements):
        abstract = abstract_statement(stmt, fc, m)
        if abstract is not None:
            facts.abstract[index] = abstract
        facts.guards.extend((stmt, g) for g in extract_guards(stmt, m, fc))
        for name, init in _simple_assignments(stmt, m):
            value = strip_casts(init)
            if input_re.fullmatch(value) and value.replace(" ", "").endswith("buffer"):
                facts.aliases[name] = value
            if input_re.search(init) or identifiers(init) & set(facts.input_vars):
                facts.input_vars[name] = init

    for stmt, abstract in facts.calls("READ"):
        if abstract.node.result is not None:
            facts.read_results.add(abstract.node.result.text)
    for stmt, abstract in facts.calls("COPY"):
        dst, src = abstract.node.args[0].text, abstract.node.args[1].text
        src_root = root_name(src)
        if input_re.search(src) or shared_re.search(src) or src_root in facts.aliases:
            dst_root = root_name(dst)
            if dst_root:
                facts.normal_derived.add(dst_root)
    return facts


def _all_facts(m: SourceModel, fc: FunctionClassification) -> list[_FunctionFacts]:
    return [_gather(m, fc, fn.name) for fn in m.functions]


def _issue(kind: str, stmt: Statement, evidence: Evidence, shape: str, m: SourceModel, function: Optional[str]) -> Issue:
    return Issue(
        kind=kind,
        file=m.path,
        span=stmt.span,
        statement=stmt.text,
        evidence=evidence,
        rule_hint=RULE_HINTS[(kind, shape)],
        function=function,
    )


# ==============================================================================
# UNENCRYPTED OUTPUT
# ==============================================================================

def _is_output(expr: str, facts: _FunctionFacts, output_re: re.Pattern) -> bool:
    if output_re.search(expr):
        return True
    alias = facts.aliases.get(root_name(expr) or "")
    return alias is not None and output_re.search(alias) is not None


def _is_sensitive(root: str, stmt: Statement, facts: _FunctionFacts, m: SourceModel, fc: FunctionClassification) -> bool:
    if fc.sensitive_sources is not None:
        return root in fc.sensitive_sources
    if root in facts.normal_derived or root in facts.aliases or root in facts.input_vars:
        return False
    if root in facts.read_results:
        return True
    decl = m.declaration_of(root, stmt.span.start_line, facts.name)
    if decl is None:
        return False
    if decl.kind == "array":
        return True
    if decl.kind == "pointer" and decl.init:
        init = strip_casts(decl.init)
        if init.startswith('"'):
            return True
        call = parse_call(init)
        return bool(call and call[0] in fc.malloc_fns + fc.read_fns)
    return False


def _encrypted_before(root: str, stmt: Statement, facts: _FunctionFacts) -> bool:
    for enc_stmt, abstract in facts.calls("ENC"):
        if _before(enc_stmt, stmt) and root_name(abstract.node.args[1].text) == root:
            return True
    return False


def _leaks(expr: str, stmt: Statement, facts: _FunctionFacts, m: SourceModel, fc: FunctionClassification) -> bool:
    root = root_name(expr)
    if root is None or is_literal(expr):
        return False
    return _is_sensitive(root, stmt, facts, m, fc) and not _encrypted_before(root, stmt, facts)


def _unencrypted_in(facts: _FunctionFacts, m: SourceModel, fc: FunctionClassification) -> list[Issue]:
    output_re = re.compile(fc.output_param_pattern)
    issues: list[Issue] = []
    for stmt, abstract in facts.calls("COPY", "SNPRINT"):
        node = abstract.node
        out = node.args[0].text
        if not _is_output(out, facts, output_re):
            continue
        if node.kind == "COPY":
            plain, length = node.args[1].text, node.args[2].text
            if _leaks(plain, stmt, facts, m, fc):
                evidence = {"out": out, "plain": plain, "len": length}
                issues.append(_issue("UnencryptedOutput", stmt, evidence, "COPY", m, facts.name))
            continue
        args = [a.text for a in node.args[2:]]
        if any(_leaks(a, stmt, facts, m, fc) for a in args):
            evidence = {"out": out, "format": node.args[1].text, "args": args}
            issues.append(_issue("UnencryptedOutput", stmt, evidence, "SNPRINT", m, facts.name))
    return issues


def detect_unencrypted_output(m: SourceModel, fc: FunctionClassification) -> list[Issue]:
    """COPY/SNPRINT of unencrypted secrets into an output parameter."""
    return [i for facts in _all_facts(m, fc) for i in _unencrypted_in(facts, m, fc)]


# ==============================================================================
# INPUT VALIDATION
# ==============================================================================

def _input_derived(expr: str, facts: _FunctionFacts, input_re: re.Pattern) -> bool:
    return bool(input_re.search(expr) or identifiers(expr) & set(facts.input_vars))


def _guard_candidates(expr: str, facts: _FunctionFacts) -> set[str]:
    """Normalized expressions whose bound also bounds `expr`."""
    candidates = {normalize_expr(expr)}
    for name in identifiers(expr):
        if name in facts.input_vars and normalize_expr(name) == normalize_expr(expr):
            candidates.add(normalize_expr(facts.input_vars[name]))
    target = normalize_expr(expr)
    for name, init in facts.input_vars.items():
        if normalize_expr(init) == target:
            candidates.add(name)
    return candidates


def _side(term) -> Optional[str]:
    return None if term.kind == "equal" else normalize_expr(term.text)


def _has_upper(guard: Guard, candidates: set[str]) -> bool:
    left, right = _side(guard.left), _side(guard.right)
    return (left in candidates and guard.op in (">", ">=")) or (
        right in candidates and guard.op in ("<", "<=")
    )


def _has_lower(guard: Guard, candidates: set[str]) -> bool:
    left, right = _side(guard.left), _side(guard.right)
    return (left in candidates and guard.op in ("<", "<=")) or (
        right in candidates and guard.op in (">", ">=")
    )


def _dominating(facts: _FunctionFacts, stmt: Statement) -> list[Guard]:
    return [
        guard for guard_stmt, guard in facts.guards
        if _before(guard_stmt, stmt) and guard_stmt.depth <= stmt.depth
    ]


def _mentions(guard: Guard, expr: str) -> bool:
    target = normalize_expr(expr)
    return any(
        term.kind != "equal" and target in normalize_expr(term.text)
        for term in (guard.left, guard.right)
    )


def _validation_in(facts: _FunctionFacts, m: SourceModel, fc: FunctionClassification) -> list[Issue]:
    input_re = re.compile(fc.input_param_pattern)
    output_re = re.compile(fc.output_param_pattern)
    issues: list[Issue] = []
    for index, stmt in enumerate(facts.statements):
        abstract = facts.abstract.get(index)
        if abstract is None or not isinstance(abstract.node, FuncCall):
            continue
        node = abstract.node
        guards = _dominating(facts, stmt)

        if node.kind == "COPY":
            dst, src, length = (a.text for a in node.args)
            from_input = input_re.search(src) or root_name(src) in facts.aliases
            into_tee = not (input_re.search(dst) or output_re.search(dst) or root_name(dst) in facts.aliases)
            if not (from_input and into_tee and _input_derived(length, facts, input_re)):
                continue
            candidates = _guard_candidates(length, facts)
            if not any(_has_upper(g, candidates) for g in guards):
                evidence = {"dst": dst, "in": src, "len": length}
                issues.append(_issue("InputValidationWeakness", stmt, evidence, "COPY", m, facts.name))

        elif node.kind == "ARRAY":
            base, idx = node.args[0].text, node.args[1].text
            evidence = {"base": base, "index": idx}
            candidates = _guard_candidates(idx, facts)
            upper = any(_has_upper(g, candidates) for g in guards)
            if _input_derived(idx, facts, input_re):
                lower = any(_has_lower(g, candidates) for g in guards)
                literal = int_value(idx)
                if literal is not None and literal >= 0:
                    lower = True
                if not (upper and lower):
                    issues.append(_issue("InputValidationWeakness", stmt, evidence, "ARRAY", m, facts.name))
            elif base in facts.aliases and is_literal(idx):
                size_expr = re.sub(r"buffer$", "size", facts.aliases[base].strip())
                if not (upper or any(_mentions(g, size_expr) for g in guards)):
                    issues.append(_issue("InputValidationWeakness", stmt, evidence, "ARRAY", m, facts.name))
    return issues


def detect_input_validation(m: SourceModel, fc: FunctionClassification) -> list[Issue]:
    """Input-sized copies (copy form) and input-indexed array accesses (index form) without guards."""
    return [i for facts in _all_facts(m, fc) for i in _validation_in(facts, m, fc)]


# ==============================================================================
# SHARED MEMORY
# ==============================================================================

def _hash_linked(dst: str, copy_stmt: Statement, stmt: Statement, facts: _FunctionFacts) -> set[str]:
    """`dst` plus every digest a HASH call between the copy and `stmt` derives from it."""
    linked = {dst}
    for hash_stmt, abstract in facts.calls("HASH"):
        if not (_before(copy_stmt, hash_stmt) and _before(hash_stmt, stmt)):
            continue
        roots = {root_name(a.text) for a in abstract.node.args[:2]} - {None}
        if roots & linked:
            linked |= roots
    return linked


def _compares(g: Guard, names: set[str]) -> bool:
    return any(
        side.kind == "equal" and any(root_name(o.text) in names for o in side.operands)
        for side in (g.left, g.right)
    )


def _deep_copied(sm: str, stmt: Statement, facts: _FunctionFacts, fc: FunctionClassification) -> bool:
    """An earlier copy of `sm` into a TEE buffer, then a comparison guard over that copy or its digest.

    The guard sits between the copy and `stmt`; a comparison of unrelated
    buffers does not count.
    """
    shared_re = re.compile(fc.shared_mem_pattern)
    target = normalize_expr(sm)
    for copy_stmt, abstract in facts.calls("COPY"):
        dst, src = abstract.node.args[0].text, abstract.node.args[1].text
        if not _before(copy_stmt, stmt) or normalize_expr(src) != target or shared_re.search(dst):
            continue
        dst_root = root_name(dst)
        if dst_root is None:
            continue
        linked = _hash_linked(dst_root, copy_stmt, stmt, facts)
        if any(
            _before(copy_stmt, guard_stmt) and _before(guard_stmt, stmt) and _compares(g, linked)
            for guard_stmt, g in facts.guards
        ):
            return True
    return False


def _shared_in(facts: _FunctionFacts, m: SourceModel, fc: FunctionClassification) -> list[Issue]:
    issues: list[Issue] = []
    for stmt, abstract in facts.calls("SHALLOW", "MUTATE"):
        node = abstract.node
        if node.kind == "SHALLOW":
            sm = node.args[0].text
            evidence = {"sm": sm, "buf": node.result.text}
        else:
            sm = node.result.text
            evidence = {"value": node.args[0].text, "sm": sm}
        if _deep_copied(sm, stmt, facts, fc):
            continue
        issues.append(_issue("SharedMemoryUse", stmt, evidence, node.kind, m, facts.name))
    return issues


def detect_shared_memory(m: SourceModel, fc: FunctionClassification) -> list[Issue]:
    """Shallow aliases of shared memory and writes through it."""
    return [i for facts in _all_facts(m, fc) for i in _shared_in(facts, m, fc)]


# ==============================================================================
# ENTRY POINT
# ==============================================================================

def _order(issue: Issue) -> tuple[int, int, int]:
    return issue.span.start_line, issue.span.start_col, ISSUE_KINDS.index(issue.kind)


def detect(m: SourceModel, fc: FunctionClassification) -> list[Issue]:
    """All issues in the model, ordered by span then kind."""
    issues: list[Issue] = []
    for facts in _all_facts(m, fc):
        issues.extend(_unencrypted_in(facts, m, fc))
        issues.extend(_validation_in(facts, m, fc))
        issues.extend(_shared_in(facts, m, fc))
    issues.sort(key=_order)
    if issues:
        logger.info(f"{m.path or '<memory>'}: {len(issues)} issue(s)")
    return issues
