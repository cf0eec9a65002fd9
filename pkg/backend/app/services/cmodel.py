"""C source model for trusted applications.

Splits a translation unit into statements (on `;` and braces outside strings,
comments and parentheses), records declarations with length hints, function
definitions and object-like macros, and lifts single statements into DSL
nodes. This is not a C parser: unrecognized constructs stay opaque statements.
"""

import bisect
import logging
import re
from pathlib import Path
from typing import Iterable, Iterator, Optional

import yaml
from pydantic import ValidationError

from app.models.schemas import (
    AbstractStmt,
    ClientSpec,
    CommandSpec,
    Declaration,
    DslNode,
    DslTerm,
    FuncCall,
    FunctionClassification,
    FunctionDef,
    Guard,
    SourceModel,
    Span,
    Statement,
)
from app.utils.constants import C_KEYWORDS, C_TYPE_SIZES, PARAM_SLOTS, TEE_PARAM_TYPE_KINDS


logger = logging.getLogger(__name__)


# ==============================================================================
# ERRORS
# ==============================================================================

class SourceModelError(ValueError):
    """Raised when a source file cannot be modeled."""


class UnbalancedBraces(SourceModelError):
    def __init__(self, line: int):
        self.line = line
        super().__init__(f"unbalanced braces near line {line}")


class NoEntryPoint(SourceModelError):
    def __init__(self, name: str):
        super().__init__(f"no function named {name} in the model")


class NoCases(SourceModelError):
    def __init__(self, name: str):
        super().__init__(f"{name} has no command cases")


class MissingUuid(SourceModelError):
    def __init__(self):
        super().__init__("TA UUID not found; pass the TA header or set TA_UUID")


class ClassificationError(ValueError):
    """Raised for malformed function-classification profiles."""


# ==============================================================================
# EXPRESSION HELPERS
# ==============================================================================

_LITERAL_RE = re.compile(
    r"-?(?:0[xX][0-9a-fA-F]+|\d+)[uUlL]*|\"(?:[^\"\\]|\\.)*\"|'(?:[^'\\]|\\.)*'"
)
_IDENT_RE = re.compile(r"[A-Za-z_]\w*")
_CAST_RE = re.compile(
    r"^\(\s*(?:(?:const|volatile|unsigned|signed|struct)\s+)*[A-Za-z_]\w*(?:\s*\*)*\s*\)"
)
_LABEL_RE = re.compile(r"^\s*(?:case\s+(?P<case>[^:]+?)|(?P<default>default))\s*:(?!:)")
_SUBSCRIPT_RE = re.compile(r"([A-Za-z_]\w*)\s*\[")
_OPENERS = {"(": ")", "[": "]", "{": "}"}


def find_matching(text: str, open_index: int) -> int:
    """Index of the bracket closing text[open_index], or -1."""
    opener = text[open_index]
    closer = _OPENERS[opener]
    depth = 0
    quote = None
    i = open_index
    while i < len(text):
        c = text[i]
        if quote:
            if c == "\\":
                i += 2
                continue
            if c == quote:
                quote = None
        elif c in "\"'":
            quote = c
        elif c == opener:
            depth += 1
        elif c == closer:
            depth -= 1
            if depth == 0:
                return i
        i += 1
    return -1


def split_top_level(text: str, sep: str = ",") -> list[str]:
    """Split on `sep` outside brackets and literals."""
    parts: list[str] = []
    depth, start, i = 0, 0, 0
    quote = None
    while i < len(text):
        c = text[i]
        if quote:
            if c == "\\":
                i += 2
                continue
            if c == quote:
                quote = None
        elif c in "\"'":
            quote = c
        elif c in "([{":
            depth += 1
        elif c in ")]}":
            depth -= 1
        elif depth == 0 and text.startswith(sep, i):
            parts.append(text[start:i].strip())
            i += len(sep)
            start = i
            continue
        i += 1
    parts.append(text[start:].strip())
    return parts


def strip_labels(text: str) -> tuple[list[str], str]:
    """Leading `case X:` / `default:` labels and the remaining statement text."""
    labels: list[str] = []
    rest = text
    while True:
        match = _LABEL_RE.match(rest)
        if not match:
            break
        labels.append(match.group("case").strip() if match.group("case") else "default")
        rest = rest[match.end():]
    return labels, rest.strip()


def strip_casts(expr: str) -> str:
    expr = expr.strip()
    while expr.startswith("("):
        cast = _CAST_RE.match(expr)
        remainder = expr[cast.end():].lstrip() if cast else ""
        if cast and remainder and (remainder[0].isalpha() or remainder[0] in "_(&*"):
            expr = remainder
            continue
        if find_matching(expr, 0) == len(expr) - 1:
            expr = expr[1:-1].strip()
            continue
        break
    return expr


def root_name(expr: str) -> Optional[str]:
    """Leading identifier of an lvalue-ish expression: `&buf[2]` -> buf."""
    stripped = strip_casts(expr).lstrip("&*( \t")
    match = _IDENT_RE.match(stripped)
    return match.group(0) if match else None


def normalize_expr(expr: str) -> str:
    return re.sub(r"\s+", "", strip_casts(expr))


def is_literal(expr: str) -> bool:
    return _LITERAL_RE.fullmatch(expr.strip()) is not None


def int_value(text: str, macros: Optional[dict[str, str]] = None, _depth: int = 0) -> Optional[int]:
    """Integer value of a literal or object-like macro chain."""
    value = strip_casts(text)
    match = re.fullmatch(r"(-?)(0[xX][0-9a-fA-F]+|\d+)[uUlL]*", value)
    if match:
        number = int(match.group(2), 0)
        return -number if match.group(1) else number
    if macros and value in macros and _depth < 4:
        return int_value(macros[value], macros, _depth + 1)
    return None


def identifiers(text: str) -> set[str]:
    without_literals = _LITERAL_RE.sub(" ", text)
    return {name for name in _IDENT_RE.findall(without_literals) if name not in C_KEYWORDS}


def parse_call(expr: str) -> Optional[tuple[str, list[str]]]:
    """(callee, args) when `expr` is exactly one call expression."""
    expr = expr.strip()
    match = re.match(r"([A-Za-z_]\w*)\s*\(", expr)
    if not match or match.group(1) in C_KEYWORDS:
        return None
    open_index = match.end() - 1
    if find_matching(expr, open_index) != len(expr) - 1:
        return None
    inner = expr[open_index + 1:-1]
    args = split_top_level(inner) if inner.strip() else []
    return match.group(1), args


def called_names(text: str) -> set[str]:
    return {
        m.group(1) for m in re.finditer(r"\b([A-Za-z_]\w*)\s*\(", text)
        if m.group(1) not in C_KEYWORDS
    }


def split_assignment(body: str) -> Optional[tuple[str, str, str]]:
    """(lhs, operator, rhs) for a top-level assignment, compound operators included."""
    depth = 0
    quote = None
    i = 0
    while i < len(body):
        c = body[i]
        if quote:
            if c == "\\":
                i += 2
                continue
            if c == quote:
                quote = None
        elif c in "\"'":
            quote = c
        elif c in "([{":
            depth += 1
        elif c in ")]}":
            depth -= 1
        elif c == "=" and depth == 0:
            if body[i + 1:i + 2] == "=":
                i += 2
                continue
            prev = body[i - 1] if i > 0 else ""
            if prev in "!=":
                i += 1
                continue
            start = i
            if prev in "<>":
                if i >= 2 and body[i - 2] == prev:
                    start = i - 2
                else:
                    i += 1
                    continue
            elif prev in "+-*/%&|^":
                start = i - 1
            return body[:start].strip(), body[start:i + 1], body[i + 1:].strip()
        i += 1
    return None


def subscripts(text: str) -> Iterator[tuple[str, str]]:
    """(base identifier, index text) for each `name[...]`, skipping member subscripts."""
    for match in _SUBSCRIPT_RE.finditer(text):
        before = text[:match.start(1)].rstrip()
        if before.endswith(".") or before.endswith("->"):
            continue
        open_index = match.end() - 1
        close = find_matching(text, open_index)
        if close < 0:
            continue
        yield match.group(1), text[open_index + 1:close].strip()


def concrete_term(text: str) -> DslTerm:
    text = text.strip()
    return DslTerm(kind="literal" if is_literal(text) else "identifier", text=text)


def tee_param_names(fn: Optional[FunctionDef]) -> set[str]:
    names = {"params"}
    if fn is not None:
        for decl, name in zip(fn.param_decls, fn.params):
            if "TEE_Param" in decl:
                names.add(name)
    return names


# ==============================================================================
# DECLARATIONS
# ==============================================================================

_DECL_RE = re.compile(
    r"^(?P<type>(?:(?:const|static|volatile|unsigned|signed|struct|enum|union|extern|register)\s+)*"
    r"[A-Za-z_]\w*)\s*(?P<stars>(?:\*\s*)*)(?P<name>[A-Za-z_]\w*)\s*(?P<dims>(?:\[[^\]]*\]\s*)*)$"
)
_DECLARATOR_RE = re.compile(
    r"^(?P<stars>(?:\*\s*)*)(?P<name>[A-Za-z_]\w*)\s*(?P<dims>(?:\[[^\]]*\]\s*)*)$"
)
_NOT_A_TYPE = {
    "return", "else", "case", "goto", "do", "sizeof", "typedef", "default",
    "break", "continue", "if", "while", "for", "switch",
}
_QUALIFIERS = {"const", "static", "volatile", "extern", "register"}


def _match_declaration(lhs: str) -> Optional[re.Match]:
    match = _DECL_RE.match(lhs.strip())
    if not match:
        return None
    words = match.group("type").split()
    if words[-1] in _NOT_A_TYPE or words[0] in _NOT_A_TYPE:
        return None
    return match


def _split_init(part: str) -> tuple[str, Optional[str]]:
    assignment = split_assignment(part)
    if assignment and assignment[1] == "=":
        return assignment[0], assignment[2]
    return part, None


def _length_hint(
    dims: str, init: Optional[str], macros: dict[str, str], known: dict[str, Declaration]
) -> Optional[int]:
    first = re.match(r"\[([^\]]*)\]", dims.strip())
    if first is None:
        return None
    inside = first.group(1).strip()
    if inside:
        value = int_value(inside, macros)
        if value is not None:
            return value
        sized = re.fullmatch(r"sizeof\s*\(\s*([A-Za-z_]\w*)\s*\)", inside)
        if sized and sized.group(1) in known:
            other = known[sized.group(1)]
            if other.kind == "array" and other.length is not None and other.element_size:
                return other.length * other.element_size
        return None
    if init is None:
        return None
    init = init.strip()
    if init.startswith("{") and init.endswith("}"):
        elements = [e for e in split_top_level(init[1:-1]) if e]
        return len(elements)
    if init.startswith('"') and init.endswith('"'):
        return len(init) - 1  # contents plus terminator
    return None


def _declarations_of(
    stmt: Statement, macros: dict[str, str], known: dict[str, Declaration]
) -> list[Declaration]:
    _, text = strip_labels(stmt.text)
    if not text.endswith(";"):
        return []
    body = text[:-1].strip()
    if not body:
        return []
    parts = split_top_level(body)
    lhs, init = _split_init(parts[0])
    match = _match_declaration(lhs)
    if match is None:
        return []
    type_name = " ".join(match.group("type").split())
    base_type = " ".join(w for w in type_name.split() if w not in _QUALIFIERS)

    decls: list[Declaration] = []

    def add(stars: str, name: str, dims: str, init_text: Optional[str]) -> None:
        if stars.strip():
            kind = "pointer"
        elif dims.strip():
            kind = "array"
        else:
            kind = "scalar"
        decl = Declaration(
            name=name,
            kind=kind,
            type_name=type_name,
            element_size=C_TYPE_SIZES.get(base_type),
            length=_length_hint(dims, init_text, macros, known) if kind == "array" else None,
            init=init_text,
            span=stmt.span,
            function=stmt.function,
        )
        known[name] = decl
        decls.append(decl)

    add(match.group("stars"), match.group("name"), match.group("dims"), init)
    for part in parts[1:]:
        part_lhs, part_init = _split_init(part)
        declarator = _DECLARATOR_RE.match(part_lhs.strip())
        if declarator is None:
            break
        add(declarator.group("stars"), declarator.group("name"), declarator.group("dims"), part_init)
    return decls


# ==============================================================================
# SCANNER
# ==============================================================================

_FUNC_HEAD_RE = re.compile(r"^[\w\s\*]*?\b([A-Za-z_]\w*)\s*\((.*)\)\s*$", re.DOTALL)
_AGGREGATE_RE = re.compile(r"^(?:typedef\s+)?(?:struct|union|enum)\b")
_DEFINE_RE = re.compile(r"^\s*#\s*define\s+([A-Za-z_]\w*)(?!\()\s*(.*)$", re.DOTALL)


def _skip_literal(text: str, start: int) -> int:
    quote = text[start]
    i = start + 1
    while i < len(text):
        if text[i] == "\\":
            i += 2
            continue
        if text[i] == quote or text[i] == "\n":
            return i + 1
        i += 1
    return i


def _skip_comment(text: str, start: int) -> int:
    if text.startswith("//", start):
        end = text.find("\n", start)
        return len(text) if end < 0 else end
    end = text.find("*/", start + 2)
    return len(text) if end < 0 else end + 2


def _match_brace(text: str, open_index: int) -> int:
    depth = 0
    i = open_index
    while i < len(text):
        c = text[i]
        if c in "\"'":
            i = _skip_literal(text, i)
            continue
        if text.startswith("//", i) or text.startswith("/*", i):
            i = _skip_comment(text, i)
            continue
        if c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0:
                return i
        i += 1
    return -1


def _param_names(params: str) -> tuple[list[str], list[str]]:
    names, decls = [], []
    for param in split_top_level(params):
        if param in ("", "void", "..."):
            continue
        match = re.search(r"([A-Za-z_]\w*)\s*(?:\[[^\]]*\]\s*)*$", param)
        if match:
            names.append(match.group(1))
            decls.append(param)
    return names, decls


class _Scanner:
    """Single pass over the text producing statements and function definitions."""

    def __init__(self, text: str):
        self.text = text
        self.line_starts = [0] + [i + 1 for i, c in enumerate(text) if c == "\n"]
        self.statements: list[Statement] = []
        self.aggregate_members: set[int] = set()
        self.functions: list[FunctionDef] = []
        # (kind, function name, header offset, params, param decls)
        self.stack: list[tuple[str, Optional[str], int, list[str], list[str]]] = []

    def _pos(self, offset: int) -> tuple[int, int]:
        line = bisect.bisect_right(self.line_starts, offset) - 1
        return line + 1, offset - self.line_starts[line]

    def _span(self, start: int, end: int) -> Span:
        start_line, start_col = self._pos(start)
        end_line, end_col = self._pos(end)
        if end_line > start_line and end_col == 0:
            end_line -= 1
            end_col = end - self.line_starts[end_line - 1]
        return Span(start_line=start_line, start_col=start_col, end_line=end_line, end_col=end_col)

    def _function(self) -> Optional[str]:
        for kind, name, *_ in self.stack:
            if kind == "function":
                return name
        return None

    def _emit(self, start: int, end: int, kind: str = "code", function: Optional[str] = None) -> None:
        while end > start and self.text[end - 1].isspace():
            end -= 1
        body = self.text[start:end]
        if not body or body == ";":
            return
        if any(entry[0] == "aggregate" for entry in self.stack):
            self.aggregate_members.add(len(self.statements))
        self.statements.append(Statement(
            span=self._span(start, end),
            text=body,
            function=function if function is not None else self._function(),
            depth=len(self.stack),
            kind=kind,
        ))

    def _open_block(self, seg_start: int, brace: int) -> None:
        head = self.text[seg_start:brace].strip()
        head = re.sub(r"/\*.*?\*/|//[^\n]*", " ", head, flags=re.DOTALL).strip()
        func = _FUNC_HEAD_RE.match(head)
        if not self.stack and func and func.group(1) not in C_KEYWORDS and not _AGGREGATE_RE.match(head):
            names, decls = _param_names(func.group(2))
            self._emit(seg_start, brace + 1, kind="block", function=func.group(1))
            self.stack.append(("function", func.group(1), seg_start, names, decls))
            return
        kind = "aggregate" if _AGGREGATE_RE.match(head) else "block"
        self._emit(seg_start, brace + 1, kind="block")
        self.stack.append((kind, None, brace, [], []))

    def _close_block(self, brace: int) -> None:
        if not self.stack:
            raise UnbalancedBraces(self._pos(brace)[0])
        kind, name, start, params, decls = self.stack.pop()
        if kind == "function":
            self.functions.append(FunctionDef(
                name=name, params=params, param_decls=decls, span=self._span(start, brace + 1)
            ))

    def scan(self) -> None:
        text = self.text
        seg_start: Optional[int] = None
        paren = 0
        i = 0
        while i < len(text):
            c = text[i]
            if text.startswith("//", i) or text.startswith("/*", i):
                i = _skip_comment(text, i)
                continue
            if c == "#" and seg_start is None and text[self.line_starts[self._pos(i)[0] - 1]:i].strip() == "":
                end = i
                while True:
                    newline = text.find("\n", end)
                    if newline < 0:
                        end = len(text)
                        break
                    if text[newline - 1] == "\\":
                        end = newline + 1
                        continue
                    end = newline
                    break
                self._emit(i, end, kind="preproc")
                i = end
                continue
            if c in "\"'":
                if seg_start is None:
                    seg_start = i
                i = _skip_literal(text, i)
                continue
            if c.isspace():
                i += 1
                continue
            if paren == 0 and c == "}":
                if seg_start is not None:
                    self._emit(seg_start, i)
                    seg_start = None
                self._close_block(i)
                i += 1
                continue
            if paren == 0 and c == "{" and seg_start is None:
                self.stack.append(("block", None, i, [], []))
                i += 1
                continue
            if seg_start is None:
                seg_start = i
            if c in "([":
                paren += 1
            elif c in ")]":
                paren = max(0, paren - 1)
            elif paren == 0 and c == ";":
                self._emit(seg_start, i + 1)
                seg_start = None
            elif paren == 0 and c == "{":
                if text[seg_start:i].rstrip().endswith("="):
                    close = _match_brace(text, i)
                    if close < 0:
                        raise UnbalancedBraces(self._pos(i)[0])
                    i = close + 1
                    continue
                self._open_block(seg_start, i)
                seg_start = None
            i += 1

        if self.stack:
            raise UnbalancedBraces(self._pos(self.stack[-1][2])[0])
        if seg_start is not None:
            self._emit(seg_start, len(text))


def _macros_of(statements: Iterable[Statement]) -> dict[str, str]:
    macros: dict[str, str] = {}
    for stmt in statements:
        if stmt.kind != "preproc":
            continue
        joined = stmt.text.replace("\\\n", " ")
        match = _DEFINE_RE.match(joined)
        if match:
            value = re.sub(r"/\*.*?\*/|//.*$", "", match.group(2), flags=re.DOTALL).strip()
            macros[match.group(1)] = " ".join(value.split())
    return macros


# ==============================================================================
# PUBLIC API
# ==============================================================================

def load_source(text: str, path: Optional[str] = None) -> SourceModel:
    """Build the statement-level model of one C file."""
    text = text.replace("\r\n", "\n")
    scanner = _Scanner(text)
    scanner.scan()
    statements = sorted(scanner.statements, key=lambda s: (s.span.start_line, s.span.start_col))
    member_ids = {id(scanner.statements[i]) for i in scanner.aggregate_members}

    macros = _macros_of(statements)
    known: dict[str, Declaration] = {}
    declarations: list[Declaration] = []
    for stmt in statements:
        if stmt.kind != "code" or id(stmt) in member_ids:
            continue
        declarations.extend(_declarations_of(stmt, macros, known))

    functions = sorted(scanner.functions, key=lambda f: f.span.start_line)
    model = SourceModel(
        path=path,
        lines=text.split("\n"),
        statements=statements,
        declarations=declarations,
        functions=functions,
        macros=macros,
    )
    logger.debug(
        f"Loaded {path or '<memory>'}: {len(statements)} statements, "
        f"{len(functions)} functions, {len(declarations)} declarations"
    )
    return model


def load_source_file(path: Path | str) -> SourceModel:
    source = Path(path)
    return load_source(source.read_text(encoding="utf-8"), path=source.name)


def load_classification(path: Optional[Path | str] = None) -> FunctionClassification:
    """Read a YAML classification profile; no path means built-in defaults."""
    if path is None:
        return FunctionClassification()
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ClassificationError(f"{path}: expected a mapping at top level")
    try:
        return FunctionClassification(**raw)
    except ValidationError as e:
        raise ClassificationError(f"{path}: {e}") from e


def names_in_scope(m: SourceModel, line: int) -> set[str]:
    """Declaration and parameter names visible at `line` (file scope + enclosing function)."""
    names = {d.name for d in m.declarations if d.function is None and d.span.start_line <= line}
    fn = m.function_at(line)
    if fn is not None:
        names.update(fn.params)
        names.update(
            d.name for d in m.declarations
            if d.function == fn.name and d.span.start_line <= line
        )
    return names


def next_statement(m: SourceModel, stmt: Statement) -> Optional[Statement]:
    for index, candidate in enumerate(m.statements):
        if candidate.span == stmt.span:
            if index + 1 < len(m.statements) and m.statements[index + 1].function == stmt.function:
                return m.statements[index + 1]
            return None
    return None


def split_relation(expr: str) -> Optional[tuple[str, str, str]]:
    """Split `a OP b` at the first top-level relational operator."""
    depth = 0
    quote = None
    i = 0
    while i < len(expr):
        c = expr[i]
        if quote:
            if c == "\\":
                i += 2
                continue
            if c == quote:
                quote = None
        elif c in "\"'":
            quote = c
        elif c in "([{":
            depth += 1
        elif c in ")]}":
            depth -= 1
        elif depth == 0:
            pair = expr[i:i + 2]
            if pair in ("==", "!="):
                return expr[:i].strip(), pair, expr[i + 2:].strip()
            if pair in ("<=", ">="):
                if i > 0 and expr[i - 1] == pair[0]:
                    i += 2
                    continue
                return expr[:i].strip(), pair, expr[i + 2:].strip()
            if c in "<>":
                if pair in ("<<", ">>") or (i > 0 and expr[i - 1] in "<>-"):
                    i += 2 if pair in ("<<", ">>") else 1
                    continue
                return expr[:i].strip(), c, expr[i + 1:].strip()
        i += 1
    return None


def _guard_operand(text: str, fc: FunctionClassification) -> DslTerm:
    call = parse_call(text)
    if call and call[0] in fc.compare_fns and len(call[1]) >= 2:
        return DslTerm(
            kind="equal", text="equal",
            operands=(concrete_term(call[1][0]), concrete_term(call[1][1])),
        )
    return concrete_term(text)


def extract_guards(stmt: Statement, m: SourceModel, fc: FunctionClassification) -> list[Guard]:
    """Guards encoded by `if (cond) return ...;` or `if (cond) {` + `return ...;`."""
    _, text = strip_labels(stmt.text)
    head = re.match(r"if\s*\(", text)
    if not head:
        return []
    open_index = head.end() - 1
    close = find_matching(text, open_index)
    if close < 0:
        return []
    cond = text[open_index + 1:close]
    rest = text[close + 1:].strip()
    if rest == "{":
        following = next_statement(m, stmt)
        if following is None or following.depth != stmt.depth + 1:
            return []
        if not strip_labels(following.text)[1].startswith("return"):
            return []
    elif not rest.startswith("return"):
        return []
    if len(split_top_level(cond, "&&")) > 1:
        return []

    guards: list[Guard] = []
    for disjunct in split_top_level(cond, "||"):
        relation = split_relation(strip_casts(disjunct))
        if relation is None:
            continue
        left, op, right = relation
        if not left or not right:
            continue
        guards.append(Guard(left=_guard_operand(left, fc), op=op, right=_guard_operand(right, fc)))
    return guards


def _lift_call(kind: str, args: list[str], target: Optional[str]) -> Optional[FuncCall]:
    t = concrete_term
    result = t(target) if target else None
    if kind == "COPY" and len(args) == 3:
        return FuncCall(kind="COPY", args=(t(args[0]), t(args[1]), t(args[2])), result=result)
    if kind == "SNPRINT" and len(args) >= 2:
        fmt = next((i for i in range(1, len(args)) if args[i].startswith('"')), min(2, len(args) - 1))
        rest = tuple(t(a) for a in args[fmt + 1:])
        return FuncCall(kind="SNPRINT", args=(t(args[0]), t(args[fmt])) + rest, result=result)
    if kind == "ENC" and len(args) == 3:
        return FuncCall(kind="ENC", args=(t(args[0]), t(args[1]), t(args[2])), result=result)
    if kind == "ENC" and len(args) == 2:
        return FuncCall(kind="ENC", args=(t(args[0]), t(args[0]), t(args[1])), result=result)
    if kind == "HASH" and len(args) == 3:
        return FuncCall(kind="HASH", args=(t(args[1]), t(args[0]), t(args[2])), result=result)
    if kind == "READ":
        var = args[0] if args else target
        return FuncCall(kind="READ", args=(), result=t(var)) if var else None
    if kind == "WRITE" and len(args) == 1:
        return FuncCall(kind="WRITE", args=(t(args[0]),), result=result)
    if kind == "MALLOC" and args:
        return FuncCall(
            kind="MALLOC", args=(t(args[0]),),
            result=result or DslTerm(kind="placeholder", text="_"),
        )
    return None


def _assignment_target(body: str) -> tuple[Optional[str], Optional[str], Optional[str], bool, bool]:
    """(target name or lhs, operator, rhs, is declaration, declares a pointer)."""
    assignment = split_assignment(body)
    if assignment is None:
        decl = _match_declaration(body)
        if decl:
            return decl.group("name"), None, None, True, bool(decl.group("stars").strip())
        return None, None, None, False, False
    lhs, op, rhs = assignment
    decl = _match_declaration(lhs) if op == "=" else None
    if decl:
        return decl.group("name"), op, rhs, True, bool(decl.group("stars").strip())
    return lhs, op, rhs, False, False


def abstract_statement(s: Statement, fc: FunctionClassification, m: SourceModel) -> Optional[AbstractStmt]:
    """Lift a statement to its DSL node, or None for unrecognized shapes."""
    if s.kind == "preproc":
        return None
    _, text = strip_labels(s.text)
    if re.match(r"if\s*\(", text):
        guards = extract_guards(s, m, fc)
        return AbstractStmt(node=guards[0], statement=s) if guards else None
    if s.kind != "code" or not text.endswith(";"):
        return None
    body = text[:-1].strip()
    target, op, rhs, is_decl, is_pointer = _assignment_target(body)

    call = parse_call(rhs if rhs is not None else body)
    if call is not None:
        kind = fc.call_kind(call[0])
        if kind is not None:
            node = _lift_call(kind, call[1], target if rhs is not None else None)
            if node is not None:
                return AbstractStmt(node=node, statement=s, callee=call[0], call_args=tuple(call[1]))

    shared = re.compile(fc.shared_mem_pattern)
    if rhs is not None and op == "=":
        base = strip_casts(rhs)
        declared = m.declaration_of(target, s.span.start_line, s.function) if not is_decl else None
        points = is_pointer or (declared is not None and declared.kind == "pointer")
        if shared.fullmatch(base) and points:
            node = FuncCall(kind="SHALLOW", args=(concrete_term(base),), result=concrete_term(target))
            return AbstractStmt(node=node, statement=s)
    if rhs is not None and not is_decl:
        hit = shared.search(target)
        if hit:
            node = FuncCall(
                kind="MUTATE", args=(concrete_term(rhs),), result=concrete_term(hit.group(0))
            )
            return AbstractStmt(node=node, statement=s)

    scan = rhs if is_decl else body
    if scan:
        skip = tee_param_names(m.function_named(s.function) if s.function else None)
        for base, index in subscripts(scan):
            if base in skip or not index:
                continue
            reads_whole = rhs is not None and normalize_expr(rhs) == normalize_expr(f"{base}[{index}]")
            result = concrete_term(target) if reads_whole and target else DslTerm(kind="placeholder", text="_")
            node = FuncCall(
                kind="ARRAY", args=(concrete_term(base), concrete_term(index)), result=result
            )
            return AbstractStmt(node=node, statement=s)
    return None


# ==============================================================================
# CLIENT SPEC EXTRACTION
# ==============================================================================

_UUID_STRING_RE = re.compile(
    r"[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}"
)


def parse_uuid(value: str) -> Optional[str]:
    """Canonical 8-4-4-4-12 form of a UUID string or a `{ 0x.., 0x.., 0x.., { 8 bytes } }` initializer."""
    text = value.strip()
    found = _UUID_STRING_RE.search(text)
    if found and text.startswith('"'):
        return found.group(0).lower()
    if "{" not in text:
        return found.group(0).lower() if found else None
    numbers = [int(n, 0) for n in re.findall(r"0[xX][0-9a-fA-F]+|\b\d+\b", text)]
    if len(numbers) != 11:
        return None
    time_low, time_mid, time_hi, *clock = numbers
    tail = "".join(f"{b:02x}" for b in clock)
    return f"{time_low:08x}-{time_mid:04x}-{time_hi:04x}-{tail[:4]}-{tail[4:]}"


def _find_uuid(models: list[SourceModel]) -> Optional[str]:
    for model in models:
        for name, value in model.macros.items():
            if name.upper().endswith("UUID"):
                parsed = parse_uuid(value)
                if parsed:
                    return parsed
        for stmt in model.statements:
            match = re.search(r"\bTEEC?_UUID\s+\w+\s*=\s*(\{.*\})", stmt.text, re.DOTALL)
            if match:
                parsed = parse_uuid(match.group(1))
                if parsed:
                    return parsed
    return None


def _slot_pattern(names: set[str]) -> re.Pattern:
    alternatives = "|".join(sorted(re.escape(n) for n in names))
    return re.compile(rf"\b(?:{alternatives})\s*\[\s*(\d)\s*\]\s*\.\s*(memref|value)\s*\.\s*(\w+)")


def _infer_param_types(
    statements: list[Statement], fc: FunctionClassification, param_names: set[str]
) -> tuple[str, str, str, str]:
    slot_re = _slot_pattern(param_names)
    memref_used: set[int] = set()
    memref_written: set[int] = set()
    value_used: set[int] = set()
    value_written: set[int] = set()
    aliases: dict[str, int] = {}

    def written_slots(lvalue: str) -> None:
        for hit in slot_re.finditer(lvalue):
            slot = int(hit.group(1))
            (memref_written if hit.group(2) == "memref" else value_written).add(slot)
        root = root_name(lvalue)
        if root in aliases:
            memref_written.add(aliases[root])

    for stmt in statements:
        if stmt.kind == "preproc":
            continue
        _, text = strip_labels(stmt.text)
        body = text.rstrip(";{").strip()
        for hit in slot_re.finditer(body):
            (memref_used if hit.group(2) == "memref" else value_used).add(int(hit.group(1)))

        target, op, rhs, is_decl, _ = _assignment_target(body)
        if rhs is not None:
            alias = slot_re.fullmatch(strip_casts(rhs))
            if op == "=" and alias and alias.group(2) == "memref" and alias.group(3) == "buffer":
                aliases[target] = int(alias.group(1))
            elif not is_decl:
                written_slots(target)
        call = parse_call(rhs if rhs is not None else body)
        if call and call[1] and fc.call_kind(call[0]) in ("COPY", "SNPRINT"):
            written_slots(call[1][0])
        for name in identifiers(body) & set(aliases):
            memref_used.add(aliases[name])

    kinds: list[str] = []
    for slot in range(PARAM_SLOTS):
        if slot in memref_used or slot in memref_written:
            kinds.append("memref-out" if slot in memref_written else "memref-in")
        elif slot in value_used or slot in value_written:
            kinds.append("value-out" if slot in value_written else "value-in")
        else:
            kinds.append("none")
    return tuple(kinds)


def _declared_param_types(statements: list[Statement]) -> Optional[tuple[str, str, str, str]]:
    for stmt in statements:
        match = re.search(r"TEE_PARAM_TYPES\s*\(([^)]*)\)", stmt.text)
        if match:
            names = split_top_level(match.group(1))
            if len(names) == PARAM_SLOTS:
                return tuple(TEE_PARAM_TYPE_KINDS.get(n, "none") for n in names)
    return None


def _reachable(m: SourceModel, roots: set[str]) -> list[str]:
    seen: list[str] = []
    queue = sorted(roots)
    while queue:
        name = queue.pop(0)
        if name in seen or m.function_named(name) is None:
            continue
        seen.append(name)
        for stmt in m.statements_in(name):
            queue.extend(sorted(called_names(stmt.text) - set(seen)))
    return seen


def extract_client_spec(
    m: SourceModel,
    fc: Optional[FunctionClassification] = None,
    headers: Iterable[SourceModel] = (),
    uuid: Optional[str] = None,
) -> ClientSpec:
    """UUID, command ids and slot types of the TA entry point's `switch`."""
    fc = fc or FunctionClassification()
    headers = list(headers)
    entry = m.function_named(fc.entry_point)
    if entry is None:
        raise NoEntryPoint(fc.entry_point)

    ta_uuid = uuid or fc.ta_uuid or _find_uuid([m, *headers])
    if ta_uuid is None:
        raise MissingUuid()
    macros: dict[str, str] = {}
    for model in [*headers, m]:
        macros.update(model.macros)

    groups: list[tuple[list[str], list[Statement]]] = []
    switch_depth: Optional[int] = None
    for stmt in m.statements_in(entry.name):
        _, text = strip_labels(stmt.text)
        if switch_depth is None:
            if re.match(r"switch\s*\(", text):
                switch_depth = stmt.depth
            continue
        if stmt.depth <= switch_depth:
            break
        labels, _ = strip_labels(stmt.text)
        if labels:
            groups.append((labels, []))
        if groups:
            groups[-1][1].append(stmt)

    commands: list[CommandSpec] = []
    entry_params = tee_param_names(entry)
    for labels, statements in groups:
        roots: set[str] = set()
        for stmt in statements:
            roots |= called_names(strip_labels(stmt.text)[1])
        functions = _reachable(m, roots)
        reachable = list(statements)
        param_names = set(entry_params)
        for name in functions:
            reachable.extend(m.statements_in(name))
            param_names |= tee_param_names(m.function_named(name))
        types = _declared_param_types(reachable) or _infer_param_types(reachable, fc, param_names)
        for label in labels:
            if label == "default":
                continue
            value = int_value(label, macros)
            symbolic = value is None or not re.fullmatch(r"-?(?:0[xX][0-9a-fA-F]+|\d+)[uUlL]*", label)
            commands.append(CommandSpec(
                command_id=value if value is not None else label,
                symbol=label if symbolic else None,
                param_types=types,
                functions=functions,
            ))
    if not commands:
        raise NoCases(entry.name)
    logger.info(f"Client spec for {ta_uuid}: {len(commands)} command(s)")
    return ClientSpec(uuid=ta_uuid, commands=commands)
