"""Repair-rule DSL: tokenizer, parser, renderer, validator and rule-file loader.

A rule is a trigger program and a transformer program separated by `=>`:

    COPY($dst, $in, $len) -> _
    =>
    IF($len, >, $value) -> return ECODE; COPY($dst, $in, $len) -> _

The trigger is matched against abstracted source statements (see
app.services.templates); the transformer is lowered back to C. Placeholders
that only appear in the transformer are "fresh" and left to synthesis.
"""

import logging
import re
from pathlib import Path
from typing import NamedTuple, Optional

from app.models.schemas import (
    DslNode,
    DslProgram,
    DslRule,
    DslTerm,
    FuncCall,
    Guard,
    RuleValidationReport,
    ValidationFinding,
)
from app.utils.constants import (
    ARG_ROLES,
    CALL_ARITY,
    CALL_KINDS,
    DISCARD,
    ECODE_TOKEN,
    EQUAL_TERM,
)


logger = logging.getLogger(__name__)


# ==============================================================================
# ERRORS
# ==============================================================================

class DslError(ValueError):
    """Base class for rule parsing failures."""


class DslSyntaxError(DslError):
    def __init__(self, line: int, col: int, expected: str, found: str = ""):
        self.line = line
        self.col = col
        self.expected = expected
        self.found = found
        detail = f", found {found!r}" if found else ""
        super().__init__(f"line {line}, col {col}: expected {expected}{detail}")


class ArityError(DslError):
    def __init__(self, kind: str, got: int, want: int, variadic: bool = False):
        self.kind = kind
        self.got = got
        self.want = want
        qualifier = "at least " if variadic else ""
        super().__init__(f"{kind} takes {qualifier}{want} argument(s), got {got}")


class MissingSeparator(DslError):
    def __init__(self):
        super().__init__("rule has no '=>' separator between trigger and transformer")


# ==============================================================================
# TOKENIZER
# ==============================================================================

class _Token(NamedTuple):
    kind: str
    text: str
    line: int
    col: int


_TOKEN_SPEC = [
    ("WS", r"[ \t\r\n]+"),
    ("COMMENT", r"#[^\n]*"),
    ("SEP", r"=>"),
    ("ARROW", r"->|→"),
    ("RELOP", r"==|!=|<=|>=|<|>"),
    ("LPAREN", r"\("),
    ("RPAREN", r"\)"),
    ("COMMA", r","),
    ("SEMI", r";"),
    ("AMP", r"&"),
    ("PLACEHOLDER", r"\$[A-Za-z_]\w*"),
    ("NUMBER", r"-?(?:0[xX][0-9a-fA-F]+|\d+)"),
    ("STRING", r'"(?:[^"\\\n]|\\.)*"'),
    ("NAME", r"[A-Za-z_][\w.]*"),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in _TOKEN_SPEC))
_NAME_DIRECTIVE = re.compile(r"^\s*#\s*name\s*:\s*(\S+)", re.MULTILINE)


def _tokenize(text: str, line_offset: int = 0) -> list[_Token]:
    tokens: list[_Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise DslSyntaxError(line + line_offset, pos - line_start, "a token", text[pos])
        kind = match.lastgroup
        value = match.group()
        if kind not in ("WS", "COMMENT"):
            tokens.append(_Token(kind, value, line + line_offset, pos - line_start))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            line_start = match.start() + value.rindex("\n") + 1
        pos = match.end()
    tokens.append(_Token("EOF", "", line + line_offset, pos - line_start))
    return tokens


# ==============================================================================
# PARSER
# ==============================================================================

class _Parser:
    def __init__(self, tokens: list[_Token]):
        self._tokens = tokens
        self._pos = 0

    def peek(self) -> _Token:
        return self._tokens[self._pos]

    def next(self) -> _Token:
        tok = self._tokens[self._pos]
        if tok.kind != "EOF":
            self._pos += 1
        return tok

    def expect(self, kind: str, text: Optional[str] = None, what: Optional[str] = None) -> _Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            raise DslSyntaxError(tok.line, tok.col, what or text or kind.lower(), tok.text)
        return self.next()

    def program(self) -> DslProgram:
        nodes = [self.node()]
        while self.peek().kind == "SEMI":
            self.next()
            if self.peek().kind in ("SEP", "EOF"):
                break
            nodes.append(self.node())
        return DslProgram(nodes=tuple(nodes))

    def node(self) -> DslNode:
        tok = self.expect("NAME", what="a node kind")
        if tok.text == "IF":
            return self._guard()
        if tok.text in CALL_KINDS:
            return self._call(tok)
        raise DslSyntaxError(tok.line, tok.col, "a node kind", tok.text)

    def _call(self, head: _Token) -> FuncCall:
        self.expect("LPAREN", what="'('")
        args: list[DslTerm] = []
        if self.peek().kind != "RPAREN":
            args.append(self.term())
            while self.peek().kind == "COMMA":
                self.next()
                args.append(self.term())
        self.expect("RPAREN", what="')'")
        result = None
        if self.peek().kind == "ARROW":
            self.next()
            result = self.term()

        min_args, max_args, needs_result = CALL_ARITY[head.text]
        if len(args) < min_args or (max_args is not None and len(args) > max_args):
            raise ArityError(head.text, len(args), min_args, variadic=max_args is None)
        if needs_result and result is None:
            tok = self.peek()
            raise DslSyntaxError(tok.line, tok.col, f"'->' and a result for {head.text}", tok.text)
        return FuncCall(kind=head.text, args=tuple(args), result=result)

    def _guard(self) -> Guard:
        self.expect("LPAREN", what="'('")
        left = self._guard_term()
        self.expect("COMMA", what="','")
        op = self.expect("RELOP", what="a relational operator").text
        self.expect("COMMA", what="','")
        right = self._guard_term()
        self.expect("RPAREN", what="')'")
        self.expect("ARROW", what="'->'")
        self.expect("NAME", "return")
        self.expect("NAME", ECODE_TOKEN)
        return Guard(left=left, op=op, right=right)

    def _guard_term(self) -> DslTerm:
        tok = self.peek()
        if tok.kind == "NAME" and tok.text == EQUAL_TERM:
            self.next()
            self.expect("LPAREN", what="'('")
            a = self.term()
            self.expect("COMMA", what="','")
            b = self.term()
            self.expect("RPAREN", what="')'")
            return DslTerm(kind="equal", text=EQUAL_TERM, operands=(a, b))
        return self.term()

    def term(self) -> DslTerm:
        tok = self.next()
        if tok.kind == "PLACEHOLDER":
            return DslTerm(kind="placeholder", text=tok.text[1:])
        if tok.kind == "NAME":
            if tok.text == DISCARD:
                return DslTerm(kind="placeholder", text=DISCARD)
            if self.peek().kind == "LPAREN":
                raise DslSyntaxError(tok.line, tok.col, "a term (nested calls are not allowed)", tok.text)
            return DslTerm(kind="identifier", text=tok.text)
        if tok.kind in ("NUMBER", "STRING"):
            return DslTerm(kind="literal", text=tok.text)
        if tok.kind == "AMP":
            name = self.expect("NAME", what="an identifier after '&'")
            return DslTerm(kind="address_of", text=name.text)
        raise DslSyntaxError(tok.line, tok.col, "a term", tok.text)


# ==============================================================================
# PLACEHOLDER CLASSIFICATION
# ==============================================================================

def _arg_role(kind: str, index: int, argc: int) -> str:
    if kind == "MULENC":
        return "synth" if index == argc - 1 else "use"
    roles = ARG_ROLES[kind]
    if index < len(roles):
        return roles[index]
    return roles[-1] if roles else "use"


def _term_placeholders(term: DslTerm) -> list[str]:
    if term.kind == "equal":
        return [name for operand in term.operands for name in _term_placeholders(operand)]
    return [term.text] if term.is_placeholder else []


def placeholder_roles(program: DslProgram) -> dict[str, set[str]]:
    """Placeholder name -> roles it occupies ("use", "synth", "result"), in appearance order."""
    roles: dict[str, set[str]] = {}
    for node in program.nodes:
        if isinstance(node, Guard):
            for side in (node.left, node.right):
                role = "use" if side.kind == "equal" else "synth"
                for name in _term_placeholders(side):
                    roles.setdefault(name, set()).add(role)
            continue
        for index, arg in enumerate(node.args):
            for name in _term_placeholders(arg):
                roles.setdefault(name, set()).add(_arg_role(node.kind, index, len(node.args)))
        if node.result is not None:
            for name in _term_placeholders(node.result):
                roles.setdefault(name, set()).add("result")
    return roles


def _classify(trigger: DslProgram, transformer: DslProgram) -> tuple[tuple[str, ...], tuple[str, ...]]:
    bound = tuple(placeholder_roles(trigger))
    fresh = tuple(
        name for name, roles in placeholder_roles(transformer).items()
        if name not in bound and roles != {"use"}
    )
    return bound, fresh


# ==============================================================================
# PUBLIC API
# ==============================================================================

def parse_rule(text: str, name: Optional[str] = None, line_offset: int = 0) -> DslRule:
    """Parse one rule. The name comes from the argument, a `# name:` directive, or defaults to "rule"."""
    tokens = _tokenize(text, line_offset)
    separators = [t for t in tokens if t.kind == "SEP"]
    if not separators:
        raise MissingSeparator()
    if len(separators) > 1:
        extra = separators[1]
        raise DslSyntaxError(extra.line, extra.col, "a single '=>' per rule", extra.text)

    parser = _Parser(tokens)
    trigger = parser.program()
    parser.expect("SEP", what="'=>'")
    transformer = parser.program()
    parser.expect("EOF", what="end of rule")

    if name is None:
        directive = _NAME_DIRECTIVE.search(text)
        name = directive.group(1) if directive else "rule"
    bound, fresh = _classify(trigger, transformer)
    return DslRule(name=name, trigger=trigger, transformer=transformer, bound=bound, fresh=fresh)


def render_term(term: DslTerm) -> str:
    if term.kind == "placeholder":
        return term.text if term.text == DISCARD else f"${term.text}"
    if term.kind == "address_of":
        return f"&{term.text}"
    if term.kind == "equal":
        return f"{EQUAL_TERM}({', '.join(render_term(t) for t in term.operands)})"
    return term.text


def render_node(node: DslNode) -> str:
    if isinstance(node, Guard):
        return (
            f"IF({render_term(node.left)}, {node.op}, {render_term(node.right)})"
            f" -> return {ECODE_TOKEN}"
        )
    text = f"{node.kind}({', '.join(render_term(a) for a in node.args)})"
    if node.result is not None:
        text += f" -> {render_term(node.result)}"
    return text


def render_program(program: DslProgram) -> str:
    return "; ".join(render_node(node) for node in program.nodes)


def render_rule(rule: DslRule) -> str:
    return (
        f"# name: {rule.name}\n"
        f"{render_program(rule.trigger)}\n=>\n{render_program(rule.transformer)}\n"
    )


def validate_rule(rule: DslRule) -> RuleValidationReport:
    """Report unbound transformer placeholders, unused trigger bindings and MUL* mismatches."""
    findings: list[ValidationFinding] = []
    trigger_roles = placeholder_roles(rule.trigger)
    transformer_roles = placeholder_roles(rule.transformer)

    if len(rule.trigger.nodes) != 1:
        findings.append(ValidationFinding(
            severity="warning", code="MultiStatementTrigger", subject=rule.name,
            message=f"trigger has {len(rule.trigger.nodes)} nodes; only single-statement triggers match",
        ))

    for name, roles in transformer_roles.items():
        if name not in trigger_roles and roles == {"use"}:
            findings.append(ValidationFinding(
                severity="warning", code="UnboundPlaceholder", subject=name,
                message=f"${name} is read by the transformer but never bound or defined",
            ))
    for name in trigger_roles:
        if name not in transformer_roles:
            findings.append(ValidationFinding(
                severity="info", code="UnusedBinding", subject=name,
                message=f"${name} is bound by the trigger but unused in the transformer",
            ))

    for program in (rule.trigger, rule.transformer):
        for node in program.nodes:
            if isinstance(node, FuncCall) and any(a.is_discard for a in node.args):
                findings.append(ValidationFinding(
                    severity="warning", code="DiscardAsArgument", subject=node.kind,
                    message=f"'_' used as an argument of {node.kind}",
                ))

    findings.extend(_check_mul_expansion(rule, trigger_roles))
    report = RuleValidationReport(rule=rule.name, fresh=list(rule.fresh), findings=findings)
    logger.debug(f"Validated rule {rule.name}: {len(findings)} finding(s)")
    return report


def _check_mul_expansion(rule: DslRule, trigger_roles: dict[str, set[str]]) -> list[ValidationFinding]:
    mallocs = [n for n in rule.transformer.nodes if isinstance(n, FuncCall) and n.kind == "MULMALLOC"]
    encs = [n for n in rule.transformer.nodes if isinstance(n, FuncCall) and n.kind == "MULENC"]
    if not mallocs and not encs:
        return []

    def mismatch(message: str) -> ValidationFinding:
        return ValidationFinding(
            severity="warning", code="MulExpansionMismatch", subject=rule.name, message=message
        )

    if len(mallocs) != 1 or len(encs) != 1:
        return [mismatch("MULMALLOC and MULENC must appear exactly once each")]
    malloc, enc = mallocs[0], encs[0]
    findings: list[ValidationFinding] = []
    malloc_args = [render_term(a) for a in malloc.args]
    enc_args = [render_term(a) for a in enc.args[:-1]]
    if malloc_args != enc_args:
        findings.append(mismatch(f"MULMALLOC args {malloc_args} differ from MULENC args {enc_args}"))
    if malloc.result is None or render_term(malloc.result) != render_term(enc.args[-1]):
        findings.append(mismatch("MULENC ciphers must be the MULMALLOC result"))
    for arg in malloc.args:
        if arg.is_placeholder and arg.text not in trigger_roles:
            findings.append(mismatch(f"expansion source ${arg.text} is not bound by the trigger"))
    return findings


def load_rules(directory: Path | str) -> dict[str, DslRule]:
    """Load every `*.dsl` file under `directory`; rules are separated by blank lines."""
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"rules directory not found: {root}")

    rules: dict[str, DslRule] = {}
    for path in sorted(root.glob("*.dsl")):
        text = path.read_text(encoding="utf-8")
        blocks = _split_blocks(text)
        for index, (offset, block) in enumerate(blocks):
            directive = _NAME_DIRECTIVE.search(block)
            if directive:
                name = directive.group(1)
            else:
                name = path.stem if len(blocks) == 1 else f"{path.stem}#{index + 1}"
            if name in rules:
                raise DslError(f"duplicate rule name {name!r} in {path.name}")
            rules[name] = parse_rule(block, name=name, line_offset=offset)
    logger.info(f"Loaded {len(rules)} rule(s) from {root}")
    return rules


def _split_blocks(text: str) -> list[tuple[int, str]]:
    """Blank-line separated blocks with code, each with its starting line offset."""
    blocks: list[tuple[int, str]] = []
    current: list[str] = []
    start = 0
    for number, line in enumerate(text.splitlines()):
        if line.strip():
            if not current:
                start = number
            current.append(line)
            continue
        if current:
            blocks.append((start, "\n".join(current)))
            current = []
    if current:
        blocks.append((start, "\n".join(current)))

    def has_code(block: str) -> bool:
        return any(l.strip() and not l.strip().startswith("#") for l in block.splitlines())

    # A comment-only block directly before a rule carries its name directive.
    merged: list[tuple[int, str]] = []
    pending: Optional[tuple[int, str]] = None
    for offset, block in blocks:
        if not has_code(block):
            pending = (offset, block)
            continue
        if pending is not None and _NAME_DIRECTIVE.search(pending[1]) and not _NAME_DIRECTIVE.search(block):
            # keep line numbers of the code block; prepend only the directive line
            block = _NAME_DIRECTIVE.search(pending[1]).group(0).strip() + "\n" + block
            offset -= 1
        pending = None
        merged.append((offset, block))
    return merged
