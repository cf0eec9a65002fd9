"""Apply concrete patches to C source text and render unified diffs."""

import difflib
import logging
import re

from app.models.schemas import ConcretePatch, PatchLine
from app.services.cmodel import strip_labels


logger = logging.getLogger(__name__)


class PatchError(ValueError):
    """Base error for patch application."""


class SpanMismatch(PatchError):
    def __init__(self, expected: str, found: str):
        self.expected = expected
        self.found = found
        super().__init__(f"patch expects {expected!r} but the span holds {found!r}")


class OverlappingPatches(PatchError):
    def __init__(self, a: ConcretePatch, b: ConcretePatch):
        self.a = a
        self.b = b
        super().__init__(
            f"patches {a.provenance.issue_id} and {b.provenance.issue_id} touch overlapping lines"
        )


def _squash(text: str) -> str:
    return re.sub(r"\s+", "", text)


def _anchor(patch: ConcretePatch) -> PatchLine | None:
    return next((line for line in patch.lines if line.op in ("delete", "keep")), None)


def apply_patch(text: str, p: ConcretePatch) -> str:
    """Replace the statement at p.span with the patch lines, indented like the statement."""
    anchor = _anchor(p)
    if anchor is None and not p.lines:
        return text
    lines = text.split("\n")
    span = p.span
    if span.end_line > len(lines):
        raise SpanMismatch(anchor.text if anchor else "", "")

    first, last = lines[span.start_line - 1], lines[span.end_line - 1]
    if span.start_line == span.end_line:
        original = first[span.start_col:span.end_col]
    else:
        original = "\n".join(
            [first[span.start_col:], *lines[span.start_line:span.end_line - 1], last[:span.end_col]]
        )
    _, body = strip_labels(original)
    if anchor is not None and _squash(anchor.text) != _squash(body):
        raise SpanMismatch(anchor.text, " ".join(body.split()))

    prefix, suffix = first[:span.start_col], last[span.end_col:]
    indent = re.match(r"[ \t]*", first).group(0)
    body_start = len(original) - len(body)
    kept = original[body_start:]
    label_text = original[:body_start].strip()
    before_body = original[:body_start].split("\n")
    if len(before_body) > 1:
        indent_label, indent = indent, re.match(r"[ \t]*", before_body[-1]).group(0)
    else:
        indent_label = indent

    replacement: list[str] = []
    if prefix.strip():
        replacement.append(prefix.rstrip())
    if label_text:
        replacement.append(f"{indent_label}{label_text}")
    if anchor is None:
        replacement.extend(f"{indent}{line.text}" for line in p.lines)
        replacement.append(f"{indent}{kept}")
    for line in p.lines if anchor is not None else ():
        if line.op == "keep":
            replacement.append(f"{indent}{kept}")
        elif line.op == "insert":
            replacement.append(f"{indent}{line.text}")
    if suffix.strip():
        replacement.append(f"{indent}{suffix.strip()}")

    lines[span.start_line - 1:span.end_line] = replacement
    logger.debug(
        f"Applied {p.provenance.rule} patch at line {span.start_line}: "
        f"{span.end_line - span.start_line + 1} line(s) -> {len(replacement)}"
    )
    return "\n".join(lines)


def order_patches(ps: list[ConcretePatch]) -> list[ConcretePatch]:
    """Bottom-up order so earlier spans stay valid; overlapping spans are rejected."""
    ordered = sorted(ps, key=lambda p: (p.span.start_line, p.span.start_col), reverse=True)
    for lower, upper in zip(ordered, ordered[1:]):
        if lower.span.overlaps(upper.span):
            raise OverlappingPatches(upper, lower)
    return ordered


def apply_patches(text: str, ps: list[ConcretePatch]) -> str:
    for patch in order_patches(ps):
        text = apply_patch(text, patch)
    return text


NO_NEWLINE_MARKER = "\\ No newline at end of file\n"


def unified_diff(before: str, after: str, file_name: str) -> str:
    """Unified diff with a/ b/ headers; headers only when nothing changed.

    A side without a trailing newline gets the no-newline marker after its
    last line, the way ``diff -u`` prints it, so the output applies with
    ``patch -p1``.
    """
    header = f"--- a/{file_name}\n+++ b/{file_name}\n"
    hunks = list(difflib.unified_diff(
        before.splitlines(keepends=True), after.splitlines(keepends=True),
        fromfile=f"a/{file_name}", tofile=f"b/{file_name}",
    ))
    if not hunks:
        return header
    return "".join(line if line.endswith("\n") else line + "\n" + NO_NEWLINE_MARKER for line in hunks)


def emit_diff(p: ConcretePatch, file_name: str, source: str) -> str:
    """Diff of one patch against ``source``, the text it is applied to.

    A ConcretePatch holds only a span and replacement lines; the hunk context
    comes from the pre-patch text, which changes as earlier patches land.
    """
    return unified_diff(source, apply_patch(source, p), file_name)
