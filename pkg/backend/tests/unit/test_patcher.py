"""
Unit tests for patch application and diff rendering.
"""
import re

import pytest

from app.models.schemas import ConcretePatch, PatchLine, Provenance, Span
from app.services.cmodel import load_source
from app.services.patcher import (
    OverlappingPatches,
    SpanMismatch,
    apply_patch,
    apply_patches,
    emit_diff,
    order_patches,
    unified_diff,
)


SOURCE = """\
int f(TEE_Param params[4], size_t n)
{
	char *p = params[3].memref.buffer;
	return g(p);
}
"""

SWITCH = """\
int h(int c, int a)
{
	switch (c) {
	case 1:
		return f(a);
	default:
		return 0;
	}
}
"""


def _span(text: str, line: int) -> Span:
    return next(s.span for s in load_source(text).statements if s.span.start_line == line)


def _patch(span: Span, *lines: tuple[str, str], issue_id: str = "x.c:3:3.1") -> ConcretePatch:
    return ConcretePatch(
        span=span,
        lines=[PatchLine(op=op, text=text) for op, text in lines],
        provenance=Provenance(rule="3.1", issue_id=issue_id, resolver="heuristic"),
    )


DEEP_COPY = (
    ("delete", "char *p = params[3].memref.buffer;"),
    ("insert", "char p[16] = {0};"),
    ("insert", "TEE_MemMove(p, params[3].memref.buffer, 16);"),
)


def _apply_unified(before: str, diff: str) -> str:
    """Apply a single-file unified diff the way patch(1) reads it."""
    src = before.splitlines(keepends=True)
    out: list[str] = []
    pos = 0
    last = None
    for line in diff.splitlines(keepends=True)[2:]:
        if line.startswith("@@"):
            start = int(re.match(r"@@ -(\d+)", line).group(1))
            out.extend(src[pos:start - 1])
            pos = start - 1
        elif line.startswith("\\"):
            if last in (" ", "+"):
                out[-1] = out[-1].removesuffix("\n")
        else:
            tag, body = line[0], line[1:]
            if tag in " -":
                pos += 1
            if tag in " +":
                out.append(body)
            last = tag
    out.extend(src[pos:])
    return "".join(out)


# =============================================================================
# TESTS: apply_patch
# =============================================================================

class TestApplyPatch:
    def test_replaces_statement_with_indented_lines(self):
        patched = apply_patch(SOURCE, _patch(_span(SOURCE, 3), *DEEP_COPY))
        assert patched.split("\n")[2:5] == [
            "\tchar p[16] = {0};",
            "\tTEE_MemMove(p, params[3].memref.buffer, 16);",
            "\treturn g(p);",
        ]

    def test_keep_line_reuses_original_text(self):
        patch = _patch(
            _span(SOURCE, 4),
            ("insert", "if (n > 16) {"),
            ("insert", "    return TEE_ERROR_BAD_PARAMETERS;"),
            ("insert", "}"),
            ("keep", "return g(p);"),
        )
        patched = apply_patch(SOURCE, patch)
        assert patched.split("\n")[3:7] == [
            "\tif (n > 16) {",
            "\t    return TEE_ERROR_BAD_PARAMETERS;",
            "\t}",
            "\treturn g(p);",
        ]

    def test_anchor_comparison_ignores_whitespace(self):
        patch = _patch(_span(SOURCE, 3), ("delete", "char* p=params[3].memref.buffer;"), ("insert", "x();"))
        assert "\tx();" in apply_patch(SOURCE, patch).split("\n")

    def test_mismatched_anchor(self):
        patch = _patch(_span(SOURCE, 3), ("delete", "char *q = 0;"), ("insert", "x();"))
        with pytest.raises(SpanMismatch) as info:
            apply_patch(SOURCE, patch)
        assert info.value.found == "char *p = params[3].memref.buffer;"

    def test_span_past_end_of_file(self):
        span = Span(start_line=40, start_col=1, end_line=40, end_col=5)
        with pytest.raises(SpanMismatch):
            apply_patch(SOURCE, _patch(span, ("delete", "x;")))

    def test_case_label_is_preserved(self):
        patch = _patch(_span(SWITCH, 4), ("delete", "return f(a);"), ("insert", "return g(a);"))
        assert apply_patch(SWITCH, patch) == SWITCH.replace("return f(a);", "return g(a);")

    def test_multi_line_statement_collapses(self):
        text = "void k(void)\n{\n\tTEE_MemMove(buf,\n\t\t    src, n);\n}\n"
        patch = _patch(_span(text, 3), ("delete", "TEE_MemMove(buf, src, n);"), ("insert", "memcpy(buf, src, n);"))
        assert apply_patch(text, patch) == "void k(void)\n{\n\tmemcpy(buf, src, n);\n}\n"

    def test_insert_only_patch_goes_before_statement(self):
        patched = apply_patch(SOURCE, _patch(_span(SOURCE, 4), ("insert", "log_it();")))
        assert patched.split("\n")[3:5] == ["\tlog_it();", "\treturn g(p);"]


# =============================================================================
# TESTS: order_patches / apply_patches
# =============================================================================

class TestOrderPatches:
    def test_bottom_up(self):
        upper = _patch(_span(SOURCE, 3), *DEEP_COPY, issue_id="x.c:3:3.1")
        lower = _patch(_span(SOURCE, 4), ("delete", "return g(p);"), ("insert", "return 0;"), issue_id="x.c:4:3.1")
        assert order_patches([upper, lower]) == [lower, upper]

        patched = apply_patches(SOURCE, [upper, lower])
        assert patched.split("\n")[2:5] == [
            "\tchar p[16] = {0};",
            "\tTEE_MemMove(p, params[3].memref.buffer, 16);",
            "\treturn 0;",
        ]

    def test_overlap_rejected(self):
        a = _patch(_span(SOURCE, 3), *DEEP_COPY, issue_id="a")
        b = _patch(_span(SOURCE, 3), ("insert", "x();"), issue_id="b")
        with pytest.raises(OverlappingPatches, match="touch overlapping lines"):
            order_patches([a, b])


# =============================================================================
# TESTS: unified_diff / emit_diff
# =============================================================================

class TestUnifiedDiff:
    def test_headers_only_when_unchanged(self):
        assert unified_diff(SOURCE, SOURCE, "x.c") == "--- a/x.c\n+++ b/x.c\n"

    def test_hunk_for_change(self):
        patch = _patch(_span(SOURCE, 3), *DEEP_COPY)
        diff = emit_diff(patch, "x.c", SOURCE)
        assert diff.startswith("--- a/x.c\n+++ b/x.c\n@@")
        assert "-\tchar *p = params[3].memref.buffer;\n" in diff
        assert "+\tchar p[16] = {0};\n" in diff
        assert diff == unified_diff(SOURCE, apply_patch(SOURCE, patch), "x.c")

    def test_missing_trailing_newline_marker(self):
        diff = unified_diff("a\nb", "a\nc", "y.c")
        assert diff == (
            "--- a/y.c\n+++ b/y.c\n@@ -1,2 +1,2 @@\n a\n"
            "-b\n\\ No newline at end of file\n"
            "+c\n\\ No newline at end of file\n"
        )

    @pytest.mark.parametrize("before,after", [
        ("a\nb", "a\nc"),
        ("a\nb", "a\nb\n"),
        ("a\nb\n", "a\nb"),
        ("a\nb\nc", "a\nx\nc"),
        ("x\ny\n", "x\nz\n"),
    ])
    def test_diff_applies_back(self, before, after):
        assert _apply_unified(before, unified_diff(before, after, "y.c")) == after

    @pytest.mark.parametrize("line,lines", [
        (3, DEEP_COPY),
        (4, (("delete", "return g(p);"), ("insert", "return 0;"))),
    ])
    def test_emit_diff_applies_like_apply_patch(self, line, lines):
        source = SOURCE.rstrip("\n")
        patch = _patch(_span(source, line), *lines)
        assert _apply_unified(source, emit_diff(patch, "x.c", source)) == apply_patch(source, patch)
