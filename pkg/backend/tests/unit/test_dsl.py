"""
Unit tests for the repair-rule DSL.
"""
import random

import pytest

from app.models.schemas import FuncCall, Guard
from app.services.dsl import (
    ArityError,
    DslError,
    DslSyntaxError,
    MissingSeparator,
    load_rules,
    parse_rule,
    placeholder_roles,
    render_rule,
    validate_rule,
)
from tests.conftest import RULES_DIR


# =============================================================================
# TESTS: parse_rule
# =============================================================================

class TestParseRule:
    def test_copy_bound_rule(self):
        rule = parse_rule(
            "COPY($dst, $in, $len) -> _\n=>\nIF($len, >, $value) -> return ECODE; COPY($dst, $in, $len) -> _",
            name="2.1",
        )
        assert rule.name == "2.1"
        assert len(rule.trigger.nodes) == 1
        guard, copy = rule.transformer.nodes
        assert isinstance(guard, Guard) and guard.op == ">"
        assert isinstance(copy, FuncCall) and copy.kind == "COPY"
        assert rule.bound == ("dst", "in", "len")
        assert rule.fresh == ("value",)

    def test_unicode_arrow_and_name_directive(self):
        rule = parse_rule("# name: alias\nSHALLOW($sm) → $buf\n=>\nMALLOC($n) → $buf")
        assert rule.name == "alias"
        assert rule.trigger.nodes[0].result.text == "buf"

    def test_default_name(self):
        assert parse_rule("READ() -> $h => WRITE($h) -> _").name == "rule"

    def test_equal_term_in_guard(self):
        rule = parse_rule("READ() -> $a => IF(equal($a, $b), !=, 0) -> return ECODE")
        guard = rule.transformer.nodes[0]
        assert guard.left.kind == "equal"
        assert [t.text for t in guard.left.operands] == ["a", "b"]

    def test_address_of_and_literals(self):
        rule = parse_rule('COPY(&buf, "abc", 0x10) -> _ => COPY(&buf, "abc", 16) -> _')
        args = rule.trigger.nodes[0].args
        assert [a.kind for a in args] == ["address_of", "literal", "literal"]

    def test_comments_are_ignored(self):
        rule = parse_rule("# trigger\nREAD() -> $h # read it\n=>\nWRITE($h) -> _ # and write")
        assert rule.transformer.nodes[0].kind == "WRITE"

    def test_trailing_semicolon(self):
        rule = parse_rule("READ() -> $h; => WRITE($h) -> _;")
        assert len(rule.transformer.nodes) == 1


class TestParseErrors:
    def test_missing_separator(self):
        with pytest.raises(MissingSeparator):
            parse_rule("COPY($a, $b, $c) -> _")

    def test_two_separators(self):
        with pytest.raises(DslSyntaxError):
            parse_rule("READ() -> $h => WRITE($h) -> _ => WRITE($h) -> _")

    @pytest.mark.parametrize(
        "text, kind, got",
        [
            ("COPY($a, $b) -> _ => WRITE($a) -> _", "COPY", 2),
            ("READ($x) -> $h => WRITE($h) -> _", "READ", 1),
            ("MULENC($a) -> _ => WRITE($a) -> _", "MULENC", 1),
        ],
    )
    def test_arity(self, text, kind, got):
        with pytest.raises(ArityError) as info:
            parse_rule(text)
        assert info.value.kind == kind
        assert info.value.got == got

    def test_result_required(self):
        with pytest.raises(DslSyntaxError) as info:
            parse_rule("MALLOC($n) => WRITE($n) -> _")
        assert "result for MALLOC" in str(info.value)

    def test_unknown_kind_reports_position(self):
        with pytest.raises(DslSyntaxError) as info:
            parse_rule("READ() -> $h\n=>\nFREE($h) -> _")
        assert info.value.line == 3
        assert info.value.col == 0
        assert info.value.found == "FREE"

    def test_nested_call_rejected(self):
        with pytest.raises(DslSyntaxError):
            parse_rule("COPY(f(x), $b, $c) -> _ => WRITE($b) -> _")

    def test_bad_character(self):
        with pytest.raises(DslSyntaxError):
            parse_rule("READ() -> $h => WRITE(@) -> _")

    def test_errors_are_value_errors(self):
        assert issubclass(DslError, ValueError)


# =============================================================================
# TESTS: rendering and placeholder roles
# =============================================================================

class TestRender:
    @pytest.mark.parametrize("name", ["1.1", "1.2", "2.1", "2.2", "3.1", "3.2"])
    def test_render_parses_back_to_same_rule(self, rules, name):
        rule = rules[name]
        assert parse_rule(render_rule(rule)) == rule

    def test_guard_rendering(self, rules):
        text = render_rule(rules["3.1"])
        assert "IF(equal($h1, $h2), !=, 0) -> return ECODE" in text


class TestPlaceholderRoles:
    def test_mulenc_last_argument_is_synth(self, rules):
        roles = placeholder_roles(rules["1.2"].transformer)
        assert roles["ciphers"] == {"result", "synth", "use"}
        assert roles["args"] == {"use"}

    def test_fresh_placeholders_of_bundled_rules(self, rules):
        assert rules["1.1"].fresh == ("cipher",)
        assert rules["1.2"].fresh == ("ciphers",)
        assert rules["2.2"].fresh == ("value",)
        assert rules["3.1"].fresh == ("size", "h1", "h2")
        assert rules["3.2"].fresh == ("buf", "h", "size")


# =============================================================================
# TESTS: validate_rule / load_rules
# =============================================================================

class TestValidateRule:
    @pytest.mark.parametrize("name", ["1.1", "1.2", "2.1", "2.2", "3.1", "3.2"])
    def test_bundled_rules_are_clean(self, rules, name):
        assert validate_rule(rules[name]).clean

    def test_unbound_use_is_flagged(self):
        rule = parse_rule("READ() -> $h => WRITE($other) -> _")
        codes = {f.code for f in validate_rule(rule).findings}
        assert "UnboundPlaceholder" in codes
        assert "UnusedBinding" in codes

    def test_discard_argument_is_flagged(self):
        rule = parse_rule("READ() -> $h => WRITE(_) -> _")
        report = validate_rule(rule)
        assert "DiscardAsArgument" in {f.code for f in report.findings}
        assert not report.clean

    def test_multi_statement_trigger_warns(self):
        rule = parse_rule("READ() -> $h; WRITE($h) -> _ => WRITE($h) -> _")
        assert "MultiStatementTrigger" in {f.code for f in validate_rule(rule).findings}

    def test_mul_expansion_mismatch(self):
        rule = parse_rule(
            "SNPRINT($o, $f, $args) -> _ => MULMALLOC($args) -> $c; MULENC($o, $c) -> _"
        )
        findings = [f for f in validate_rule(rule).findings if f.code == "MulExpansionMismatch"]
        assert findings


class TestLoadRules:
    def test_bundled_rule_names(self, rules):
        assert sorted(rules) == ["1.1", "1.2", "2.1", "2.2", "3.1", "3.2"]

    def test_multiple_rules_per_file(self, tmp_path):
        (tmp_path / "pair.dsl").write_text(
            "# name: a\nREAD() -> $h => WRITE($h) -> _\n\n# name: b\nREAD() -> $g => WRITE($g) -> _\n",
            encoding="utf-8",
        )
        loaded = load_rules(tmp_path)
        assert sorted(loaded) == ["a", "b"]

    def test_unnamed_blocks_use_file_stem(self, tmp_path):
        (tmp_path / "solo.dsl").write_text("READ() -> $h => WRITE($h) -> _\n", encoding="utf-8")
        assert list(load_rules(tmp_path)) == ["solo"]

    def test_duplicate_names_rejected(self, tmp_path):
        (tmp_path / "a.dsl").write_text("# name: x\nREAD() -> $h => WRITE($h) -> _\n", encoding="utf-8")
        (tmp_path / "b.dsl").write_text("# name: x\nREAD() -> $g => WRITE($g) -> _\n", encoding="utf-8")
        with pytest.raises(DslError):
            load_rules(tmp_path)

    def test_syntax_error_line_counts_from_file_start(self, tmp_path):
        (tmp_path / "bad.dsl").write_text(
            "# name: ok\nREAD() -> $h => WRITE($h) -> _\n\n# name: broken\nREAD() -> $h\n=>\nFREE($h) -> _\n",
            encoding="utf-8",
        )
        with pytest.raises(DslSyntaxError) as info:
            load_rules(tmp_path)
        assert info.value.line == 7

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_rules(tmp_path / "nope")

    def test_rules_dir_constant(self):
        assert (RULES_DIR / "rule_2_1.dsl").is_file()


# =============================================================================
# TESTS: random token soup
# =============================================================================

FUZZ_TOKENS = [
    "COPY", "READ", "WRITE", "ENC", "MALLOC", "SNPRINT", "SHALLOW", "MULENC", "MULMALLOC", "IF",
    "equal", "return", "ECODE", "_", "$a", "$b", "x", "0x10", "-1", '"s"',
    "(", ")", ",", ";", "&", "->", "=>", "<", ">=", "!=", "#", "\n", "@",
]


class TestFuzz:
    def test_random_inputs_never_crash(self):
        rng = random.Random(20240611)
        parsed = 0
        for _ in range(10_000):
            text = " ".join(rng.choice(FUZZ_TOKENS) for _ in range(rng.randint(0, 14)))
            try:
                parse_rule(text)
                parsed += 1
            except DslError:
                pass
        assert parsed < 10_000
