"""
Unit tests for placeholder synthesis: heuristics, prompts and reply parsing.
"""
import pytest

from app.services.cmodel import load_source_file
from app.services.detector import detect
from app.services.synth import (
    CollisionAfterRetry,
    History,
    IncompleteBindings,
    UnparseableReply,
    apply_bindings,
    build_prompt,
    fresh_name,
    parse_reply,
    partially_resolved,
    resolve,
    resolve_external,
    resolve_heuristic,
    taken_names,
)
from app.services.templates import template_for
from tests.conftest import TA_DIR


class ScriptedClient:
    """Model client that replays canned replies in order."""
    source = "external"

    def __init__(self, *replies: str):
        self.replies = list(replies)
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        return self.replies.pop(0)


def _case(name: str, rules, fc):
    m = load_source_file(TA_DIR / name)
    [issue] = detect(m, fc)
    return m, issue, template_for(issue, rules, m, fc)


# =============================================================================
# TESTS: fresh_name
# =============================================================================

class TestFreshName:
    @pytest.mark.parametrize(
        "taken, expected",
        [
            (set(), "cipher"),
            ({"cipher"}, "cipher_1"),
            ({"cipher", "cipher_1"}, "cipher_2"),
            ({"cipher", "cipher_2"}, "cipher_1"),
        ],
    )
    def test_smallest_free_suffix(self, taken, expected):
        assert fresh_name("cipher", taken) == expected

    def test_history_names_are_taken(self, rules, corpus_fc):
        m, _, t = _case("udo_keystore.c", rules, corpus_fc)
        history = History(assigned={"cipher"})
        assert "cipher" in taken_names(m, t.span.start_line, history)
        assert resolve_heuristic(t, m, history, corpus_fc) == {"cipher": "cipher_1"}


# =============================================================================
# TESTS: resolve_heuristic on the corpus
# =============================================================================

class TestResolveHeuristic:
    @pytest.mark.parametrize(
        "name, expected",
        [
            ("udo_keystore.c", {"cipher": "cipher"}),
            ("udo_session_token.c", {"cipher": "cipher_1"}),
            ("iv_message_copy.c", {"value": "64"}),
            ("iv_prime_lookup.c", {"value": "15"}),
            ("iv_record_peek.c", {"value": "params[2].memref.size - 1"}),
            ("sm_blob_verify.c", {"h1": "h1", "h2": "h2", "size": "64"}),
        ],
    )
    def test_bindings(self, rules, corpus_fc, name, expected):
        m, _, t = _case(name, rules, corpus_fc)
        assert resolve_heuristic(t, m, History(), corpus_fc) == expected

    def test_private_copy_reuses_earlier_deep_copy(self, rules, corpus_fc):
        m, _, t = _case("sm_counter_update.c", rules, corpus_fc)
        bindings = resolve_heuristic(t, m, History(), corpus_fc)
        assert bindings["buf"] == "buf"
        assert bindings["size"] == "sizeof(buf)"
        # `<tee_internal_api.h>` already mentions `h`
        assert bindings["h"] == "h_1"

    @pytest.mark.parametrize("name", ["udo_login_banner.c", "udo_pin_report.c"])
    def test_formatted_outputs_get_one_name_per_argument(self, rules, corpus_fc, name):
        m, _, t = _case(name, rules, corpus_fc)
        bindings = resolve_heuristic(t, m, History(), corpus_fc)
        assert set(bindings) == set(t.placeholders)
        assert len(set(bindings.values())) == len(bindings)

    @pytest.mark.parametrize(
        "name, missing",
        [("iv_state_restore.c", "value"), ("sm_header_check.c", "size")],
    )
    def test_leaves_unknown_sizes_open(self, rules, corpus_fc, name, missing):
        m, _, t = _case(name, rules, corpus_fc)
        assert missing not in resolve_heuristic(t, m, History(), corpus_fc)


# =============================================================================
# TESTS: parse_reply
# =============================================================================

TEMPLATE = (
    "+ char $cipher[128] = {0};\n"
    "+ enc(plain, $cipher, 128);\n"
    "- TEE_MemMove(params[0].memref.buffer, plain, 128);\n"
    "+ TEE_MemMove(params[0].memref.buffer, $cipher, 128);"
)


class TestParseReply:
    def test_full_echo_with_markers(self):
        reply = TEMPLATE.replace("$cipher", "enc_key")
        assert parse_reply(TEMPLATE, reply) == {"cipher": "enc_key"}

    def test_fenced_reply_without_deleted_lines(self):
        reply = (
            "```c\n"
            "char c[128] = {0};\n"
            "enc(plain,c,128);\n"
            "TEE_MemMove(params[0].memref.buffer, c, 128);\n"
            "```\n"
        )
        assert parse_reply(TEMPLATE, reply) == {"cipher": "c"}

    def test_inconsistent_values_rejected(self):
        reply = "char a[128] = {0};\nenc(plain, b, 128);\nTEE_MemMove(params[0].memref.buffer, a, 128);\n"
        with pytest.raises(UnparseableReply):
            parse_reply(TEMPLATE, reply)

    def test_wrong_line_count_rejected(self):
        with pytest.raises(UnparseableReply) as info:
            parse_reply(TEMPLATE, "I would encrypt the key first.")
        assert info.value.excerpt == "I would encrypt the key first."

    def test_changed_literal_text_rejected(self):
        reply = TEMPLATE.replace("$cipher", "c").replace("enc(", "encrypt(")
        with pytest.raises(UnparseableReply):
            parse_reply(TEMPLATE, reply)


# =============================================================================
# TESTS: resolve_external / resolve
# =============================================================================

class TestResolveExternal:
    def _prompt(self, rules, corpus_fc):
        m, issue, t = _case("udo_keystore.c", rules, corpus_fc)
        taken = taken_names(m, t.span.start_line, History())
        return t, build_prompt(m, issue, t, History()), taken

    def test_prompt_fields(self, rules, corpus_fc):
        _, prompt, _ = self._prompt(rules, corpus_fc)
        assert prompt.site == "udo_keystore.c:24:1.1"
        assert prompt.line == 24
        assert prompt.issue_class == "Unencrypted Data Output"
        assert "$cipher" in prompt.textual_section()

    def test_collision_is_retried_with_note(self, rules, corpus_fc):
        t, prompt, taken = self._prompt(rules, corpus_fc)
        client = ScriptedClient(
            partially_resolved(t, {"cipher": "plain"}).render(),
            partially_resolved(t, {"cipher": "sealed"}).render(),
        )
        outcome = resolve_external(prompt, client, taken=taken, declared=["cipher"])
        assert outcome.bindings == {"cipher": "sealed"}
        assert outcome.source == "external"
        assert client.prompts[0].constraint_note is None
        assert client.prompts[1].constraint_note == (
            "Do not use these variable names, they are already defined: plain."
        )

    def test_second_collision_fails(self, rules, corpus_fc):
        t, prompt, taken = self._prompt(rules, corpus_fc)
        reply = partially_resolved(t, {"cipher": "plain"}).render()
        with pytest.raises(CollisionAfterRetry) as info:
            resolve_external(prompt, ScriptedClient(reply, reply), taken=taken, declared=["cipher"])
        assert info.value.name == "plain"

    def test_placeholder_echoed_back_is_incomplete(self, rules, corpus_fc):
        t, prompt, taken = self._prompt(rules, corpus_fc)
        with pytest.raises(IncompleteBindings) as info:
            resolve_external(prompt, ScriptedClient(t.render()), taken=taken, declared=["cipher"])
        assert info.value.missing == ["cipher"]


class TestResolve:
    def test_heuristic_only(self, rules, corpus_fc):
        m, issue, t = _case("iv_message_copy.c", rules, corpus_fc)
        history = History()
        outcome = resolve(t, m, issue, history, fc=corpus_fc)
        assert outcome.source == "heuristic"
        assert outcome.bindings == {"value": "64"}
        assert history.entries == []

    def test_without_client_reports_missing(self, rules, corpus_fc):
        m, issue, t = _case("sm_header_check.c", rules, corpus_fc)
        with pytest.raises(IncompleteBindings) as info:
            resolve(t, m, issue, History(), fc=corpus_fc)
        assert info.value.missing == ["size"]

    def test_model_fills_leftovers(self, rules, corpus_fc):
        m, issue, t = _case("sm_header_check.c", rules, corpus_fc)
        history = History()
        client = ScriptedClient(
            partially_resolved(t, {"h1": "h1", "h2": "h2", "size": "SHM_LEN"}).render()
        )
        outcome = resolve(t, m, issue, history, client=client, fc=corpus_fc)
        assert outcome.bindings == {"h1": "h1", "h2": "h2", "size": "SHM_LEN"}
        assert "$size" in client.prompts[0].template
        assert "$h1" not in client.prompts[0].template
        assert len(history.entries) == 1

    def test_model_only_skips_heuristics(self, rules, corpus_fc):
        m, issue, t = _case("iv_message_copy.c", rules, corpus_fc)
        client = ScriptedClient(partially_resolved(t, {"value": "sizeof(buf)"}).render())
        outcome = resolve(t, m, issue, History(), client=client, fc=corpus_fc, model_only=True)
        assert outcome.bindings == {"value": "sizeof(buf)"}
        assert outcome.source == "external"


# =============================================================================
# TESTS: apply_bindings
# =============================================================================

class TestApplyBindings:
    def test_substitutes_inserted_lines(self, rules, corpus_fc):
        _, issue, t = _case("udo_keystore.c", rules, corpus_fc)
        patch = apply_bindings(t, {"cipher": "sealed"}, issue_id=issue.issue_id)
        assert [l.op for l in patch.lines] == [l.op for l in t.lines]
        assert all("$" not in l.text for l in patch.lines)
        assert patch.lines[-1].text == "TEE_MemMove(params[0].memref.buffer, sealed, 128);"
        assert patch.provenance.rule == "1.1"
        assert patch.provenance.issue_id == "udo_keystore.c:24:1.1"

    def test_missing_binding(self, rules, corpus_fc):
        _, _, t = _case("udo_keystore.c", rules, corpus_fc)
        with pytest.raises(IncompleteBindings):
            apply_bindings(t, {})
