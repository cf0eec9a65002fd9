"""
Unit tests for the repair loop and the oracle test-case harness.
"""
import pytest

from app.models.schemas import CiphertextOf, Observation, ParamSetup, Tamper, TestCase
from app.services.cmodel import extract_client_spec, load_source
from app.services.detector import detect
from app.services.harness import (
    CIPHER_STUBS,
    HarnessError,
    MissingObservation,
    RepairSession,
    build_manifest,
    cipher_stub,
    evaluate_outcomes,
    generate_cases,
    parse_observations,
    repair_files,
    repair_loop,
    repair_source,
)
from app.services.replay import ReplayModelClient
from app.services.synth import partially_resolved
from app.services.templates import template_for
from tests.conftest import CORPUS_DIR, TA_DIR


KEY_HEX = "6465766963652d6d61737465722d6b65793a3466316332613965"


class ScriptedClient:
    source = "external"

    def __init__(self, *replies: str):
        self.replies = list(replies)
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        return self.replies.pop(0)


def _setup(name: str, rules, fc, **session_args):
    text = (TA_DIR / name).read_text(encoding="utf-8")
    session = RepairSession(text=text, file_name=name, rules=rules, fc=fc, **session_args)
    m = load_source(text, name)
    [issue] = detect(m, fc)
    return session, m, issue


def _repaired(name: str, rules, fc):
    session, m, issue = _setup(name, rules, fc)
    result = repair_loop(session, issue)
    assert result.static_verdict == "clean"
    spec = extract_client_spec(m, fc)
    return issue, result, spec, m


def _reply(name: str, rules, fc, bindings: dict[str, str]) -> str:
    m = load_source((TA_DIR / name).read_text(encoding="utf-8"), name)
    [issue] = detect(m, fc)
    return partially_resolved(template_for(issue, rules, m, fc), bindings).render()


# =============================================================================
# TESTS: repair_loop
# =============================================================================

class TestRepairLoop:
    def test_heuristic_repair_is_clean(self, rules, corpus_fc):
        session, _, issue = _setup("udo_keystore.c", rules, corpus_fc)
        result = repair_loop(session, issue)
        assert result.static_verdict == "clean"
        assert result.iterations == 1
        assert result.resolver_source == "heuristic"
        assert result.rule == "1.1"
        assert result.diff.startswith("--- a/udo_keystore.c\n+++ b/udo_keystore.c\n@@")
        assert "\tenc(plain, cipher, 128);" in session.text
        assert "cipher" in session.history.assigned

    def test_missing_bindings_without_client(self, rules, corpus_fc):
        session, _, issue = _setup("sm_header_check.c", rules, corpus_fc)
        original = session.text
        result = repair_loop(session, issue)
        assert result.static_verdict == "residual"
        assert result.final_patch is None
        assert result.iterations == 1
        assert result.error.startswith("IncompleteBindings")
        assert session.text == original

    def test_collision_costs_an_iteration(self, rules, corpus_fc):
        reuse = _reply("udo_keystore.c", rules, corpus_fc, {"cipher": "plain"})
        fresh = _reply("udo_keystore.c", rules, corpus_fc, {"cipher": "sealed"})
        client = ScriptedClient(reuse, reuse, fresh)
        session, _, issue = _setup("udo_keystore.c", rules, corpus_fc, client=client, model_only=True)
        result = repair_loop(session, issue)
        assert result.static_verdict == "clean"
        assert result.iterations == 2
        assert result.bindings == {"cipher": "sealed"}
        assert result.resolver_source == "external"
        assert client.prompts[2].feedback.startswith("The previous reply could not be used")

    def test_residual_until_exhausted(self, rules, corpus_fc):
        still_shared = _reply(
            "sm_counter_update.c", rules, corpus_fc,
            {"buf": "params[3].memref.buffer", "h": "digest", "size": "64"},
        )
        client = ScriptedClient(still_shared, still_shared)
        session, _, issue = _setup("sm_counter_update.c", rules, corpus_fc, client=client, model_only=True)
        result = repair_loop(session, issue, max_iters=2)
        assert result.static_verdict == "residual"
        assert result.exhausted
        assert result.iterations == 2
        assert [i.kind for i in result.residual_issues] == ["SharedMemoryUse"]
        assert "still has bad partitioning issues" in client.prompts[1].feedback
        assert result.notes[-1] == "ExhaustedIterations: still residual after 2 iteration(s)"
        assert result.final_patch is not None

    def test_max_iters_must_be_positive(self, rules, corpus_fc):
        session, _, issue = _setup("udo_keystore.c", rules, corpus_fc)
        with pytest.raises(HarnessError):
            repair_loop(session, issue, max_iters=0)


class TestRepairSource:
    def test_one_result_per_issue(self, rules, corpus_fc):
        session, _, _ = _setup("iv_prime_lookup.c", rules, corpus_fc)
        [result] = repair_source(session)
        assert result.static_verdict == "clean"
        assert detect(load_source(session.text, "iv_prime_lookup.c"), corpus_fc) == []

    def test_repair_files_writes_outputs(self, rules, corpus_fc, tmp_path):
        paths = [TA_DIR / "udo_keystore.c", TA_DIR / "sm_header_check.c"]
        report = repair_files(paths, rules, corpus_fc, tmp_path)
        assert report.summary.model_dump() == {"generated": 1, "clean": 1, "residual": 1}
        by_file = {f.file: f for f in report.files}
        assert by_file["udo_keystore.c"].output_file == "udo_keystore.c"
        assert by_file["udo_keystore.c"].patch_file == "udo_keystore.c.patch"
        assert by_file["sm_header_check.c"].output_file is None
        assert (tmp_path / "udo_keystore.c.patch").read_text().startswith("--- a/udo_keystore.c")
        assert not (tmp_path / "sm_header_check.c").exists()


# =============================================================================
# TESTS: generate_cases
# =============================================================================

class TestGenerateCases:
    def test_unencrypted_output(self, rules, corpus_fc):
        issue, result, spec, m = _repaired("udo_keystore.c", rules, corpus_fc)
        [case] = generate_cases(issue, result.final_patch, spec, m)
        assert case.id == "udo_l24_cipher"
        assert case.command_id == 0
        assert case.params == [ParamSetup(slot=0, kind="memref-out", length=128)]
        assert case.expected == CiphertextOf(source="plain", plaintext_hex=KEY_HEX)
        assert case.output_slot == 0

    def test_copy_bound(self, rules, corpus_fc):
        issue, result, spec, m = _repaired("iv_message_copy.c", rules, corpus_fc)
        cases = generate_cases(issue, result.final_patch, spec, m)
        assert [c.id for c in cases] == ["iv_l24_below", "iv_l24_at", "iv_l24_above"]
        assert [c.params[0].length for c in cases] == [63, 64, 65]
        assert [c.expected for c in cases] == ["Success", "Success", "ErrorBadParameters"]
        assert {(c.params[0].slot, c.params[0].kind, c.params[0].fill) for c in cases} == {(1, "memref-in", 0x41)}
        assert cases[0].note == "len(x) = 63, bound 64"

    def test_input_array_index(self, rules, corpus_fc):
        issue, result, spec, m = _repaired("iv_record_peek.c", rules, corpus_fc)
        cases = generate_cases(issue, result.final_patch, spec, m)
        assert [c.params[0].length for c in cases] == [15, 16, 17]
        assert [c.expected for c in cases] == ["ErrorBadParameters", "Success", "Success"]
        assert cases[0].params[0].slot == 2
        assert cases[0].command_id == 4
        assert cases[0].note == "len(x) = 15, index 15"

    def test_value_index(self, rules, corpus_fc):
        issue, result, spec, m = _repaired("iv_prime_lookup.c", rules, corpus_fc)
        cases = generate_cases(issue, result.final_patch, spec, m)
        assert [c.id for c in cases] == ["iv_l26_lower", "iv_l26_upper", "iv_l26_past"]
        assert [c.params[0].value for c in cases] == [8, 23, 24]
        assert [c.params[0].kind for c in cases] == ["value-in"] * 3
        assert [c.expected for c in cases] == ["Success", "Success", "ErrorBadParameters"]

    def test_shared_memory(self, rules, corpus_fc):
        issue, result, spec, m = _repaired("sm_blob_verify.c", rules, corpus_fc)
        untampered, tampered = generate_cases(issue, result.final_patch, spec, m)
        assert untampered.id == "sm_l29_untampered" and untampered.tamper is None
        assert untampered.params == [ParamSetup(slot=3, kind="memref-in", length=64, fill=0x41)]
        assert tampered.tamper == Tamper(slot=3, offset=0, xor_mask=0xFF)
        assert tampered.expected == "ErrorBadParameters"

    def test_symbolic_bound(self, rules, corpus_fc):
        client = ReplayModelClient.from_path(CORPUS_DIR / "fixtures")
        session, m, issue = _setup("iv_state_restore.c", rules, corpus_fc, client=client)
        result = repair_loop(session, issue)
        assert result.static_verdict == "clean"
        cases = generate_cases(issue, result.final_patch, extract_client_spec(m, corpus_fc), m)
        assert [c.params[0].symbolic for c in cases] == ["state_len - 1", "state_len", "state_len + 1"]
        assert all(c.params[0].length is None for c in cases)

    def test_without_spec_defaults(self, rules, corpus_fc):
        issue, result, _, _ = _repaired("udo_keystore.c", rules, corpus_fc)
        [case] = generate_cases(issue, result.final_patch)
        assert case.command_id == 0
        assert case.expected.plaintext_hex is None

    @pytest.mark.parametrize("name,case_id,fmt,arguments", [
        ("udo_login_banner.c", "udo_l25_cipher", b"%s %s", [b"alice", b"tk-93ab02"]),
        ("udo_pin_report.c", "udo_l25_cipher", b"pin=%s", [b"4821"]),
    ])
    def test_formatted_output_carries_arguments(self, rules, corpus_fc, name, case_id, fmt, arguments):
        issue, result, spec, m = _repaired(name, rules, corpus_fc)
        [case] = generate_cases(issue, result.final_patch, spec, m)
        assert case.id == case_id
        assert case.expected.format_hex == fmt.hex()
        assert case.expected.arguments_hex == [a.hex() for a in arguments]
        assert case.expected.plaintext_hex is None

    def test_formatted_output_with_unknown_argument(self, corpus_fc):
        text = (
            "TEE_Result f(uint32_t pt, TEE_Param params[4])\n{\n"
            "\tchar user[32] = \"alice\";\n"
            "\tchar token[32];\n"
            "\tload_token(token);\n"
            "\tsnprintf(params[0].memref.buffer, params[0].memref.size, \"%s %s\", user, token);\n"
            "\treturn TEE_SUCCESS;\n}\n"
        )
        m = load_source(text, path="t.c")
        [issue] = [i for i in detect(m, corpus_fc) if i.kind == "UnencryptedOutput"]
        [case] = generate_cases(issue, None, None, m)
        assert case.expected == CiphertextOf(source="user, token")


# =============================================================================
# TESTS: observations and verdicts
# =============================================================================

def _cipher_case(rules, corpus_fc):
    issue, result, spec, m = _repaired("udo_keystore.c", rules, corpus_fc)
    return generate_cases(issue, result.final_patch, spec, m)


def _banner_cases(rules, corpus_fc):
    issue, result, spec, m = _repaired("udo_login_banner.c", rules, corpus_fc)
    return generate_cases(issue, result.final_patch, spec, m)


class TestObservations:
    def test_parse_skips_chatter_and_malformed_lines(self):
        text = (
            "opening session\n"
            "RESULT udo_l24_cipher 0x0 6465\n"
            "RESULT iv_l24_at ffff0006 -\n"
            "RESULT broken\n"
        )
        assert parse_observations(text) == [
            Observation(case_id="udo_l24_cipher", code=0, output_hex="6465"),
            Observation(case_id="iv_l24_at", code=0xFFFF0006, output_hex=""),
        ]

    @pytest.mark.parametrize("cipher", sorted(CIPHER_STUBS))
    def test_ciphertext_passes(self, rules, corpus_fc, cipher):
        cases = _cipher_case(rules, corpus_fc)
        encrypt, _ = cipher_stub(cipher)
        output = encrypt(bytes.fromhex(KEY_HEX), 1) + b"\x00" * 102
        verdict = evaluate_outcomes(cases, [Observation(case_id="udo_l24_cipher", code=0, output_hex=output.hex())], cipher, 1)
        assert verdict.status == "pass"

    def test_plaintext_output_fails(self, rules, corpus_fc):
        cases = _cipher_case(rules, corpus_fc)
        verdict = evaluate_outcomes(cases, [Observation(case_id="udo_l24_cipher", code=0, output_hex=KEY_HEX)])
        assert verdict.status == "fail"
        assert verdict.reasons["udo_l24_cipher"] == "output equals the plaintext"

    def test_error_code_fails(self, rules, corpus_fc):
        cases = _cipher_case(rules, corpus_fc)
        verdict = evaluate_outcomes(cases, [Observation(case_id="udo_l24_cipher", code=0xFFFF0006)])
        assert verdict.failed == ["udo_l24_cipher"]

    def test_formatted_ciphertext_passes(self, rules, corpus_fc):
        cases = _banner_cases(rules, corpus_fc)
        encrypt, _ = cipher_stub("xor")
        output = encrypt(b"alice", 1) + b" " + encrypt(b"tk-93ab02", 1) + b"\x00" * 8
        verdict = evaluate_outcomes(cases, [Observation(case_id="udo_l25_cipher", code=0, output_hex=output.hex())])
        assert verdict.status == "pass"

    def test_formatted_plaintext_fails(self, rules, corpus_fc):
        cases = _banner_cases(rules, corpus_fc)
        output = b"alice tk-93ab02\x00"
        verdict = evaluate_outcomes(cases, [Observation(case_id="udo_l25_cipher", code=0, output_hex=output.hex())])
        assert verdict.reasons["udo_l25_cipher"] == "output equals the plaintext"

    def test_formatted_output_must_encrypt_each_argument(self, rules, corpus_fc):
        cases = _banner_cases(rules, corpus_fc)
        encrypt, _ = cipher_stub("xor")
        output = encrypt(b"bob", 1) + b" " + encrypt(b"tk-93ab02", 1)
        verdict = evaluate_outcomes(cases, [Observation(case_id="udo_l25_cipher", code=0, output_hex=output.hex())])
        assert verdict.reasons["udo_l25_cipher"] == "output is not user, token encrypted under the xor stub"

    def test_unknown_plaintext_never_passes(self):
        case = TestCase(id="udo_l9_cipher", command_id=0, expected=CiphertextOf(source="key"), output_slot=0)
        observed = Observation(case_id="udo_l9_cipher", code=0, output_hex=b"super-secret-key".hex())
        verdict = evaluate_outcomes([case], [observed])
        assert verdict.status == "fail"
        assert verdict.reasons["udo_l9_cipher"].startswith("plaintext of key is unknown")

    def test_status_expectations(self, rules, corpus_fc):
        issue, result, spec, m = _repaired("iv_message_copy.c", rules, corpus_fc)
        cases = generate_cases(issue, result.final_patch, spec, m)
        observed = [
            Observation(case_id="iv_l24_below", code=0),
            Observation(case_id="iv_l24_at", code=0),
            Observation(case_id="iv_l24_above", code=0),
        ]
        verdict = evaluate_outcomes(cases, observed)
        assert verdict.failed == ["iv_l24_above"]
        assert verdict.reasons["iv_l24_above"] == "expected ErrorBadParameters (0xffff0006), got 0x00000000"

    def test_missing_observation(self, rules, corpus_fc):
        cases = _cipher_case(rules, corpus_fc)
        with pytest.raises(MissingObservation) as info:
            evaluate_outcomes(cases, [])
        assert info.value.case_id == "udo_l24_cipher"


class TestManifest:
    def test_build_manifest(self, rules, corpus_fc):
        cases = _cipher_case(rules, corpus_fc)
        manifest = build_manifest("8aaaf200-2450-11e4-abe2-0002a5d5c51b", cases, cipher="shift", cipher_key=3)
        assert manifest.cipher == "shift" and manifest.cipher_key == 3
        assert manifest.cases == cases

    def test_unknown_cipher(self):
        with pytest.raises(HarnessError, match="unknown cipher stub"):
            build_manifest("8aaaf200-2450-11e4-abe2-0002a5d5c51b", [], cipher="aes")
