"""
Integration tests for the full detect -> repair -> oracle pipeline over the bundled corpus.
"""
import pytest

from app.models.schemas import ClientSpec, FileIssues, GroundTruth, IssueReport, TestCase, TestManifest
from app.services.client_codegen import generate_client
from app.services.cmodel import extract_client_spec, load_source_file
from app.services.detector import detect
from app.services.harness import build_manifest, generate_cases, repair_files
from app.services.metrics import compute_metrics, count_confusion
from app.services.replay import ReplayModelClient
from tests.conftest import CORPUS_DIR, GOLDEN_DIR, TA_DIR


TA_FILES = sorted(TA_DIR.glob("*.c"))
CASES_PER_KIND = {"UnencryptedOutput": 1, "InputValidationWeakness": 3, "SharedMemoryUse": 2}


@pytest.fixture(scope="module")
def truth() -> GroundTruth:
    return GroundTruth.model_validate_json((CORPUS_DIR / "expected.json").read_text(encoding="utf-8"))


# =============================================================================
# TESTS: detection
# =============================================================================

class TestDetection:
    def test_corpus_size(self):
        assert len(TA_FILES) == 12

    def test_every_seeded_issue_is_found(self, corpus_fc, truth):
        report = IssueReport(files=[
            FileIssues(file=path.name, issues=detect(load_source_file(path), corpus_fc))
            for path in TA_FILES
        ])
        counts = count_confusion(report, truth)
        assert {kind: (c.ni, c.n, c.tp) for kind, c in counts.items()} == {
            "UnencryptedOutput": (4, 4, 4),
            "InputValidationWeakness": (4, 4, 4),
            "SharedMemoryUse": (4, 4, 4),
        }
        assert compute_metrics(counts).total.f1 == 1.0


# =============================================================================
# TESTS: repair
# =============================================================================

class TestRepair:
    def test_heuristics_alone(self, rules, corpus_fc, tmp_path):
        report = repair_files(TA_FILES, rules, corpus_fc, tmp_path)
        assert report.summary.model_dump() == {"generated": 10, "clean": 10, "residual": 2}
        residual = sorted(f.file for f in report.files if f.results[0].static_verdict == "residual")
        assert residual == ["iv_state_restore.c", "sm_header_check.c"]

    def test_replayed_model_completes_the_corpus(self, rules, corpus_fc, tmp_path):
        client = ReplayModelClient.from_path(CORPUS_DIR / "fixtures")
        report = repair_files(TA_FILES, rules, corpus_fc, tmp_path, client=client)
        assert report.summary.model_dump() == {"generated": 12, "clean": 12, "residual": 0}
        for path in TA_FILES:
            assert detect(load_source_file(tmp_path / path.name), corpus_fc) == [], path.name
            assert (tmp_path / f"{path.name}.patch").is_file()

    def test_repair_is_deterministic(self, rules, corpus_fc, tmp_path):
        fixtures = CORPUS_DIR / "fixtures"
        first = repair_files(TA_FILES, rules, corpus_fc, tmp_path / "a", client=ReplayModelClient.from_path(fixtures))
        second = repair_files(TA_FILES, rules, corpus_fc, tmp_path / "b", client=ReplayModelClient.from_path(fixtures))
        assert first.model_dump() == second.model_dump()
        for path in TA_FILES:
            assert (tmp_path / "a" / path.name).read_text() == (tmp_path / "b" / path.name).read_text()

    def test_inputs_are_untouched(self, rules, corpus_fc, tmp_path):
        before = {p.name: p.read_text(encoding="utf-8") for p in TA_FILES}
        repair_files(TA_FILES, rules, corpus_fc, tmp_path)
        assert {p.name: p.read_text(encoding="utf-8") for p in TA_FILES} == before


# =============================================================================
# TESTS: oracle cases and clients
# =============================================================================

class TestOracle:
    def test_cases_and_client_per_repaired_file(self, rules, corpus_fc, tmp_path):
        client = ReplayModelClient.from_path(CORPUS_DIR / "fixtures")
        report = repair_files(TA_FILES, rules, corpus_fc, tmp_path, client=client)
        for file_report in report.files:
            m = load_source_file(tmp_path / file_report.file)
            spec = extract_client_spec(m, corpus_fc)
            [result] = file_report.results
            cases = generate_cases(result.issue, result.final_patch, spec, m)
            assert len(cases) == CASES_PER_KIND[result.issue.kind], file_report.file
            assert len({c.id for c in cases}) == len(cases)
            source = generate_client(spec, cases)
            for case in cases:
                assert f"static void run_{case.id}(TEEC_Session *sess, const char *arg)" in source


@pytest.fixture(scope="module")
def oracle_outputs(rules, corpus_fc, tmp_path_factory) -> dict[str, tuple[ClientSpec, list[TestCase]]]:
    out = tmp_path_factory.mktemp("repaired")
    client = ReplayModelClient.from_path(CORPUS_DIR / "fixtures")
    report = repair_files(TA_FILES, rules, corpus_fc, out, client=client)
    outputs = {}
    for file_report in report.files:
        m = load_source_file(out / file_report.file)
        spec = extract_client_spec(m, corpus_fc)
        [result] = file_report.results
        outputs[file_report.file] = (spec, generate_cases(result.issue, result.final_patch, spec, m))
    return outputs


class TestGoldenOracle:
    @pytest.mark.parametrize("path", TA_FILES, ids=lambda p: p.name)
    def test_manifest_matches_golden(self, oracle_outputs, path):
        spec, cases = oracle_outputs[path.name]
        golden = (GOLDEN_DIR / "manifests" / f"{path.stem}.json").read_text(encoding="utf-8")
        assert build_manifest(spec.uuid, cases) == TestManifest.model_validate_json(golden)

    @pytest.mark.parametrize("path", TA_FILES, ids=lambda p: p.name)
    def test_client_matches_golden(self, oracle_outputs, path):
        spec, cases = oracle_outputs[path.name]
        golden = (GOLDEN_DIR / "clients" / path.name).read_text(encoding="utf-8")
        assert generate_client(spec, cases) == golden

    def test_every_ta_has_golden_artifacts(self):
        assert sorted(p.stem for p in (GOLDEN_DIR / "manifests").glob("*.json")) == [p.stem for p in TA_FILES]
        assert sorted(p.name for p in (GOLDEN_DIR / "clients").glob("*.c")) == [p.name for p in TA_FILES]
