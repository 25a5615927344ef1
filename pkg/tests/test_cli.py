"""Command-line interface: every subcommand plus the exit-code contract
(0 success, 1 stage failure, 2 config error)."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import pytest

from textkg import __version__
from textkg.cli import main
from textkg.corpus import load_corpus
from textkg.kgstore import load_kb

from .conftest import DATA_DIR, GOLDEN_DIR


def run(capsys, *argv: str) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def invalid_ontology_text() -> str:
    """The raw first-attempt generation for article a2 (undeclared property)."""
    for line in (GOLDEN_DIR / "ontology" / "generations.jsonl").read_text().splitlines():
        row = json.loads(line)
        if row["article_id"] == "a2" and row["attempt"] == 0:
            return row["output"]
    raise AssertionError("fixture row missing")


class TestParser:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["--version"])
        assert info.value.code == 0
        assert capsys.readouterr().out.strip() == f"textkg {__version__}"

    def test_no_command_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2

    def test_unknown_command_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        assert info.value.code == 2

    def test_bad_date_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(
                ["fetch", "--endpoint", "http://x", "--query", "q",
                 "--from", "02/01/2023", "--to", "2023-03-01", "-o", "out"]
            )
        assert info.value.code == 2


class TestChunk:
    def test_writes_batches(self, capsys, data_copy, tmp_path):
        out = tmp_path / "batches.jsonl"
        code, stdout, _ = run(
            capsys, "chunk", str(data_copy / "corpus_pipeline.jsonl"), "-o", str(out)
        )
        assert code == 0
        assert f"wrote 7 batches to {out}" in stdout
        rows = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(rows) == 7
        long_article = [r for r in rows if r["article_id"] == "a4"]
        assert [(r["token_start"], r["token_end"]) for r in long_article] == [
            (0, 256),
            (256, 512),
            (512, 600),
        ]

    def test_missing_corpus_is_stage_failure(self, capsys, tmp_path):
        code, _, stderr = run(
            capsys, "chunk", str(tmp_path / "nope.jsonl"), "-o", str(tmp_path / "out")
        )
        assert code == 1
        assert stderr.startswith("error:")


class TestValidate:
    def test_valid_file(self, capsys):
        code, stdout, _ = run(capsys, "validate", str(DATA_DIR / "soluna.ttl"))
        assert code == 0
        assert "valid (0 warning(s))" in stdout

    def test_undeclared_property_fails(self, capsys, tmp_path):
        path = tmp_path / "bad.ttl"
        path.write_text(invalid_ontology_text(), encoding="utf-8")
        code, stdout, _ = run(capsys, "validate", str(path))
        assert code == 1
        assert "[UndeclaredProperty]" in stdout
        assert "invalid (1 error(s))" in stdout

    def test_syntax_error_fails(self, capsys, tmp_path):
        path = tmp_path / "garbage.ttl"
        path.write_text("this is not turtle\n", encoding="utf-8")
        code, stdout, _ = run(capsys, "validate", str(path))
        assert code == 1
        assert "[ParseError]" in stdout


class TestTtl2kb:
    def test_converts_with_stem_as_source(self, capsys, tmp_path):
        out = tmp_path / "kb.json"
        code, stdout, _ = run(capsys, "ttl2kb", str(DATA_DIR / "soluna.ttl"), "-o", str(out))
        assert code == 0
        assert "(3 triples)" in stdout
        kb = load_kb(out)
        assert ("Soluna", "utilizes", "Excess Energy") in kb.triples
        provenance = {p.article_id for stamps in kb.triples.values() for p in stamps}
        assert provenance == {"soluna"}

    def test_source_id_override(self, capsys, tmp_path):
        out = tmp_path / "kb.json"
        code, _, _ = run(
            capsys, "ttl2kb", str(DATA_DIR / "soluna.ttl"),
            "--source-id", "doc-9", "--backend-id", "manual", "-o", str(out),
        )
        assert code == 0
        kb = load_kb(out)
        stamps = {(p.article_id, p.backend_id) for row in kb.triples.values() for p in row}
        assert stamps == {("doc-9", "manual")}

    def test_invalid_input_rejected(self, capsys, tmp_path):
        path = tmp_path / "bad.ttl"
        path.write_text(invalid_ontology_text(), encoding="utf-8")
        code, _, stderr = run(capsys, "ttl2kb", str(path), "-o", str(tmp_path / "kb.json"))
        assert code == 1
        assert "not a valid ontology" in stderr
        assert not (tmp_path / "kb.json").exists()


class TestStats:
    def test_counts(self, capsys):
        code, stdout, _ = run(capsys, "stats", str(GOLDEN_DIR / "triples" / "kb.json"))
        assert code == 0
        assert stdout.splitlines() == [
            "entities: 18",
            "predicates: 13",
            "triples: 13",
            "isolated entities: 0",
        ]

    def test_missing_kb_is_stage_failure(self, capsys, tmp_path):
        code, _, stderr = run(capsys, "stats", str(tmp_path / "nope.json"))
        assert code == 1
        assert stderr.startswith("error:")


class TestTopRelations:
    def test_frequency_then_alphabetical(self, capsys):
        code, stdout, _ = run(
            capsys, "top-relations", str(GOLDEN_DIR / "ontology" / "kb.json"), "-k", "2"
        )
        assert code == 0
        assert stdout.splitlines() == ["instanceOf\t11", "expands\t1"]


class TestExport:
    def test_stdout_matches_golden(self, capsys):
        code, stdout, _ = run(
            capsys, "export", str(GOLDEN_DIR / "triples" / "kb.json"), "--format", "dot"
        )
        assert code == 0
        assert stdout == (GOLDEN_DIR / "triples" / "export.dot").read_text(encoding="utf-8")

    def test_output_file(self, capsys, tmp_path):
        out = tmp_path / "graph.graphml"
        code, stdout, _ = run(
            capsys, "export", str(GOLDEN_DIR / "ontology" / "kb.json"),
            "--format", "graphml", "-o", str(out),
        )
        assert code == 0
        assert f"wrote graphml export to {out}" in stdout
        assert out.read_text(encoding="utf-8") == (
            GOLDEN_DIR / "ontology" / "export.graphml"
        ).read_text(encoding="utf-8")

    def test_class_membership_shapes_node_kinds(self, capsys):
        code, stdout, _ = run(
            capsys, "export", str(GOLDEN_DIR / "ontology" / "kb.json"), "--format", "dot"
        )
        assert code == 0
        assert '"Organizations" [kind="concept"];' in stdout
        assert '"Soluna" [kind="instance"];' in stdout

    def test_unknown_seed_is_stage_failure(self, capsys):
        code, _, stderr = run(
            capsys, "export", str(GOLDEN_DIR / "triples" / "kb.json"),
            "--format", "dot", "--seed", "Ghost",
        )
        assert code == 1
        assert "Ghost" in stderr


class TestMerge:
    def test_self_merge_is_identity(self, capsys, tmp_path):
        golden = GOLDEN_DIR / "triples" / "kb.json"
        out = tmp_path / "merged.json"
        code, stdout, _ = run(capsys, "merge", str(golden), str(golden), "-o", str(out))
        assert code == 0
        assert "(18 entities, 13 triples)" in stdout
        assert out.read_bytes() == golden.read_bytes()

    def test_cross_mode_merge(self, capsys, tmp_path):
        out = tmp_path / "merged.json"
        code, stdout, _ = run(
            capsys, "merge",
            str(GOLDEN_DIR / "triples" / "kb.json"),
            str(GOLDEN_DIR / "ontology" / "kb.json"),
            "-o", str(out),
        )
        assert code == 0
        # 5 entity labels are shared; no triple is (canonical labels differ)
        assert "(29 entities, 30 triples)" in stdout


class TestEval:
    def test_report_matches_golden(self, capsys, tmp_path):
        quality_config = tmp_path / "quality.json"
        quality_config.write_text(
            json.dumps({"conciseness_max_tokens": 4, "functional_predicates": ["industry"]}),
            encoding="utf-8",
        )
        out = tmp_path / "report.json"
        code, stdout, _ = run(
            capsys, "eval", str(GOLDEN_DIR / "triples" / "kb.json"),
            "--corpus", str(DATA_DIR / "corpus_pipeline.jsonl"),
            "--config", str(quality_config), "-o", str(out),
        )
        assert code == 0
        assert out.read_bytes() == (GOLDEN_DIR / "triples" / "quality.json").read_bytes()

    def test_default_prints_text_report(self, capsys):
        code, stdout, _ = run(
            capsys, "eval", str(GOLDEN_DIR / "triples" / "kb.json"),
            "--corpus", str(DATA_DIR / "corpus_pipeline.jsonl"),
        )
        assert code == 0
        assert stdout.startswith("quality report")
        assert "18." in stdout


class TestExtract:
    def test_triples_mode_matches_golden(self, capsys, data_copy, tmp_path):
        out = tmp_path / "triples.jsonl"
        code, stdout, _ = run(
            capsys, "extract", "--config", str(data_copy / "pipeline_triples.json"),
            "--backend", "replay-chat", "-o", str(out),
        )
        assert code == 0
        assert "wrote 13 triplets" in stdout
        assert "(2 segments skipped)" in stdout
        assert out.read_bytes() == (GOLDEN_DIR / "triples" / "triples.jsonl").read_bytes()

    def test_ontology_mode_writes_raw_documents(self, capsys, data_copy, tmp_path):
        out_dir = tmp_path / "ontologies"
        code, stdout, _ = run(
            capsys, "extract", "--config", str(data_copy / "pipeline_ontology.json"),
            "--backend", "replay-onto", "--mode", "ontology", "-o", str(out_dir),
        )
        assert code == 0
        assert "(1 invalid; see repair)" in stdout
        assert sorted(p.name for p in out_dir.glob("*.ttl")) == [
            "a1.ttl", "a2.ttl", "a3.ttl", "a4.ttl", "a5.ttl",
        ]
        report = json.loads((out_dir / "a2.report.json").read_text(encoding="utf-8"))
        assert report["errors"][0]["code"] == "UndeclaredProperty"
        clean = json.loads((out_dir / "a1.report.json").read_text(encoding="utf-8"))
        assert clean["errors"] == []

    def test_unknown_backend_is_config_error(self, capsys, data_copy, tmp_path):
        code, _, stderr = run(
            capsys, "extract", "--config", str(data_copy / "pipeline_triples.json"),
            "--backend", "ghost", "-o", str(tmp_path / "out.jsonl"),
        )
        assert code == 2
        assert stderr.startswith("config error:")


class TestLink:
    def test_rebuilds_golden_kb_from_triples_file(self, capsys, data_copy, tmp_path):
        out = tmp_path / "kb.json"
        code, stdout, _ = run(
            capsys, "link", str(GOLDEN_DIR / "triples" / "triples.jsonl"),
            "--config", str(data_copy / "pipeline_triples.json"), "-o", str(out),
        )
        assert code == 0
        assert "(18 entities, 6 linked)" in stdout
        assert out.read_bytes() == (GOLDEN_DIR / "triples" / "kb.json").read_bytes()


class TestRepair:
    def test_already_valid_writes_normalized_copy(self, capsys, data_copy, tmp_path):
        out = tmp_path / "fixed.ttl"
        code, stdout, _ = run(
            capsys, "repair", str(DATA_DIR / "soluna.ttl"),
            "--config", str(data_copy / "pipeline_ontology.json"),
            "--backend", "replay-onto", "-o", str(out),
        )
        assert code == 0
        assert "already valid" in stdout
        assert "@prefix ex:" in out.read_text(encoding="utf-8")

    def test_repairs_undeclared_property(self, capsys, data_copy, tmp_path):
        broken = tmp_path / "broken.ttl"
        broken.write_text(invalid_ontology_text(), encoding="utf-8")
        out = tmp_path / "fixed.ttl"
        code, stdout, _ = run(
            capsys, "repair", str(broken),
            "--config", str(data_copy / "pipeline_ontology.json"),
            "--backend", "replay-onto", "-o", str(out),
        )
        assert code == 0
        assert "repaired after 1 attempt(s)" in stdout
        assert out.read_bytes() == (GOLDEN_DIR / "ontology" / "ontologies" / "a2.ttl").read_bytes()

    def test_unrepairable_is_stage_failure(self, capsys, data_copy, tmp_path):
        broken = tmp_path / "novel.ttl"
        broken.write_text("@prefix ex: <http://example.org/x#> .\nex:a ex:b ex:c .\n")
        code, _, stderr = run(
            capsys, "repair", str(broken),
            "--config", str(data_copy / "pipeline_ontology.json"),
            "--backend", "replay-onto", "-o", str(tmp_path / "out.ttl"),
        )
        assert code == 1
        assert stderr.startswith("error:")


class TestPipelineCommand:
    def test_full_run(self, capsys, data_copy):
        code, stdout, _ = run(
            capsys, "pipeline", "--config", str(data_copy / "pipeline_triples.json")
        )
        assert code == 0
        assert "pipeline finished: 18 entities, 13 triples (mode triples)" in stdout
        assert (data_copy / "run_triples" / "manifest.json").exists()

    def test_stage_failure_exit_code(self, capsys, data_copy):
        (data_copy / "corpus_pipeline.jsonl").write_text("{broken\n", encoding="utf-8")
        code, _, stderr = run(
            capsys, "pipeline", "--config", str(data_copy / "pipeline_triples.json")
        )
        assert code == 1
        assert "stage 'corpus' failed" in stderr

    def test_config_error_exit_code(self, capsys, data_copy):
        config = data_copy / "pipeline_triples.json"
        data = json.loads(config.read_text())
        data["mystery"] = True
        config.write_text(json.dumps(data), encoding="utf-8")
        code, _, stderr = run(capsys, "pipeline", "--config", str(config))
        assert code == 2
        assert stderr.startswith("config error:")


class NewsHandler(BaseHTTPRequestHandler):
    def do_GET(self):
        parsed = urlparse(self.path)
        self.server.requests.append(
            {"params": parse_qs(parsed.query), "headers": dict(self.headers)}
        )
        status, payload = self.server.script.pop(0) if self.server.script else (200, "{}")
        data = payload.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture()
def news_server():
    httpd = ThreadingHTTPServer(("127.0.0.1", 0), NewsHandler)
    httpd.requests = []
    httpd.script = []
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    httpd.url = f"http://127.0.0.1:{httpd.server_port}/v2/everything"
    yield httpd
    httpd.shutdown()
    thread.join(timeout=5)


NEWS_PAYLOAD = json.dumps(
    {
        "articles": [
            {
                "url": "https://greenreport.example/soluna",
                "title": "Soluna soaks up excess energy",
                "content": "Soluna announced a plan in Kentucky.",
                "publishedAt": "2023-02-20T08:00:00Z",
                "source": {"name": "greenreport"},
            },
            {
                "url": "https://greenreport.example/soluna",
                "title": "duplicate url, dropped",
                "content": "x",
                "publishedAt": "2023-02-21T08:00:00Z",
            },
            {
                "url": "https://cafejournal.example/starbucks",
                "title": "No usable date",
                "content": "x",
                "publishedAt": "soonish",
            },
            {
                "title": "No url either",
                "description": "Body taken from the description field.",
                "publishedAt": "2023-02-22",
                "source": {"name": "wire"},
            },
        ]
    }
)


class TestFetch:
    def fetch_args(self, url: str, out: Path) -> list[str]:
        return [
            "fetch", "--endpoint", url, "--query", "sustainability",
            "--from", "2023-02-01", "--to", "2023-03-01", "-o", str(out),
        ]

    def test_writes_corpus_and_passes_query(self, capsys, news_server, tmp_path, monkeypatch):
        monkeypatch.delenv("TEXTKG_NEWS_API_KEY", raising=False)
        news_server.script.append((200, NEWS_PAYLOAD))
        out = tmp_path / "corpus.jsonl"
        code, stdout, _ = run(capsys, *self.fetch_args(news_server.url, out))
        assert code == 0
        assert "wrote 2 articles" in stdout

        request = news_server.requests[0]
        assert request["params"]["q"] == ["sustainability"]
        assert request["params"]["from"] == ["2023-02-01"]
        assert request["params"]["to"] == ["2023-03-01"]
        assert request["params"]["language"] == ["en"]
        assert "X-Api-Key" not in request["headers"]

        articles = load_corpus(out)
        assert [a.id for a in articles] == [
            "https://greenreport.example/soluna",
            "article-0003",
        ]
        assert articles[0].source_domain == "greenreport.example"
        assert articles[1].source_domain == "wire"
        assert articles[1].body == "Body taken from the description field."

    def test_api_key_from_environment_only(self, capsys, news_server, tmp_path, monkeypatch):
        monkeypatch.setenv("TEXTKG_NEWS_API_KEY", "sekrit")
        news_server.script.append((200, NEWS_PAYLOAD))
        code, _, _ = run(capsys, *self.fetch_args(news_server.url, tmp_path / "c.jsonl"))
        assert code == 0
        assert news_server.requests[0]["headers"]["X-Api-Key"] == "sekrit"

    def test_http_error_is_stage_failure(self, capsys, news_server, tmp_path, monkeypatch):
        monkeypatch.delenv("TEXTKG_NEWS_API_KEY", raising=False)
        news_server.script.append((500, "{}"))
        code, _, stderr = run(capsys, *self.fetch_args(news_server.url, tmp_path / "c.jsonl"))
        assert code == 1
        assert stderr.startswith("error: fetch failed")
