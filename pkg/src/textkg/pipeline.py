"""End-to-end pipeline: one JSON config in, a directory of artifacts out.

Every stage writes its output to a file in the run directory, so any stage
can be re-run or inspected on its own, and a failed run keeps its partial
artifacts. Two runs from the same config and fixtures produce byte-identical
artifacts; the manifest records the config hash and per-stage counts and
deliberately contains no timestamps.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .chunking import chunk, whitespace_tokenize
from .corpus import Article, corpus_report, filter_by_date, load_corpus
from .errors import ConfigError, TextkgError
from .export import ExportOptions, export_graph
from .extraction import (
    BackendConfig,
    ParseReport,
    RateLimiter,
    Triplet,
    build_prompt,
    extract_article,
    generate,
)
from .kgstore import KnowledgeBase, add_triples, merge, save_kb, stats
from .linking import FileLookupClient, LinkCache, LookupClient, canonicalize
from .quality import QualityConfig, evaluate, load_lexicon, render_report, save_report
from .rdf import ontology_to_kb, repair_until_valid, serialize_turtle

logger = logging.getLogger(__name__)

MODES = ("triples", "ontology")


class StageError(TextkgError):
    """A pipeline stage failed; the message names the stage."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


@dataclass(frozen=True)
class LinkingSettings:
    endpoint: str | None = None
    fixture_file: str | None = None
    cache_path: str | None = None
    match: str = "exact"
    on_error: str = "fallback"

    def identity(self) -> str:
        source = self.endpoint or self.fixture_file or "offline"
        return f"match={self.match};source={source}"


@dataclass(frozen=True)
class ExportSettings:
    formats: tuple[str, ...] = ("dot", "graphml", "json")
    max_nodes: int | None = 150
    seed_entity: str | None = None
    radius: int = 2

    def options(self) -> ExportOptions:
        return ExportOptions(
            max_nodes=self.max_nodes, seed_entity=self.seed_entity, radius=self.radius
        )


@dataclass
class PipelineConfig:
    mode: str
    corpus: str
    run_dir: str
    backend_id: str
    backends: dict[str, BackendConfig]
    base_dir: Path
    config_hash: str
    batch_size: int = 256
    workers: int = 1
    rate_limit_per_second: float | None = None
    on_batch_error: str = "fail"
    date_from: dt.date | None = None
    date_to: dt.date | None = None
    linking: LinkingSettings = field(default_factory=LinkingSettings)
    quality: QualityConfig = field(default_factory=QualityConfig)
    export: ExportSettings = field(default_factory=ExportSettings)
    max_repair_attempts: int = 3

    @property
    def backend(self) -> BackendConfig:
        return self.backends[self.backend_id]

    def resolve(self, path: str) -> Path:
        candidate = Path(path)
        return candidate if candidate.is_absolute() else self.base_dir / candidate


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _check_keys(data: dict, allowed: set[str], context: str) -> None:
    unknown = sorted(set(data) - allowed)
    _require(not unknown, f"{context}: unknown key(s) {', '.join(unknown)}")


_TOP_KEYS = {
    "mode",
    "corpus",
    "run_dir",
    "backend_id",
    "backends",
    "batch_size",
    "workers",
    "rate_limit_per_second",
    "on_batch_error",
    "date_from",
    "date_to",
    "linking",
    "quality",
    "export",
    "max_repair_attempts",
}
_BACKEND_KEYS = {
    "backend_id",
    "kind",
    "endpoint",
    "model_name",
    "temperature",
    "max_input_tokens",
    "request_timeout",
    "max_retries",
    "fixtures_dir",
    "replay_mode",
}
_LINKING_KEYS = {"endpoint", "fixture_file", "cache_path", "match", "on_error"}
_QUALITY_KEYS = {"conciseness_max_tokens", "functional_predicates", "domain_lexicon_file"}
_EXPORT_KEYS = {"formats", "max_nodes", "seed_entity", "radius"}


def _parse_date(value: object, key: str) -> dt.date | None:
    if value is None:
        return None
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError as exc:
        raise ConfigError(f"config key '{key}': {exc}") from exc


def load_config(path: str | Path) -> PipelineConfig:
    """Read, validate, and resolve the single pipeline config file.

    Relative paths inside the file are resolved against the file's own
    directory, so a config can travel with its fixtures.
    """
    path = Path(path)
    try:
        raw_bytes = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(raw_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    _require(isinstance(data, dict), "config root must be a JSON object")
    _check_keys(data, _TOP_KEYS, "config")

    mode = data.get("mode")
    _require(mode in MODES, f"config key 'mode': must be one of {', '.join(MODES)}")
    for key in ("corpus", "run_dir", "backend_id"):
        _require(isinstance(data.get(key), str) and data[key], f"config key '{key}': required string")

    backends_raw = data.get("backends")
    _require(
        isinstance(backends_raw, list) and backends_raw,
        "config key 'backends': required non-empty list",
    )
    base_dir = path.parent.resolve()
    backends: dict[str, BackendConfig] = {}
    for index, entry in enumerate(backends_raw):
        context = f"config key 'backends[{index}]'"
        _require(isinstance(entry, dict), f"{context}: must be an object")
        _check_keys(entry, _BACKEND_KEYS, context)
        entry = dict(entry)
        fixtures_dir = entry.get("fixtures_dir")
        if isinstance(fixtures_dir, str) and fixtures_dir:
            candidate = Path(fixtures_dir)
            entry["fixtures_dir"] = str(candidate if candidate.is_absolute() else base_dir / candidate)
        try:
            backend = BackendConfig(**entry)
        except (TypeError, ConfigError) as exc:
            raise ConfigError(f"{context}: {exc}") from exc
        _require(backend.backend_id not in backends, f"{context}: duplicate backend_id")
        backends[backend.backend_id] = backend
    _require(
        data["backend_id"] in backends,
        f"config key 'backend_id': {data['backend_id']!r} is not in the backends table",
    )

    linking_raw = data.get("linking", {})
    _require(isinstance(linking_raw, dict), "config key 'linking': must be an object")
    _check_keys(linking_raw, _LINKING_KEYS, "config key 'linking'")
    linking = LinkingSettings(
        endpoint=linking_raw.get("endpoint"),
        fixture_file=linking_raw.get("fixture_file"),
        cache_path=linking_raw.get("cache_path"),
        match=linking_raw.get("match", "exact"),
        on_error=linking_raw.get("on_error", "fallback"),
    )
    _require(linking.match in ("exact", "prefix"), "config key 'linking.match': exact or prefix")
    _require(
        linking.on_error in ("fallback", "abort"),
        "config key 'linking.on_error': fallback or abort",
    )

    quality_raw = data.get("quality", {})
    _require(isinstance(quality_raw, dict), "config key 'quality': must be an object")
    _check_keys(quality_raw, _QUALITY_KEYS, "config key 'quality'")
    lexicon_file = quality_raw.get("domain_lexicon_file")
    try:
        quality_kwargs = {
            "conciseness_max_tokens": quality_raw.get("conciseness_max_tokens", 4),
            "functional_predicates": tuple(quality_raw.get("functional_predicates", ())),
        }
        if lexicon_file:
            candidate = Path(lexicon_file)
            resolved = candidate if candidate.is_absolute() else base_dir / candidate
            quality_kwargs["domain_lexicon"] = load_lexicon(resolved)
        quality = QualityConfig(**quality_kwargs)
    except (TypeError, ValueError, OSError) as exc:
        raise ConfigError(f"config key 'quality': {exc}") from exc

    export_raw = data.get("export", {})
    _require(isinstance(export_raw, dict), "config key 'export': must be an object")
    _check_keys(export_raw, _EXPORT_KEYS, "config key 'export'")
    formats = tuple(export_raw.get("formats", ("dot", "graphml", "json")))
    _require(
        all(f in ("dot", "graphml", "json") for f in formats) and formats,
        "config key 'export.formats': list drawn from dot, graphml, json",
    )
    try:
        export = ExportSettings(
            formats=formats,
            max_nodes=export_raw.get("max_nodes", 150),
            seed_entity=export_raw.get("seed_entity"),
            radius=export_raw.get("radius", 2),
        )
        export.options()
    except ValueError as exc:
        raise ConfigError(f"config key 'export': {exc}") from exc

    batch_size = data.get("batch_size", 256)
    _require(isinstance(batch_size, int) and batch_size > 0, "config key 'batch_size': positive integer")
    workers = data.get("workers", 1)
    _require(isinstance(workers, int) and workers >= 1, "config key 'workers': integer >= 1")
    rate = data.get("rate_limit_per_second")
    _require(
        rate is None or (isinstance(rate, (int, float)) and rate > 0),
        "config key 'rate_limit_per_second': positive number or null",
    )
    on_batch_error = data.get("on_batch_error", "fail")
    _require(on_batch_error in ("fail", "skip"), "config key 'on_batch_error': fail or skip")
    max_repair_attempts = data.get("max_repair_attempts", 3)
    _require(
        isinstance(max_repair_attempts, int) and max_repair_attempts >= 1,
        "config key 'max_repair_attempts': integer >= 1",
    )
    date_from = _parse_date(data.get("date_from"), "date_from")
    date_to = _parse_date(data.get("date_to"), "date_to")

    return PipelineConfig(
        mode=mode,
        corpus=data["corpus"],
        run_dir=data["run_dir"],
        backend_id=data["backend_id"],
        backends=backends,
        base_dir=base_dir,
        config_hash=hashlib.sha256(raw_bytes).hexdigest(),
        batch_size=batch_size,
        workers=workers,
        rate_limit_per_second=rate,
        on_batch_error=on_batch_error,
        date_from=date_from,
        date_to=date_to,
        linking=linking,
        quality=quality,
        export=export,
        max_repair_attempts=max_repair_attempts,
    )


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False, sort_keys=True))
            handle.write("\n")


def _safe_name(article_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", article_id)


def _provenance_dict(provenance) -> dict:
    return {
        "article_id": provenance.article_id,
        "batch_index": provenance.batch_index,
        "backend_id": provenance.backend_id,
    }


def make_lookup_client(settings: LinkingSettings, resolve) -> object | None:
    if settings.fixture_file:
        return FileLookupClient(resolve(settings.fixture_file))
    if settings.endpoint:
        return LookupClient(settings.endpoint)
    return None


def run_pipeline(config_path: str | Path) -> dict:
    """Run every stage for the configured mode; returns the manifest."""
    config = load_config(config_path)
    run_dir = config.resolve(config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"config_hash": config.config_hash, "mode": config.mode, "stages": {}}
    stages = manifest["stages"]
    limiter = (
        RateLimiter(config.rate_limit_per_second) if config.rate_limit_per_second else None
    )

    try:
        articles = load_corpus(config.resolve(config.corpus))
        if config.date_from and config.date_to:
            articles = filter_by_date(articles, config.date_from, config.date_to)
        report = corpus_report(articles)
        stages["corpus"] = {
            "articles": report.article_count,
            "empty_bodies": len(report.empty_body_ids),
        }
    except TextkgError as exc:
        raise StageError("corpus", exc) from exc

    try:
        batch_rows = []
        for article in articles:
            for batch in chunk(article, whitespace_tokenize, config.batch_size):
                batch_rows.append(
                    {
                        "article_id": batch.article_id,
                        "batch_index": batch.batch_index,
                        "token_start": batch.token_start,
                        "token_end": batch.token_end,
                        "text": batch.text,
                    }
                )
        _write_jsonl(run_dir / "batches.jsonl", batch_rows)
        stages["chunk"] = {"batches": len(batch_rows)}
    except TextkgError as exc:
        raise StageError("chunk", exc) from exc

    if config.mode == "triples":
        kb = _run_triples_stages(config, articles, run_dir, stages, limiter)
    else:
        kb = _run_ontology_stages(config, articles, run_dir, stages, limiter)

    try:
        kb_stats = stats(kb)
        save_kb(kb, run_dir / "kb.json")
        stages["kb"] = {
            "entities": kb_stats.entity_count,
            "predicates": kb_stats.predicate_count,
            "triples": kb_stats.triple_count,
            "isolated_entities": kb_stats.isolated_entity_count,
        }
    except TextkgError as exc:
        raise StageError("kb", exc) from exc

    try:
        quality_report = evaluate(kb, articles, config.quality)
        save_report(quality_report, run_dir / "quality.json")
        (run_dir / "quality.txt").write_text(render_report(quality_report), encoding="utf-8")
        stages["quality"] = {
            "principles": len(quality_report.principles),
            "warnings": len(quality_report.warnings),
        }
    except TextkgError as exc:
        raise StageError("quality", exc) from exc

    try:
        for format_name in config.export.formats:
            text = export_graph(kb, format_name, config.export.options())
            (run_dir / f"export.{format_name}").write_text(text, encoding="utf-8")
        stages["export"] = {"formats": list(config.export.formats)}
    except TextkgError as exc:
        raise StageError("export", exc) from exc

    with (run_dir / "manifest.json").open("w", encoding="utf-8") as handle:
        json.dump(manifest, handle, ensure_ascii=False, indent=2, sort_keys=True)
        handle.write("\n")
    return manifest


def _run_triples_stages(
    config: PipelineConfig,
    articles: list[Article],
    run_dir: Path,
    stages: dict,
    limiter: RateLimiter | None,
) -> KnowledgeBase:
    backend = config.backend

    def extract_one(article: Article) -> tuple[list[Triplet], ParseReport, list[dict]]:
        rows: list[dict] = []

        def on_generation(batch_index: int | None, output: str) -> None:
            rows.append(
                {"article_id": article.id, "batch_index": batch_index, "output": output}
            )

        triplets, parse_report = extract_article(
            article,
            backend,
            whitespace_tokenize,
            batch_size=config.batch_size,
            on_batch_error=config.on_batch_error,
            limiter=limiter,
            on_generation=on_generation,
        )
        return triplets, parse_report, rows

    try:
        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                results = list(pool.map(extract_one, articles))
        else:
            results = [extract_one(article) for article in articles]
        all_triplets: list[Triplet] = []
        total_report = ParseReport()
        generation_rows: list[dict] = []
        for triplets, parse_report, rows in results:
            all_triplets.extend(triplets)
            total_report.extend(parse_report)
            generation_rows.extend(rows)
        _write_jsonl(run_dir / "generations.jsonl", generation_rows)
        _write_jsonl(
            run_dir / "triples.jsonl",
            [
                {
                    "subject": t.subject,
                    "predicate": t.predicate,
                    "object": t.object,
                    "provenance": [_provenance_dict(t.provenance)] if t.provenance else [],
                }
                for t in all_triplets
            ],
        )
        stages["extract"] = {
            "triplets_parsed": total_report.triplets_emitted,
            "segments_skipped": total_report.segments_skipped,
            "failed_batches": len(total_report.failed_batches),
        }
    except TextkgError as exc:
        raise StageError("extract", exc) from exc

    try:
        client = make_lookup_client(config.linking, config.resolve)
        cache = (
            LinkCache.load(config.resolve(config.linking.cache_path))
            if config.linking.cache_path
            else None
        )
        linked, table = canonicalize(
            all_triplets,
            client,
            cache,
            match=config.linking.match,
            on_error=config.linking.on_error,
        )
        if cache is not None and config.linking.cache_path:
            cache.save(config.resolve(config.linking.cache_path))
        kb = add_triples(KnowledgeBase(link_config=config.linking.identity()), linked)
        for label, entity in table.items():
            kb.add_entity(label)
            if entity.canonical_iri is not None:
                kb.entity_links[label] = entity.canonical_iri
        stages["link"] = {
            "entities": len(table),
            "linked": sum(1 for entity in table.values() if entity.canonical_iri),
        }
        return kb
    except TextkgError as exc:
        raise StageError("link", exc) from exc


def _run_ontology_stages(
    config: PipelineConfig,
    articles: list[Article],
    run_dir: Path,
    stages: dict,
    limiter: RateLimiter | None,
) -> KnowledgeBase:
    backend = config.backend
    ontology_dir = run_dir / "ontologies"
    ontology_dir.mkdir(parents=True, exist_ok=True)

    def complete(prompt: str) -> str:
        return generate(backend, prompt, limiter=limiter)

    def ontology_one(article: Article):
        if not article.body.split():
            return None, []
        prompt = build_prompt(article.body, "ontology")
        return repair_until_valid(prompt, complete, config.max_repair_attempts)

    try:
        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                results = list(pool.map(ontology_one, articles))
        else:
            results = [ontology_one(article) for article in articles]

        generation_rows: list[dict] = []
        triple_rows: list[dict] = []
        kb = KnowledgeBase()
        documents = 0
        valid_documents = 0
        repair_attempts = 0
        invalid_ids: list[str] = []
        for article, (doc, attempts) in zip(articles, results):
            if not attempts:
                continue
            documents += 1
            repair_attempts += len(attempts) - 1
            name = _safe_name(article.id)
            for attempt_index, attempt in enumerate(attempts):
                generation_rows.append(
                    {
                        "article_id": article.id,
                        "attempt": attempt_index,
                        "output": attempt.output,
                    }
                )
            report_payload = {
                "article_id": article.id,
                "valid": doc is not None,
                "repair_attempts": len(attempts) - 1,
                "attempts": [attempt.report.to_dict() for attempt in attempts],
            }
            with (ontology_dir / f"{name}.report.json").open("w", encoding="utf-8") as handle:
                json.dump(report_payload, handle, ensure_ascii=False, indent=2, sort_keys=True)
                handle.write("\n")
            if doc is None:
                invalid_ids.append(article.id)
                logger.warning(
                    "article %s: no valid ontology after %d attempt(s)", article.id, len(attempts)
                )
                continue
            valid_documents += 1
            (ontology_dir / f"{name}.ttl").write_text(serialize_turtle(doc), encoding="utf-8")
            article_kb = ontology_to_kb(doc, source_id=article.id, backend_id=backend.backend_id)
            triple_rows.extend(article_kb.to_dict()["triples"])
            kb = merge(kb, article_kb)
        _write_jsonl(run_dir / "generations.jsonl", generation_rows)
        _write_jsonl(run_dir / "triples.jsonl", triple_rows)
        stages["ontology"] = {
            "documents": documents,
            "valid_documents": valid_documents,
            "repair_attempts": repair_attempts,
            "invalid_article_ids": invalid_ids,
        }
        return kb
    except TextkgError as exc:
        raise StageError("ontology", exc) from exc
