"""Entity linking against a lookup service, with caching and normalization.

Two mentions denote the same entity iff they resolve to the same canonical
IRI; mentions the service cannot resolve are merged only when their
normalized surfaces are equal. Predicates are never linked, only normalized.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .errors import TextkgError
from .extraction import Triplet

logger = logging.getLogger(__name__)

DEFAULT_TTL_SECONDS = 7 * 24 * 3600.0


class LookupUnavailableError(TextkgError):
    """The lookup service could not be reached or answered unusably."""


def normalize_surface(surface: str) -> str:
    """Trim, collapse internal whitespace, case-fold."""
    return " ".join(surface.split()).casefold()


@dataclass(frozen=True)
class LinkedEntity:
    """Resolution result for one surface form."""

    surface: str
    canonical_iri: str | None
    label: str
    status: str

    def __post_init__(self):
        if self.status not in ("linked", "unlinked"):
            raise ValueError(f"bad status {self.status!r}")
        if (self.status == "linked") != (self.canonical_iri is not None):
            raise ValueError("status must be linked exactly when an IRI is present")
        if not self.label:
            raise ValueError("label must be non-empty")


class LinkCache:
    """Lookup results keyed by normalized surface, with expiry.

    A cached entry, positive or negative, suppresses the network call until
    it expires. Entries store the IRI (None for negative results), the
    service label, and the fetch time.
    """

    def __init__(self, entries: dict[str, dict] | None = None, ttl_seconds: float = DEFAULT_TTL_SECONDS):
        self.entries = entries if entries is not None else {}
        self.ttl_seconds = ttl_seconds

    def get(self, surface: str, now: float | None = None) -> dict | None:
        key = normalize_surface(surface)
        entry = self.entries.get(key)
        if entry is None:
            return None
        now = time.time() if now is None else now
        if now - entry["fetched_at"] > self.ttl_seconds:
            return None
        return entry

    def put(self, surface: str, iri: str | None, label: str | None, now: float | None = None) -> None:
        key = normalize_surface(surface)
        now = time.time() if now is None else now
        self.entries[key] = {"iri": iri, "label": label, "fetched_at": now}

    @classmethod
    def load(cls, path: str | Path, ttl_seconds: float = DEFAULT_TTL_SECONDS) -> LinkCache:
        path = Path(path)
        if not path.exists():
            return cls(ttl_seconds=ttl_seconds)
        with path.open(encoding="utf-8") as handle:
            return cls(entries=json.load(handle), ttl_seconds=ttl_seconds)

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as handle:
            json.dump(self.entries, handle, ensure_ascii=False, indent=2, sort_keys=True)
            handle.write("\n")


class LookupClient:
    """HTTP client for a lookup endpoint returning ranked {uri, label} results."""

    def __init__(self, base_url: str, *, query_param: str = "query", max_results: int = 5, timeout: float = 10.0):
        self.base_url = base_url
        self.query_param = query_param
        self.max_results = max_results
        self.timeout = timeout

    def lookup(self, query: str) -> list[dict]:
        params = {self.query_param: query, "maxResults": str(self.max_results)}
        try:
            response = requests.get(
                self.base_url, params=params, headers={"Accept": "application/json"}, timeout=self.timeout
            )
            response.raise_for_status()
            payload = response.json()
        except requests.RequestException as exc:
            raise LookupUnavailableError(f"lookup failed: {exc}") from exc
        except ValueError as exc:
            raise LookupUnavailableError(f"non-JSON lookup response: {exc}") from exc
        return _ranked_results(payload)


class FileLookupClient:
    """Lookup stub backed by a JSON file mapping normalized query → result list.

    Keeps linking fully offline and deterministic for tests and replay runs.
    """

    def __init__(self, path: str | Path):
        with Path(path).open(encoding="utf-8") as handle:
            raw = json.load(handle)
        self.table = {normalize_surface(key): _ranked_results(value) for key, value in raw.items()}

    def lookup(self, query: str) -> list[dict]:
        return self.table.get(normalize_surface(query), [])


def _ranked_results(payload: object) -> list[dict]:
    """Normalize a lookup response to a ranked list of {uri, label} dicts."""
    if isinstance(payload, dict):
        payload = payload.get("results") or payload.get("docs") or []
    results = []
    if isinstance(payload, list):
        for item in payload:
            if not isinstance(item, dict):
                continue
            uri = item.get("uri") or item.get("resource")
            label = item.get("label")
            if isinstance(uri, list):
                uri = uri[0] if uri else None
            if isinstance(label, list):
                label = label[0] if label else None
            if uri and label:
                results.append({"uri": str(uri), "label": str(label)})
    return results


def _label_matches(query_normalized: str, result_label: str, match: str) -> bool:
    candidate = normalize_surface(result_label)
    if match == "exact":
        return candidate == query_normalized
    if match == "prefix":
        return candidate.startswith(query_normalized)
    raise ValueError(f"unknown match rule {match!r}")


def link_entity(
    surface: str,
    client,
    cache: LinkCache | None = None,
    *,
    match: str = "exact",
    on_error: str = "fallback",
    now: float | None = None,
) -> LinkedEntity:
    """Resolve one surface form to a canonical IRI, or return it unlinked.

    The top-ranked lookup result is accepted only if its label matches the
    normalized query under the match rule ("exact" equality by default,
    "prefix" to relax). Results, including misses, are cached. A lookup
    outage falls back to unlinked (on_error="fallback") or raises
    (on_error="abort"); outages are never cached as misses.
    """
    if not surface.strip():
        raise ValueError("surface must be non-empty")
    if on_error not in ("fallback", "abort"):
        raise ValueError(f"on_error must be 'fallback' or 'abort', got {on_error!r}")
    normalized = normalize_surface(surface)

    if cache is not None:
        entry = cache.get(normalized, now)
        if entry is not None:
            if entry["iri"]:
                return LinkedEntity(surface, entry["iri"], entry["label"] or normalized, "linked")
            return LinkedEntity(surface, None, normalized, "unlinked")

    if client is None:
        return LinkedEntity(surface, None, normalized, "unlinked")

    try:
        results = client.lookup(normalized)
    except LookupUnavailableError:
        if on_error == "abort":
            raise
        logger.warning("lookup unavailable, leaving %r unlinked", surface)
        return LinkedEntity(surface, None, normalized, "unlinked")

    if results:
        top = results[0]
        if _label_matches(normalized, top["label"], match):
            label = " ".join(top["label"].split())
            if cache is not None:
                cache.put(normalized, top["uri"], label, now)
            return LinkedEntity(surface, top["uri"], label, "linked")
    if cache is not None:
        cache.put(normalized, None, None, now)
    return LinkedEntity(surface, None, normalized, "unlinked")


def canonicalize(
    triplets: list[Triplet],
    client=None,
    cache: LinkCache | None = None,
    *,
    match: str = "exact",
    on_error: str = "fallback",
    now: float | None = None,
) -> tuple[list[Triplet], dict[str, LinkedEntity]]:
    """Rewrite subjects and objects to canonical labels; return the entity table.

    Mentions resolving to the same IRI collapse into one entity under the
    service's label; unresolved mentions collapse by normalized surface.
    Predicates are normalized only. No triple is dropped or duplicated, and
    the operation is idempotent. With no client the rewrite degrades to pure
    normalization.
    """
    resolved: dict[str, LinkedEntity] = {}
    iri_labels: dict[str, str] = {}
    table: dict[str, LinkedEntity] = {}

    def canonical_label(surface: str) -> str:
        normalized = normalize_surface(surface)
        entity = resolved.get(normalized)
        if entity is None:
            entity = link_entity(surface, client, cache, match=match, on_error=on_error, now=now)
            resolved[normalized] = entity
        if entity.canonical_iri is not None:
            # first label seen for an IRI wins, so co-linked mentions agree
            label = iri_labels.setdefault(entity.canonical_iri, entity.label)
            table.setdefault(label, LinkedEntity(entity.surface, entity.canonical_iri, label, "linked"))
            return label
        table.setdefault(entity.label, entity)
        return entity.label

    rewritten = [
        Triplet(
            canonical_label(t.subject),
            normalize_surface(t.predicate),
            canonical_label(t.object),
            t.provenance,
        )
        for t in triplets
    ]
    return rewritten, table
