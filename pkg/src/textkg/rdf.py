"""Turtle-subset parser, serializer, OWL declaration checks, repair prompts.

The accepted subset covers what flat generated ontologies use: @prefix
directives, IRIs in angle brackets, prefixed names, the `a` keyword,
predicate lists with `;`, object lists with `,`, `.` terminators, string
literals with optional language tags, and `#` comments. Blank nodes,
collections, multiline and typed literals, numbers, and @base are outside
the subset and produce a located ParseError instead of a guess.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

from .errors import TextkgError
from .extraction import Provenance, Triplet
from .kgstore import KnowledgeBase

RDF_NS = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
RDFS_NS = "http://www.w3.org/2000/01/rdf-schema#"
OWL_NS = "http://www.w3.org/2002/07/owl#"
XSD_NS = "http://www.w3.org/2001/XMLSchema#"
STANDARD_NAMESPACES = (RDF_NS, RDFS_NS, OWL_NS, XSD_NS)

DEFAULT_PREFIXES = {"rdf": RDF_NS, "rdfs": RDFS_NS, "owl": OWL_NS, "xsd": XSD_NS}

RDF_TYPE = RDF_NS + "type"
RDFS_LABEL = RDFS_NS + "label"
_CLASS_TYPES = (OWL_NS + "Class", RDFS_NS + "Class")
_OBJECT_PROPERTY = OWL_NS + "ObjectProperty"
_DATA_PROPERTY_TYPES = (OWL_NS + "DatatypeProperty", OWL_NS + "AnnotationProperty")
_NAMED_INDIVIDUAL = OWL_NS + "NamedIndividual"
_ONTOLOGY = OWL_NS + "Ontology"

_LOCAL_RE = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_-]*\Z")
_PREFIX_RE = re.compile(r"[A-Za-z][A-Za-z0-9_-]*\Z")


class NoErrorsError(TextkgError):
    """A repair prompt was requested for a report with no errors."""


class InvalidDocError(TextkgError):
    """An ontology with validation errors was passed where a valid one is required."""


@dataclass(frozen=True)
class Literal:
    text: str
    lang: str | None = None


@dataclass(frozen=True)
class Issue:
    code: str
    message: str
    location: str = ""

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message, "location": self.location}


@dataclass
class ValidationReport:
    errors: list[Issue] = field(default_factory=list)
    warnings: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "errors": [issue.to_dict() for issue in self.errors],
            "warnings": [issue.to_dict() for issue in self.warnings],
        }


@dataclass
class OntologyDoc:
    """Parsed ontology content. All IRIs are stored fully expanded; labels
    holds rdfs:label text per IRI (first label wins)."""

    prefixes: dict[str, str] = field(default_factory=dict)
    classes: set[str] = field(default_factory=set)
    object_properties: set[str] = field(default_factory=set)
    data_properties: set[str] = field(default_factory=set)
    individuals: set[str] = field(default_factory=set)
    class_assertions: set[tuple[str, str]] = field(default_factory=set)
    property_assertions: set[tuple[str, str, str | Literal]] = field(default_factory=set)
    labels: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.prefixes = {**DEFAULT_PREFIXES, **self.prefixes}


def local_name(iri: str) -> str:
    """Fragment after '#', else the last path segment, else the IRI itself."""
    for separator in ("#", "/", ":"):
        head, found, tail = iri.rpartition(separator)
        if found and tail:
            return tail
    return iri


def _is_standard(iri: str) -> bool:
    return iri.startswith(STANDARD_NAMESPACES)


# ---------------------------------------------------------------------------
# Tokenizer


@dataclass(frozen=True)
class _Token:
    kind: str  # prefix_directive | iri | pname | a | string | dot | semi | comma | eof
    value: object
    line: int
    col: int


class _ParseAbort(Exception):
    def __init__(self, message: str, line: int, col: int):
        self.message = message
        self.location = f"line {line}, column {col}"
        super().__init__(f"{self.location}: {message}")


_ESCAPES = {"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t"}
_PNAME_CHARS = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-")


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos, line, col = 0, 1, 1
    length = len(text)

    def abort(message: str, at_line: int | None = None, at_col: int | None = None):
        raise _ParseAbort(message, at_line if at_line is not None else line, at_col if at_col is not None else col)

    while pos < length:
        char = text[pos]
        if char == "\n":
            pos, line, col = pos + 1, line + 1, 1
            continue
        if char in " \t\r":
            pos, col = pos + 1, col + 1
            continue
        if char == "#":
            while pos < length and text[pos] != "\n":
                pos += 1
            continue
        start_line, start_col = line, col
        if char == "<":
            end = text.find(">", pos + 1)
            if end == -1 or "\n" in text[pos:end]:
                abort("unterminated IRI reference")
            value = text[pos + 1 : end]
            tokens.append(_Token("iri", value, start_line, start_col))
            col += end + 1 - pos
            pos = end + 1
            continue
        if char == '"':
            if text.startswith('"""', pos):
                abort("multiline literals are not supported")
            pos, col = pos + 1, col + 1
            chars: list[str] = []
            while True:
                if pos >= length or text[pos] == "\n":
                    abort("unterminated string literal", start_line, start_col)
                current = text[pos]
                if current == "\\":
                    if pos + 1 >= length:
                        abort("dangling escape at end of input")
                    escape = text[pos + 1]
                    if escape not in _ESCAPES:
                        abort(f"unsupported escape '\\{escape}'")
                    chars.append(_ESCAPES[escape])
                    pos, col = pos + 2, col + 2
                    continue
                if current == '"':
                    pos, col = pos + 1, col + 1
                    break
                chars.append(current)
                pos, col = pos + 1, col + 1
            if text.startswith("^^", pos):
                abort("typed literals are not supported")
            lang = None
            if pos < length and text[pos] == "@":
                pos, col = pos + 1, col + 1
                lang_start = pos
                while pos < length and (text[pos].isalnum() or text[pos] == "-"):
                    pos, col = pos + 1, col + 1
                lang = text[lang_start:pos]
                if not lang:
                    abort("empty language tag")
            tokens.append(_Token("string", Literal("".join(chars), lang), start_line, start_col))
            continue
        if char == "@":
            word_start = pos + 1
            word_end = word_start
            while word_end < length and text[word_end].isalpha():
                word_end += 1
            word = text[word_start:word_end]
            if word == "prefix":
                tokens.append(_Token("prefix_directive", "@prefix", start_line, start_col))
                col += word_end - pos
                pos = word_end
                continue
            if word == "base":
                abort("@base is not supported")
            abort(f"unknown directive '@{word}'")
        if char == ".":
            tokens.append(_Token("dot", ".", start_line, start_col))
            pos, col = pos + 1, col + 1
            continue
        if char == ";":
            tokens.append(_Token("semi", ";", start_line, start_col))
            pos, col = pos + 1, col + 1
            continue
        if char == ",":
            tokens.append(_Token("comma", ",", start_line, start_col))
            pos, col = pos + 1, col + 1
            continue
        if char in "[]":
            abort("blank nodes are not supported")
        if char in "()":
            abort("collections are not supported")
        if char.isdigit() or (char in "+-" and pos + 1 < length and text[pos + 1].isdigit()):
            abort("numeric literals are not supported")
        if char == "_" and pos + 1 < length and text[pos + 1] == ":":
            abort("blank nodes are not supported")
        if char == ":" or char.isalpha() or char == "_":
            word_end = pos
            while word_end < length and text[word_end] in _PNAME_CHARS:
                word_end += 1
            word = text[pos:word_end]
            if word_end < length and text[word_end] == ":":
                local_start = word_end + 1
                local_end = local_start
                while local_end < length and text[local_end] in _PNAME_CHARS:
                    local_end += 1
                local = text[local_start:local_end]
                tokens.append(_Token("pname", (word, local), start_line, start_col))
                col += local_end - pos
                pos = local_end
                continue
            if word == "a":
                tokens.append(_Token("a", "a", start_line, start_col))
                col += word_end - pos
                pos = word_end
                continue
            abort(f"unexpected word {word!r}" if word else f"unexpected character {char!r}")
        abort(f"unexpected character {char!r}")
    tokens.append(_Token("eof", None, line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.index = 0
        self.doc = OntologyDoc()
        self.prefix_errors: dict[str, Issue] = {}

    def peek(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        token = self.tokens[self.index]
        if token.kind != "eof":
            self.index += 1
        return token

    def abort(self, message: str, token: _Token):
        raise _ParseAbort(message, token.line, token.col)

    def expect(self, kind: str, what: str) -> _Token:
        token = self.advance()
        if token.kind != kind:
            self.abort(f"expected {what}, found {_describe(token)}", token)
        return token

    def resolve(self, token: _Token) -> str:
        if token.kind == "iri":
            return str(token.value)
        prefix, local = token.value  # pname
        base = self.doc.prefixes.get(prefix)
        if base is None:
            display = f"{prefix}:"
            if display not in self.prefix_errors:
                self.prefix_errors[display] = Issue(
                    "UndefinedPrefix",
                    f"prefix '{display}' is used but never declared",
                    f"line {token.line}, column {token.col}",
                )
            return f"urn:undeclared:{prefix}:{local}"
        return base + local

    def parse(self) -> OntologyDoc:
        while True:
            token = self.peek()
            if token.kind == "eof":
                break
            if token.kind == "prefix_directive":
                self.advance()
                self.parse_prefix()
                continue
            self.parse_statement()
        return self.doc

    def parse_prefix(self) -> None:
        name_token = self.expect("pname", "a prefix name like 'ex:'")
        prefix, local = name_token.value
        if local:
            self.abort(f"prefix declaration must end with ':', got '{prefix}:{local}'", name_token)
        iri_token = self.expect("iri", "an IRI in angle brackets")
        self.expect("dot", "'.'")
        self.doc.prefixes[prefix] = str(iri_token.value)

    def parse_statement(self) -> None:
        subject_token = self.advance()
        if subject_token.kind not in ("iri", "pname"):
            self.abort(f"expected a subject IRI, found {_describe(subject_token)}", subject_token)
        subject = self.resolve(subject_token)
        while True:
            verb_token = self.advance()
            if verb_token.kind == "a":
                predicate = RDF_TYPE
            elif verb_token.kind in ("iri", "pname"):
                predicate = self.resolve(verb_token)
            else:
                self.abort(f"expected a predicate, found {_describe(verb_token)}", verb_token)
            while True:
                object_token = self.advance()
                if object_token.kind in ("iri", "pname"):
                    obj: str | Literal = self.resolve(object_token)
                elif object_token.kind == "string":
                    obj = object_token.value
                else:
                    self.abort(f"expected an object, found {_describe(object_token)}", object_token)
                self.record(subject, predicate, obj)
                if self.peek().kind == "comma":
                    self.advance()
                    continue
                break
            separator = self.advance()
            if separator.kind == "semi":
                # tolerate a trailing ';' before the final '.'
                if self.peek().kind == "dot":
                    self.advance()
                    return
                continue
            if separator.kind == "dot":
                return
            self.abort(f"expected ';', ',' or '.', found {_describe(separator)}", separator)

    def record(self, subject: str, predicate: str, obj: str | Literal) -> None:
        doc = self.doc
        is_typing = predicate == RDF_TYPE or local_name(predicate) == "instanceOf"
        if is_typing and isinstance(obj, str):
            if obj in _CLASS_TYPES:
                doc.classes.add(subject)
            elif obj == _OBJECT_PROPERTY:
                doc.object_properties.add(subject)
            elif obj in _DATA_PROPERTY_TYPES:
                doc.data_properties.add(subject)
            elif obj == _NAMED_INDIVIDUAL:
                doc.individuals.add(subject)
            elif obj == _ONTOLOGY:
                pass
            else:
                doc.class_assertions.add((subject, obj))
                doc.individuals.add(subject)
            return
        if predicate == RDFS_LABEL and isinstance(obj, Literal):
            doc.labels.setdefault(subject, obj.text)
            return
        doc.property_assertions.add((subject, predicate, obj))


def _describe(token: _Token) -> str:
    if token.kind == "eof":
        return "end of input"
    if token.kind == "pname":
        prefix, local = token.value
        return f"'{prefix}:{local}'"
    if token.kind == "string":
        return "a string literal"
    return f"'{token.value}'"


def parse_turtle(text: str) -> OntologyDoc | ValidationReport:
    """Parse Turtle-subset text; syntax problems come back as a report.

    Undefined prefixes are collected across the whole document; any other
    violation of the subset stops at the first offense with its line and
    column.
    """
    try:
        parser = _Parser(_tokenize(text))
        doc = parser.parse()
    except _ParseAbort as abort:
        return ValidationReport(errors=[Issue("ParseError", abort.message, abort.location)])
    if parser.prefix_errors:
        return ValidationReport(errors=list(parser.prefix_errors.values()))
    return doc


# ---------------------------------------------------------------------------
# Serializer


def _compact(iri: str, prefixes: dict[str, str]) -> str:
    best: tuple[int, str, str] | None = None
    for prefix, base in prefixes.items():
        if base and iri.startswith(base):
            local = iri[len(base):]
            if _LOCAL_RE.match(local) and (prefix == "" or _PREFIX_RE.match(prefix)):
                if best is None or len(base) > best[0]:
                    best = (len(base), prefix, local)
    if best is not None:
        return f"{best[1]}:{best[2]}"
    return f"<{iri}>"


def _quote(literal: Literal) -> str:
    text = (
        literal.text.replace("\\", "\\\\")
        .replace('"', '\\"')
        .replace("\n", "\\n")
        .replace("\r", "\\r")
        .replace("\t", "\\t")
    )
    suffix = f"@{literal.lang}" if literal.lang else ""
    return f'"{text}"{suffix}'


def _object_key(obj: str | Literal) -> tuple:
    if isinstance(obj, Literal):
        return ("literal", obj.text, obj.lang or "")
    return ("iri", obj, "")


def serialize_turtle(doc: OntologyDoc) -> str:
    """Emit the document in the same subset with fully deterministic ordering."""
    prefixes = doc.prefixes
    compact = lambda iri: _compact(iri, prefixes)
    sections: list[list[str]] = []

    # vocabulary terms go through compaction too: a document may rebind the
    # owl:/rdfs: prefixes, in which case the full IRI form is emitted
    owl_class = compact(OWL_NS + "Class")
    object_property = compact(_OBJECT_PROPERTY)
    datatype_property = compact(OWL_NS + "DatatypeProperty")
    named_individual = compact(_NAMED_INDIVIDUAL)
    rdfs_label = compact(RDFS_LABEL)

    sections.append([f"@prefix {prefix}: <{base}> ." for prefix, base in sorted(prefixes.items())])
    sections.append([f"{compact(iri)} a {owl_class} ." for iri in sorted(doc.classes)])
    sections.append([f"{compact(iri)} a {object_property} ." for iri in sorted(doc.object_properties)])
    sections.append([f"{compact(iri)} a {datatype_property} ." for iri in sorted(doc.data_properties)])
    # individuals with a class assertion are re-typed by it on re-parse
    asserted = {individual for individual, _ in doc.class_assertions}
    sections.append(
        [f"{compact(iri)} a {named_individual} ." for iri in sorted(doc.individuals - asserted)]
    )
    sections.append(
        [f"{compact(ind)} a {compact(cls)} ." for ind, cls in sorted(doc.class_assertions)]
    )
    sections.append(
        [f"{compact(iri)} {rdfs_label} {_quote(Literal(text))} ." for iri, text in sorted(doc.labels.items())]
    )
    sections.append(
        [
            f"{compact(s)} {compact(p)} "
            + (_quote(o) if isinstance(o, Literal) else compact(o))
            + " ."
            for s, p, o in sorted(doc.property_assertions, key=lambda a: (a[0], a[1], _object_key(a[2])))
        ]
    )
    return "\n\n".join("\n".join(section) for section in sections if section) + "\n"


# ---------------------------------------------------------------------------
# Validation


def validate_owl(doc: OntologyDoc) -> ValidationReport:
    """Declaration hygiene: every used property/class declared, individuals typed.

    Terms from the standard RDF/RDFS/OWL/XSD namespaces are exempt. One error
    per distinct offending IRI; untyped individuals are warnings.
    """
    report = ValidationReport()
    declared_properties = doc.object_properties | doc.data_properties
    used_properties = sorted({predicate for _, predicate, _ in doc.property_assertions})
    for predicate in used_properties:
        if predicate not in declared_properties and not _is_standard(predicate):
            report.errors.append(
                Issue(
                    "UndeclaredProperty",
                    f"property {_compact(predicate, doc.prefixes)} is used in an assertion but never declared",
                    _compact(predicate, doc.prefixes),
                )
            )
    used_classes = sorted({cls for _, cls in doc.class_assertions})
    for cls in used_classes:
        if cls not in doc.classes and not _is_standard(cls):
            report.errors.append(
                Issue(
                    "UndeclaredClass",
                    f"class {_compact(cls, doc.prefixes)} is used in a typing but never declared",
                    _compact(cls, doc.prefixes),
                )
            )
    typed = doc.individuals | doc.classes | declared_properties
    referenced = {subject for subject, _, _ in doc.property_assertions}
    referenced.update(obj for _, _, obj in doc.property_assertions if isinstance(obj, str))
    for iri in sorted(referenced):
        if iri not in typed and not _is_standard(iri):
            report.warnings.append(
                Issue(
                    "UntypedIndividual",
                    f"{_compact(iri, doc.prefixes)} appears in assertions but is never given a type",
                    _compact(iri, doc.prefixes),
                )
            )
    return report


def validate_text(text: str) -> tuple[OntologyDoc | None, ValidationReport]:
    """Parse then validate; returns (doc or None, combined report)."""
    parsed = parse_turtle(text)
    if isinstance(parsed, ValidationReport):
        return None, parsed
    return parsed, validate_owl(parsed)


# ---------------------------------------------------------------------------
# Repair loop


def build_repair_prompt(previous_output: str, report: ValidationReport) -> str:
    """Deterministic prompt asking the model to fix the enumerated errors."""
    if not report.errors:
        raise NoErrorsError("the report has no errors, nothing to repair")
    lines = ["The RDF Turtle document below failed validation.", "", "Errors:"]
    for index, issue in enumerate(report.errors, start=1):
        location = f" at {issue.location}" if issue.location else ""
        lines.append(f"{index}. [{issue.code}]{location}: {issue.message}")
    lines += [
        "",
        "Fix every error listed and return the corrected document in RDF Turtle format only, with no commentary.",
        "",
        "Previous output:",
        previous_output,
    ]
    return "\n".join(lines)


@dataclass
class RepairAttempt:
    output: str
    report: ValidationReport


def repair_until_valid(
    initial_prompt: str,
    complete: Callable[[str], str],
    max_attempts: int = 3,
) -> tuple[OntologyDoc | None, list[RepairAttempt]]:
    """Generate, validate, and re-prompt until valid or attempts run out.

    max_attempts counts generations including the first one. Returns the
    accepted document (None if every attempt failed) and the full attempt
    history.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be at least 1")
    attempts: list[RepairAttempt] = []
    prompt = initial_prompt
    for _ in range(max_attempts):
        output = complete(prompt)
        doc, report = validate_text(output)
        attempts.append(RepairAttempt(output, report))
        if doc is not None and report.ok:
            return doc, attempts
        prompt = build_repair_prompt(output, report)
    return None, attempts


# ---------------------------------------------------------------------------
# Conversion


def ontology_to_kb(doc: OntologyDoc, *, source_id: str, backend_id: str = "ontology") -> KnowledgeBase:
    """Flatten a valid ontology into KB triples.

    Class assertions become (individual, "instanceOf", class) and property
    assertions become (subject, property local name, object). Entity labels
    prefer rdfs:label text and fall back to the IRI's local name; predicates
    always use local names. Distinct assertions whose labels coincide merge
    under the store's dedup rule.
    """
    report = validate_owl(doc)
    if report.errors:
        raise InvalidDocError(
            f"document has {len(report.errors)} validation error(s); repair it first"
        )
    kb = KnowledgeBase()

    def entity_label(iri: str) -> str:
        return doc.labels.get(iri) or local_name(iri)

    for iri in sorted(doc.classes | doc.individuals):
        kb.add_entity(entity_label(iri))
    provenance = Provenance(source_id, None, backend_id)
    for individual, cls in sorted(doc.class_assertions):
        kb.add_triple(Triplet(entity_label(individual), "instanceOf", entity_label(cls), provenance))
    for subject, predicate, obj in sorted(
        doc.property_assertions, key=lambda a: (a[0], a[1], _object_key(a[2]))
    ):
        object_label = obj.text if isinstance(obj, Literal) else entity_label(obj)
        kb.add_triple(Triplet(entity_label(subject), local_name(predicate), object_label, provenance))
    return kb
