"""Taxonomy and dataset loading.

The taxonomy is the universe of XBRL tags, each paired with its descriptive
document text (the unit that gets embedded, retrieved, and re-ranked).  The
dataset is a list of numeral annotation records: a report sentence, the
target numeral as it literally appears in that sentence, a question aimed at
the numeral, and optionally the gold tag and a pre-generated tag document.

Both files are JSON-Lines, one object per line, UTF-8:

    taxonomy:  {"tag_id": str, "text": str}
    dataset:   {"record_id": str, "report_text": str, "numeral": str,
                "question": str, "gold_tag_id": str|null, "gen_tag_doc": str|null}

Loaded corpora and datasets are immutable and safe to share across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CorpusError

__all__ = [
    "TagDocument",
    "TaxonomyCorpus",
    "NumeralRecord",
    "load_taxonomy",
    "save_taxonomy",
    "load_dataset",
    "save_dataset",
]


@dataclass(frozen=True)
class TagDocument:
    """One taxonomy tag and its descriptive document text."""

    tag_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.tag_id.strip():
            raise CorpusError("tag_id must be a non-empty string")
        if not self.text.strip():
            raise CorpusError(f"tag document text for {self.tag_id!r} is empty")


@dataclass(frozen=True)
class TaxonomyCorpus:
    """Ordered collection of tag documents with unique tag ids."""

    docs: tuple[TagDocument, ...]
    index_by_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        index: dict[str, int] = {}
        for pos, doc in enumerate(self.docs):
            if doc.tag_id in index:
                raise CorpusError(
                    f"duplicate tag_id {doc.tag_id!r} at positions "
                    f"{index[doc.tag_id]} and {pos}"
                )
            index[doc.tag_id] = pos
        object.__setattr__(self, "index_by_id", index)

    def __len__(self) -> int:
        return len(self.docs)

    def __contains__(self, tag_id: str) -> bool:
        return tag_id in self.index_by_id

    def position(self, tag_id: str) -> int:
        try:
            return self.index_by_id[tag_id]
        except KeyError:
            raise CorpusError(f"unknown tag_id {tag_id!r}") from None

    def text_of(self, tag_id: str) -> str:
        return self.docs[self.position(tag_id)].text

    def texts(self) -> dict[str, str]:
        """tag_id -> document text mapping, in corpus order."""
        return {doc.tag_id: doc.text for doc in self.docs}


@dataclass(frozen=True)
class NumeralRecord:
    """One annotation instance: a numeral in a report sentence to be tagged."""

    record_id: str
    report_text: str
    numeral: str
    question: str
    gold_tag_id: str | None = None
    gen_tag_doc: str | None = None

    def __post_init__(self) -> None:
        if not self.record_id:
            raise CorpusError("record_id must be non-empty")
        if not self.numeral:
            raise CorpusError(f"record {self.record_id!r}: numeral is empty")
        if self.numeral not in self.report_text:
            raise CorpusError(
                f"record {self.record_id!r}: numeral {self.numeral!r} "
                "does not occur in report_text"
            )


def _iter_jsonl(path: Path):
    """Yield (line_number, parsed object) for each non-blank line."""
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _require_str(obj: dict, key: str, path: Path, lineno: int) -> str:
    value = obj.get(key)
    if not isinstance(value, str):
        raise CorpusError(f"{path}:{lineno}: field {key!r} missing or not a string")
    return value


def load_taxonomy(path: str | Path) -> TaxonomyCorpus:
    """Load the tag-document universe from a JSON-Lines file.

    Preserves file order.  Raises :class:`CorpusError` on malformed lines,
    duplicate tag ids (both line numbers reported), or an empty file.
    """
    path = Path(path)
    docs: list[TagDocument] = []
    seen: dict[str, int] = {}
    for lineno, obj in _iter_jsonl(path):
        tag_id = _require_str(obj, "tag_id", path, lineno)
        text = _require_str(obj, "text", path, lineno)
        if tag_id in seen:
            raise CorpusError(
                f"{path}:{lineno}: duplicate tag_id {tag_id!r} "
                f"(first seen on line {seen[tag_id]})"
            )
        seen[tag_id] = lineno
        try:
            docs.append(TagDocument(tag_id=tag_id, text=text))
        except CorpusError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    if not docs:
        raise CorpusError(f"{path}: taxonomy file contains no tag documents")
    return TaxonomyCorpus(docs=tuple(docs))


def save_taxonomy(corpus: TaxonomyCorpus, path: str | Path) -> None:
    """Write the corpus back out in the canonical JSON-Lines form.

    ``load_taxonomy`` of a file produced here round-trips byte-identically.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for doc in corpus.docs:
            fh.write(json.dumps({"tag_id": doc.tag_id, "text": doc.text},
                                ensure_ascii=False))
            fh.write("\n")


def load_dataset(
    path: str | Path,
    corpus: TaxonomyCorpus | None = None,
) -> list[NumeralRecord]:
    """Load numeral records from a JSON-Lines file, in file order.

    Every record's numeral must occur verbatim in its report_text (no
    numeric normalization: the target is a surface form).  When a corpus is
    supplied, any present gold_tag_id must resolve in it.  Records without a
    gold tag are accepted; evaluation skips them separately.
    """
    path = Path(path)
    records: list[NumeralRecord] = []
    seen_ids: dict[str, int] = {}
    for lineno, obj in _iter_jsonl(path):
        record_id = _require_str(obj, "record_id", path, lineno)
        if record_id in seen_ids:
            raise CorpusError(
                f"{path}:{lineno}: duplicate record_id {record_id!r} "
                f"(first seen on line {seen_ids[record_id]})"
            )
        seen_ids[record_id] = lineno
        gold = obj.get("gold_tag_id")
        gen_doc = obj.get("gen_tag_doc")
        if gold is not None and not isinstance(gold, str):
            raise CorpusError(f"{path}:{lineno}: gold_tag_id must be string or null")
        if gen_doc is not None and not isinstance(gen_doc, str):
            raise CorpusError(f"{path}:{lineno}: gen_tag_doc must be string or null")
        try:
            record = NumeralRecord(
                record_id=record_id,
                report_text=_require_str(obj, "report_text", path, lineno),
                numeral=_require_str(obj, "numeral", path, lineno),
                question=_require_str(obj, "question", path, lineno),
                gold_tag_id=gold,
                gen_tag_doc=gen_doc,
            )
        except CorpusError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from exc
        if corpus is not None and record.gold_tag_id is not None:
            if record.gold_tag_id not in corpus:
                raise CorpusError(
                    f"{path}:{lineno}: record {record_id!r} has unknown "
                    f"gold_tag_id {record.gold_tag_id!r}"
                )
        records.append(record)
    return records


def save_dataset(records: list[NumeralRecord], path: str | Path) -> None:
    """Write records in the canonical JSON-Lines dataset form."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(
                {
                    "record_id": rec.record_id,
                    "report_text": rec.report_text,
                    "numeral": rec.numeral,
                    "question": rec.question,
                    "gold_tag_id": rec.gold_tag_id,
                    "gen_tag_doc": rec.gen_tag_doc,
                },
                ensure_ascii=False,
            ))
            fh.write("\n")
