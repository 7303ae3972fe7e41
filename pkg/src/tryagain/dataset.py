"""Loading, validation, and deterministic sampling of static QA problem sets.

Datasets are UTF-8 line-delimited JSON. Each line must carry at least
``id``, ``question``, and ``gold_answer``; ``subject`` and ``source`` are
recognized optional tags, and any other fields are preserved verbatim in a
per-record metadata map so they survive round-trips and show up in traces.

A loaded manifest is immutable and carries a content checksum, so sampling
with a fixed seed is a pure function of (checksum, n, seed) and manifests
can be shared freely across concurrent episodes.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

KNOWN_FIELDS = ("id", "question", "gold_answer", "subject", "source")


class DatasetError(Exception):
    """Base class for dataset ingestion failures."""


class FileUnreadable(DatasetError):
    pass


class MalformedLine(DatasetError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicateId(DatasetError):
    def __init__(self, record_id: str, line_no: int):
        super().__init__(f"duplicate record id {record_id!r} at line {line_no}")
        self.record_id = record_id
        self.line_no = line_no


class NOutOfRange(DatasetError):
    pass


@dataclass(frozen=True)
class ProblemRecord:
    """One static QA item: a question and the gold answer it is graded against."""

    id: str
    question: str
    gold_answer: str
    subject: str | None = None
    source: str | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"id": self.id, "question": self.question, "gold_answer": self.gold_answer}
        if self.subject is not None:
            out["subject"] = self.subject
        if self.source is not None:
            out["source"] = self.source
        out.update(self.metadata)
        return out


@dataclass(frozen=True)
class DatasetManifest:
    """An ordered, validated problem set with a stable content checksum."""

    name: str
    records: tuple[ProblemRecord, ...]
    checksum: str
    skipped_lines: tuple[tuple[int, str], ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def by_id(self, record_id: str) -> ProblemRecord | None:
        return _index(self).get(record_id)


def _index(manifest: DatasetManifest) -> dict[str, ProblemRecord]:
    # cached per manifest; manifests are frozen so this never goes stale
    cache = getattr(manifest, "_id_index", None)
    if cache is None:
        cache = {r.id: r for r in manifest.records}
        object.__setattr__(manifest, "_id_index", cache)
    return cache


def _checksum(records: tuple[ProblemRecord, ...]) -> str:
    canonical = json.dumps(
        [r.to_dict() for r in records], sort_keys=True, separators=(",", ":"), ensure_ascii=False
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _parse_record(obj: dict) -> ProblemRecord:
    if not isinstance(obj, dict):
        raise ValueError("expected a JSON object")
    for key in ("id", "question", "gold_answer"):
        value = obj.get(key)
        if not isinstance(value, str) or not value.strip():
            raise ValueError(f"missing or empty field {key!r}")
    metadata = {k: v for k, v in obj.items() if k not in KNOWN_FIELDS}
    return ProblemRecord(
        id=obj["id"],
        question=obj["question"],
        gold_answer=obj["gold_answer"],
        subject=obj.get("subject"),
        source=obj.get("source"),
        metadata=metadata,
    )


def load_dataset(path: str | Path, *, lenient: bool = False, name: str | None = None) -> DatasetManifest:
    """Load a line-delimited JSON problem set.

    Strict mode (the default) aborts on the first malformed line or duplicate
    id, which keeps evaluation runs reproducible. With ``lenient=True``
    offending lines are skipped and collected in ``manifest.skipped_lines``.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc

    records: list[ProblemRecord] = []
    seen: set[str] = set()
    skipped: list[tuple[int, str]] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            if lenient:
                skipped.append((line_no, f"invalid JSON: {exc.msg}"))
                continue
            raise MalformedLine(line_no, f"invalid JSON: {exc.msg}") from exc
        try:
            record = _parse_record(obj)
        except ValueError as exc:
            if lenient:
                skipped.append((line_no, str(exc)))
                continue
            raise MalformedLine(line_no, str(exc)) from exc
        if record.id in seen:
            if lenient:
                skipped.append((line_no, f"duplicate id {record.id!r}"))
                continue
            raise DuplicateId(record.id, line_no)
        seen.add(record.id)
        records.append(record)

    frozen = tuple(records)
    return DatasetManifest(
        name=name or path.stem,
        records=frozen,
        checksum=_checksum(frozen),
        skipped_lines=tuple(skipped),
    )


def serialize_dataset(manifest: DatasetManifest, path: str | Path) -> None:
    """Write the manifest back out as line-delimited JSON (round-trip stable)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in manifest.records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")


def sample_batch(manifest: DatasetManifest, n: int, seed: int) -> list[ProblemRecord]:
    """Draw ``n`` distinct records, deterministically in (checksum, n, seed)."""
    if n < 0 or n > len(manifest.records):
        raise NOutOfRange(f"n={n} outside [0, {len(manifest.records)}]")
    rng = random.Random(f"{manifest.checksum}:{seed}")
    return rng.sample(list(manifest.records), n)
