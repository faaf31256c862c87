"""Corpus curation: ingest, stratify, sample, mix, export.

Records live in a content-addressed store (sha256 over the semantic
payload), so duplicate content is stored once no matter how many files
it arrives in. Curation operations work on manifests, which are ordered
lists of lightweight entries; they never copy record payloads. All
sampling is seeded and recorded in the manifest's seed lineage so any
subset can be reproduced from the original corpus and the lineage alone.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from random import Random
from typing import Iterable, Iterator

from .errors import (
    EmptyCorpus,
    IoFailure,
    MissingImage,
    OverlappingBands,
    SampleTooLarge,
    SchemaViolation,
)
from .transcripts import LongThoughtRecord

log = logging.getLogger(__name__)

RECORD_FIELDS = ("id", "modality", "domain", "query", "image_ref",
                 "thought", "solution", "source")

# Corpus provenance labels. D_T is the text-only seed set, D_QVQ the
# teacher-distilled visual set, D_SD the self-distilled visual set.
PROVENANCE_TEXT = "D_T"
PROVENANCE_TEACHER_VISUAL = "D_QVQ"
PROVENANCE_SELF_DISTILLED = "D_SD"
PROVENANCE_MIXED = "Mixed"

DEFAULT_BANDS = ((0, 2000), (2000, 4000), (4000, 8000))

_IMAGE_REF_SCHEME = "sha256:"


def band_label(low: int, high: int) -> str:
    return f"({low},{high}]"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False,
                      separators=(",", ":"))


def _utcnow() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class ManifestEntry:
    """Pointer to one stored record plus the fields curation filters on."""

    id: str
    hash: str
    length: int
    domain: str
    modality: str
    source: str
    origin: str | None = None
    difficulty: str | None = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "hash": self.hash, "length": self.length,
             "domain": self.domain, "modality": self.modality,
             "source": self.source}
        if self.origin is not None:
            d["origin"] = self.origin
        if self.difficulty is not None:
            d["difficulty"] = self.difficulty
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        return cls(id=d["id"], hash=d["hash"], length=d["length"],
                   domain=d["domain"], modality=d["modality"],
                   source=d["source"], origin=d.get("origin"),
                   difficulty=d.get("difficulty"))


@dataclass(frozen=True)
class CorpusManifest:
    """Ordered, deduplicated view over stored records."""

    name: str
    provenance: str
    entries: tuple[ManifestEntry, ...]
    seed_lineage: tuple[tuple[str, int], ...] = ()
    created_at: str = field(default_factory=_utcnow)

    def __len__(self) -> int:
        return len(self.entries)

    def length_histogram(self, bands=DEFAULT_BANDS) -> dict[str, int]:
        top = max(high for _, high in bands)
        hist = {band_label(lo, hi): 0 for lo, hi in bands}
        hist[f">{top}"] = 0
        hist["other"] = 0
        for entry in self.entries:
            for lo, hi in bands:
                if lo < entry.length <= hi:
                    hist[band_label(lo, hi)] += 1
                    break
            else:
                hist[f">{top}" if entry.length > top else "other"] += 1
        return hist

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "provenance": self.provenance,
            "created_at": self.created_at,
            "seed_lineage": [[op, seed] for op, seed in self.seed_lineage],
            "length_histogram": self.length_histogram(),
            "records": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusManifest":
        return cls(
            name=d["name"],
            provenance=d["provenance"],
            entries=tuple(ManifestEntry.from_dict(e) for e in d["records"]),
            seed_lineage=tuple((op, seed) for op, seed in d.get("seed_lineage", [])),
            created_at=d["created_at"],
        )


def _manifest_payload_without_timestamp(d: dict) -> dict:
    return {k: v for k, v in d.items() if k != "created_at"}


def save_manifest(manifest: CorpusManifest, path: str | Path,
                  force: bool = False) -> Path:
    """Write a manifest, keeping re-runs byte-identical.

    If the target already holds the same content (timestamp aside) the
    file is left untouched, so repeated runs do not churn bytes. A target
    with different content is refused unless force is set.
    """
    path = Path(path)
    payload = manifest.to_dict()
    if path.exists():
        try:
            existing = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise IoFailure(f"cannot read existing manifest {path}: {exc}") from exc
        if (_manifest_payload_without_timestamp(existing)
                == _manifest_payload_without_timestamp(payload)):
            return path
        if not force:
            raise IoFailure(
                f"refusing to overwrite {path}: content differs (use force)")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n",
                    encoding="utf-8")
    return path


def load_manifest(path: str | Path) -> CorpusManifest:
    path = Path(path)
    try:
        return CorpusManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise SchemaViolation(f"manifest {path} is not valid: {exc}") from exc


class CorpusStore:
    """Content-addressed record and image store on disk.

    Records are keyed by a sha256 over (query, image digest, thought,
    solution), so ingesting the same content twice is a no-op regardless
    of file order or surrounding metadata. Writes are first-writer-wins;
    identical content maps to an identical path.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.records_dir = self.root / "records"
        self.images_dir = self.root / "images"
        self.ids_path = self.root / "ids.json"
        self.records_dir.mkdir(parents=True, exist_ok=True)
        self.images_dir.mkdir(parents=True, exist_ok=True)
        self._ids: dict[str, str] | None = None
        self._ids_dirty = False

    # id -> content hash map, loaded lazily and persisted on every change
    def _id_index(self) -> dict[str, str]:
        if self._ids is None:
            if self.ids_path.exists():
                self._ids = json.loads(self.ids_path.read_text(encoding="utf-8"))
            else:
                self._ids = {}
        return self._ids

    def _save_id_index(self):
        self.ids_path.write_text(
            json.dumps(self._ids, sort_keys=True, indent=0, ensure_ascii=False),
            encoding="utf-8")
        self._ids_dirty = False

    def flush(self):
        if self._ids_dirty and self._ids is not None:
            self._save_id_index()

    def put_image(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = self.images_dir / digest
        if not path.exists():
            path.write_bytes(data)
        return _IMAGE_REF_SCHEME + digest

    def resolve_image(self, ref: str, image_root: str | Path | None = None) -> bytes:
        if ref.startswith(_IMAGE_REF_SCHEME):
            path = self.images_dir / ref[len(_IMAGE_REF_SCHEME):]
        else:
            path = Path(ref)
            if not path.is_absolute() and image_root is not None:
                path = Path(image_root) / path
        if not path.exists():
            raise MissingImage(f"image {ref!r} not found")
        return path.read_bytes()

    def image_digest(self, record: LongThoughtRecord,
                     image_root: str | Path | None = None) -> str | None:
        if record.image_ref is None:
            return None
        try:
            return hashlib.sha256(
                self.resolve_image(record.image_ref, image_root)).hexdigest()
        except MissingImage:
            # fall back to the reference itself so hashing stays total
            return "ref:" + record.image_ref

    def content_hash(self, record: LongThoughtRecord,
                     image_root: str | Path | None = None) -> str:
        payload = [record.query, self.image_digest(record, image_root),
                   record.thought, record.solution]
        return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()

    def _record_path(self, content_hash: str) -> Path:
        return self.records_dir / content_hash[:2] / f"{content_hash}.json"

    def put_record(self, record: LongThoughtRecord,
                   image_root: str | Path | None = None,
                   flush: bool = True) -> str:
        content_hash = self.content_hash(record, image_root)
        ids = self._id_index()
        known = ids.get(record.id)
        if known is not None and known != content_hash:
            raise SchemaViolation(
                f"id {record.id!r} already stored with different content")
        path = self._record_path(content_hash)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            doc = {f: getattr(record, f) for f in RECORD_FIELDS}
            path.write_text(canonical_json(doc), encoding="utf-8")
        if known is None:
            ids[record.id] = content_hash
            # bulk writers defer the index write and flush() once at the end
            if flush:
                self._save_id_index()
            else:
                self._ids_dirty = True
        return content_hash

    def get_record(self, content_hash: str) -> LongThoughtRecord:
        path = self._record_path(content_hash)
        if not path.exists():
            raise IoFailure(f"no record stored under {content_hash}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        return LongThoughtRecord(**doc)

    def has_record(self, content_hash: str) -> bool:
        return self._record_path(content_hash).exists()


def _record_from_doc(doc: dict, line: int | None = None) -> LongThoughtRecord:
    if not isinstance(doc, dict):
        raise SchemaViolation("record is not an object", line=line)
    missing = [f for f in RECORD_FIELDS if f not in doc]
    if missing:
        raise SchemaViolation(f"missing field {missing[0]!r}",
                              line=line, field=missing[0])
    extras = sorted(set(doc) - set(RECORD_FIELDS))
    if extras:
        log.debug("line %s: ignoring extra fields %s", line, extras)
    try:
        return LongThoughtRecord(**{f: doc[f] for f in RECORD_FIELDS})
    except SchemaViolation as exc:
        raise SchemaViolation(exc.message, line=line, field=exc.field) from exc


def ingest(source, store: CorpusStore, name: str, provenance: str,
           image_root: str | Path | None = None) -> CorpusManifest:
    """Load records into the store and return their manifest.

    ``source`` is a JSONL path or an iterable of lines / record dicts.
    Content duplicates collapse to the first occurrence; conflicting
    reuse of an id is an error. Bad lines abort the whole ingest so a
    manifest never describes a partially validated corpus.
    """
    if isinstance(source, (str, Path)):
        try:
            lines: Iterable = Path(source).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IoFailure(f"cannot read {source}: {exc}") from exc
    else:
        lines = source

    entries: list[ManifestEntry] = []
    seen_hashes: set[str] = set()
    duplicates = 0
    try:
        for lineno, item in enumerate(lines, start=1):
            if isinstance(item, str):
                if not item.strip():
                    continue
                try:
                    doc = json.loads(item)
                except json.JSONDecodeError as exc:
                    raise SchemaViolation(f"invalid JSON: {exc.msg}",
                                          line=lineno) from exc
            else:
                doc = item
            record = _record_from_doc(doc, line=lineno)
            content_hash = store.put_record(record, image_root, flush=False)
            if content_hash in seen_hashes:
                duplicates += 1
                continue
            seen_hashes.add(content_hash)
            entries.append(ManifestEntry(
                id=record.id, hash=content_hash, length=record.thought_length,
                domain=record.domain, modality=record.modality,
                source=record.source))
    finally:
        store.flush()
    if duplicates:
        log.info("ingest %s: skipped %d content duplicates", name, duplicates)
    if not entries:
        raise EmptyCorpus(f"no records ingested for {name!r}")
    return CorpusManifest(name=name, provenance=provenance,
                          entries=tuple(entries))


def validate_bands(bands) -> tuple[tuple[int, int], ...]:
    normalized = tuple((int(lo), int(hi)) for lo, hi in bands)
    if not normalized:
        raise OverlappingBands("at least one band is required")
    for lo, hi in normalized:
        if lo >= hi:
            raise OverlappingBands(f"band ({lo},{hi}] is empty")
    ordered = sorted(normalized)
    for (lo1, hi1), (lo2, hi2) in zip(ordered, ordered[1:]):
        if lo2 < hi1:
            raise OverlappingBands(
                f"bands ({lo1},{hi1}] and ({lo2},{hi2}] overlap")
    return ordered


@dataclass(frozen=True)
class StratifyResult:
    """Length strata plus everything no band covers."""

    strata: dict[str, CorpusManifest]
    overflow: CorpusManifest

    def all_manifests(self) -> list[CorpusManifest]:
        return list(self.strata.values()) + [self.overflow]


def stratify_by_length(manifest: CorpusManifest,
                       bands=DEFAULT_BANDS) -> StratifyResult:
    """Partition by thought length into lower-exclusive, upper-inclusive bands.

    Every record lands in exactly one stratum, or in overflow when no
    band covers its length, so the strata plus overflow always sum back
    to the input.
    """
    ordered = validate_bands(bands)
    buckets: dict[str, list[ManifestEntry]] = {band_label(lo, hi): []
                                               for lo, hi in ordered}
    leftover: list[ManifestEntry] = []
    for entry in manifest.entries:
        for lo, hi in ordered:
            if lo < entry.length <= hi:
                buckets[band_label(lo, hi)].append(entry)
                break
        else:
            leftover.append(entry)
    strata = {
        label: replace(manifest, name=f"{manifest.name}-{label}",
                       entries=tuple(bucket), created_at=manifest.created_at)
        for label, bucket in buckets.items()
    }
    overflow = replace(manifest, name=f"{manifest.name}-overflow",
                       entries=tuple(leftover), created_at=manifest.created_at)
    return StratifyResult(strata=strata, overflow=overflow)


def sample_subset(manifest: CorpusManifest, n: int, seed: int) -> CorpusManifest:
    """Take a uniform sample of n entries, reproducibly.

    One seeded shuffle decides the order once; a sample of n is the first
    n positions of that order. Samples at the same seed therefore nest:
    the 1000-record subset is contained in the 3000-record subset.
    """
    if n < 0:
        raise SampleTooLarge(f"sample size {n} is negative")
    if n > len(manifest.entries):
        raise SampleTooLarge(
            f"sample size {n} exceeds corpus size {len(manifest.entries)}")
    order = list(range(len(manifest.entries)))
    Random(seed).shuffle(order)
    chosen = sorted(order[:n])
    entries = tuple(manifest.entries[i] for i in chosen)
    return replace(manifest,
                   name=f"{manifest.name}-sample{n}",
                   entries=entries,
                   seed_lineage=manifest.seed_lineage + ((f"sample(n={n})", seed),),
                   created_at=manifest.created_at)


def mix(parts: Iterable[tuple[str, CorpusManifest]], name: str) -> CorpusManifest:
    """Concatenate corpora in the given order, deduplicating by content.

    The first occurrence of a record wins; each surviving entry is tagged
    with the name of the part it came from.
    """
    parts = list(parts)
    if not parts:
        raise EmptyCorpus("mix requires at least one part")
    seen: set[str] = set()
    entries: list[ManifestEntry] = []
    for origin, part in parts:
        for entry in part.entries:
            if entry.hash in seen:
                continue
            seen.add(entry.hash)
            entries.append(replace(entry, origin=origin))
    return CorpusManifest(name=name, provenance=PROVENANCE_MIXED,
                          entries=tuple(entries))


def domain_stats(manifest: CorpusManifest) -> dict:
    """Counts by domain, modality, and source, plus mean thought length."""
    if not manifest.entries:
        raise EmptyCorpus(f"manifest {manifest.name!r} has no records")
    by_domain: dict[str, int] = {}
    by_modality: dict[str, int] = {}
    by_source: dict[str, int] = {}
    total_length = 0
    for e in manifest.entries:
        by_domain[e.domain] = by_domain.get(e.domain, 0) + 1
        by_modality[e.modality] = by_modality.get(e.modality, 0) + 1
        by_source[e.source] = by_source.get(e.source, 0) + 1
        total_length += e.length
    return {
        "name": manifest.name,
        "provenance": manifest.provenance,
        "total": len(manifest.entries),
        "by_domain": dict(sorted(by_domain.items())),
        "by_modality": dict(sorted(by_modality.items())),
        "by_source": dict(sorted(by_source.items())),
        "mean_length": round(total_length / len(manifest.entries), 1),
        "length_histogram": manifest.length_histogram(),
    }


def iter_records(manifest: CorpusManifest,
                 store: CorpusStore) -> Iterator[LongThoughtRecord]:
    for entry in manifest.entries:
        yield store.get_record(entry.hash)


def _format_number(x) -> str:
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, int):
        return str(x)
    # keep scientific notation short: 7e-06 -> 7e-6
    return re.sub(r"e([+-])0+(\d)", r"e\1\2", f"{x:g}")


@dataclass(frozen=True)
class TrainingManifest:
    """Fine-tuning recipe exported next to the training records.

    Defaults describe the standard run: full fine-tune of the language
    model and the modality connector with the visual encoder frozen,
    checkpoint selection fixed at epoch 5 of 10.
    """

    base_model: str = "Qwen2-VL-72B-Instruct"
    learning_rate: float = 7e-6
    batch_size: int = 128
    epochs: int = 10
    selected_epoch: int = 5
    frozen_components: tuple[str, ...] = ("visual_encoder",)
    trainable_components: tuple[str, ...] = ("language_model",
                                             "modality_connector")

    def render(self) -> str:
        lines = [
            f"base_model = {self.base_model}",
            f"learning_rate = {_format_number(self.learning_rate)}",
            f"batch_size = {_format_number(self.batch_size)}",
            f"epochs = {_format_number(self.epochs)}",
            f"selected_epoch = {_format_number(self.selected_epoch)}",
            f"frozen_components = {','.join(self.frozen_components)}",
            f"trainable_components = {','.join(self.trainable_components)}",
        ]
        return "\n".join(lines) + "\n"


def conversation_view(record: LongThoughtRecord) -> list[dict]:
    """Two-turn chat view of a record, image slot marked inline."""
    query = record.query
    if record.modality == "visual":
        query = f"<image>\n{query}"
    return [
        {"role": "user", "content": query},
        {"role": "assistant", "content": record.transcript()},
    ]


def _image_extension(data: bytes) -> str:
    if data.startswith(b"\x89PNG"):
        return ".png"
    if data.startswith(b"\xff\xd8"):
        return ".jpg"
    return ".bin"


@dataclass(frozen=True)
class ExportResult:
    records_path: Path
    training_manifest_path: Path
    manifest_path: Path
    image_index_path: Path | None
    image_count: int


def export_training_set(manifest: CorpusManifest, store: CorpusStore,
                        out_dir: str | Path,
                        training: TrainingManifest | None = None,
                        image_root: str | Path | None = None,
                        force: bool = False) -> ExportResult:
    """Write the training bundle: records, images, and the recipe.

    The bundle is deterministic given the manifest and store contents:
    exporting twice produces byte-identical files. Record lines carry the
    canonical fields plus a rendered conversation view; stripping the
    view and re-ingesting reproduces the corpus exactly.
    """
    if not manifest.entries:
        raise EmptyCorpus(f"manifest {manifest.name!r} has no records")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    training = training or TrainingManifest()

    images_dir = out_dir / "images"
    image_index: dict[str, str] = {}
    lines = []
    for record in iter_records(manifest, store):
        doc = {f: getattr(record, f) for f in RECORD_FIELDS}
        doc["conversations"] = conversation_view(record)
        lines.append(json.dumps(doc, ensure_ascii=False))
        if record.modality == "visual":
            data = store.resolve_image(record.image_ref, image_root)
            filename = hashlib.sha256(data).hexdigest() + _image_extension(data)
            target = images_dir / filename
            if not target.exists():
                images_dir.mkdir(parents=True, exist_ok=True)
                target.write_bytes(data)
            image_index[record.id] = f"images/{filename}"

    records_path = out_dir / "records.jsonl"
    records_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    training_path = out_dir / "training_manifest.txt"
    training_path.write_text(training.render(), encoding="utf-8")

    manifest_path = save_manifest(manifest, out_dir / "manifest.json",
                                  force=force)

    index_path = None
    if image_index:
        index_path = out_dir / "image_index.json"
        index_path.write_text(
            json.dumps(image_index, sort_keys=True, indent=2,
                       ensure_ascii=False) + "\n",
            encoding="utf-8")

    return ExportResult(records_path=records_path,
                        training_manifest_path=training_path,
                        manifest_path=manifest_path,
                        image_index_path=index_path,
                        image_count=len(image_index))
