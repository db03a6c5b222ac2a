"""Dataset manifest: participants, clips, labels and enrollment dates.

The on-disk format is a CSV with the header::

    participant_id,clip_id,file_path,task,repetition,label,enrollment_date

plus an optional trailing ``exclude`` column (``0``/``1``) that flags single
clips which failed quality review.  Dates are ISO ``YYYY-MM-DD``.  When a
manifest is split by enrollment date, a participant enrolled exactly on the
cutoff date belongs to the *test* side.

A JSON mirror with the same fields (a list of row objects) is also accepted.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import (
    ConflictingLabel,
    DuplicateClipId,
    DuplicateParticipant,
    EmptySplit,
    MalformedDate,
    MalformedManifest,
    UnknownLabel,
    UnknownTask,
)

COLUMNS = (
    "participant_id",
    "clip_id",
    "file_path",
    "task",
    "repetition",
    "label",
    "enrollment_date",
)
OPTIONAL_COLUMNS = ("exclude",)


class Label(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"

    @property
    def index(self) -> int:
        """Class index used by the classifier; Fail is the positive class."""
        return 1 if self is Label.FAIL else 0

    @classmethod
    def parse(cls, text: str) -> "Label":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise UnknownLabel(f"label must be 'pass' or 'fail', got {text!r}") from None


class Task(str, enum.Enum):
    SPEECH = "speech"
    SENTENCE = "sentence"
    WORD = "word"
    VOWEL_A = "vowel_a"
    VOWEL_E = "vowel_e"
    VOWEL_I = "vowel_i"
    VOWEL_O = "vowel_o"
    VOWEL_U = "vowel_u"

    @property
    def is_vowel(self) -> bool:
        return self.value.startswith("vowel_")

    @classmethod
    def parse(cls, text: str) -> "Task":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise UnknownTask(f"unknown task {text!r}") from None


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    file_path: str
    task: Task
    repetition_index: int = 0
    exclude: bool = False


@dataclass(frozen=True)
class ParticipantRecord:
    participant_id: str
    label: Label
    enrollment_date: dt.date
    clips: tuple[ClipRecord, ...]

    def __post_init__(self):
        if not self.clips:
            raise MalformedManifest(f"participant {self.participant_id} has no clips")


@dataclass(frozen=True)
class Manifest:
    participants: tuple[ParticipantRecord, ...]
    split_cutoff: dt.date | None = None

    def __post_init__(self):
        seen_p: set[str] = set()
        seen_c: set[str] = set()
        for p in self.participants:
            if p.participant_id in seen_p:
                raise DuplicateParticipant(f"participant {p.participant_id} listed twice")
            seen_p.add(p.participant_id)
            for c in p.clips:
                if c.clip_id in seen_c:
                    raise DuplicateClipId(f"clip_id {c.clip_id} appears more than once")
                seen_c.add(c.clip_id)

    @property
    def participant_ids(self) -> list[str]:
        return [p.participant_id for p in self.participants]

    def label_counts(self) -> dict[str, int]:
        counts = Counter(p.label.value for p in self.participants)
        return {lab.value: counts.get(lab.value, 0) for lab in (Label.FAIL, Label.PASS)}

    def clips(self, include_excluded: bool = False):
        """Yield ``(participant, clip)`` pairs in manifest order."""
        for p in self.participants:
            for c in p.clips:
                if include_excluded or not c.exclude:
                    yield p, c

    def participant(self, participant_id: str) -> ParticipantRecord:
        for p in self.participants:
            if p.participant_id == participant_id:
                return p
        raise KeyError(participant_id)

    def __len__(self) -> int:
        return len(self.participants)


def _parse_date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except (ValueError, AttributeError):
        raise MalformedDate(f"expected YYYY-MM-DD, got {text!r}") from None


def _parse_bool(text: str) -> bool:
    t = (text or "").strip().lower()
    if t in ("", "0", "false", "no"):
        return False
    if t in ("1", "true", "yes"):
        return True
    raise MalformedManifest(f"exclude flag must be 0/1, got {text!r}")


def _build(rows: list[dict]) -> Manifest:
    groups: dict[str, dict] = {}
    seen_clips: set[str] = set()
    for lineno, row in enumerate(rows, start=2):
        missing = [c for c in COLUMNS if row.get(c) is None]
        if missing:
            raise MalformedManifest(f"row {lineno}: missing column(s) {', '.join(missing)}")
        pid = str(row["participant_id"]).strip()
        cid = str(row["clip_id"]).strip()
        if not pid or not cid:
            raise MalformedManifest(f"row {lineno}: empty participant_id or clip_id")
        if cid in seen_clips:
            raise DuplicateClipId(f"clip_id {cid} appears more than once (row {lineno})")
        seen_clips.add(cid)
        label = Label.parse(str(row["label"]))
        date = _parse_date(str(row["enrollment_date"]))
        try:
            rep = int(str(row["repetition"]).strip())
        except ValueError:
            raise MalformedManifest(f"row {lineno}: repetition must be an integer") from None
        clip = ClipRecord(
            clip_id=cid,
            file_path=str(row["file_path"]).strip(),
            task=Task.parse(str(row["task"])),
            repetition_index=rep,
            exclude=_parse_bool(str(row.get("exclude") or "")),
        )
        g = groups.get(pid)
        if g is None:
            groups[pid] = {"label": label, "date": date, "clips": [clip]}
            continue
        if g["label"] is not label:
            raise ConflictingLabel(
                f"participant {pid} has labels {g['label'].value!r} and {label.value!r}"
            )
        if g["date"] != date:
            raise MalformedManifest(f"participant {pid} has two enrollment dates")
        g["clips"].append(clip)
    return Manifest(
        tuple(
            ParticipantRecord(pid, g["label"], g["date"], tuple(g["clips"]))
            for pid, g in groups.items()
        )
    )


def parse_manifest(text: str) -> Manifest:
    """Parse manifest CSV text (or its JSON mirror) into a validated Manifest."""
    stripped = text.lstrip()
    if stripped.startswith("[") or stripped.startswith("{"):
        return parse_manifest_json(text)
    reader = csv.DictReader(io.StringIO(text))
    header = tuple(h.strip() for h in (reader.fieldnames or ()))
    if header[: len(COLUMNS)] != COLUMNS or any(h not in OPTIONAL_COLUMNS for h in header[len(COLUMNS):]):
        raise MalformedManifest(f"header must be {','.join(COLUMNS)}[,exclude]; got {','.join(header)}")
    reader.fieldnames = list(header)
    return _build(list(reader))


def parse_manifest_json(text: str) -> Manifest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedManifest(f"invalid manifest JSON: {exc}") from None
    rows = doc["rows"] if isinstance(doc, dict) else doc
    if not isinstance(rows, list):
        raise MalformedManifest("manifest JSON must be a list of rows")
    return _build(rows)


def _rows(m: Manifest) -> list[dict]:
    rows = []
    for p, c in m.clips(include_excluded=True):
        rows.append(
            {
                "participant_id": p.participant_id,
                "clip_id": c.clip_id,
                "file_path": c.file_path,
                "task": c.task.value,
                "repetition": str(c.repetition_index),
                "label": p.label.value,
                "enrollment_date": p.enrollment_date.isoformat(),
                "exclude": "1" if c.exclude else "0",
            }
        )
    return rows


def serialize_manifest(m: Manifest) -> str:
    rows = _rows(m)
    with_exclude = any(r["exclude"] == "1" for r in rows)
    cols = COLUMNS + (OPTIONAL_COLUMNS if with_exclude else ())
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def serialize_manifest_json(m: Manifest) -> str:
    return json.dumps(_rows(m), indent=1)


def load_manifest(path: str | Path) -> Manifest:
    return parse_manifest(Path(path).read_text())


def write_manifest(m: Manifest, path: str | Path) -> None:
    path = Path(path)
    text = serialize_manifest_json(m) if path.suffix == ".json" else serialize_manifest(m)
    path.write_text(text)


def split_by_epoch(m: Manifest, cutoff: dt.date) -> tuple[Manifest, Manifest]:
    """Temporal split: enrollment strictly before ``cutoff`` trains, the rest tests."""
    if isinstance(cutoff, str):
        cutoff = _parse_date(cutoff)
    train = tuple(p for p in m.participants if p.enrollment_date < cutoff)
    test = tuple(p for p in m.participants if p.enrollment_date >= cutoff)
    if not train or not test:
        raise EmptySplit(
            f"cutoff {cutoff.isoformat()} leaves {len(train)} train / {len(test)} test participants"
        )
    return Manifest(train, cutoff), Manifest(test, cutoff)


def with_exclusions(m: Manifest, clip_ids) -> Manifest:
    """Return a copy of ``m`` with the given clips flagged as excluded."""
    ids = set(clip_ids)
    return Manifest(
        tuple(
            replace(p, clips=tuple(replace(c, exclude=c.exclude or c.clip_id in ids) for c in p.clips))
            for p in m.participants
        ),
        m.split_cutoff,
    )


class IssueKind(str, enum.Enum):
    MISSING_FILE = "MissingFile"
    UNREADABLE_AUDIO = "UnreadableAudio"
    ZERO_LENGTH = "ZeroLengthClip"


@dataclass(frozen=True)
class Issue:
    clip_id: str
    kind: IssueKind
    detail: str = ""


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def to_dict(self) -> dict:
        return {"issues": [{"clip_id": i.clip_id, "kind": i.kind.value, "detail": i.detail} for i in self.issues]}


def validate_manifest(m: Manifest, root: str | Path) -> ValidationReport:
    """Check that every clip file exists and decodes to a non-empty waveform."""
    from .audio_io import decode_wav
    from .errors import AudioError, ZeroSamples

    root = Path(root)
    report = ValidationReport()
    for _, c in m.clips(include_excluded=True):
        path = root / c.file_path
        if not path.is_file():
            report.issues.append(Issue(c.clip_id, IssueKind.MISSING_FILE, str(path)))
            continue
        try:
            data = path.read_bytes()
        except OSError as exc:
            report.issues.append(Issue(c.clip_id, IssueKind.UNREADABLE_AUDIO, str(exc)))
            continue
        if not data:
            report.issues.append(Issue(c.clip_id, IssueKind.UNREADABLE_AUDIO, "file is empty"))
            continue
        try:
            decode_wav(data)
        except ZeroSamples as exc:
            report.issues.append(Issue(c.clip_id, IssueKind.ZERO_LENGTH, str(exc)))
        except AudioError as exc:
            report.issues.append(Issue(c.clip_id, IssueKind.UNREADABLE_AUDIO, str(exc)))
    return report
