"""Persistent worklist state: an append-only JSONL record log with an
in-memory index, compacted on startup. Every mutation rewrites the study's
full record as one line and fsyncs, so a crash never loses an acknowledged
state change. Volumes and lesion masks live next to the log under
``studies/<id>/`` in the project raw format."""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import NotScored, UnknownStudy
from ..triage import TriageResult

STATUSES = ("QUEUED", "PROCESSING", "SCORED", "FAILED")


@dataclass(frozen=True)
class StudyRecord:
    study_id: str
    ingested_at: float
    status: str = "QUEUED"
    result: TriageResult | None = None
    read: bool = False
    note: str | None = None
    error: str | None = None
    source_name: str = ""
    volume_path: str = ""
    lesion_path: str | None = None
    n_slices: int = 0  # viewer paging bound; 0 until a volume was readable

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if (self.result is not None) != (self.status == "SCORED"):
            raise ValueError("result must be present exactly when status is SCORED")
        if self.read and self.status != "SCORED":
            raise ValueError("only SCORED studies can be marked read")

    def to_dict(self) -> dict:
        return {
            "study_id": self.study_id,
            "ingested_at": self.ingested_at,
            "status": self.status,
            "result": self.result.to_dict() if self.result else None,
            "read": self.read,
            "note": self.note,
            "error": self.error,
            "source_name": self.source_name,
            "volume_path": self.volume_path,
            "lesion_path": self.lesion_path,
            "n_slices": self.n_slices,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudyRecord":
        result = d.get("result")
        return cls(
            study_id=d["study_id"],
            ingested_at=d["ingested_at"],
            status=d["status"],
            result=TriageResult.from_dict(result) if result else None,
            read=d.get("read", False),
            note=d.get("note"),
            error=d.get("error"),
            source_name=d.get("source_name", ""),
            volume_path=d.get("volume_path", ""),
            lesion_path=d.get("lesion_path"),
            n_slices=d.get("n_slices", 0),
        )


class Store:
    """Single-writer record store; readers get consistent snapshots."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.log_path = self.root / "log.jsonl"
        self._lock = threading.RLock()
        self._records: dict[str, StudyRecord] = {}
        self._replay()
        self._compact()

    def _replay(self) -> None:
        if not self.log_path.exists():
            return
        with open(self.log_path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                record = StudyRecord.from_dict(json.loads(line))
                self._records[record.study_id] = record

    def _compact(self) -> None:
        # interrupted processing cannot resume across restarts: re-queueing
        # happens in the service, so orphaned PROCESSING becomes FAILED here
        for sid, rec in list(self._records.items()):
            if rec.status == "PROCESSING":
                self._records[sid] = replace(
                    rec, status="FAILED", error="interrupted by restart")
        tmp = self.log_path.with_suffix(".jsonl.tmp")
        with open(tmp, "w") as f:
            for rec in sorted(self._records.values(), key=lambda r: r.ingested_at):
                f.write(json.dumps(rec.to_dict()) + "\n")
            f.flush()
            os.fsync(f.fileno())
        tmp.replace(self.log_path)

    def _append(self, record: StudyRecord) -> None:
        with open(self.log_path, "a") as f:
            f.write(json.dumps(record.to_dict()) + "\n")
            f.flush()
            os.fsync(f.fileno())

    # --- mutations (serialized) ---

    def put(self, record: StudyRecord) -> StudyRecord:
        with self._lock:
            self._records[record.study_id] = record
            self._append(record)
            return record

    def _update(self, study_id: str, **changes) -> StudyRecord:
        with self._lock:
            rec = self._records.get(study_id)
            if rec is None:
                raise UnknownStudy(study_id)
            rec = replace(rec, **changes)
            return self.put(rec)

    def mark_processing(self, study_id: str) -> StudyRecord:
        return self._update(study_id, status="PROCESSING")

    def mark_scored(self, study_id: str, result: TriageResult,
                    lesion_path: str | None) -> StudyRecord:
        return self._update(study_id, status="SCORED", result=result,
                            lesion_path=lesion_path, error=None)

    def mark_failed(self, study_id: str, error: str) -> StudyRecord:
        return self._update(study_id, status="FAILED", error=error, result=None)

    def mark_read(self, study_id: str, note: str | None = None) -> StudyRecord:
        with self._lock:
            rec = self._records.get(study_id)
            if rec is None:
                raise UnknownStudy(study_id)
            if rec.status != "SCORED":
                raise NotScored(f"{study_id} is {rec.status}")
            if rec.read and note is None:
                return rec  # idempotent
            return self._update(study_id, read=True,
                                note=note if note is not None else rec.note)

    # --- reads ---

    def get(self, study_id: str) -> StudyRecord:
        with self._lock:
            rec = self._records.get(study_id)
            if rec is None:
                raise UnknownStudy(study_id)
            return rec

    def contains(self, study_id: str) -> bool:
        with self._lock:
            return study_id in self._records

    def snapshot(self) -> list[StudyRecord]:
        with self._lock:
            return list(self._records.values())

    def study_dir(self, study_id: str) -> Path:
        d = self.root / "studies" / study_id
        d.mkdir(parents=True, exist_ok=True)
        return d


def now() -> float:
    return time.time()
