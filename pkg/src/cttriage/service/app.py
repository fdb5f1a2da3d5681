"""The long-running triage service and its HTTP API.

Studies are ingested (content-hash identity, so re-uploading a file is a
no-op), scored asynchronously by a bounded worker pool, and served as ranked
worklists. API handlers never block on inference; mutations are serialized
through the store's single-writer lock.

Routes:
    POST /studies                      multipart volume -> {study_id}
    GET  /worklist?mode=...            ranked WorklistView
    GET  /studies/{id}                 StudyRecord + TriageResult
    POST /studies/{id}/read            {note?} -> updated record
    GET  /studies/{id}/slices/{k}/overlay   PNG
    GET  /healthz                      service + model status
"""

from __future__ import annotations

import hashlib
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from ..errors import NotScored, SliceOutOfRange, TriageError, UnknownStudy, UnreadableFile
from ..preprocess import PreprocessConfig
from ..triage import RANK_MODES, TriageModels, rank_studies, run_pipeline
from ..volume import Mask, MaskKind, Volume, load_mask, load_volume, save_mask, save_volume
from .overlay import png_bytes, render_overlay
from .store import Store, StudyRecord, now


def content_id(volume: Volume) -> str:
    """Study identity is the content hash of (data, spacing)."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(volume.data).tobytes())
    h.update(repr(volume.spacing).encode())
    return h.hexdigest()[:16]


class TriageService:
    def __init__(self, store: Store, models: TriageModels,
                 preprocess_cfg: PreprocessConfig = PreprocessConfig(),
                 workers: int = 2, method: str = "multitask"):
        self.store = store
        self.models = models
        self.preprocess_cfg = preprocess_cfg
        self.method = method
        self.started_at = time.time()
        self._pool = ThreadPoolExecutor(max_workers=max(1, workers),
                                        thread_name_prefix="triage")
        self._pending: set = set()
        self._pending_lock = threading.Lock()

    # --- ingestion ---

    def ingest(self, path, source_name: str | None = None) -> str:
        """Register a volume file; idempotent on identical content.

        Unreadable files get a FAILED record keyed by the file-bytes hash so
        the failure is visible on the worklist."""
        path = Path(path)
        source_name = source_name or path.name
        try:
            volume = load_volume(path)
        except UnreadableFile as e:
            digest = hashlib.sha256(path.read_bytes() if path.exists() else
                                    source_name.encode()).hexdigest()[:16]
            study_id = f"bad-{digest}"
            if not self.store.contains(study_id):
                self.store.put(StudyRecord(
                    study_id=study_id, ingested_at=now(), status="FAILED",
                    error=str(e), source_name=source_name))
            return study_id

        study_id = content_id(volume)
        if self.store.contains(study_id):
            return study_id

        study_dir = self.store.study_dir(study_id)
        volume_path = study_dir / "volume.raw"
        save_volume(volume, volume_path)
        self.store.put(StudyRecord(
            study_id=study_id, ingested_at=now(), status="QUEUED",
            source_name=source_name, n_slices=int(volume.shape[0]),
            volume_path=str(volume_path.relative_to(self.store.root))))
        self._schedule(study_id)
        return study_id

    def requeue_unscored(self) -> None:
        """Schedule processing for records left QUEUED by a previous run."""
        for rec in self.store.snapshot():
            if rec.status == "QUEUED":
                self._schedule(rec.study_id)

    def _schedule(self, study_id: str) -> None:
        future = self._pool.submit(self._process, study_id)
        with self._pending_lock:
            self._pending.add(future)
        future.add_done_callback(self._discard)

    def _discard(self, future) -> None:
        with self._pending_lock:
            self._pending.discard(future)

    def _process(self, study_id: str) -> None:
        try:
            self.store.mark_processing(study_id)
            rec = self.store.get(study_id)
            volume = load_volume(self.store.root / rec.volume_path)
            volume = Volume(data=volume.data, spacing=volume.spacing, study_id=study_id)
            result, lesion = run_pipeline(
                volume, self.models, preprocess_cfg=self.preprocess_cfg,
                method=self.method)
            lesion_path = self.store.study_dir(study_id) / "lesion.raw"
            save_mask(lesion, lesion_path)
            result = type(result).from_dict(
                {**result.to_dict(), "ingested_at": rec.ingested_at})
            self.store.mark_scored(
                study_id, result, str(lesion_path.relative_to(self.store.root)))
        except Exception as e:  # noqa: BLE001 - a study failure stays per-study
            self.store.mark_failed(study_id, f"{type(e).__name__}: {e}")

    def drain(self, timeout: float = 600.0) -> None:
        """Block until all scheduled studies finish (tests and shutdown)."""
        deadline = time.time() + timeout
        while True:
            with self._pending_lock:
                pending = list(self._pending)
            if not pending:
                return
            for future in pending:
                future.result(timeout=max(0.0, deadline - time.time()))

    # --- views ---

    def worklist(self, mode: str) -> dict:
        if mode not in RANK_MODES:
            raise ValueError(f"mode must be one of {RANK_MODES}")
        records = self.store.snapshot()
        scored = {r.result.study_id: r for r in records
                  if r.status == "SCORED" and r.result is not None}
        unread = [r.result for r in scored.values() if not r.read]
        read = [r.result for r in scored.values() if r.read]
        items = []
        for rank, result in enumerate(rank_studies(unread, mode), start=1):
            items.append({"rank": rank, **scored[result.study_id].to_dict()})
        offset = len(items)
        for rank, result in enumerate(rank_studies(read, mode), start=offset + 1):
            items.append({"rank": rank, **scored[result.study_id].to_dict()})
        pending = sorted(
            (r for r in records if r.status in ("QUEUED", "PROCESSING")),
            key=lambda r: r.ingested_at)
        failed = sorted((r for r in records if r.status == "FAILED"),
                        key=lambda r: r.ingested_at)
        return {
            "mode": mode,
            "generated_at": time.time(),
            "items": items,
            "pending": [r.to_dict() for r in pending],
            "failed": [r.to_dict() for r in failed],
        }

    def mark_read(self, study_id: str, note: str | None = None) -> StudyRecord:
        return self.store.mark_read(study_id, note)

    def overlay_png(self, study_id: str, slice_index: int,
                    mode: str = "severity") -> bytes:
        rec = self.store.get(study_id)
        if rec.status != "SCORED" or rec.result is None:
            raise NotScored(f"{study_id} is {rec.status}")
        volume = load_volume(self.store.root / rec.volume_path)
        lesion = None
        if rec.lesion_path:
            lesion = load_mask(self.store.root / rec.lesion_path,
                               kind=MaskKind.LESION).data
        tint = (rec.result.severity if mode == "severity"
                else rec.result.covid_probability)
        image = render_overlay(volume.data, lesion, slice_index, tint)
        return png_bytes(image)

    def health(self) -> dict:
        records = self.store.snapshot()
        return {
            "status": "ok",
            "uptime_s": time.time() - self.started_at,
            "models": {
                "lungs": self.models.lungs is not None,
                "multitask": self.models.multitask is not None,
            },
            "method": self.method,
            "studies": len(records),
            "queued": sum(r.status in ("QUEUED", "PROCESSING") for r in records),
        }


def create_app(service: TriageService) -> FastAPI:
    app = FastAPI(title="cttriage", version="0.1.0")
    # the worklist UI is served as static files from anywhere
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(TriageError)
    async def triage_error(request: Request, exc: TriageError):
        status = 500
        if isinstance(exc, UnknownStudy):
            status = 404
        elif isinstance(exc, NotScored):
            status = 409
        elif isinstance(exc, SliceOutOfRange):
            status = 400
        return JSONResponse(status_code=status,
                            content={"error": type(exc).__name__, "detail": str(exc)})

    @app.post("/studies")
    async def post_study(files: list[UploadFile]):
        with tempfile.TemporaryDirectory() as tmp:
            volume_path = None
            for upload in files:
                name = Path(upload.filename or "upload.raw").name
                target = Path(tmp) / name
                target.write_bytes(await upload.read())
                if name.endswith((".nii", ".nii.gz", ".raw")):
                    volume_path = target
            if volume_path is None:
                return JSONResponse(status_code=400, content={
                    "error": "UnreadableFile",
                    "detail": "no .nii/.nii.gz/.raw file in upload"})
            study_id = service.ingest(volume_path)
        record = service.store.get(study_id)
        return {"study_id": study_id, "status": record.status}

    @app.get("/worklist")
    async def get_worklist(mode: str = "identification"):
        if mode not in RANK_MODES:
            return JSONResponse(status_code=422, content={
                "error": "BadMode", "detail": f"mode must be one of {RANK_MODES}"})
        return service.worklist(mode)

    @app.get("/studies/{study_id}")
    async def get_study(study_id: str):
        return service.store.get(study_id).to_dict()

    @app.post("/studies/{study_id}/read")
    async def post_read(study_id: str, payload: dict | None = None):
        note = (payload or {}).get("note")
        return service.mark_read(study_id, note).to_dict()

    @app.get("/studies/{study_id}/slices/{slice_index}/overlay")
    async def get_overlay(study_id: str, slice_index: int, mode: str = "severity"):
        png = service.overlay_png(study_id, slice_index, mode)
        return Response(content=png, media_type="image/png")

    @app.get("/healthz")
    async def healthz():
        return service.health()

    return app
