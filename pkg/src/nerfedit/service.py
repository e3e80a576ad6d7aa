"""HTTP facade for interactive editing sessions over loaded checkpoints."""

from __future__ import annotations

import base64
import io
import json
import logging
import math
import queue
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import Response
from PIL import Image
from pydantic import BaseModel

from .cameras import CameraPose
from .checkpoints import CheckpointBundle, load_checkpoint
from .clipbridge import Embedding, StubBackend
from .inversion import InversionSettings, invert
from .mappers import CodeMapper, apply_edit_direction, interpolate_codes
from .rendering import render_image

log = logging.getLogger(__name__)


class LoadedCheckpoint:
    """A checkpoint bundle with instantiated mapper modules."""

    def __init__(self, bundle: CheckpointBundle):
        self.field = bundle.field
        self.field.eval()
        self.render_config = bundle.render_config
        self.shape_mapper = None
        self.appearance_mapper = None
        if bundle.has_mappers:
            cfg = bundle.mapper_config
            for attr, state in (
                ("shape_mapper", bundle.shape_mapper_state),
                ("appearance_mapper", bundle.appearance_mapper_state),
            ):
                mapper = CodeMapper(cfg["embed_dim"], cfg["code_dim"], tuple(cfg["channels"]))
                mapper.load_state_dict(state)
                mapper.eval()
                setattr(self, attr, mapper)

    @property
    def code_dim(self) -> int:
        return self.field.code_dim


@dataclass
class SessionRecord:
    id: str
    checkpoint: str
    z_s: list[float]
    z_a: list[float]
    initial_z_s: list[float]
    initial_z_a: list[float]
    pose: dict
    history: list[dict] = dc_field(default_factory=list)
    created_at: float = dc_field(default_factory=time.time)
    updated_at: float = dc_field(default_factory=time.time)

    def public(self) -> dict:
        return asdict(self)


class CreateSessionBody(BaseModel):
    checkpoint: str | None = None
    init: str = "sampled"
    z_s: list[float] | None = None
    z_a: list[float] | None = None
    seed: int | None = None


class EditBody(BaseModel):
    text: str | None = None
    exemplar_b64: str | None = None
    channel: str = "both"
    scale: float = 1.0


class InterpolateBody(BaseModel):
    other: str
    r: float


class InvertBody(BaseModel):
    image_b64: str
    checkpoint: str | None = None


def _png_bytes(image: torch.Tensor) -> bytes:
    arr = np.clip(image.detach().numpy() * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


class EditorService:
    """Owns checkpoints, sessions, and the per-checkpoint inversion workers."""

    def __init__(
        self,
        checkpoints: dict[str, LoadedCheckpoint],
        backend,
        *,
        default_checkpoint: str | None = None,
        inversion_config: InversionSettings | None = None,
        persist_dir: str | Path | None = None,
        max_resolution: int = 256,
    ):
        if not checkpoints:
            raise ValueError("at least one checkpoint is required")
        self.checkpoints = checkpoints
        self.backend = backend
        self.default_checkpoint = default_checkpoint or next(iter(checkpoints))
        self.inversion_config = inversion_config or InversionSettings()
        self.max_resolution = max_resolution
        self.sessions: dict[str, SessionRecord] = {}
        self.jobs: dict[str, dict] = {}
        self._session_locks: dict[str, threading.Lock] = {}
        self._jobs_lock = threading.Lock()
        self.persist_dir = Path(persist_dir) if persist_dir else None
        if self.persist_dir:
            self._restore_sessions()
        self._queues: dict[str, queue.Queue] = {}
        for name in checkpoints:
            q: queue.Queue = queue.Queue()
            self._queues[name] = q
            threading.Thread(target=self._worker, args=(name, q), daemon=True).start()

    # -- session plumbing --------------------------------------------------

    def _persist(self, record: SessionRecord) -> None:
        if not self.persist_dir:
            return
        path = self.persist_dir / "sessions" / f"{record.id}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(record.public()))

    def _restore_sessions(self) -> None:
        folder = self.persist_dir / "sessions"
        if not folder.exists():
            return
        for path in sorted(folder.glob("*.json")):
            try:
                data = json.loads(path.read_text())
                record = SessionRecord(**data)
            except (json.JSONDecodeError, TypeError) as exc:
                log.warning("skipping unreadable session file %s: %s", path, exc)
                continue
            self.sessions[record.id] = record
            self._session_locks[record.id] = threading.Lock()

    def bundle_for(self, name: str | None) -> tuple[str, LoadedCheckpoint]:
        name = name or self.default_checkpoint
        if name not in self.checkpoints:
            raise HTTPException(status_code=404, detail=f"unknown checkpoint {name!r}")
        return name, self.checkpoints[name]

    def get_session(self, session_id: str) -> SessionRecord:
        record = self.sessions.get(session_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return record

    def session_lock(self, session_id: str) -> threading.Lock:
        return self._session_locks[session_id]

    def create_session(
        self,
        checkpoint: str | None,
        z_s: torch.Tensor,
        z_a: torch.Tensor,
        pose: CameraPose | None = None,
    ) -> SessionRecord:
        name, bundle = self.bundle_for(checkpoint)
        pose = pose or CameraPose(0.8, 0.45, bundle.render_config.camera_radius)
        record = SessionRecord(
            id=uuid.uuid4().hex[:12],
            checkpoint=name,
            z_s=z_s.tolist(),
            z_a=z_a.tolist(),
            initial_z_s=z_s.tolist(),
            initial_z_a=z_a.tolist(),
            pose={"azimuth": pose.azimuth, "elevation": pose.elevation, "radius": pose.radius},
        )
        self.sessions[record.id] = record
        self._session_locks[record.id] = threading.Lock()
        self._persist(record)
        return record

    def render_session(
        self, record: SessionRecord, azimuth: float, elevation: float, resolution: int
    ) -> torch.Tensor:
        _, bundle = self.bundle_for(record.checkpoint)
        if elevation < 0:
            raise HTTPException(status_code=422, detail="elevation must be >= 0 (upper hemisphere)")
        if elevation > math.pi / 2:
            raise HTTPException(status_code=422, detail="elevation must be <= pi/2")
        if not 1 <= resolution <= self.max_resolution:
            raise HTTPException(
                status_code=422,
                detail=f"resolution must lie in [1, {self.max_resolution}]",
            )
        pose = CameraPose(azimuth, elevation, bundle.render_config.camera_radius)
        with torch.no_grad():
            return render_image(
                bundle.field,
                pose,
                torch.tensor(record.z_s),
                torch.tensor(record.z_a),
                bundle.render_config,
                resolution=resolution,
            )

    def mapper_deltas(self, bundle: LoadedCheckpoint, embedding: Embedding, channel: str):
        if bundle.shape_mapper is None or bundle.appearance_mapper is None:
            raise HTTPException(status_code=409, detail="checkpoint has no trained mappers")
        with torch.no_grad():
            dz_s = bundle.shape_mapper(embedding.values) if channel in ("shape", "both") else None
            dz_a = (
                bundle.appearance_mapper(embedding.values)
                if channel in ("appearance", "both")
                else None
            )
        return dz_s, dz_a

    def apply_edit(self, record: SessionRecord, embedding: Embedding, entry: dict) -> None:
        """Mutate session codes along the mapper deltas; append to history."""
        _, bundle = self.bundle_for(record.checkpoint)
        channel, scale = entry["channel"], entry["scale"]
        dz_s, dz_a = self.mapper_deltas(bundle, embedding, channel)
        z_s = torch.tensor(record.z_s)
        z_a = torch.tensor(record.z_a)
        # "both" applies the shape edit first, then the appearance edit.
        if dz_s is not None:
            z_s = apply_edit_direction(z_s, dz_s, scale)
        if dz_a is not None:
            z_a = apply_edit_direction(z_a, dz_a, scale)
        record.z_s = z_s.tolist()
        record.z_a = z_a.tolist()
        record.history.append(entry)
        record.updated_at = time.time()
        self._persist(record)

    def replay(self, record: SessionRecord) -> tuple[torch.Tensor, torch.Tensor]:
        """Re-run the recorded edits from the initial codes."""
        _, bundle = self.bundle_for(record.checkpoint)
        z_s = torch.tensor(record.initial_z_s)
        z_a = torch.tensor(record.initial_z_a)
        for entry in record.history:
            e = Embedding(torch.tensor(entry["embedding"]), entry["kind"], self.backend.name)
            dz_s, dz_a = self.mapper_deltas(bundle, e, entry["channel"])
            if dz_s is not None:
                z_s = apply_edit_direction(z_s, dz_s, entry["scale"])
            if dz_a is not None:
                z_a = apply_edit_direction(z_a, dz_a, entry["scale"])
        return z_s, z_a

    # -- inversion jobs ----------------------------------------------------

    def submit_inversion(self, image: np.ndarray | None, checkpoint: str | None, error: str | None = None) -> dict:
        name, _ = self.bundle_for(checkpoint)
        job = {
            "id": uuid.uuid4().hex[:12],
            "status": "failed" if error else "queued",
            "checkpoint": name,
            "session_id": None,
            "diagnostic": error,
            "psnr": None,
            "submitted_at": time.time(),
        }
        with self._jobs_lock:
            self.jobs[job["id"]] = job
        if error is None:
            self._queues[name].put((job["id"], image))
        return job

    def _worker(self, checkpoint: str, q: queue.Queue) -> None:
        bundle = self.checkpoints[checkpoint]
        while True:
            job_id, image = q.get()
            with self._jobs_lock:
                job = self.jobs[job_id]
                job["status"] = "running"
            try:
                result = invert(
                    image,
                    bundle.field,
                    self.backend,
                    self.inversion_config,
                    bundle.render_config,
                )
                record = self.create_session(
                    checkpoint, result.z_s, result.z_a, pose=result.pose
                )
                with self._jobs_lock:
                    job.update(status="done", session_id=record.id, psnr=result.psnr)
            except Exception as exc:
                diagnostic = getattr(exc, "diagnostic", None) or str(exc)
                with self._jobs_lock:
                    job.update(status="failed", diagnostic=diagnostic)
            finally:
                q.task_done()


def create_app(
    checkpoint_paths: dict[str, str | Path] | None = None,
    *,
    service: EditorService | None = None,
    backend=None,
    inversion_config: InversionSettings | None = None,
    persist_dir: str | Path | None = None,
    max_resolution: int = 256,
) -> FastAPI:
    """Build the FastAPI app, loading checkpoints from disk unless a
    preassembled service is supplied."""
    if service is None:
        backend = backend or StubBackend()
        loaded = {
            name: LoadedCheckpoint(load_checkpoint(path))
            for name, path in (checkpoint_paths or {}).items()
        }
        service = EditorService(
            loaded,
            backend,
            inversion_config=inversion_config,
            persist_dir=persist_dir,
            max_resolution=max_resolution,
        )
    app = FastAPI(title="nerfedit")
    app.state.service = service
    svc = service

    def session_payload(record: SessionRecord, render: torch.Tensor | None = None) -> dict:
        payload = {"session": record.public()}
        if render is not None:
            payload["render_b64"] = base64.b64encode(_png_bytes(render)).decode()
        return payload

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "checkpoints": sorted(svc.checkpoints)}

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        name, bundle = svc.bundle_for(body.checkpoint)
        if body.init == "provided":
            if body.z_s is None or body.z_a is None:
                raise HTTPException(status_code=422, detail="provided init requires z_s and z_a")
            if len(body.z_s) != bundle.code_dim or len(body.z_a) != bundle.code_dim:
                raise HTTPException(
                    status_code=422,
                    detail=f"codes must have dimension {bundle.code_dim}",
                )
            z_s = torch.tensor(body.z_s, dtype=torch.float32)
            z_a = torch.tensor(body.z_a, dtype=torch.float32)
        elif body.init == "sampled":
            g = torch.Generator().manual_seed(body.seed if body.seed is not None else int(time.time_ns() % 2**31))
            z_s, z_a = bundle.field.sample_codes(g)
        else:
            raise HTTPException(status_code=422, detail="init must be 'sampled' or 'provided'")
        record = svc.create_session(name, z_s, z_a)
        pose = record.pose
        render = svc.render_session(
            record, pose["azimuth"], pose["elevation"], bundle.render_config.resolution
        )
        return session_payload(record, render)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return session_payload(svc.get_session(session_id))

    @app.post("/sessions/{session_id}/edit")
    def edit_session(session_id: str, body: EditBody):
        record = svc.get_session(session_id)
        if (body.text is None) == (body.exemplar_b64 is None):
            raise HTTPException(
                status_code=422, detail="provide exactly one of text or exemplar_b64"
            )
        if body.channel not in ("shape", "appearance", "both"):
            raise HTTPException(status_code=422, detail="channel must be shape|appearance|both")
        if body.text is not None:
            if not body.text.strip():
                raise HTTPException(status_code=422, detail="empty prompt")
            embedding = svc.backend.embed_text(body.text)
            kind, label = "text", body.text
        else:
            try:
                image = _decode_png(base64.b64decode(body.exemplar_b64))
            except Exception as exc:
                raise HTTPException(status_code=422, detail=f"undecodable exemplar: {exc}")
            embedding = svc.backend.embed_image(image)
            kind, label = "exemplar", None
        entry = {
            "kind": kind,
            "target": label,
            "embedding": embedding.values.detach().tolist(),
            "channel": body.channel,
            "scale": body.scale,
        }
        with svc.session_lock(session_id):
            svc.apply_edit(record, embedding, entry)
        _, bundle = svc.bundle_for(record.checkpoint)
        render = svc.render_session(
            record,
            record.pose["azimuth"],
            record.pose["elevation"],
            bundle.render_config.resolution,
        )
        return session_payload(record, render)

    @app.get("/sessions/{session_id}/render")
    def render_view(session_id: str, az: float = 0.8, el: float = 0.45, res: int = 64):
        record = svc.get_session(session_id)
        image = svc.render_session(record, az, el, res)
        return Response(content=_png_bytes(image), media_type="image/png")

    @app.post("/sessions/{session_id}/interpolate")
    def interpolate(session_id: str, body: InterpolateBody):
        record = svc.get_session(session_id)
        other = svc.get_session(body.other)
        if other.checkpoint != record.checkpoint:
            raise HTTPException(status_code=422, detail="sessions use different checkpoints")
        if not 0.0 <= body.r <= 1.0:
            raise HTTPException(status_code=422, detail="r must lie in [0, 1]")
        z_s, z_a = interpolate_codes(
            (torch.tensor(record.z_s), torch.tensor(record.z_a)),
            (torch.tensor(other.z_s), torch.tensor(other.z_a)),
            body.r,
        )
        _, bundle = svc.bundle_for(record.checkpoint)
        blended = SessionRecord(
            id="",
            checkpoint=record.checkpoint,
            z_s=z_s.tolist(),
            z_a=z_a.tolist(),
            initial_z_s=[],
            initial_z_a=[],
            pose=record.pose,
        )
        image = svc.render_session(
            blended,
            record.pose["azimuth"],
            record.pose["elevation"],
            bundle.render_config.resolution,
        )
        return Response(content=_png_bytes(image), media_type="image/png")

    @app.post("/inversions")
    async def start_inversion(request: Request, checkpoint: str | None = None):
        content_type = request.headers.get("content-type", "")
        error = None
        image = None
        if content_type.startswith("application/json"):
            try:
                body = InvertBody(**(await request.json()))
                checkpoint = body.checkpoint or checkpoint
                image = _decode_png(base64.b64decode(body.image_b64))
            except Exception as exc:
                error = f"undecodable upload: {exc}"
        else:
            try:
                image = _decode_png(await request.body())
            except Exception as exc:
                error = f"undecodable upload: {exc}"
        job = svc.submit_inversion(image, checkpoint, error=error)
        return {"job_id": job["id"], "status": job["status"]}

    @app.get("/inversions/{job_id}")
    def poll_job(job_id: str):
        with svc._jobs_lock:
            job = svc.jobs.get(job_id)
            if job is None:
                raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
            return dict(job)

    return app
