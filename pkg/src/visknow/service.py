"""HTTP facade for the review workflow.

Endpoints: review queue paging, per-item decisions, apply, category
subgraphs, and image byte passthrough for the browser UI. Every JSON
response carries format_version; image responses carry it as a header.
Auth is a static bearer token (Authorization header, or ?token= for
resources loaded via plain <img> tags).
"""

from __future__ import annotations

import mimetypes
import os
import threading
from typing import Optional

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import AlreadyDecided, InvalidEdit, UnknownItem, VisKnowError
from .graph import KnowledgeGraph
from .persistence import FORMAT_VERSION, MediaManifest, load_kb, save_kb
from .review import (Decision, ReviewKind, ReviewQueue, apply_decisions)

PENDING_FILE = "review/pending.jsonl"
JOURNAL_FILE = "review/journal.jsonl"


class DecisionBody(BaseModel):
    decision: str
    reviewer: str = ""
    payload: Optional[dict] = None


class ServiceState:
    def __init__(self, kb_dir: str, token: str):
        self.kb_dir = kb_dir
        self.token = token
        self.graph: KnowledgeGraph
        self.manifest: MediaManifest
        self.graph, self.manifest = load_kb(kb_dir)
        os.makedirs(os.path.join(kb_dir, "review"), exist_ok=True)
        self.queue = ReviewQueue(
            journal_path=os.path.join(kb_dir, JOURNAL_FILE),
            pending_path=None)
        pending = os.path.join(kb_dir, PENDING_FILE)
        if os.path.exists(pending):
            self.queue.load_pending(pending)
        self.queue.replay_journal(os.path.join(kb_dir, JOURNAL_FILE))
        self.write_lock = threading.Lock()


def _versioned(payload: dict) -> dict:
    return {"format_version": FORMAT_VERSION, **payload}


def create_app(kb_dir: str, token: str,
               static_dir: Optional[str] = None) -> FastAPI:
    state = ServiceState(kb_dir, token)
    app = FastAPI(title="visknow review", docs_url=None, redoc_url=None)
    app.state.service = state

    def require_token(request: Request):
        header = request.headers.get("authorization", "")
        if header == f"Bearer {state.token}":
            return
        if request.query_params.get("token") == state.token:
            return
        raise HTTPException(status_code=401, detail="missing or bad token")

    @app.exception_handler(VisKnowError)
    def _domain_error(request: Request, exc: VisKnowError):
        status = {UnknownItem: 404, AlreadyDecided: 409, InvalidEdit: 422}
        code = next((s for t, s in status.items() if isinstance(exc, t)), 400)
        return JSONResponse(status_code=code, content=_versioned(
            {"error": type(exc).__name__, "message": str(exc)}))

    @app.get("/api/review", dependencies=[Depends(require_token)])
    def list_review(kind: Optional[str] = None, page: int = 1,
                    page_size: int = Query(default=50, ge=1, le=500)):
        kind_filter = ReviewKind(kind) if kind else None
        try:
            items, total = state.queue.list_pending(kind_filter, page, page_size)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return _versioned({"items": [it.to_json() for it in items],
                           "total": total, "page": page, "page_size": page_size})

    @app.post("/api/review/{item_id}/decision",
              dependencies=[Depends(require_token)])
    def decide(item_id: str, body: DecisionBody):
        try:
            decision = Decision(body.decision.lower())
        except ValueError as exc:
            raise HTTPException(status_code=400,
                                detail=f"unknown decision {body.decision!r}") from exc
        with state.write_lock:
            item = state.queue.record_decision(item_id, decision, body.reviewer,
                                               payload=body.payload)
        return _versioned({"item": item.to_json()})

    @app.post("/api/apply", dependencies=[Depends(require_token)])
    def apply_all():
        with state.write_lock:
            report = apply_decisions(state.queue, state.graph)
            checksum = save_kb(state.graph, state.manifest, state.kb_dir)
        return _versioned({"applied": report.applied, "skipped": report.skipped,
                           "checksum": checksum})

    @app.get("/api/categories/{label}/subgraph",
             dependencies=[Depends(require_token)])
    def subgraph(label: str, hops: int = Query(default=2, ge=1, le=6)):
        root_id = state.graph.entity_id_for_label(label)
        if root_id is None:
            raise HTTPException(status_code=404, detail=f"no category {label!r}")
        sub = state.graph.category_subgraph(root_id, max_hops=hops)
        entities = [{"id": e, "label": state.graph.entities[e].label,
                     "kind": state.graph.entities[e].kind.value,
                     "groundings": len(state.graph.entities[e].groundings)}
                    for e in sorted(sub.entities)]
        triplets = []
        for tid in sorted(sub.triplets):
            trip = state.graph.triplets[tid]
            triplets.append({"id": tid,
                             "head": state.graph.entities[trip.head].label,
                             "relation": state.graph.relations[trip.relation].label,
                             "tail": state.graph.entities[trip.tail].label,
                             "visual": state.graph.is_visual_knowledge(tid)})
        return _versioned({"root": root_id, "label": label, "hops": hops,
                           "entities": entities, "triplets": triplets})

    @app.get("/api/images/{image_id}", dependencies=[Depends(require_token)])
    def image_bytes(image_id: str):
        entry = state.manifest.entries.get(image_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"no image {image_id!r}")
        path = entry.uri
        if path.startswith("file://"):
            path = path[len("file://"):]
        if not os.path.isabs(path):
            path = os.path.join(state.kb_dir, path)
        if not os.path.exists(path):
            raise HTTPException(status_code=404, detail="image bytes unavailable")
        media_type = mimetypes.guess_type(path)[0] or "application/octet-stream"
        return FileResponse(path, media_type=media_type,
                            headers={"X-Format-Version": str(FORMAT_VERSION)})

    if static_dir and os.path.isdir(static_dir):
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def serve(kb_dir: str, addr: str, token: str,
          static_dir: Optional[str] = None):  # pragma: no cover - thin wrapper
    import uvicorn
    host, _, port = addr.rpartition(":")
    app = create_app(kb_dir, token, static_dir=static_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
