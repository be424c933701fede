"""HTTP service exposing study tasks to annotators and serving rankings.

State is a per-study directory under the data dir: ``study.json`` holds the
immutable study configuration (including the media manifest) and
``votes.jsonl`` is the append-only vote ledger. Replaying those two files
from an empty process reconstructs the service exactly; task leases are
advisory, in-memory only, and expire after 10 minutes.

Annotators identify themselves with the opaque ``X-Annotator-Id`` header.
Task payloads never reveal competitor identities or attention-check status;
media is addressed by opaque per-task URLs resolved server-side.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, Header, Response
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .elo import (
    DEGRADED_SUFFIX,
    EloTable,
    Study,
    StudyError,
    Task,
    VoteRecord,
    bootstrap_ranking,
    schedule_tasks,
)

LEASE_SECONDS = 600.0
DEFAULT_QUESTIONS = {
    "quality": "Which video has higher visual quality?",
    "prompt_following": "Which video follows the prompt better?",
}

ENV_DATA_DIR = "STUDY_DATA_DIR"
ENV_BIND_ADDR = "STUDY_BIND_ADDR"


class MediaEntry(BaseModel):
    competitor: str
    prompt_index: int
    path: str


class CreateStudyRequest(BaseModel):
    study_id: str = Field(min_length=1)
    competitors: list[str]
    prompts: list[str]
    axes: list[str] = ["quality", "prompt_following"]
    votes_per_task: int = 3
    seed: int = 0
    n_boot: int = 1000
    media: list[MediaEntry]
    questions: dict[str, str] = {}


class VoteRequest(BaseModel):
    task_id: str
    choice: str
    latency_ms: int = 0


@dataclass
class StudyState:
    study: Study
    tasks: list[Task]
    media: dict[tuple[str, int], str]
    questions: dict[str, str]
    votes: list[VoteRecord] = field(default_factory=list)
    vote_keys: set[tuple[str, str]] = field(default_factory=set)
    voted_tasks: set[str] = field(default_factory=set)
    leases: dict[str, tuple[str, float]] = field(default_factory=dict)
    # (task_id, annotator) pairs released after e.g. a media failure; the
    # task frees up for everyone else but is not re-offered to the skipper.
    skips: set[tuple[str, str]] = field(default_factory=set)

    def task_by_id(self, task_id: str) -> Task | None:
        return self._index().get(task_id)

    def _index(self) -> dict[str, Task]:
        if not hasattr(self, "_task_index"):
            self._task_index = {t.task_id: t for t in self.tasks}
        return self._task_index


class StudyStore:
    """Disk-backed study registry; all mutation goes through one lock."""

    def __init__(self, data_dir: str | Path, media_root: str | Path):
        self.data_dir = Path(data_dir)
        self.media_root = Path(media_root)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._studies: dict[str, StudyState] = {}
        for study_dir in sorted(self.data_dir.iterdir()):
            if (study_dir / "study.json").exists():
                state = self._load(study_dir)
                self._studies[state.study.study_id] = state

    # -- persistence --

    def _load(self, study_dir: Path) -> StudyState:
        config = json.loads((study_dir / "study.json").read_text(encoding="utf-8"))
        state = self._state_from_config(config)
        ledger = study_dir / "votes.jsonl"
        if ledger.exists():
            with ledger.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    d = json.loads(line)
                    vote = VoteRecord(
                        task_id=d["task_id"],
                        annotator_id=d["annotator_id"],
                        choice=d["choice"],
                        submitted_at=d.get("submitted_at", ""),
                        latency_ms=int(d.get("latency_ms", 0)),
                    )
                    self._remember(state, vote)
        return state

    @staticmethod
    def _state_from_config(config: dict) -> StudyState:
        study = Study(
            study_id=config["study_id"],
            competitors=tuple(config["competitors"]),
            prompts=tuple(config["prompts"]),
            axes=tuple(config["axes"]),
            votes_per_task=int(config["votes_per_task"]),
            seed=int(config["seed"]),
            n_boot=int(config.get("n_boot", 1000)),
        )
        media = {
            (e["competitor"], int(e["prompt_index"])): e["path"] for e in config["media"]
        }
        questions = dict(DEFAULT_QUESTIONS)
        questions.update(config.get("questions", {}))
        return StudyState(
            study=study, tasks=schedule_tasks(study), media=media, questions=questions
        )

    @staticmethod
    def _remember(state: StudyState, vote: VoteRecord) -> None:
        state.votes.append(vote)
        state.vote_keys.add((vote.task_id, vote.annotator_id))
        state.voted_tasks.add(vote.task_id)

    def _append_vote(self, study_id: str, vote: VoteRecord) -> None:
        path = self.data_dir / study_id / "votes.jsonl"
        line = json.dumps(
            {
                "task_id": vote.task_id,
                "annotator_id": vote.annotator_id,
                "choice": vote.choice,
                "submitted_at": vote.submitted_at,
                "latency_ms": vote.latency_ms,
            },
            separators=(",", ":"),
        )
        with path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    # -- operations --

    def create_study(self, req: CreateStudyRequest) -> StudyState:
        config = req.model_dump()
        with self._lock:
            if req.study_id in self._studies:
                raise KeyError(req.study_id)
            state = self._state_from_config(config)
            missing = [
                (c, i)
                for c in state.study.competitors
                for i in range(len(state.study.prompts))
                if (c, i) not in state.media
            ]
            if missing:
                raise StudyError(f"media manifest missing entries for {missing[:5]}")
            study_dir = self.data_dir / req.study_id
            study_dir.mkdir(parents=True, exist_ok=True)
            (study_dir / "study.json").write_text(
                json.dumps(config, indent=2, ensure_ascii=False), encoding="utf-8"
            )
            (study_dir / "votes.jsonl").touch()
            self._studies[req.study_id] = state
            return state

    def get(self, study_id: str) -> StudyState | None:
        with self._lock:
            return self._studies.get(study_id)

    def next_task(self, study_id: str, annotator_id: str) -> Task | None:
        now = time.monotonic()
        with self._lock:
            state = self._studies.get(study_id)
            if state is None:
                raise KeyError(study_id)
            # Re-offer a live lease held by this annotator before anything else.
            for task_id, (holder, expires) in state.leases.items():
                if holder == annotator_id and expires > now and task_id not in state.voted_tasks:
                    return state.task_by_id(task_id)
            for task in state.tasks:
                if task.task_id in state.voted_tasks:
                    continue
                if (task.task_id, annotator_id) in state.vote_keys:
                    continue
                if (task.task_id, annotator_id) in state.skips:
                    continue
                lease = state.leases.get(task.task_id)
                if lease is not None and lease[1] > now and lease[0] != annotator_id:
                    continue
                state.leases[task.task_id] = (annotator_id, now + LEASE_SECONDS)
                return task
            return None

    def release_lease(self, study_id: str, task_id: str, annotator_id: str) -> bool:
        """Give up a task (e.g. broken media): frees the lease for others and
        stops offering the task to this annotator."""
        with self._lock:
            state = self._studies.get(study_id)
            if state is None:
                raise KeyError(study_id)
            if state.task_by_id(task_id) is None:
                return False
            state.skips.add((task_id, annotator_id))
            lease = state.leases.get(task_id)
            if lease is not None and lease[0] == annotator_id:
                del state.leases[task_id]
            return True

    def submit_vote(
        self, study_id: str, annotator_id: str, req: VoteRequest
    ) -> tuple[str, bool]:
        """Returns (status, duplicate): status in ok|unknown_task|lease_conflict."""
        now = time.monotonic()
        with self._lock:
            state = self._studies.get(study_id)
            if state is None:
                raise KeyError(study_id)
            task = state.task_by_id(req.task_id)
            if task is None:
                return "unknown_task", False
            if (req.task_id, annotator_id) in state.vote_keys:
                return "ok", True
            lease = state.leases.get(req.task_id)
            if lease is not None and lease[1] > now and lease[0] != annotator_id:
                return "lease_conflict", False
            vote = VoteRecord(
                task_id=req.task_id,
                annotator_id=annotator_id,
                choice=req.choice,
                submitted_at=datetime.now(timezone.utc).isoformat(),
                latency_ms=req.latency_ms,
            )
            self._remember(state, vote)
            self._append_vote(study_id, vote)
            state.leases.pop(req.task_id, None)
            return "ok", False

    def ranking(self, study_id: str) -> EloTable:
        with self._lock:
            state = self._studies.get(study_id)
            if state is None:
                raise KeyError(study_id)
            votes = list(state.votes)
        return bootstrap_ranking(votes, state.study, tasks=state.tasks)

    def resolve_media(self, study_id: str, task_id: str, side: str) -> Path | None:
        with self._lock:
            state = self._studies.get(study_id)
            if state is None:
                raise KeyError(study_id)
            task = state.task_by_id(task_id)
            if task is None or side not in ("left", "right"):
                return None
            competitor = task.left if side == "left" else task.right
            rel = state.media.get((competitor, task.prompt_index))
            if rel is None and competitor.endswith(DEGRADED_SUFFIX):
                # No dedicated degraded rendition; fall back to the clean one.
                clean = competitor[: -len(DEGRADED_SUFFIX)]
                rel = state.media.get((clean, task.prompt_index))
            if rel is None:
                return None
        path = (self.media_root / rel).resolve()
        if not str(path).startswith(str(self.media_root.resolve())):
            return None
        return path


def create_app(data_dir: str | Path, media_root: str | Path) -> FastAPI:
    app = FastAPI(title="vidcur study service")
    store = StudyStore(data_dir, media_root)
    app.state.store = store

    @app.get("/healthz")
    def healthz() -> PlainTextResponse:
        return PlainTextResponse("ok")

    @app.post("/studies")
    def create_study(req: CreateStudyRequest) -> JSONResponse:
        try:
            state = store.create_study(req)
        except KeyError:
            return JSONResponse({"error": "study already exists"}, status_code=409)
        except StudyError as e:
            return JSONResponse({"error": str(e)}, status_code=422)
        return JSONResponse(
            {"study_id": state.study.study_id, "task_count": len(state.tasks)},
            status_code=201,
        )

    @app.get("/studies/{study_id}/tasks/next")
    def next_task(
        study_id: str, x_annotator_id: str = Header(default="anonymous")
    ) -> Response:
        try:
            task = store.next_task(study_id, x_annotator_id)
        except KeyError:
            return JSONResponse({"error": "unknown study"}, status_code=404)
        if task is None:
            return Response(status_code=204)
        state = store.get(study_id)
        payload = {
            "task_id": task.task_id,
            "prompt": task.prompt,
            "axis": task.axis,
            "question": state.questions.get(task.axis, task.axis),
            "left_media": f"/media/{study_id}/{task.task_id}/left",
            "right_media": f"/media/{study_id}/{task.task_id}/right",
        }
        return JSONResponse(payload)

    @app.post("/studies/{study_id}/votes")
    def submit_vote(
        study_id: str, req: VoteRequest, x_annotator_id: str = Header(default="anonymous")
    ) -> Response:
        if req.choice not in ("left", "right"):
            return JSONResponse({"error": "choice must be left or right"}, status_code=422)
        try:
            status, duplicate = store.submit_vote(study_id, x_annotator_id, req)
        except KeyError:
            return JSONResponse({"error": "unknown study"}, status_code=404)
        if status == "unknown_task":
            return JSONResponse({"error": "unknown task"}, status_code=404)
        if status == "lease_conflict":
            return JSONResponse({"error": "task leased to another annotator"}, status_code=409)
        return JSONResponse({"accepted": True, "duplicate": duplicate})

    @app.post("/studies/{study_id}/leases/{task_id}/release")
    def release_lease(
        study_id: str, task_id: str, x_annotator_id: str = Header(default="anonymous")
    ) -> Response:
        try:
            released = store.release_lease(study_id, task_id, x_annotator_id)
        except KeyError:
            return JSONResponse({"error": "unknown study"}, status_code=404)
        if not released:
            return JSONResponse({"error": "unknown task"}, status_code=404)
        return JSONResponse({"released": True})

    @app.get("/studies/{study_id}/ranking")
    def ranking(study_id: str) -> Response:
        try:
            table = store.ranking(study_id)
        except KeyError:
            return JSONResponse({"error": "unknown study"}, status_code=404)
        return JSONResponse(ranking_payload(table))

    @app.get("/media/{study_id}/{task_id}/{side}")
    def media(study_id: str, task_id: str, side: str) -> Response:
        try:
            path = store.resolve_media(study_id, task_id, side)
        except KeyError:
            return JSONResponse({"error": "unknown study"}, status_code=404)
        if path is None or not path.exists():
            return JSONResponse({"error": "no media"}, status_code=404)
        return FileResponse(path)

    return app


def ranking_payload(table: EloTable) -> dict:
    return {
        "ratings": [
            {
                "competitor": r.competitor,
                "axis": r.axis,
                "mean": r.mean,
                "std": r.std,
                "games": r.games,
            }
            for r in table.ratings
        ],
        "aggregated": table.aggregated,
        "flagged_annotators": list(table.flagged_annotators),
        "vote_count": table.vote_count,
    }
