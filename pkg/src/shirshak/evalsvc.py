"""Blinded human-evaluation service: sessions, votes, aggregation.

Persistence is a session-definition JSON plus an append-only vote log per
session; aggregation is a pure fold over the log with last-write-wins per
(rater, item). Model identities live only in the session file and the
admin-scoped aggregate, never in rater-facing payloads.

No `from __future__ import annotations` here: FastAPI must resolve the
closure-defined request models at runtime.
"""
import json
import re
import string
import threading
import random
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Sequence

from .errors import ContractError

DEFAULT_CRITERIA = (
    "Select the single best headline for the article, judging relevance, fluency, "
    "conciseness, informativeness, factual accuracy, and coverage."
)

_RATER_TOKEN_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")


@dataclass(frozen=True)
class EvalOption:
    key: str
    summary: str


@dataclass(frozen=True)
class EvalItem:
    item_id: str
    source: str
    options: tuple[EvalOption, ...]
    model_by_key: dict[str, str]  # server-side only, never sent to raters


@dataclass(frozen=True)
class EvalSession:
    session_id: str
    items: tuple[EvalItem, ...]
    criteria: str
    created_at: str
    seed: int

    def rater_view(self) -> dict:
        """Blinded payload: no model names anywhere."""
        return {
            "session_id": self.session_id,
            "criteria": self.criteria,
            "items": [
                {
                    "item_id": item.item_id,
                    "source": item.source,
                    "options": [{"key": o.key, "summary": o.summary} for o in item.options],
                }
                for item in self.items
            ],
        }

    def models(self) -> list[str]:
        seen: list[str] = []
        for item in self.items:
            for model in item.model_by_key.values():
                if model not in seen:
                    seen.append(model)
        return sorted(seen)


@dataclass(frozen=True)
class VoteRecord:
    session_id: str
    item_id: str
    rater_id: str
    option_key: str
    timestamp: str


@dataclass(frozen=True)
class Aggregate:
    counts: dict[str, int]
    percentages: dict[str, float]
    total: int

    def as_dict(self) -> dict:
        return {"counts": self.counts, "percentages": self.percentages, "total": self.total}


def round_percentage(count: int, total: int) -> float:
    """100*count/total rounded half-up to two decimals; 0.00 when total is 0."""
    if total == 0:
        return 0.0
    value = Decimal(100 * count) / Decimal(total)
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def aggregate_votes(models: Sequence[str], votes: Sequence[VoteRecord], item_models: dict) -> Aggregate:
    """Fold the vote log: last vote per (rater, item) wins."""
    latest: dict[tuple[str, str], VoteRecord] = {}
    for vote in votes:
        latest[(vote.rater_id, vote.item_id)] = vote
    counts = {model: 0 for model in models}
    for vote in latest.values():
        model = item_models[vote.item_id][vote.option_key]
        counts[model] += 1
    total = sum(counts.values())
    percentages = {model: round_percentage(count, total) for model, count in counts.items()}
    return Aggregate(counts=counts, percentages=percentages, total=total)


def create_session(
    items: Sequence[tuple[str, Sequence[tuple[str, str]]]],
    seed: int,
    criteria: str = DEFAULT_CRITERIA,
    session_id: str | None = None,
) -> EvalSession:
    """Build a blinded session: options shuffled deterministically by (seed, item index).

    Each item is (source_text, [(model_name, summary), ...]).
    """
    if not items:
        raise ContractError("a session needs at least one item")
    built: list[EvalItem] = []
    for index, (source, candidates) in enumerate(items):
        candidates = list(candidates)
        if len(candidates) < 2:
            raise ContractError(f"item {index} needs at least 2 model outputs, got {len(candidates)}")
        names = [model for model, _ in candidates]
        if len(set(names)) != len(names):
            raise ContractError(f"item {index} has duplicate model names")
        rng = random.Random(seed * 1_000_003 + index)
        order = list(range(len(candidates)))
        rng.shuffle(order)
        options = []
        model_by_key = {}
        for slot, original in enumerate(order):
            key = string.ascii_uppercase[slot]
            model, summary = candidates[original]
            options.append(EvalOption(key=key, summary=summary))
            model_by_key[key] = model
        built.append(
            EvalItem(
                item_id=f"item-{index + 1:03d}",
                source=source,
                options=tuple(options),
                model_by_key=model_by_key,
            )
        )
    return EvalSession(
        session_id=session_id or uuid.uuid4().hex[:12],
        items=tuple(built),
        criteria=criteria,
        created_at=datetime.now(timezone.utc).isoformat(),
        seed=seed,
    )


class SessionNotFound(KeyError):
    pass


class EvalStore:
    """Filesystem-backed session store with an append-only vote log per session."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._session_cache: dict[str, EvalSession] = {}  # sessions are immutable

    def _session_dir(self, session_id: str) -> Path:
        return self.root / session_id

    def _lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def save_session(self, session: EvalSession) -> None:
        directory = self._session_dir(session.session_id)
        directory.mkdir(parents=True, exist_ok=True)
        payload = {
            "session_id": session.session_id,
            "criteria": session.criteria,
            "created_at": session.created_at,
            "seed": session.seed,
            "items": [
                {
                    "item_id": item.item_id,
                    "source": item.source,
                    "options": [{"key": o.key, "summary": o.summary} for o in item.options],
                    "model_by_key": item.model_by_key,
                }
                for item in session.items
            ],
        }
        (directory / "session.json").write_text(
            json.dumps(payload, ensure_ascii=False, indent=2), encoding="utf-8"
        )

    def create_session(
        self,
        items: Sequence[tuple[str, Sequence[tuple[str, str]]]],
        seed: int,
        criteria: str = DEFAULT_CRITERIA,
    ) -> EvalSession:
        session = create_session(items, seed, criteria)
        self.save_session(session)
        return session

    def list_sessions(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if (p / "session.json").exists())

    def get_session(self, session_id: str) -> EvalSession:
        cached = self._session_cache.get(session_id)
        if cached is not None:
            return cached
        path = self._session_dir(session_id) / "session.json"
        if not path.exists():
            raise SessionNotFound(session_id)
        payload = json.loads(path.read_text(encoding="utf-8"))
        items = tuple(
            EvalItem(
                item_id=item["item_id"],
                source=item["source"],
                options=tuple(EvalOption(**o) for o in item["options"]),
                model_by_key=item["model_by_key"],
            )
            for item in payload["items"]
        )
        session = EvalSession(
            session_id=payload["session_id"],
            items=items,
            criteria=payload["criteria"],
            created_at=payload["created_at"],
            seed=payload["seed"],
        )
        self._session_cache[session_id] = session
        return session

    def record_vote(self, session_id: str, item_id: str, rater_id: str, option_key: str) -> VoteRecord:
        session = self.get_session(session_id)
        item = next((i for i in session.items if i.item_id == item_id), None)
        if item is None:
            raise ContractError(f"unknown item {item_id!r} in session {session_id}")
        if option_key not in item.model_by_key:
            raise ContractError(f"invalid option {option_key!r} for item {item_id}")
        if not _RATER_TOKEN_RE.match(rater_id or ""):
            raise ContractError("malformed rater token")
        vote = VoteRecord(
            session_id=session_id,
            item_id=item_id,
            rater_id=rater_id,
            option_key=option_key,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )
        line = json.dumps(
            {
                "item_id": vote.item_id,
                "rater_id": vote.rater_id,
                "option_key": vote.option_key,
                "timestamp": vote.timestamp,
            },
            ensure_ascii=False,
        )
        with self._lock(session_id):
            with (self._session_dir(session_id) / "votes.jsonl").open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
        return vote

    def read_votes(self, session_id: str) -> list[VoteRecord]:
        """Parse the log, tolerating a truncated trailing record."""
        path = self._session_dir(session_id) / "votes.jsonl"
        if not path.exists():
            return []
        votes: list[VoteRecord] = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                votes.append(
                    VoteRecord(
                        session_id=session_id,
                        item_id=obj["item_id"],
                        rater_id=obj["rater_id"],
                        option_key=obj["option_key"],
                        timestamp=obj["timestamp"],
                    )
                )
            except (ValueError, KeyError):
                continue  # torn write at the tail; the prefix is still valid
        return votes

    def aggregate(self, session_id: str) -> Aggregate:
        session = self.get_session(session_id)
        votes = self.read_votes(session_id)
        item_models = {item.item_id: item.model_by_key for item in session.items}
        return aggregate_votes(session.models(), votes, item_models)


# --- HTTP wire protocol ----------------------------------------------------------

ADMIN_SECRET_HEADER = "x-admin-secret"


def create_app(store: EvalStore, admin_secret: str):
    """FastAPI app exposing the wire protocol over a local network transport."""
    from fastapi import FastAPI, Header, HTTPException
    from fastapi.middleware.cors import CORSMiddleware
    from pydantic import BaseModel

    class SummaryIn(BaseModel):
        model: str
        summary: str

    class ItemIn(BaseModel):
        source: str
        summaries: list[SummaryIn]

    class SessionIn(BaseModel):
        items: list[ItemIn]
        seed: int
        criteria: str | None = None

    class VoteIn(BaseModel):
        rater_id: str
        item_id: str
        option_key: str

    app = FastAPI(title="shirshak evaluation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def require_admin(secret: str | None) -> None:
        if not secret or secret != admin_secret:
            raise HTTPException(status_code=403, detail="admin secret required")

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.post("/sessions")
    def post_session(body: SessionIn, x_admin_secret: str | None = Header(default=None)) -> dict:
        require_admin(x_admin_secret)
        items = [
            (item.source, [(s.model, s.summary) for s in item.summaries]) for item in body.items
        ]
        try:
            session = store.create_session(items, body.seed, body.criteria or DEFAULT_CRITERIA)
        except ContractError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {"session_id": session.session_id}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        try:
            return store.get_session(session_id).rater_view()
        except SessionNotFound as exc:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}") from exc

    @app.post("/sessions/{session_id}/votes")
    def post_vote(session_id: str, body: VoteIn) -> dict:
        try:
            vote = store.record_vote(session_id, body.item_id, body.rater_id, body.option_key)
        except SessionNotFound as exc:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}") from exc
        except ContractError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {"status": "recorded", "item_id": vote.item_id, "option_key": vote.option_key}

    @app.get("/sessions/{session_id}/aggregate")
    def get_aggregate(session_id: str, x_admin_secret: str | None = Header(default=None)) -> dict:
        require_admin(x_admin_secret)
        try:
            return store.aggregate(session_id).as_dict()
        except SessionNotFound as exc:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}") from exc

    return app
