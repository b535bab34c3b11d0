"""Human review of augmented images: an append-only decision log, a queue of
pending pairs, and the finalize step that folds kept images back into the
dataset.

Effective review state is a pure fold over the log (last writer wins), so any
prefix of the log is a valid session and restarts replay to the same state.
"""

from __future__ import annotations

import json
import mimetypes
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .augment import Recipe
from .schema import (
    CONDITION_INDEX,
    DatasetManifest,
    ImageRecord,
    Provenance,
    ReviewState,
    WeatherCondition,
)

VERDICTS = (
    ReviewState.KEPT,
    ReviewState.REJECTED_HALLUCINATION,
    ReviewState.REJECTED_UNREALISTIC,
)


@dataclass(frozen=True)
class ReviewDecision:
    image_id: str
    verdict: ReviewState
    reviewer: str
    timestamp: str = ""

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {[v.value for v in VERDICTS]}")


def _now_utc() -> str:
    return datetime.now(timezone.utc).isoformat()


def decision_to_json(decision: ReviewDecision) -> str:
    return json.dumps({
        "image_id": decision.image_id,
        "verdict": decision.verdict.value,
        "reviewer": decision.reviewer,
        "timestamp": decision.timestamp,
    })


def parse_decision_log(document: bytes) -> list[ReviewDecision]:
    decisions = []
    for lineno, line in enumerate(document.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            decisions.append(ReviewDecision(
                image_id=obj["image_id"],
                verdict=ReviewState(obj["verdict"]),
                reviewer=obj.get("reviewer", ""),
                timestamp=obj.get("timestamp", ""),
            ))
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise ValueError(f"decision log line {lineno}: {exc}") from exc
    return decisions


def effective_states(decisions: list[ReviewDecision]) -> dict[str, ReviewState]:
    """Fold the log: the last decision per image id wins."""
    states: dict[str, ReviewState] = {}
    for decision in decisions:
        states[decision.image_id] = decision.verdict
    return states


def apply_decisions(manifest: DatasetManifest, decisions: list[ReviewDecision]) -> DatasetManifest:
    states = effective_states(decisions)
    records = tuple(
        r.with_review_state(states[r.id]) if r.id in states and r.provenance is Provenance.AUGMENTED else r
        for r in manifest.records
    )
    return DatasetManifest(
        framework=manifest.framework,
        records=records,
        split_assignment=dict(manifest.split_assignment),
    )


class ReviewSession:
    """Manifest + decision log with a deterministic queue of pending pairs.

    Appends go to the log file (flushed and fsynced) before the in-memory state
    or any acknowledgment updates; re-submitting the currently effective
    verdict is a no-op.
    """

    def __init__(self, manifest: DatasetManifest, log_path: Path):
        self._base = manifest
        self._log_path = log_path
        self._lock = threading.Lock()
        if log_path.exists():
            self._decisions = parse_decision_log(log_path.read_bytes())
        else:
            self._decisions = []

    @property
    def manifest(self) -> DatasetManifest:
        return apply_decisions(self._base, self._decisions)

    @property
    def decisions(self) -> list[ReviewDecision]:
        return list(self._decisions)

    def pending_queue(self, condition: WeatherCondition | None = None) -> list[ImageRecord]:
        effective = self.manifest
        queue = [
            r for r in effective.records
            if r.review_state is ReviewState.PENDING
            and (condition is None or r.condition is condition)
        ]
        queue.sort(key=lambda r: (CONDITION_INDEX[r.condition], r.source_id or "", r.id))
        return queue

    def next_pending(
        self, condition: WeatherCondition | None = None,
    ) -> tuple[ImageRecord, ImageRecord] | None:
        queue = self.pending_queue(condition)
        if not queue:
            return None
        augmented = queue[0]
        original = self.manifest.by_id()[augmented.source_id]
        return original, augmented

    def record_decision(self, decision: ReviewDecision) -> ReviewState:
        with self._lock:
            record = self._base.by_id().get(decision.image_id)
            if record is None:
                raise KeyError(f"unknown image id: {decision.image_id}")
            if record.provenance is not Provenance.AUGMENTED:
                raise ValueError(f"record {decision.image_id} is not an augmented image")
            current = effective_states(self._decisions).get(decision.image_id)
            if current is decision.verdict:
                return current  # idempotent re-submission
            if not decision.timestamp:
                decision = ReviewDecision(
                    decision.image_id, decision.verdict, decision.reviewer, _now_utc(),
                )
            with open(self._log_path, "a", encoding="utf-8") as log:
                log.write(decision_to_json(decision) + "\n")
                log.flush()
                os.fsync(log.fileno())
            self._decisions.append(decision)
            return decision.verdict

    def progress(self) -> dict[WeatherCondition, dict[str, int]]:
        counts: dict[WeatherCondition, dict[str, int]] = {}
        for record in self.manifest.records:
            if record.provenance is not Provenance.AUGMENTED:
                continue
            bucket = counts.setdefault(record.condition, {
                "pending": 0, "kept": 0, "rejected_hallucination": 0, "rejected_unrealistic": 0,
            })
            bucket[record.review_state.value] += 1
        return counts


@dataclass(frozen=True)
class FinalizeResult:
    manifest: DatasetManifest
    kept: dict[WeatherCondition, int] = field(default_factory=dict)
    rejected: dict[WeatherCondition, int] = field(default_factory=dict)
    dropped_pending: int = 0


def finalize_filtered(manifest: DatasetManifest, allow_pending: bool = False) -> FinalizeResult:
    """Keep all original records plus augmented records whose verdict is kept.

    Pending records are an error unless allow_pending, in which case they are
    dropped (they were never reviewed, so they cannot enter the dataset).
    """
    pending = [
        r.id for r in manifest.records
        if r.provenance is Provenance.AUGMENTED and r.review_state is ReviewState.PENDING
    ]
    if pending and not allow_pending:
        raise ValueError(
            f"{len(pending)} augmented record(s) still pending review "
            f"(first: {pending[0]}); pass allow_pending to drop them"
        )

    kept: dict[WeatherCondition, int] = {}
    rejected: dict[WeatherCondition, int] = {}
    survivors = []
    for record in manifest.records:
        if record.provenance is not Provenance.AUGMENTED:
            survivors.append(record)
            continue
        if record.review_state is ReviewState.KEPT:
            survivors.append(record)
            kept[record.condition] = kept.get(record.condition, 0) + 1
        elif record.review_state is not ReviewState.PENDING:
            rejected[record.condition] = rejected.get(record.condition, 0) + 1

    surviving_ids = {r.id for r in survivors}
    return FinalizeResult(
        manifest=DatasetManifest(
            framework=manifest.framework,
            records=tuple(survivors),
            split_assignment={
                rid: s for rid, s in manifest.split_assignment.items() if rid in surviving_ids
            },
        ),
        kept=kept,
        rejected=rejected,
        dropped_pending=len(pending),
    )


# --------------------------------------------------------------------------
# HTTP service
# --------------------------------------------------------------------------

class ReviewService:
    """Serves the review API plus the static UI.

    Endpoints: GET /api/pairs/next[?condition=...], GET /api/images/{id},
    POST /api/decisions, GET /api/progress.
    """

    def __init__(
        self,
        session: ReviewSession,
        image_root: Path,
        ui_dir: Path | None = None,
        recipes: list[Recipe] | None = None,
    ):
        self.session = session
        self.image_root = image_root
        self.ui_dir = ui_dir
        self.recipes = {r.id: r for r in (recipes or [])}

    def pair_payload(self, condition: WeatherCondition | None) -> dict:
        pair = self.session.next_pending(condition)
        if pair is None:
            return {"pair": None}
        original, augmented = pair
        recipe = self.recipes.get(augmented.recipe_id or "")
        return {"pair": {
            "image_id": augmented.id,
            "source_id": original.id,
            "condition": augmented.condition.value,
            "original_image_url": f"/api/images/{original.id}",
            "augmented_image_url": f"/api/images/{augmented.id}",
            "prompts": [s.prompt for s in recipe.steps] if recipe else [],
            "annotations": [
                {"class": a.object_class.value, "bbox": a.bbox.as_list()}
                for a in augmented.annotations
            ],
        }}

    def progress_payload(self) -> dict:
        progress = self.session.progress()
        return {"conditions": {
            condition.value: counts
            for condition, counts in sorted(progress.items(), key=lambda kv: CONDITION_INDEX[kv[0]])
        }}

    def image_bytes(self, record_id: str) -> tuple[bytes, str]:
        record = self.session.manifest.by_id().get(record_id)
        if record is None:
            raise KeyError(record_id)
        path = self.image_root / record.image_path
        content_type = mimetypes.guess_type(record.image_path)[0] or "application/octet-stream"
        return path.read_bytes(), content_type

    def handle_decision(self, body: dict) -> dict:
        try:
            verdict = ReviewState(body["verdict"])
            decision = ReviewDecision(
                image_id=body["image_id"], verdict=verdict,
                reviewer=str(body.get("reviewer", "")),
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"bad decision: {exc}") from exc
        state = self.session.record_decision(decision)
        return {"ok": True, "image_id": decision.image_id, "review_state": state.value}


def make_server(service: ReviewService, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            pass  # quiet; the CLI emits its own structured lines

        def _send_json(self, payload: dict, status: int = 200):
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_bytes(self, body: bytes, content_type: str, status: int = 200):
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            url = urlparse(self.path)
            if url.path == "/api/pairs/next":
                params = parse_qs(url.query)
                condition = None
                if "condition" in params:
                    try:
                        condition = WeatherCondition(params["condition"][0])
                    except ValueError:
                        self._send_json({"error": f"unknown condition {params['condition'][0]}"}, 400)
                        return
                self._send_json(service.pair_payload(condition))
            elif url.path.startswith("/api/images/"):
                record_id = url.path[len("/api/images/"):]
                try:
                    body, content_type = service.image_bytes(record_id)
                except (KeyError, OSError):
                    self._send_json({"error": f"unknown image {record_id}"}, 404)
                    return
                self._send_bytes(body, content_type)
            elif url.path == "/api/progress":
                self._send_json(service.progress_payload())
            else:
                self._serve_static(url.path)

        def _serve_static(self, path: str):
            if service.ui_dir is None:
                self._send_json({"error": "no UI assets configured"}, 404)
                return
            name = path.lstrip("/") or "index.html"
            target = (service.ui_dir / name).resolve()
            if not str(target).startswith(str(service.ui_dir.resolve())) or not target.is_file():
                self._send_json({"error": "not found"}, 404)
                return
            content_type = mimetypes.guess_type(name)[0] or "application/octet-stream"
            self._send_bytes(target.read_bytes(), content_type)

        def do_POST(self):
            url = urlparse(self.path)
            if url.path != "/api/decisions":
                self._send_json({"error": "not found"}, 404)
                return
            length = int(self.headers.get("Content-Length", "0"))
            try:
                body = json.loads(self.rfile.read(length).decode("utf-8"))
                payload = service.handle_decision(body)
            except KeyError as exc:
                self._send_json({"error": str(exc)}, 404)
                return
            except (ValueError, json.JSONDecodeError) as exc:
                self._send_json({"error": str(exc)}, 400)
                return
            self._send_json(payload)

    return ThreadingHTTPServer((host, port), Handler)
