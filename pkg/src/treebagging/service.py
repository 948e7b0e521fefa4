"""HTTP service running live batched experiments on top of an append-only event log.

Each experiment is persisted as ``<state_dir>/<id>.ndjson``, one JSON event
per line. Event types:

``created``           id, config, arms, schema, idempotency key
``batch-opened``      batch number, phase, subject ids, contexts
``assignment``        batch, subject, arm alias, full propensity row
``outcome``           batch, subject, outcome
``phase-transition``  the learned-policy report

State is rebuilt by replaying these events in order, so restarting the
process reproduces everything, including the next batch's propensities.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, Header, HTTPException, Request

from .bandits import BanditConfig, propose_batch
from .core import (
    ArmSet,
    ContextSchema,
    ObservationLog,
    ValidationError,
    rng_stream,
    sample_arms,
)
from .evaluation import evaluation_mixture_propensity
from .pipeline import load_policies, run_learning_pipeline
from .simulation import ExperimentConfig
from .survey import CHARITIES, SURVEY_SCHEMA

EVENT_LOG_VERSION = 1


class Conflict(Exception):
    pass


class NotFound(Exception):
    pass


@dataclass
class OpenBatch:
    number: int
    phase: str
    subjects: list[str]
    X: np.ndarray
    arms: dict[str, int] = field(default_factory=dict)
    propensities: dict[str, list[float]] = field(default_factory=dict)
    outcomes: dict[str, float] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return len(self.outcomes) == len(self.subjects)


class Experiment:
    """In-memory state of one experiment, driven only by :meth:`apply`."""

    def __init__(self, path: Path):
        self.path = path
        self.lock = threading.Lock()
        self.id: str | None = None
        self.idempotency_key: str | None = None
        self.config: ExperimentConfig | None = None
        self.log: ObservationLog | None = None
        self.batch: OpenBatch | None = None
        self.n_batches = 0
        self.report: dict | None = None

    # -- replay -----------------------------------------------------------
    def apply(self, ev: dict) -> None:
        kind = ev["type"]
        if kind == "created":
            self.id = ev["id"]
            self.idempotency_key = ev.get("idempotency_key")
            self.config = ExperimentConfig.from_dict(ev["config"])
            self.log = ObservationLog.empty(ContextSchema.from_dict(ev["schema"]), ArmSet(tuple(ev["arms"])))
        elif kind == "batch-opened":
            self.batch = OpenBatch(ev["batch"], ev["phase"], list(ev["subjects"]), np.array(ev["contexts"], float))
            self.n_batches = ev["batch"]
        elif kind == "assignment":
            self.batch.arms[ev["subject"]] = self.log.arms.index(ev["arm"])
            self.batch.propensities[ev["subject"]] = ev["propensities"]
        elif kind == "outcome":
            self.batch.outcomes[ev["subject"]] = float(ev["outcome"])
            if self.batch.complete:
                self._close_batch()
        elif kind == "phase-transition":
            self.report = ev["report"]
        else:
            raise ValueError(f"unknown event type {kind!r}")

    def _close_batch(self) -> None:
        b = self.batch
        w = np.array([b.arms[s] for s in b.subjects])
        y = np.array([b.outcomes[s] for s in b.subjects])
        e = np.array([b.propensities[s] for s in b.subjects])
        self.log = self.log.append(b.number, b.X, w, y, e)
        self.batch = None

    # -- derived --------------------------------------------------------------
    @property
    def phase(self) -> str:
        return "evaluation" if self.report is not None else "learning"

    @property
    def learning_complete(self) -> bool:
        return len(self.log) >= self.config.t_learn

    def bandit(self) -> BanditConfig:
        return self.config.bandit

    def status(self) -> dict:
        return {
            "id": self.id,
            "phase": self.phase,
            "rows": len(self.log),
            "batches": self.n_batches,
            "open_batch": None if self.batch is None else {
                "batch": self.batch.number,
                "pending": [s for s in self.batch.subjects if s not in self.batch.outcomes],
            },
            "t_learn": self.config.t_learn,
        }


class Service:
    """Experiment registry backed by one event file per experiment."""

    def __init__(self, state_dir: str | Path):
        self.dir = Path(state_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.experiments: dict[str, Experiment] = {}
        self.by_key: dict[str, str] = {}
        self.registry_lock = threading.Lock()
        for path in sorted(self.dir.glob("*.ndjson")):
            exp = Experiment(path)
            with open(path) as fh:
                for line in fh:
                    if line.strip():
                        exp.apply(json.loads(line))
            self.experiments[exp.id] = exp
            if exp.idempotency_key:
                self.by_key[exp.idempotency_key] = exp.id

    def _emit(self, exp: Experiment, ev: dict) -> None:
        exp.apply(ev)
        with open(exp.path, "a") as fh:
            fh.write(json.dumps(ev) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def get(self, exp_id: str) -> Experiment:
        try:
            return self.experiments[exp_id]
        except KeyError:
            raise NotFound(f"unknown experiment {exp_id!r}") from None

    # -- operations ---------------------------------------------------------
    def create(self, body: dict, idempotency_key: str | None = None) -> str:
        if not isinstance(body, dict):
            raise ValidationError("config must be a JSON object")
        body = dict(body)
        key = idempotency_key or body.pop("idempotency_key", None)
        body.pop("idempotency_key", None)
        schema = ContextSchema.from_dict(body.pop("schema")) if "schema" in body else SURVEY_SCHEMA
        arms = ArmSet(tuple(body.pop("arms"))) if "arms" in body else CHARITIES
        config = ExperimentConfig.from_dict(body)
        if config.pipeline.k > arms.K:
            raise ValidationError(f"k={config.pipeline.k} exceeds the number of arms ({arms.K})")
        with self.registry_lock:
            if key is not None and key in self.by_key:
                return self.by_key[key]
            exp_id = uuid.uuid4().hex[:12]
            exp = Experiment(self.dir / f"{exp_id}.ndjson")
            self._emit(exp, {"type": "created", "version": EVENT_LOG_VERSION, "id": exp_id,
                             "idempotency_key": key, "config": config.to_dict(),
                             "arms": list(arms.aliases), "schema": schema.to_dict()})
            self.experiments[exp_id] = exp
            if key is not None:
                self.by_key[key] = exp_id
            return exp_id

    def open_batch(self, exp_id: str, rows: list) -> dict:
        exp = self.get(exp_id)
        with exp.lock:
            if exp.batch is not None:
                raise Conflict(f"batch {exp.batch.number} is still waiting for outcomes")
            if exp.phase == "learning" and exp.learning_complete:
                raise Conflict("learning phase is complete but the policy has not been learned")
            subjects, X = self._parse_rows(exp, rows)
            b = exp.n_batches + 1
            if exp.phase == "learning":
                proposal = propose_batch(exp.log, X, exp.bandit())
                E, floor = proposal.propensities, proposal.floor
            else:
                pc, pn = load_policies(exp.report)
                E = evaluation_mixture_propensity(X, pc, pn, exp.log.arms.K, exp.config.epsilon)
                floor = exp.config.epsilon / exp.log.arms.K
            w = sample_arms(E, rng_stream(exp.config.seed, "service-assign", b).random(len(X)))
            self._emit(exp, {"type": "batch-opened", "batch": b, "phase": exp.phase,
                             "subjects": subjects, "contexts": X.tolist()})
            aliases = exp.log.arms.aliases
            out = []
            for s, arm, e in zip(subjects, w, E):
                self._emit(exp, {"type": "assignment", "batch": b, "subject": s,
                                 "arm": aliases[arm], "propensities": e.tolist()})
                out.append({"subject": s, "arm": aliases[arm], "propensities": dict(zip(aliases, e.tolist()))})
            return {"batch": b, "phase": exp.phase, "floor": floor, "assignments": out}

    def _parse_rows(self, exp: Experiment, rows: list) -> tuple[list[str], np.ndarray]:
        if not isinstance(rows, list) or not rows:
            raise ValidationError("a batch needs at least one subject")
        schema = exp.log.schema
        subjects, X = [], []
        for i, r in enumerate(rows):
            if not isinstance(r, dict) or "context" not in r:
                raise ValidationError(f"subject {i}: expected an object with a 'context'")
            ctx = r["context"]
            if isinstance(ctx, dict):
                unknown = set(ctx) - set(schema.names)
                if unknown:
                    raise ValidationError(f"subject {i}: unknown feature {sorted(unknown)[0]!r}")
                missing = [f for f in schema.names if f not in ctx]
                if missing:
                    raise ValidationError(f"subject {i}: missing feature {missing[0]!r}")
                ctx = [ctx[f] for f in schema.names]
            try:
                X.append([float(v) for v in ctx])
            except (TypeError, ValueError):
                raise ValidationError(f"subject {i}: non-numeric context") from None
            subjects.append(str(r.get("id", f"{exp.n_batches + 1}-{i}")))
        if len(set(subjects)) != len(subjects):
            raise ValidationError("duplicate subject id in batch")
        X = schema.validate_contexts(np.array(X, dtype=float))
        return subjects, X

    def submit_outcomes(self, exp_id: str, batch: int, outcomes: dict) -> dict:
        exp = self.get(exp_id)
        with exp.lock:
            b = exp.batch
            if b is None or b.number != batch:
                if batch <= exp.n_batches:
                    raise Conflict(f"batch {batch} is already closed")
                raise NotFound(f"no open batch {batch}")
            if not isinstance(outcomes, dict) or not outcomes:
                raise ValidationError("expected a non-empty mapping of subject id to outcome")
            lo, hi = exp.log.schema.outcome_range
            for s, y in outcomes.items():
                if s not in b.subjects:
                    raise NotFound(f"unknown subject {s!r}")
                if s in b.outcomes:
                    raise Conflict(f"outcome for {s!r} already submitted")
                try:
                    y = float(y)
                except (TypeError, ValueError):
                    raise ValidationError(f"outcome for {s!r} is not a number") from None
                if not (lo <= y <= hi):
                    raise ValidationError(f"outcome {y} for {s!r} outside [{lo}, {hi}]")
            for s, y in outcomes.items():
                self._emit(exp, {"type": "outcome", "batch": batch, "subject": s, "outcome": float(y)})
            closed = exp.batch is None
            if closed and exp.phase == "learning" and exp.learning_complete:
                learn = exp.log.with_t_learn(len(exp.log))
                result = run_learning_pipeline(learn, exp.config.pipeline, bandit=exp.bandit())
                self._emit(exp, {"type": "phase-transition", "report": result.report()})
            return {"batch": batch, "closed": closed, "phase": exp.phase}

    def policy(self, exp_id: str) -> dict:
        exp = self.get(exp_id)
        if exp.report is None:
            raise Conflict("learning phase is not complete")
        return exp.report


def create_app(state_dir: str | Path | None = None) -> FastAPI:
    state_dir = state_dir or os.environ.get("TREEBAGGING_STATE_DIR", "./experiments")
    service = Service(state_dir)
    app = FastAPI(title="treebagging assignment service")
    app.state.service = service

    def guarded(fn, *args):
        try:
            return fn(*args)
        except ValidationError as exc:
            code = 400 if fn == service.create else 422
            raise HTTPException(code, str(exc)) from None
        except Conflict as exc:
            raise HTTPException(409, str(exc)) from None
        except NotFound as exc:
            raise HTTPException(404, str(exc)) from None

    @app.post("/experiments")
    async def create(request: Request, idempotency_key: str | None = Header(default=None)):
        try:
            body = json.loads(await request.body())
        except ValueError:
            raise HTTPException(400, "malformed JSON") from None
        return {"id": guarded(service.create, body, idempotency_key)}

    @app.get("/experiments/{exp_id}")
    def status(exp_id: str):
        return guarded(lambda: service.get(exp_id).status())

    @app.post("/experiments/{exp_id}/batches")
    def batches(exp_id: str, body: dict = Body(...)):
        return guarded(service.open_batch, exp_id, body.get("subjects"))

    @app.post("/experiments/{exp_id}/batches/{batch}/outcomes")
    def outcomes(exp_id: str, batch: int, body: dict = Body(...)):
        return guarded(service.submit_outcomes, exp_id, batch, body.get("outcomes"))

    @app.get("/experiments/{exp_id}/policy")
    def policy(exp_id: str):
        return guarded(service.policy, exp_id)

    return app
