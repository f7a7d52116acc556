"""HTTP gateway exposing one router per tenant.

Endpoints (JSON over HTTP/1.1):

* ``POST /v1/route``       route a request, returns the chosen model
* ``POST /v1/feedback``    resolve the oldest pending decision
* ``GET  /v1/metrics``     metric summary for a tenant
* ``GET  /v1/state``       loop-state snapshot for a tenant
* ``POST /v1/admin/checkpoint``  persist predictor + queue atomically

Every mutation is appended to a per-tenant event log before the response is
sent; replaying the log from an empty state reproduces the tenant's queue,
predictor, and step counter exactly.

Tenants run in one of two modes. ``trace`` tenants must send full per-model
labels with each request (exploration and immediate queue updates, as in a
benchmark harness). ``live`` tenants send no labels: feedback arrives later,
exploration stays off unless ``shadow_exploration`` is enabled on a zoo with
configured ground truth (synthetic deployments only).
"""

from __future__ import annotations

import asyncio
import datetime
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .core import ModelId, ModelProfile, RequestEvent, SlaParams, ZooConfig
from .eventlog import EventLog, read_events
from .ioutil import atomic_write_text
from .metrics import MetricStream
from .predictor import FeatureExtractor, LearningRateSchedule
from .router import FeedbackOrderError, Router
from .simulator import GroundTruthModel

SCHEMA_VERSION = 1

ENV_PORT = "ZOOROUTE_PORT"
ENV_DATA_DIR = "ZOOROUTE_DATA_DIR"


class ServiceError(Exception):
    """An error with an HTTP status, rendered as a JSON body."""

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass(frozen=True)
class TenantConfig:
    tenant_id: str
    sla: SlaParams
    zoo: ZooConfig
    feature: FeatureExtractor
    mode: str = "live"
    rng_seed: int = 0
    mu: float = 0.0
    schedule: LearningRateSchedule = field(default_factory=LearningRateSchedule)
    shadow_exploration: bool = False

    def __post_init__(self) -> None:
        if self.mode not in ("live", "trace"):
            raise ValueError(f"unknown tenant mode {self.mode!r}")
        if self.shadow_exploration and any(p.truth is None for p in self.zoo.models):
            raise ValueError("shadow exploration needs ground truth on every model")

    @classmethod
    def from_dict(cls, d: dict) -> "TenantConfig":
        zoo_cfg = d["zoo"]
        models = []
        for i, m in enumerate(zoo_cfg["models"]):
            truth = None
            if "truth" in m:
                t = dict(m["truth"])
                if "weights" in t and t["weights"] is not None:
                    t["weights"] = tuple(t["weights"])
                truth = GroundTruthModel(**t)
            models.append(
                ModelProfile(
                    id=ModelId(index=i, display_name=m.get("display_name", f"model-{i}")),
                    base_cost=m["base_cost_j"],
                    cost_per_token=m.get("cost_per_token_j", 0.0),
                    truth=truth,
                )
            )
        return cls(
            tenant_id=d["tenant_id"],
            sla=SlaParams(**d["sla"]),
            zoo=ZooConfig(models=tuple(models), largest_index=zoo_cfg["largest_index"]),
            feature=FeatureExtractor.from_dict(d["feature"]),
            mode=d.get("mode", "live"),
            rng_seed=d.get("rng_seed", 0),
            mu=d.get("predictor", {}).get("mu", 0.0),
            schedule=LearningRateSchedule.from_dict(
                d.get("predictor", {}).get("schedule", LearningRateSchedule().to_dict())
            ),
            shadow_exploration=d.get("shadow_exploration", False),
        )


@dataclass(frozen=True)
class ServiceConfig:
    tenants: tuple[TenantConfig, ...]
    port: int = 8080
    data_dir: str = "./zooroute-data"
    fsync: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceConfig":
        return cls(
            tenants=tuple(TenantConfig.from_dict(t) for t in d["tenants"]),
            port=d.get("port", 8080),
            data_dir=d.get("data_dir", "./zooroute-data"),
            fsync=d.get("fsync", False),
        )


def load_service_config(path: str | Path) -> ServiceConfig:
    """Parse a config file, applying environment overrides for port/data_dir."""
    config = ServiceConfig.from_dict(json.loads(Path(path).read_text()))
    port = os.environ.get(ENV_PORT)
    data_dir = os.environ.get(ENV_DATA_DIR)
    if port is not None or data_dir is not None:
        from dataclasses import replace

        config = replace(
            config,
            port=int(port) if port is not None else config.port,
            data_dir=data_dir if data_dir is not None else config.data_dir,
        )
    return config


class _RequestLabels:
    """Per-request label source: optional full labels, optionally deferred."""

    def __init__(self, full: Optional[np.ndarray], deferred: bool):
        self._full = full
        self._deferred = deferred

    def full_labels(self, event: RequestEvent) -> Optional[np.ndarray]:
        return self._full

    def label_for(self, event: RequestEvent, model: int) -> Optional[int]:
        if self._deferred or self._full is None:
            return None
        return int(self._full[model])


class TenantRuntime:
    """One tenant's router, metric stream, pending feedback, and event log."""

    def __init__(self, config: TenantConfig, data_dir: Path, fsync: bool):
        self.config = config
        self.dir = data_dir / config.tenant_id
        self.lock = asyncio.Lock()
        self.stream = MetricStream(n_models=config.zoo.m)
        self.pending: dict[str, int] = {}
        self.resolved: set[str] = set()
        self.events_applied = 0
        self.router = self._fresh_router()
        self.log = EventLog(self.dir / "log", fsync=fsync)

    def _fresh_router(self) -> Router:
        cfg = self.config
        exploration = cfg.mode == "trace" or cfg.shadow_exploration
        return Router(
            cfg.zoo,
            cfg.sla,
            cfg.feature,
            mu=cfg.mu,
            schedule=cfg.schedule,
            seed=cfg.rng_seed,
            exploration=exploration,
        )

    def recover(self) -> None:
        """Rebuild state by replaying the event log from scratch."""
        self.router = self._fresh_router()
        self.stream = MetricStream(n_models=self.config.zoo.m)
        self.pending = {}
        self.resolved = set()
        self.events_applied = 0
        for event in read_events(self.dir / "log"):
            if event["type"] == "route":
                self._apply_route(event["payload"])
            elif event["type"] == "feedback":
                self._apply_feedback(event["payload"])
            else:
                raise ValueError(f"unknown event type {event['type']!r}")
            self.events_applied += 1

    # -- route ---------------------------------------------------------------

    def _parse_route(self, payload: dict) -> tuple[RequestEvent, Optional[np.ndarray]]:
        cfg = self.config
        token_count = payload.get("token_count", 0)
        if not isinstance(token_count, int) or token_count < 0:
            raise ServiceError(400, "token_count must be a nonnegative integer")

        features = payload.get("features")
        text = payload.get("text")
        if cfg.feature.kind == "passthrough":
            if features is None:
                raise ServiceError(400, "tenant expects a feature vector")
            if len(features) != cfg.feature.dim:
                raise ServiceError(
                    400, f"expected {cfg.feature.dim} features, got {len(features)}"
                )
        elif text is None:
            raise ServiceError(400, "tenant expects request text")

        labels = payload.get("labels")
        if cfg.mode == "trace":
            if labels is None:
                raise ServiceError(409, "trace-mode tenant requires per-model labels")
            if len(labels) != cfg.zoo.m or any(b not in (0, 1) for b in labels):
                raise ServiceError(400, f"labels must be {cfg.zoo.m} 0/1 bits")
            labels = np.asarray(labels, dtype=int)
        else:
            labels = None  # live tenants never trust client-supplied labels

        try:
            event = RequestEvent(
                t=self.router.t,
                token_count=token_count,
                features=None if features is None else np.asarray(features, dtype=float),
                text=text,
            )
        except ValueError as exc:
            raise ServiceError(400, str(exc)) from exc
        return event, labels

    def _apply_route(self, payload: dict) -> dict:
        event, labels = self._parse_route(payload)
        cfg = self.config
        if cfg.mode == "trace":
            source = _RequestLabels(labels, deferred=False)
        elif cfg.shadow_exploration:
            shadow = payload.get("shadow_labels")
            source = _RequestLabels(np.asarray(shadow, dtype=int), deferred=True)
        else:
            source = _RequestLabels(None, deferred=True)

        decision = self.router.step(event, source)
        self.stream.update(decision)
        decision_id = f"{cfg.tenant_id}-{decision.t:08d}"
        if decision.realized_satisfaction is None:
            self.pending[decision_id] = decision.t
        model = cfg.zoo.models[decision.chosen]
        return {
            "schema_version": SCHEMA_VERSION,
            "decision_id": decision_id,
            "model": {"index": model.id.index, "display_name": model.id.display_name},
            "explored": decision.explored,
            "s_hat": [float(p) for p in decision.s_hat],
        }

    def handle_route(self, payload: dict) -> dict:
        # Validate and (for shadow exploration) sample labels before logging,
        # so every logged event is guaranteed to apply cleanly on replay.
        self._parse_route(payload)
        payload = dict(payload)
        if self.config.mode == "live" and self.config.shadow_exploration:
            payload["shadow_labels"] = self._sample_shadow_labels(payload)
        self.log.append({"type": "route", "payload": payload})
        response = self._apply_route(payload)
        self.events_applied += 1
        return response

    def _sample_shadow_labels(self, payload: dict) -> list[int]:
        x = self.config.feature.featurize(
            RequestEvent(
                t=self.router.t,
                token_count=payload.get("token_count", 0),
                features=(
                    None
                    if payload.get("features") is None
                    else np.asarray(payload["features"], dtype=float)
                ),
                text=payload.get("text"),
            )
        )
        rng = np.random.default_rng(
            np.random.SeedSequence([self.config.rng_seed, self.router.t, 0x5AD0])
        )
        return [int(p.truth.sample(x, rng)) for p in self.config.zoo.models]

    # -- feedback ------------------------------------------------------------

    def _validate_feedback(self, payload: dict) -> tuple[str, int, int]:
        decision_id = payload.get("decision_id")
        satisfied = payload.get("satisfied")
        if not isinstance(decision_id, str) or not isinstance(satisfied, bool):
            raise ServiceError(400, "feedback needs decision_id and boolean satisfied")
        if decision_id in self.resolved:
            raise ServiceError(409, f"decision {decision_id} already resolved")
        if decision_id not in self.pending:
            raise ServiceError(404, f"unknown decision {decision_id}")
        oldest = min(self.pending, key=self.pending.get)
        if decision_id != oldest:
            raise ServiceError(
                409, f"feedback out of order: {oldest} must be resolved first"
            )
        return decision_id, self.pending[decision_id], int(satisfied)

    def _apply_feedback(self, payload: dict) -> dict:
        decision_id, t, bit = self._validate_feedback(payload)
        try:
            queue = self.router.apply_feedback(t, bit)
        except FeedbackOrderError as exc:  # pragma: no cover - guarded above
            raise ServiceError(409, str(exc)) from exc
        self.stream.resolve(t, bit)
        del self.pending[decision_id]
        self.resolved.add(decision_id)
        return {"schema_version": SCHEMA_VERSION, "queue": queue}

    def handle_feedback(self, payload: dict) -> dict:
        self._validate_feedback(payload)
        self.log.append({"type": "feedback", "payload": payload})
        response = self._apply_feedback(payload)
        self.events_applied += 1
        return response

    # -- read-only views -----------------------------------------------------

    def state(self) -> dict:
        snap = self.router.snapshot()
        return {
            "schema_version": SCHEMA_VERSION,
            "tenant": self.config.tenant_id,
            "mode": self.config.mode,
            "t": snap["t"],
            "queue": snap["queue"],
            "queue_updates": snap["queue_updates"],
            "predictor_steps": snap["predictor_steps"],
            "pending_feedback": len(self.pending),
            "events_applied": self.events_applied,
        }

    def metrics(self) -> dict:
        if not len(self.stream):
            return {"schema_version": SCHEMA_VERSION, "t": 0, "empty": True}
        return self.stream.summary()

    def checkpoint(self) -> str:
        """Atomically persist queue + predictor; returns the file path."""
        state = self.router.predictor
        payload = {
            "schema_version": SCHEMA_VERSION,
            "tenant": self.config.tenant_id,
            "t": self.router.t,
            "queue": {"q": self.router.queue.q, "t": self.router.queue.t},
            "predictor": {
                "k": state.k,
                "mu": state.mu,
                "schedule": state.schedule.to_dict(),
                "z": state.z.reshape(-1).tolist(),
            },
            "events_applied": self.events_applied,
            "metadata": {
                "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat()
            },
        }
        path = self.dir / "checkpoint.json"
        atomic_write_text(path, json.dumps(payload))
        return str(path)


def create_app(config: ServiceConfig) -> FastAPI:
    """Build the gateway application, replaying any existing event logs."""
    app = FastAPI(title="zooroute gateway")
    data_dir = Path(config.data_dir)
    runtimes: dict[str, TenantRuntime] = {}
    for tenant in config.tenants:
        runtime = TenantRuntime(tenant, data_dir, config.fsync)
        runtime.recover()
        runtimes[tenant.tenant_id] = runtime
    app.state.runtimes = runtimes

    def tenant_of(name: Optional[str]) -> TenantRuntime:
        if not isinstance(name, str) or not name:
            raise ServiceError(400, "missing tenant")
        runtime = runtimes.get(name)
        if runtime is None:
            raise ServiceError(404, f"unknown tenant {name!r}")
        return runtime

    async def parse_json(request: Request) -> dict:
        try:
            data = await request.json()
        except Exception as exc:
            raise ServiceError(400, "request body must be JSON") from exc
        if not isinstance(data, dict):
            raise ServiceError(400, "request body must be a JSON object")
        return data

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status,
            content={"schema_version": SCHEMA_VERSION, "error": exc.message},
        )

    @app.post("/v1/route")
    async def route(request: Request):
        data = await parse_json(request)
        runtime = tenant_of(data.get("tenant"))
        async with runtime.lock:
            return runtime.handle_route(data)

    @app.post("/v1/feedback")
    async def feedback(request: Request):
        data = await parse_json(request)
        runtime = tenant_of(data.get("tenant"))
        async with runtime.lock:
            return runtime.handle_feedback(data)

    @app.get("/v1/metrics")
    async def metrics(tenant: Optional[str] = None):
        return tenant_of(tenant).metrics()

    @app.get("/v1/state")
    async def state(tenant: Optional[str] = None):
        return tenant_of(tenant).state()

    @app.post("/v1/admin/checkpoint")
    async def checkpoint(request: Request):
        data = await parse_json(request)
        runtime = tenant_of(data.get("tenant"))
        async with runtime.lock:
            path = runtime.checkpoint()
        return {"schema_version": SCHEMA_VERSION, "path": path}

    return app


def serve(config: ServiceConfig) -> None:  # pragma: no cover - network entry point
    import uvicorn

    uvicorn.run(create_app(config), host="0.0.0.0", port=config.port)
