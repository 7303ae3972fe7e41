"""HTTP face of the episode engine so external trainers can reset/step remotely.

JSON over HTTP, routes under ``/v1``:

    POST   /v1/episodes              create an episode for a problem id
    POST   /v1/episodes/{id}/step    submit one response
    GET    /v1/episodes/{id}         snapshot
    DELETE /v1/episodes/{id}         discard
    GET    /v1/metrics               aggregate report over completed episodes
    GET    /healthz                  liveness + dataset checksum

Status mapping: 404 unknown problem/episode, 409 stepping a finished
episode, 410 idle-evicted session, 422 malformed body, 429 registry full.
Steps to the same episode are serialized per session, so the observable turn
sequence has no gaps; distinct sessions never block each other.
"""

from __future__ import annotations

import threading
import time
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field as dataclass_field

from fastapi import FastAPI, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from . import __version__
from .dataset import DatasetManifest
from .episode import (
    EpisodeConfig,
    EpisodeState,
    EpisodeStatus,
    FEEDBACK_PRESETS,
    FeedbackMode,
    InvalidConfig,
    render_observation,
    reset,
    step,
)
from .metrics import EvalReport, build_report
from .reward import RewardConfig, Schedule, trajectory_reward
from .trace import EpisodeTrace, TurnRecord, episode_config_to_dict

DEFAULT_IDLE_TIMEOUT_S = 15 * 60.0
DEFAULT_CAPACITY = 1024
_TOMBSTONE_LIMIT = 4096


class EpisodeOverrides(BaseModel):
    """Per-episode knobs; anything unknown is rejected with 422."""

    model_config = ConfigDict(extra="forbid")

    t_max: int | None = None
    action_budget: int | None = None
    max_response_len: int | None = None
    prompt_template: str | None = None
    feedback_template: str | None = None
    feedback_preset: str | None = None
    format_reminder: str | None = None
    feedback_mode: str | None = None
    schedule: str | None = None
    gamma: float | None = None
    linear_slope: float | None = None
    penalty_weight: float | None = None
    invalid_penalty: float | None = None
    idle_timeout_s: float | None = None


class CreateEpisodeBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem_id: str
    overrides: EpisodeOverrides | None = None


class StepBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    response: str


@dataclass
class Session:
    episode_id: str
    problem_id: str
    state: EpisodeState
    episode_config: EpisodeConfig
    reward_config: RewardConfig
    idle_timeout_s: float
    last_access: float
    lock: threading.Lock = dataclass_field(default_factory=threading.Lock)


class SessionRegistry:
    """In-memory episode sessions with idle eviction and a capacity cap."""

    def __init__(
        self,
        capacity: int = DEFAULT_CAPACITY,
        idle_timeout_s: float = DEFAULT_IDLE_TIMEOUT_S,
        clock=time.monotonic,
    ):
        self.capacity = capacity
        self.idle_timeout_s = idle_timeout_s
        self.clock = clock
        self._sessions: dict[str, Session] = {}
        self._evicted: OrderedDict[str, None] = OrderedDict()
        self._lock = threading.Lock()
        self.completed: list[EpisodeTrace] = []

    def _sweep_locked(self) -> None:
        now = self.clock()
        stale = [
            sid
            for sid, session in self._sessions.items()
            if now - session.last_access > session.idle_timeout_s
        ]
        for sid in stale:
            del self._sessions[sid]
            self._evicted[sid] = None
            while len(self._evicted) > _TOMBSTONE_LIMIT:
                self._evicted.popitem(last=False)

    def create(self, session: Session) -> None:
        with self._lock:
            self._sweep_locked()
            if len(self._sessions) >= self.capacity:
                raise RegistryFull()
            self._sessions[session.episode_id] = session

    def get(self, episode_id: str) -> Session:
        with self._lock:
            self._sweep_locked()
            session = self._sessions.get(episode_id)
            if session is None:
                if episode_id in self._evicted:
                    raise SessionEvicted(episode_id)
                raise UnknownSession(episode_id)
            session.last_access = self.clock()
            return session

    def delete(self, episode_id: str) -> None:
        with self._lock:
            self._sweep_locked()
            if episode_id not in self._sessions:
                if episode_id in self._evicted:
                    raise SessionEvicted(episode_id)
                raise UnknownSession(episode_id)
            del self._sessions[episode_id]

    def record_completed(self, trace: EpisodeTrace) -> None:
        with self._lock:
            self.completed.append(trace)

    def completed_snapshot(self) -> list[EpisodeTrace]:
        with self._lock:
            return list(self.completed)


class RegistryFull(Exception):
    pass


class UnknownSession(Exception):
    pass


class SessionEvicted(Exception):
    pass


def _apply_overrides(
    episode_defaults: EpisodeConfig,
    reward_defaults: RewardConfig,
    overrides: EpisodeOverrides | None,
) -> tuple[EpisodeConfig, RewardConfig, float | None]:
    if overrides is None:
        return episode_defaults, reward_defaults, None
    episode_kwargs = episode_config_to_dict(episode_defaults)
    if overrides.feedback_preset is not None:
        if overrides.feedback_preset not in FEEDBACK_PRESETS:
            raise InvalidConfig(f"unknown feedback preset {overrides.feedback_preset!r}")
        episode_kwargs["feedback_template"] = FEEDBACK_PRESETS[overrides.feedback_preset]
    for key in (
        "t_max",
        "action_budget",
        "max_response_len",
        "prompt_template",
        "feedback_template",
        "format_reminder",
        "feedback_mode",
    ):
        value = getattr(overrides, key)
        if value is not None:
            episode_kwargs[key] = value
    try:
        episode_config = EpisodeConfig(
            t_max=episode_kwargs["t_max"],
            action_budget=episode_kwargs["action_budget"],
            prompt_template=episode_kwargs["prompt_template"],
            feedback_template=episode_kwargs["feedback_template"],
            format_reminder=episode_kwargs["format_reminder"],
            max_response_len=episode_kwargs["max_response_len"],
            feedback_mode=FeedbackMode(episode_kwargs["feedback_mode"]),
        )
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from exc

    reward_kwargs = {
        "schedule": reward_defaults.schedule,
        "gamma": reward_defaults.gamma,
        "linear_slope": reward_defaults.linear_slope,
        "penalty_weight": reward_defaults.penalty_weight,
        "invalid_penalty": reward_defaults.invalid_penalty,
    }
    if overrides.schedule is not None:
        try:
            reward_kwargs["schedule"] = Schedule(overrides.schedule)
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from exc
    for key in ("gamma", "linear_slope", "penalty_weight", "invalid_penalty"):
        value = getattr(overrides, key)
        if value is not None:
            reward_kwargs[key] = value
    reward_config = RewardConfig(**reward_kwargs)
    try:
        reward_config.validate()
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from exc
    return episode_config, reward_config, overrides.idle_timeout_s


def _verdict_payload(verdict) -> dict:
    return {"kind": verdict.kind.value, "canonical_answer": verdict.canonical_answer}


def create_app(
    manifest: DatasetManifest,
    episode_defaults: EpisodeConfig | None = None,
    reward_defaults: RewardConfig | None = None,
    *,
    capacity: int = DEFAULT_CAPACITY,
    idle_timeout_s: float = DEFAULT_IDLE_TIMEOUT_S,
    clock=time.monotonic,
) -> FastAPI:
    episode_defaults = episode_defaults or EpisodeConfig()
    reward_defaults = reward_defaults or RewardConfig()
    episode_defaults.validate()
    reward_defaults.validate()

    app = FastAPI(title="tryagain environment service", version=__version__)
    registry = SessionRegistry(capacity=capacity, idle_timeout_s=idle_timeout_s, clock=clock)
    app.state.registry = registry

    def _error(status_code: int, detail: str) -> JSONResponse:
        return JSONResponse(status_code=status_code, content={"detail": detail})

    def _lookup(episode_id: str) -> Session | JSONResponse:
        try:
            return registry.get(episode_id)
        except SessionEvicted:
            return _error(410, f"episode {episode_id} was evicted after being idle")
        except UnknownSession:
            return _error(404, f"unknown episode {episode_id}")

    @app.get("/healthz")
    def healthz() -> dict:
        return {
            "status": "ok",
            "version": __version__,
            "dataset": manifest.name,
            "dataset_checksum": manifest.checksum,
            "problems": len(manifest.records),
        }

    @app.post("/v1/episodes", status_code=201)
    def create_episode(body: CreateEpisodeBody):
        problem = manifest.by_id(body.problem_id)
        if problem is None:
            return _error(404, f"unknown problem id {body.problem_id!r}")
        try:
            episode_config, reward_config, idle_override = _apply_overrides(
                episode_defaults, reward_defaults, body.overrides
            )
            if episode_config.feedback_mode is FeedbackMode.TUTOR:
                raise InvalidConfig("tutor feedback is not available over the service")
            state, observation = reset(problem, episode_config)
        except InvalidConfig as exc:
            return _error(422, str(exc))
        session = Session(
            episode_id=uuid.uuid4().hex,
            problem_id=problem.id,
            state=state,
            episode_config=episode_config,
            reward_config=reward_config,
            idle_timeout_s=idle_override if idle_override is not None else registry.idle_timeout_s,
            last_access=registry.clock(),
        )
        try:
            registry.create(session)
        except RegistryFull:
            return _error(429, "session registry is at capacity")
        return JSONResponse(
            status_code=201,
            content={
                "episode_id": session.episode_id,
                "observation": observation,
                "turn": 1,
                "actions_left": episode_config.t_max,
            },
        )

    @app.post("/v1/episodes/{episode_id}/step")
    def step_episode(episode_id: str, body: StepBody):
        session = _lookup(episode_id)
        if isinstance(session, JSONResponse):
            return session
        with session.lock:
            if session.state.status is not EpisodeStatus.RUNNING:
                return _error(409, f"episode is already {session.state.status.value}")
            state, result = step(session.state, body.response, session.episode_config)
            session.state = state
            payload = {
                "feedback": result.feedback,
                "done": result.done,
                "verdict": _verdict_payload(result.verdict),
                "turn": result.turn_index,
                "actions_left": result.actions_left,
            }
            if result.done:
                reward = trajectory_reward(state, session.reward_config)
                payload["reward"] = reward.to_dict()
                registry.record_completed(
                    _session_trace(session, manifest, reward)
                )
            else:
                payload["observation"] = render_observation(state, session.episode_config)
            return payload

    @app.get("/v1/episodes/{episode_id}")
    def snapshot(episode_id: str):
        session = _lookup(episode_id)
        if isinstance(session, JSONResponse):
            return session
        with session.lock:
            state = session.state
            payload = {
                "episode_id": session.episode_id,
                "problem_id": session.problem_id,
                "status": state.status.value,
                "turn": len(state.history) + 1,
                "actions_left": session.episode_config.t_max - len(state.history),
                "history": [
                    {
                        "turn": a.turn_index,
                        "answer_raw": a.answer_raw,
                        "canonical": a.answer_canonical,
                        "feedback": a.feedback,
                        "verdict": _verdict_payload(a.verdict),
                    }
                    for a in state.history
                ],
            }
            if state.status is EpisodeStatus.RUNNING:
                payload["observation"] = render_observation(state, session.episode_config)
            return payload

    @app.delete("/v1/episodes/{episode_id}", status_code=204)
    def delete_episode(episode_id: str):
        try:
            registry.delete(episode_id)
        except SessionEvicted:
            return _error(410, f"episode {episode_id} was evicted after being idle")
        except UnknownSession:
            return _error(404, f"unknown episode {episode_id}")
        return Response(status_code=204)

    @app.get("/v1/metrics")
    def metrics():
        completed = registry.completed_snapshot()
        if not completed:
            return EvalReport().to_dict()
        return build_report(completed).to_dict()

    return app


def _session_trace(session: Session, manifest: DatasetManifest, reward) -> EpisodeTrace:
    problem = manifest.by_id(session.problem_id)
    state = session.state
    return EpisodeTrace(
        problem=problem,
        rollout=0,
        status=state.status.value,
        solve_turn=state.solve_turn,
        turns=tuple(
            TurnRecord(
                turn=a.turn_index,
                observation="",  # snapshots keep history; full observations live in traces
                response=a.answer_raw,
                verdict=a.verdict.kind.value,
                canonical=a.answer_canonical,
                feedback=a.feedback,
            )
            for a in state.history
        ),
        reward=reward,
        fingerprint="service",
        episode_config=session.episode_config,
        reward_config=session.reward_config,
    )


def serve(
    bind: str,
    manifest: DatasetManifest,
    episode_defaults: EpisodeConfig | None = None,
    reward_defaults: RewardConfig | None = None,
    *,
    capacity: int = DEFAULT_CAPACITY,
    idle_timeout_s: float = DEFAULT_IDLE_TIMEOUT_S,
) -> None:
    """Run the service until interrupted. ``bind`` is ``host:port``."""
    import uvicorn

    host, _, port = bind.partition(":")
    app = create_app(
        manifest,
        episode_defaults,
        reward_defaults,
        capacity=capacity,
        idle_timeout_s=idle_timeout_s,
    )
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="warning")
