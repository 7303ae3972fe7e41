"""Run batches of episodes against scripted agents or a chat endpoint.

Episodes run with up to ``parallelism`` in flight. Every episode draws its
own seed from (run seed, problem id, rollout index), so outputs do not
depend on scheduling: a run at parallelism 8 writes the same bytes as a run
at parallelism 1. Traces stream to disk in sample order as episodes finish,
and a run can resume over a partial trace file without duplicating problems
(the run fingerprint must match).
"""

from __future__ import annotations

import hashlib
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import httpx

from .agents import AgentSpec, build_agent
from .dataset import DatasetManifest, ProblemRecord, load_dataset, sample_batch
from .episode import (
    EpisodeConfig,
    FEEDBACK_PRESETS,
    FeedbackMode,
    FeedbackProvider,
    InvalidConfig,
    SOLVER_SYSTEM_MESSAGE,
    render_observation,
    reset,
    step,
)
from .llm import EndpointError, EndpointSpec, llm_complete, tutor_feedback
from .metrics import EvalReport, build_report
from .reward import RewardConfig, trajectory_reward
from .trace import (
    EpisodeTrace,
    TraceWriteFailure,
    TraceWriter,
    TurnRecord,
    episode_config_from_dict,
    episode_config_to_dict,
    read_traces,
    reward_config_from_dict,
    reward_config_to_dict,
)


class OrchestratorError(Exception):
    pass


class EndpointUnreachable(OrchestratorError):
    pass


@dataclass(frozen=True)
class RunConfig:
    dataset_path: str
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    agent: AgentSpec | None = None
    endpoint: EndpointSpec | None = None
    tutor_endpoint: EndpointSpec | None = None
    n_problems: int | None = None  # None = the whole dataset
    rollouts_per_problem: int = 1
    parallelism: int = 1
    seed: int = 0
    trace_path: str | None = None
    report_ks: tuple[int, ...] = (1, 5, 10)

    def validate(self) -> None:
        if (self.agent is None) == (self.endpoint is None):
            raise InvalidConfig("exactly one of agent or endpoint must be set")
        if self.parallelism < 1:
            raise InvalidConfig("parallelism must be >= 1")
        if self.rollouts_per_problem < 1:
            raise InvalidConfig("rollouts_per_problem must be >= 1")
        self.episode.validate()
        self.reward.validate()
        if self.agent is not None:
            self.agent.validate()
        if self.episode.feedback_mode is FeedbackMode.TUTOR and self.tutor_endpoint is None:
            raise InvalidConfig("tutor feedback mode requires tutor_endpoint")

    def to_dict(self) -> dict:
        out = {
            "dataset_path": self.dataset_path,
            "episode": episode_config_to_dict(self.episode),
            "reward": reward_config_to_dict(self.reward),
            "n_problems": self.n_problems,
            "rollouts_per_problem": self.rollouts_per_problem,
            "parallelism": self.parallelism,
            "seed": self.seed,
            "trace_path": self.trace_path,
            "report_ks": list(self.report_ks),
        }
        if self.agent is not None:
            out["agent"] = self.agent.to_dict()
        if self.endpoint is not None:
            out["endpoint"] = self.endpoint.to_dict()
        if self.tutor_endpoint is not None:
            out["tutor_endpoint"] = self.tutor_endpoint.to_dict()
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        episode_obj = dict(obj.get("episode", {}))
        preset = episode_obj.pop("feedback_preset", None)
        if preset is not None:
            if preset not in FEEDBACK_PRESETS:
                raise InvalidConfig(
                    f"unknown feedback preset {preset!r}; known: {sorted(FEEDBACK_PRESETS)}"
                )
            episode_obj["feedback_template"] = FEEDBACK_PRESETS[preset]
        episode_defaults = episode_config_to_dict(EpisodeConfig())
        episode = episode_config_from_dict({**episode_defaults, **episode_obj})
        reward_defaults = reward_config_to_dict(RewardConfig())
        reward = reward_config_from_dict({**reward_defaults, **obj.get("reward", {})})
        return cls(
            dataset_path=obj["dataset_path"],
            episode=episode,
            reward=reward,
            agent=AgentSpec.from_dict(obj["agent"]) if obj.get("agent") else None,
            endpoint=EndpointSpec.from_dict(obj["endpoint"]) if obj.get("endpoint") else None,
            tutor_endpoint=(
                EndpointSpec.from_dict(obj["tutor_endpoint"]) if obj.get("tutor_endpoint") else None
            ),
            n_problems=obj.get("n_problems"),
            rollouts_per_problem=obj.get("rollouts_per_problem", 1),
            parallelism=obj.get("parallelism", 1),
            seed=obj.get("seed", 0),
            trace_path=obj.get("trace_path"),
            report_ks=tuple(obj.get("report_ks", (1, 5, 10))),
        )

    def fingerprint(self, manifest: DatasetManifest) -> str:
        """Identity of the run's semantics; execution knobs are excluded.

        Parallelism, paths, and report ks do not change what an episode
        produces, so they stay out of the fingerprint; the dataset enters by
        checksum, not path.
        """
        ident = {
            "dataset_checksum": manifest.checksum,
            "episode": episode_config_to_dict(self.episode),
            "reward": reward_config_to_dict(self.reward),
            "agent": self.agent.to_dict() if self.agent else None,
            "endpoint": self.endpoint.to_dict() if self.endpoint else None,
            "tutor_endpoint": self.tutor_endpoint.to_dict() if self.tutor_endpoint else None,
            "n_problems": self.n_problems,
            "rollouts_per_problem": self.rollouts_per_problem,
            "seed": self.seed,
            "trace_version": 1,
        }
        canonical = json.dumps(ident, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def episode_seed(run_seed: int, problem_id: str, rollout: int) -> str:
    return f"{run_seed}:{problem_id}:{rollout}"


def run_episode_with_agent(
    problem: ProblemRecord,
    episode_config: EpisodeConfig,
    reward_config: RewardConfig,
    agent_spec: AgentSpec,
    seed: str | int,
    *,
    rollout: int = 0,
    fingerprint: str = "",
    feedback_provider: FeedbackProvider | None = None,
) -> EpisodeTrace:
    """Roll one scripted episode to termination and package the trace."""
    agent = build_agent(agent_spec, problem.gold_answer, seed)
    state, observation = reset(problem, episode_config)
    turns: list[TurnRecord] = []
    while True:
        response = agent.respond(observation)
        state, result = step(
            state, response, episode_config, feedback_provider=feedback_provider
        )
        turns.append(
            TurnRecord(
                turn=result.turn_index,
                observation=observation,
                response=response,
                verdict=result.verdict.kind.value,
                canonical=result.verdict.canonical_answer,
                feedback=result.feedback,
                ts=None,  # scripted runs carry no wall-clock time; replays stay byte-stable
            )
        )
        if result.done:
            break
        observation = render_observation(state, episode_config)
    reward = trajectory_reward(state, reward_config)
    return EpisodeTrace(
        problem=problem,
        rollout=rollout,
        status=state.status.value,
        solve_turn=state.solve_turn,
        turns=tuple(turns),
        reward=reward,
        fingerprint=fingerprint,
        episode_config=episode_config,
        reward_config=reward_config,
    )


def run_episode_with_endpoint(
    problem: ProblemRecord,
    episode_config: EpisodeConfig,
    reward_config: RewardConfig,
    endpoint: EndpointSpec,
    *,
    rollout: int = 0,
    fingerprint: str = "",
    feedback_provider: FeedbackProvider | None = None,
    transport: httpx.BaseTransport | None = None,
) -> EpisodeTrace:
    """Roll one episode against a chat endpoint.

    Every request re-sends the whole conversation: the system message, then
    alternating user observations and the assistant's previous responses.
    """
    state, observation = reset(problem, episode_config)
    messages: list[dict] = [{"role": "system", "content": SOLVER_SYSTEM_MESSAGE}]
    turns: list[TurnRecord] = []
    while True:
        messages.append({"role": "user", "content": observation})
        try:
            response = llm_complete(endpoint, messages, transport=transport)
        except EndpointError as exc:
            raise EndpointUnreachable(
                f"problem {problem.id} turn {len(turns) + 1}: {exc}"
            ) from exc
        messages.append({"role": "assistant", "content": response})
        state, result = step(
            state, response, episode_config, feedback_provider=feedback_provider
        )
        turns.append(
            TurnRecord(
                turn=result.turn_index,
                observation=observation,
                response=response,
                verdict=result.verdict.kind.value,
                canonical=result.verdict.canonical_answer,
                feedback=result.feedback,
                ts=datetime.now(timezone.utc).isoformat(),
            )
        )
        if result.done:
            break
        observation = render_observation(state, episode_config)
    reward = trajectory_reward(state, reward_config)
    return EpisodeTrace(
        problem=problem,
        rollout=rollout,
        status=state.status.value,
        solve_turn=state.solve_turn,
        turns=tuple(turns),
        reward=reward,
        fingerprint=fingerprint,
        episode_config=episode_config,
        reward_config=reward_config,
    )


def _load_completed(path: Path, fingerprint: str) -> dict[tuple[str, int], EpisodeTrace]:
    if not path.exists():
        return {}
    existing = read_traces(path)
    completed = {}
    for trace in existing:
        if trace.fingerprint != fingerprint:
            raise TraceWriteFailure(
                f"{path} holds traces from a different run configuration "
                f"(fingerprint {trace.fingerprint[:12]} != {fingerprint[:12]})"
            )
        completed[(trace.problem.id, trace.rollout)] = trace
    return completed


def run_rollouts(
    config: RunConfig,
    *,
    resume: bool = False,
    transport: httpx.BaseTransport | None = None,
    feedback_provider: FeedbackProvider | None = None,
) -> tuple[list[EpisodeTrace], EvalReport]:
    """Run one episode per (sampled problem, rollout) and report on the batch."""
    config.validate()
    manifest = load_dataset(config.dataset_path)
    n = len(manifest.records) if config.n_problems is None else config.n_problems
    records = sample_batch(manifest, n, config.seed)
    fingerprint = config.fingerprint(manifest)

    provider = feedback_provider
    if provider is None and config.episode.feedback_mode is FeedbackMode.TUTOR:
        tutor_spec = config.tutor_endpoint

        def provider(question: str, wrong_answer: str) -> str:
            return tutor_feedback(tutor_spec, question, wrong_answer, transport=transport)

    jobs = [
        (index, record, rollout)
        for index, (record, rollout) in enumerate(
            (record, rollout)
            for record in records
            for rollout in range(config.rollouts_per_problem)
        )
    ]

    completed: dict[tuple[str, int], EpisodeTrace] = {}
    trace_path = Path(config.trace_path) if config.trace_path else None
    if resume and trace_path is not None:
        completed = _load_completed(trace_path, fingerprint)

    def run_one(record: ProblemRecord, rollout: int) -> EpisodeTrace:
        if config.agent is not None:
            return run_episode_with_agent(
                record,
                config.episode,
                config.reward,
                config.agent,
                episode_seed(config.seed, record.id, rollout),
                rollout=rollout,
                fingerprint=fingerprint,
                feedback_provider=provider,
            )
        return run_episode_with_endpoint(
            record,
            config.episode,
            config.reward,
            config.endpoint,
            rollout=rollout,
            fingerprint=fingerprint,
            feedback_provider=provider,
            transport=transport,
        )

    fh = None
    try:
        if trace_path is not None:
            trace_path.parent.mkdir(parents=True, exist_ok=True)
            fh = trace_path.open("a" if resume else "w", encoding="utf-8")
        writer = TraceWriter(fh)

        if config.parallelism == 1:
            for index, record, rollout in jobs:
                done = completed.get((record.id, rollout))
                if done is not None:
                    writer.skip(index, done)
                else:
                    writer.put(index, run_one(record, rollout))
        else:
            errors: list[BaseException] = []
            error_lock = threading.Lock()

            def worker(job):
                index, record, rollout = job
                try:
                    done = completed.get((record.id, rollout))
                    if done is not None:
                        writer.skip(index, done)
                    else:
                        writer.put(index, run_one(record, rollout))
                except BaseException as exc:  # surfaced after the pool drains
                    with error_lock:
                        errors.append(exc)

            with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
                list(pool.map(worker, jobs))
            if errors:
                raise errors[0]
        traces = writer.traces
    finally:
        if fh is not None:
            fh.close()

    report = build_report(traces, config.report_ks) if traces else EvalReport()
    return traces, report
