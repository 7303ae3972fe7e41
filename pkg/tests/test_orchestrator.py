import json
from pathlib import Path

import httpx
import pytest

from tryagain.agents import AgentSpec
from tryagain.dataset import ProblemRecord
from tryagain.episode import EpisodeConfig, FEEDBACK_PRESETS, FeedbackMode, InvalidConfig
from tryagain.llm import EndpointSpec
from tryagain.orchestrator import (
    EndpointUnreachable,
    RunConfig,
    run_episode_with_endpoint,
    run_rollouts,
)
from tryagain.trace import TraceWriteFailure, read_traces, replay_trace, replay_traces

from conftest import SAMPLE_DATASET


def oracle_config(tmp_path, **kwargs):
    defaults = dict(
        dataset_path=str(SAMPLE_DATASET),
        agent=AgentSpec(kind="oracle", solve_at_turn=1),
        trace_path=str(tmp_path / "traces.jsonl"),
        seed=7,
    )
    defaults.update(kwargs)
    return RunConfig(**defaults)


class TestRunRollouts:
    def test_oracle_batch(self, tmp_path):
        traces, report = run_rollouts(oracle_config(tmp_path))
        assert len(traces) == 10
        assert report.succ_at[1] == 1.0
        assert report.avg_turns == 1.0

    def test_oracle_solve_turn_controls_succ_at_k(self, tmp_path):
        config = oracle_config(tmp_path, agent=AgentSpec(kind="oracle", solve_at_turn=3))
        _, report = run_rollouts(config)
        assert report.succ_at[1] == 0.0
        assert report.succ_at[5] == 1.0
        assert report.avg_turns == 3.0

    def test_trace_file_order_matches_sample_order(self, tmp_path):
        config = oracle_config(tmp_path, parallelism=8)
        traces, _ = run_rollouts(config)
        on_disk = read_traces(config.trace_path)
        assert [t.problem.id for t in on_disk] == [t.problem.id for t in traces]

    def test_repeated_answer_episode_structure(self, tmp_path):
        config = oracle_config(
            tmp_path,
            agent=AgentSpec(kind="repeater", fixed_answer="2"),
            episode=EpisodeConfig(
                t_max=5,
                action_budget=10,
                feedback_template=FEEDBACK_PRESETS["incorrect_try_again"],
            ),
            n_problems=1,
        )
        traces, _ = run_rollouts(config)
        trace = traces[0]
        assert trace.status == "exhausted_turns"
        assert trace.turn_count == 5
        responses = {t.response for t in trace.turns}
        assert len(responses) == 1
        assert all("Incorrect. Please try agin." in t.feedback for t in trace.turns)
        assert trace.reward.effective_answers == 1

    def test_same_seed_byte_identical_files(self, tmp_path):
        config_a = oracle_config(
            tmp_path,
            agent=AgentSpec(kind="stochastic", p_correct=0.4),
            trace_path=str(tmp_path / "a.jsonl"),
        )
        config_b = oracle_config(
            tmp_path,
            agent=AgentSpec(kind="stochastic", p_correct=0.4),
            trace_path=str(tmp_path / "b.jsonl"),
        )
        run_rollouts(config_a)
        run_rollouts(config_b)
        assert Path(config_a.trace_path).read_bytes() == Path(config_b.trace_path).read_bytes()

    def test_parallelism_does_not_change_bytes(self, tmp_path):
        base = dict(agent=AgentSpec(kind="stochastic", p_correct=0.4), seed=11)
        config_1 = oracle_config(tmp_path, trace_path=str(tmp_path / "p1.jsonl"), parallelism=1, **base)
        config_8 = oracle_config(tmp_path, trace_path=str(tmp_path / "p8.jsonl"), parallelism=8, **base)
        _, report_1 = run_rollouts(config_1)
        _, report_8 = run_rollouts(config_8)
        assert Path(config_1.trace_path).read_bytes() == Path(config_8.trace_path).read_bytes()
        assert report_1.to_dict() == report_8.to_dict()

    def test_resume_skips_completed_problems(self, tmp_path):
        config = oracle_config(tmp_path)
        run_rollouts(config)
        full = Path(config.trace_path).read_text(encoding="utf-8")
        lines = full.splitlines()

        # truncate to a partial prefix and resume
        Path(config.trace_path).write_text("\n".join(lines[:4]) + "\n", encoding="utf-8")
        traces, _ = run_rollouts(config, resume=True)
        assert len(traces) == 10
        resumed = Path(config.trace_path).read_text(encoding="utf-8")
        assert resumed == full
        ids = [t.problem.id for t in read_traces(config.trace_path)]
        assert len(ids) == len(set(ids))

    def test_resume_rejects_fingerprint_mismatch(self, tmp_path):
        config = oracle_config(tmp_path)
        run_rollouts(config)
        other = oracle_config(tmp_path, seed=8)  # same file, different run identity
        with pytest.raises(TraceWriteFailure):
            run_rollouts(other, resume=True)

    def test_rollouts_per_problem(self, tmp_path):
        config = oracle_config(
            tmp_path,
            agent=AgentSpec(kind="stochastic", p_correct=0.5),
            n_problems=3,
            rollouts_per_problem=4,
        )
        traces, _ = run_rollouts(config)
        assert len(traces) == 12
        assert {(t.problem.id, t.rollout) for t in traces} == {
            (t.problem.id, r) for t in traces for r in range(4)
        }

    def test_config_requires_exactly_one_driver(self, tmp_path):
        with pytest.raises(InvalidConfig):
            run_rollouts(RunConfig(dataset_path=str(SAMPLE_DATASET)))

    def test_traces_replay_cleanly(self, tmp_path):
        config = oracle_config(
            tmp_path,
            agent=AgentSpec(kind="stochastic", p_correct=0.4, format_compliance=0.8),
        )
        traces, _ = run_rollouts(config)
        result = replay_traces(read_traces(config.trace_path))
        assert result.ok
        assert result.episodes == 10

    def test_replay_detects_tampering(self, tmp_path):
        config = oracle_config(tmp_path)
        run_rollouts(config)
        lines = Path(config.trace_path).read_text(encoding="utf-8").splitlines()
        obj = json.loads(lines[0])
        obj["turns"][0]["verdict"] = "incorrect"  # forged verdict
        from tryagain.trace import ReplayMismatch, trace_from_dict

        with pytest.raises(ReplayMismatch):
            replay_trace(trace_from_dict(obj))


class EndpointStub:
    """Scripted chat endpoint; replies with the i-th canned response per episode."""

    def __init__(self, responses):
        self.responses = responses
        self.requests = []

    def transport(self):
        def handler(request):
            body = json.loads(request.content)
            self.requests.append(body)
            # one user message per turn: the turn index picks the reply
            turn = sum(1 for m in body["messages"] if m["role"] == "user")
            text = self.responses[min(turn - 1, len(self.responses) - 1)]
            return httpx.Response(
                200, json={"choices": [{"message": {"role": "assistant", "content": text}}]}
            )

        return httpx.MockTransport(handler)


class TestEndpointEpisodes:
    PROBLEM = ProblemRecord(id="p1", question="What is 6 times 7?", gold_answer="42")
    ENDPOINT = EndpointSpec(base_url="http://llm.test", model="m", backoff_initial_ms=0.01)

    def test_episode_against_stub(self):
        stub = EndpointStub(
            [
                "<think>a</think> <answer>40</answer>",
                "<think>b</think> <answer>42</answer>",
            ]
        )
        trace = run_episode_with_endpoint(
            self.PROBLEM,
            EpisodeConfig(t_max=5),
            __import__("tryagain.reward", fromlist=["RewardConfig"]).RewardConfig(),
            self.ENDPOINT,
            transport=stub.transport(),
        )
        assert trace.status == "solved"
        assert trace.solve_turn == 2
        assert trace.turns[0].ts is not None  # live runs carry timestamps

    def test_message_pattern_alternates(self):
        stub = EndpointStub(
            [
                "<think>a</think> <answer>1</answer>",
                "<think>b</think> <answer>2</answer>",
                "<think>c</think> <answer>42</answer>",
            ]
        )
        run_episode_with_endpoint(
            self.PROBLEM,
            EpisodeConfig(t_max=5),
            __import__("tryagain.reward", fromlist=["RewardConfig"]).RewardConfig(),
            self.ENDPOINT,
            transport=stub.transport(),
        )
        final = stub.requests[-1]["messages"]
        roles = [m["role"] for m in final]
        assert roles == ["system", "user", "assistant", "user", "assistant", "user"]
        # each user observation embeds the question; later ones carry history
        assert "Turn 3:" in final[-1]["content"]
        assert "Attempt 2:" in final[-1]["content"]

    def test_endpoint_failure_surfaces_after_retries(self):
        def handler(request):
            return httpx.Response(500, text="down")

        with pytest.raises(EndpointUnreachable):
            run_episode_with_endpoint(
                self.PROBLEM,
                EpisodeConfig(t_max=2),
                __import__("tryagain.reward", fromlist=["RewardConfig"]).RewardConfig(),
                self.ENDPOINT,
                transport=httpx.MockTransport(handler),
            )


class TestTutorMode:
    def test_tutor_called_only_for_incorrect(self, tmp_path, write_dataset):
        calls = []

        def provider(question, answer):
            calls.append(answer)
            return f"Hint about {answer}."

        dataset = write_dataset(
            [{"id": "only", "question": "Sum the divisors of 12.", "gold_answer": "28"}]
        )
        config = oracle_config(
            tmp_path,
            dataset_path=str(dataset),
            agent=AgentSpec(kind="enumerator", answers=("6", "28")),
            episode=EpisodeConfig(t_max=5, action_budget=10, feedback_mode=FeedbackMode.TUTOR),
            tutor_endpoint=EndpointSpec(base_url="http://tutor.test", model="m"),
        )
        traces, _ = run_rollouts(config, feedback_provider=provider)
        trace = traces[0]
        wrong_turns = [t for t in trace.turns if t.verdict == "incorrect"]
        assert len(calls) == len(wrong_turns)
        for t in wrong_turns:
            assert t.feedback.startswith("Hint about ")

    def test_unary_mode_never_calls_tutor(self, tmp_path):
        def provider(question, answer):  # pragma: no cover - must not run
            raise AssertionError("tutor invoked in unary mode")

        config = oracle_config(tmp_path, n_problems=2)
        traces, _ = run_rollouts(config, feedback_provider=provider)
        assert len(traces) == 2

    def test_tutor_mode_requires_endpoint(self, tmp_path):
        config = oracle_config(
            tmp_path,
            episode=EpisodeConfig(feedback_mode=FeedbackMode.TUTOR),
        )
        with pytest.raises(InvalidConfig):
            run_rollouts(config)


class TestRunConfigSerialization:
    def test_from_dict_round_trip(self):
        obj = {
            "dataset_path": str(SAMPLE_DATASET),
            "seed": 3,
            "parallelism": 2,
            "episode": {"t_max": 3, "feedback_preset": "incorrect_think_again"},
            "reward": {"schedule": "linear", "linear_slope": 0.25},
            "agent": {"kind": "repeater", "fixed_answer": "7"},
        }
        config = RunConfig.from_dict(obj)
        assert config.episode.t_max == 3
        assert config.episode.feedback_template == "Incorrect. Please think again."
        assert config.reward.schedule.value == "linear"
        assert config.agent.fixed_answer == "7"

    def test_unknown_preset_rejected(self):
        with pytest.raises(InvalidConfig):
            RunConfig.from_dict(
                {
                    "dataset_path": str(SAMPLE_DATASET),
                    "episode": {"feedback_preset": "nope"},
                    "agent": {"kind": "repeater", "fixed_answer": "7"},
                }
            )

    def test_fingerprint_ignores_execution_knobs(self, sample_manifest):
        base = RunConfig(
            dataset_path=str(SAMPLE_DATASET),
            agent=AgentSpec(kind="oracle"),
            seed=1,
        )
        variant = RunConfig(
            dataset_path=str(SAMPLE_DATASET),
            agent=AgentSpec(kind="oracle"),
            seed=1,
            parallelism=8,
            trace_path="elsewhere.jsonl",
            report_ks=(1, 2),
        )
        different = RunConfig(
            dataset_path=str(SAMPLE_DATASET),
            agent=AgentSpec(kind="oracle"),
            seed=2,
        )
        assert base.fingerprint(sample_manifest) == variant.fingerprint(sample_manifest)
        assert base.fingerprint(sample_manifest) != different.fingerprint(sample_manifest)
