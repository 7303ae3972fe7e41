import pytest
from hypothesis import given, settings, strategies as st

from tryagain.agents import wrap_answer
from tryagain.dataset import ProblemRecord
from tryagain.episode import (
    DEFAULT_FORMAT_REMINDER,
    DEFAULT_UNARY_FEEDBACK,
    EpisodeConfig,
    EpisodeFinished,
    EpisodeStatus,
    FeedbackMode,
    InvalidConfig,
    POSITIVE_CONFIRMATION_TOKEN,
    render_observation,
    reset,
    step,
)
from tryagain.grading import VerdictKind

from conftest import read_golden

PROBLEM = ProblemRecord(id="p1", question="What is 6 times 7?", gold_answer="42")


def wrong(i):
    return wrap_answer(f"guess {i}", f"try {i}")


class TestConfigValidation:
    def test_zero_t_max_rejected(self):
        with pytest.raises(InvalidConfig):
            reset(PROBLEM, EpisodeConfig(t_max=0))

    def test_budget_below_horizon_rejected(self):
        with pytest.raises(InvalidConfig):
            EpisodeConfig(t_max=5, action_budget=3).validate()

    def test_template_missing_placeholder_rejected(self):
        with pytest.raises(InvalidConfig):
            EpisodeConfig(prompt_template="Turn {turn}: {question}").validate()

    def test_template_duplicate_placeholder_rejected(self):
        bad = "{turn}{turn}{question}{actions_left}{max_len}"
        with pytest.raises(InvalidConfig):
            EpisodeConfig(prompt_template=bad).validate()

    def test_template_unknown_placeholder_rejected(self):
        bad = "{turn}{question}{actions_left}{max_len}{bogus}"
        with pytest.raises(InvalidConfig):
            EpisodeConfig(prompt_template=bad).validate()


class TestReset:
    def test_first_observation_names_turn_and_budget(self):
        _, obs = reset(PROBLEM, EpisodeConfig(t_max=5))
        assert "Turn 1:" in obs
        assert "You have 5 actions left" in obs
        assert PROBLEM.question in obs

    def test_reset_is_pure(self):
        config = EpisodeConfig(t_max=5)
        _, first = reset(PROBLEM, config)
        _, second = reset(PROBLEM, config)
        assert first == second

    def test_fresh_state(self):
        state, _ = reset(PROBLEM, EpisodeConfig())
        assert state.history == ()
        assert state.actions_used == 0
        assert state.status is EpisodeStatus.RUNNING


class TestRenderObservation:
    def test_empty_history_is_header_only(self):
        state, obs = reset(PROBLEM, EpisodeConfig(t_max=5))
        assert "Attempt" not in obs
        assert "Feedback" not in obs

    def test_unary_lists_attempt_feedback_pairs(self):
        config = EpisodeConfig(t_max=5)
        state, _ = reset(PROBLEM, config)
        state, _ = step(state, wrong(1), config)
        state, _ = step(state, wrong(2), config)
        obs = render_observation(state, config)
        assert obs.count("Attempt ") == 2
        assert obs.count("Feedback: ") == 2
        assert f"Feedback: {DEFAULT_UNARY_FEEDBACK}" in obs
        assert "Attempt 1: guess 1" in obs

    def test_blank_mode_lists_attempts_without_feedback(self):
        config = EpisodeConfig(t_max=5, feedback_mode=FeedbackMode.BLANK)
        state, _ = reset(PROBLEM, config)
        state, _ = step(state, wrong(1), config)
        state, _ = step(state, wrong(2), config)
        obs = render_observation(state, config)
        assert obs.count("Attempt ") == 2
        assert "Feedback" not in obs

    def test_terminal_state_rejected(self):
        config = EpisodeConfig(t_max=1)
        state, _ = reset(PROBLEM, config)
        state, _ = step(state, wrong(1), config)
        with pytest.raises(EpisodeFinished):
            render_observation(state, config)

    def test_golden_turn1(self, divisor_problem):
        from tryagain.episode import FEEDBACK_PRESETS

        config = EpisodeConfig(
            t_max=10, action_budget=10,
            feedback_template=FEEDBACK_PRESETS["incorrect_think_again"],
        )
        _, obs = reset(divisor_problem, config)
        assert obs == read_golden("observation_turn1.txt")


class TestStep:
    def test_wrong_answer_keeps_running(self):
        config = EpisodeConfig(t_max=5)
        state, _ = reset(PROBLEM, config)
        state, result = step(state, wrong(1), config)
        assert not result.done
        assert result.feedback == DEFAULT_UNARY_FEEDBACK
        assert result.actions_left == 4
        assert result.verdict.kind is VerdictKind.INCORRECT
        assert state.status is EpisodeStatus.RUNNING

    def test_correct_answer_terminates(self):
        config = EpisodeConfig(t_max=5)
        state, _ = reset(PROBLEM, config)
        state, result = step(state, wrap_answer("42", "sure"), config)
        assert result.done
        assert result.verdict.kind is VerdictKind.CORRECT
        assert result.feedback == ""
        assert state.status is EpisodeStatus.SOLVED
        assert state.solve_turn == 1

    def test_horizon_exhaustion(self):
        config = EpisodeConfig(t_max=5)
        state, _ = reset(PROBLEM, config)
        for i in range(4):
            state, result = step(state, wrong(i), config)
            assert not result.done
        state, result = step(state, wrong(99), config)
        assert result.done
        assert state.status is EpisodeStatus.EXHAUSTED_TURNS

    def test_invalid_format_consumes_turn_and_gets_reminder(self):
        config = EpisodeConfig(t_max=5)
        state, _ = reset(PROBLEM, config)
        state, result = step(state, "no tags at all", config)
        assert result.verdict.kind is VerdictKind.INVALID_FORMAT
        assert result.feedback == f"{DEFAULT_UNARY_FEEDBACK}\n{DEFAULT_FORMAT_REMINDER}"
        assert len(state.history) == 1
        assert state.actions_used == 1
        obs = render_observation(state, config)
        assert "Attempt 1: no tags at all" in obs

    def test_step_after_termination_rejected(self):
        config = EpisodeConfig(t_max=1)
        state, _ = reset(PROBLEM, config)
        state, _ = step(state, wrong(1), config)
        with pytest.raises(EpisodeFinished):
            step(state, wrong(2), config)

    def test_correct_never_midway(self):
        config = EpisodeConfig(t_max=5)
        state, _ = reset(PROBLEM, config)
        state, _ = step(state, wrong(1), config)
        state, _ = step(state, wrap_answer("42", "got it"), config)
        correct_positions = [
            a.turn_index
            for a in state.history
            if a.verdict.kind is VerdictKind.CORRECT
        ]
        assert correct_positions == [state.history[-1].turn_index]

    def test_custom_feedback_placeholders(self):
        config = EpisodeConfig(feedback_template="No. {answer} is wrong (turn {turn}).")
        state, _ = reset(PROBLEM, config)
        state, result = step(state, wrap_answer("13", "hmm"), config)
        assert result.feedback == "No. 13 is wrong (turn 1)."

    def test_tutor_mode_uses_provider_for_incorrect(self):
        calls = []

        def provider(question, answer):
            calls.append((question, answer))
            return "Consider recounting."

        config = EpisodeConfig(feedback_mode=FeedbackMode.TUTOR)
        state, _ = reset(PROBLEM, config)
        state, result = step(state, wrap_answer("13", "hmm"), config, feedback_provider=provider)
        assert result.feedback == "Consider recounting."
        assert calls == [(PROBLEM.question, "13")]
        obs = render_observation(state, config)
        assert "Feedback: Consider recounting." in obs

    def test_tutor_mode_invalid_format_skips_provider(self):
        def provider(question, answer):  # pragma: no cover - must not run
            raise AssertionError("tutor called for a malformed response")

        config = EpisodeConfig(feedback_mode=FeedbackMode.TUTOR)
        state, _ = reset(PROBLEM, config)
        state, result = step(state, "garbage", config, feedback_provider=provider)
        assert result.feedback.startswith(DEFAULT_UNARY_FEEDBACK)

    def test_tutor_mode_without_provider_rejected(self):
        config = EpisodeConfig(feedback_mode=FeedbackMode.TUTOR)
        state, _ = reset(PROBLEM, config)
        with pytest.raises(InvalidConfig):
            step(state, wrong(1), config)


answers_strategy = st.lists(
    st.one_of(
        st.sampled_from(["alpha", "beta", "gamma"]).map(lambda a: wrap_answer(a, "t")),
        st.just("malformed response"),
    ),
    min_size=1,
    max_size=5,
)


class TestEngineProperties:
    @given(answers_strategy)
    @settings(max_examples=200, deadline=None)
    def test_budget_strictly_decreases(self, responses):
        config = EpisodeConfig(t_max=5)
        state, _ = reset(PROBLEM, config)
        left = config.t_max
        for response in responses:
            state, result = step(state, response, config)
            assert result.actions_left == left - 1
            left = result.actions_left
            if result.done:
                break

    @given(answers_strategy)
    @settings(max_examples=200, deadline=None)
    def test_attempt_block_grows_append_only(self, responses):
        config = EpisodeConfig(t_max=5)
        state, _ = reset(PROBLEM, config)
        previous_block = ""
        for response in responses:
            state, result = step(state, response, config)
            if result.done:
                break
            obs = render_observation(state, config)
            block = "\n".join(
                line for line in obs.splitlines() if line.startswith(("Attempt ", "Feedback"))
            )
            assert block.startswith(previous_block)
            previous_block = block

    @given(answers_strategy)
    @settings(max_examples=200, deadline=None)
    def test_no_positive_token_in_unary_observations(self, responses):
        config = EpisodeConfig(t_max=5)
        state, _ = reset(PROBLEM, config)
        for response in responses:
            state, result = step(state, response, config)
            if result.done:
                break
            assert POSITIVE_CONFIRMATION_TOKEN not in render_observation(state, config)

    @given(answers_strategy)
    @settings(max_examples=100, deadline=None)
    def test_replay_reproduces_observations(self, responses):
        config = EpisodeConfig(t_max=5)

        def run():
            state, obs = reset(PROBLEM, config)
            seen = [obs]
            results = []
            for response in responses:
                state, result = step(state, response, config)
                results.append(result)
                if result.done:
                    break
                seen.append(render_observation(state, config))
            return seen, results

        assert run() == run()
