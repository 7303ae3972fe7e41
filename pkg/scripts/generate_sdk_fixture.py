"""Regenerate the engine-trace fixture the TypeScript SDK tests compare against.

The fixture freezes what the in-process engine produces for a five-turn
repeated-answer conversation with the service's default configs, so the SDK
test can assert that driving the same responses over the wire yields an
identical trace.

Usage: python3 scripts/generate_sdk_fixture.py
"""

from __future__ import annotations

import json
from pathlib import Path

from tryagain.agents import wrap_answer
from tryagain.dataset import load_dataset
from tryagain.episode import EpisodeConfig, render_observation, reset, step
from tryagain.reward import RewardConfig, trajectory_reward

REPO_ROOT = Path(__file__).resolve().parent.parent
OUT = REPO_ROOT / "client-ts" / "test" / "fixtures" / "engine_trace.json"

PROBLEM_ID = "divsum-12"
RESPONSE = wrap_answer("2", "I am confident in my previous answer.")


def main() -> None:
    manifest = load_dataset(REPO_ROOT / "data" / "sample_math.jsonl")
    problem = manifest.by_id(PROBLEM_ID)
    episode_config = EpisodeConfig()  # the service defaults
    reward_config = RewardConfig()

    state, observation = reset(problem, episode_config)
    fixture = {
        "problem_id": PROBLEM_ID,
        "initial": {
            "observation": observation,
            "turn": 1,
            "actions_left": episode_config.t_max,
        },
        "steps": [],
    }
    while True:
        state, result = step(state, RESPONSE, episode_config)
        expect = {
            "feedback": result.feedback,
            "done": result.done,
            "verdict": {
                "kind": result.verdict.kind.value,
                "canonical_answer": result.verdict.canonical_answer,
            },
            "turn": result.turn_index,
            "actions_left": result.actions_left,
        }
        if result.done:
            expect["reward"] = trajectory_reward(state, reward_config).to_dict()
        else:
            expect["observation"] = render_observation(state, episode_config)
        fixture["steps"].append({"response": RESPONSE, "expect": expect})
        if result.done:
            break

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(fixture, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    print(f"wrote {OUT} ({len(fixture['steps'])} steps)")


if __name__ == "__main__":
    main()
