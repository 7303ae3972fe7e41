"""Multi-turn retry environment and evaluation harness for static QA datasets.

Single-turn QA items are replayed as finite-horizon episodes in which the
agent only ever learns that its last answer was wrong ("Try Again.") and must
revise. The package bundles the episode engine, answer grading, the
trajectory reward stack (decayed success reward, repetition penalty, format
penalty), evaluation metrics (Succ@k, Pass@k, AvgTurns, effective-answer
ratios), scripted verification agents, a rollout orchestrator with JSONL
traces, an HTTP environment service, and a CLI.
"""

__version__ = "0.1.0"

from .dataset import DatasetManifest, ProblemRecord, load_dataset, sample_batch
from .episode import (
    Attempt,
    EpisodeConfig,
    EpisodeState,
    EpisodeStatus,
    FeedbackMode,
    StepResult,
    render_observation,
    reset,
    step,
)
from .grading import ParsedResponse, Verdict, VerdictKind, grade, normalize_answer, parse_response
from .metrics import EvalReport, avg_turns, build_report, effective_answer_ratio, pass_at_k, succ_at_k
from .reward import (
    RewardConfig,
    Schedule,
    TrajectoryReward,
    effective_answer_count,
    repetition_penalty,
    trajectory_reward,
    turn_reward,
)

__all__ = [
    "Attempt",
    "DatasetManifest",
    "EpisodeConfig",
    "EpisodeState",
    "EpisodeStatus",
    "EvalReport",
    "FeedbackMode",
    "ParsedResponse",
    "ProblemRecord",
    "RewardConfig",
    "Schedule",
    "StepResult",
    "TrajectoryReward",
    "Verdict",
    "VerdictKind",
    "avg_turns",
    "build_report",
    "effective_answer_count",
    "effective_answer_ratio",
    "grade",
    "load_dataset",
    "normalize_answer",
    "parse_response",
    "pass_at_k",
    "render_observation",
    "repetition_penalty",
    "reset",
    "sample_batch",
    "step",
    "succ_at_k",
    "trajectory_reward",
    "turn_reward",
]
