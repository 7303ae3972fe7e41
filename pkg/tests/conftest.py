from __future__ import annotations

import json
from pathlib import Path

import pytest

from tryagain.dataset import DatasetManifest, ProblemRecord, load_dataset

REPO_ROOT = Path(__file__).resolve().parent.parent
GOLDEN_DIR = Path(__file__).resolve().parent / "golden"
SAMPLE_DATASET = REPO_ROOT / "data" / "sample_math.jsonl"


@pytest.fixture
def sample_manifest() -> DatasetManifest:
    return load_dataset(SAMPLE_DATASET)


@pytest.fixture
def divisor_problem() -> ProblemRecord:
    return ProblemRecord(
        id="divsum-12",
        question="What is the sum of all positive divisors of 12?",
        gold_answer="28",
    )


@pytest.fixture
def write_dataset(tmp_path):
    """Write records (dicts or raw lines) to a temp JSONL file and return its path."""

    def _write(rows, name="problems.jsonl"):
        path = tmp_path / name
        lines = []
        for row in rows:
            lines.append(row if isinstance(row, str) else json.dumps(row))
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        return path

    return _write


def read_golden(name: str) -> str:
    return GOLDEN_DIR.joinpath(name).read_text(encoding="utf-8").removesuffix("\n")
