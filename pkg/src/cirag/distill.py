"""Teacher trajectory recording and loss-masked training-example export.

A trajectory is the teacher's sequence of integration decisions, each paired
with the candidate set retrieved for the query it proposed. Every step becomes
one example whose context is the integration prompt up to that step and whose
target is the decision text; only target tokens are meant to be supervised.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import prompts
from .ici import ICIResult, StopReason
from .integration import (
    HistoryContext,
    IntegrationDecision,
    IterationRecord,
    build_integration_prompt,
    render_decision,
)
from .triples import CandidateTripleSet

POLICIES = ("keep-all", "keep-answer-correct", "keep-terminated")


@dataclass(frozen=True)
class TrajectoryStep:
    decision: IntegrationDecision
    observation: CandidateTripleSet | None = None


@dataclass
class Trajectory:
    question: str
    initial_candidates: CandidateTripleSet
    steps: list[TrajectoryStep]
    instruction_id: str = field(default_factory=prompts.instruction_id)
    answer_correct: bool | None = None
    question_id: str | None = None
    stop_reason: str | None = None

    def history_before(self, t: int) -> HistoryContext:
        """History for 1-based step ``t``."""
        return HistoryContext(tuple(
            IterationRecord.from_decision(i, s.decision, s.observation)
            for i, s in enumerate(self.steps[: t - 1], start=1)
        ))

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "question": self.question,
            "instruction_id": self.instruction_id,
            "initial_candidates": self.initial_candidates.to_dict(),
            "steps": [
                {"decision": s.decision.to_dict(),
                 "observation": s.observation.to_dict() if s.observation is not None else None}
                for s in self.steps
            ],
            "answer_correct": self.answer_correct,
            "stop_reason": self.stop_reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        steps = [
            TrajectoryStep(
                IntegrationDecision.from_dict(s["decision"]),
                CandidateTripleSet.from_dict(s["observation"]) if s.get("observation") else None,
            )
            for s in d["steps"]
        ]
        return cls(
            d["question"],
            CandidateTripleSet.from_dict(d["initial_candidates"]),
            steps,
            d.get("instruction_id") or prompts.instruction_id(),
            d.get("answer_correct"),
            d.get("question_id"),
            d.get("stop_reason"),
        )


@dataclass(frozen=True)
class TrainingExample:
    context: str
    target: str
    question_id: str | None
    step: int
    mask: str = "target_only"

    def to_dict(self) -> dict:
        return {
            "context": self.context,
            "target": self.target,
            "meta": {"question_id": self.question_id, "step": self.step, "mask": self.mask},
        }


def record_trajectory(ici_result: ICIResult, question_id: str | None = None) -> Trajectory:
    if ici_result.initial_candidates is None:
        raise ValueError("run never produced an initial candidate set")
    steps = [TrajectoryStep(r.decision, r.next_candidates) for r in ici_result.history]
    return Trajectory(
        ici_result.question,
        ici_result.initial_candidates,
        steps,
        question_id=question_id,
        stop_reason=ici_result.stop_reason.value if ici_result.stop_reason else None,
    )


def export_training_examples(traj: Trajectory) -> list[TrainingExample]:
    examples = []
    for t, step in enumerate(traj.steps, start=1):
        context = build_integration_prompt(traj.question, traj.initial_candidates, traj.history_before(t))
        examples.append(TrainingExample(context, render_decision(step.decision), traj.question_id, t))
    return examples


def to_messages(example: TrainingExample) -> list[dict]:
    """Chat-format view: instruction as system turn, context as user, target as assistant."""
    instruction = prompts.load_template("integration").rstrip("\n")
    user = example.context[len(instruction):].lstrip("\n") if example.context.startswith(instruction) else example.context
    return [
        {"role": "system", "content": instruction},
        {"role": "user", "content": user},
        {"role": "assistant", "content": example.target},
    ]


def filter_trajectories(trajs: Sequence[Trajectory], policy: str = "keep-all",
                        cap: int | None = None) -> list[Trajectory]:
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    if policy == "keep-answer-correct":
        kept = [t for t in trajs if t.answer_correct]
    elif policy == "keep-terminated":
        kept = [t for t in trajs if t.stop_reason == StopReason.NO_QUESTION.value]
    else:
        kept = list(trajs)
    return kept[:cap] if cap is not None else kept


def write_trajectories(trajs: Iterable[Trajectory], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in trajs:
            fh.write(json.dumps(t.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


def read_trajectories(path: str | Path) -> list[Trajectory]:
    with open(path, encoding="utf-8") as fh:
        return [Trajectory.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_training_examples(trajs: Iterable[Trajectory], path: str | Path,
                            with_messages: bool = True) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for traj in trajs:
            for ex in export_training_examples(traj):
                rec = ex.to_dict()
                if with_messages:
                    rec["messages"] = to_messages(ex)
                fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
                n += 1
    return n
