"""Easy-to-hard stage planning under a growing difficulty budget.

The budget curve starts at a warm-start allowance and grows polynomially
to the full corpus difficulty at the horizon stage. Each stage admits
question increments (selection module) so that the cumulative generated
difficulty never outruns the curve; past the horizon every question is
generated in full (no input steps remain).
"""
from __future__ import annotations

import dataclasses
import json
import math

import numpy as np

from .corpus import Corpus
from .difficulty import DifficultyTable, question_generation_difficulty
from .selection import ClusterAssignment, SelectionProblem, candidate_increments, select_ftgp


def solve_growth_rate(b_total: float, c0: float, p: float, t_max: int) -> float:
    """Growth rate u making the curve hit b_total at stage t_max."""
    if t_max < 1:
        raise ValueError(f"horizon must be >= 1, got {t_max}")
    if p <= 0.0:
        raise ValueError(f"exponent p must be > 0, got {p}")
    if c0 < 0.0 or b_total < c0:
        raise ValueError(f"need 0 <= warm start <= total, got C0={c0}, B={b_total}")
    return (b_total - c0) * (p + 1.0) / t_max ** (p + 1.0)


@dataclasses.dataclass(frozen=True)
class BudgetCurve:
    u: float
    p: float
    c0: float
    t_max: int
    b_total: float

    @classmethod
    def solve(cls, b_total: float, c0: float, p: float, t_max: int) -> "BudgetCurve":
        u = solve_growth_rate(b_total, c0, p, t_max)
        return cls(u=u, p=p, c0=c0, t_max=t_max, b_total=b_total)


def budget_at(curve: BudgetCurve, t: float) -> float:
    """Cumulative difficulty budget at stage t; saturates at b_total."""
    if t < 0:
        raise ValueError(f"stage must be >= 0, got {t}")
    if t > curve.t_max:
        return curve.b_total
    return curve.u * t ** (curve.p + 1.0) / (curve.p + 1.0) + curve.c0


@dataclasses.dataclass
class ScheduleState:
    stage: int
    input_steps: dict[str, int]  # id -> remaining input steps c_i
    generated_difficulty: float  # H: difficulty currently generated by the student
    step_reduction: int = 1


def initial_state(corpus: Corpus, step_reduction: int = 1) -> ScheduleState:
    if step_reduction < 1:
        raise ValueError(f"step_reduction must be >= 1, got {step_reduction}")
    return ScheduleState(
        stage=0,
        input_steps={q.id: q.n_steps for q in corpus.questions},
        generated_difficulty=0.0,
        step_reduction=step_reduction,
    )


def stage_budget_delta(curve: BudgetCurve, state: ScheduleState) -> float:
    """Budget available to the current stage, clamped at zero."""
    return max(0.0, budget_at(curve, state.stage) - state.generated_difficulty)


def _recompute_h(input_steps: dict[str, int], table: DifficultyTable) -> float:
    return math.fsum(
        question_generation_difficulty(table, qid, c) for qid, c in input_steps.items()
    )


def _apply_selection(
    input_steps: dict[str, int], selected: list[str], step_reduction: int
) -> dict[str, int]:
    out = dict(input_steps)
    for qid in selected:
        if qid not in out:
            raise KeyError(qid)
        if out[qid] == 0:
            raise ValueError(f"question {qid!r} has no input steps left to reduce")
        out[qid] = max(0, out[qid] - step_reduction)
    return out


def advance_stage(
    state: ScheduleState,
    selected: list[str],
    table: DifficultyTable,
    step_reduction: int | None = None,
) -> ScheduleState:
    """Apply one stage's selection: reduce the chosen questions' input
    steps and recompute the generated difficulty from scratch."""
    r = state.step_reduction if step_reduction is None else step_reduction
    new_steps = _apply_selection(state.input_steps, selected, r)
    return ScheduleState(
        stage=state.stage + 1,
        input_steps=new_steps,
        generated_difficulty=_recompute_h(new_steps, table),
        step_reduction=state.step_reduction,
    )


@dataclasses.dataclass
class StageRecord:
    t: int
    budget: float  # D(t)
    delta_budget: float  # budget available to this stage (clamped)
    selected: list[str]
    delta_h: float  # admitted difficulty increments (fsum)
    input_steps: dict[str, int]  # c_i snapshot after the stage
    h_after: float


@dataclasses.dataclass
class Schedule:
    stages: list[StageRecord]
    params: dict

    def stage(self, t: int) -> StageRecord:
        for rec in self.stages:
            if rec.t == t:
                return rec
        raise KeyError(f"no stage {t} in schedule (have 0..{self.stages[-1].t})")

    @property
    def t_max(self) -> int:
        return int(self.params["horizon"])


def plan_full_schedule(
    corpus: Corpus,
    table: DifficultyTable,
    curve: BudgetCurve,
    clusters: ClusterAssignment,
    *,
    beta: float = 12.0,
    eps: float = 0.1,
    step_reduction: int = 1,
    total_stages: int | None = None,
) -> Schedule:
    """Plan every stage 0..total_stages.

    Stage 0 repeats selection rounds against the warm-start allowance
    until no candidate is admitted; stages before the horizon run one
    round each against the clamped per-stage budget; at the horizon and
    beyond the budget covers the whole corpus and every input-step count
    drops to zero.
    """
    if total_stages is None:
        total_stages = curve.t_max
    if total_stages < curve.t_max:
        raise ValueError(
            f"total_stages {total_stages} shorter than the curve horizon {curve.t_max}"
        )
    steps = {q.id: q.n_steps for q in corpus.questions}
    h = 0.0
    records: list[StageRecord] = []

    # stage 0: warm start, repeated rounds
    admitted: dict[str, None] = {}
    delta_h0 = 0.0
    increments_log: list[float] = []
    while True:
        cands = candidate_increments(steps, table, step_reduction)
        if not cands:
            break
        remaining = max(0.0, curve.c0 - h)
        problem = SelectionProblem(cands, remaining, clusters, beta)
        sel = select_ftgp(problem, eps)
        if not sel:
            break
        for qid in sel:
            admitted[qid] = None
            increments_log.append(cands[qid])
        steps = _apply_selection(steps, sel, step_reduction)
        h = _recompute_h(steps, table)
    delta_h0 = math.fsum(increments_log)
    records.append(
        StageRecord(
            t=0,
            budget=budget_at(curve, 0),
            delta_budget=curve.c0,
            selected=list(admitted),
            delta_h=delta_h0,
            input_steps=dict(steps),
            h_after=h,
        )
    )

    for t in range(1, total_stages + 1):
        d_t = budget_at(curve, t)
        if t >= curve.t_max:
            # From the horizon on the full rationale is generated: the
            # budget covers the whole corpus, and a single selection round
            # could not retire questions with several input steps left, so
            # every count is forced to zero here.
            delta_budget = max(0.0, d_t - h)
            selected = [qid for qid, c in steps.items() if c > 0]
            zeroed = {qid: 0 for qid in steps}
            new_h = _recompute_h(zeroed, table)
            delta_h = max(0.0, new_h - h)
            steps = zeroed
            h = new_h
            records.append(
                StageRecord(
                    t=t,
                    budget=d_t,
                    delta_budget=delta_budget,
                    selected=selected,
                    delta_h=delta_h,
                    input_steps=dict(steps),
                    h_after=h,
                )
            )
            continue
        delta_budget = max(0.0, d_t - h)
        cands = candidate_increments(steps, table, step_reduction)
        sel: list[str] = []
        delta_h = 0.0
        if cands:
            problem = SelectionProblem(cands, delta_budget, clusters, beta)
            sel = select_ftgp(problem, eps)
            delta_h = math.fsum(cands[qid] for qid in sel)
            steps = _apply_selection(steps, sel, step_reduction)
            h = _recompute_h(steps, table)
        records.append(
            StageRecord(
                t=t,
                budget=d_t,
                delta_budget=delta_budget,
                selected=sel,
                delta_h=delta_h,
                input_steps=dict(steps),
                h_after=h,
            )
        )

    params = {
        "total_difficulty": curve.b_total,
        "warm_start": curve.c0,
        "exponent": curve.p,
        "horizon": curve.t_max,
        "growth_rate": curve.u,
        "beta": beta,
        "eps": eps,
        "step_reduction": step_reduction,
        "n_clusters": clusters.n_clusters,
    }
    return Schedule(stages=records, params=params)


def write_schedule(schedule: Schedule, path) -> None:
    doc = {
        "stages": [
            {
                "t": rec.t,
                "D_t": rec.budget,
                "delta_D": rec.delta_budget,
                "selected": rec.selected,
                "delta_H": rec.delta_h,
                "H": rec.h_after,
                "c": rec.input_steps,
            }
            for rec in schedule.stages
        ],
        "params": schedule.params,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def read_schedule(path) -> Schedule:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    stages = [
        StageRecord(
            t=int(rec["t"]),
            budget=float(rec["D_t"]),
            delta_budget=float(rec["delta_D"]),
            selected=list(rec["selected"]),
            delta_h=float(rec["delta_H"]),
            input_steps={k: int(v) for k, v in rec["c"].items()},
            h_after=float(rec["H"]),
        )
        for rec in doc["stages"]
    ]
    return Schedule(stages=stages, params=doc["params"])
