"""Stagewise loss ranges and a tabular student simulator.

A LossSpec splits one question's rationale at a stage's input-step count:
tokens before the cut are fed as input (no loss), tokens from the cut on
are generated and scored with significance-weighted NLL. The simulator
trains a unigram+bigram softmax student under a schedule, full batch, so
curriculum effects are observable end to end without a real LM.
"""
from __future__ import annotations

import dataclasses
import json
import math

import numpy as np

from .corpus import Corpus, Question
from .schedule import Schedule

BOS_ID = 0
BOS_TOKEN = "<bos>"


class LossShapingError(ValueError):
    pass


@dataclasses.dataclass
class LossSpec:
    question_id: str
    stage: int
    input_end: int  # first generated token index; input range is [0, input_end)
    gen_end: int  # exclusive; generation range is [input_end, gen_end)
    weights: np.ndarray  # one weight per generated token

    @property
    def gen_start(self) -> int:
        return self.input_end

    def validate(self) -> None:
        if not (0 <= self.input_end <= self.gen_end):
            raise LossShapingError(
                f"spec for {self.question_id!r}: ranges [0,{self.input_end}) /"
                f" [{self.input_end},{self.gen_end}) are inconsistent"
            )
        if self.weights.shape != (self.gen_end - self.input_end,):
            raise LossShapingError(
                f"spec for {self.question_id!r}: {self.weights.size} weights for"
                f" {self.gen_end - self.input_end} generated tokens"
            )
        if self.weights.size and (
            not np.all(np.isfinite(self.weights))
            or self.weights.min() < 0.0
            or self.weights.max() > 1.0
        ):
            raise LossShapingError(f"spec for {self.question_id!r}: weights must lie in [0, 1]")


def shape_stage_loss(
    question: Question,
    input_steps: int,
    weights: np.ndarray | None = None,
    stage: int = 0,
) -> LossSpec:
    """Build the loss ranges for one question at one stage. weights, when
    given, must cover the whole rationale; the generated slice is kept."""
    c = int(input_steps)
    n_steps = question.n_steps
    n = question.n_tokens
    if c < 0 or c > n_steps:
        raise LossShapingError(
            f"question {question.id!r}: input_steps {c} outside [0, {n_steps}]"
        )
    input_end = n if c == n_steps else question.step_spans[c][0]
    if weights is None:
        w = np.ones(n - input_end, dtype=np.float64)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,):
            raise LossShapingError(
                f"question {question.id!r}: {w.size} weights for {n} rationale tokens"
            )
        w = w[input_end:].copy()
    spec = LossSpec(question_id=question.id, stage=stage, input_end=input_end, gen_end=n, weights=w)
    spec.validate()
    return spec


def evaluate_loss(spec: LossSpec, logprobs: np.ndarray) -> float:
    """Weighted NLL over the generation range. logprobs index the whole
    rationale (length gen_end); entries inside the range must be <= 0."""
    lp = np.asarray(logprobs, dtype=np.float64)
    if lp.shape != (spec.gen_end,):
        raise LossShapingError(
            f"spec for {spec.question_id!r}: {lp.size} logprobs do not cover"
            f" [0, {spec.gen_end})"
        )
    window = lp[spec.gen_start : spec.gen_end]
    if window.size and (not np.all(np.isfinite(window)) or window.max() > 0.0):
        raise LossShapingError(
            f"spec for {spec.question_id!r}: generation-range logprobs must be finite and <= 0"
        )
    return -float(np.dot(spec.weights, window))


def write_loss_specs(specs: list[LossSpec], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in specs:
            fh.write(
                json.dumps(
                    {
                        "t": s.stage,
                        "id": s.question_id,
                        "input_end": s.input_end,
                        "gen_start": s.gen_start,
                        "gen_end": s.gen_end,
                        "weights": [float(v) for v in s.weights],
                    }
                )
                + "\n"
            )


def read_loss_specs(path) -> list[LossSpec]:
    out: list[LossSpec] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            spec = LossSpec(
                question_id=rec["id"],
                stage=int(rec["t"]),
                input_end=int(rec["input_end"]),
                gen_end=int(rec["gen_end"]),
                weights=np.asarray(rec["weights"], dtype=np.float64),
            )
            spec.validate()
            out.append(spec)
    return out


def build_stage_loss_specs(
    corpus: Corpus, schedule: Schedule, weights: dict[str, np.ndarray] | None = None
) -> list[LossSpec]:
    """One spec per (training stage >= 1, question)."""
    specs: list[LossSpec] = []
    for rec in schedule.stages:
        if rec.t < 1:
            continue
        for q in corpus.questions:
            if q.id not in rec.input_steps:
                raise LossShapingError(f"schedule stage {rec.t} is missing question {q.id!r}")
            w = weights.get(q.id) if weights else None
            specs.append(shape_stage_loss(q, rec.input_steps[q.id], w, stage=rec.t))
    return specs


# --- tabular student -------------------------------------------------------


@dataclasses.dataclass
class StudentConfig:
    epochs: int = 20
    lr: float = 0.5
    init_scale: float = 0.01
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise LossShapingError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0.0:
            raise LossShapingError(f"lr must be > 0, got {self.lr}")


@dataclasses.dataclass
class StudentTrace:
    epoch_losses: list[float]
    input_steps_trace: list[dict[str, int]]  # c map per epoch
    final_token_probs: dict[str, np.ndarray]
    unigram: np.ndarray
    bigram: np.ndarray
    vocab: dict[str, int]


def _build_vocab(corpus: Corpus) -> tuple[dict[str, int], dict[str, np.ndarray]]:
    vocab = {BOS_TOKEN: BOS_ID}
    for q in corpus.questions:
        for tok in q.rationale_tokens:
            if tok not in vocab:
                vocab[tok] = len(vocab)
    enc = {
        q.id: np.asarray([vocab[t] for t in q.rationale_tokens], dtype=np.int64)
        for q in corpus.questions
    }
    return vocab, enc


def _shifted_context(idx: np.ndarray, gen_start: int) -> np.ndarray:
    """Previous-token ids for each generated position (BOS before index 0)."""
    if gen_start == 0:
        return np.concatenate((np.asarray([BOS_ID], dtype=np.int64), idx[:-1]))
    return idx[gen_start - 1 : idx.size - 1]


def _run_student(
    corpus: Corpus,
    specs_for_epoch,
    config: StudentConfig,
) -> StudentTrace:
    """Full-batch gradient descent on weighted NLL. specs_for_epoch(e)
    returns {id: LossSpec} for epoch e in 1..epochs; simulate and plain
    training share this engine so they differ only in the ranges fed in."""
    config.validate()
    vocab, enc = _build_vocab(corpus)
    nv = len(vocab)
    nq = len(corpus.questions)
    rng = np.random.default_rng(config.seed)
    unigram = rng.normal(0.0, config.init_scale, size=nv)
    bigram = rng.normal(0.0, config.init_scale, size=(nv, nv))
    epoch_losses: list[float] = []
    steps_trace: list[dict[str, int]] = []
    for epoch in range(1, config.epochs + 1):
        specs, c_map = specs_for_epoch(epoch)
        g_uni = np.zeros(nv)
        g_bi = np.zeros((nv, nv))
        total = 0.0
        for q in corpus.questions:
            spec = specs[q.id]
            m = spec.gen_end - spec.gen_start
            if m == 0:
                continue
            idx = enc[q.id]
            prev = _shifted_context(idx, spec.gen_start)
            tgt = idx[spec.gen_start :]
            logits = unigram[None, :] + bigram[prev]
            mx = logits.max(axis=1, keepdims=True)
            ez = np.exp(logits - mx)
            sz = ez.sum(axis=1, keepdims=True)
            logp = logits[np.arange(m), tgt] - mx[:, 0] - np.log(sz[:, 0])
            total += -float(np.dot(spec.weights, logp))
            probs = ez / sz
            probs[np.arange(m), tgt] -= 1.0
            probs *= spec.weights[:, None]
            g_uni += probs.sum(axis=0)
            np.add.at(g_bi, prev, probs)
        if not math.isfinite(total):
            raise RuntimeError(f"non-finite student loss at epoch {epoch}; lower the learning rate")
        scale = config.lr / nq
        unigram -= scale * g_uni
        bigram -= scale * g_bi
        epoch_losses.append(total / nq)
        steps_trace.append(c_map)
    final: dict[str, np.ndarray] = {}
    for q in corpus.questions:
        idx = enc[q.id]
        prev = _shifted_context(idx, 0)
        logits = unigram[None, :] + bigram[prev]
        mx = logits.max(axis=1, keepdims=True)
        ez = np.exp(logits - mx)
        sz = ez.sum(axis=1, keepdims=True)
        logp = logits[np.arange(idx.size), idx] - mx[:, 0] - np.log(sz[:, 0])
        final[q.id] = np.exp(logp)
    return StudentTrace(
        epoch_losses=epoch_losses,
        input_steps_trace=steps_trace,
        final_token_probs=final,
        unigram=unigram,
        bigram=bigram,
        vocab=vocab,
    )


def simulate_student(
    corpus: Corpus,
    schedule: Schedule,
    weights: dict[str, np.ndarray] | None,
    config: StudentConfig,
) -> StudentTrace:
    """Train the tabular student for config.epochs epochs, epoch e using
    the input-step counts of schedule stage e."""
    for epoch in range(1, config.epochs + 1):
        try:
            schedule.stage(epoch)
        except KeyError as exc:
            raise LossShapingError(
                f"schedule has no stage {epoch} but the student trains for"
                f" {config.epochs} epochs"
            ) from exc

    def specs_for_epoch(epoch: int):
        rec = schedule.stage(epoch)
        specs: dict[str, LossSpec] = {}
        for q in corpus.questions:
            if q.id not in rec.input_steps:
                raise LossShapingError(f"schedule stage {epoch} is missing question {q.id!r}")
            w = weights.get(q.id) if weights else None
            specs[q.id] = shape_stage_loss(q, rec.input_steps[q.id], w, stage=epoch)
        return specs, dict(rec.input_steps)

    return _run_student(corpus, specs_for_epoch, config)


def train_plain(
    corpus: Corpus, weights: dict[str, np.ndarray] | None, config: StudentConfig
) -> StudentTrace:
    """Same student, no curriculum: every epoch scores the whole rationale."""

    def specs_for_epoch(epoch: int):
        specs = {
            q.id: shape_stage_loss(q, 0, weights.get(q.id) if weights else None, stage=epoch)
            for q in corpus.questions
        }
        return specs, {q.id: 0 for q in corpus.questions}

    return _run_student(corpus, specs_for_epoch, config)


def write_trace(trace: StudentTrace, path) -> None:
    doc = {
        "epoch_losses": trace.epoch_losses,
        "input_steps": trace.input_steps_trace,
        "final_token_probs": {qid: [float(v) for v in p] for qid, p in trace.final_token_probs.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
