"""Stagewise loss windows and the tabular student used to sanity-check them."""
from __future__ import annotations

import math

import numpy as np
import pytest

from cotpace.corpus import Question
from cotpace.loss_shaping import (
    LossShapingError,
    LossSpec,
    StudentConfig,
    build_stage_loss_specs,
    evaluate_loss,
    read_loss_specs,
    shape_stage_loss,
    simulate_student,
    train_plain,
    write_loss_specs,
    write_trace,
)
from cotpace.schedule import Schedule, StageRecord


def _question(qid: str = "q", spans=((0, 3), (3, 5))) -> Question:
    n = spans[-1][1]
    return Question(
        id=qid,
        question_text="what happens next",
        answer_text="five",
        rationale_tokens=[f"tok{i}" for i in range(n)],
        step_spans=[tuple(s) for s in spans],
        token_logprobs=None,
        token_weights=None,
        embedding=None,
    )


def _zero_schedule(corpus, n_stages: int) -> Schedule:
    zeros = {q.id: 0 for q in corpus.questions}
    stages = [
        StageRecord(
            t=t,
            budget=0.0,
            delta_budget=0.0,
            selected=[],
            delta_h=0.0,
            input_steps=dict(zeros),
            h_after=0.0,
        )
        for t in range(n_stages + 1)
    ]
    return Schedule(stages=stages, params={"horizon": n_stages})


# --- shape_stage_loss -----------------------------------------------------------


def test_zero_input_steps_covers_whole_rationale():
    spec = shape_stage_loss(_question(), 0)
    assert spec.input_end == 0
    assert spec.gen_end == 5
    assert np.array_equal(spec.weights, np.ones(5))


def test_all_input_steps_leaves_nothing_generated():
    spec = shape_stage_loss(_question(), 2)
    assert spec.input_end == 5
    assert spec.gen_end == 5
    assert spec.weights.size == 0


def test_partial_input_starts_at_step_boundary():
    spec = shape_stage_loss(_question(), 1)
    assert spec.input_end == 3
    assert spec.gen_start == 3
    assert spec.gen_end == 5


def test_weights_are_sliced_to_generated_range():
    w = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    spec = shape_stage_loss(_question(), 1, w)
    assert np.array_equal(spec.weights, np.array([0.4, 0.5]))


def test_input_steps_out_of_range_rejected():
    with pytest.raises(LossShapingError, match="outside"):
        shape_stage_loss(_question(), 3)
    with pytest.raises(LossShapingError, match="outside"):
        shape_stage_loss(_question(), -1)


def test_weight_vector_must_cover_rationale():
    with pytest.raises(LossShapingError, match="weights"):
        shape_stage_loss(_question(), 1, np.ones(3))


def test_spec_validation_rejects_bad_weights():
    spec = LossSpec(question_id="q", stage=0, input_end=0, gen_end=2, weights=np.array([0.5, 1.5]))
    with pytest.raises(LossShapingError, match="lie in"):
        spec.validate()
    spec = LossSpec(question_id="q", stage=0, input_end=3, gen_end=2, weights=np.zeros(0))
    with pytest.raises(LossShapingError, match="inconsistent"):
        spec.validate()


# --- evaluate_loss --------------------------------------------------------------


def test_evaluate_empty_generation_range_is_zero():
    spec = shape_stage_loss(_question(), 2)
    assert evaluate_loss(spec, np.full(5, -1.0)) == 0.0


def test_evaluate_hand_value():
    spec = shape_stage_loss(_question(), 1)
    lp = np.array([0.0, 0.0, 0.0, math.log(0.5), math.log(0.5)])
    assert abs(evaluate_loss(spec, lp) - 2.0 * math.log(2.0)) < 1e-12
    assert abs(evaluate_loss(spec, lp) - 1.3863) < 1e-4


def test_evaluate_zero_weights_ignore_tokens():
    spec = shape_stage_loss(_question(), 0, np.zeros(5))
    assert evaluate_loss(spec, np.full(5, -9.0)) == 0.0


def test_evaluate_is_linear_in_weights():
    rng = np.random.default_rng(0)
    q = _question()
    lp = -rng.exponential(1.0, size=5)
    w1 = rng.uniform(0, 1, size=5)
    w2 = rng.uniform(0, 1, size=5)
    mid = 0.5 * (w1 + w2)
    a = evaluate_loss(shape_stage_loss(q, 0, w1), lp)
    b = evaluate_loss(shape_stage_loss(q, 0, w2), lp)
    c = evaluate_loss(shape_stage_loss(q, 0, mid), lp)
    assert abs(c - 0.5 * (a + b)) < 1e-12


def test_evaluate_input_validation():
    spec = shape_stage_loss(_question(), 1)
    with pytest.raises(LossShapingError, match="cover"):
        evaluate_loss(spec, np.zeros(3))
    with pytest.raises(LossShapingError, match="finite"):
        evaluate_loss(spec, np.array([0.0, 0.0, 0.0, 0.1, -1.0]))
    with pytest.raises(LossShapingError, match="finite"):
        evaluate_loss(spec, np.array([0.0, 0.0, 0.0, np.nan, -1.0]))


def test_evaluate_ignores_logprobs_in_input_range():
    spec = shape_stage_loss(_question(), 1)
    lp_a = np.array([np.inf, 99.0, -5.0, -1.0, -1.0])
    lp_b = np.array([0.0, 0.0, 0.0, -1.0, -1.0])
    assert evaluate_loss(spec, lp_a) == evaluate_loss(spec, lp_b)


def test_loss_shrinks_as_input_steps_grow():
    rng = np.random.default_rng(1)
    q = _question(spans=((0, 2), (2, 5), (5, 9)))
    lp = -rng.exponential(1.0, size=9)
    losses = [evaluate_loss(shape_stage_loss(q, c), lp) for c in range(4)]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    assert losses[-1] == 0.0


# --- spec construction from a schedule ------------------------------------------


def test_build_specs_covers_training_stages(bundled_corpus):
    sched = _zero_schedule(bundled_corpus, 3)
    specs = build_stage_loss_specs(bundled_corpus, sched)
    assert len(specs) == 3 * len(bundled_corpus.questions)
    assert {s.stage for s in specs} == {1, 2, 3}
    assert all(s.input_end == 0 for s in specs)


def test_build_specs_requires_every_question():
    corpus_q = _question("only")
    from cotpace.corpus import Corpus

    corpus = Corpus(questions=[corpus_q], embedding_dim=None)
    stages = [
        StageRecord(t=t, budget=0.0, delta_budget=0.0, selected=[], delta_h=0.0,
                    input_steps={"other": 0}, h_after=0.0)
        for t in range(2)
    ]
    sched = Schedule(stages=stages, params={"horizon": 1})
    with pytest.raises(LossShapingError, match="only"):
        build_stage_loss_specs(corpus, sched)


def test_specs_round_trip(tmp_path, bundled_corpus):
    sched = _zero_schedule(bundled_corpus, 2)
    specs = build_stage_loss_specs(bundled_corpus, sched)
    path = tmp_path / "specs.jsonl"
    write_loss_specs(specs, path)
    back = read_loss_specs(path)
    assert len(back) == len(specs)
    for a, b in zip(specs, back):
        assert (a.question_id, a.stage, a.input_end, a.gen_end) == (
            b.question_id, b.stage, b.input_end, b.gen_end)
        assert np.array_equal(a.weights, b.weights)


# --- the tabular student ---------------------------------------------------------


def test_student_config_validation():
    with pytest.raises(LossShapingError):
        StudentConfig(epochs=0).validate()
    with pytest.raises(LossShapingError):
        StudentConfig(lr=0.0).validate()


def test_zero_curriculum_matches_plain_training_bitwise(bundled_corpus):
    corpus_slice = type(bundled_corpus)(
        questions=bundled_corpus.questions[:6], embedding_dim=bundled_corpus.embedding_dim
    )
    cfg = StudentConfig(epochs=5, lr=0.5, seed=3)
    sched = _zero_schedule(corpus_slice, cfg.epochs)
    sim = simulate_student(corpus_slice, sched, None, cfg)
    plain = train_plain(corpus_slice, None, cfg)
    assert sim.epoch_losses == plain.epoch_losses
    assert np.array_equal(sim.unigram, plain.unigram)
    assert np.array_equal(sim.bigram, plain.bigram)
    for qid, probs in sim.final_token_probs.items():
        assert np.array_equal(probs, plain.final_token_probs[qid])


def test_plain_training_reduces_loss(bundled_corpus):
    corpus_slice = type(bundled_corpus)(
        questions=bundled_corpus.questions[:8], embedding_dim=bundled_corpus.embedding_dim
    )
    trace = train_plain(corpus_slice, None, StudentConfig(epochs=15, lr=0.5, seed=0))
    assert trace.epoch_losses[-1] < trace.epoch_losses[0]
    assert all(c == 0 for c_map in trace.input_steps_trace for c in c_map.values())


def test_student_is_deterministic(bundled_corpus):
    corpus_slice = type(bundled_corpus)(
        questions=bundled_corpus.questions[:4], embedding_dim=bundled_corpus.embedding_dim
    )
    cfg = StudentConfig(epochs=4, lr=0.5, seed=12)
    a = train_plain(corpus_slice, None, cfg)
    b = train_plain(corpus_slice, None, cfg)
    assert a.epoch_losses == b.epoch_losses
    assert np.array_equal(a.unigram, b.unigram)


def test_simulate_requires_stage_per_epoch(bundled_corpus):
    sched = _zero_schedule(bundled_corpus, 2)
    with pytest.raises(LossShapingError, match="no stage"):
        simulate_student(bundled_corpus, sched, None, StudentConfig(epochs=10))


def test_trace_written_as_json(tmp_path, bundled_corpus):
    corpus_slice = type(bundled_corpus)(
        questions=bundled_corpus.questions[:3], embedding_dim=bundled_corpus.embedding_dim
    )
    trace = train_plain(corpus_slice, None, StudentConfig(epochs=2))
    path = tmp_path / "trace.json"
    write_trace(trace, path)
    import json

    doc = json.loads(path.read_text())
    assert len(doc["epoch_losses"]) == 2
    assert set(doc["final_token_probs"]) == {q.id for q in corpus_slice.questions}
