# tests/test_agent.py

import pytest

from conftest import SpyBackend, scripted
from expnote.agent import (
    Phase,
    TaskInstance,
    Variant,
    VariantConfig,
    run_experiment,
    run_test_episode,
    run_test_pass,
    run_train_episode,
)
from expnote.exceptions import ConfigurationError, ScriptMiss
from expnote.llm_backends import ScriptEntry, ScriptedBackend
from expnote.memory import MemoryStore, NoteMode, Polarity
from expnote.protocol import (
    ANSWER_FIRST_REMINDER,
    FORMAT_REMINDER,
    NOTE_ACK,
    RECALL_REMINDER,
    THINK_ACK,
    Answer,
    Note,
    PromptBundle,
)

AUNT = TaskInstance(id="c1", question="B is the mother of A. C is the sister of B. Who is C to A?", answer="aunt")


@pytest.fixture
def bundle():
    return PromptBundle(
        name="toy",
        train_template="{demonstrations}\nQuestion: {question}",
        reflect_template="{feedback}\nReflect on it.",
        test_template="{demonstrations}\nQuestion: {question}\nExperiences:\n{experiences}",
        train_demonstrations=("demo",),
        test_demonstrations=("demo",),
    )


class ForbiddenMemory(MemoryStore):
    def recall(self, *args, **kwargs):
        raise AssertionError("memory must not be queried")

    def note(self, *args, **kwargs):
        raise AssertionError("memory must not be written")


def test_train_episode_notes_with_pre_feedback_polarity(bundle):
    backend = scripted(
        ("Who is C to A?", "ANSWER[aunt]"),
        ("answer is aunt.", "THINK[mother's sister]"),
        (THINK_ACK, "NOTE[mother, sister]: The sister of one's mother is one's aunt."),
        (NOTE_ACK, "ANSWER[done]"),
    )
    memory = MemoryStore()
    trajectory = run_train_episode(AUNT, memory, backend, bundle, VariantConfig())

    assert trajectory.phase == Phase.TRAIN
    assert trajectory.prediction == "aunt"
    assert trajectory.correct_before_feedback is True
    assert trajectory.feedback == "Your answer is correct. The answer is aunt."
    assert [step.command for step in trajectory.steps][0] == Answer("aunt")
    assert trajectory.noted_experience_ids == [0]
    (experience,) = memory.experiences
    assert experience.key == "mother, sister"
    assert experience.polarity == Polarity.POSITIVE
    assert experience.source_case_id == "c1"
    assert len(trajectory.steps) == 4


def test_multi_line_reflection_is_stored_whole(bundle):
    backend = scripted(
        ("Who is C to A?", "ANSWER[aunt]"),
        ("answer is aunt.", "THINK[B is A's mother,\nso C is the sister of A's mother.]"),
        (THINK_ACK, "NOTE[mother, sister]: The sister of one's mother is one's aunt.\n"
                    "The sister of one's father is an aunt as well."),
        (NOTE_ACK, "ANSWER[done]"),
    )
    memory = MemoryStore()
    trajectory = run_train_episode(AUNT, memory, backend, bundle, VariantConfig(max_format_retries=0))

    (experience,) = memory.experiences
    assert experience.value == ("The sister of one's mother is one's aunt.\n"
                                "The sister of one's father is an aunt as well.")
    assert trajectory.steps[1].command.text == "B is A's mother,\nso C is the sister of A's mother."


def test_wrong_answer_notes_negative_experience(bundle):
    backend = scripted(
        ("Who is C to A?", "ANSWER[uncle]"),
        ("correct answer is aunt.", "NOTE[sister]: A sister is female, so the answer is aunt, not uncle."),
        (NOTE_ACK, "ANSWER[done]"),
    )
    memory = MemoryStore()
    trajectory = run_train_episode(AUNT, memory, backend, bundle, VariantConfig())

    assert trajectory.correct_before_feedback is False
    assert memory.count_by_polarity() == {"positive": 0, "negative": 1}


def test_zero_budget_skips_reflection(bundle):
    backend = SpyBackend([ScriptEntry("Who is C to A?", "ANSWER[aunt]")])
    memory = MemoryStore()
    trajectory = run_train_episode(AUNT, memory, backend, bundle, VariantConfig(n_train=0))

    assert len(backend.requests) == 1
    assert len(trajectory.steps) == 1
    assert memory.store_count() == 0


def test_note_budget_caps_stored_experiences(bundle):
    backend = scripted(
        ("Who is C to A?", "ANSWER[aunt]"),
        ("answer is aunt.", "NOTE[mother]: one"),
        (NOTE_ACK, "NOTE[mother]: again"),
    )
    memory = MemoryStore()
    trajectory = run_train_episode(AUNT, memory, backend, bundle, VariantConfig(n_train=4))

    assert memory.store_count() == 4
    assert trajectory.noted_experience_ids == [0, 1, 2, 3]
    assert len(trajectory.steps) == 5


def test_recall_during_training_is_refused_but_spends_budget(bundle):
    backend = scripted(
        ("Who is C to A?", "ANSWER[aunt]"),
        ("answer is aunt.", "RECALL[mother]"),
        (RECALL_REMINDER, "NOTE[mother]: rule"),
    )
    memory = MemoryStore()
    trajectory = run_train_episode(AUNT, memory, backend, bundle, VariantConfig(n_train=2))

    assert [step.prompt_sent for step in trajectory.steps][2] == RECALL_REMINDER
    assert memory.store_count() == 1


def test_unparsable_reflection_uses_retry_then_stops(bundle):
    backend = scripted(
        ("Who is C to A?", "ANSWER[aunt]"),
        ("answer is aunt.", "hmm"),
        (FORMAT_REMINDER, "still nothing"),
    )
    memory = MemoryStore()
    trajectory = run_train_episode(AUNT, memory, backend, bundle, VariantConfig(max_format_retries=1))

    assert len(trajectory.steps) == 3
    assert trajectory.steps[2].command is None
    assert memory.store_count() == 0


def test_answer_phase_asks_for_answer_first(bundle):
    backend = scripted(
        ("Who is C to A?", "THINK[let me see]"),
        (ANSWER_FIRST_REMINDER, "ANSWER[aunt]"),
    )
    trajectory = run_train_episode(AUNT, MemoryStore(), backend, bundle, VariantConfig(n_train=0))

    assert trajectory.prediction == "aunt"
    assert trajectory.correct_before_feedback is True


def test_case_variant_stores_the_case(bundle):
    backend = scripted(
        ("Who is C to A?", "ANSWER[aunt]"),
        ("answer is aunt.", "NOTE[mother, sister]: rule text"),
        (NOTE_ACK, "ANSWER[done]"),
    )
    memory = MemoryStore()
    run_train_episode(AUNT, memory, backend, bundle, VariantConfig(variant="case"))

    (experience,) = memory.experiences
    assert experience.mode == NoteMode.CASE
    assert experience.value == f"Q: {AUNT.question} A: aunt"


def test_disabled_test_episode_never_touches_memory(bundle):
    backend = SpyBackend([ScriptEntry("Who is C to A?", "ANSWER[aunt]")])
    trajectory = run_test_episode(AUNT, ForbiddenMemory(), backend, bundle, VariantConfig(variant="disabled"))

    assert "No relevant experience" in backend.requests[0].last_user_message
    assert trajectory.retrieved_experience_ids == []
    assert trajectory.correct is True


def test_full_test_episode_embeds_recalled_values(bundle):
    memory = MemoryStore()
    memory.note("mother, sister", "A mother's sister is an aunt.", Polarity.NEGATIVE, "t1")
    memory.note("father", "unrelated", Polarity.POSITIVE, "t2")
    memory.note("sister", "Sisters are female.", Polarity.POSITIVE, "t3")
    backend = SpyBackend([ScriptEntry("Who is C to A?", "ANSWER[aunt]")])

    trajectory = run_test_episode(AUNT, memory, backend, bundle, VariantConfig(variant="full"))

    prompt = backend.requests[0].last_user_message
    assert prompt.endswith("Experiences:\nA mother's sister is an aunt.\nSisters are female.")
    assert trajectory.retrieved_experience_ids == [0, 2]


@pytest.mark.parametrize("variant, expected_ids", [
    (Variant.FULL, [0, 1]),
    (Variant.POSITIVE, [1]),
    (Variant.NEGATIVE, [0]),
    (Variant.CASE, [2]),
])
def test_variant_routing(bundle, variant, expected_ids):
    memory = MemoryStore()
    memory.note("mother", "negative rule", Polarity.NEGATIVE, "t1")
    memory.note("sister", "positive rule", Polarity.POSITIVE, "t2")
    memory.note("mother", "Q: old A: aunt", Polarity.POSITIVE, "t3", mode=NoteMode.CASE)

    trajectory = run_test_episode(AUNT, memory, scripted(("Who is C to A?", "ANSWER[aunt]")),
                                  bundle, VariantConfig(variant=variant))
    assert trajectory.retrieved_experience_ids == expected_ids


def test_test_episode_gives_up_after_max_turns(bundle):
    backend = SpyBackend([ScriptEntry("", "THINK[still thinking]")])
    trajectory = run_test_episode(AUNT, None, backend, bundle, VariantConfig(variant="disabled", max_turns=3))

    assert len(backend.requests) == 3
    assert trajectory.prediction is None
    assert trajectory.correct is False


def test_note_at_test_time_is_not_stored(bundle):
    memory = MemoryStore()
    backend = scripted(
        ("Who is C to A?", "NOTE[mother]: sneaky"),
        ("NOTE is not available", "ANSWER[aunt]"),
    )
    trajectory = run_test_episode(AUNT, memory, backend, bundle, VariantConfig())

    assert memory.store_count() == 0
    assert trajectory.correct is True
    assert isinstance(trajectory.steps[0].command, Note)


def test_concurrent_test_pass_keeps_order(bundle):
    cases = [TaskInstance(id=f"q{i}", question=f"question number {i}?", answer=str(i)) for i in range(12)]
    backend = scripted(*[(c.question, f"ANSWER[{c.answer}]") for c in cases])
    seen = []

    trajectories = run_test_pass(cases, None, backend, bundle, VariantConfig(variant="disabled"),
                                 max_workers=4, on_trajectory=lambda t: seen.append(t.instance_id))

    assert [t.instance_id for t in trajectories] == [c.id for c in cases]
    assert seen == [c.id for c in cases]
    assert all(t.correct for t in trajectories)


def _experiment_script():
    return [
        ScriptEntry("Who is C to A?", "ANSWER[aunt]"),
        ScriptEntry("Who is D to A?", "ANSWER[uncle]"),
        ScriptEntry("answer is aunt.", "NOTE[mother, sister]: A mother's sister is an aunt."),
        ScriptEntry("answer is son.", "NOTE[daughter, brother]: A daughter's brother is a son."),
        ScriptEntry(NOTE_ACK, "ANSWER[done]"),
    ]


TRAIN = [
    AUNT,
    TaskInstance(id="c2", question="B is the daughter of A. E is the brother of B. Who is E to A?", answer="son"),
]
TEST = [TaskInstance(id="c3", question="B is the mother of A. D is the sister of B. Who is D to A?",
                     answer="aunt")]


def test_run_experiment_is_deterministic(bundle):
    def run():
        backend = ScriptedBackend(_experiment_script() + [ScriptEntry("Who is E to A?", "ANSWER[nephew]")])
        return run_experiment(TRAIN, TEST, VariantConfig(), backend, bundle, checkpoint_every=1)

    first, second = run(), run()

    assert [t.to_dict() for t in first.train_trajectories] == [t.to_dict() for t in second.train_trajectories]
    assert [t.to_dict() for t in first.test_trajectories] == [t.to_dict() for t in second.test_trajectories]
    assert first.memory.experiences == second.memory.experiences
    assert [n for n, _ in first.curve] == [0, 1, 2]
    assert first.report.memory_count == 2
    assert first.report.positive_count == 1
    assert first.report.negative_count == 1
    assert first.report.accuracy == 0


def test_run_experiment_rejects_overlapping_ids(bundle):
    with pytest.raises(ConfigurationError):
        run_experiment([AUNT], [AUNT], VariantConfig(), scripted(), bundle)


def test_backend_failure_aborts_but_keeps_notes(bundle, tmp_path):
    memory = MemoryStore.open(str(tmp_path / "memory.jsonl"))
    backend = scripted(
        ("Who is C to A?", "ANSWER[aunt]"),
        ("answer is aunt.", "NOTE[mother, sister]: A mother's sister is an aunt."),
        (NOTE_ACK, "ANSWER[done]"),
    )
    with pytest.raises(ScriptMiss):
        run_experiment(TRAIN, TEST, VariantConfig(), backend, bundle, memory=memory)

    assert MemoryStore.load(str(tmp_path / "memory.jsonl")).store_count() == 1
