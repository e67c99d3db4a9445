# expnote/agent.py

import logging
from enum import Enum
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from .exceptions import BackendError, ConfigurationError, UnparsableAction
from .llm_backends import ChatMessage, ChatRequest, LLMBackend, Role
from .memory import MemoryStore, NoteMode, Polarity
from .protocol import (
    ANSWER_FIRST_REMINDER,
    FORMAT_REMINDER,
    NOTE_ACK,
    NOTE_AT_TEST_REMINDER,
    RECALL_AT_TEST_REMINDER,
    RECALL_REMINDER,
    THINK_ACK,
    Answer,
    Command,
    Note,
    PromptBundle,
    Recall,
    Think,
    feedback,
    judge,
    parse_action,
    render_reflect_prompt,
    render_test_prompt,
    render_train_prompt,
    serialize,
)
from .evaluation import CaseResult, RunReport

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskInstance:
    """One (question, answer) pair of a task."""
    id: str
    question: str
    answer: str

    def __post_init__(self):
        if not self.question or not self.question.strip():
            raise ValueError(f"Task {self.id}: question cannot be empty")
        if not self.answer or not self.answer.strip():
            raise ValueError(f"Task {self.id}: answer cannot be empty")

    def to_dict(self) -> Dict[str, str]:
        return {'id': self.id, 'question': self.question, 'answer': self.answer}


class Phase(str, Enum):
    TRAIN = "train"
    TEST = "test"


class Variant(str, Enum):
    FULL = "full"
    DISABLED = "disabled"
    CASE = "case"
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class VariantConfig:
    """Variant routing plus the per-episode budgets and sampling settings."""
    variant: Variant = Variant.FULL
    k: int = 3
    n_train: int = 4
    max_turns: int = 8
    max_format_retries: int = 1
    model_name: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_tokens: int = 512

    def __post_init__(self):
        object.__setattr__(self, 'variant', Variant(self.variant))
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.n_train < 0:
            raise ValueError("n_train cannot be negative")
        if self.max_turns < 1:
            raise ValueError("max_turns must be at least 1")

    @property
    def retrieval_enabled(self) -> bool:
        return self.variant != Variant.DISABLED

    @property
    def note_mode(self) -> NoteMode:
        return NoteMode.CASE if self.variant == Variant.CASE else NoteMode.ABSTRACT

    @property
    def polarity_filter(self) -> Optional[Polarity]:
        if self.variant == Variant.POSITIVE:
            return Polarity.POSITIVE
        if self.variant == Variant.NEGATIVE:
            return Polarity.NEGATIVE
        return None


@dataclass
class Step:
    prompt_sent: str
    raw_reply: str
    command: Optional[Command]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'prompt_sent': self.prompt_sent,
            'raw_reply': self.raw_reply,
            'command': serialize(self.command) if self.command is not None else None,
        }


@dataclass
class Trajectory:
    """Everything that happened in one training or testing episode."""
    instance_id: str
    phase: Phase
    steps: List[Step] = field(default_factory=list)
    prediction: Optional[str] = None
    correct_before_feedback: Optional[bool] = None
    feedback: Optional[str] = None
    noted_experience_ids: List[int] = field(default_factory=list)
    retrieved_experience_ids: List[int] = field(default_factory=list)
    correct: Optional[bool] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'instance_id': self.instance_id,
            'phase': self.phase.value,
            'steps': [step.to_dict() for step in self.steps],
            'prediction': self.prediction,
            'correct_before_feedback': self.correct_before_feedback,
            'feedback': self.feedback,
            'noted_experience_ids': list(self.noted_experience_ids),
            'retrieved_experience_ids': list(self.retrieved_experience_ids),
            'correct': self.correct,
        }


class _Conversation:
    """Accumulates the message list of one episode and sends it to the backend."""

    def __init__(self, backend: LLMBackend, config: VariantConfig):
        self.backend = backend
        self.config = config
        self.messages: List[ChatMessage] = []

    def ask(self, prompt: str) -> str:
        self.messages.append(ChatMessage(role=Role.USER, content=prompt))
        request = ChatRequest(
            model_name=self.config.model_name,
            messages=tuple(self.messages),
            temperature=self.config.temperature,
            max_tokens=self.config.max_tokens,
        )
        reply = self.backend.complete(request)
        self.messages.append(ChatMessage(role=Role.ASSISTANT, content=reply))
        return reply


def _try_parse(reply: str) -> Optional[Command]:
    try:
        return parse_action(reply)
    except UnparsableAction:
        logger.debug(f"Unparsable reply: {reply[:80]!r}")
        return None


def run_train_episode(instance: TaskInstance, memory: MemoryStore, backend: LLMBackend,
                      bundle: PromptBundle, config: VariantConfig) -> Trajectory:
    """
    Answer, receive feedback, then reflect within the n_train action budget.

    THINK is acknowledged, NOTE writes an experience whose polarity follows the
    pre-feedback verdict, RECALL is refused with a reminder; all three spend
    budget. An ANSWER during reflection ends the episode. Unparsable replies
    get a format reminder while retries remain.
    """
    trajectory = Trajectory(instance_id=instance.id, phase=Phase.TRAIN)
    conversation = _Conversation(backend, config)
    retries = config.max_format_retries

    # Inference
    prompt = render_train_prompt(bundle, instance.question)
    command: Optional[Command] = None
    while True:
        reply = conversation.ask(prompt)
        command = _try_parse(reply)
        trajectory.steps.append(Step(prompt, reply, command))
        if isinstance(command, Answer) or retries == 0:
            break
        retries -= 1
        prompt = FORMAT_REMINDER if command is None else ANSWER_FIRST_REMINDER

    trajectory.prediction = command.text if isinstance(command, Answer) else None
    correct = judge(trajectory.prediction, instance.answer)
    trajectory.correct_before_feedback = correct
    trajectory.feedback = feedback(trajectory.prediction, instance.answer, correct)
    polarity = Polarity.from_verdict(correct)

    # Reflection and noting
    budget = config.n_train
    prompt = render_reflect_prompt(bundle, trajectory.feedback)
    while budget > 0:
        reply = conversation.ask(prompt)
        command = _try_parse(reply)
        trajectory.steps.append(Step(prompt, reply, command))

        if command is None:
            if retries == 0:
                break
            retries -= 1
            prompt = FORMAT_REMINDER
            continue
        if isinstance(command, Answer):
            break

        budget -= 1
        if isinstance(command, Think):
            prompt = THINK_ACK
        elif isinstance(command, Note):
            value = command.value
            if config.note_mode == NoteMode.CASE:
                value = f"Q: {instance.question} A: {instance.answer}"
            experience = memory.note(command.key, value, polarity, instance.id, config.note_mode)
            trajectory.noted_experience_ids.append(experience.id)
            prompt = NOTE_ACK
        elif isinstance(command, Recall):
            prompt = RECALL_REMINDER

    logger.info(f"Train {instance.id}: correct={correct}, noted={len(trajectory.noted_experience_ids)}, "
                f"steps={len(trajectory.steps)}")
    return trajectory


def run_test_episode(instance: TaskInstance, memory: Optional[MemoryStore], backend: LLMBackend,
                     bundle: PromptBundle, config: VariantConfig) -> Trajectory:
    """
    Recall experiences for the question (unless retrieval is disabled), embed
    them in the testing prompt and let the model answer within max_turns.
    The memory is only read.
    """
    trajectory = Trajectory(instance_id=instance.id, phase=Phase.TEST)

    values: List[str] = []
    if config.retrieval_enabled and memory is not None:
        mode_filter = NoteMode.CASE if config.variant == Variant.CASE else NoteMode.ABSTRACT
        results = memory.recall(instance.question, config.k,
                                polarity_filter=config.polarity_filter, mode_filter=mode_filter)
        values = [result.experience.value for result in results]
        trajectory.retrieved_experience_ids = [result.experience.id for result in results]

    conversation = _Conversation(backend, config)
    prompt = render_test_prompt(bundle, instance.question, values)
    for _ in range(config.max_turns):
        reply = conversation.ask(prompt)
        command = _try_parse(reply)
        trajectory.steps.append(Step(prompt, reply, command))

        if isinstance(command, Answer):
            trajectory.prediction = command.text
            break
        if command is None:
            prompt = FORMAT_REMINDER
        elif isinstance(command, Think):
            prompt = THINK_ACK
        elif isinstance(command, Note):
            prompt = NOTE_AT_TEST_REMINDER
        else:
            prompt = RECALL_AT_TEST_REMINDER
    else:
        logger.warning(f"Test {instance.id}: no answer within {config.max_turns} turns")

    trajectory.correct = judge(trajectory.prediction, instance.answer)
    logger.info(f"Test {instance.id}: retrieved={len(trajectory.retrieved_experience_ids)}, "
                f"correct={trajectory.correct}")
    return trajectory


def run_test_pass(test_set: Sequence[TaskInstance], memory: Optional[MemoryStore], backend: LLMBackend,
                  bundle: PromptBundle, config: VariantConfig, max_workers: int = 1,
                  on_trajectory: Optional[Callable[[Trajectory], None]] = None) -> List[Trajectory]:
    """
    Run every test episode. With max_workers > 1 episodes run concurrently;
    trajectories are still delivered in test-set order.
    """
    def episode(instance: TaskInstance) -> Trajectory:
        return run_test_episode(instance, memory, backend, bundle, config)

    trajectories: List[Trajectory] = []
    if max_workers <= 1:
        results = map(episode, test_set)
        for trajectory in results:
            trajectories.append(trajectory)
            if on_trajectory:
                on_trajectory(trajectory)
        return trajectories

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        for trajectory in executor.map(episode, test_set):
            trajectories.append(trajectory)
            if on_trajectory:
                on_trajectory(trajectory)
    return trajectories


def build_report(config: VariantConfig, trajectories: Sequence[Trajectory],
                 memory: Optional[MemoryStore]) -> RunReport:
    per_case = {t.instance_id: CaseResult(prediction=t.prediction, correct=bool(t.correct)) for t in trajectories}
    counts = memory.count_by_polarity() if memory is not None else {'positive': 0, 'negative': 0}
    return RunReport(
        variant=config.variant.value,
        per_case=per_case,
        memory_count=memory.store_count() if memory is not None else 0,
        positive_count=counts['positive'],
        negative_count=counts['negative'],
    )


def run_train_pass(train_set: Sequence[TaskInstance], memory: MemoryStore, backend: LLMBackend,
                   bundle: PromptBundle, config: VariantConfig,
                   on_trajectory: Optional[Callable[[Trajectory], None]] = None,
                   after_each: Optional[Callable[[int], None]] = None) -> List[Trajectory]:
    """Train strictly in dataset order so experience ids are reproducible."""
    logger.info(f"Training {config.variant.value} over {len(train_set)} cases")
    trajectories: List[Trajectory] = []
    for index, instance in enumerate(train_set, start=1):
        trajectory = run_train_episode(instance, memory, backend, bundle, config)
        trajectories.append(trajectory)
        if on_trajectory:
            on_trajectory(trajectory)
        if after_each:
            after_each(index)
    logger.info(f"Training finished with {memory.store_count()} experiences {memory.count_by_polarity()}")
    return trajectories


@dataclass
class ExperimentResult:
    report: RunReport
    memory: MemoryStore
    train_trajectories: List[Trajectory]
    test_trajectories: List[Trajectory]
    curve: List[Tuple[int, Fraction]] = field(default_factory=list)


def run_experiment(train_set: Sequence[TaskInstance], test_set: Sequence[TaskInstance], config: VariantConfig,
                   backend: LLMBackend, bundle: PromptBundle, memory: Optional[MemoryStore] = None,
                   on_trajectory: Optional[Callable[[Trajectory], None]] = None,
                   checkpoint_every: int = 0, max_workers: int = 1) -> ExperimentResult:
    """
    Train sequentially over train_set, then test over test_set.

    With checkpoint_every = m > 0 the test set is also evaluated before
    training and after every m training samples, producing the training curve.
    A backend failure aborts the run; notes already taken stay in the memory
    (and in its file when the memory is bound to one) and finished
    trajectories have already been handed to on_trajectory.
    """
    overlap = {i.id for i in train_set} & {i.id for i in test_set}
    if overlap:
        raise ConfigurationError(f"Train and test sets share {len(overlap)} ids, e.g. {sorted(overlap)[0]}")

    memory = memory if memory is not None else MemoryStore()
    curve: List[Tuple[int, Fraction]] = []
    track_curve = checkpoint_every > 0 and len(test_set) > 0

    def checkpoint(n_samples: int):
        trajectories = run_test_pass(test_set, memory, backend, bundle, config, max_workers)
        accuracy = build_report(config, trajectories, memory).accuracy
        curve.append((n_samples, accuracy))
        logger.info(f"Checkpoint after {n_samples} training samples: accuracy {float(accuracy):.3f}")

    def after_each(index: int):
        if track_curve and index % checkpoint_every == 0:
            checkpoint(index)

    try:
        if track_curve:
            checkpoint(0)
        train_trajectories = run_train_pass(train_set, memory, backend, bundle, config, on_trajectory, after_each)
        if track_curve and len(train_set) % checkpoint_every != 0:
            checkpoint(len(train_set))

        count_before = memory.store_count()
        logger.info(f"Testing {config.variant.value} over {len(test_set)} cases with {count_before} experiences")
        test_trajectories = run_test_pass(test_set, memory, backend, bundle, config, max_workers, on_trajectory)
    except BackendError as e:
        logger.error(f"Experiment aborted by backend failure: {e}")
        raise

    if memory.store_count() != count_before:
        logger.error("Memory changed during the test pass")

    return ExperimentResult(
        report=build_report(config, test_trajectories, memory),
        memory=memory,
        train_trajectories=train_trajectories,
        test_trajectories=test_trajectories,
        curve=curve,
    )
